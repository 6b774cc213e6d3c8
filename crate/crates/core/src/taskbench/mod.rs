//! Synthetic desk-scale tasks: data generation, client partitioning, convex
//! models with exact gradients, and evaluation metrics.

mod data;
pub(crate) use data::csv_err;
mod metrics;
mod model;
mod partition;
mod trigger;

pub use data::{gen_classification, gen_regression, Dataset, Label, Sample, Task};
pub use metrics::{accuracy, attack_success_rate, rmse, test_error_rate};
pub use model::{gradient, Arch, Model};
pub use partition::{client_group, partition_iid, partition_noniid};
pub use trigger::{embed_trigger, TriggerSpec};
