//! Splitting a training set across clients.

use crate::error::{Error, Result};
use crate::numkit::RngStream;
use crate::taskbench::{Dataset, Task};

/// Group that client `client` belongs to under round-robin assignment.
pub fn client_group(client: usize, groups: usize) -> usize {
    client % groups
}

/// Label-skewed split. Clients are dealt round-robin into `z` groups; a
/// sample with label `q` goes to a uniform client of group `q` with
/// probability `x`, otherwise to a uniform client of a uniformly chosen
/// other group.
pub fn partition_noniid(ds: &Dataset, n_clients: usize, x: f64, rng: &mut RngStream) -> Result<Vec<Dataset>> {
    let Task::Classification { classes } = ds.task() else {
        return Err(Error::TaskMismatch("label-skew partitioning needs a classification task"));
    };
    if n_clients < classes {
        return Err(Error::FewerClientsThanGroups {
            clients: n_clients,
            groups: classes,
        });
    }
    let lower = 1.0 / classes as f64;
    if !(x >= lower - 1e-12 && x <= 1.0) {
        return Err(Error::invalid("x", format!("{x} not in [1/{classes}, 1]")));
    }
    let members: Vec<Vec<usize>> = (0..classes)
        .map(|g| (0..n_clients).filter(|&c| client_group(c, classes) == g).collect())
        .collect();

    let mut shards: Vec<Dataset> = (0..n_clients)
        .map(|_| Dataset::empty(ds.task(), ds.feature_dim()))
        .collect();
    for s in ds.samples() {
        let q = s.label.class().expect("classification dataset");
        let group = if rng.uniform() < x {
            q
        } else {
            // uniform over the other z - 1 groups
            let k = rng.index(classes - 1);
            if k >= q {
                k + 1
            } else {
                k
            }
        };
        let pool = &members[group];
        let client = pool[rng.index(pool.len())];
        shards[client].push_unchecked(s.clone());
    }
    Ok(shards)
}

/// Shuffled round-robin split, used for regression tasks.
pub fn partition_iid(ds: &Dataset, n_clients: usize, rng: &mut RngStream) -> Result<Vec<Dataset>> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut order);
    let mut shards: Vec<Dataset> = (0..n_clients)
        .map(|_| Dataset::empty(ds.task(), ds.feature_dim()))
        .collect();
    for (k, idx) in order.into_iter().enumerate() {
        shards[k % n_clients].push_unchecked(ds.samples()[idx].clone());
    }
    Ok(shards)
}
