use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskbench::{Label, Sample};

/// Feature-space backdoor pattern: fixed values written at fixed positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub target_label: usize,
}

impl TriggerSpec {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::invalid("trigger.values", "must match trigger.indices in length"));
        }
        let mut seen = self.indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("trigger.indices", "indices must be distinct"));
        }
        if let Some(&index) = self.indices.iter().find(|&&i| i >= feature_dim) {
            return Err(Error::IndexOutOfRange {
                index,
                dim: feature_dim,
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Copy of `s` carrying the trigger. With `relabel` the label becomes the
/// trigger's target (poisoning); without it the true label is kept (ASR
/// evaluation).
pub fn embed_trigger(s: &Sample, trig: &TriggerSpec, relabel: bool) -> Result<Sample> {
    trig.validate(s.features.len())?;
    let mut out = s.clone();
    for (&i, &v) in trig.indices.iter().zip(&trig.values) {
        out.features[i] = v;
    }
    if relabel {
        out.label = Label::Class(trig.target_label);
    }
    out.triggered = true;
    Ok(out)
}
