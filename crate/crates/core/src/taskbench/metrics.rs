use crate::error::{Error, Result};
use crate::taskbench::{embed_trigger, Dataset, Model, Task, TriggerSpec};

fn require_classification(test: &Dataset) -> Result<()> {
    match test.task() {
        Task::Classification { .. } => Ok(()),
        Task::Regression => Err(Error::TaskMismatch("metric needs a classification task")),
    }
}

/// Fraction of clean samples whose argmax prediction differs from the label.
pub fn test_error_rate(m: &Model, test: &Dataset) -> Result<f64> {
    require_classification(test)?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let wrong = test
        .samples()
        .iter()
        .filter(|s| Some(m.predict_class(&s.features)) != s.label.class())
        .count();
    Ok(wrong as f64 / test.len() as f64)
}

pub fn accuracy(m: &Model, test: &Dataset) -> Result<f64> {
    Ok(1.0 - test_error_rate(m, test)?)
}

/// Fraction of triggered non-target samples classified as the target label.
pub fn attack_success_rate(m: &Model, test: &Dataset, trig: &TriggerSpec) -> Result<f64> {
    require_classification(test)?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for s in test.samples() {
        if s.label.class() == Some(trig.target_label) {
            continue;
        }
        eligible += 1;
        let t = embed_trigger(s, trig, false)?;
        if m.predict_class(&t.features) == trig.target_label {
            hits += 1;
        }
    }
    if eligible == 0 {
        return Err(Error::UndefinedAsr);
    }
    Ok(hits as f64 / eligible as f64)
}

/// Root mean squared prediction error over a regression test set.
pub fn rmse(m: &Model, test: &Dataset) -> Result<f64> {
    if test.task() != Task::Regression {
        return Err(Error::TaskMismatch("rmse needs a regression task"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let sse: f64 = test
        .samples()
        .iter()
        .map(|s| {
            let r = m.predict_value(&s.features) - s.label.value().expect("regression label");
            r * r
        })
        .sum();
    Ok((sse / test.len() as f64).sqrt())
}
