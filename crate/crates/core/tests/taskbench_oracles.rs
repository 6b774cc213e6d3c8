//! Data generation, models and metrics checked against independent
//! references: closed-form least squares, a plain gradient-descent trainer,
//! central finite differences and chi-square goodness of fit.

use proptest::prelude::*;

use secureafl::numkit::{ParamVector, RngStream};
use secureafl::taskbench::{
    attack_success_rate, gen_classification, gen_regression, partition_noniid, rmse, test_error_rate, Arch, Dataset,
    Label, Model, Sample, Task, TriggerSpec,
};

/// Least squares through the normal equations, solved by Cholesky.
fn ols(ds: &Dataset) -> ParamVector {
    let p = ds.feature_dim() + 1;
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for s in ds.samples() {
        let mut row = s.features.clone();
        row.push(1.0);
        let y = s.label.value().unwrap();
        for i in 0..p {
            aty[i] += row[i] * y;
            for j in 0..p {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j {
                (ata[i][i] - s).sqrt()
            } else {
                (ata[i][j] - s) / l[j][j]
            };
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        z[i] = (aty[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        x[i] = (z[i] - (i + 1..p).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    ParamVector::new(x)
}

/// Plain full-batch gradient descent.
fn train(arch: Arch, ds: &Dataset, steps: usize, eta: f64) -> Model {
    let batch: Vec<&Sample> = ds.samples().iter().collect();
    let mut model = Model::zeros(arch);
    for _ in 0..steps {
        let g = model.gradient(&batch).unwrap();
        let mut w = model.params().clone();
        w.axpy(-eta, &g);
        model.set_params(w).unwrap();
    }
    model
}

fn chi_square(counts: &[usize], expected: f64) -> f64 {
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn separable_mixture_is_learnable() {
    let mut rng = RngStream::new(1);
    let ds = gen_classification(2, 2, 200, 4.0, &mut rng).unwrap();
    let model = train(Arch::Softmax { features: 2, classes: 2 }, &ds, 500, 0.1);
    assert!(test_error_rate(&model, &ds).unwrap() <= 0.05);
}

#[test]
fn overlapping_classes_sit_at_chance() {
    let mut rng = RngStream::new(2);
    let ds = gen_classification(2, 2, 100, 0.0, &mut rng).unwrap();
    let fresh = gen_classification(2, 2, 2000, 0.0, &mut rng).unwrap();
    let model = train(Arch::Softmax { features: 2, classes: 2 }, &ds, 500, 0.1);
    let err = test_error_rate(&model, &fresh).unwrap();
    assert!((err - 0.5).abs() <= 0.07, "{err}");
    // the majority vote of a balanced set is no better
    let zero = Model::zeros(Arch::Softmax { features: 2, classes: 2 });
    assert!((test_error_rate(&zero, &ds).unwrap() - 0.5).abs() <= 0.07);
}

#[test]
fn noiseless_regression_is_recovered_exactly() {
    let mut rng = RngStream::new(3);
    let ds = gen_regression(4, 50, 0.0, &mut rng).unwrap();
    let model = Model::new(Arch::Linear { features: 4 }, ols(&ds)).unwrap();
    assert!(rmse(&model, &ds).unwrap() <= 1e-6);
    // the least-squares solution is a stationary point of the loss
    let batch: Vec<&Sample> = ds.samples().iter().collect();
    assert!(model.gradient(&batch).unwrap().norm() <= 1e-6);

    let line = gen_regression(1, 2, 0.0, &mut rng).unwrap();
    let model = Model::new(Arch::Linear { features: 1 }, ols(&line)).unwrap();
    assert!(rmse(&model, &line).unwrap() <= 1e-9);
}

#[test]
fn regression_noise_floor() {
    let sigma = 0.3;
    let mut rng = RngStream::new(4);
    let mut ds = gen_regression(10, 4000, sigma, &mut rng).unwrap();
    let test = ds.split_off(2000);
    let model = Model::new(Arch::Linear { features: 10 }, ols(&ds)).unwrap();
    let r = rmse(&model, &test).unwrap();
    assert!((0.8 * sigma..=1.2 * sigma).contains(&r), "{r}");
}

#[test]
fn constant_predictor_rmse() {
    let samples = (0..5).map(|i| Sample::regressed(vec![i as f64], -2.5)).collect();
    let ds = Dataset::new(Task::Regression, 1, samples).unwrap();
    let zero = Model::zeros(Arch::Linear { features: 1 });
    assert!((rmse(&zero, &ds).unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn uniform_skew_spreads_labels_evenly() {
    let (z, n_clients) = (4, 8);
    let mut rng = RngStream::new(5);
    let ds = gen_classification(z, z, 5000, 1.0, &mut rng).unwrap();
    let shards = partition_noniid(&ds, n_clients, 1.0 / z as f64, &mut rng).unwrap();
    // per group, the label histogram should be uniform
    let critical_3dof_99 = 11.345;
    for g in 0..z {
        let mut counts = vec![0usize; z];
        for (c, shard) in shards.iter().enumerate() {
            if c % z != g {
                continue;
            }
            for s in shard.samples() {
                counts[s.label.class().unwrap()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let stat = chi_square(&counts, total as f64 / z as f64);
        assert!(stat < critical_3dof_99, "group {g}: {counts:?} chi2 {stat}");
    }
}

#[test]
fn full_skew_keeps_labels_in_their_group() {
    let z = 3;
    let mut rng = RngStream::new(6);
    let ds = gen_classification(z, 5, 600, 1.0, &mut rng).unwrap();
    let shards = partition_noniid(&ds, 9, 1.0, &mut rng).unwrap();
    for (c, shard) in shards.iter().enumerate() {
        assert!(shard.samples().iter().all(|s| s.label.class() == Some(c % z)));
    }
}

#[test]
fn half_skew_share() {
    let z = 10;
    let mut rng = RngStream::new(7);
    let ds = gen_classification(z, z, 10_000, 1.0, &mut rng).unwrap();
    let shards = partition_noniid(&ds, 20, 0.5, &mut rng).unwrap();
    let own: usize = shards
        .iter()
        .enumerate()
        .map(|(c, shard)| shard.samples().iter().filter(|s| s.label.class() == Some(c % z)).count())
        .sum();
    let share = own as f64 / 10_000.0;
    assert!((share - 0.5).abs() <= 0.03, "{share}");
}

#[test]
fn untriggered_model_asr_is_target_prior() {
    let mut rng = RngStream::new(8);
    let test = gen_classification(3, 6, 3000, 2.0, &mut rng).unwrap();
    let train_set = gen_classification(3, 6, 600, 2.0, &mut rng).unwrap();
    let model = train(Arch::Softmax { features: 6, classes: 3 }, &train_set, 300, 0.5);
    // features 3..6 carry no signal, so writing zeros there barely moves
    // predictions: ASR is roughly how often a non-target sample is
    // misclassified as the target.
    let trig = TriggerSpec {
        indices: vec![4, 5],
        values: vec![0.0, 0.0],
        target_label: 0,
    };
    let asr = attack_success_rate(&model, &test, &trig).unwrap();
    let batch: Vec<&Sample> = test.samples().iter().filter(|s| s.label.class() != Some(0)).collect();
    let to_target = batch.iter().filter(|s| model.predict_class(&s.features) == 0).count() as f64 / batch.len() as f64;
    assert!((asr - to_target).abs() <= 0.03, "{asr} vs {to_target}");
}

#[test]
fn backdoor_only_model_hits_target() {
    let mut rng = RngStream::new(9);
    let trig = TriggerSpec {
        indices: vec![4, 5],
        values: vec![4.0, 4.0],
        target_label: 2,
    };
    let clean = gen_classification(3, 6, 900, 2.0, &mut rng).unwrap();
    let poisoned: Vec<Sample> = clean
        .samples()
        .iter()
        .map(|s| secureafl::taskbench::embed_trigger(s, &trig, true).unwrap())
        .collect();
    let poisoned = Dataset::new(Task::Classification { classes: 3 }, 6, poisoned).unwrap();
    let model = train(Arch::Softmax { features: 6, classes: 3 }, &poisoned, 300, 0.5);
    let test = gen_classification(3, 6, 900, 2.0, &mut rng).unwrap();
    assert!(attack_success_rate(&model, &test, &trig).unwrap() >= 0.95);
}

fn finite_difference_check(arch: Arch, params: Vec<f64>, batch: &[Sample]) -> Result<(), TestCaseError> {
    let refs: Vec<&Sample> = batch.iter().collect();
    let model = Model::new(arch, ParamVector::new(params.clone())).unwrap();
    let g = model.gradient(&refs).unwrap();
    let h = 1e-5;
    let mut fd = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[i] += h;
        minus[i] -= h;
        let lp = Model::new(arch, ParamVector::new(plus)).unwrap().loss(&refs).unwrap();
        let lm = Model::new(arch, ParamVector::new(minus)).unwrap().loss(&refs).unwrap();
        fd.push((lp - lm) / (2.0 * h));
    }
    let fd = ParamVector::new(fd);
    let err = g.distance(&fd) / fd.norm().max(1e-3);
    prop_assert!(err <= 1e-5, "relative error {err}");
    Ok(())
}

proptest! {
    #[test]
    fn softmax_gradient_matches_finite_differences(
        params in prop::collection::vec(-2.0..2.0f64, 12),
        xs in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 3), 0usize..3), 1..6),
    ) {
        let batch: Vec<Sample> = xs.into_iter().map(|(x, c)| Sample::classified(x, c)).collect();
        finite_difference_check(Arch::Softmax { features: 3, classes: 3 }, params, &batch)?;
    }

    #[test]
    fn linear_gradient_matches_finite_differences(
        params in prop::collection::vec(-2.0..2.0f64, 4),
        xs in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 3), -5.0..5.0f64), 1..6),
    ) {
        let batch: Vec<Sample> = xs.into_iter().map(|(x, y)| Sample::regressed(x, y)).collect();
        finite_difference_check(Arch::Linear { features: 3 }, params, &batch)?;
    }

    #[test]
    fn labels_stay_in_range(seed in any::<u64>(), z in 2usize..6, n in 6usize..60) {
        let mut rng = RngStream::new(seed);
        let ds = gen_classification(z, z + 1, n, 1.0, &mut rng).unwrap();
        prop_assert_eq!(ds.len(), n);
        prop_assert!(ds.samples().iter().all(|s| matches!(s.label, Label::Class(c) if c < z)));
    }
}
