//! The simulation loop.
//!
//! Each round one client, chosen uniformly, trains against a stale copy of
//! the global model and uploads; the configured defense turns that single
//! upload into the step `g^t` and the server applies
//! `w^{t+1} = w^t - eta * g^t`.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::attacks::{
    adaptive_attack, gaussian_fabricate, labelflip_poison, minmax_attack, scaling_attack, signflip, trigger_poison,
    AttackContext, AttackKind, DefenseView,
};
use crate::defense::{DefenseKind, DefenseRule, RoundDecision, Upload, Variant};
use crate::error::{Error, Result};
use crate::estimator::relative_estimation_error;
use crate::history::HistoryStore;
use crate::numkit::{mean, ParamVector, RngStream};
use crate::orchestrator::config::{ExperimentConfig, TaskConfig};
use crate::orchestrator::metrics::{EvalRecord, Metric, MetricsLog, RoundTrace};
use crate::taskbench::{
    attack_success_rate, gen_classification, gen_regression, partition_iid, partition_noniid, rmse, test_error_rate,
    Arch, Dataset, Model, Task, TriggerSpec,
};

// Labels of the independent random streams derived from the run seed.
const STREAM_DATA: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_ROLES: u64 = 3;
const STREAM_POISON: u64 = 4;
const STREAM_SCHEDULE: u64 = 5;
const STREAM_STALENESS: u64 = 6;
const STREAM_CLIENT_BASE: u64 = 1 << 32;

/// One participant.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Local data, already poisoned for data-poisoning attacks.
    pub shard: Dataset,
    pub malicious: bool,
    /// Minibatch and noise draws of this client.
    pub rng: RngStream,
}

/// `t - tau` with `tau ~ U{0, ..., min(tau_max, t)}`.
pub fn sample_stale_base(t: usize, tau_max: usize, rng: &mut RngStream) -> usize {
    t - rng.range_inclusive(0, tau_max.min(t))
}

/// Honest gradient of the client's loss on a minibatch of its shard at
/// `w_base`; `batch_size == 0` uses the whole shard without touching the
/// client's rng.
pub fn local_step(c: &mut ClientState, arch: Arch, w_base: &ParamVector, batch_size: usize) -> Result<ParamVector> {
    if c.shard.is_empty() {
        return Err(Error::Empty("client shard"));
    }
    let model = Model::new(arch, w_base.clone())?;
    let samples = c.shard.samples();
    if batch_size == 0 || batch_size >= samples.len() {
        let batch: Vec<_> = samples.iter().collect();
        return model.gradient(&batch);
    }
    let batch: Vec<_> = c
        .rng
        .sample_indices(samples.len(), batch_size)
        .into_iter()
        .map(|i| &samples[i])
        .collect();
    model.gradient(&batch)
}

fn full_gradient(arch: Arch, w: &ParamVector, shard: &Dataset) -> Result<ParamVector> {
    let batch: Vec<_> = shard.samples().iter().collect();
    Model::new(arch, w.clone())?.gradient(&batch)
}

/// Everything a run needs besides the loop state.
pub struct Setup {
    pub arch: Arch,
    pub clients: Vec<ClientState>,
    pub test: Dataset,
    pub trigger: Option<TriggerSpec>,
}

/// Generates data, partitions it, picks the malicious clients and poisons
/// their shards.
pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let (n_train, n_test) = cfg.task.sizes();
    let mut data_rng = root.derive(STREAM_DATA);
    let mut train = match cfg.task {
        TaskConfig::Classification {
            classes,
            features,
            separation,
            ..
        } => gen_classification(classes, features, n_train + n_test, separation, &mut data_rng)?,
        TaskConfig::Regression {
            features, noise_std, ..
        } => gen_regression(features, n_train + n_test, noise_std, &mut data_rng)?,
    };
    let test = train.split_off(n_train);

    let mut part_rng = root.derive(STREAM_PARTITION);
    let shards = match train.task() {
        Task::Classification { .. } => partition_noniid(&train, cfg.n_clients, cfg.noniid_x, &mut part_rng)?,
        Task::Regression => partition_iid(&train, cfg.n_clients, &mut part_rng)?,
    };

    let mut malicious = vec![false; cfg.n_clients];
    if cfg.attack.kind != AttackKind::None {
        // a prefix of one seeded permutation, so that raising the fraction
        // only turns further clients malicious
        let mut order: Vec<usize> = (0..cfg.n_clients).collect();
        root.derive(STREAM_ROLES).shuffle(&mut order);
        for &i in &order[..cfg.malicious_count()] {
            malicious[i] = true;
        }
    }

    let features = cfg.task.features();
    let trigger = cfg.attack.kind.is_targeted().then(|| cfg.attack.trigger_for(features));
    let mut poison_rng = root.derive(STREAM_POISON);
    let mut clients = Vec::with_capacity(cfg.n_clients);
    for (id, shard) in shards.into_iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::Empty("client shard"));
        }
        let shard = match (malicious[id], cfg.attack.kind, train.task()) {
            (true, AttackKind::LabelFlip, Task::Classification { classes }) => labelflip_poison(&shard, classes)?,
            (true, AttackKind::Scaling, _) => {
                let trig = trigger.as_ref().expect("targeted attack has a trigger");
                trigger_poison(&shard, trig, cfg.attack.poison_fraction, &mut poison_rng)?
            }
            _ => shard,
        };
        clients.push(ClientState {
            id,
            shard,
            malicious: malicious[id],
            rng: root.derive(STREAM_CLIENT_BASE + id as u64),
        });
    }
    Ok(Setup {
        arch: Arch::for_task(train.task(), features),
        clients,
        test,
        trigger,
    })
}

/// Metric columns a run produces.
pub fn columns_for(cfg: &ExperimentConfig) -> Vec<Metric> {
    let mut cols = vec![Metric::Accepted];
    match cfg.task.task() {
        Task::Classification { .. } => cols.push(Metric::Ter),
        Task::Regression => cols.push(Metric::Rmse),
    }
    if cfg.attack.kind.is_targeted() {
        cols.push(Metric::Asr);
    }
    if matches!(cfg.defense.kind, DefenseKind::SecureAfl | DefenseKind::Kardam) {
        cols.push(Metric::Lambda);
    }
    if cfg.probes {
        cols.extend([Metric::GradNorm, Metric::TrackingError]);
        if cfg.defense.kind == DefenseKind::SecureAfl && cfg.defense.variant != Variant::II {
            cols.push(Metric::RelEstError);
        }
    }
    cols
}

struct Probe {
    grad_norm: f64,
    tracking_error: f64,
    rel_est_error: Option<f64>,
}

fn probe_round(setup: &Setup, w: &ParamVector, decision: &RoundDecision) -> Result<Probe> {
    let mut local = BTreeMap::new();
    for c in setup.clients.iter().filter(|c| !c.malicious) {
        local.insert(c.id, full_gradient(setup.arch, w, &c.shard)?);
    }
    let refs: Vec<&ParamVector> = local.values().collect();
    let grad_f = mean(&refs)?;
    let mut errs = Vec::new();
    for (k, est) in &decision.estimates {
        if let Some(truth) = local.get(k) {
            match relative_estimation_error(est, truth) {
                Ok(e) => errs.push(e),
                Err(Error::UndefinedRelativeError) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Probe {
        grad_norm: grad_f.dot(&grad_f),
        tracking_error: {
            let d = decision.aggregate.sub(&grad_f);
            d.dot(&d)
        },
        rel_est_error: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
    })
}

fn evaluate(
    setup: &Setup,
    round: usize,
    w: &ParamVector,
    window: &[RoundTrace],
    columns: &[Metric],
) -> Result<EvalRecord> {
    let model = Model::new(setup.arch, w.clone())?;
    let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mut values = BTreeMap::new();
    for &m in columns {
        let v = match m {
            Metric::Ter => Some(test_error_rate(&model, &setup.test)?),
            Metric::Rmse => Some(rmse(&model, &setup.test)?),
            Metric::Asr => match &setup.trigger {
                Some(trig) => match attack_success_rate(&model, &setup.test, trig) {
                    Ok(a) => Some(a),
                    Err(Error::UndefinedAsr) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            },
            Metric::Accepted => mean_of(window.iter().map(|t| if t.accepted { 1.0 } else { 0.0 }).collect()),
            Metric::Lambda => mean_of(window.iter().filter_map(|t| t.lambda.filter(|l| l.is_finite())).collect()),
            Metric::GradNorm => mean_of(window.iter().filter_map(|t| t.grad_norm).collect()),
            Metric::RelEstError => mean_of(window.iter().filter_map(|t| t.rel_est_error).collect()),
            Metric::TrackingError => mean_of(window.iter().filter_map(|t| t.tracking_error).collect()),
        };
        if let Some(v) = v {
            values.insert(m, v);
        }
    }
    Ok(EvalRecord { round, values })
}

/// A run in progress. [`run_experiment`] drives one to completion;
/// stepping manually gives access to the server state between rounds.
pub struct Simulation {
    cfg: ExperimentConfig,
    setup: Setup,
    hist: HistoryStore,
    defense: Box<dyn DefenseRule>,
    sched: RngStream,
    stale: RngStream,
    log: MetricsLog,
    window_start: usize,
    started: Instant,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let started = Instant::now();
        let setup = build_setup(cfg)?;
        let root = RngStream::new(cfg.seed);
        let dim = setup.arch.dim();
        let defense = cfg.defense.build(cfg.eta, dim)?;
        let mut hist = HistoryStore::new(cfg.n_clients, cfg.defense.epsilon, cfg.defense.phi_mode);
        hist.globals.record(0, ParamVector::zeros(dim))?;
        Ok(Simulation {
            cfg: cfg.clone(),
            setup,
            hist,
            defense,
            sched: root.derive(STREAM_SCHEDULE),
            stale: root.derive(STREAM_STALENESS),
            log: MetricsLog::new(columns_for(cfg)),
            window_start: 0,
            started,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    pub fn history(&self) -> &HistoryStore {
        &self.hist
    }

    /// Round the next [`Simulation::step`] executes.
    pub fn round(&self) -> usize {
        self.log.traces.len()
    }

    pub fn is_done(&self) -> bool {
        self.round() >= self.cfg.rounds
    }

    /// Executes one server round and returns its trace.
    pub fn step(&mut self) -> Result<&RoundTrace> {
        let cfg = &self.cfg;
        let t = self.round();
        let w_t = self.hist.globals.fetch(t)?.clone();
        let i = self.sched.index(cfg.n_clients);
        let base = sample_stale_base(t, cfg.tau_max, &mut self.stale);
        let w_base = self.hist.globals.fetch(base)?.clone();

        let g = if self.setup.clients[i].malicious && cfg.attack.kind.manipulates_updates() {
            malicious_update(cfg, &mut self.setup, &self.hist, i, &w_base)?
        } else {
            local_step(&mut self.setup.clients[i], self.setup.arch, &w_base, cfg.batch_size)?
        };

        let decision = self.defense.round(
            &Upload {
                client: i,
                update: &g,
                base_round: base,
                round: t,
            },
            &mut self.hist,
        )?;

        let probe = if cfg.probes {
            Some(probe_round(&self.setup, &w_t, &decision)?)
        } else {
            None
        };

        let mut w_next = w_t;
        w_next.axpy(-cfg.eta, &decision.aggregate);
        if !w_next.is_finite() {
            return Err(Error::Diverged { round: t });
        }
        self.hist.globals.record(t + 1, w_next)?;

        self.log.traces.push(RoundTrace {
            round: t,
            client: i,
            staleness: t - base,
            accepted: decision.accepted,
            lambda: decision.lambda,
            grad_norm: probe.as_ref().map(|p| p.grad_norm),
            rel_est_error: probe.as_ref().and_then(|p| p.rel_est_error),
            tracking_error: probe.as_ref().map(|p| p.tracking_error),
        });

        let done = t + 1;
        if done.is_multiple_of(cfg.eval_interval) || done == cfg.rounds {
            let w = self.hist.globals.fetch(done)?;
            let rec = evaluate(
                &self.setup,
                done,
                w,
                &self.log.traces[self.window_start..],
                &self.log.columns,
            )?;
            self.log.push(rec)?;
            self.window_start = self.log.traces.len();
        }
        Ok(self.log.traces.last().expect("trace just pushed"))
    }

    /// Stops the run and hands over its log.
    pub fn finish(mut self) -> MetricsLog {
        self.log.wall_clock_secs = self.started.elapsed().as_secs_f64();
        self.log
    }
}

/// Runs one experiment end to end. Identical configs give identical logs
/// (apart from the wall-clock time).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsLog> {
    let mut sim = Simulation::new(cfg)?;
    while !sim.is_done() {
        sim.step()?;
    }
    Ok(sim.finish())
}

fn malicious_update(
    cfg: &ExperimentConfig,
    setup: &mut Setup,
    hist: &HistoryStore,
    i: usize,
    w_base: &ParamVector,
) -> Result<ParamVector> {
    let arch = setup.arch;
    let scaling_factor = cfg.attack.scaling_factor.unwrap_or(cfg.n_clients as f64);
    match cfg.attack.kind {
        AttackKind::SignFlip => Ok(signflip(&local_step(&mut setup.clients[i], arch, w_base, cfg.batch_size)?)),
        AttackKind::Gaussian => gaussian_fabricate(arch.dim(), cfg.attack.gaussian_std, &mut setup.clients[i].rng),
        AttackKind::Scaling => Ok(scaling_attack(
            &local_step(&mut setup.clients[i], arch, w_base, cfg.batch_size)?,
            scaling_factor,
        )),
        AttackKind::MinMax | AttackKind::Adaptive => {
            let benign = setup
                .clients
                .iter()
                .filter(|c| !c.malicious)
                .map(|c| full_gradient(arch, w_base, &c.shard))
                .collect::<Result<Vec<_>>>()?;
            let malicious_ids: Vec<usize> = setup.clients.iter().filter(|c| c.malicious).map(|c| c.id).collect();
            let rec = hist.record(i)?;
            let w_old = if rec.ever_seen {
                Some(hist.globals.fetch(rec.last_base_round)?)
            } else {
                None
            };
            let ctx = AttackContext {
                benign_updates: &benign,
                malicious_ids: &malicious_ids,
                global_w: w_base,
                defense_view: Some(DefenseView {
                    lipschitz: hist.lipschitz.values(),
                    last_update: rec.ever_seen.then_some(&rec.last_update),
                    w_old,
                    w_new: w_base,
                }),
            };
            if cfg.attack.kind == AttackKind::MinMax {
                minmax_attack(&ctx)
            } else {
                adaptive_attack(&ctx, cfg.defense.alpha)
            }
        }
        AttackKind::None | AttackKind::LabelFlip => local_step(&mut setup.clients[i], arch, w_base, cfg.batch_size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defense::DefenseConfig;

    #[test]
    fn stale_base_edges() {
        let mut rng = RngStream::new(3);
        assert_eq!(sample_stale_base(0, 10, &mut rng), 0);
        for t in 0..50 {
            assert_eq!(sample_stale_base(t, 0, &mut rng), t);
            let b = sample_stale_base(t, 10, &mut rng);
            assert!(b <= t && t - b <= 10);
        }
    }

    fn small(defense: DefenseKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            TaskConfig::Classification {
                classes: 3,
                features: 5,
                train_samples: 300,
                test_samples: 100,
                separation: 2.0,
            },
            DefenseConfig::new(defense),
        );
        cfg.n_clients = 10;
        cfg.rounds = 120;
        cfg
    }

    #[test]
    fn log_shape() {
        let log = run_experiment(&small(DefenseKind::SecureAfl)).unwrap();
        assert_eq!(log.traces.len(), 120);
        let rounds: Vec<usize> = log.records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![50, 100, 120]);
        assert!(log.columns.contains(&Metric::Ter));
        assert!(!log.columns.contains(&Metric::Rmse));
    }

    #[test]
    fn deterministic() {
        let cfg = small(DefenseKind::SecureAfl);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn full_batch_step_is_the_shard_gradient() {
        let setup = build_setup(&small(DefenseKind::AsyncSgd)).unwrap();
        let mut c = setup.clients[0].clone();
        let w = ParamVector::filled(setup.arch.dim(), 0.1);
        let g = local_step(&mut c, setup.arch, &w, 0).unwrap();
        assert_eq!(g, full_gradient(setup.arch, &w, &c.shard).unwrap());
    }
}
