//! Server-side memory: global models, per-client anchors, the Lipschitz log
//! and the per-client secant buffers used for update estimation.
//!
//! A [`HistoryStore`] can be dumped to and restored from a versioned JSON
//! checkpoint; see [`CHECKPOINT_SCHEMA`].

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::ParamVector;

/// Version tag written into every checkpoint.
pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Every global model `w^0 .. w^t`, gapless.
///
/// With a retention cap only the newest `cap` models are kept; older rounds
/// then report [`Error::UnknownBaseModel`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalLog {
    first_round: usize,
    models: VecDeque<ParamVector>,
    cap: Option<usize>,
}

impl GlobalLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: usize) -> Self {
        GlobalLog {
            cap: Some(cap.max(1)),
            ..Self::default()
        }
    }

    /// Round the next [`GlobalLog::record`] call must use.
    pub fn next_round(&self) -> usize {
        self.first_round + self.models.len()
    }

    /// Newest recorded round, if any.
    pub fn latest_round(&self) -> Option<usize> {
        self.next_round().checked_sub(1).filter(|_| !self.models.is_empty())
    }

    pub fn latest(&self) -> Option<&ParamVector> {
        self.models.back()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn record(&mut self, t: usize, w: ParamVector) -> Result<()> {
        let expected = self.next_round();
        if t != expected {
            return Err(Error::RoundOutOfOrder { expected, actual: t });
        }
        if let Some(first) = self.models.front() {
            w.ensure_dim(first.dim())?;
        }
        let w = w.checked()?;
        self.models.push_back(w);
        if let Some(cap) = self.cap {
            while self.models.len() > cap {
                self.models.pop_front();
                self.first_round += 1;
            }
        }
        Ok(())
    }

    pub fn fetch(&self, t: usize) -> Result<&ParamVector> {
        t.checked_sub(self.first_round)
            .and_then(|k| self.models.get(k))
            .ok_or(Error::UnknownBaseModel(t))
    }

    /// `w^t - w^v`.
    pub fn delta_w(&self, t: usize, v: usize) -> Result<ParamVector> {
        Ok(self.fetch(t)?.sub(self.fetch(v)?))
    }
}

/// A client's most recent real update and the round of the model it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: usize,
    pub last_update: ParamVector,
    pub last_base_round: usize,
    pub ever_seen: bool,
}

impl ClientRecord {
    pub fn fresh(client_id: usize) -> Self {
        ClientRecord {
            client_id,
            last_update: ParamVector::default(),
            last_base_round: 0,
            ever_seen: false,
        }
    }

    pub fn update(&mut self, g: ParamVector, base_round: usize) {
        self.last_update = g;
        self.last_base_round = base_round;
        self.ever_seen = true;
    }
}

/// Append-only log of accepted-or-not Lipschitz factors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LipschitzLog {
    values: Vec<f64>,
}

impl LipschitzLog {
    pub fn push(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("{lambda} must be finite and >= 0")));
        }
        self.values.push(lambda);
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which model differences pair with a client's update differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// Each client keeps its own aligned `(dw, dg)` ring.
    #[default]
    ClientAnchored,
    /// All clients read model differences from one shared ring.
    Shared,
}

/// Bounded FIFO of `(dw, dg)` secant pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SecantRing {
    dw: VecDeque<ParamVector>,
    dg: VecDeque<ParamVector>,
}

impl SecantRing {
    pub fn len(&self) -> usize {
        self.dg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dg.is_empty()
    }

    fn push(&mut self, capacity: usize, dw: ParamVector, dg: ParamVector) {
        self.dw.push_back(dw);
        self.dg.push_back(dg);
        while self.dg.len() > capacity {
            self.dw.pop_front();
            self.dg.pop_front();
        }
    }
}

/// Secant buffers of capacity `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsBuffers {
    capacity: usize,
    mode: PhiMode,
    global_diffs: VecDeque<ParamVector>,
    per_client: BTreeMap<usize, SecantRing>,
}

impl LbfgsBuffers {
    pub fn new(capacity: usize, mode: PhiMode) -> Self {
        LbfgsBuffers {
            capacity: capacity.max(1),
            mode,
            global_diffs: VecDeque::new(),
            per_client: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> PhiMode {
        self.mode
    }

    /// Appends the pair to the shared ring and to client `k`'s ring,
    /// evicting the oldest entries beyond capacity.
    pub fn push_diffs(&mut self, k: usize, dw: ParamVector, dg: ParamVector) -> Result<()> {
        dg.ensure_dim(dw.dim())?;
        if let Some(prev) = self.global_diffs.back() {
            dw.ensure_dim(prev.dim())?;
        }
        self.global_diffs.push_back(dw.clone());
        while self.global_diffs.len() > self.capacity {
            self.global_diffs.pop_front();
        }
        self.per_client
            .entry(k)
            .or_default()
            .push(self.capacity, dw, dg);
        Ok(())
    }

    /// Oldest-first `(Phi, Pi)` columns for client `k`.
    pub fn pairs(&self, k: usize) -> (Vec<&ParamVector>, Vec<&ParamVector>) {
        let Some(ring) = self.per_client.get(&k) else {
            return (Vec::new(), Vec::new());
        };
        let pi: Vec<&ParamVector> = ring.dg.iter().collect();
        let phi: Vec<&ParamVector> = match self.mode {
            PhiMode::ClientAnchored => ring.dw.iter().collect(),
            PhiMode::Shared => {
                let take = pi.len().min(self.global_diffs.len());
                self.global_diffs.iter().skip(self.global_diffs.len() - take).collect()
            }
        };
        let s = phi.len().min(pi.len());
        (phi[phi.len() - s..].to_vec(), pi[pi.len() - s..].to_vec())
    }

    pub fn client_len(&self, k: usize) -> usize {
        self.per_client.get(&k).map_or(0, SecantRing::len)
    }

    /// Number of stored vectors across every ring.
    pub fn stored_vectors(&self) -> usize {
        self.global_diffs.len() + self.per_client.values().map(|r| r.dw.len() + r.dg.len()).sum::<usize>()
    }
}

/// Everything the server remembers across rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryStore {
    pub globals: GlobalLog,
    pub clients: Vec<ClientRecord>,
    pub lipschitz: LipschitzLog,
    pub buffers: LbfgsBuffers,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    schema: u32,
    history: HistoryStore,
}

impl HistoryStore {
    pub fn new(n_clients: usize, epsilon: usize, mode: PhiMode) -> Self {
        HistoryStore {
            globals: GlobalLog::new(),
            clients: (0..n_clients).map(ClientRecord::fresh).collect(),
            lipschitz: LipschitzLog::default(),
            buffers: LbfgsBuffers::new(epsilon, mode),
        }
    }

    pub fn record(&self, k: usize) -> Result<&ClientRecord> {
        self.clients.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            dim: self.clients.len(),
        })
    }

    pub fn record_mut(&mut self, k: usize) -> Result<&mut ClientRecord> {
        let dim = self.clients.len();
        self.clients
            .get_mut(k)
            .ok_or(Error::IndexOutOfRange { index: k, dim })
    }

    pub fn seen_clients(&self) -> impl Iterator<Item = usize> + '_ {
        self.clients.iter().filter(|r| r.ever_seen).map(|r| r.client_id)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&Checkpoint {
            schema: CHECKPOINT_SCHEMA,
            history: self.clone(),
        })
        .map_err(|e| Error::Parse(e.to_string()))
    }

    /// Restores a checkpoint, rejecting unknown schemas and broken invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if cp.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Parse(format!(
                "unsupported checkpoint schema {} (expected {CHECKPOINT_SCHEMA})",
                cp.schema
            )));
        }
        cp.history.validate()?;
        Ok(cp.history)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.globals.models.front().map(ParamVector::dim);
        let check = |v: &ParamVector| -> Result<()> {
            if let Some(d) = dim {
                v.ensure_dim(d)?;
            }
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite)
            }
        };
        if let Some(cap) = self.globals.cap {
            if cap == 0 || self.globals.models.len() > cap {
                return Err(Error::Parse("global log exceeds its retention cap".into()));
            }
        }
        self.globals.models.iter().try_for_each(check)?;
        self.globals.first_round
            .checked_add(self.globals.models.len())
            .ok_or_else(|| Error::Parse("round counter overflow".into()))?;
        for (i, r) in self.clients.iter().enumerate() {
            if r.client_id != i {
                return Err(Error::Parse(format!("client record {i} carries id {}", r.client_id)));
            }
            if r.ever_seen {
                check(&r.last_update)?;
                if r.last_base_round >= self.globals.next_round() {
                    return Err(Error::Parse(format!("client {i} anchored to a future round")));
                }
            }
        }
        if self.lipschitz.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Parse("Lipschitz log holds a negative or non-finite value".into()));
        }
        let cap = self.buffers.capacity;
        if cap == 0 || self.buffers.global_diffs.len() > cap {
            return Err(Error::Parse("secant buffer exceeds capacity".into()));
        }
        self.buffers.global_diffs.iter().try_for_each(check)?;
        for ring in self.buffers.per_client.values() {
            if ring.dw.len() != ring.dg.len() || ring.dg.len() > cap {
                return Err(Error::Parse("misaligned or oversized secant ring".into()));
            }
            ring.dw.iter().chain(ring.dg.iter()).try_for_each(check)?;
        }
        Ok(())
    }
}
