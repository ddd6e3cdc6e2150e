//! Federated-learning core: model and gradient types, satellite-side local
//! SGD, staleness-compensated server aggregation, and the per-time-index
//! server step.
//!
//! The server keeps a global model `w` and a round counter that increments
//! only when the model actually changes. A contact unfolds in a fixed order:
//! the satellite first hands over any pending update (its staleness is the
//! number of rounds since the update's base model was downloaded), the server
//! then consults its scheduler and may aggregate, and finally the
//! post-aggregation model is broadcast back. A satellite retrains only when
//! the broadcast round is newer than its stored base; arriving with nothing
//! to upload after the first download counts as an idle contact.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learntask::{self, Dataset};
use crate::orbits::ConnectivitySets;
use crate::SatId;

/// Dense global model parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData("model must have at least one parameter".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite model parameter".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `self += scale * other`, checking dimensions.
    pub fn axpy(&mut self, scale: f64, other: &[f64]) -> Result<()> {
        if other.len() != self.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: other.len() });
        }
        for (v, o) in self.values.iter_mut().zip(other) {
            *v += scale * o;
        }
        Ok(())
    }
}

/// A satellite's local update: the displacement accumulated over its local
/// SGD steps, together with the round index of the base model it started
/// from.
#[derive(Debug, Clone)]
pub struct GradientDelta {
    pub delta: Vec<f64>,
    pub base_round: u32,
}

/// A buffered upload awaiting aggregation.
#[derive(Debug, Clone)]
pub struct BufferEntry {
    pub delta: GradientDelta,
    /// Rounds elapsed between the base-model download and receipt.
    pub staleness: u32,
    pub satellite_id: SatId,
}

/// Staleness compensation `(s + 1)^{-alpha}`: equals 1 at `s = 0` and is
/// strictly decreasing in `s` for `alpha > 0`. Staleness is unsigned by
/// construction, so negative inputs are unrepresentable.
pub fn staleness_weight(staleness: u32, alpha: f64) -> f64 {
    (staleness as f64 + 1.0).powf(-alpha)
}

/// Applies the buffered updates to `model` with compensation weights
/// normalized to sum to one: `w + sum_k (c(s_k)/C) g_k`.
pub fn aggregate(model: &ModelParams, buffer: &[BufferEntry], alpha: f64) -> Result<ModelParams> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let dim = model.dim();
    let mut normalizer = 0.0;
    for entry in buffer {
        if entry.delta.delta.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: entry.delta.delta.len() });
        }
        normalizer += staleness_weight(entry.staleness, alpha);
    }
    let mut out = model.clone();
    for entry in buffer {
        let weight = staleness_weight(entry.staleness, alpha) / normalizer;
        out.axpy(weight, &entry.delta.delta)?;
    }
    Ok(out)
}

/// Local-training hyperparameters shared by every satellite.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalTrainConfig {
    pub steps_e: usize,
    pub batch_b: usize,
    pub lr: f64,
    #[serde(default)]
    pub l2: f64,
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_e == 0 || self.batch_b == 0 {
            return Err(Error::InvalidConfig("steps_e and batch_b must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidConfig("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Without-replacement mini-batch cursor: one shuffled pass over the sample
/// indices per epoch, reshuffled when exhausted. A batch size larger than the
/// partition falls back to the full partition.
pub struct EpochSampler {
    order: Vec<u32>,
    cursor: usize,
    batch: usize,
}

impl EpochSampler {
    pub fn new(indices: Vec<u32>, batch: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidData("empty partition".into()));
        }
        let batch = batch.min(indices.len()).max(1);
        Ok(Self { order: indices, cursor: usize::MAX, batch })
    }

    pub fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        use rand::seq::SliceRandom;
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Runs `steps` SGD updates from `start` and returns the accumulated
/// displacement `w_E - w_0`. Generic over the loss so the update rule can be
/// exercised against closed-form objectives.
pub fn sgd_delta<G>(
    start: &[f64],
    steps: usize,
    lr: f64,
    sampler: &mut EpochSampler,
    rng: &mut ChaCha8Rng,
    mut loss_grad: G,
) -> Result<Vec<f64>>
where
    G: FnMut(&[f64], &[u32]) -> Result<(f64, Vec<f64>)>,
{
    let mut w = start.to_vec();
    for step in 0..steps {
        let batch = sampler.next_batch(rng);
        let (loss, grad) = loss_grad(&w, &batch)?;
        if !loss.is_finite() {
            return Err(Error::DivergentTraining { step });
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= lr * gj;
        }
    }
    for (wj, sj) in w.iter_mut().zip(start) {
        *wj -= sj;
    }
    Ok(w)
}

/// `steps_e` mini-batch SGD steps of the multinomial logistic loss on the
/// satellite's partition; returns the displacement from `base`.
pub fn local_train(
    base: &ModelParams,
    data: &Dataset,
    partition: &[u32],
    cfg: &LocalTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut sampler = EpochSampler::new(partition.to_vec(), cfg.batch_b)?;
    sgd_delta(base.values(), cfg.steps_e, cfg.lr, &mut sampler, rng, |w, batch| {
        let model = ModelParams { values: w.to_vec() };
        learntask::loss_and_grad(&model, data, batch, cfg.l2)
    })
}

/// Outcome of the broadcast phase of a contact, from the satellite's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastOutcome {
    /// First model ever received; local training started.
    FirstDownload,
    /// Broadcast round was newer than the stored base; retrained.
    Adopted,
    /// Broadcast round equals the stored base; nothing to do.
    Unchanged,
}

/// Per-satellite client state.
pub struct SatelliteState {
    id: SatId,
    base_round: Option<u32>,
    pending: Option<GradientDelta>,
    partition: Vec<u32>,
    rng: ChaCha8Rng,
}

impl SatelliteState {
    pub fn new(id: SatId, partition: Vec<u32>, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        if partition.is_empty() {
            return Err(Error::InvalidData(format!("satellite {id} has an empty partition")));
        }
        Ok(Self { id, base_round: None, pending: None, partition, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn id(&self) -> SatId {
        self.id
    }

    pub fn base_round(&self) -> Option<u32> {
        self.base_round
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Upload phase of a contact: hands over the pending update, if any.
    pub fn take_upload(&mut self) -> Option<GradientDelta> {
        self.pending.take()
    }

    /// Download phase of a contact: adopts the broadcast model when its round
    /// is newer than the stored base and immediately runs local training, so
    /// the result is pending by the next contact. An unchanged round leaves
    /// the satellite as it was.
    pub fn receive_broadcast(
        &mut self,
        model: &ModelParams,
        round: u32,
        data: &Dataset,
        cfg: &LocalTrainConfig,
    ) -> Result<BroadcastOutcome> {
        let outcome = match self.base_round {
            None => BroadcastOutcome::FirstDownload,
            Some(base) if round > base => BroadcastOutcome::Adopted,
            Some(_) => return Ok(BroadcastOutcome::Unchanged),
        };
        let delta = local_train(model, data, &self.partition, cfg, &mut self.rng)?;
        self.base_round = Some(round);
        self.pending = Some(GradientDelta { delta, base_round: round });
        Ok(outcome)
    }
}

/// Server state: global model, round counter, and the upload buffer with its
/// contributor set.
pub struct ServerState {
    pub model: ModelParams,
    pub round: u32,
    pub buffer: Vec<BufferEntry>,
    pub contributors: BTreeSet<SatId>,
    pub time_index: usize,
}

impl ServerState {
    pub fn new(model: ModelParams) -> Self {
        Self { model, round: 0, buffer: Vec::new(), contributors: BTreeSet::new(), time_index: 0 }
    }
}

/// Read-only view the scheduler sees when deciding `a^i` at one time index,
/// after the uploads of that index have been received.
pub struct DecisionView<'a> {
    pub time_index: usize,
    pub connected: &'a [SatId],
    pub contributors: &'a BTreeSet<SatId>,
    pub buffer_len: usize,
}

/// Wider snapshot offered at the start of every time index, before uploads
/// are received; planning schedulers use it to forecast the window ahead.
pub struct WorldView<'a> {
    pub time_index: usize,
    pub round: u32,
    pub buffer: &'a [BufferEntry],
    pub satellites: &'a [SatelliteState],
    pub trace: &'a ConnectivitySets,
    /// Running training-status proxy (probe loss EMA).
    pub loss_proxy: f64,
}

/// An aggregation-decision policy.
pub trait AggregationScheduler {
    /// Called once per time index before any upload is received.
    fn on_index_start(&mut self, _world: &WorldView<'_>) -> Result<()> {
        Ok(())
    }

    /// The aggregation indicator `a^i` for the current index.
    fn decide(&mut self, view: &DecisionView<'_>) -> bool;
}

/// What happened when the buffer was aggregated at one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRecord {
    pub time_index: usize,
    /// Round counter after the update.
    pub round: u32,
    /// Staleness of every aggregated gradient, in receipt order.
    pub staleness: Vec<u32>,
    /// Source satellite of every aggregated gradient, aligned with
    /// `staleness`. A satellite can appear twice when no aggregation fell
    /// between two of its contacts.
    pub satellites: Vec<SatId>,
}

/// Bookkeeping for one executed time index.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub time_index: usize,
    /// The scheduler's `a^i`.
    pub scheduled: bool,
    /// Present when `a^i = 1` fired on a non-empty buffer.
    pub aggregation: Option<AggregationRecord>,
    /// `(satellite, staleness)` for every upload received this index.
    pub uploads: Vec<(SatId, u32)>,
    /// Contacts that arrived with nothing to upload after a previous
    /// download.
    pub idle: Vec<SatId>,
    /// First-ever downloads this index.
    pub first_downloads: Vec<SatId>,
}

/// Inputs the server needs to execute a step: the shared dataset, local
/// training hyperparameters, and the staleness-compensation exponent.
pub struct StepInputs<'a> {
    pub data: &'a Dataset,
    pub train: &'a LocalTrainConfig,
    pub alpha: f64,
}

/// Executes one time index: receive uploads from `connected`, query the
/// scheduler, aggregate when told to and the buffer is non-empty (a scheduled
/// aggregation over an empty buffer changes nothing), then broadcast the
/// current model to the connected satellites.
pub fn server_step<S: AggregationScheduler + ?Sized>(
    server: &mut ServerState,
    satellites: &mut [SatelliteState],
    connected: &[SatId],
    scheduler: &mut S,
    inputs: &StepInputs<'_>,
) -> Result<StepRecord> {
    let mut record = StepRecord {
        time_index: server.time_index,
        scheduled: false,
        aggregation: None,
        uploads: Vec::new(),
        idle: Vec::new(),
        first_downloads: Vec::new(),
    };

    for &k in connected {
        let sat = satellites
            .get_mut(k as usize)
            .filter(|s| s.id() == k)
            .ok_or(Error::UnknownSatellite(k))?;
        let is_first = sat.base_round().is_none();
        match sat.take_upload() {
            Some(delta) => {
                let staleness = server
                    .round
                    .checked_sub(delta.base_round)
                    .ok_or_else(|| Error::InvalidData(format!("satellite {k} ahead of server round")))?;
                record.uploads.push((k, staleness));
                server.contributors.insert(k);
                server.buffer.push(BufferEntry { delta, staleness, satellite_id: k });
            }
            None if is_first => record.first_downloads.push(k),
            None => record.idle.push(k),
        }
    }

    let view = DecisionView {
        time_index: server.time_index,
        connected,
        contributors: &server.contributors,
        buffer_len: server.buffer.len(),
    };
    record.scheduled = scheduler.decide(&view);

    if record.scheduled && !server.buffer.is_empty() {
        server.model = aggregate(&server.model, &server.buffer, inputs.alpha)?;
        server.round += 1;
        record.aggregation = Some(AggregationRecord {
            time_index: server.time_index,
            round: server.round,
            staleness: server.buffer.iter().map(|e| e.staleness).collect(),
            satellites: server.buffer.iter().map(|e| e.satellite_id).collect(),
        });
        server.buffer.clear();
        server.contributors.clear();
    }

    for &k in connected {
        let sat = &mut satellites[k as usize];
        sat.receive_broadcast(&server.model, server.round, inputs.data, inputs.train)?;
    }

    server.time_index += 1;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learntask::generate_synthetic;
    use crate::schedulers::{AsyncScheduler, FedBuffScheduler, SyncScheduler};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn staleness_weight_matches_closed_forms() {
        assert_eq!(staleness_weight(0, 0.7), 1.0);
        assert_eq!(staleness_weight(0, 3.0), 1.0);
        assert!((staleness_weight(1, 1.0) - 0.5).abs() < 1e-15);
        assert!((staleness_weight(3, 0.5) - 0.5).abs() < 1e-15);
        // Strictly decreasing for positive alpha.
        for s in 0..10u32 {
            assert!(staleness_weight(s + 1, 0.5) < staleness_weight(s, 0.5));
        }
    }

    fn entry(delta: Vec<f64>, base_round: u32, staleness: u32, id: SatId) -> BufferEntry {
        BufferEntry { delta: GradientDelta { delta, base_round }, staleness, satellite_id: id }
    }

    #[test]
    fn single_fresh_entry_applies_fully() {
        let w = ModelParams::new(vec![1.0, 2.0]).unwrap();
        let out = aggregate(&w, &[entry(vec![0.5, -0.5], 0, 0, 0)], 0.5).unwrap();
        assert_eq!(out.values(), &[1.5, 1.5]);
    }

    #[test]
    fn opposite_fresh_entries_cancel() {
        let w = ModelParams::new(vec![3.0, -1.0, 0.25]).unwrap();
        let g = vec![0.7, -0.3, 11.0];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let out =
            aggregate(&w, &[entry(g, 0, 0, 0), entry(neg, 0, 0, 1)], 1.0).unwrap();
        for (a, b) in out.values().iter().zip(w.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mixed_staleness_weights_normalize() {
        // Weights 1 and 1/2 normalize to 2/3 and 1/3 at alpha = 1.
        let w = ModelParams::zeros(2);
        let g1 = vec![3.0, 0.0];
        let g2 = vec![0.0, 3.0];
        let out = aggregate(&w, &[entry(g1, 0, 0, 0), entry(g2, 0, 1, 1)], 1.0).unwrap();
        assert!((out.values()[0] - 2.0).abs() < 1e-12);
        assert!((out.values()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_buffer_is_rejected() {
        let w = ModelParams::zeros(2);
        assert!(matches!(aggregate(&w, &[], 1.0), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn sgd_on_quadratic_takes_one_exact_step() {
        // f(w) = 0.5 * |w - w*|^2, full batch, one step: delta = -lr (w0 - w*).
        let target = [2.0, -1.0];
        let start = [0.0, 0.0];
        let mut sampler = EpochSampler::new(vec![0], 1).unwrap();
        let delta = sgd_delta(&start, 1, 0.3, &mut sampler, &mut rng(1), |w, _| {
            let grad: Vec<f64> = w.iter().zip(&target).map(|(wi, ti)| wi - ti).collect();
            let loss = 0.5 * grad.iter().map(|g| g * g).sum::<f64>();
            Ok((loss, grad))
        })
        .unwrap();
        assert!((delta[0] - 0.3 * 2.0).abs() < 1e-15);
        assert!((delta[1] - 0.3 * -1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_task_is_a_fixed_point() {
        // Single-class logistic: softmax is identically 1, loss 0, gradient 0.
        let data = Dataset::new(vec![1.0, -2.0, 0.5, 0.1], vec![0, 0], vec![0, 0], 2, 1).unwrap();
        let base = ModelParams::new(vec![0.3, -0.7, 0.1]).unwrap();
        let cfg = LocalTrainConfig { steps_e: 5, batch_b: 2, lr: 0.5, l2: 0.0 };
        let delta = local_train(&base, &data, &[0, 1], &cfg, &mut rng(2)).unwrap();
        assert!(delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_train_matches_hand_rolled_replay() {
        // Independent replay of 3 steps with batch 2 on a 4-point partition,
        // reproducing the sampler's shuffle calls against the same stream.
        use rand::seq::SliceRandom;
        let data = generate_synthetic(4, 2, 2, 2.0, 1, &mut rng(40)).unwrap();
        let base = ModelParams::zeros(data.model_dim());
        let cfg = LocalTrainConfig { steps_e: 3, batch_b: 2, lr: 0.1, l2: 0.0 };
        let partition = vec![0u32, 1, 2, 3];
        let delta = local_train(&base, &data, &partition, &cfg, &mut rng(42)).unwrap();

        let mut r = rng(42);
        let mut w = base.values().to_vec();
        let mut order = partition.clone();
        let mut cursor = usize::MAX;
        for _ in 0..3 {
            if cursor >= order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            let end = (cursor + 2).min(order.len());
            let batch = order[cursor..end].to_vec();
            cursor = end;
            let model = ModelParams::new(w.clone()).unwrap();
            let (_, grad) = learntask::loss_and_grad(&model, &data, &batch, 0.0).unwrap();
            for (wj, gj) in w.iter_mut().zip(&grad) {
                *wj -= 0.1 * gj;
            }
        }
        for (d, (wj, bj)) in delta.iter().zip(w.iter().zip(base.values())) {
            assert!((d - (wj - bj)).abs() < 1e-15);
        }
    }

    #[test]
    fn divergent_lr_is_reported() {
        let data = generate_synthetic(16, 2, 2, 5.0, 1, &mut rng(3)).unwrap();
        let base = ModelParams::zeros(data.model_dim());
        let cfg = LocalTrainConfig { steps_e: 5, batch_b: 16, lr: 1e200, l2: 1e-4 };
        let err = local_train(&base, &data, &(0..16).collect::<Vec<_>>(), &cfg, &mut rng(4));
        assert!(matches!(err, Err(Error::DivergentTraining { .. })));
    }

    /// Hand-derived three-satellite contact pattern used to replay all three
    /// baseline policies against pen-and-paper bookkeeping.
    /// SA0: {0,2,4,6,8}, SA1: {1,3,5,8}, SA2: {0,7}.
    fn three_sat_trace() -> Vec<Vec<SatId>> {
        vec![
            vec![0, 2],
            vec![1],
            vec![0],
            vec![1],
            vec![0],
            vec![1],
            vec![0],
            vec![2],
            vec![0, 1],
        ]
    }

    struct Replay {
        records: Vec<StepRecord>,
        final_round: u32,
    }

    fn replay<S: AggregationScheduler>(mut scheduler: S) -> Replay {
        let data = generate_synthetic(30, 2, 2, 2.0, 1, &mut rng(50)).unwrap();
        let cfg = LocalTrainConfig { steps_e: 2, batch_b: 4, lr: 0.05, l2: 0.0 };
        let mut sats: Vec<SatelliteState> = (0..3)
            .map(|k| {
                let part: Vec<u32> = (0..30).filter(|i| i % 3 == k).map(|i| i as u32).collect();
                SatelliteState::new(k as SatId, part, 100 + k as u64).unwrap()
            })
            .collect();
        let mut server = ServerState::new(ModelParams::zeros(data.model_dim()));
        let inputs = StepInputs { data: &data, train: &cfg, alpha: 0.5 };
        let mut records = Vec::new();
        for connected in three_sat_trace() {
            records
                .push(server_step(&mut server, &mut sats, &connected, &mut scheduler, &inputs).unwrap());
        }
        Replay { records, final_round: server.round }
    }

    fn staleness_by_index(records: &[StepRecord]) -> Vec<(usize, Vec<u32>)> {
        records
            .iter()
            .filter_map(|r| r.aggregation.as_ref().map(|a| (a.time_index, a.staleness.clone())))
            .collect()
    }

    fn idle_events(records: &[StepRecord]) -> Vec<(usize, SatId)> {
        records
            .iter()
            .flat_map(|r| r.idle.iter().map(move |&k| (r.time_index, k)))
            .collect()
    }

    #[test]
    fn sync_replay_matches_hand_bookkeeping() {
        let out = replay(SyncScheduler::new(3));
        assert_eq!(out.final_round, 1);
        assert_eq!(staleness_by_index(&out.records), vec![(7, vec![0, 0, 0])]);
        assert_eq!(
            idle_events(&out.records),
            vec![(4, 0), (5, 1), (6, 0), (8, 0), (8, 1)]
        );
        let uploads: Vec<(SatId, u32)> =
            out.records.iter().flat_map(|r| r.uploads.clone()).collect();
        assert_eq!(uploads, vec![(0, 0), (1, 0), (2, 0)]);
        let firsts: usize = out.records.iter().map(|r| r.first_downloads.len()).sum();
        assert_eq!(firsts, 3);
    }

    #[test]
    fn async_replay_matches_hand_bookkeeping() {
        let out = replay(AsyncScheduler);
        assert_eq!(out.final_round, 7);
        assert_eq!(
            staleness_by_index(&out.records),
            vec![
                (2, vec![0]),
                (3, vec![1]),
                (4, vec![1]),
                (5, vec![1]),
                (6, vec![1]),
                (7, vec![5]),
                (8, vec![1, 2]),
            ]
        );
        assert!(idle_events(&out.records).is_empty());
    }

    #[test]
    fn fedbuff_replay_matches_hand_bookkeeping() {
        let out = replay(FedBuffScheduler::new(2).unwrap());
        assert_eq!(out.final_round, 3);
        assert_eq!(
            staleness_by_index(&out.records),
            vec![(3, vec![0, 0]), (6, vec![0, 0]), (8, vec![2, 0])]
        );
        assert_eq!(idle_events(&out.records), vec![(4, 0), (8, 1)]);
    }

    #[test]
    fn empty_connectivity_advances_time_only() {
        let data = generate_synthetic(10, 2, 2, 1.0, 1, &mut rng(60)).unwrap();
        let cfg = LocalTrainConfig { steps_e: 1, batch_b: 2, lr: 0.1, l2: 0.0 };
        let mut sats = vec![SatelliteState::new(0, vec![0, 1, 2], 7).unwrap()];
        let mut server = ServerState::new(ModelParams::zeros(data.model_dim()));
        let before = server.model.clone();
        let mut sched = AsyncScheduler;
        let inputs = StepInputs { data: &data, train: &cfg, alpha: 0.5 };
        let rec = server_step(&mut server, &mut sats, &[], &mut sched, &inputs).unwrap();
        assert_eq!(server.time_index, 1);
        assert_eq!(server.round, 0);
        assert_eq!(server.model, before);
        assert!(rec.uploads.is_empty() && rec.idle.is_empty());
    }

    #[test]
    fn unknown_satellite_is_rejected() {
        let data = generate_synthetic(10, 2, 2, 1.0, 1, &mut rng(61)).unwrap();
        let cfg = LocalTrainConfig { steps_e: 1, batch_b: 2, lr: 0.1, l2: 0.0 };
        let mut sats = vec![SatelliteState::new(0, vec![0, 1], 7).unwrap()];
        let mut server = ServerState::new(ModelParams::zeros(data.model_dim()));
        let mut sched = AsyncScheduler;
        let inputs = StepInputs { data: &data, train: &cfg, alpha: 0.5 };
        let err = server_step(&mut server, &mut sats, &[3], &mut sched, &inputs);
        assert!(matches!(err, Err(Error::UnknownSatellite(3))));
    }

    #[test]
    fn first_contact_sets_base_and_schedules_training() {
        let data = generate_synthetic(10, 2, 2, 1.0, 1, &mut rng(62)).unwrap();
        let cfg = LocalTrainConfig { steps_e: 1, batch_b: 2, lr: 0.1, l2: 0.0 };
        let mut sat = SatelliteState::new(0, vec![0, 1, 2], 9).unwrap();
        assert!(sat.take_upload().is_none());
        let model = ModelParams::zeros(data.model_dim());
        let out = sat.receive_broadcast(&model, 0, &data, &cfg).unwrap();
        assert_eq!(out, BroadcastOutcome::FirstDownload);
        assert_eq!(sat.base_round(), Some(0));
        assert!(sat.has_pending());

        // Unchanged round: upload drains, no retraining happens.
        let up = sat.take_upload().unwrap();
        assert_eq!(up.base_round, 0);
        let out = sat.receive_broadcast(&model, 0, &data, &cfg).unwrap();
        assert_eq!(out, BroadcastOutcome::Unchanged);
        assert!(!sat.has_pending());

        // Advanced round: adopts and retrains.
        let out = sat.receive_broadcast(&model, 2, &data, &cfg).unwrap();
        assert_eq!(out, BroadcastOutcome::Adopted);
        assert_eq!(sat.base_round(), Some(2));
        assert!(sat.has_pending());
    }
}
