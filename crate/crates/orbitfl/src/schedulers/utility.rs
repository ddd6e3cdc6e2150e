//! Utility-function estimation: turning (staleness vector, training status)
//! pairs into observed loss reductions on a source task, and fitting a
//! regression forest that predicts the reduction.
//!
//! Sample generation replays what deployment does: every contributing client
//! computes its local-SGD displacement from a past snapshot of a pretraining
//! model sequence, the displacements are combined with the same
//! staleness-compensated rule the server uses, and the drop in source loss is
//! the sample target.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flcore::{aggregate, local_train, BufferEntry, GradientDelta, LocalTrainConfig, ModelParams};
use crate::learntask::{full_loss, generate_synthetic, partition_iid, Dataset};
use crate::schedulers::forest::{ForestParams, RandomForest};
use crate::{derive_seed, exec};

/// Histogram featurization of a staleness vector plus the training status:
/// `[#(-1), #(0), #(1), ..., #(s_max), T]`. Permutation-invariant in the
/// satellite order and fixed-length regardless of the constellation size.
pub fn featurize(entries: &[i32], s_max: usize, training_status: f64) -> Result<Vec<f64>> {
    if !training_status.is_finite() {
        return Err(Error::InvalidData("non-finite training status".into()));
    }
    let mut features = vec![0.0; s_max + 3];
    for &e in entries {
        if e < -1 || e > s_max as i32 {
            return Err(Error::InvalidData(format!(
                "staleness entry {e} outside -1..={s_max}"
            )));
        }
        features[(e + 1) as usize] += 1.0;
    }
    features[s_max + 2] = training_status;
    Ok(features)
}

/// Feature-vector length for a given `s_max`.
pub fn feature_len(s_max: usize) -> usize {
    s_max + 3
}

/// A source task the utility samples are measured on: full-objective
/// evaluation plus per-client local updates.
pub trait SourceTask: Sync {
    fn num_clients(&self) -> usize;
    fn dim(&self) -> usize;
    /// The objective `f` over the whole source dataset.
    fn loss(&self, model: &ModelParams) -> Result<f64>;
    /// Local-SGD displacement of `client` starting from `base`.
    fn client_delta(&self, base: &ModelParams, client: usize, rng: &mut ChaCha8Rng)
        -> Result<Vec<f64>>;
}

/// The production source task: multinomial logistic regression on a synthetic
/// dataset partitioned across clients.
pub struct LogisticSourceTask<'a> {
    data: &'a Dataset,
    partitions: Vec<Vec<u32>>,
    train: LocalTrainConfig,
}

impl<'a> LogisticSourceTask<'a> {
    pub fn new(data: &'a Dataset, partitions: Vec<Vec<u32>>, train: LocalTrainConfig) -> Result<Self> {
        train.validate()?;
        if partitions.is_empty() || partitions.iter().any(Vec::is_empty) {
            return Err(Error::InvalidData("every client needs a non-empty partition".into()));
        }
        Ok(Self { data, partitions, train })
    }
}

impl SourceTask for LogisticSourceTask<'_> {
    fn num_clients(&self) -> usize {
        self.partitions.len()
    }

    fn dim(&self) -> usize {
        self.data.model_dim()
    }

    fn loss(&self, model: &ModelParams) -> Result<f64> {
        full_loss(model, self.data, self.train.l2)
    }

    fn client_delta(
        &self,
        base: &ModelParams,
        client: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        local_train(base, self.data, &self.partitions[client], &self.train, rng)
    }
}

/// Trains the source task with synchronized fresh rounds of `participants`
/// randomly chosen clients each, and stores the whole model sequence
/// `w^0 .. w^rounds`; consecutive entries differ by exactly one aggregation,
/// which is what "s rounds stale" refers to later.
///
/// Partial participation matters: deployment aggregations fold in a handful
/// of satellites at a time, so the stored sequence has to move at that pace
/// for the measured loss reductions to transfer.
pub fn pretrain_models<T: SourceTask + ?Sized>(
    task: &T,
    rounds: usize,
    participants: usize,
    seed: u64,
) -> Result<Vec<ModelParams>> {
    use rand::SeedableRng;
    let k = task.num_clients();
    if participants == 0 || participants > k {
        return Err(Error::InvalidConfig(format!(
            "participants must be in 1..={k}, got {participants}"
        )));
    }
    let mut models = Vec::with_capacity(rounds + 1);
    models.push(ModelParams::zeros(task.dim()));
    for round in 0..rounds {
        let current = models.last().expect("non-empty").clone();
        let chosen = rand::seq::index::sample(
            &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0_0000 | round as u64)),
            k,
            participants,
        )
        .into_vec();
        let deltas: Vec<Vec<f64>> = exec::try_indexed_map(chosen.len(), |i| {
            let client = chosen[i];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                (round as u64) << 24 | client as u64,
            ));
            task.client_delta(&current, client, &mut rng)
        })?;
        let mut next = current;
        for delta in &deltas {
            next.axpy(1.0 / deltas.len() as f64, delta)?;
        }
        models.push(next);
    }
    Ok(models)
}

/// One (featurized input, observed loss reduction) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySample {
    pub features: Vec<f64>,
    pub delta_f: f64,
}

/// Measures the loss reduction of one hypothetical model update: clients with
/// `staleness[k] >= 0` contribute a local delta computed from the model
/// `staleness[k]` rounds before `i_start`, combined with the
/// staleness-compensated rule, evaluated on the source objective.
pub fn utility_delta_f<T: SourceTask + ?Sized>(
    task: &T,
    models: &[ModelParams],
    staleness: &[i32],
    i_start: usize,
    s_max: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UtilitySample> {
    if staleness.len() != task.num_clients() {
        return Err(Error::DimensionMismatch { expected: task.num_clients(), got: staleness.len() });
    }
    if i_start >= models.len() {
        return Err(Error::InvalidData(format!("i_start {i_start} beyond model sequence")));
    }
    let anchor = &models[i_start];
    let status = task.loss(anchor)?;
    let mut buffer = Vec::new();
    for (client, &s) in staleness.iter().enumerate() {
        if s < 0 {
            continue;
        }
        let s = s as usize;
        if s > i_start {
            return Err(Error::InvalidData(format!(
                "staleness {s} reaches before the model sequence at i_start {i_start}"
            )));
        }
        let delta = task.client_delta(&models[i_start - s], client, rng)?;
        buffer.push(BufferEntry {
            delta: GradientDelta { delta, base_round: (i_start - s) as u32 },
            staleness: s as u32,
            satellite_id: client as u32,
        });
    }
    let updated = if buffer.is_empty() { anchor.clone() } else { aggregate(anchor, &buffer, alpha)? };
    let delta_f = status - task.loss(&updated)?;
    Ok(UtilitySample { features: featurize(staleness, s_max, status)?, delta_f })
}

/// Sample-generation knobs.
#[derive(Debug, Clone, Copy)]
pub struct UtilityGenConfig {
    pub samples: usize,
    pub s_max: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Draws `samples` random (staleness vector, start round) pairs against the
/// pretrained sequence and measures each one. Even-numbered samples draw
/// every entry uniformly from `{-1..s_max}`; odd-numbered samples first draw
/// a contributor count, covering the sparse vectors deployment actually sees.
pub fn generate_utility_samples<T: SourceTask + ?Sized>(
    task: &T,
    models: &[ModelParams],
    cfg: &UtilityGenConfig,
) -> Result<Vec<UtilitySample>> {
    use rand::SeedableRng;
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    if models.len() < cfg.s_max + 2 {
        return Err(Error::InvalidConfig(format!(
            "model sequence of {} rounds cannot support s_max {}",
            models.len().saturating_sub(1),
            cfg.s_max
        )));
    }
    let k = task.num_clients();
    exec::try_indexed_map(cfg.samples, |idx| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, idx as u64));
        let i_start = rng.gen_range(cfg.s_max..models.len() - 1);
        let staleness: Vec<i32> = if idx % 2 == 0 {
            (0..k).map(|_| rng.gen_range(-1..=cfg.s_max as i32)).collect()
        } else {
            let contributors = rng.gen_range(0..=k);
            let chosen = rand::seq::index::sample(&mut rng, k, contributors);
            let mut v = vec![-1i32; k];
            for c in chosen {
                v[c] = rng.gen_range(0..=cfg.s_max as i32);
            }
            v
        };
        utility_delta_f(task, models, &staleness, i_start, cfg.s_max, cfg.alpha, &mut rng)
    })
}

/// Writes samples as CSV: one column per histogram bin, the training status,
/// then the observed loss reduction.
pub fn save_samples_csv(samples: &[UtilitySample], s_max: usize, path: &Path) -> Result<()> {
    let mut out = String::from("n_absent");
    for s in 0..=s_max {
        let _ = write!(out, ",s{s}");
    }
    out.push_str(",loss,delta_f\n");
    for sample in samples {
        if sample.features.len() != feature_len(s_max) {
            return Err(Error::DimensionMismatch {
                expected: feature_len(s_max),
                got: sample.features.len(),
            });
        }
        let mut first = true;
        for v in &sample.features {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        let _ = writeln!(out, ",{}", sample.delta_f);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

const ARTIFACT_VERSION: u32 = 1;

/// A fitted utility regressor plus the metadata needed to validate it against
/// a deployment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilityRegressor {
    format_version: u32,
    s_max: usize,
    num_clients: usize,
    samples_used: usize,
    holdout_mse: f64,
    holdout_target_variance: f64,
    forest: RandomForest,
}

impl UtilityRegressor {
    pub fn s_max(&self) -> usize {
        self.s_max
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn samples_used(&self) -> usize {
        self.samples_used
    }

    /// Mean squared error on the 20% holdout split.
    pub fn holdout_mse(&self) -> f64 {
        self.holdout_mse
    }

    /// Variance of the holdout targets; the regressor is only useful when the
    /// MSE beats this (the mean predictor).
    pub fn holdout_target_variance(&self) -> f64 {
        self.holdout_target_variance
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        self.forest.predict(features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Artifact(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let regressor: UtilityRegressor = serde_json::from_str(&text)
            .map_err(|e| Error::Artifact(format!("parse {}: {e}", path.display())))?;
        if regressor.format_version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {} (expected {ARTIFACT_VERSION})",
                regressor.format_version
            )));
        }
        Ok(regressor)
    }
}

/// Fits the forest on an 80/20 train/holdout split of the samples.
pub fn fit_utility_regressor(
    samples: &[UtilitySample],
    params: &ForestParams,
    seed: u64,
) -> Result<UtilityRegressor> {
    if samples.len() < 20 {
        return Err(Error::InsufficientSamples { need: 20, got: samples.len() });
    }
    let feature_len = samples[0].features.len();
    if feature_len < 3 || samples.iter().any(|s| s.features.len() != feature_len) {
        return Err(Error::InvalidData("inconsistent feature lengths".into()));
    }
    if samples.iter().skip(1).all(|s| s.features == samples[0].features) {
        return Err(Error::DegenerateData("all samples share one feature vector".into()));
    }
    let s_max = feature_len - 3;
    let num_clients = samples[0].features[..s_max + 2].iter().sum::<f64>().round() as usize;

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX)));
    let holdout_len = (samples.len() / 5).max(1);
    let (holdout_idx, train_idx) = order.split_at(holdout_len);

    let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| samples[i].features.clone()).collect();
    let train_targets: Vec<f64> = train_idx.iter().map(|&i| samples[i].delta_f).collect();
    let forest = RandomForest::fit(&train_rows, &train_targets, params, seed)?;

    let holdout_targets: Vec<f64> = holdout_idx.iter().map(|&i| samples[i].delta_f).collect();
    let mean = holdout_targets.iter().sum::<f64>() / holdout_targets.len() as f64;
    let variance = holdout_targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
        / holdout_targets.len() as f64;
    let mse = holdout_idx
        .iter()
        .map(|&i| {
            let p = forest.predict(&samples[i].features)?;
            Ok((p - samples[i].delta_f) * (p - samples[i].delta_f))
        })
        .sum::<Result<f64>>()?
        / holdout_targets.len() as f64;

    Ok(UtilityRegressor {
        format_version: ARTIFACT_VERSION,
        s_max,
        num_clients,
        samples_used: samples.len(),
        holdout_mse: mse,
        holdout_target_variance: variance,
        forest,
    })
}

/// End-to-end utility-estimation configuration: source task, pretraining, and
/// sampling in one file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityFitConfig {
    pub seed: u64,
    pub source_task: SourceTaskConfig,
    /// Client count; must match the deployment constellation size.
    pub clients: usize,
    pub pretrain_rounds: usize,
    /// Clients participating in each pretraining round.
    #[serde(default = "default_pretrain_participants")]
    pub pretrain_participants: usize,
    pub train: LocalTrainConfig,
    pub alpha: f64,
    pub samples: usize,
    pub s_max: usize,
    #[serde(default)]
    pub forest: ForestParams,
}

fn default_pretrain_participants() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceTaskConfig {
    pub n: usize,
    pub features: usize,
    pub classes: usize,
    pub separation: f64,
    pub zones: usize,
}

/// Everything phase one produces.
pub struct FittedUtility {
    pub regressor: UtilityRegressor,
    pub samples: Vec<UtilitySample>,
}

/// Runs phase one from a config: generate the source dataset, pretrain, draw
/// utility samples, and fit the regressor.
pub fn fit_from_config(cfg: &UtilityFitConfig) -> Result<FittedUtility> {
    use rand::SeedableRng;
    cfg.train.validate()?;
    if cfg.clients == 0 {
        return Err(Error::InvalidConfig("clients must be at least 1".into()));
    }
    if cfg.pretrain_rounds <= cfg.s_max {
        return Err(Error::InvalidConfig(format!(
            "pretrain_rounds {} must exceed s_max {}",
            cfg.pretrain_rounds, cfg.s_max
        )));
    }
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 101));
    let data = generate_synthetic(
        cfg.source_task.n,
        cfg.source_task.features,
        cfg.source_task.classes,
        cfg.source_task.separation,
        cfg.source_task.zones,
        &mut data_rng,
    )?;
    let mut part_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 102));
    let partitioning = partition_iid(&data, cfg.clients, &mut part_rng)?;
    let task = LogisticSourceTask::new(&data, partitioning.index_lists(), cfg.train)?;
    let models = pretrain_models(
        &task,
        cfg.pretrain_rounds,
        cfg.pretrain_participants.min(cfg.clients),
        derive_seed(cfg.seed, 103),
    )?;
    let samples = generate_utility_samples(
        &task,
        &models,
        &UtilityGenConfig {
            samples: cfg.samples,
            s_max: cfg.s_max,
            alpha: cfg.alpha,
            seed: derive_seed(cfg.seed, 104),
        },
    )?;
    let regressor = fit_utility_regressor(&samples, &cfg.forest, derive_seed(cfg.seed, 105))?;
    Ok(FittedUtility { regressor, samples })
}
