//! End-to-end experiment driver: iterate the time indices of a connectivity
//! trace, drive the server/satellite state machines under a chosen
//! aggregation policy, and record metrics.
//!
//! A run is a pure function of (trace, config, seed): dataset generation,
//! partitioning, every satellite's training stream, and the scheduler's
//! search all derive their RNG state from the configured seed, so two runs
//! with identical configs serialize to identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::flcore::{
    server_step, AggregationRecord, AggregationScheduler, LocalTrainConfig, ModelParams,
    SatelliteState, ServerState, StepInputs, WorldView,
};
use crate::learntask::{
    evaluate, full_loss, generate_synthetic, partition_iid, partition_noniid_by_visits, Dataset,
};
use crate::orbits::{
    compute_connectivity, ground_track_zone_visits, load_contact_trace, reference_stations,
    walker_constellation, ConnectivitySets, GroundStation, OrbitalElements, WalkerGroup,
};
use crate::schedulers::{
    AsyncScheduler, FedBuffScheduler, FedSpaceConfig, FedSpaceScheduler, SyncScheduler,
    UtilityRegressor,
};
use crate::derive_seed;

const STREAM_DATA: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_SCHEDULER: u64 = 3;
const STREAM_SATELLITE_BASE: u64 = 1_000;

/// Probe-loss EMA decay for the training-status proxy.
const LOSS_PROXY_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub trace: TraceConfig,
    pub task: TaskConfig,
    pub partition: PartitionConfig,
    pub train: TrainSection,
    pub scheduler: SchedulerConfig,
    pub eval: EvalConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.trace.validate()?;
        self.task.validate()?;
        self.train.validate()?;
        self.scheduler.validate()?;
        self.eval.validate()
    }
}

/// Where the connectivity trace comes from: exactly one of a CSV file or an
/// inline generation config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<TraceGenConfig>,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.file, &self.generate) {
            (Some(_), None) => Ok(()),
            (None, Some(g)) => g.validate(),
            (Some(_), Some(_)) => {
                Err(Error::InvalidConfig("trace: set either `file` or `generate`, not both".into()))
            }
            (None, None) => {
                Err(Error::InvalidConfig("trace: one of `file` or `generate` is required".into()))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceGenConfig {
    pub constellation: Vec<WalkerGroup>,
    pub stations: StationsConfig,
    pub alpha_min_deg: f64,
    pub t0_seconds: f64,
    pub horizon: usize,
    pub substep_seconds: f64,
}

impl TraceGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.constellation.is_empty() {
            return Err(Error::InvalidConfig("constellation must have at least one group".into()));
        }
        self.stations.validate()?;
        if !(self.alpha_min_deg.is_finite() && (0.0..90.0).contains(&self.alpha_min_deg)) {
            return Err(Error::InvalidConfig("alpha_min_deg must be in [0, 90)".into()));
        }
        Ok(())
    }

    pub fn elements(&self) -> Result<Vec<OrbitalElements>> {
        walker_constellation(&self.constellation)
    }

    pub fn build(&self) -> Result<(ConnectivitySets, Vec<OrbitalElements>)> {
        let elements = self.elements()?;
        let stations = self.stations.resolve()?;
        let trace = compute_connectivity(
            &elements,
            &stations,
            self.alpha_min_deg.to_radians(),
            self.t0_seconds,
            self.horizon,
            self.substep_seconds,
        )?;
        Ok((trace, elements))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<StationSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub alt_m: f64,
}

impl StationsConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.preset, &self.list) {
            (Some(p), None) if p == "reference12" => Ok(()),
            (Some(p), None) => Err(Error::InvalidConfig(format!("unknown station preset `{p}`"))),
            (None, Some(l)) if !l.is_empty() => Ok(()),
            (None, Some(_)) => Err(Error::InvalidConfig("stations: list is empty".into())),
            _ => Err(Error::InvalidConfig(
                "stations: set either `preset` or `list`, not both".into(),
            )),
        }
    }

    pub fn resolve(&self) -> Result<Vec<GroundStation>> {
        self.validate()?;
        if self.preset.is_some() {
            return Ok(reference_stations());
        }
        Ok(self
            .list
            .as_ref()
            .expect("validated")
            .iter()
            .map(|s| GroundStation {
                latitude_rad: s.lat_deg.to_radians(),
                longitude_rad: s.lon_deg.to_radians(),
                altitude_m: s.alt_m,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub train_n: usize,
    pub val_n: usize,
    pub probe_n: usize,
    pub features: usize,
    pub classes: usize,
    pub separation: f64,
    pub zones: usize,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_n == 0 || self.val_n == 0 || self.probe_n == 0 {
            return Err(Error::InvalidConfig("train_n, val_n and probe_n must be positive".into()));
        }
        if self.features == 0 || self.classes == 0 || self.zones == 0 {
            return Err(Error::InvalidConfig("features, classes and zones must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid,
    NoniidVisits,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps_e: usize,
    pub batch_b: usize,
    pub lr: f64,
    #[serde(default)]
    pub l2: f64,
    /// Staleness-compensation exponent used by the server.
    pub alpha: f64,
}

impl TrainSection {
    pub fn validate(&self) -> Result<()> {
        self.local().validate()?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig("alpha must be non-negative".into()));
        }
        Ok(())
    }

    pub fn local(&self) -> LocalTrainConfig {
        LocalTrainConfig { steps_e: self.steps_e, batch_b: self.batch_b, lr: self.lr, l2: self.l2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerConfig {
    Sync,
    Async,
    Fedbuff {
        m: usize,
    },
    Fedspace {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        regressor: Option<PathBuf>,
        #[serde(default)]
        params: FedSpaceConfig,
    },
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SchedulerConfig::Sync | SchedulerConfig::Async => Ok(()),
            SchedulerConfig::Fedbuff { m } => {
                if *m == 0 {
                    Err(Error::InvalidConfig("fedbuff m must be at least 1".into()))
                } else {
                    Ok(())
                }
            }
            SchedulerConfig::Fedspace { params, .. } => params.validate(),
        }
    }

    /// Short label used in metrics and output file names.
    pub fn label(&self) -> String {
        match self {
            SchedulerConfig::Sync => "sync".into(),
            SchedulerConfig::Async => "async".into(),
            SchedulerConfig::Fedbuff { m } => format!("fedbuff_m{m}"),
            SchedulerConfig::Fedspace { .. } => "fedspace".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every this many time indices.
    pub cadence: usize,
    pub target_accuracy: f64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cadence == 0 {
            return Err(Error::InvalidConfig("eval cadence must be at least 1".into()));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy < 1.0) {
            return Err(Error::InvalidConfig("target_accuracy must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Trace plus the orbital elements it was generated from (needed for the
/// visit-proportional partitioner; absent for file-loaded traces).
pub struct TraceBundle {
    pub trace: ConnectivitySets,
    pub elements: Option<Vec<OrbitalElements>>,
    pub gen_config: Option<TraceGenConfig>,
}

pub fn resolve_trace(cfg: &TraceConfig) -> Result<TraceBundle> {
    cfg.validate()?;
    if let Some(path) = &cfg.file {
        return Ok(TraceBundle { trace: load_contact_trace(path)?, elements: None, gen_config: None });
    }
    let gen = cfg.generate.as_ref().expect("validated");
    let (trace, elements) = gen.build()?;
    Ok(TraceBundle { trace, elements: Some(elements), gen_config: Some(gen.clone()) })
}

/// Seed-dependent inputs shared by every scheduler on the same seed.
pub struct SharedInputs {
    pub train_data: Dataset,
    pub val_data: Dataset,
    pub probe_data: Dataset,
    pub partitions: Vec<Vec<u32>>,
}

pub fn resolve_shared(config: &SimConfig, bundle: &TraceBundle) -> Result<SharedInputs> {
    use rand::SeedableRng;
    let task = &config.task;
    let total = task.train_n + task.val_n + task.probe_n;
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_DATA));
    let all = generate_synthetic(
        total,
        task.features,
        task.classes,
        task.separation,
        task.zones,
        &mut data_rng,
    )?;
    let (train_data, rest) = all.split_at(task.train_n)?;
    let (val_data, probe_data) = rest.split_at(task.val_n)?;

    let k = bundle.trace.num_satellites() as usize;
    let mut part_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_PARTITION));
    let partitioning = match config.partition {
        PartitionConfig::Iid => partition_iid(&train_data, k, &mut part_rng)?,
        PartitionConfig::NoniidVisits => {
            let elements = bundle.elements.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "noniid_visits partitioning needs a generated trace (orbital elements); \
                     file-based traces carry no geometry"
                        .into(),
                )
            })?;
            let gen = bundle.gen_config.as_ref().expect("generated trace keeps its config");
            let visits = ground_track_zone_visits(
                elements,
                task.zones,
                gen.t0_seconds,
                gen.horizon,
                gen.substep_seconds,
            )?;
            partition_noniid_by_visits(&train_data, &visits, &mut part_rng)?
        }
    };
    let partitions = partitioning.index_lists();
    if let Some(empty) = partitions.iter().position(Vec::is_empty) {
        return Err(Error::InvalidConfig(format!(
            "satellite {empty} received no samples; increase train_n or rebalance zones"
        )));
    }
    Ok(SharedInputs { train_data, val_data, probe_data, partitions })
}

fn load_regressor(config: &SchedulerConfig) -> Result<Option<UtilityRegressor>> {
    match config {
        SchedulerConfig::Fedspace { regressor, .. } => {
            let path = regressor.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "the fedspace scheduler needs a fitted utility regressor; \
                     run `fit-utility` first and point `scheduler.regressor` at the artifact"
                        .into(),
                )
            })?;
            Ok(Some(UtilityRegressor::load(path)?))
        }
        _ => Ok(None),
    }
}

fn build_scheduler(
    config: &SchedulerConfig,
    num_satellites: usize,
    regressor: Option<&UtilityRegressor>,
    seed: u64,
) -> Result<Box<dyn AggregationScheduler>> {
    match config {
        SchedulerConfig::Sync => Ok(Box::new(SyncScheduler::new(num_satellites))),
        SchedulerConfig::Async => Ok(Box::new(AsyncScheduler)),
        SchedulerConfig::Fedbuff { m } => Ok(Box::new(FedBuffScheduler::new(*m)?)),
        SchedulerConfig::Fedspace { params, .. } => {
            let regressor = regressor.ok_or_else(|| {
                Error::InvalidConfig("fedspace scheduler built without a regressor".into())
            })?;
            if regressor.num_clients() != num_satellites {
                return Err(Error::InvalidConfig(format!(
                    "regressor was fitted for {} clients but the trace has {} satellites; \
                     refit with matching `clients`",
                    regressor.num_clients(),
                    num_satellites
                )));
            }
            Ok(Box::new(FedSpaceScheduler::new(
                *params,
                regressor.clone(),
                derive_seed(seed, STREAM_SCHEDULER),
            )?))
        }
    }
}

/// One point of the accuracy-versus-time curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time_index: usize,
    pub sim_hours: f64,
    pub round: u32,
    pub accuracy: f64,
}

/// Everything a run records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub scheduler: String,
    pub seed: u64,
    pub num_satellites: u32,
    pub t0_seconds: f64,
    pub horizon: usize,
    pub target_accuracy: f64,
    pub curve: Vec<CurvePoint>,
    pub aggregations: Vec<AggregationRecord>,
    /// Bucket `s` counts aggregated gradients of staleness `s`.
    pub staleness_histogram: Vec<u64>,
    pub uploads: u64,
    pub idle_contacts: u64,
    pub first_downloads: u64,
    pub total_contacts: u64,
    pub aggregated_gradients: u64,
    /// Uploads still buffered when the run stopped.
    pub leftover_buffer: u64,
    pub rounds_completed: u32,
    pub final_accuracy: f64,
    pub time_to_target_days: Option<f64>,
    pub config: SimConfig,
}

/// First simulated time (in days) at which the accuracy curve reaches
/// `target`, or `None` if it never does.
pub fn time_to_target(metrics: &Metrics, target: f64) -> Option<f64> {
    metrics
        .curve
        .iter()
        .find(|p| p.accuracy >= target)
        .map(|p| p.time_index as f64 * metrics.t0_seconds / 86_400.0)
}

/// Runs the full experiment described by `config`, resolving the trace, the
/// datasets, and (for FedSpace) the regressor artifact.
pub fn run(config: &SimConfig) -> Result<Metrics> {
    config.validate()?;
    let bundle = resolve_trace(&config.trace)?;
    let shared = resolve_shared(config, &bundle)?;
    let regressor = load_regressor(&config.scheduler)?;
    run_with(config, &bundle.trace, &shared, regressor.as_ref())
}

/// Runs with pre-resolved inputs; used by [`sweep`] to share the trace and
/// per-seed datasets across scheduler variants.
pub fn run_with(
    config: &SimConfig,
    trace: &ConnectivitySets,
    shared: &SharedInputs,
    regressor: Option<&UtilityRegressor>,
) -> Result<Metrics> {
    config.validate()?;
    let k = trace.num_satellites() as usize;
    if shared.partitions.len() != k {
        return Err(Error::InvalidConfig(format!(
            "partitioning covers {} satellites but the trace has {k}",
            shared.partitions.len()
        )));
    }
    let local = config.train.local();
    let mut scheduler = build_scheduler(&config.scheduler, k, regressor, config.seed)?;

    let mut satellites: Vec<SatelliteState> = shared
        .partitions
        .iter()
        .enumerate()
        .map(|(i, part)| {
            SatelliteState::new(
                i as u32,
                part.clone(),
                derive_seed(config.seed, STREAM_SATELLITE_BASE + i as u64),
            )
        })
        .collect::<Result<_>>()?;

    let dim = shared.train_data.model_dim();
    let mut server = ServerState::new(ModelParams::zeros(dim));
    let mut loss_proxy = full_loss(&server.model, &shared.probe_data, 0.0)?;

    let mut metrics = Metrics {
        scheduler: config.scheduler.label(),
        seed: config.seed,
        num_satellites: trace.num_satellites(),
        t0_seconds: trace.t0_seconds(),
        horizon: trace.horizon(),
        target_accuracy: config.eval.target_accuracy,
        curve: Vec::new(),
        aggregations: Vec::new(),
        staleness_histogram: Vec::new(),
        uploads: 0,
        idle_contacts: 0,
        first_downloads: 0,
        total_contacts: 0,
        aggregated_gradients: 0,
        leftover_buffer: 0,
        rounds_completed: 0,
        final_accuracy: 0.0,
        time_to_target_days: None,
        config: config.clone(),
    };

    let initial_accuracy = evaluate(&server.model, &shared.val_data)?;
    metrics.curve.push(CurvePoint {
        time_index: 0,
        sim_hours: 0.0,
        round: 0,
        accuracy: initial_accuracy,
    });
    let mut reached = initial_accuracy >= config.eval.target_accuracy;

    let inputs = StepInputs { data: &shared.train_data, train: &local, alpha: config.train.alpha };
    let horizon = trace.horizon();
    for i in 0..horizon {
        if reached {
            break;
        }
        {
            let world = WorldView {
                time_index: i,
                round: server.round,
                buffer: &server.buffer,
                satellites: &satellites,
                trace,
                loss_proxy,
            };
            scheduler.on_index_start(&world)?;
        }
        let record = server_step(&mut server, &mut satellites, trace.at(i), scheduler.as_mut(), &inputs)?;

        metrics.total_contacts += trace.at(i).len() as u64;
        metrics.uploads += record.uploads.len() as u64;
        metrics.idle_contacts += record.idle.len() as u64;
        metrics.first_downloads += record.first_downloads.len() as u64;
        if let Some(agg) = record.aggregation {
            for &s in &agg.staleness {
                let bucket = s as usize;
                if metrics.staleness_histogram.len() <= bucket {
                    metrics.staleness_histogram.resize(bucket + 1, 0);
                }
                metrics.staleness_histogram[bucket] += 1;
                metrics.aggregated_gradients += 1;
            }
            metrics.aggregations.push(agg);
            let probe = full_loss(&server.model, &shared.probe_data, 0.0)?;
            loss_proxy = LOSS_PROXY_DECAY * loss_proxy + (1.0 - LOSS_PROXY_DECAY) * probe;
        }

        if (i + 1) % config.eval.cadence == 0 || i + 1 == horizon {
            let accuracy = evaluate(&server.model, &shared.val_data)?;
            metrics.curve.push(CurvePoint {
                time_index: i + 1,
                sim_hours: (i + 1) as f64 * trace.t0_seconds() / 3_600.0,
                round: server.round,
                accuracy,
            });
            if accuracy >= config.eval.target_accuracy {
                reached = true;
            }
        }
    }

    metrics.leftover_buffer = server.buffer.len() as u64;
    metrics.rounds_completed = server.round;
    metrics.final_accuracy = metrics.curve.last().expect("curve non-empty").accuracy;
    metrics.time_to_target_days = time_to_target(&metrics, config.eval.target_accuracy);
    Ok(metrics)
}

/// One sweep point: a scheduler variant under a stable label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub scheduler: SchedulerConfig,
}

/// Runs `points x seeds`, sharing the trace across all runs and the datasets
/// across runs with the same seed. Runs are independent and execute in
/// parallel; results come back in `(point, seed)` order.
pub fn sweep(base: &SimConfig, points: &[SweepPoint], seeds: &[u64]) -> Result<Vec<Metrics>> {
    if points.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one point and one seed".into()));
    }
    base.validate()?;
    for p in points {
        p.scheduler.validate()?;
    }
    let bundle = resolve_trace(&base.trace)?;

    let mut shared_per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        shared_per_seed.push(resolve_shared(&cfg, &bundle)?);
    }
    let mut regressors: Vec<Option<UtilityRegressor>> = Vec::with_capacity(points.len());
    for p in points {
        regressors.push(load_regressor(&p.scheduler)?);
    }

    let combos: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..seeds.len()).map(move |s| (p, s)))
        .collect();
    exec::try_indexed_map(combos.len(), |i| {
        let (p, s) = combos[i];
        let mut cfg = base.clone();
        cfg.scheduler = points[p].scheduler.clone();
        cfg.seed = seeds[s];
        let mut metrics =
            run_with(&cfg, &bundle.trace, &shared_per_seed[s], regressors[p].as_ref())?;
        metrics.scheduler = points[p].label.clone();
        Ok(metrics)
    })
}

/// Serializes metrics as pretty JSON (stable field order, so byte-identical
/// across identical runs).
pub fn metrics_to_json(metrics: &Metrics) -> Result<String> {
    serde_json::to_string_pretty(metrics)
        .map_err(|e| Error::Artifact(format!("serialize metrics: {e}")))
}

pub fn save_metrics(metrics: &Metrics, path: &Path) -> Result<()> {
    std::fs::write(path, metrics_to_json(metrics)?)?;
    Ok(())
}

pub fn load_metrics(path: &Path) -> Result<Metrics> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Artifact(format!("parse {}: {e}", path.display())))
}

/// Flat CSV of the accuracy curve.
pub fn curve_to_csv(metrics: &Metrics) -> String {
    let mut out = String::from("time_index,sim_hours,round,accuracy\n");
    for p in &metrics.curve {
        let _ = writeln!(out, "{},{},{},{}", p.time_index, p.sim_hours, p.round, p.accuracy);
    }
    out
}
