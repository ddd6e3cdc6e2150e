//! Aggregation-decision policies.
//!
//! Three baselines decide from the contributor set alone: synchronous waits
//! for every satellite, asynchronous fires on any upload, FedBuff fires when
//! the buffer holds updates from at least `M` distinct satellites. FedSpace
//! plans a whole window at a time: it forecasts the staleness bookkeeping of
//! candidate schedules against the known future connectivity and picks the
//! schedule whose predicted total loss reduction is largest.

mod forecast;
mod forest;
mod search;
mod utility;

pub use forecast::{
    forecast_staleness, Forecast, ForecastAggregation, ForecastSnapshot, SatSnapshot,
    ScheduleVector, StalenessVector,
};
pub use forest::{ForestParams, RandomForest};
pub use search::{
    evaluate_schedule, exhaustive_search, infer_agg_band, random_search, FedSpaceConfig,
    SearchOutcome,
};
pub use utility::{
    feature_len, featurize, fit_from_config, fit_utility_regressor, generate_utility_samples,
    pretrain_models, save_samples_csv, utility_delta_f, FittedUtility, LogisticSourceTask,
    SourceTask, SourceTaskConfig, UtilityFitConfig, UtilityGenConfig, UtilityRegressor,
    UtilitySample,
};

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flcore::{AggregationScheduler, DecisionView, WorldView};
use crate::SatId;

/// Synchronous-FL indicator: aggregate only when every satellite has
/// contributed since the last update.
pub fn sync_indicator(contributors: &BTreeSet<SatId>, num_satellites: usize) -> bool {
    contributors.len() == num_satellites
}

/// Asynchronous-FL indicator: aggregate whenever anything is buffered.
pub fn async_indicator(contributors: &BTreeSet<SatId>) -> bool {
    !contributors.is_empty()
}

/// Buffered-FL indicator: aggregate once at least `m` distinct satellites
/// have contributed.
pub fn fedbuff_indicator(contributors: &BTreeSet<SatId>, m: usize) -> Result<bool> {
    if m == 0 {
        return Err(Error::InvalidConfig("fedbuff buffer threshold must be at least 1".into()));
    }
    Ok(contributors.len() >= m)
}

pub struct SyncScheduler {
    num_satellites: usize,
}

impl SyncScheduler {
    pub fn new(num_satellites: usize) -> Self {
        Self { num_satellites }
    }
}

impl AggregationScheduler for SyncScheduler {
    fn decide(&mut self, view: &DecisionView<'_>) -> bool {
        sync_indicator(view.contributors, self.num_satellites)
    }
}

pub struct AsyncScheduler;

impl AggregationScheduler for AsyncScheduler {
    fn decide(&mut self, view: &DecisionView<'_>) -> bool {
        async_indicator(view.contributors)
    }
}

pub struct FedBuffScheduler {
    m: usize,
}

impl FedBuffScheduler {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidConfig("fedbuff buffer threshold must be at least 1".into()));
        }
        Ok(Self { m })
    }
}

impl AggregationScheduler for FedBuffScheduler {
    fn decide(&mut self, view: &DecisionView<'_>) -> bool {
        view.contributors.len() >= self.m
    }
}

/// Serves a precomputed per-index bit pattern; indices past the pattern fall
/// back to 0. Used to replay fixed schedules in tests and oracles.
pub struct FixedSchedule {
    bits: Vec<bool>,
}

impl FixedSchedule {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }
}

impl AggregationScheduler for FixedSchedule {
    fn decide(&mut self, view: &DecisionView<'_>) -> bool {
        self.bits.get(view.time_index).copied().unwrap_or(false)
    }
}

/// The two-phase FedSpace scheduler: a regressor fitted offline predicts the
/// utility of a model update from its staleness histogram and the current
/// training status; at every window boundary a random search over schedule
/// vectors maximizes the predicted utility sum for the next `I0` indices, and
/// the winning bits are served until the next boundary.
pub struct FedSpaceScheduler {
    cfg: FedSpaceConfig,
    regressor: UtilityRegressor,
    rng: ChaCha8Rng,
    plan: Vec<bool>,
    plan_start: usize,
    planned: bool,
}

impl FedSpaceScheduler {
    pub fn new(cfg: FedSpaceConfig, regressor: UtilityRegressor, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        cfg.validate()?;
        if cfg.s_max != regressor.s_max() {
            return Err(Error::InvalidConfig(format!(
                "configured s_max {} does not match the regressor artifact ({})",
                cfg.s_max,
                regressor.s_max()
            )));
        }
        Ok(Self {
            cfg,
            regressor,
            rng: ChaCha8Rng::seed_from_u64(seed),
            plan: Vec::new(),
            plan_start: 0,
            planned: false,
        })
    }

    /// The active plan, for inspection.
    pub fn current_plan(&self) -> (&[bool], usize) {
        (&self.plan, self.plan_start)
    }
}

impl AggregationScheduler for FedSpaceScheduler {
    fn on_index_start(&mut self, world: &WorldView<'_>) -> Result<()> {
        if self.planned && world.time_index % self.cfg.horizon_i0 != 0 {
            return Ok(());
        }
        if world.satellites.len() != self.regressor.num_clients() {
            return Err(Error::InvalidConfig(format!(
                "regressor was fitted for {} clients but the run has {} satellites",
                self.regressor.num_clients(),
                world.satellites.len()
            )));
        }
        let snapshot = ForecastSnapshot::capture(world);
        let window = world.trace.window(world.time_index, self.cfg.horizon_i0);
        if self.cfg.infer_band && !self.planned {
            let (lo, hi) =
                infer_agg_band(&self.regressor, &window, &snapshot, world.loss_proxy)?;
            self.cfg.n_min = lo;
            self.cfg.n_max = hi;
        }
        let outcome = random_search(
            &self.regressor,
            &window,
            &snapshot,
            world.loss_proxy,
            &self.cfg,
            &mut self.rng,
        )?;
        self.plan = outcome.schedule.bits().to_vec();
        self.plan_start = world.time_index;
        self.planned = true;
        Ok(())
    }

    fn decide(&mut self, view: &DecisionView<'_>) -> bool {
        view.time_index
            .checked_sub(self.plan_start)
            .and_then(|offset| self.plan.get(offset))
            .copied()
            .unwrap_or(false)
    }
}
