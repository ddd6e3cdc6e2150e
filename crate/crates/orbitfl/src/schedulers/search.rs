//! Schedule optimization: random search (and exhaustive enumeration, for
//! oracles and small windows) over binary aggregation vectors, scoring each
//! candidate by the predicted total loss reduction of the model updates it
//! would trigger.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::orbits::ConnectivityWindow;
use crate::schedulers::forecast::{forecast_staleness, ForecastSnapshot, ScheduleVector};
use crate::schedulers::utility::{featurize, UtilityRegressor};
use crate::derive_seed;

/// FedSpace scheduling parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSpaceConfig {
    /// Scheduling period: a new plan is computed every `horizon_i0` indices.
    #[serde(default = "default_i0")]
    pub horizon_i0: usize,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Random-search trials per planning step.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Largest staleness the utility featurization distinguishes.
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    /// Derive the aggregation-count band from the regressor on the first
    /// window instead of using `n_min`/`n_max` directly.
    #[serde(default)]
    pub infer_band: bool,
}

fn default_i0() -> usize {
    24
}
fn default_n_min() -> usize {
    4
}
fn default_n_max() -> usize {
    8
}
fn default_trials() -> usize {
    5000
}
fn default_s_max() -> usize {
    8
}

impl Default for FedSpaceConfig {
    fn default() -> Self {
        Self {
            horizon_i0: default_i0(),
            n_min: default_n_min(),
            n_max: default_n_max(),
            trials: default_trials(),
            s_max: default_s_max(),
            infer_band: false,
        }
    }
}

impl FedSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_i0 == 0 {
            return Err(Error::InvalidConfig("horizon_i0 must be at least 1".into()));
        }
        if !(1 <= self.n_min && self.n_min <= self.n_max) {
            return Err(Error::InvalidConfig("need 1 <= n_min <= n_max".into()));
        }
        if self.n_max > self.horizon_i0 {
            return Err(Error::InvalidConfig(format!(
                "n_max {} exceeds the window length {}",
                self.n_max, self.horizon_i0
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// The winning schedule and its predicted utility.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub schedule: ScheduleVector,
    pub objective: f64,
}

struct Candidate {
    objective: f64,
    ones: usize,
    bits: Vec<bool>,
}

/// Strictly better: higher objective, then fewer aggregations, then
/// lexicographically smaller bits. A total order, so folding over candidates
/// in any grouping yields the same winner.
fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.objective != b.objective {
        return a.objective > b.objective;
    }
    if a.ones != b.ones {
        return a.ones < b.ones;
    }
    a.bits < b.bits
}

/// Sum of predicted loss reductions over the model updates this schedule
/// would actually produce (scheduled indices that find an empty buffer update
/// nothing and contribute nothing).
pub fn evaluate_schedule(
    schedule: &ScheduleVector,
    window: &ConnectivityWindow<'_>,
    snapshot: &ForecastSnapshot,
    regressor: &UtilityRegressor,
    training_status: f64,
) -> Result<f64> {
    let forecast = forecast_staleness(schedule, window, snapshot)?;
    let k = snapshot.satellites.len();
    let mut total = 0.0;
    for agg in &forecast.aggregations {
        let vector = agg.staleness_vector(k);
        let capped: Vec<i32> =
            vector.entries.iter().map(|&e| e.min(regressor.s_max() as i32)).collect();
        let features = featurize(&capped, regressor.s_max(), training_status)?;
        total += regressor.predict(&features)?;
    }
    Ok(total)
}

fn candidate(
    bits: Vec<bool>,
    start: usize,
    window: &ConnectivityWindow<'_>,
    snapshot: &ForecastSnapshot,
    regressor: &UtilityRegressor,
    training_status: f64,
) -> Result<Candidate> {
    let schedule = ScheduleVector::new(bits, start)?;
    let objective = evaluate_schedule(&schedule, window, snapshot, regressor, training_status)?;
    let ones = schedule.ones();
    Ok(Candidate { objective, ones, bits: schedule.bits().to_vec() })
}

fn fold_best(candidates: Vec<Candidate>) -> Option<Candidate> {
    candidates.into_iter().fold(None, |best, c| match best {
        None => Some(c),
        Some(b) => Some(if better(&c, &b) { c } else { b }),
    })
}

/// Random search: each trial places a uniformly drawn number of aggregations
/// (within the configured band) at uniformly random distinct positions, and
/// the best-scoring candidate wins. Deterministic given the RNG state; trial
/// evaluation parallelizes with a fixed-order reduction.
pub fn random_search(
    regressor: &UtilityRegressor,
    window: &ConnectivityWindow<'_>,
    snapshot: &ForecastSnapshot,
    training_status: f64,
    cfg: &FedSpaceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SearchOutcome> {
    use rand::SeedableRng;
    cfg.validate()?;
    if window.len() != cfg.horizon_i0 {
        return Err(Error::InvalidConfig(format!(
            "window length {} != horizon_i0 {}",
            window.len(),
            cfg.horizon_i0
        )));
    }
    let master: u64 = rng.gen();
    let start = window.start();
    let candidates = exec::try_indexed_map(cfg.trials, |trial| {
        let mut trial_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, trial as u64));
        let n_agg = trial_rng.gen_range(cfg.n_min..=cfg.n_max);
        let mut bits = vec![false; cfg.horizon_i0];
        for pos in rand::seq::index::sample(&mut trial_rng, cfg.horizon_i0, n_agg) {
            bits[pos] = true;
        }
        candidate(bits, start, window, snapshot, regressor, training_status)
    })?;
    let best = fold_best(candidates).expect("at least one trial");
    Ok(SearchOutcome {
        schedule: ScheduleVector::new(best.bits, start)?,
        objective: best.objective,
    })
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recurse(n: usize, k: usize, next: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for pos in next..n {
            if n - pos < k - current.len() {
                break;
            }
            current.push(pos);
            recurse(n, k, pos + 1, current, out);
            current.pop();
        }
    }
    recurse(n, k, 0, &mut current, &mut out);
    out
}

const EXHAUSTIVE_CAP: usize = 2_000_000;

/// Evaluates every schedule whose aggregation count is within the band, with
/// the same scoring and tie-breaking as [`random_search`]. Only usable for
/// small windows; the candidate count is capped.
pub fn exhaustive_search(
    regressor: &UtilityRegressor,
    window: &ConnectivityWindow<'_>,
    snapshot: &ForecastSnapshot,
    training_status: f64,
    cfg: &FedSpaceConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if window.len() != cfg.horizon_i0 {
        return Err(Error::InvalidConfig(format!(
            "window length {} != horizon_i0 {}",
            window.len(),
            cfg.horizon_i0
        )));
    }
    let mut all_bits: Vec<Vec<bool>> = Vec::new();
    for n in cfg.n_min..=cfg.n_max {
        for positions in combinations(cfg.horizon_i0, n) {
            let mut bits = vec![false; cfg.horizon_i0];
            for pos in positions {
                bits[pos] = true;
            }
            all_bits.push(bits);
        }
        if all_bits.len() > EXHAUSTIVE_CAP {
            return Err(Error::InvalidConfig(format!(
                "exhaustive candidate space exceeds {EXHAUSTIVE_CAP}"
            )));
        }
    }
    let start = window.start();
    let candidates = exec::try_indexed_map(all_bits.len(), |i| {
        candidate(all_bits[i].clone(), start, window, snapshot, regressor, training_status)
    })?;
    let best = fold_best(candidates)
        .ok_or_else(|| Error::InvalidConfig("empty candidate space".into()))?;
    Ok(SearchOutcome {
        schedule: ScheduleVector::new(best.bits, start)?,
        objective: best.objective,
    })
}

/// Scans evenly spread schedules with `n = 1..=I0` aggregations and returns
/// the band of counts whose predicted utility is within 90% of the best; used
/// to derive `n_min`/`n_max` from the regressor itself.
pub fn infer_agg_band(
    regressor: &UtilityRegressor,
    window: &ConnectivityWindow<'_>,
    snapshot: &ForecastSnapshot,
    training_status: f64,
) -> Result<(usize, usize)> {
    let i0 = window.len();
    if i0 == 0 {
        return Err(Error::InvalidConfig("empty window".into()));
    }
    let mut utilities = Vec::with_capacity(i0);
    for n in 1..=i0 {
        let mut bits = vec![false; i0];
        for j in 0..n {
            bits[j * i0 / n] = true;
        }
        let schedule = ScheduleVector::new(bits, window.start())?;
        utilities.push(evaluate_schedule(&schedule, window, snapshot, regressor, training_status)?);
    }
    let best = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = if best > 0.0 { 0.9 * best } else { best };
    let qualifying: Vec<usize> = (1..=i0).filter(|&n| utilities[n - 1] >= threshold).collect();
    let lo = *qualifying.first().expect("best qualifies");
    let hi = *qualifying.last().expect("best qualifies");
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::ConnectivitySets;
    use crate::schedulers::utility::{fit_utility_regressor, UtilitySample};
    use crate::schedulers::forest::ForestParams;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// A regressor trained on constant targets predicts that constant for
    /// every input.
    fn constant_regressor(value: f64, s_max: usize, k: usize, seed: u64) -> UtilityRegressor {
        let mut r = rng(seed);
        let samples: Vec<UtilitySample> = (0..60)
            .map(|_| {
                let entries: Vec<i32> = (0..k).map(|_| r.gen_range(-1..=s_max as i32)).collect();
                UtilitySample {
                    features: featurize(&entries, s_max, r.gen_range(0.0..2.0)).unwrap(),
                    delta_f: value,
                }
            })
            .collect();
        fit_utility_regressor(&samples, &ForestParams::default(), 3).unwrap()
    }

    fn dense_trace(k: u32, horizon: usize) -> ConnectivitySets {
        let everyone: Vec<u32> = (0..k).collect();
        ConnectivitySets::new(vec![everyone; horizon], k, 900.0).unwrap()
    }

    #[test]
    fn constant_positive_regressor_saturates_aggregations() {
        let k = 3;
        let reg = constant_regressor(1.0, 4, k, 1);
        let trace = dense_trace(k as u32, 10);
        let cfg = FedSpaceConfig {
            horizon_i0: 10,
            n_min: 2,
            n_max: 5,
            trials: 300,
            s_max: 4,
            infer_band: false,
        };
        let out = random_search(
            &reg,
            &trace.window(0, 10),
            &ForecastSnapshot::cold_start(k),
            0.5,
            &cfg,
            &mut rng(4),
        )
        .unwrap();
        // With everyone contacting every index, every scheduled index after
        // the first produces an update worth 1, so more aggregations always
        // win: n_max of them.
        assert_eq!(out.schedule.ones(), 5);
    }

    #[test]
    fn zero_regressor_tie_breaks_to_sparsest_lexicographic_schedule() {
        let k = 3;
        let reg = constant_regressor(0.0, 4, k, 2);
        let trace = dense_trace(k as u32, 8);
        let cfg = FedSpaceConfig {
            horizon_i0: 8,
            n_min: 2,
            n_max: 4,
            trials: 200,
            s_max: 4,
            infer_band: false,
        };
        let snapshot = ForecastSnapshot::cold_start(k);
        let out = exhaustive_search(&reg, &trace.window(0, 8), &snapshot, 0.5, &cfg).unwrap();
        assert_eq!(out.objective, 0.0);
        assert_eq!(out.schedule.ones(), 2);
        // Lexicographically smallest two-ones vector: ones at the tail.
        let expected: Vec<bool> =
            (0..8).map(|i| i >= 6).collect();
        assert_eq!(out.schedule.bits(), expected.as_slice());
        // Random search ties at zero too and lands in the band.
        let rand_out =
            random_search(&reg, &trace.window(0, 8), &snapshot, 0.5, &cfg, &mut rng(5)).unwrap();
        assert_eq!(rand_out.objective, 0.0);
        assert_eq!(rand_out.schedule.ones(), 2);
    }

    #[test]
    fn empty_window_scores_zero_everywhere() {
        let k = 4;
        let reg = constant_regressor(2.0, 4, k, 3);
        let trace = ConnectivitySets::new(vec![vec![]; 6], k as u32, 900.0).unwrap();
        let cfg = FedSpaceConfig {
            horizon_i0: 6,
            n_min: 1,
            n_max: 3,
            trials: 100,
            s_max: 4,
            infer_band: false,
        };
        let out = random_search(
            &reg,
            &trace.window(0, 6),
            &ForecastSnapshot::cold_start(k),
            0.5,
            &cfg,
            &mut rng(6),
        )
        .unwrap();
        // No contacts mean no updates regardless of the schedule.
        assert_eq!(out.objective, 0.0);
        assert_eq!(out.schedule.ones(), 1);
    }

    #[test]
    fn exhaustive_matches_a_naive_enumeration_oracle() {
        use crate::schedulers::forecast::forecast_staleness;
        let k = 4;
        // Non-constant regressor: reward contributor count.
        let mut r = rng(31);
        let s_max = 4usize;
        let samples: Vec<UtilitySample> = (0..300)
            .map(|_| {
                let entries: Vec<i32> = (0..k).map(|_| r.gen_range(-1..=s_max as i32)).collect();
                let contributors = entries.iter().filter(|&&e| e >= 0).count() as f64;
                let stale_sum: i32 = entries.iter().filter(|&&e| e > 0).sum();
                UtilitySample {
                    features: featurize(&entries, s_max, r.gen_range(0.0..1.0)).unwrap(),
                    delta_f: contributors - 0.3 * stale_sum as f64,
                }
            })
            .collect();
        let reg = fit_utility_regressor(&samples, &ForestParams::default(), 7).unwrap();

        let mut sets = Vec::new();
        for i in 0..10usize {
            let connected: Vec<u32> = (0..k as u32).filter(|&s| (i + s as usize) % 3 != 0).collect();
            sets.push(connected);
        }
        let trace = ConnectivitySets::new(sets, k as u32, 900.0).unwrap();
        let snapshot = ForecastSnapshot::cold_start(k);
        let cfg = FedSpaceConfig {
            horizon_i0: 10,
            n_min: 2,
            n_max: 4,
            trials: 1,
            s_max,
            infer_band: false,
        };
        let window = trace.window(0, 10);
        let fast = exhaustive_search(&reg, &window, &snapshot, 0.8, &cfg).unwrap();

        // Plain nested-loop oracle over the same candidate band.
        let mut best_bits: Option<Vec<bool>> = None;
        let mut best_obj = f64::NEG_INFINITY;
        for mask in 0u32..(1 << 10) {
            let ones = mask.count_ones() as usize;
            if !(2..=4).contains(&ones) {
                continue;
            }
            let bits: Vec<bool> = (0..10).map(|b| mask >> b & 1 == 1).collect();
            let schedule = ScheduleVector::new(bits.clone(), 0).unwrap();
            let fc = forecast_staleness(&schedule, &window, &snapshot).unwrap();
            let mut obj = 0.0;
            for agg in &fc.aggregations {
                let features =
                    featurize(&agg.staleness_vector(k).entries, s_max, 0.8).unwrap();
                obj += reg.predict(&features).unwrap();
            }
            let replace = match best_bits {
                None => true,
                Some(ref b) => {
                    obj > best_obj
                        || (obj == best_obj && ones < b.iter().filter(|&&x| x).count())
                        || (obj == best_obj
                            && ones == b.iter().filter(|&&x| x).count()
                            && bits < *b)
                }
            };
            if replace {
                best_obj = obj;
                best_bits = Some(bits);
            }
        }
        assert_eq!(fast.objective, best_obj);
        assert_eq!(fast.schedule.bits(), best_bits.unwrap().as_slice());
    }

    #[test]
    fn running_best_is_monotone_in_trial_count() {
        let k = 4;
        let reg = constant_regressor(1.0, 4, k, 8);
        let trace = dense_trace(k as u32, 12);
        let snapshot = ForecastSnapshot::cold_start(k);
        let mut prev = f64::NEG_INFINITY;
        for trials in [1usize, 4, 16, 64] {
            let cfg = FedSpaceConfig {
                horizon_i0: 12,
                n_min: 1,
                n_max: 6,
                trials,
                s_max: 4,
                infer_band: false,
            };
            // Same master seed: trial t draws the same candidate regardless
            // of the total trial count, so the running max is a prefix max.
            let out =
                random_search(&reg, &trace.window(0, 12), &snapshot, 0.5, &cfg, &mut rng(17))
                    .unwrap();
            assert!(out.objective >= prev);
            prev = out.objective;
        }
    }

    #[test]
    fn band_inference_prefers_saturating_counts_for_positive_utilities() {
        let k = 3;
        let reg = constant_regressor(1.0, 4, k, 9);
        let trace = dense_trace(k as u32, 12);
        let snapshot = ForecastSnapshot::cold_start(k);
        let (lo, hi) = infer_agg_band(&reg, &trace.window(0, 12), &snapshot, 0.5).unwrap();
        assert!(lo >= 1 && hi <= 12 && lo <= hi);
        // Every aggregation is worth +1 here, so the top band must include
        // the maximum count.
        assert_eq!(hi, 12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = FedSpaceConfig { n_max: 30, horizon_i0: 24, ..FedSpaceConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = FedSpaceConfig { n_min: 0, ..FedSpaceConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = FedSpaceConfig { trials: 0, ..FedSpaceConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
