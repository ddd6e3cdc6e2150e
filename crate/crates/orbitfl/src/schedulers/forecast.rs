//! Exact staleness forecasting over a scheduling window.
//!
//! Connectivity is deterministic, so given a candidate aggregation schedule
//! the server can replay its own bookkeeping (uploads, buffer, round counter,
//! idle contacts) forward without touching any model math. The forecast here
//! must agree entry-for-entry with an event-driven replay of the full state
//! machine over the same window; the integration tests enforce that.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flcore::WorldView;
use crate::orbits::ConnectivityWindow;
use crate::SatId;

/// Binary aggregation plan `[a^i, ..., a^{i+I0-1}]` anchored at `start_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleVector {
    bits: Vec<bool>,
    start_index: usize,
}

impl ScheduleVector {
    pub fn new(bits: Vec<bool>, start_index: usize) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidConfig("schedule must cover at least one index".into()));
        }
        Ok(Self { bits, start_index })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    /// Number of scheduled aggregations.
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Per-satellite state the forecast starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SatSnapshot {
    /// Round of the base model last downloaded, if any.
    pub base_round: Option<u32>,
    /// Whether a trained update is waiting for the next contact.
    pub pending: bool,
}

/// Server-side state at the start of the window: round counter, per-satellite
/// snapshots, and the not-yet-aggregated buffer as `(satellite, staleness at
/// receipt)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForecastSnapshot {
    pub round: u32,
    pub satellites: Vec<SatSnapshot>,
    pub buffered: Vec<(SatId, u32)>,
}

impl ForecastSnapshot {
    /// A cold-start snapshot: no satellite has ever contacted the server.
    pub fn cold_start(num_satellites: usize) -> Self {
        Self {
            round: 0,
            satellites: vec![SatSnapshot { base_round: None, pending: false }; num_satellites],
            buffered: Vec::new(),
        }
    }

    /// Captures the live server/satellite state mid-run.
    pub fn capture(world: &WorldView<'_>) -> Self {
        Self {
            round: world.round,
            satellites: world
                .satellites
                .iter()
                .map(|s| SatSnapshot { base_round: s.base_round(), pending: s.has_pending() })
                .collect(),
            buffered: world.buffer.iter().map(|e| (e.satellite_id, e.staleness)).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (k, s) in self.satellites.iter().enumerate() {
            if s.pending && s.base_round.is_none() {
                return Err(Error::InvalidData(format!(
                    "satellite {k} pending without a base model"
                )));
            }
            if let Some(b) = s.base_round {
                if b > self.round {
                    return Err(Error::InvalidData(format!("satellite {k} ahead of the server")));
                }
            }
        }
        for &(k, _) in &self.buffered {
            if k as usize >= self.satellites.len() {
                return Err(Error::UnknownSatellite(k));
            }
        }
        Ok(())
    }
}

/// Staleness vector for one forecast model update: entry `k` is the staleness
/// of satellite `k`'s freshest buffered update, or -1 when the satellite does
/// not contribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StalenessVector {
    pub entries: Vec<i32>,
    /// Absolute time index of the update this vector describes.
    pub agg_index: usize,
}

/// One forecast model update: the exact buffered `(satellite, staleness)`
/// entries it would aggregate. A satellite can appear twice when none of the
/// scheduled aggregations fell between two of its contacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForecastAggregation {
    pub agg_index: usize,
    pub entries: Vec<(SatId, u32)>,
}

impl ForecastAggregation {
    /// Projects the entry list onto the per-satellite staleness vector,
    /// keeping the freshest entry for a satellite that appears twice.
    pub fn staleness_vector(&self, num_satellites: usize) -> StalenessVector {
        let mut entries = vec![-1i32; num_satellites];
        for &(k, s) in &self.entries {
            let slot = &mut entries[k as usize];
            if *slot < 0 || (s as i32) < *slot {
                *slot = s as i32;
            }
        }
        StalenessVector { entries, agg_index: self.agg_index }
    }
}

/// Forecast bookkeeping for one schedule over one window.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Forecast {
    /// Model updates in time order; scheduled indices with an empty buffer
    /// produce no update and therefore no entry here.
    pub aggregations: Vec<ForecastAggregation>,
    /// `(time index, satellite)` contacts that arrive with nothing to upload
    /// after a previous download.
    pub idle_events: Vec<(usize, SatId)>,
}

impl Forecast {
    pub fn idle_count(&self) -> usize {
        self.idle_events.len()
    }
}

/// Replays the server bookkeeping over `window` under `schedule`, starting
/// from `snapshot`. Per contact: deliver any pending update (staleness is the
/// current round minus the update's base round), then aggregate if scheduled
/// and the buffer is non-empty, then adopt-and-retrain whenever the
/// post-aggregation round is newer than the satellite's base.
pub fn forecast_staleness(
    schedule: &ScheduleVector,
    window: &ConnectivityWindow<'_>,
    snapshot: &ForecastSnapshot,
) -> Result<Forecast> {
    if window.len() != schedule.len() {
        return Err(Error::InvalidConfig(format!(
            "window length {} != schedule length {}",
            window.len(),
            schedule.len()
        )));
    }
    snapshot.validate()?;

    let mut round = snapshot.round;
    let mut sats = snapshot.satellites.clone();
    let mut buffer = snapshot.buffered.clone();
    let mut out = Forecast::default();

    for offset in 0..schedule.len() {
        let abs_index = schedule.start_index() + offset;
        let connected = window.at(offset);

        for &k in connected {
            let sat = sats
                .get_mut(k as usize)
                .ok_or(Error::UnknownSatellite(k))?;
            if sat.pending {
                let base = sat.base_round.expect("pending implies base");
                buffer.push((k, round - base));
                sat.pending = false;
            } else if sat.base_round.is_some() {
                out.idle_events.push((abs_index, k));
            }
        }

        if schedule.bits()[offset] && !buffer.is_empty() {
            out.aggregations
                .push(ForecastAggregation { agg_index: abs_index, entries: buffer.clone() });
            buffer.clear();
            round += 1;
        }

        for &k in connected {
            let sat = &mut sats[k as usize];
            match sat.base_round {
                Some(b) if round <= b => {}
                _ => {
                    sat.base_round = Some(round);
                    sat.pending = true;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::ConnectivitySets;

    fn trace(sets: Vec<Vec<SatId>>, k: u32) -> ConnectivitySets {
        ConnectivitySets::new(sets, k, 900.0).unwrap()
    }

    fn schedule(bits: &[u8], start: usize) -> ScheduleVector {
        ScheduleVector::new(bits.iter().map(|&b| b != 0).collect(), start).unwrap()
    }

    #[test]
    fn all_zero_schedule_yields_no_updates_and_idles_served_satellites() {
        // One satellite contacting every index: download at 0, upload at 1,
        // then idle forever since no aggregation ever happens.
        let t = trace(vec![vec![0]; 6], 1);
        let fc = forecast_staleness(
            &schedule(&[0, 0, 0, 0, 0, 0], 0),
            &t.window(0, 6),
            &ForecastSnapshot::cold_start(1),
        )
        .unwrap();
        assert!(fc.aggregations.is_empty());
        assert_eq!(fc.idle_events, vec![(2, 0), (3, 0), (4, 0), (5, 0)]);
    }

    #[test]
    fn always_on_schedule_keeps_single_satellite_fresh() {
        // Against an every-index contact pattern with every index scheduled,
        // the aggregation at the download index happens before the download,
        // so each delivered update is exactly one download behind: staleness
        // round_at_receipt - base is 0 every time.
        let t = trace(vec![vec![0]; 6], 1);
        let fc = forecast_staleness(
            &schedule(&[1, 1, 1, 1, 1, 1], 0),
            &t.window(0, 6),
            &ForecastSnapshot::cold_start(1),
        )
        .unwrap();
        let stalenesses: Vec<Vec<(SatId, u32)>> =
            fc.aggregations.iter().map(|a| a.entries.clone()).collect();
        assert_eq!(
            stalenesses,
            vec![vec![(0, 0)]; 5],
            "uploads at indices 1..=5, all fresh"
        );
        assert_eq!(
            fc.aggregations.iter().map(|a| a.agg_index).collect::<Vec<_>>(),
            vec![1, 2, 3, 4, 5]
        );
        assert!(fc.idle_events.is_empty());
    }

    #[test]
    fn three_satellite_window_matches_hand_replay() {
        // SA0: {0,2,4}, SA1: {1,3}, SA2: {0,4}; schedule [0,0,1,0,1].
        let t = trace(vec![vec![0, 2], vec![1], vec![0], vec![1], vec![0, 2]], 3);
        let fc = forecast_staleness(
            &schedule(&[0, 0, 1, 0, 1], 0),
            &t.window(0, 5),
            &ForecastSnapshot::cold_start(3),
        )
        .unwrap();
        assert_eq!(fc.aggregations.len(), 2);
        assert_eq!(fc.aggregations[0].agg_index, 2);
        assert_eq!(fc.aggregations[0].entries, vec![(0, 0)]);
        assert_eq!(
            fc.aggregations[0].staleness_vector(3).entries,
            vec![0, -1, -1]
        );
        assert_eq!(fc.aggregations[1].agg_index, 4);
        assert_eq!(fc.aggregations[1].entries, vec![(1, 1), (0, 0), (2, 1)]);
        assert_eq!(fc.aggregations[1].staleness_vector(3).entries, vec![0, 1, 1]);
        assert!(fc.idle_events.is_empty());
    }

    #[test]
    fn buffered_snapshot_entries_join_the_first_update() {
        let t = trace(vec![vec![], vec![]], 2);
        let snapshot = ForecastSnapshot {
            round: 5,
            satellites: vec![
                SatSnapshot { base_round: Some(4), pending: false },
                SatSnapshot { base_round: Some(5), pending: false },
            ],
            buffered: vec![(1, 2)],
        };
        let fc = forecast_staleness(&schedule(&[1, 0], 7), &t.window(0, 2), &snapshot).unwrap();
        assert_eq!(fc.aggregations.len(), 1);
        assert_eq!(fc.aggregations[0].agg_index, 7);
        assert_eq!(fc.aggregations[0].entries, vec![(1, 2)]);
    }

    #[test]
    fn accrued_staleness_carries_into_the_window() {
        // A pending update from base round 3 delivered at round 5 arrives
        // with staleness 2 even before any in-window aggregation.
        let t = trace(vec![vec![0]], 1);
        let snapshot = ForecastSnapshot {
            round: 5,
            satellites: vec![SatSnapshot { base_round: Some(3), pending: true }],
            buffered: vec![],
        };
        let fc = forecast_staleness(&schedule(&[1], 0), &t.window(0, 1), &snapshot).unwrap();
        assert_eq!(fc.aggregations[0].entries, vec![(0, 2)]);
    }

    #[test]
    fn scheduled_empty_buffer_produces_no_update() {
        let t = trace(vec![vec![], vec![0]], 1);
        let fc = forecast_staleness(
            &schedule(&[1, 1], 0),
            &t.window(0, 2),
            &ForecastSnapshot::cold_start(1),
        )
        .unwrap();
        // Index 0 has nothing to aggregate; index 1 sees the first download
        // only, so still nothing.
        assert!(fc.aggregations.is_empty());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let t = trace(vec![vec![0]], 1);
        let err = forecast_staleness(
            &schedule(&[1, 1], 0),
            &t.window(0, 1),
            &ForecastSnapshot::cold_start(1),
        );
        assert!(err.is_err());
    }

    #[test]
    fn inconsistent_snapshot_is_rejected() {
        let t = trace(vec![vec![0]], 1);
        let snapshot = ForecastSnapshot {
            round: 0,
            satellites: vec![SatSnapshot { base_round: None, pending: true }],
            buffered: vec![],
        };
        assert!(forecast_staleness(&schedule(&[1], 0), &t.window(0, 1), &snapshot).is_err());
    }
}
