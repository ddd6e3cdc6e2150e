//! Aggregates metrics files into a per-scheme comparison table with
//! time-to-target medians, speedups against a baseline scheme, and
//! staleness/idleness histogram exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use orbitfl::sim::{load_metrics, Metrics};
use orbitfl::{Error, Result};

pub struct SchemeRow {
    pub scheme: String,
    pub runs: usize,
    /// Lower median of per-run time-to-target; `None` when the median run
    /// never reached the target.
    pub median_days: Option<f64>,
    /// `median / baseline_median`, when both exist.
    pub gain: Option<f64>,
    pub staleness_histogram: Vec<u64>,
    pub idle_contacts: u64,
}

pub struct Summary {
    pub rows: Vec<SchemeRow>,
    pub baseline: String,
    pub table: String,
}

/// Lower median with "not reached" ordered after every finite time.
pub fn median_days(mut times: Vec<Option<f64>>) -> Option<f64> {
    times.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.partial_cmp(y).expect("finite times"),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    times[(times.len() - 1) / 2]
}

pub fn build(metrics_dir: &Path, baseline: &str) -> Result<Summary> {
    let mut groups: BTreeMap<String, Vec<Metrics>> = BTreeMap::new();
    let mut entries: Vec<_> = std::fs::read_dir(metrics_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    for path in entries {
        match load_metrics(&path) {
            Ok(m) => groups.entry(m.scheduler.clone()).or_default().push(m),
            // Directories can hold unrelated JSON; skip quietly.
            Err(Error::Artifact(_)) => continue,
            Err(e) => return Err(e),
        }
    }

    let mut rows: Vec<SchemeRow> = groups
        .into_iter()
        .map(|(scheme, runs)| {
            let times: Vec<Option<f64>> = runs.iter().map(|m| m.time_to_target_days).collect();
            let mut hist = Vec::new();
            let mut idle = 0u64;
            for m in &runs {
                if m.staleness_histogram.len() > hist.len() {
                    hist.resize(m.staleness_histogram.len(), 0);
                }
                for (b, &c) in m.staleness_histogram.iter().enumerate() {
                    hist[b] += c;
                }
                idle += m.idle_contacts;
            }
            SchemeRow {
                scheme,
                runs: runs.len(),
                median_days: median_days(times),
                gain: None,
                staleness_histogram: hist,
                idle_contacts: idle,
            }
        })
        .collect();

    let baseline_median = rows
        .iter()
        .find(|r| r.scheme == baseline)
        .and_then(|r| r.median_days);
    if let Some(base) = baseline_median {
        for row in rows.iter_mut() {
            if row.scheme != baseline {
                row.gain = row.median_days.map(|d| d / base);
            }
        }
    }

    // Fastest scheme first; unreached targets last.
    rows.sort_by(|a, b| match (a.median_days, b.median_days) {
        (Some(x), Some(y)) => x.partial_cmp(&y).expect("finite"),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.scheme.cmp(&b.scheme),
    });

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<16} {:>5} {:>12} {:>16}",
        "scheme", "runs", "median_days", "gain_vs_base"
    );
    for row in &rows {
        let days = row
            .median_days
            .map(|d| format!("{d:.2}"))
            .unwrap_or_else(|| "-".into());
        let gain = if row.scheme == baseline {
            "n/a".to_string()
        } else {
            row.gain.map(|g| format!("{g:.2}x")).unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(table, "{:<16} {:>5} {:>12} {:>16}", row.scheme, row.runs, days, gain);
    }
    let _ = writeln!(table, "(baseline: {baseline})");

    Ok(Summary { rows, baseline: baseline.to_string(), table })
}

pub fn write_files(summary: &Summary, out_dir: &Path) -> Result<()> {
    let mut csv = String::from("scheme,runs,median_days,gain_vs_base,idle_contacts\n");
    for row in &summary.rows {
        let days = row.median_days.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into());
        let gain = if row.scheme == summary.baseline {
            "n/a".to_string()
        } else {
            row.gain.map(|g| format!("{g:.2}")).unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(csv, "{},{},{},{},{}", row.scheme, row.runs, days, gain, row.idle_contacts);
    }
    std::fs::write(out_dir.join("report_summary.csv"), csv)?;

    for row in &summary.rows {
        let mut hist = String::from("bucket,count\n");
        let _ = writeln!(hist, "idle,{}", row.idle_contacts);
        for (s, c) in row.staleness_histogram.iter().enumerate() {
            let _ = writeln!(hist, "s{s},{c}");
        }
        std::fs::write(out_dir.join(format!("histogram_{}.csv", row.scheme)), hist)?;
    }
    Ok(())
}
