//! Synthetic multiclass classification task, data partitioning, and the
//! multinomial logistic loss used throughout the simulator.
//!
//! The task is convex by construction: aggregation policies are compared on
//! wall-clock convergence, so training must be fast and low-variance. Class
//! clusters are Gaussian with controllable separation; each sample carries a
//! spatial zone id whose class mixture is deliberately skewed, which is what
//! the visit-proportional non-IID partitioner turns into label skew across
//! satellites.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flcore::ModelParams;
use crate::SatId;

/// Relative weight of a zone's boosted class against every other class.
/// With 10 classes the boosted class makes up ~84% of the zone's samples,
/// so zone mixtures are strongly concentrated and visit-proportional
/// assignment yields genuinely specialized satellites.
const ZONE_CLASS_WEIGHT: f64 = 49.0;

/// A dense in-memory dataset: row-major feature matrix, integer class labels
/// and a spatial zone id per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    zones: Vec<u32>,
    num_features: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        zones: Vec<u32>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if num_features == 0 || num_classes == 0 {
            return Err(Error::InvalidData("features and classes must be positive".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidData("dataset must contain at least one sample".into()));
        }
        if features.len() != labels.len() * num_features || zones.len() != labels.len() {
            return Err(Error::InvalidData("feature/label/zone lengths disagree".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidData(format!("label {l} out of range")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(Self { features, labels, zones, num_features, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn zone(&self, i: usize) -> u32 {
        self.zones[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// Model dimension for this task: one weight row plus bias per class.
    pub fn model_dim(&self) -> usize {
        self.num_classes * (self.num_features + 1)
    }

    /// Splits off the first `n` samples into a new dataset, returning
    /// `(head, tail)`.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidData(format!(
                "split point {n} outside dataset of {} samples",
                self.len()
            )));
        }
        let head = Dataset::new(
            self.features[..n * self.num_features].to_vec(),
            self.labels[..n].to_vec(),
            self.zones[..n].to_vec(),
            self.num_features,
            self.num_classes,
        )?;
        let tail = Dataset::new(
            self.features[n * self.num_features..].to_vec(),
            self.labels[n..].to_vec(),
            self.zones[n..].to_vec(),
            self.num_features,
            self.num_classes,
        )?;
        Ok((head, tail))
    }

    /// Writes the dataset as CSV: feature columns, then `label`, then `zone`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in 0..self.num_features {
            let _ = write!(out, "f{j},");
        }
        out.push_str("label,zone\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{}", self.labels[i], self.zones[i]);
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::save_csv`]. The class count is
    /// taken as `max(label) + 1`.
    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::DataParse { line: 1, msg: "empty file".into() })??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "zone" {
            return Err(Error::DataParse { line: 1, msg: "expected `f0,..,label,zone` header".into() });
        }
        let d = cols.len() - 2;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut zones = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::DataParse {
                    line: line_no,
                    msg: format!("expected {} fields, got {}", d + 2, fields.len()),
                });
            }
            for f in &fields[..d] {
                let v: f64 = f.parse().map_err(|_| Error::DataParse {
                    line: line_no,
                    msg: format!("bad feature value `{f}`"),
                })?;
                features.push(v);
            }
            labels.push(fields[d].parse().map_err(|_| Error::DataParse {
                line: line_no,
                msg: format!("bad label `{}`", fields[d]),
            })?);
            zones.push(fields[d + 1].parse().map_err(|_| Error::DataParse {
                line: line_no,
                msg: format!("bad zone `{}`", fields[d + 1]),
            })?);
        }
        let classes = labels.iter().max().map(|&m| m as usize + 1).unwrap_or(0);
        Dataset::new(features, labels, zones, d, classes)
    }
}

/// Mean of class `c` used by [`generate_synthetic`]: `separation` along the
/// `c mod d` coordinate axis. Deterministic so tests can build the Bayes-like
/// nearest-mean classifier directly.
pub fn class_mean(class: usize, num_features: usize, separation: f64) -> Vec<f64> {
    let mut m = vec![0.0; num_features];
    m[class % num_features] = separation;
    m
}

/// Generates `n` samples of an `classes`-way Gaussian-cluster task with unit
/// noise. Zones get distinct class mixtures: zone `z` over-represents class
/// `z mod classes`.
pub fn generate_synthetic(
    n: usize,
    num_features: usize,
    classes: usize,
    separation: f64,
    zones: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if classes == 0 || num_features == 0 || zones == 0 {
        return Err(Error::InvalidData("classes, features and zones must be positive".into()));
    }
    if n < classes {
        return Err(Error::InvalidData(format!("need at least {classes} samples, got {n}")));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidData("separation must be finite and non-negative".into()));
    }
    let mixtures: Vec<WeightedIndex<f64>> = (0..zones)
        .map(|z| {
            let weights: Vec<f64> = (0..classes)
                .map(|c| if c == z % classes { ZONE_CLASS_WEIGHT } else { 1.0 })
                .collect();
            WeightedIndex::new(weights).expect("positive weights")
        })
        .collect();
    let mut features = Vec::with_capacity(n * num_features);
    let mut labels = Vec::with_capacity(n);
    let mut zone_ids = Vec::with_capacity(n);
    for _ in 0..n {
        let z = rng.gen_range(0..zones);
        let c = mixtures[z].sample(rng);
        let mean = class_mean(c, num_features, separation);
        for m in mean {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(m + noise);
        }
        labels.push(c as u32);
        zone_ids.push(z as u32);
    }
    Dataset::new(features, labels, zone_ids, num_features, classes)
}

/// An assignment of every sample to exactly one satellite.
#[derive(Debug, Clone)]
pub struct Partitioning {
    assignment: Vec<SatId>,
    counts: Vec<usize>,
}

impl Partitioning {
    fn from_assignment(assignment: Vec<SatId>, num_satellites: usize) -> Self {
        let mut counts = vec![0usize; num_satellites];
        for &s in &assignment {
            counts[s as usize] += 1;
        }
        Self { assignment, counts }
    }

    pub fn assignment(&self) -> &[SatId] {
        &self.assignment
    }

    /// Per-satellite sample counts `m_k`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_satellites(&self) -> usize {
        self.counts.len()
    }

    /// Sorted sample-index lists, one per satellite.
    pub fn index_lists(&self) -> Vec<Vec<u32>> {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); self.counts.len()];
        for (i, &s) in self.assignment.iter().enumerate() {
            lists[s as usize].push(i as u32);
        }
        lists
    }

    /// Writes `sample_index,satellite_id` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("sample_index,satellite_id\n");
        for (i, s) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "{i},{s}");
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Shuffles the dataset and deals it into `k` nearly equal shares, so the
/// counts differ by at most one.
pub fn partition_iid(data: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Result<Partitioning> {
    if k == 0 || k > data.len() {
        return Err(Error::InvalidData(format!(
            "cannot split {} samples across {k} satellites",
            data.len()
        )));
    }
    let mut order: Vec<u32> = (0..data.len() as u32).collect();
    order.shuffle(rng);
    let mut assignment = vec![0 as SatId; data.len()];
    for (pos, &sample) in order.iter().enumerate() {
        assignment[sample as usize] = (pos % k) as SatId;
    }
    Ok(Partitioning::from_assignment(assignment, k))
}

/// Assigns each zone's samples across the satellites that visit the zone,
/// with probability proportional to visit counts. `zone_visits[k][z]` is the
/// visit count of satellite `k` in zone `z`; a zone with no visitor at all is
/// rejected.
pub fn partition_noniid_by_visits(
    data: &Dataset,
    zone_visits: &[Vec<u32>],
    rng: &mut ChaCha8Rng,
) -> Result<Partitioning> {
    let k = zone_visits.len();
    if k == 0 {
        return Err(Error::InvalidData("no satellites in visit table".into()));
    }
    let zones = zone_visits[0].len();
    if zone_visits.iter().any(|row| row.len() != zones) {
        return Err(Error::InvalidData("ragged zone-visit table".into()));
    }
    let mut per_zone: Vec<Option<WeightedIndex<f64>>> = Vec::with_capacity(zones);
    for z in 0..zones {
        let weights: Vec<f64> = (0..k).map(|s| zone_visits[s][z] as f64).collect();
        if weights.iter().sum::<f64>() == 0.0 {
            per_zone.push(None);
        } else {
            per_zone.push(Some(WeightedIndex::new(weights).expect("non-negative weights")));
        }
    }
    let mut assignment = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let z = data.zone(i) as usize;
        if z >= zones {
            return Err(Error::InvalidData(format!("sample {i} has zone {z} outside table")));
        }
        let dist = per_zone[z].as_ref().ok_or(Error::OrphanZone(z as u32))?;
        assignment.push(dist.sample(rng) as SatId);
    }
    Ok(Partitioning::from_assignment(assignment, k))
}

/// Multinomial logistic loss and analytic gradient on a mini-batch of sample
/// indices, with an optional L2 penalty on the weights (biases excluded).
///
/// The model layout is `classes` rows of `num_features` weights followed by
/// `classes` biases.
pub fn loss_and_grad(
    model: &ModelParams,
    data: &Dataset,
    batch: &[u32],
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    let w = model.values();
    let d = data.num_features();
    let l = data.num_classes();
    if w.len() != data.model_dim() {
        return Err(Error::DimensionMismatch { expected: data.model_dim(), got: w.len() });
    }
    if batch.is_empty() {
        return Err(Error::InvalidData("empty mini-batch".into()));
    }
    let (weights, biases) = w.split_at(l * d);
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    let mut logits = vec![0.0; l];
    for &idx in batch {
        let i = idx as usize;
        if i >= data.len() {
            return Err(Error::InvalidData(format!("batch index {i} out of range")));
        }
        let x = data.row(i);
        for c in 0..l {
            let row = &weights[c * d..(c + 1) * d];
            logits[c] = biases[c] + row.iter().zip(x).map(|(wj, xj)| wj * xj).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        let y = data.label(i) as usize;
        loss -= (logits[y] / denom).ln();
        for c in 0..l {
            let residual = logits[c] / denom - if c == y { 1.0 } else { 0.0 };
            let row = &mut grad[c * d..(c + 1) * d];
            for (g, xj) in row.iter_mut().zip(x) {
                *g += residual * xj * inv_b;
            }
            grad[l * d + c] += residual * inv_b;
        }
    }
    loss *= inv_b;
    if l2 > 0.0 {
        let mut penalty = 0.0;
        for (j, wj) in weights.iter().enumerate() {
            penalty += wj * wj;
            grad[j] += l2 * wj;
        }
        loss += 0.5 * l2 * penalty;
    }
    Ok((loss, grad))
}

/// Mean loss over the full dataset.
pub fn full_loss(model: &ModelParams, data: &Dataset, l2: f64) -> Result<f64> {
    let batch: Vec<u32> = (0..data.len() as u32).collect();
    Ok(loss_and_grad(model, data, &batch, l2)?.0)
}

/// Top-1 accuracy of `model` on `data`. Ties go to the lowest class index.
pub fn evaluate(model: &ModelParams, data: &Dataset) -> Result<f64> {
    let w = model.values();
    let d = data.num_features();
    let l = data.num_classes();
    if w.len() != data.model_dim() {
        return Err(Error::DimensionMismatch { expected: data.model_dim(), got: w.len() });
    }
    if data.is_empty() {
        return Err(Error::InvalidData("empty evaluation set".into()));
    }
    let (weights, biases) = w.split_at(l * d);
    let hits: usize = (0..data.len())
        .map(|i| {
            let x = data.row(i);
            let mut best_c = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..l {
                let row = &weights[c * d..(c + 1) * d];
                let v = biases[c] + row.iter().zip(x).map(|(wj, xj)| wj * xj).sum::<f64>();
                if v > best_v {
                    best_v = v;
                    best_c = c;
                }
            }
            usize::from(best_c as u32 == data.label(i))
        })
        .sum();
    Ok(hits as f64 / data.len() as f64)
}

/// Full-batch gradient descent on the whole dataset; used to estimate the
/// centralized accuracy ceiling a federated run is compared against.
pub fn train_centralized(data: &Dataset, lr: f64, steps: usize, l2: f64) -> Result<ModelParams> {
    let batch: Vec<u32> = (0..data.len() as u32).collect();
    let mut model = ModelParams::zeros(data.model_dim());
    for step in 0..steps {
        let (loss, grad) = loss_and_grad(&model, data, &batch, l2)?;
        if !loss.is_finite() {
            return Err(Error::DivergentTraining { step });
        }
        model.axpy(-lr, &grad)?;
    }
    Ok(model)
}
