//! Comparison losses: softmax cross-entropy over a linear classifier, center
//! loss with its statistical center update, and triplet loss on unit-norm
//! embeddings with in-batch mining.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coco::Batch;
use crate::error::{Error, Result};
use crate::math::{
    dot, l2_norm, normalize_backward, softmax_and_log_sum_exp, Matrix, ProbabilityVector,
    ZERO_NORM_THRESHOLD,
};

pub const DEFAULT_CENTER_RATE: f64 = 0.5;
pub const DEFAULT_CENTER_WEIGHT: f64 = 1.0;
pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.2;

/// `z = W f + b` with `W` of shape K x D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(classes, dim),
            biases: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.biases.len()
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        self.weights
            .iter_rows()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, feature) + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput {
    /// Summed cross-entropy over the batch.
    pub loss: f64,
    pub probs: Vec<ProbabilityVector>,
    pub d_features: Matrix,
    pub d_weights: Matrix,
    pub d_biases: Vec<f64>,
}

pub fn softmax_loss(batch: &Batch, clf: &LinearClassifier) -> Result<SoftmaxOutput> {
    let (k, d) = (clf.classes(), batch.dim());
    if clf.weights.rows() != k || clf.weights.cols() != d {
        return Err(Error::DimMismatch {
            expected: k * d,
            found: clf.weights.rows() * clf.weights.cols(),
        });
    }
    if batch.classes() != k {
        return Err(Error::DimMismatch {
            expected: batch.classes(),
            found: k,
        });
    }
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    let mut d_features = Matrix::zeros(batch.len(), d);
    let mut d_weights = Matrix::zeros(k, d);
    let mut d_biases = vec![0.0; k];
    for (i, (f, &label)) in batch.features().iter_rows().zip(batch.labels()).enumerate() {
        let z = clf.logits(f);
        let (p, lse) = softmax_and_log_sum_exp(&z);
        loss += lse - z[label];
        for c in 0..k {
            let dz = p[c] - if c == label { 1.0 } else { 0.0 };
            d_biases[c] += dz;
            for ((gf, gw), (w, x)) in d_features
                .row_mut(i)
                .iter_mut()
                .zip(d_weights.row_mut(c))
                .zip(clf.weights.row(c).iter().zip(f))
            {
                *gf += dz * w;
                *gw += dz * x;
            }
        }
        probs.push(p);
    }
    Ok(SoftmaxOutput {
        loss,
        probs,
        d_features,
        d_weights,
        d_biases,
    })
}

/// Class centers for center loss, moved by a statistical rule rather than by
/// gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterBank {
    pub centers: Matrix,
    pub update_rate: f64,
}

impl CenterBank {
    pub fn new(centers: Matrix, update_rate: f64) -> Result<Self> {
        if !(update_rate > 0.0 && update_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "center update rate must lie in (0, 1], got {update_rate}"
            )));
        }
        if !centers.is_finite() {
            return Err(Error::NonFinite {
                context: "centers".into(),
            });
        }
        Ok(Self {
            centers,
            update_rate,
        })
    }
}

fn check_centers(batch: &Batch, bank: &CenterBank) -> Result<()> {
    if bank.centers.rows() != batch.classes() || bank.centers.cols() != batch.dim() {
        return Err(Error::DimMismatch {
            expected: batch.classes() * batch.dim(),
            found: bank.centers.rows() * bank.centers.cols(),
        });
    }
    Ok(())
}

/// `0.5 * sum_i |f_i - c_{l_i}|^2` and its feature gradient.
pub fn center_loss(batch: &Batch, bank: &CenterBank) -> Result<(f64, Matrix)> {
    check_centers(batch, bank)?;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(batch.len(), batch.dim());
    for (i, (f, &label)) in batch.features().iter_rows().zip(batch.labels()).enumerate() {
        for ((g, x), c) in grad
            .row_mut(i)
            .iter_mut()
            .zip(f)
            .zip(bank.centers.row(label))
        {
            let diff = x - c;
            loss += 0.5 * diff * diff;
            *g = diff;
        }
    }
    Ok((loss, grad))
}

/// Moves each center toward its class members:
/// `c_j -= rate * sum_{i in j} (c_j - f_i) / (1 + N_j)`.
pub fn center_update(batch: &Batch, bank: &CenterBank) -> Result<CenterBank> {
    check_centers(batch, bank)?;
    let mut delta = Matrix::zeros(bank.centers.rows(), bank.centers.cols());
    let mut counts = vec![0usize; bank.centers.rows()];
    for (f, &label) in batch.features().iter_rows().zip(batch.labels()) {
        counts[label] += 1;
        for ((d, c), x) in delta
            .row_mut(label)
            .iter_mut()
            .zip(bank.centers.row(label))
            .zip(f)
        {
            *d += c - x;
        }
    }
    let mut centers = bank.centers.clone();
    for (j, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let scale = bank.update_rate / (1.0 + n as f64);
        for (c, d) in centers.row_mut(j).iter_mut().zip(delta.row(j)) {
            *c -= scale * d;
        }
    }
    Ok(CenterBank {
        centers,
        update_rate: bank.update_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_TRIPLET_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    /// `|a-p|^2 - |a-n|^2 + margin`; the hinge sits at zero.
    pub slack: f64,
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negative: Vec<f64>,
}

fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `max(0, |a-p|^2 - |a-n|^2 + margin)` for pre-normalized embeddings.
///
/// The subgradient at the hinge itself is taken as zero.
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    cfg: &TripletConfig,
) -> Result<TripletOutput> {
    let d = anchor.len();
    for v in [positive, negative] {
        if v.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    if !(cfg.margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "triplet margin must be positive, got {}",
            cfg.margin
        )));
    }
    let slack =
        squared_distance(anchor, positive) - squared_distance(anchor, negative) + cfg.margin;
    if slack <= 0.0 {
        return Ok(TripletOutput {
            loss: 0.0,
            slack,
            d_anchor: vec![0.0; d],
            d_positive: vec![0.0; d],
            d_negative: vec![0.0; d],
        });
    }
    let d_anchor = positive
        .iter()
        .zip(negative)
        .map(|(p, n)| 2.0 * (n - p))
        .collect();
    let d_positive = anchor
        .iter()
        .zip(positive)
        .map(|(a, p)| 2.0 * (p - a))
        .collect();
    let d_negative = anchor
        .iter()
        .zip(negative)
        .map(|(a, n)| 2.0 * (a - n))
        .collect();
    Ok(TripletOutput {
        loss: slack,
        slack,
        d_anchor,
        d_positive,
        d_negative,
    })
}

/// Indices of one mined triplet inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Unit rows of `features` plus their original norms.
pub fn unit_rows(features: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut units = features.clone();
    let mut norms = Vec::with_capacity(features.rows());
    for i in 0..features.rows() {
        let n = l2_norm(features.row(i));
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroNorm { norm: n });
        }
        units.row_mut(i).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((units, norms))
}

/// In-batch mining on unit embeddings.
///
/// Each anchor takes a uniformly random positive, then the hardest negative
/// (closest to the anchor) among those whose triplet loss is still positive.
/// Anchors without a positive or without an active negative are skipped.
pub fn mine_triplets<R: Rng + ?Sized>(
    batch: &Batch,
    cfg: &TripletConfig,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    let (units, _) = unit_rows(batch.features())?;
    let labels = batch.labels();
    let mut triplets = Vec::new();
    for a in 0..batch.len() {
        let positives: Vec<usize> = (0..batch.len())
            .filter(|&j| j != a && labels[j] == labels[a])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let p = positives[rng.random_range(0..positives.len())];
        let d_ap = squared_distance(units.row(a), units.row(p));
        let mut best: Option<(usize, f64)> = None;
        for n in (0..batch.len()).filter(|&j| labels[j] != labels[a]) {
            let d_an = squared_distance(units.row(a), units.row(n));
            if d_ap - d_an + cfg.margin <= 0.0 {
                continue;
            }
            if best.is_none_or(|(_, d)| d_an < d) {
                best = Some((n, d_an));
            }
        }
        if let Some((n, _)) = best {
            triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative: n,
            });
        }
    }
    Ok(triplets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatchOutput {
    /// Summed hinge loss over the triplets.
    pub loss: f64,
    /// Gradient with respect to the raw (unnormalized) features.
    pub d_features: Matrix,
    /// Smallest |slack| over the triplets; values near zero sit on the hinge.
    pub min_abs_slack: f64,
}

/// Triplet loss over fixed index triplets, with embeddings normalized to unit
/// length inside the loss.
pub fn triplet_batch_loss(
    features: &Matrix,
    triplets: &[Triplet],
    cfg: &TripletConfig,
) -> Result<TripletBatchOutput> {
    let (units, norms) = unit_rows(features)?;
    let mut d_units = Matrix::zeros(features.rows(), features.cols());
    let mut loss = 0.0;
    let mut min_abs_slack = f64::INFINITY;
    for t in triplets {
        let out = triplet_loss(
            units.row(t.anchor),
            units.row(t.positive),
            units.row(t.negative),
            cfg,
        )?;
        loss += out.loss;
        min_abs_slack = min_abs_slack.min(out.slack.abs());
        for (idx, g) in [
            (t.anchor, &out.d_anchor),
            (t.positive, &out.d_positive),
            (t.negative, &out.d_negative),
        ] {
            for (acc, v) in d_units.row_mut(idx).iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
    let mut d_features = Matrix::zeros(features.rows(), features.cols());
    for i in 0..features.rows() {
        let g = normalize_backward(d_units.row(i), units.row(i), norms[i], 1.0);
        d_features.row_mut(i).copy_from_slice(&g);
    }
    Ok(TripletBatchOutput {
        loss,
        d_features,
        min_abs_slack,
    })
}
