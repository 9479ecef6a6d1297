//! Region score fusion for person recognition.
//!
//! Each body region (face, head, upper body, ...) yields a cosine score between
//! every probe and every reference instance. Scores are mapped to probabilities
//! by a per-region logistic calibration, merged by a weighted mean over the
//! regions that were observed, and each probe takes the label of its best
//! reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-9;
/// Bound on |beta0| and |beta1| when the labels are perfectly separable.
pub const BETA_CAP: f64 = 50.0;
/// Region weights are searched on multiples of 1/GAMMA_STEPS.
pub const GAMMA_STEPS: usize = 20;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub beta0: f64,
    pub beta1: f64,
}

impl Calibration {
    pub const IDENTITY: Self = Self {
        beta0: 0.0,
        beta1: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub calibration: Calibration,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a coefficient reached [`BETA_CAP`].
    pub separable: bool,
    /// Log-likelihood at the start and after every accepted step.
    pub log_likelihood: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn calibrate(s: f64, cal: &Calibration) -> f64 {
    sigmoid(cal.beta0 + cal.beta1 * s)
}

fn log_likelihood(scores: &[f64], same: &[bool], b0: f64, b1: f64) -> f64 {
    scores
        .iter()
        .zip(same)
        .map(|(&s, &y)| {
            let z = b0 + b1 * s;
            if y {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

/// Maximum-likelihood logistic fit of `same` on `scores` by damped Newton.
///
/// Convergence is declared when the infinity norm of the per-sample mean
/// gradient falls below `tol`. Each Newton step is halved until the
/// log-likelihood does not decrease, and coefficients are clamped to
/// [`BETA_CAP`].
pub fn fit_logistic(
    scores: &[f64],
    same: &[bool],
    max_iters: usize,
    tol: f64,
) -> Result<LogisticFit> {
    if scores.len() != same.len() {
        return Err(Error::DimMismatch {
            expected: scores.len(),
            found: same.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("logistic score {s}"),
        });
    }
    let positives = same.iter().filter(|&&y| y).count();
    if positives == 0 || positives == same.len() {
        return Err(Error::DegenerateLabels);
    }
    let n = scores.len() as f64;
    let (mut b0, mut b1) = (0.0, 0.0);
    let mut ll = log_likelihood(scores, same, b0, b1);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(same) {
            let p = sigmoid(b0 + b1 * s);
            let r = if y { 1.0 } else { 0.0 } - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * s;
            h00 += w;
            h01 += w * s;
            h11 += w * s * s;
        }
        if (g0 / n).abs().max((g1 / n).abs()) < tol {
            converged = true;
            break;
        }
        iterations += 1;
        // A small ridge keeps the system solvable when all scores coincide or
        // the weights underflow.
        let ridge = 1e-12 * (h00 + h11) + 1e-300;
        let (h00, h11) = (h00 + ridge, h11 + ridge);
        let det = h00 * h11 - h01 * h01;
        let (d0, d1) = ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let c0 = (b0 + t * d0).clamp(-BETA_CAP, BETA_CAP);
            let c1 = (b1 + t * d1).clamp(-BETA_CAP, BETA_CAP);
            let cand = log_likelihood(scores, same, c0, c1);
            if cand >= ll {
                accepted = Some((c0, c1, cand));
                break;
            }
            t *= 0.5;
        }
        let Some((c0, c1, cand)) = accepted else {
            break;
        };
        let moved = c0 != b0 || c1 != b1;
        (b0, b1, ll) = (c0, c1, cand);
        trace.push(ll);
        if !moved {
            break;
        }
    }
    let separable = b0.abs() >= BETA_CAP || b1.abs() >= BETA_CAP;
    Ok(LogisticFit {
        calibration: Calibration {
            beta0: b0,
            beta1: b1,
        },
        iterations,
        converged: converged && !separable,
        separable,
        log_likelihood: trace,
    })
}

/// One region's raw cosine scores, `None` where the region was not observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    pub name: String,
    /// `scores[probe][reference]`.
    pub scores: Vec<Vec<Option<f64>>>,
}

/// Scores of every probe against every reference, one table per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub reference_labels: Vec<u64>,
    /// Known only for validation tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_labels: Option<Vec<u64>>,
    pub regions: Vec<RegionTable>,
}

impl RegionScores {
    pub fn probes(&self) -> usize {
        self.regions.first().map_or(0, |r| r.scores.len())
    }

    pub fn references(&self) -> usize {
        self.reference_labels.len()
    }

    /// Checks that every region table is `probes x references` and that labels
    /// line up.
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::InvalidArgument("score table has no regions".into()));
        }
        let (rows, cols) = (self.probes(), self.references());
        for r in &self.regions {
            if r.scores.len() != rows {
                return Err(Error::format(
                    "score table",
                    format!(
                        "region `{}` has {} probe rows, expected {rows}",
                        r.name,
                        r.scores.len()
                    ),
                ));
            }
            if let Some(row) = r.scores.iter().find(|row| row.len() != cols) {
                return Err(Error::format(
                    "score table",
                    format!(
                        "region `{}` has a row of {} scores, expected {cols}",
                        r.name,
                        row.len()
                    ),
                ));
            }
            if r.scores.iter().flatten().flatten().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("scores of region `{}`", r.name),
                });
            }
        }
        if let Some(labels) = &self.probe_labels {
            if labels.len() != rows {
                return Err(Error::DimMismatch {
                    expected: rows,
                    found: labels.len(),
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rs: Self = serde_json::from_str(text)?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_weights(weights: &[f64], regions: usize) -> Result<()> {
    if weights.len() != regions {
        return Err(Error::DimMismatch {
            expected: regions,
            found: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "region weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "region weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Weighted mean of calibrated scores over the regions present for each pair.
///
/// When some regions are missing the weights of the present ones are
/// renormalized. If every present region has zero weight, the plain mean of
/// the present regions is used.
pub fn merge_scores(rs: &RegionScores, weights: &[f64], cals: &[Calibration]) -> Result<Matrix> {
    check_weights(weights, rs.regions.len())?;
    if cals.len() != rs.regions.len() {
        return Err(Error::DimMismatch {
            expected: rs.regions.len(),
            found: cals.len(),
        });
    }
    let mut merged = Matrix::zeros(rs.probes(), rs.references());
    for i in 0..rs.probes() {
        for j in 0..rs.references() {
            let (mut num, mut den, mut plain, mut present) = (0.0, 0.0, 0.0, 0usize);
            for ((region, &w), cal) in rs.regions.iter().zip(weights).zip(cals) {
                if let Some(s) = region.scores[i][j] {
                    let c = calibrate(s, cal);
                    num += w * c;
                    den += w;
                    plain += c;
                    present += 1;
                }
            }
            let value = if present == 0 {
                return Err(Error::AllRegionsMissing {
                    probe: i,
                    reference: j,
                });
            } else if den > 0.0 {
                num / den
            } else {
                plain / present as f64
            };
            merged.set(i, j, value);
        }
    }
    Ok(merged)
}

/// Label of the highest-scoring reference for each probe. Ties go to the
/// lowest reference index; non-finite scores are skipped.
pub fn assign_identity(merged: &Matrix, reference_labels: &[u64]) -> Result<Vec<u64>> {
    if merged.cols() != reference_labels.len() {
        return Err(Error::DimMismatch {
            expected: merged.cols(),
            found: reference_labels.len(),
        });
    }
    merged
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &s) in row.iter().enumerate() {
                if s.is_finite() && best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
            best.map(|(j, _)| reference_labels[j])
                .ok_or_else(|| Error::InvalidArgument(format!("probe {i} has no finite score")))
        })
        .collect()
}

pub fn top1_accuracy(assigned: &[u64], truth: &[u64]) -> f64 {
    let hits = assigned.iter().zip(truth).filter(|(a, t)| a == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// All weight vectors on the simplex whose entries are multiples of
/// `1/steps`, in lexicographic order of the integer numerators.
pub fn simplex_grid(regions: usize, steps: usize) -> Vec<Vec<f64>> {
    fn fill(prefix: &mut Vec<usize>, remaining: usize, slots: usize, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            fill(prefix, remaining - k, slots - 1, out);
            prefix.pop();
        }
    }
    if regions == 0 {
        return Vec::new();
    }
    let mut raw = Vec::new();
    fill(&mut Vec::new(), steps, regions, &mut raw);
    raw.into_iter()
        .map(|v| v.into_iter().map(|k| k as f64 / steps as f64).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCalibration {
    pub name: String,
    pub beta0: f64,
    pub beta1: f64,
    pub separable: bool,
    pub converged: bool,
    pub weight: f64,
}

/// Calibrations and region weights fitted on one validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub regions: Vec<RegionCalibration>,
    pub validation_top1: f64,
    /// Weights and calibrations are refit for every validation table given.
    pub fit_scope: String,
}

impl FusionModel {
    pub fn weights(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.weight).collect()
    }

    pub fn calibrations(&self) -> Vec<Calibration> {
        self.regions
            .iter()
            .map(|r| Calibration {
                beta0: r.beta0,
                beta1: r.beta1,
            })
            .collect()
    }

    /// Region weights and calibrations reordered to match `rs`, by name.
    pub fn aligned_to(&self, rs: &RegionScores) -> Result<(Vec<f64>, Vec<Calibration>)> {
        if rs.regions.len() != self.regions.len() {
            return Err(Error::DimMismatch {
                expected: self.regions.len(),
                found: rs.regions.len(),
            });
        }
        let mut weights = Vec::with_capacity(rs.regions.len());
        let mut cals = Vec::with_capacity(rs.regions.len());
        for table in &rs.regions {
            let r = self
                .regions
                .iter()
                .find(|r| r.name == table.name)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("no calibration for region `{}`", table.name))
                })?;
            weights.push(r.weight);
            cals.push(Calibration {
                beta0: r.beta0,
                beta1: r.beta1,
            });
        }
        Ok((weights, cals))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fits each region's calibration on its observed validation pairs, then
/// picks the simplex-grid weights with the best validation top-1 accuracy
/// (first in grid order among equals).
pub fn fit_fusion(validation: &RegionScores, max_iters: usize, tol: f64) -> Result<FusionModel> {
    validation.validate()?;
    let truth = validation
        .probe_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("validation table needs probe_labels".into()))?;
    let mut fits = Vec::with_capacity(validation.regions.len());
    for table in &validation.regions {
        let (mut scores, mut same) = (Vec::new(), Vec::new());
        for (row, &probe) in table.scores.iter().zip(truth) {
            for (s, &reference) in row.iter().zip(&validation.reference_labels) {
                if let Some(s) = s {
                    scores.push(*s);
                    same.push(probe == reference);
                }
            }
        }
        fits.push(fit_logistic(&scores, &same, max_iters, tol)?);
    }
    let cals: Vec<Calibration> = fits.iter().map(|f| f.calibration).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for weights in simplex_grid(validation.regions.len(), GAMMA_STEPS) {
        let merged = merge_scores(validation, &weights, &cals)?;
        let acc = top1_accuracy(
            &assign_identity(&merged, &validation.reference_labels)?,
            truth,
        );
        if best.as_ref().is_none_or(|(_, b)| acc > *b) {
            best = Some((weights, acc));
        }
    }
    let (weights, validation_top1) = best.expect("simplex grid is never empty");
    Ok(FusionModel {
        regions: validation
            .regions
            .iter()
            .zip(&fits)
            .zip(weights)
            .map(|((table, fit), weight)| RegionCalibration {
                name: table.name.clone(),
                beta0: fit.calibration.beta0,
                beta1: fit.calibration.beta1,
                separable: fit.separable,
                converged: fit.converged,
                weight,
            })
            .collect(),
        validation_top1,
        fit_scope: "per-validation-table".into(),
    })
}
