//! Central finite differences as an independent oracle for every analytic
//! gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    center_loss, mine_triplets, softmax_loss, triplet_batch_loss, CenterBank, LinearClassifier,
    TripletConfig, DEFAULT_CENTER_RATE,
};
use crate::coco::{coco_backward, coco_forward, Batch, CentroidBank, ScaleConfig};
use crate::error::{Error, Result};
use crate::math::Matrix;

pub const DEFAULT_H_SCALE: f64 = 1e-6;
/// Relative-error denominators are floored here.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-12;
/// Triplets closer than this to the hinge are not checked.
pub const HINGE_EXCLUSION: f64 = 1e-4;

/// Central-difference gradient of `f` at `point`.
///
/// Coordinate `i` uses the step `h_scale * max(1, |x_i|)`.
pub fn finite_difference<F>(mut f: F, point: &[f64], h_scale: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = h_scale * point[i].abs().max(1.0);
        x[i] = point[i] + h;
        let up = f(&x)?;
        x[i] = point[i] - h;
        let down = f(&x)?;
        x[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                context: format!("function evaluation at coordinate {i}"),
            });
        }
        // (x+h) - (x-h) is not exactly 2h in floating point.
        grad.push((up - down) / ((point[i] + h) - (point[i] - h)));
    }
    Ok(grad)
}

/// `|a - n|_inf / max(floor, |n|_inf)` plus the coordinate of the largest gap.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let mut worst = (0.0_f64, 0usize);
    let mut scale = 0.0_f64;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let gap = (a - n).abs();
        if gap > worst.0 {
            worst = (gap, i);
        }
        scale = scale.max(n.abs());
    }
    (worst.0 / scale.max(RELATIVE_ERROR_FLOOR), worst.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckedLoss {
    Coco,
    Softmax,
    Center,
    Triplet,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 4] = [Self::Coco, Self::Softmax, Self::Center, Self::Triplet];

    pub fn name(self) -> &'static str {
        match self {
            Self::Coco => "coco",
            Self::Softmax => "softmax",
            Self::Center => "center",
            Self::Triplet => "triplet",
        }
    }
}

impl std::str::FromStr for CheckedLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss kind `{s}`")))
    }
}

/// Shape of one randomly drawn check problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckShape {
    pub dim: usize,
    pub classes: usize,
    pub batch: usize,
}

/// D in {2, 8, 64} crossed with K in {2, 10, 100}, batch size 8.
pub fn standard_shapes() -> Vec<CheckShape> {
    let mut shapes = Vec::new();
    for dim in [2, 8, 64] {
        for classes in [2, 10, 100] {
            shapes.push(CheckShape {
                dim,
                classes,
                batch: 8,
            });
        }
    }
    shapes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub seed: u64,
    pub shape: CheckShape,
    pub tensor: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatePath {
    pub seed: u64,
    pub tensor: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: CheckedLoss,
    pub max_relative_error: f64,
    pub worst_coordinate: Option<CoordinatePath>,
    pub per_tensor_errors: Vec<TensorCheck>,
    /// Configurations actually compared.
    pub checked: usize,
    /// Seeds excluded because they sat on a non-differentiable point.
    pub skipped_seeds: Vec<u64>,
}

impl GradCheckReport {
    fn from_parts(loss: CheckedLoss, parts: Vec<SeedOutcome>) -> Self {
        let mut report = GradCheckReport {
            loss,
            max_relative_error: 0.0,
            worst_coordinate: None,
            per_tensor_errors: Vec::new(),
            checked: 0,
            skipped_seeds: Vec::new(),
        };
        for part in parts {
            match part {
                SeedOutcome::Skipped(seed) => report.skipped_seeds.push(seed),
                SeedOutcome::Checked(tensors) => {
                    report.checked += 1;
                    for t in tensors {
                        if report.worst_coordinate.is_none()
                            || t.max_relative_error > report.max_relative_error
                        {
                            report.max_relative_error = t.max_relative_error;
                            report.worst_coordinate = Some(CoordinatePath {
                                seed: t.seed,
                                tensor: t.tensor.clone(),
                                index: t.worst_index,
                            });
                        }
                        report.per_tensor_errors.push(t);
                    }
                }
            }
        }
        report
    }

    pub fn merge(mut self, other: GradCheckReport) -> Self {
        if other.max_relative_error > self.max_relative_error || self.worst_coordinate.is_none() {
            self.max_relative_error = other.max_relative_error;
            self.worst_coordinate = other.worst_coordinate;
        }
        self.per_tensor_errors.extend(other.per_tensor_errors);
        self.checked += other.checked;
        self.skipped_seeds.extend(other.skipped_seeds);
        self
    }
}

enum SeedOutcome {
    Checked(Vec<TensorCheck>),
    Skipped(u64),
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Compares analytic and numeric gradients for `loss` on one random problem
/// per seed.
pub fn check_gradients(
    loss: CheckedLoss,
    shape: CheckShape,
    seeds: &[u64],
) -> Result<GradCheckReport> {
    if shape.classes < 2 || shape.dim == 0 || shape.batch == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid check shape {shape:?}"
        )));
    }
    let parts = seeds
        .par_iter()
        .map(|&seed| check_one(loss, shape, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradCheckReport::from_parts(loss, parts))
}

/// Runs `seeds_per_shape` seeds on every shape of [`standard_shapes`].
pub fn check_standard_grid(
    loss: CheckedLoss,
    seeds_per_shape: usize,
    base_seed: u64,
) -> Result<GradCheckReport> {
    let mut report: Option<GradCheckReport> = None;
    for (s, shape) in standard_shapes().into_iter().enumerate() {
        let seeds: Vec<u64> = (0..seeds_per_shape as u64)
            .map(|j| base_seed.wrapping_add(1000 * s as u64 + j))
            .collect();
        let part = check_gradients(loss, shape, &seeds)?;
        report = Some(match report {
            None => part,
            Some(r) => r.merge(part),
        });
    }
    report.ok_or_else(|| Error::InvalidArgument("empty shape grid".into()))
}

fn compare(
    seed: u64,
    shape: CheckShape,
    tensor: &str,
    analytic: &[f64],
    numeric: &[f64],
) -> TensorCheck {
    let (err, idx) = relative_error(analytic, numeric);
    TensorCheck {
        seed,
        shape,
        tensor: tensor.to_string(),
        max_relative_error: err,
        worst_index: idx,
    }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn check_one(loss: CheckedLoss, shape: CheckShape, seed: u64) -> Result<SeedOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let CheckShape {
        dim,
        classes,
        batch: m,
    } = shape;
    let features = normal_matrix(&mut rng, m, dim, 1.0);
    let h = DEFAULT_H_SCALE;

    match loss {
        CheckedLoss::Coco => {
            let labels = random_labels(&mut rng, m, classes);
            let centroids = normal_matrix(&mut rng, classes, dim, 1.0);
            let cfg = ScaleConfig::for_classes(classes)?;
            let batch = Batch::new(features.clone(), labels.clone(), classes)?;
            let bank = CentroidBank::parametric(centroids.clone())?;
            let out = coco_forward(&batch, &bank, &cfg)?;
            let grads = coco_backward(&batch, &bank, &cfg, &out)?;

            let num_f = finite_difference(
                |x| {
                    let b = Batch::new(
                        Matrix::from_vec(m, dim, x.to_vec())?,
                        labels.clone(),
                        classes,
                    )?;
                    Ok(coco_forward(&b, &bank, &cfg)?.loss)
                },
                features.as_slice(),
                h,
            )?;
            let num_c = finite_difference(
                |x| {
                    let bk = CentroidBank::parametric(Matrix::from_vec(classes, dim, x.to_vec())?)?;
                    Ok(coco_forward(&batch, &bk, &cfg)?.loss)
                },
                centroids.as_slice(),
                h,
            )?;
            Ok(SeedOutcome::Checked(vec![
                compare(seed, shape, "features", grads.d_features.as_slice(), &num_f),
                compare(
                    seed,
                    shape,
                    "centroids",
                    grads.d_centroids.as_slice(),
                    &num_c,
                ),
            ]))
        }
        CheckedLoss::Softmax => {
            let labels = random_labels(&mut rng, m, classes);
            let clf = LinearClassifier {
                weights: normal_matrix(&mut rng, classes, dim, 0.5),
                biases: (0..classes)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            };
            let batch = Batch::new(features.clone(), labels.clone(), classes)?;
            let out = softmax_loss(&batch, &clf)?;

            let num_f = finite_difference(
                |x| {
                    let b = Batch::new(
                        Matrix::from_vec(m, dim, x.to_vec())?,
                        labels.clone(),
                        classes,
                    )?;
                    Ok(softmax_loss(&b, &clf)?.loss)
                },
                features.as_slice(),
                h,
            )?;
            let num_w = finite_difference(
                |x| {
                    let c = LinearClassifier {
                        weights: Matrix::from_vec(classes, dim, x.to_vec())?,
                        biases: clf.biases.clone(),
                    };
                    Ok(softmax_loss(&batch, &c)?.loss)
                },
                clf.weights.as_slice(),
                h,
            )?;
            let num_b = finite_difference(
                |x| {
                    let c = LinearClassifier {
                        weights: clf.weights.clone(),
                        biases: x.to_vec(),
                    };
                    Ok(softmax_loss(&batch, &c)?.loss)
                },
                &clf.biases,
                h,
            )?;
            Ok(SeedOutcome::Checked(vec![
                compare(seed, shape, "features", out.d_features.as_slice(), &num_f),
                compare(seed, shape, "weights", out.d_weights.as_slice(), &num_w),
                compare(seed, shape, "biases", &out.d_biases, &num_b),
            ]))
        }
        CheckedLoss::Center => {
            let labels = random_labels(&mut rng, m, classes);
            let bank = CenterBank::new(
                normal_matrix(&mut rng, classes, dim, 1.0),
                DEFAULT_CENTER_RATE,
            )?;
            let batch = Batch::new(features.clone(), labels.clone(), classes)?;
            let (_, grad) = center_loss(&batch, &bank)?;
            let num_f = finite_difference(
                |x| {
                    let b = Batch::new(
                        Matrix::from_vec(m, dim, x.to_vec())?,
                        labels.clone(),
                        classes,
                    )?;
                    Ok(center_loss(&b, &bank)?.0)
                },
                features.as_slice(),
                h,
            )?;
            Ok(SeedOutcome::Checked(vec![compare(
                seed,
                shape,
                "features",
                grad.as_slice(),
                &num_f,
            )]))
        }
        CheckedLoss::Triplet => {
            // Cycle over a few classes so anchors have positives in a batch of 8.
            let groups = classes.min(m / 2).max(2);
            let labels: Vec<usize> = (0..m).map(|i| i % groups).collect();
            let batch = Batch::new(features.clone(), labels, classes)?;
            let cfg = TripletConfig::default();
            let triplets = mine_triplets(&batch, &cfg, &mut rng)?;
            let out = triplet_batch_loss(&features, &triplets, &cfg)?;
            if out.min_abs_slack < HINGE_EXCLUSION {
                return Ok(SeedOutcome::Skipped(seed));
            }
            let num_f =
                finite_difference(
                    |x| {
                        Ok(triplet_batch_loss(
                            &Matrix::from_vec(m, dim, x.to_vec())?,
                            &triplets,
                            &cfg,
                        )?
                        .loss)
                    },
                    features.as_slice(),
                    h,
                )?;
            Ok(SeedOutcome::Checked(vec![compare(
                seed,
                shape,
                "features",
                out.d_features.as_slice(),
                &num_f,
            )]))
        }
    }
}
