//! Congenerous cosine (COCO) loss.
//!
//! Features are l2-normalized and scaled by `alpha`, centroids are
//! l2-normalized, and the logits `z_k = c_hat_k . f_hat` feed a softmax
//! cross-entropy whose denominator runs over every usable class:
//!
//! ```text
//! f_hat = alpha * f / |f|      c_hat_k = c_k / |c_k|
//! p_k   = exp(z_k) / sum_m exp(z_m)
//! L     = -sum_i log p_{l_i}
//! ```
//!
//! The backward pass first forms the top gradient with respect to the
//! normalized feature, `sum_k (p_k - t_k) c_hat_k`, and then pushes it through
//! the normalization, which removes the radial component. Centroid gradients
//! follow the same chain with the roles of feature and centroid swapped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{
    cosine_similarity, dot, l2_norm, normalize_backward, softmax_and_log_sum_exp, Matrix,
    ProbabilityVector, ZERO_NORM_THRESHOLD,
};

/// Default target loss used when deriving the scale factor.
pub const DEFAULT_TARGET_LOSS: f64 = 1e-4;
/// Default stabilizer in the denominator of the naive pairwise loss.
pub const DEFAULT_PAIR_EPSILON: f64 = 1e-2;

/// A mini-batch of features with 0-based class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidArgument(
                "batch must hold at least one sample".into(),
            ));
        }
        if features.cols() == 0 {
            return Err(Error::InvalidArgument("feature dim must be >= 1".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::DimMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite {
                context: "batch features".into(),
            });
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidMode {
    /// Persistent K x D table updated by the optimizer.
    Parametric,
    /// Recomputed as per-class means of every batch.
    Batch,
}

/// Class centroids, either trainable or derived from the current batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBank {
    centroids: Matrix,
    counts: Vec<usize>,
    mode: CentroidMode,
}

impl CentroidBank {
    /// Wraps a trainable centroid table. Every row must have non-zero norm.
    pub fn parametric(centroids: Matrix) -> Result<Self> {
        for (k, c) in centroids.iter_rows().enumerate() {
            let n = l2_norm(c);
            if !n.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("centroid {k}"),
                });
            }
            if n < ZERO_NORM_THRESHOLD {
                return Err(Error::ZeroNorm { norm: n });
            }
        }
        let counts = vec![0; centroids.rows()];
        Ok(Self {
            centroids,
            counts,
            mode: CentroidMode::Parametric,
        })
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn centroids_mut(&mut self) -> &mut Matrix {
        &mut self.centroids
    }

    /// Per-class sample counts; all zero in parametric mode.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn mode(&self) -> CentroidMode {
        self.mode
    }

    pub fn classes(&self) -> usize {
        self.centroids.rows()
    }

    /// Whether class `k` may enter the softmax.
    pub fn is_usable(&self, k: usize) -> bool {
        match self.mode {
            CentroidMode::Parametric => true,
            CentroidMode::Batch => self.counts[k] > 0,
        }
    }

    /// Adds the path through the batch means to `d_features`.
    ///
    /// In batch mode every centroid is a mean of batch features, so the total
    /// derivative of the loss with respect to feature `i` picks up
    /// `d_centroids[l_i] / N_{l_i}`. No-op for parametric banks.
    pub fn chain_batch_means(&self, batch: &Batch, grads: &mut GradientBundle) {
        if self.mode != CentroidMode::Batch {
            return;
        }
        for (i, &label) in batch.labels().iter().enumerate() {
            let n = self.counts[label] as f64;
            let dc = grads.d_centroids.row(label).to_vec();
            for (g, c) in grads.d_features.row_mut(i).iter_mut().zip(dc) {
                *g += c / n;
            }
        }
    }
}

/// Per-class means of the batch features.
///
/// Classes absent from the batch get a zero centroid with count 0 and are
/// excluded from the softmax by [`coco_forward`].
pub fn batch_centroids(batch: &Batch) -> CentroidBank {
    let d = batch.dim();
    let mut sums = Matrix::zeros(batch.classes(), d);
    let mut counts = vec![0usize; batch.classes()];
    for (f, &label) in batch.features().iter_rows().zip(batch.labels()) {
        counts[label] += 1;
        for (s, x) in sums.row_mut(label).iter_mut().zip(f) {
            *s += x;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(k).iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    CentroidBank {
        centroids: sums,
        counts,
        mode: CentroidMode::Batch,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    /// Multiplier applied to the unit feature before the softmax.
    pub alpha: f64,
    /// Target loss used to derive `alpha`.
    pub target_loss: f64,
    /// Stabilizer for the naive pairwise loss.
    pub pair_epsilon: f64,
}

impl ScaleConfig {
    /// Uses the closed-form scale factor for `classes`.
    pub fn for_classes(classes: usize) -> Result<Self> {
        Ok(Self {
            alpha: optimal_alpha(classes, DEFAULT_TARGET_LOSS, AlphaForm::ClosedForm)?,
            target_loss: DEFAULT_TARGET_LOSS,
            pair_epsilon: DEFAULT_PAIR_EPSILON,
        })
    }

    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            target_loss: DEFAULT_TARGET_LOSS,
            pair_epsilon: DEFAULT_PAIR_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaForm {
    /// `0.5 * ln((K - 1) / (exp(eps) - 1))`, the smallest scale that lets the
    /// loss reach `eps`.
    ExactBound,
    /// `0.5 * ln(K - 1) + 3`, independent of the target loss.
    ClosedForm,
}

/// Lower bound on the feature scale needed for the loss to reach `target_loss`.
pub fn optimal_alpha(classes: usize, target_loss: f64, form: AlphaForm) -> Result<f64> {
    if classes < 2 {
        return Err(Error::InvalidK(classes));
    }
    let log_k1 = ((classes - 1) as f64).ln();
    match form {
        AlphaForm::ClosedForm => Ok(0.5 * log_k1 + 3.0),
        AlphaForm::ExactBound => {
            if !(target_loss > 0.0) || !target_loss.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "target loss must be positive and finite, got {target_loss}"
                )));
            }
            Ok(0.5 * (log_k1 - target_loss.exp_m1().ln()))
        }
    }
}

/// Smallest per-sample loss reachable at scale `alpha` with `classes` classes.
///
/// The feature aligns with its own centroid (logit `alpha`) and every other
/// centroid points the opposite way (logit `-alpha`), giving
/// `ln(e^alpha + (K-1) e^-alpha) - alpha = ln(1 + (K-1) e^(-2 alpha))`.
pub fn loss_floor(alpha: f64, classes: usize) -> f64 {
    ((classes as f64 - 1.0) * (-2.0 * alpha).exp()).ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Summed cross-entropy over the batch.
    pub loss: f64,
    /// Per-sample class probabilities; unusable classes hold 0.
    pub probs: Vec<ProbabilityVector>,
    /// Per-sample target class (the hot index of the one-hot target).
    pub targets: Vec<usize>,
}

impl LossOutput {
    /// One-hot target entry `t_k` for sample `i`.
    pub fn target(&self, i: usize, k: usize) -> f64 {
        if self.targets[i] == k {
            1.0
        } else {
            0.0
        }
    }

    pub fn per_sample_losses(&self) -> Vec<f64> {
        self.probs
            .iter()
            .zip(&self.targets)
            .map(|(p, &t)| -p[t].ln())
            .collect()
    }
}

/// Gradients of the summed loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `dL/df` for each sample, M x D.
    pub d_features: Matrix,
    /// `dL/dc_k` for each class, K x D.
    pub d_centroids: Matrix,
}

struct Normalized {
    units: Matrix,
    norms: Vec<f64>,
}

fn normalize_rows(m: &Matrix, what: &str) -> Result<Normalized> {
    let mut units = Matrix::zeros(m.rows(), m.cols());
    let mut norms = Vec::with_capacity(m.rows());
    for (i, row) in m.iter_rows().enumerate() {
        let n = l2_norm(row);
        if !n.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{what} {i}"),
            });
        }
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroNorm { norm: n });
        }
        for (u, x) in units.row_mut(i).iter_mut().zip(row) {
            *u = x / n;
        }
        norms.push(n);
    }
    Ok(Normalized { units, norms })
}

fn check_compatible(batch: &Batch, bank: &CentroidBank, cfg: &ScaleConfig) -> Result<()> {
    if bank.classes() != batch.classes() {
        return Err(Error::DimMismatch {
            expected: batch.classes(),
            found: bank.classes(),
        });
    }
    if bank.centroids().cols() != batch.dim() {
        return Err(Error::DimMismatch {
            expected: batch.dim(),
            found: bank.centroids().cols(),
        });
    }
    if !(cfg.alpha > 0.0) || !cfg.alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {}",
            cfg.alpha
        )));
    }
    if let Some(&class) = batch.labels().iter().find(|&&l| !bank.is_usable(l)) {
        return Err(Error::UnusableCentroid { class });
    }
    Ok(())
}

/// Unit centroids for the usable classes, zero rows elsewhere.
fn unit_centroids(bank: &CentroidBank) -> Result<Normalized> {
    let k = bank.classes();
    let d = bank.centroids().cols();
    let mut units = Matrix::zeros(k, d);
    let mut norms = vec![0.0; k];
    for c in (0..k).filter(|&c| bank.is_usable(c)) {
        let row = bank.centroids().row(c);
        let n = l2_norm(row);
        if !n.is_finite() {
            return Err(Error::NonFinite {
                context: format!("centroid {c}"),
            });
        }
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroNorm { norm: n });
        }
        for (u, x) in units.row_mut(c).iter_mut().zip(row) {
            *u = x / n;
        }
        norms[c] = n;
    }
    Ok(Normalized { units, norms })
}

pub fn coco_forward(batch: &Batch, bank: &CentroidBank, cfg: &ScaleConfig) -> Result<LossOutput> {
    check_compatible(batch, bank, cfg)?;
    let feats = normalize_rows(batch.features(), "feature")?;
    let cents = unit_centroids(bank)?;
    let usable: Vec<usize> = (0..bank.classes()).filter(|&c| bank.is_usable(c)).collect();

    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    let mut logits = vec![0.0; usable.len()];
    for (i, &label) in batch.labels().iter().enumerate() {
        let f = feats.units.row(i);
        for (z, &c) in logits.iter_mut().zip(&usable) {
            *z = cfg.alpha * dot(cents.units.row(c), f);
        }
        let own = usable
            .iter()
            .position(|&c| c == label)
            .expect("label checked usable");
        let (p, lse) = softmax_and_log_sum_exp(&logits);
        loss += lse - logits[own];
        probs.push(scatter(p, &usable, bank.classes()));
    }
    Ok(LossOutput {
        loss,
        probs,
        targets: batch.labels().to_vec(),
    })
}

fn scatter(p: ProbabilityVector, usable: &[usize], classes: usize) -> ProbabilityVector {
    if usable.len() == classes {
        return p;
    }
    let mut full = vec![0.0; classes];
    for (&c, &v) in usable.iter().zip(p.as_slice()) {
        full[c] = v;
    }
    crate::math::probability_vector_unchecked(full)
}

/// Analytic gradients of the summed COCO loss.
///
/// `d_features` and `d_centroids` are partial derivatives with the bank held
/// fixed; see [`CentroidBank::chain_batch_means`] for the batch-mode total.
pub fn coco_backward(
    batch: &Batch,
    bank: &CentroidBank,
    cfg: &ScaleConfig,
    out: &LossOutput,
) -> Result<GradientBundle> {
    check_compatible(batch, bank, cfg)?;
    if out.probs.len() != batch.len() {
        return Err(Error::DimMismatch {
            expected: batch.len(),
            found: out.probs.len(),
        });
    }
    let feats = normalize_rows(batch.features(), "feature")?;
    let cents = unit_centroids(bank)?;
    let d = batch.dim();
    let k = bank.classes();

    let mut d_features = Matrix::zeros(batch.len(), d);
    // dL/dc_hat accumulated over the batch before the centroid normalization chain.
    let mut d_unit_centroids = Matrix::zeros(k, d);
    let mut top = vec![0.0; d];
    for i in 0..batch.len() {
        let f_unit = feats.units.row(i);
        top.iter_mut().for_each(|t| *t = 0.0);
        for c in (0..k).filter(|&c| bank.is_usable(c)) {
            let residual = out.probs[i][c] - out.target(i, c);
            if residual == 0.0 {
                continue;
            }
            for (t, u) in top.iter_mut().zip(cents.units.row(c)) {
                *t += residual * u;
            }
            // z_c = c_hat . (alpha * f_unit)
            for (g, u) in d_unit_centroids.row_mut(c).iter_mut().zip(f_unit) {
                *g += residual * cfg.alpha * u;
            }
        }
        // dz/df_hat is c_hat; f_hat = alpha * f / |f|.
        let g = normalize_backward(&top, f_unit, feats.norms[i], cfg.alpha);
        d_features.row_mut(i).copy_from_slice(&g);
    }

    let mut d_centroids = Matrix::zeros(k, d);
    for c in (0..k).filter(|&c| bank.is_usable(c)) {
        let g = normalize_backward(
            d_unit_centroids.row(c),
            cents.units.row(c),
            cents.norms[c],
            1.0,
        );
        d_centroids.row_mut(c).copy_from_slice(&g);
    }
    Ok(GradientBundle {
        d_features,
        d_centroids,
    })
}

/// Pairwise objective over all ordered pairs `i != j` of the batch.
///
/// Same-class pairs contribute `C(f_i, f_j) / epsilon`; cross-class pairs
/// contribute nothing to the numerator. Quadratic in the batch size, kept as a
/// reference objective without a backward pass.
pub fn naive_pair_loss(batch: &Batch, cfg: &ScaleConfig) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::InsufficientData(
            "pairwise loss needs at least two samples".into(),
        ));
    }
    let labels = batch.labels();
    let mut total = 0.0;
    for i in 0..batch.len() {
        for j in (0..batch.len()).filter(|&j| j != i) {
            let c = cosine_similarity(batch.features().row(i), batch.features().row(j))?;
            let same = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            total += same * c / ((1.0 - same) * c + cfg.pair_epsilon);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{log_sum_exp, stable_softmax};
    use proptest::prelude::*;

    fn batch(rows: &[&[f64]], labels: &[usize], classes: usize) -> Batch {
        Batch::new(Matrix::from_rows(rows).unwrap(), labels.to_vec(), classes).unwrap()
    }

    #[test]
    fn centroid_examples() {
        let b = batch(&[&[1.0, 2.0], &[3.0, -1.0]], &[0, 1], 2);
        let bank = batch_centroids(&b);
        assert_eq!(bank.centroids().row(0), &[1.0, 2.0]);
        assert_eq!(bank.centroids().row(1), &[3.0, -1.0]);

        let b = batch(&[&[0.5, 0.5], &[0.5, 0.5]], &[0, 0], 1);
        assert_eq!(batch_centroids(&b).centroids().row(0), &[0.5, 0.5]);

        let b = batch(&[&[2.0, 0.0], &[0.0, 2.0]], &[0, 0], 3);
        let bank = batch_centroids(&b);
        assert_eq!(bank.centroids().row(0), &[1.0, 1.0]);
        assert_eq!(bank.counts(), &[2, 0, 0]);
        assert!(!bank.is_usable(1) && !bank.is_usable(2));
    }

    #[test]
    fn alpha_examples() {
        let exact = optimal_alpha(10, 1e-4, AlphaForm::ExactBound).unwrap();
        assert!((exact - 5.703_757_474_447_868).abs() < 1e-12);
        let closed = optimal_alpha(10, 1e-4, AlphaForm::ClosedForm).unwrap();
        assert!((closed - 4.098_612_288_668_11).abs() < 1e-12);
        let zero = optimal_alpha(2, 2f64.ln(), AlphaForm::ExactBound).unwrap();
        assert!(zero.abs() < 1e-15);
        assert!(matches!(
            optimal_alpha(1, 1e-4, AlphaForm::ExactBound),
            Err(Error::InvalidK(1))
        ));
        assert!(optimal_alpha(10, 0.0, AlphaForm::ExactBound).is_err());
    }

    #[test]
    fn forward_hand_example() {
        let b = batch(&[&[2.0, 0.0]], &[0], 2);
        let bank = CentroidBank::parametric(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap())
            .unwrap();
        let out = coco_forward(&b, &bank, &ScaleConfig::with_alpha(1.0)).unwrap();
        assert!((out.probs[0][0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((out.loss - 0.313_261_687_518_222_8).abs() < 1e-15);
    }

    #[test]
    fn identical_centroids_give_uniform_probs() {
        let b = batch(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.0]], &[0, 3], 4);
        let bank =
            CentroidBank::parametric(Matrix::from_rows(&[[1.0, 1.0, 0.0]; 4]).unwrap()).unwrap();
        let out = coco_forward(&b, &bank, &ScaleConfig::with_alpha(4.0)).unwrap();
        assert!((out.loss - 2.0 * 4f64.ln()).abs() < 1e-12);
        for p in &out.probs {
            assert!(p.as_slice().iter().all(|x| (x - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn forward_is_feature_scale_invariant() {
        let b = batch(&[&[0.3, -0.7, 1.1]], &[1], 3);
        let b7 = batch(&[&[2.1, -4.9, 7.7]], &[1], 3);
        let bank = CentroidBank::parametric(
            Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.0, -1.0, 0.4], [0.5, 0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let cfg = ScaleConfig::for_classes(3).unwrap();
        let a = coco_forward(&b, &bank, &cfg).unwrap();
        let c = coco_forward(&b7, &bank, &cfg).unwrap();
        assert!((a.loss - c.loss).abs() < 1e-12);
        for (p, q) in a.probs[0].as_slice().iter().zip(c.probs[0].as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_feature_and_zero_centroid_are_rejected() {
        let b = batch(&[&[0.0, 0.0]], &[0], 2);
        let bank = CentroidBank::parametric(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap())
            .unwrap();
        assert!(matches!(
            coco_forward(&b, &bank, &ScaleConfig::with_alpha(1.0)),
            Err(Error::ZeroNorm { .. })
        ));
        assert!(matches!(
            CentroidBank::parametric(Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap()),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn batch_mode_excludes_absent_classes() {
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 2], 3);
        let bank = batch_centroids(&b);
        let out = coco_forward(&b, &bank, &ScaleConfig::with_alpha(2.0)).unwrap();
        for p in &out.probs {
            assert_eq!(p[1], 0.0);
            assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        // Two usable classes with orthogonal unit centroids.
        let expected = 2.0 * -stable_softmax(&[2.0, 0.0])[0].ln();
        assert!((out.loss - expected).abs() < 1e-14);

        let other = batch(&[&[1.0, 1.0]], &[1], 3);
        assert!(matches!(
            coco_forward(&other, &bank, &ScaleConfig::with_alpha(2.0)),
            Err(Error::UnusableCentroid { class: 1 })
        ));
    }

    #[test]
    fn backward_is_radially_orthogonal() {
        let b = batch(
            &[&[0.3, -0.7, 1.1], &[1.0, 2.0, -0.5], &[-0.2, 0.1, 0.9]],
            &[0, 1, 1],
            3,
        );
        let bank = CentroidBank::parametric(
            Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.0, -1.0, 0.4], [0.5, 0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let cfg = ScaleConfig::for_classes(3).unwrap();
        let out = coco_forward(&b, &bank, &cfg).unwrap();
        let g = coco_backward(&b, &bank, &cfg, &out).unwrap();
        for i in 0..3 {
            let r = dot(g.d_features.row(i), b.features().row(i));
            assert!(r.abs() < 1e-14, "sample {i}: {r}");
        }
        for k in 0..3 {
            let r = dot(g.d_centroids.row(k), bank.centroids().row(k));
            assert!(r.abs() < 1e-14, "class {k}: {r}");
        }
    }

    #[test]
    fn naive_pair_examples() {
        let cfg = ScaleConfig::with_alpha(1.0);
        let same = batch(&[&[1.0, 1.0], &[1.0, 1.0]], &[0, 0], 2);
        // Two ordered pairs, each 1 / 1e-2.
        assert!((naive_pair_loss(&same, &cfg).unwrap() - 200.0).abs() < 1e-9);
        let diff = batch(&[&[1.0, 1.0], &[1.0, 0.9]], &[0, 1], 2);
        assert_eq!(naive_pair_loss(&diff, &cfg).unwrap(), 0.0);
        let one = batch(&[&[1.0, 1.0]], &[0], 2);
        assert!(naive_pair_loss(&one, &cfg).is_err());
    }

    #[test]
    fn naive_pair_matches_double_loop() {
        let rows: [&[f64]; 3] = [&[1.0, 0.5], &[0.2, 1.0], &[-1.0, 0.3]];
        let labels = [0, 0, 1];
        let b = batch(&rows, &labels, 2);
        let eps = 1e-2;
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let (u, v) = (rows[i], rows[j]);
                let c = (u[0] * v[0] + u[1] * v[1])
                    / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
                let delta = if labels[i] == labels[j] { 1.0 } else { 0.0 };
                expected += delta * c / ((1.0 - delta) * c + eps);
            }
        }
        let got = naive_pair_loss(&b, &ScaleConfig::with_alpha(1.0)).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn loss_floor_meets_target_above_bound() {
        for &k in &[2usize, 10, 1000] {
            for &eps in &[1e-2, 1e-4] {
                let a = optimal_alpha(k, eps, AlphaForm::ExactBound).unwrap();
                assert!((loss_floor(a, k) - eps).abs() < 1e-12 * eps.max(1.0) + 1e-15);
                assert!(loss_floor(a + 1e-6, k) < eps);
            }
        }
    }

    proptest! {
        #[test]
        fn raising_own_logit_lowers_loss(
            logits in proptest::collection::vec(-10.0..10.0f64, 2..12),
            own in 0usize..12,
            bump in 1e-6..5.0f64,
        ) {
            let own = own % logits.len();
            let per_sample = |z: &[f64]| log_sum_exp(z) - z[own];
            let mut raised = logits.clone();
            raised[own] += bump;
            prop_assert!(per_sample(&raised) < per_sample(&logits));
        }

        #[test]
        fn probability_rows_sum_to_one(
            seed_rows in proptest::collection::vec(proptest::collection::vec(-3.0..3.0f64, 4), 1..6),
            alpha in 0.1..20.0f64,
        ) {
            prop_assume!(seed_rows.iter().all(|r| l2_norm(r) > 1e-3));
            let labels: Vec<usize> = (0..seed_rows.len()).map(|i| i % 3).collect();
            let b = Batch::new(Matrix::from_rows(&seed_rows).unwrap(), labels, 3).unwrap();
            let bank = CentroidBank::parametric(
                Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]).unwrap(),
            ).unwrap();
            let out = coco_forward(&b, &bank, &ScaleConfig::with_alpha(alpha)).unwrap();
            for p in &out.probs {
                prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let recomputed: f64 = out.per_sample_losses().iter().sum();
            prop_assert!((recomputed - out.loss).abs() < 1e-10);
        }
    }
}
