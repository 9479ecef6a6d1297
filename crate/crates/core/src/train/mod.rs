//! Toy-scale training harness: an MLP feature extractor trained with SGD and
//! momentum under any of the supported losses.

pub mod checkpoint;
pub mod data;
pub mod mlp;
pub mod optim;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::baselines::{
    center_loss, center_update, mine_triplets, softmax_loss, triplet_batch_loss, CenterBank,
    LinearClassifier, TripletConfig, DEFAULT_CENTER_RATE, DEFAULT_CENTER_WEIGHT,
    DEFAULT_TRIPLET_MARGIN,
};
use crate::coco::{
    batch_centroids, coco_backward, coco_forward, optimal_alpha, AlphaForm, Batch, CentroidBank,
    CentroidMode, ScaleConfig, DEFAULT_PAIR_EPSILON, DEFAULT_TARGET_LOSS,
};
use crate::error::{Error, Result};
use crate::features::LabeledFeatures;
use crate::math::{argmax, dot, l2_norm, Matrix};

pub use checkpoint::Checkpoint;
pub use data::{load_idx, synth_clusters, Dataset, Split};
pub use mlp::Mlp;
pub use optim::{OptimizerConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Coco,
    Softmax,
    /// Softmax plus center loss.
    CenterSoftmax,
    /// Triplet loss alone on unit embeddings.
    Triplet,
    TripletSoftmax,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        Self::Coco,
        Self::Softmax,
        Self::CenterSoftmax,
        Self::Triplet,
        Self::TripletSoftmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Coco => "coco",
            Self::Softmax => "softmax",
            Self::CenterSoftmax => "center-softmax",
            Self::Triplet => "triplet",
            Self::TripletSoftmax => "triplet-softmax",
        }
    }

    fn uses_classifier(self) -> bool {
        matches!(
            self,
            Self::Softmax | Self::CenterSoftmax | Self::TripletSoftmax
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" | "center+softmax" => Ok(Self::CenterSoftmax),
            "triplet+softmax" => Ok(Self::TripletSoftmax),
            _ => Self::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown loss `{s}`"))),
        }
    }
}

impl Serialize for LossKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Feature scale for COCO: the closed form for the class count, or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSetting {
    Auto,
    Explicit(f64),
}

impl AlphaSetting {
    pub fn resolve(self, classes: usize) -> Result<f64> {
        match self {
            Self::Auto => optimal_alpha(classes, DEFAULT_TARGET_LOSS, AlphaForm::ClosedForm),
            Self::Explicit(a) if a > 0.0 && a.is_finite() => Ok(a),
            Self::Explicit(a) => Err(Error::InvalidArgument(format!(
                "alpha must be positive, got {a}"
            ))),
        }
    }
}

impl FromStr for AlphaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse::<f64>().map(Self::Explicit).map_err(|_| {
            Error::InvalidArgument(format!("alpha must be `auto` or a number, got `{s}`"))
        })
    }
}

impl fmt::Display for AlphaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Explicit(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for AlphaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => s.serialize_str("auto"),
            Self::Explicit(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(Self::Explicit(a)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub alpha: AlphaSetting,
    pub centroid_mode: CentroidMode,
    pub optimizer: OptimizerConfig,
    /// Weight of the center term in center+softmax.
    pub center_weight: f64,
    pub center_rate: f64,
    pub triplet_margin: f64,
    /// Weight of the triplet term in triplet+softmax.
    pub triplet_weight: f64,
    /// Standard deviation of the Gaussian initialization of head weights.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Coco,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            alpha: AlphaSetting::Auto,
            centroid_mode: CentroidMode::Parametric,
            optimizer: OptimizerConfig::default(),
            center_weight: DEFAULT_CENTER_WEIGHT,
            center_rate: DEFAULT_CENTER_RATE,
            triplet_margin: DEFAULT_TRIPLET_MARGIN,
            triplet_weight: 1.0,
            init_std: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        self.optimizer.validate()?;
        if !(self.triplet_margin > 0.0) {
            return Err(Error::InvalidArgument(
                "triplet margin must be positive".into(),
            ));
        }
        if !(self.center_rate > 0.0 && self.center_rate <= 1.0) {
            return Err(Error::InvalidArgument(
                "center update rate must lie in (0, 1]".into(),
            ));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::InvalidArgument("init std must be positive".into()));
        }
        if let AlphaSetting::Explicit(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "alpha must be positive, got {a}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Summed loss over the epoch divided by the number of samples.
    pub mean_loss: f64,
    /// Accuracy over the training set after the epoch.
    pub train_accuracy: f64,
    pub learning_rate: f64,
}

/// Trainable loss-side parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHead {
    pub kind: LossKind,
    /// COCO scale settings; present only for COCO.
    pub scale: Option<ScaleConfig>,
    pub centroid_mode: CentroidMode,
    /// Parametric COCO centroids.
    pub centroids: Option<Matrix>,
    pub classifier: Option<LinearClassifier>,
    pub centers: Option<CenterBank>,
    pub triplet: TripletConfig,
    pub center_weight: f64,
    pub triplet_weight: f64,
}

struct StepOutput {
    loss: f64,
    d_features: Matrix,
    d_centroids: Option<Matrix>,
    d_classifier: Option<(Matrix, Vec<f64>)>,
}

impl LossHead {
    /// Heads initialized from the untrained model's features: centroids and
    /// centers start at per-class feature means, classifier weights are
    /// Gaussian with zero biases. Centroids of classes without samples are
    /// Gaussian.
    fn init<R: Rng>(
        model: &Mlp,
        dataset: &Dataset,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let classes = dataset.classes;
        let needs_means = cfg.loss == LossKind::CenterSoftmax
            || (cfg.loss == LossKind::Coco && cfg.centroid_mode == CentroidMode::Parametric);
        let means = if needs_means {
            Some(class_means(
                &model.features(&dataset.inputs)?,
                &dataset.labels,
                classes,
            ))
        } else {
            None
        };

        let scale = if cfg.loss == LossKind::Coco {
            Some(ScaleConfig {
                alpha: cfg.alpha.resolve(classes)?,
                target_loss: DEFAULT_TARGET_LOSS,
                pair_epsilon: DEFAULT_PAIR_EPSILON,
            })
        } else {
            None
        };
        let centroids =
            if cfg.loss == LossKind::Coco && cfg.centroid_mode == CentroidMode::Parametric {
                let mut m = means.clone().expect("means computed");
                // A class absent from the training set has no mean to start
                // from; it gets a Gaussian row instead.
                let normal = Normal::new(0.0, cfg.init_std)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                for k in 0..classes {
                    if !dataset.labels.contains(&k) {
                        m.row_mut(k)
                            .iter_mut()
                            .for_each(|x| *x = normal.sample(rng));
                    }
                }
                // Fails on a present class whose initial mean feature is zero.
                CentroidBank::parametric(m.clone())?;
                Some(m)
            } else {
                None
            };
        let classifier = if cfg.loss.uses_classifier() {
            let normal = Normal::new(0.0, cfg.init_std)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let d = model.feature_dim();
            let w = (0..classes * d).map(|_| normal.sample(rng)).collect();
            Some(LinearClassifier {
                weights: Matrix::from_vec(classes, d, w)?,
                biases: vec![0.0; classes],
            })
        } else {
            None
        };
        let centers = if cfg.loss == LossKind::CenterSoftmax {
            Some(CenterBank::new(
                means.expect("means computed"),
                cfg.center_rate,
            )?)
        } else {
            None
        };
        Ok(Self {
            kind: cfg.loss,
            scale,
            centroid_mode: cfg.centroid_mode,
            centroids,
            classifier,
            centers,
            triplet: TripletConfig {
                margin: cfg.triplet_margin,
            },
            center_weight: cfg.center_weight,
            triplet_weight: cfg.triplet_weight,
        })
    }

    fn step<R: Rng>(&self, batch: &Batch, rng: &mut R) -> Result<StepOutput> {
        let mut loss = 0.0;
        let mut d_features = Matrix::zeros(batch.len(), batch.dim());
        let mut d_centroids = None;
        let mut d_classifier = None;
        let add = |acc: &mut Matrix, g: &Matrix, w: f64| {
            for (a, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += w * v;
            }
        };

        if let Some(scale) = &self.scale {
            let bank = match &self.centroids {
                Some(c) => CentroidBank::parametric(c.clone())?,
                None => batch_centroids(batch),
            };
            let out = coco_forward(batch, &bank, scale)?;
            let mut grads = coco_backward(batch, &bank, scale, &out)?;
            bank.chain_batch_means(batch, &mut grads);
            loss += out.loss;
            add(&mut d_features, &grads.d_features, 1.0);
            if self.centroids.is_some() {
                d_centroids = Some(grads.d_centroids);
            }
        }
        if let Some(clf) = &self.classifier {
            let out = softmax_loss(batch, clf)?;
            loss += out.loss;
            add(&mut d_features, &out.d_features, 1.0);
            d_classifier = Some((out.d_weights, out.d_biases));
        }
        if let Some(centers) = &self.centers {
            let (l, g) = center_loss(batch, centers)?;
            loss += self.center_weight * l;
            add(&mut d_features, &g, self.center_weight);
        }
        if matches!(self.kind, LossKind::Triplet | LossKind::TripletSoftmax) {
            let triplets = mine_triplets(batch, &self.triplet, rng)?;
            let out = triplet_batch_loss(batch.features(), &triplets, &self.triplet)?;
            loss += self.triplet_weight * out.loss;
            add(&mut d_features, &out.d_features, self.triplet_weight);
        }
        Ok(StepOutput {
            loss,
            d_features,
            d_centroids,
            d_classifier,
        })
    }

    /// Named tensors for checkpointing.
    pub fn tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        if let Some(c) = &self.centroids {
            out.push(("centroids".to_string(), c.clone()));
        }
        if let Some(clf) = &self.classifier {
            out.push(("classifier.weights".to_string(), clf.weights.clone()));
            let b = Matrix::from_vec(1, clf.biases.len(), clf.biases.clone()).expect("shape");
            out.push(("classifier.biases".to_string(), b));
        }
        if let Some(c) = &self.centers {
            out.push(("centers".to_string(), c.centers.clone()));
        }
        out
    }
}

fn class_means(features: &Matrix, labels: &[usize], classes: usize) -> Matrix {
    let mut sums = Matrix::zeros(classes, features.cols());
    let mut counts = vec![0usize; classes];
    for (f, &l) in features.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums.row_mut(l).iter_mut().zip(f) {
            *s += x;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(k).iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

fn nearest_by_cosine(feature: &[f64], refs: &Matrix) -> usize {
    let nf = l2_norm(feature).max(f64::MIN_POSITIVE);
    let scores: Vec<f64> = refs
        .iter_rows()
        .map(|r| {
            let nr = l2_norm(r);
            if nr == 0.0 {
                f64::NEG_INFINITY
            } else {
                dot(feature, r) / (nf * nr)
            }
        })
        .collect();
    argmax(&scores)
}

/// Predicted class per sample for a trained model and head.
///
/// COCO predicts the centroid with the highest cosine; classifier heads take
/// the largest logit; pure triplet (and COCO in batch mode) use the nearest
/// class mean of the features themselves.
pub fn predict(model: &Mlp, head: &LossHead, dataset: &Dataset) -> Result<Vec<usize>> {
    let feats = model.features(&dataset.inputs)?;
    let preds = if let Some(c) = &head.centroids {
        feats.iter_rows().map(|f| nearest_by_cosine(f, c)).collect()
    } else if let Some(clf) = &head.classifier {
        feats.iter_rows().map(|f| argmax(&clf.logits(f))).collect()
    } else {
        let means = class_means(&feats, &dataset.labels, dataset.classes);
        feats
            .iter_rows()
            .map(|f| nearest_by_cosine(f, &means))
            .collect()
    };
    Ok(preds)
}

pub fn accuracy(model: &Mlp, head: &LossHead, dataset: &Dataset) -> Result<f64> {
    let preds = predict(model, head, dataset)?;
    let hits = preds
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / dataset.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: TrainConfig,
    /// Resolved COCO scale, if COCO was trained.
    pub alpha: Option<f64>,
    pub per_epoch: Vec<EpochRecord>,
    pub head: LossHead,
}

/// Trains `model` in place.
///
/// Each epoch visits the samples in a fresh seeded order in mini-batches of
/// `batch_size` (the last batch may be smaller). Parameters follow the
/// gradient of the batch-mean loss; COCO centroids are optimized alongside
/// the network, center-loss centers follow their statistical update.
pub fn train(model: &mut Mlp, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if dataset.classes < 2 {
        return Err(Error::InvalidK(dataset.classes));
    }
    if model.input_dim() != dataset.input_dim() {
        return Err(Error::DimMismatch {
            expected: model.input_dim(),
            found: dataset.input_dim(),
        });
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut mining_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mining_rng.set_stream(2);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(3);

    let mut head = LossHead::init(model, dataset, cfg, &mut init_rng)?;
    let mut state = OptimizerState::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut per_epoch = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.rate_at(epoch, cfg.epochs);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (inputs, labels) = dataset.gather(chunk);
            let cache = model.forward(&inputs)?;
            let batch = match Batch::new(cache.output.clone(), labels, dataset.classes) {
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch: epoch + 1 }),
                other => other?,
            };
            let out = match head.step(&batch, &mut mining_rng) {
                Err(Error::NonFinite { .. }) | Err(Error::ZeroNorm { .. }) => {
                    return Err(Error::Diverged { epoch: epoch + 1 })
                }
                other => other?,
            };
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1 });
            }
            total += out.loss;

            let inv_m = 1.0 / batch.len() as f64;
            let mut d_feat = out.d_features;
            d_feat.as_mut_slice().iter_mut().for_each(|g| *g *= inv_m);
            let grads = model.backward(&cache, &d_feat);

            // Network gradients are already batch means through d_feat.
            let mut slot = 0;
            for (layer, g) in model.layers_mut().iter_mut().zip(&grads) {
                state.step(
                    slot,
                    layer.weights.as_mut_slice(),
                    g.weights.as_slice(),
                    lr,
                    &cfg.optimizer,
                    true,
                );
                state.step(
                    slot + 1,
                    &mut layer.biases,
                    &g.biases,
                    lr,
                    &cfg.optimizer,
                    false,
                );
                slot += 2;
            }
            if let (Some(c), Some(g)) = (head.centroids.as_mut(), out.d_centroids.as_ref()) {
                let g: Vec<f64> = g.as_slice().iter().map(|v| v * inv_m).collect();
                state.step(slot, c.as_mut_slice(), &g, lr, &cfg.optimizer, false);
            }
            slot += 1;
            if let (Some(clf), Some((gw, gb))) =
                (head.classifier.as_mut(), out.d_classifier.as_ref())
            {
                let gw: Vec<f64> = gw.as_slice().iter().map(|v| v * inv_m).collect();
                let gb: Vec<f64> = gb.iter().map(|v| v * inv_m).collect();
                state.step(
                    slot,
                    clf.weights.as_mut_slice(),
                    &gw,
                    lr,
                    &cfg.optimizer,
                    true,
                );
                state.step(slot + 1, &mut clf.biases, &gb, lr, &cfg.optimizer, false);
            }
            if let Some(centers) = head.centers.as_ref() {
                head.centers = Some(center_update(&batch, centers)?);
            }
        }
        let mean_loss = total / dataset.len() as f64;
        if !mean_loss.is_finite() || !model_is_finite(model) {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        per_epoch.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss,
            train_accuracy: accuracy(model, &head, dataset)?,
            learning_rate: lr,
        });
    }

    Ok(TrainRun {
        config: cfg.clone(),
        alpha: head.scale.map(|s| s.alpha),
        per_epoch,
        head,
    })
}

fn model_is_finite(model: &Mlp) -> bool {
    model
        .layers()
        .iter()
        .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
}

/// Network with Gaussian weights drawn from stream 0 of `seed`. The trainer
/// uses streams 1 to 3 of the same seed.
pub fn init_model(layer_sizes: &[usize], init_std: f64, seed: u64) -> Result<Mlp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::new(layer_sizes, init_std, &mut rng)
}

/// Feature-layer outputs for every sample, with their labels.
pub fn extract_features(model: &Mlp, dataset: &Dataset) -> Result<LabeledFeatures> {
    LabeledFeatures::new(model.features(&dataset.inputs)?, dataset.labels.clone())
}

/// One JSON document per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub run_id: String,
    pub config: serde_json::Value,
    pub per_epoch: Vec<EpochRecord>,
}

impl MetricsLog {
    /// `run_id` is derived from the config so identical runs share it.
    pub fn new(config: serde_json::Value, per_epoch: Vec<EpochRecord>) -> Self {
        Self {
            run_id: config_digest(&config),
            config,
            per_epoch,
        }
    }
}

/// First 16 hex digits of the SHA-256 of the compact JSON encoding.
pub fn config_digest(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
