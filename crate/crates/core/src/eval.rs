//! Feature-quality metrics: positive/negative cosine statistics, threshold
//! verification with ROC, and top-1 identification against a gallery padded
//! with distractors.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{format_real, LabeledFeatures};
use crate::math::{cosine_similarity, Matrix};

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;
pub const DEFAULT_CMC_RANKS: usize = 10;

/// Equal-width bins over [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl Histogram {
    fn new(bins: usize, positive: &[f64], negative: &[f64]) -> Self {
        let edges = (0..=bins)
            .map(|b| -1.0 + 2.0 * b as f64 / bins as f64)
            .collect();
        let count = |values: &[f64]| {
            let mut counts = vec![0usize; bins];
            for &c in values {
                let b = (((c + 1.0) / 2.0) * bins as f64).floor() as isize;
                counts[b.clamp(0, bins as isize - 1) as usize] += 1;
            }
            counts
        };
        Self {
            edges,
            positive: count(positive),
            negative: count(negative),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub positive_cosines: Vec<f64>,
    pub negative_cosines: Vec<f64>,
    pub histogram: Histogram,
    pub mean_pos: f64,
    pub mean_neg: f64,
    /// `mean_pos - mean_neg`.
    pub separation: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn pair_stats(set: &LabeledFeatures, max_pairs: usize, seed: u64) -> Result<PairStats> {
    pair_stats_with_bins(set, max_pairs, seed, DEFAULT_HISTOGRAM_BINS)
}

/// Cosines of up to `max_pairs` positive and `max_pairs` negative pairs.
///
/// When a kind has at most `max_pairs` distinct unordered pairs, all of them
/// are used; otherwise pairs are drawn uniformly (with replacement) from that
/// kind using the seeded generator.
pub fn pair_stats_with_bins(
    set: &LabeledFeatures,
    max_pairs: usize,
    seed: u64,
    bins: usize,
) -> Result<PairStats> {
    if set.len() < 2 {
        return Err(Error::InsufficientData(
            "pair statistics need at least two samples".into(),
        ));
    }
    if max_pairs == 0 || bins == 0 {
        return Err(Error::InvalidArgument(
            "max_pairs and bins must be positive".into(),
        ));
    }
    let classes = set.labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in set.labels.iter().enumerate() {
        members[l].push(i);
    }
    let n = set.len() as u128;
    let positive_total: u128 = members
        .iter()
        .map(|m| (m.len() as u128) * (m.len() as u128).saturating_sub(1) / 2)
        .sum();
    let negative_total = n * (n - 1) / 2 - positive_total;
    if positive_total == 0 {
        return Err(Error::InsufficientData("no class has two samples".into()));
    }
    if negative_total == 0 {
        return Err(Error::InsufficientData("only one class present".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = &set.labels;
    let positive_pairs: Vec<(usize, usize)> = if positive_total <= max_pairs as u128 {
        members
            .iter()
            .flat_map(|m| {
                m.iter()
                    .enumerate()
                    .flat_map(move |(a, &i)| m[a + 1..].iter().map(move |&j| (i, j)))
            })
            .collect()
    } else {
        let weights: Vec<u128> = members
            .iter()
            .map(|m| (m.len() as u128) * (m.len() as u128).saturating_sub(1) / 2)
            .collect();
        let by_class = WeightedIndex::new(weights.iter().map(|&w| w as f64))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (0..max_pairs)
            .map(|_| {
                let m = &members[by_class.sample(&mut rng)];
                let a = rng.random_range(0..m.len());
                let mut b = rng.random_range(0..m.len() - 1);
                if b >= a {
                    b += 1;
                }
                (m[a], m[b])
            })
            .collect()
    };
    let negative_pairs: Vec<(usize, usize)> = if negative_total <= max_pairs as u128 {
        (0..set.len())
            .flat_map(|i| {
                (i + 1..set.len())
                    .filter(move |&j| labels[i] != labels[j])
                    .map(move |j| (i, j))
            })
            .collect()
    } else {
        let mut out = Vec::with_capacity(max_pairs);
        while out.len() < max_pairs {
            let i = rng.random_range(0..set.len());
            let j = rng.random_range(0..set.len());
            if labels[i] != labels[j] {
                out.push((i, j));
            }
        }
        out
    };

    let cosines = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|&(i, j)| cosine_similarity(set.feature(i), set.feature(j)))
            .collect()
    };
    let positive_cosines = cosines(&positive_pairs)?;
    let negative_cosines = cosines(&negative_pairs)?;
    let mean_pos = mean(&positive_cosines);
    let mean_neg = mean(&negative_cosines);
    Ok(PairStats {
        histogram: Histogram::new(bins, &positive_cosines, &negative_cosines),
        positive_cosines,
        negative_cosines,
        mean_pos,
        mean_neg,
        separation: mean_pos - mean_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub best_threshold: f64,
    pub accuracy: f64,
    /// Ordered by decreasing threshold, i.e. non-decreasing FPR and TPR.
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// Verification over feature pairs scored by cosine similarity.
pub fn verify(pairs: &[(&[f64], &[f64], bool)]) -> Result<VerificationResult> {
    let scores = pairs
        .iter()
        .map(|(u, v, _)| cosine_similarity(u, v))
        .collect::<Result<Vec<_>>>()?;
    let same: Vec<bool> = pairs.iter().map(|p| p.2).collect();
    verify_scores(&scores, &same)
}

/// Threshold sweep over pair scores; a pair is declared "same" when its score
/// exceeds the threshold.
///
/// Candidate thresholds are `-inf`, the midpoints between consecutive distinct
/// scores, and `+inf`. The best threshold is the lowest candidate reaching the
/// maximum accuracy.
pub fn verify_scores(scores: &[f64], same: &[bool]) -> Result<VerificationResult> {
    if scores.len() != same.len() {
        return Err(Error::DimMismatch {
            expected: scores.len(),
            found: same.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: "verification scores".into(),
        });
    }
    let positives = same.iter().filter(|&&s| s).count();
    let negatives = same.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InsufficientData(
            "verification needs both same and different pairs".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sweep upward: at threshold t everything at or below t is "different".
    let total = scores.len() as f64;
    let mut below_pos = 0usize;
    let mut below_neg = 0usize;
    let mut sweep = vec![(f64::NEG_INFINITY, 0usize, 0usize)];
    let mut idx = 0;
    while idx < order.len() {
        let v = scores[order[idx]];
        while idx < order.len() && scores[order[idx]] == v {
            if same[order[idx]] {
                below_pos += 1;
            } else {
                below_neg += 1;
            }
            idx += 1;
        }
        let t = if idx < order.len() {
            0.5 * (v + scores[order[idx]])
        } else {
            f64::INFINITY
        };
        sweep.push((t, below_pos, below_neg));
    }

    let mut best = (f64::NEG_INFINITY, -1.0);
    let mut roc = Vec::with_capacity(sweep.len());
    for &(t, bp, bn) in &sweep {
        let tp = positives - bp;
        let acc = (tp + bn) as f64 / total;
        if acc > best.1 {
            best = (t, acc);
        }
        roc.push(RocPoint {
            threshold: t,
            fpr: (negatives - bn) as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    roc.reverse();
    let auc = roc
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
        .sum::<f64>();
    Ok(VerificationResult {
        best_threshold: best.0,
        accuracy: best.1,
        roc,
        auc,
    })
}

/// Samples up to `max_pairs` same-label and `max_pairs` different-label pairs
/// and returns their cosine scores with the same/different flag.
pub fn sample_verification_pairs(
    set: &LabeledFeatures,
    max_pairs: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let stats = pair_stats(set, max_pairs, seed)?;
    let mut scores = stats.positive_cosines;
    let mut same = vec![true; scores.len()];
    same.extend(std::iter::repeat_n(false, stats.negative_cosines.len()));
    scores.extend(stats.negative_cosines);
    Ok((scores, same))
}

/// 1-based rank of the best-placed mate, with ties broken by lower index.
pub fn rank_of_best_mate(scores: &[f64], is_mate: &[bool]) -> Option<usize> {
    let best = (0..scores.len())
        .filter(|&j| is_mate[j])
        .min_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)))?;
    let beaten_by = (0..scores.len())
        .filter(|&j| scores[j] > scores[best] || (scores[j] == scores[best] && j < best))
        .count();
    Some(beaten_by + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub distractor_counts: Vec<usize>,
    /// Mean top-1 accuracy per distractor count.
    pub top1_accuracy: Vec<f64>,
    /// `cmc[c][r]` is the fraction of probes with a mate within rank `r + 1`.
    pub cmc: Vec<Vec<f64>>,
    pub trials: usize,
}

/// `count` standard Gaussian vectors of length `dim`, used as a distractor
/// pool of identities unrelated to any probe.
pub fn random_features(count: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..count * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(count, dim, data).expect("shape matches data length")
}

/// Top-1 identification of `probes` against `gallery` plus random subsets of
/// the `distractors` pool.
///
/// Each trial shuffles the pool once and uses its first `n` entries for
/// distractor count `n`, so larger counts extend smaller ones. Candidates are
/// ranked by cosine similarity; gallery entries come before distractors and
/// ties go to the lower candidate index.
pub fn identify(
    probes: &LabeledFeatures,
    gallery: &LabeledFeatures,
    distractors: &Matrix,
    distractor_counts: &[usize],
    trials: usize,
    seed: u64,
) -> Result<IdentificationResult> {
    identify_with_ranks(
        probes,
        gallery,
        distractors,
        distractor_counts,
        trials,
        seed,
        DEFAULT_CMC_RANKS,
    )
}

pub fn identify_with_ranks(
    probes: &LabeledFeatures,
    gallery: &LabeledFeatures,
    distractors: &Matrix,
    distractor_counts: &[usize],
    trials: usize,
    seed: u64,
    max_rank: usize,
) -> Result<IdentificationResult> {
    if probes.is_empty() || trials == 0 || max_rank == 0 {
        return Err(Error::InvalidArgument(
            "need probes, trials >= 1 and max_rank >= 1".into(),
        ));
    }
    if let Some(&n) = distractor_counts.iter().find(|&&n| n > distractors.rows()) {
        return Err(Error::InvalidArgument(format!(
            "distractor count {n} exceeds pool of {}",
            distractors.rows()
        )));
    }
    for &l in &probes.labels {
        if !gallery.labels.contains(&l) {
            return Err(Error::MissingMate {
                identity: l as u64 + 1,
            });
        }
    }

    // Scores against the fixed gallery and the whole pool, computed once.
    let mut gallery_scores = Vec::with_capacity(probes.len());
    let mut pool_scores = Vec::with_capacity(probes.len());
    for p in 0..probes.len() {
        let f = probes.feature(p);
        gallery_scores.push(
            (0..gallery.len())
                .map(|g| cosine_similarity(f, gallery.feature(g)))
                .collect::<Result<Vec<_>>>()?,
        );
        pool_scores.push(
            distractors
                .iter_rows()
                .map(|d| cosine_similarity(f, d))
                .collect::<Result<Vec<_>>>()?,
        );
    }

    let mut hits = vec![vec![0usize; max_rank]; distractor_counts.len()];
    let mut pool: Vec<usize> = (0..distractors.rows()).collect();
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        pool.shuffle(&mut rng);
        for (c, &n) in distractor_counts.iter().enumerate() {
            for p in 0..probes.len() {
                let mut scores = gallery_scores[p].clone();
                scores.extend(pool[..n].iter().map(|&d| pool_scores[p][d]));
                let mut is_mate: Vec<bool> = gallery
                    .labels
                    .iter()
                    .map(|&l| l == probes.labels[p])
                    .collect();
                is_mate.resize(scores.len(), false);
                let rank = rank_of_best_mate(&scores, &is_mate).expect("mate checked");
                for r in (rank - 1)..max_rank {
                    hits[c][r] += 1;
                }
            }
        }
    }
    let denom = (trials * probes.len()) as f64;
    let cmc: Vec<Vec<f64>> = hits
        .iter()
        .map(|row| row.iter().map(|&h| h as f64 / denom).collect())
        .collect();
    Ok(IdentificationResult {
        distractor_counts: distractor_counts.to_vec(),
        top1_accuracy: cmc.iter().map(|row| row[0]).collect(),
        cmc,
        trials,
    })
}

pub fn write_histogram_csv<W: Write>(
    mut w: W,
    stats: &PairStats,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(
        w,
        "# bin_lo,bin_hi: bin edges over [-1, 1]; last bin includes 1"
    )?;
    writeln!(w, "# positive,negative: pair counts per bin")?;
    writeln!(w, "bin_lo,bin_hi,positive,negative")?;
    let h = &stats.histogram;
    for b in 0..h.positive.len() {
        writeln!(
            w,
            "{},{},{},{}",
            format_real(h.edges[b]),
            format_real(h.edges[b + 1]),
            h.positive[b],
            h.negative[b]
        )?;
    }
    Ok(())
}

pub fn write_roc_csv<W: Write>(
    mut w: W,
    result: &VerificationResult,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "# threshold: pairs scoring above it are declared same")?;
    writeln!(
        w,
        "# fpr,tpr: false and true positive rates at that threshold"
    )?;
    writeln!(w, "threshold,fpr,tpr")?;
    for p in &result.roc {
        writeln!(
            w,
            "{},{},{}",
            format_real(p.threshold),
            format_real(p.fpr),
            format_real(p.tpr)
        )?;
    }
    Ok(())
}

pub fn write_cmc_csv<W: Write>(
    mut w: W,
    result: &IdentificationResult,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(
        w,
        "# distractors: number of distractors added to the gallery"
    )?;
    writeln!(
        w,
        "# rank: 1-based; accuracy: fraction of probes with a mate at or above the rank"
    )?;
    writeln!(w, "distractors,rank,accuracy")?;
    for (c, &n) in result.distractor_counts.iter().enumerate() {
        for (r, acc) in result.cmc[c].iter().enumerate() {
            writeln!(w, "{n},{},{}", r + 1, format_real(*acc))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: &[&[f64]], labels: &[usize]) -> LabeledFeatures {
        LabeledFeatures::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn orthogonal_classes_separate_by_one() {
        let s = set(
            &[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], &[0.0, 3.0]],
            &[0, 0, 1, 1],
        );
        let st = pair_stats(&s, 100, 0).unwrap();
        assert_eq!(st.positive_cosines.len(), 2);
        assert_eq!(st.negative_cosines.len(), 4);
        assert_eq!(st.separation, 1.0);
        assert_eq!(st.separation, st.mean_pos - st.mean_neg);
        let total: usize = st
            .histogram
            .positive
            .iter()
            .chain(&st.histogram.negative)
            .sum();
        assert_eq!(total, 6);
        assert_eq!(st.histogram.positive[49], 2);
        assert_eq!(st.histogram.negative[25], 4);
    }

    #[test]
    fn one_class_is_insufficient() {
        let s = set(&[&[1.0, 0.0], &[2.0, 1.0]], &[0, 0]);
        assert!(matches!(
            pair_stats(&s, 10, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn sampled_pairs_respect_kind_and_seed() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.3])
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let s = LabeledFeatures::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
        let a = pair_stats(&s, 25, 9).unwrap();
        let b = pair_stats(&s, 25, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.positive_cosines.len(), 25);
        assert_eq!(a.negative_cosines.len(), 25);
    }

    #[test]
    fn verification_examples() {
        let r = verify_scores(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.best_threshold > 0.2 && r.best_threshold < 0.8);
        assert!((r.auc - 1.0).abs() < 1e-15);

        let r = verify_scores(&[0.5; 5], &[true, false, false, true, false]).unwrap();
        assert!((r.accuracy - 0.6).abs() < 1e-15);
        assert!((r.auc - 0.5).abs() < 1e-15);

        assert!(verify_scores(&[0.5, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn verify_from_features() {
        let a = [1.0, 0.0];
        let b = [0.9, 0.1];
        let c = [0.0, 1.0];
        let r = verify(&[(&a, &b, true), (&a, &c, false)]).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn identification_examples() {
        let probes = set(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], &[0, 1]);
        let gallery = set(&[&[1.0, 0.1, 0.0], &[0.1, 1.0, 0.0]], &[0, 1]);
        let none = Matrix::zeros(0, 3);
        let r = identify(&probes, &gallery, &none, &[0], 3, 1).unwrap();
        assert_eq!(r.top1_accuracy, vec![1.0]);

        // Distractors orthogonal to every probe never beat an exact mate.
        let exact = set(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], &[0, 1]);
        let pool =
            Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, -2.0], [0.0, 0.0, 0.5]]).unwrap();
        let r = identify(&probes, &exact, &pool, &[1, 3], 4, 2).unwrap();
        assert_eq!(r.top1_accuracy, vec![1.0, 1.0]);

        let lonely = set(&[&[1.0, 0.0, 0.0]], &[7]);
        assert!(matches!(
            identify(&lonely, &gallery, &none, &[0], 1, 0),
            Err(Error::MissingMate { identity: 8 })
        ));
    }

    #[test]
    fn identification_matches_exhaustive_ranking() {
        let probes = set(&[&[1.0, 0.2], &[-0.3, 1.0], &[0.7, -0.7]], &[0, 1, 2]);
        let gallery = set(
            &[&[0.9, 0.5], &[0.0, 1.0], &[1.0, -0.2], &[-1.0, 0.1]],
            &[0, 1, 2, 3],
        );
        let pool = Matrix::from_rows(&[
            [1.0, 0.0],
            [0.6, -0.8],
            [-0.5, 0.9],
            [0.95, 0.3],
            [0.2, 1.0],
        ])
        .unwrap();
        let r = identify_with_ranks(&probes, &gallery, &pool, &[5], 1, 0, 4).unwrap();

        // With every distractor present the trial order is irrelevant.
        let mut expected_hits = 0;
        for p in 0..3 {
            let mut cands: Vec<(f64, usize, bool)> = Vec::new();
            for g in 0..4 {
                let s = cosine_similarity(probes.feature(p), gallery.feature(g)).unwrap();
                cands.push((s, g, gallery.labels[g] == probes.labels[p]));
            }
            for d in 0..5 {
                let s = cosine_similarity(probes.feature(p), pool.row(d)).unwrap();
                cands.push((s, 4 + d, false));
            }
            cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            if cands[0].2 {
                expected_hits += 1;
            }
        }
        assert_eq!(r.top1_accuracy[0], expected_hits as f64 / 3.0);
    }

    #[test]
    fn nested_pools_never_raise_accuracy() {
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i as f64 * 0.7).cos(), (i as f64 * 1.3).sin(), 0.1])
            .collect();
        let pool = Matrix::from_rows(&rows).unwrap();
        let probes = set(
            &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.5, 0.5, 0.5]],
            &[0, 1, 2],
        );
        let gallery = set(
            &[&[0.8, 0.3, 0.1], &[0.2, 0.9, -0.1], &[0.1, 0.5, 0.9]],
            &[0, 1, 2],
        );
        let r = identify(&probes, &gallery, &pool, &[0, 5, 20, 60], 10, 3).unwrap();
        for w in r.top1_accuracy.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    proptest! {
        #[test]
        fn verify_accuracy_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-1.0..1.0f64, 4..40),
            flags in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let same: Vec<bool> = flags[..scores.len()].to_vec();
            prop_assume!(same.iter().any(|&s| s) && same.iter().any(|&s| !s));
            let r0 = verify_scores(&scores, &same).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
            let r1 = verify_scores(&t, &same).unwrap();
            prop_assert_eq!(r0.accuracy, r1.accuracy);
            prop_assert!((r0.auc - r1.auc).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r0.auc));
            for w in r0.roc.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }

        #[test]
        fn top1_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-1.0..1.0f64, 2..30),
            mates in proptest::collection::vec(any::<bool>(), 30),
        ) {
            let is_mate = &mates[..scores.len()];
            prop_assume!(is_mate.iter().any(|&m| m));
            let t: Vec<f64> = scores.iter().map(|s| s.atan() * 5.0 - 1.0).collect();
            prop_assert_eq!(rank_of_best_mate(&scores, is_mate), rank_of_best_mate(&t, is_mate));
        }
    }
}
