//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#![allow(clippy::excessive_precision)]

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cocodesk_core::align::{apply_affine, fit_affine, max_residual, AffineMap, Point};
use cocodesk_core::coco::loss_floor;
use cocodesk_core::eval::{identify, pair_stats, random_features};
use cocodesk_core::fusion::{
    assign_identity, calibrate, fit_logistic, merge_scores, sigmoid, Calibration, RegionScores,
    RegionTable,
};
use cocodesk_core::gradcheck::{check_standard_grid, CheckedLoss};
use cocodesk_core::train::data::{
    parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels,
};
use cocodesk_core::train::{
    extract_features, init_model, load_idx, synth_clusters, train, Dataset, LossKind, Mlp, Split,
    TrainConfig, TrainRun,
};
use cocodesk_core::{
    coco_backward, coco_forward, optimal_alpha, AlphaForm, Batch, CentroidBank, Error, Matrix,
    ScaleConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Network used by every synthetic training criterion; matches the CLI
/// defaults (one hidden layer of 64, 32-dimensional features).
const SYNTH_LAYERS: [usize; 3] = [16, 64, 32];
const SYNTH_DATA_SEED: u64 = 42;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Batch, CentroidBank, ScaleConfig) {
    let d = rng.random_range(2..=64);
    let k = rng.random_range(2..=100);
    let m = rng.random_range(1..=16);
    let labels = (0..m).map(|_| rng.random_range(0..k)).collect();
    let batch = Batch::new(random_matrix(rng, m, d, 3.0), labels, k).unwrap();
    let bank = CentroidBank::parametric(random_matrix(rng, k, d, 1.0)).unwrap();
    let cfg = ScaleConfig::with_alpha(rng.random_range(0.5..12.0));
    (batch, bank, cfg)
}

fn train_synth(data: &Dataset, loss: LossKind, seed: u64) -> (Mlp, TrainRun) {
    let mut model = init_model(&SYNTH_LAYERS, 0.05, seed).unwrap();
    let cfg = TrainConfig {
        loss,
        seed,
        ..TrainConfig::default()
    };
    let run = train(&mut model, data, &cfg).unwrap();
    (model, run)
}

fn sample_variance(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for loss in CheckedLoss::ALL {
        let r = check_standard_grid(loss, 12, 1).unwrap();
        pass &= r.checked >= 100 && r.max_relative_error < 1e-5;
        parts.push(format!(
            "{} {} configs max err {:.1e}",
            loss.name(),
            r.checked,
            r.max_relative_error
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    outcome(pass, format!("{}; {secs:.1} s", parts.join(", ")))
}

fn loss_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (batch, bank, cfg) = random_problem(&mut rng);
        let out = coco_forward(&batch, &bank, &cfg).unwrap();
        let recomputed: f64 = batch
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| -out.probs[i][l].ln())
            .sum();
        worst = worst.max((recomputed - out.loss).abs());
    }
    outcome(
        worst < 1e-10,
        format!("1000 batches, max |loss - sum(-ln p)| {worst:.1e}"),
    )
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_scale, mut worst_radial): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let (batch, bank, cfg) = random_problem(&mut rng);
        let base = coco_forward(&batch, &bank, &cfg).unwrap();
        let grads = coco_backward(&batch, &bank, &cfg, &base).unwrap();
        for i in 0..batch.len() {
            for c in [1e-3, 1.0, 1e3] {
                let mut f = batch.features().clone();
                f.row_mut(i).iter_mut().for_each(|x| *x *= c);
                let scaled = Batch::new(f, batch.labels().to_vec(), batch.classes()).unwrap();
                let loss = coco_forward(&scaled, &bank, &cfg).unwrap().loss;
                worst_scale =
                    worst_scale.max((loss - base.loss).abs() / base.loss.abs().max(1e-300));
            }
            let g = grads.d_features.row(i);
            let f = batch.features().row(i);
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn > 0.0 {
                let dot: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
                worst_radial = worst_radial.max(dot.abs() / (gn * fnorm));
            }
        }
    }
    outcome(
        worst_scale < 1e-9 && worst_radial < 1e-10,
        format!("max relative loss change {worst_scale:.1e}, max radial cosine {worst_radial:.1e}"),
    )
}

/// Exact bounds evaluated independently with 40-digit arithmetic.
const ALPHA_ORACLE: [(f64, f64, f64); 12] = [
    (2.0, 1e-2, 2.300083009662448459),
    (2.0, 1e-4, 4.6051451857797580347),
    (2.0, 1e-6, 6.9077550289821162187),
    (10.0, 1e-2, 3.3986952983305581504),
    (10.0, 1e-4, 5.7037574744478677261),
    (10.0, 1e-6, 8.0063673176502259101),
    (1e3, 1e-2, 5.7534603989867252183),
    (1e3, 1e-4, 8.058522575104034794),
    (1e3, 1e-6, 10.361132418306392978),
    (1e6, 1e-2, 9.2078377886443355109),
    (1e6, 1e-4, 11.512899964761645087),
    (1e6, 1e-6, 13.815509807964003271),
];

fn alpha_bound() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut floors_ok = true;
    for (k, eps, oracle) in ALPHA_ORACLE {
        let k = k as usize;
        let alpha = optimal_alpha(k, eps, AlphaForm::ExactBound).unwrap();
        worst_rel = worst_rel.max((alpha - oracle).abs() / oracle);
        let a = alpha + 1e-9;
        let direct = (a.exp() + (k as f64 - 1.0) * (-a).exp()).ln() - a;
        floors_ok &= direct < eps && loss_floor(a, k) < eps;
    }
    outcome(
        worst_rel < 1e-12 && floors_ok,
        format!(
            "12 (K, eps) cells, max relative error {worst_rel:.1e}, floor below eps: {floors_ok}"
        ),
    )
}

fn pair_separation() -> Outcome {
    let start = Instant::now();
    let data = synth_clusters(4, 16, 200, 0.1, SYNTH_DATA_SEED).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let (mc, rc) = train_synth(&data, LossKind::Coco, seed);
        let (ms, rs) = train_synth(&data, LossKind::Softmax, seed);
        let sc = pair_stats(&extract_features(&mc, &data).unwrap(), 1_000_000, 0).unwrap();
        let ss = pair_stats(&extract_features(&ms, &data).unwrap(), 1_000_000, 0).unwrap();
        let (ac, as_) = (
            rc.per_epoch.last().unwrap().train_accuracy,
            rs.per_epoch.last().unwrap().train_accuracy,
        );
        let gap = sc.separation - ss.separation;
        pass &= gap >= 0.05 && ac >= 0.99 && as_ >= 0.99;
        parts.push(format!(
            "seed {seed}: coco {:.3} softmax {:.3} gap {gap:.3} acc {ac:.3}/{as_:.3}",
            sc.separation, ss.separation
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    outcome(pass, format!("{}; {secs:.1} s", parts.join("; ")))
}

fn loss_curves() -> Outcome {
    let data = synth_clusters(4, 16, 200, 0.1, SYNTH_DATA_SEED).unwrap();
    let mut monotone = true;
    let mut worst_rise: f64 = 0.0;
    let (mut var_coco, mut var_triplet) = (0.0, 0.0);
    for seed in 1..=5 {
        let (_, rc) = train_synth(&data, LossKind::Coco, seed);
        let (_, rt) = train_synth(&data, LossKind::Triplet, seed);
        let lc: Vec<f64> = rc.per_epoch.iter().map(|e| e.mean_loss).collect();
        let lt: Vec<f64> = rt.per_epoch.iter().map(|e| e.mean_loss).collect();
        for t in 3..lc.len() {
            let rise = (lc[t] - lc[t - 1]) / lc[t];
            worst_rise = worst_rise.max(rise);
            monotone &= rise <= 0.05;
        }
        // Epoch-to-epoch changes across the final 10 epochs.
        let diffs =
            |l: &[f64]| -> Vec<f64> { l[l.len() - 11..].windows(2).map(|w| w[1] - w[0]).collect() };
        var_coco += sample_variance(&diffs(&lc));
        var_triplet += sample_variance(&diffs(&lt));
    }
    let ratio = var_triplet / var_coco;
    outcome(
        monotone && ratio >= 3.0,
        format!(
            "coco worst relative rise after epoch 3 {worst_rise:.4}; triplet/coco variance of final-10 epoch changes over 5 seeds {ratio:.1}"
        ),
    )
}

fn identification() -> Outcome {
    let per_class = 52;
    let full = synth_clusters(20, 16, per_class, 0.1, 5).unwrap();
    let pick = |range: std::ops::Range<usize>| {
        let idx: Vec<usize> = (0..20)
            .flat_map(|k| range.clone().map(move |s| k * per_class + s))
            .collect();
        let (m, l) = full.gather(&idx);
        Dataset::new(m, l, 20, Split::Train).unwrap()
    };
    let (train_set, gallery, probes) = (pick(0..50), pick(50..51), pick(51..52));
    let pool = random_features(1000, *SYNTH_LAYERS.last().unwrap(), 11);
    let counts = [10, 100, 1000];
    let mut top1 = Vec::new();
    for loss in [LossKind::Coco, LossKind::Softmax] {
        let (model, _) = train_synth(&train_set, loss, 1);
        let r = identify(
            &extract_features(&model, &probes).unwrap(),
            &extract_features(&model, &gallery).unwrap(),
            &pool,
            &counts,
            20,
            7,
        )
        .unwrap();
        top1.push(r.top1_accuracy);
    }
    let (coco, softmax) = (&top1[0], &top1[1]);
    let non_increasing = coco.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        non_increasing && coco[2] >= softmax[2],
        format!("top-1 at {counts:?} distractors: coco {coco:?}, softmax {softmax:?}"),
    )
}

/// Straight loops over regions, probes and references.
fn brute_force_assign(rs: &RegionScores, weights: &[f64], cals: &[Calibration]) -> Vec<u64> {
    let mut labels = Vec::new();
    for i in 0..rs.probes() {
        let mut best_j = 0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..rs.references() {
            let mut num = 0.0;
            let mut den = 0.0;
            for r in 0..rs.regions.len() {
                if let Some(s) = rs.regions[r].scores[i][j] {
                    num += weights[r] / (1.0 + (-(cals[r].beta0 + cals[r].beta1 * s)).exp());
                    den += weights[r];
                }
            }
            let v = num / den;
            if v > best {
                best = v;
                best_j = j;
            }
        }
        labels.push(rs.reference_labels[best_j]);
    }
    labels
}

fn fusion_pipeline() -> Outcome {
    let mut worst_beta: f64 = 0.0;
    for seed in 1..=3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let same: Vec<bool> = scores
            .iter()
            .map(|&s| rng.random::<f64>() < sigmoid(-2.0 + 4.0 * s))
            .collect();
        let fit = fit_logistic(&scores, &same, 100, 1e-9).unwrap();
        worst_beta = worst_beta
            .max((fit.calibration.beta0 + 2.0).abs())
            .max((fit.calibration.beta1 - 4.0).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut oracle_ok, mut affine_ok) = (true, true);
    for _ in 0..50 {
        let regions: Vec<RegionTable> = (0..5)
            .map(|r| RegionTable {
                name: format!("region{r}"),
                scores: (0..20)
                    .map(|_| {
                        (0..50)
                            .map(|_| {
                                // Region 0 is always observed so no pair is empty.
                                (r == 0 || rng.random::<f64>() > 0.2)
                                    .then(|| rng.random_range(-1.0..1.0))
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let rs = RegionScores {
            reference_labels: (0..50).map(|_| rng.random_range(1..=30)).collect(),
            probe_labels: None,
            regions,
        };
        let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let cals: Vec<Calibration> = (0..5)
            .map(|_| Calibration {
                beta0: rng.random_range(-3.0..3.0),
                beta1: rng.random_range(0.5..8.0),
            })
            .collect();
        let merged = merge_scores(&rs, &weights, &cals).unwrap();
        let assigned = assign_identity(&merged, &rs.reference_labels).unwrap();
        oracle_ok &= assigned == brute_force_assign(&rs, &weights, &cals);
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(0.01..100.0));
        let mut rescaled = merged.clone();
        rescaled
            .as_mut_slice()
            .iter_mut()
            .for_each(|s| *s = a + b * *s);
        affine_ok &= assign_identity(&rescaled, &rs.reference_labels).unwrap() == assigned;
    }
    let calibrate_ok = (calibrate(1.0, &Calibration::IDENTITY) - 0.7310585786300049).abs() < 1e-15;
    outcome(
        worst_beta < 0.15 && oracle_ok && affine_ok && calibrate_ok,
        format!(
            "planted (-2, 4) max error {worst_beta:.3}; 50 random 5x20x50 tables match brute force: {oracle_ok}; affine rescaling invariant: {affine_ok}"
        ),
    )
}

fn affine_alignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 100 {
        let map = AffineMap {
            a: [
                [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            ],
            b: [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)],
        };
        if map.determinant().abs() < 0.05 {
            continue;
        }
        let z = rng.random_range(3..=12);
        let p: Vec<Point> = (0..z)
            .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)])
            .collect();
        let q = apply_affine(&map, &p);
        let fit = fit_affine(&p, &q).unwrap();
        worst = worst.max(max_residual(&fit, &p, &q));
        instances += 1;
    }
    let mut collinear_ok = true;
    for _ in 0..20 {
        let (o, d) = (
            [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        );
        let p: Vec<Point> = (0..rng.random_range(3..8))
            .map(|_| {
                let t: f64 = rng.random_range(-4.0..4.0);
                [o[0] + t * d[0], o[1] + t * d[1]]
            })
            .collect();
        collinear_ok &= matches!(fit_affine(&p, &p), Err(Error::DegenerateGeometry));
    }
    outcome(
        worst < 1e-10 && collinear_ok,
        format!(
            "100 planted maps, max residual {worst:.1e}; collinear sets rejected: {collinear_ok}"
        ),
    )
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cocodesk"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Three noisy regions scoring 10 probes against 12 references, with a
/// fifth of the entries missing outside the first region.
fn labelled_scores(seed: u64) -> RegionScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference_labels: Vec<u64> = (0..12).collect();
    let probe_labels: Vec<u64> = (0..10).map(|_| rng.random_range(0..12)).collect();
    let regions = (0..3)
        .map(|r| RegionTable {
            name: format!("region{r}"),
            scores: probe_labels
                .iter()
                .map(|&p| {
                    reference_labels
                        .iter()
                        .map(|&q| {
                            let signal = if p == q { 0.5 } else { 0.0 };
                            (r == 0 || rng.random::<f64>() > 0.2).then(|| {
                                signal + 0.3 * (r as f64 + 1.0) * rng.random_range(-1.0..1.0)
                            })
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    RegionScores {
        reference_labels,
        probe_labels: Some(probe_labels),
        regions,
    }
}

fn same_files(a: &Path, b: &Path, files: &[&str]) -> bool {
    files
        .iter()
        .all(|f| match (fs::read(a.join(f)), fs::read(b.join(f))) {
            (Ok(x), Ok(y)) => x == y,
            _ => false,
        })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut checked = 0;
    let mut all_same = true;
    for loss in ["coco", "triplet"] {
        let args = ["train", "--loss", loss, "--seed", "7", "--epochs", "5"];
        let (a, b) = (
            root.join(format!("{loss}-a")),
            root.join(format!("{loss}-b")),
        );
        all_same &= run_cli(&args, &a) && run_cli(&args, &b);
        let files = ["metrics.json", "features.csv", "checkpoint.bin"];
        all_same &= same_files(&a, &b, &files);
        checked += files.len();
    }
    let features = root.join("coco-a").join("features.csv");
    let features = features.to_str().unwrap();
    let (validation, test) = (root.join("validation.json"), root.join("test.json"));
    fs::write(&validation, labelled_scores(21).to_json().unwrap()).unwrap();
    fs::write(&test, labelled_scores(22).to_json().unwrap()).unwrap();
    let (validation, test) = (validation.to_str().unwrap(), test.to_str().unwrap());
    for (name, args, files) in [
        (
            "pairs",
            vec!["pairs", "--features", features, "--seed", "3"],
            vec!["pairs.json", "histogram.csv"],
        ),
        (
            "verify",
            vec!["verify", "--features", features, "--seed", "3"],
            vec!["verification.json", "roc.csv"],
        ),
        (
            "identify",
            vec![
                "identify",
                "--probes",
                features,
                "--gallery",
                features,
                "--seed",
                "3",
                "--trials",
                "3",
            ],
            vec!["identification.json", "cmc.csv"],
        ),
        (
            "fuse",
            vec!["fuse", "--validation", validation, "--test", test],
            vec!["calibration.json", "assignments.json"],
        ),
    ] {
        let (a, b) = (
            root.join(format!("{name}-a")),
            root.join(format!("{name}-b")),
        );
        all_same &= run_cli(&args, &a) && run_cli(&args, &b);
        all_same &= same_files(&a, &b, &files);
        checked += files.len();
    }
    outcome(
        all_same,
        format!("{checked} output files compared across repeated runs, identical: {all_same}"),
    )
}

fn idx_parsing() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Vec<u8>> = (0..10)
        .map(|i| (0..784).map(|p| ((i * 31 + p * 7) % 256) as u8).collect())
        .collect();
    let labels: Vec<u8> = (0..10).map(|i| (i * 3 % 10) as u8).collect();
    let (img_path, lbl_path) = (dir.path().join("images.idx"), dir.path().join("labels.idx"));
    let mut img = Vec::new();
    write_idx_images(&mut img, 28, 28, &images).unwrap();
    let mut lbl = Vec::new();
    write_idx_labels(&mut lbl, &labels).unwrap();
    fs::write(&img_path, &img).unwrap();
    fs::write(&lbl_path, &lbl).unwrap();

    let ds = load_idx(&img_path, &lbl_path).unwrap();
    let mut round_trip = ds.len() == 10 && ds.input_dim() == 784;
    round_trip &= ds.labels == labels.iter().map(|&l| l as usize).collect::<Vec<_>>();
    for (i, im) in images.iter().enumerate() {
        for (p, &v) in im.iter().enumerate() {
            round_trip &= ds.inputs.get(i, p) == v as f64 / 255.0;
            round_trip &= (ds.inputs.get(i, p) * 255.0).round() as u8 == v;
        }
    }

    let mut bad_header = img.clone();
    bad_header[3] = 0x01;
    let mut rejects = matches!(parse_idx_images(&bad_header), Err(Error::BadMagic { .. }));
    rejects &= matches!(parse_idx_labels(&img), Err(Error::BadMagic { .. }));
    rejects &= matches!(
        parse_idx_images(&img[..10]),
        Err(Error::TruncatedFile { .. })
    );
    rejects &= matches!(
        parse_idx_images(&img[..img.len() - 1]),
        Err(Error::TruncatedFile { .. })
    );
    let mut short_labels = Vec::new();
    write_idx_labels(&mut short_labels, &labels[..9]).unwrap();
    fs::write(&lbl_path, &short_labels).unwrap();
    rejects &= matches!(
        load_idx(&img_path, &lbl_path),
        Err(Error::CountMismatch {
            images: 10,
            labels: 9
        })
    );
    rejects &= matches!(
        parse_idx_labels(&lbl[..lbl.len() - 2]),
        Err(Error::TruncatedFile { .. })
    );
    outcome(
        round_trip && rejects,
        format!("10 images of 28x28 round-trip exactly: {round_trip}; malformed and truncated fixtures rejected: {rejects}"),
    )
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("loss consistency", loss_consistency),
        ("scale invariance", scale_invariance),
        ("optimal alpha bound", alpha_bound),
        ("pair separation", pair_separation),
        ("loss curves", loss_curves),
        ("identification", identification),
        ("fusion pipeline", fusion_pipeline),
        ("affine alignment", affine_alignment),
        ("determinism", determinism),
        ("idx parsing", idx_parsing),
    ];
    let mut failures = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {:>2} {:<20} {}  {}",
            n + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
