use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cocodesk_core::align::{
    apply_affine, fit_affine, match_keypoints, max_residual, read_keypoints, write_keypoints,
    Keypoint,
};
use cocodesk_core::coco::loss_floor;
use cocodesk_core::eval::{
    identify_with_ranks, pair_stats_with_bins, random_features, sample_verification_pairs,
    verify_scores, write_cmc_csv, write_histogram_csv, write_roc_csv,
};
use cocodesk_core::features::{read_features_csv, write_features_csv, LabeledFeatures};
use cocodesk_core::fusion::{
    assign_identity, fit_fusion, merge_scores, top1_accuracy, FusionModel, RegionScores,
};
use cocodesk_core::gradcheck::{check_standard_grid, CheckedLoss};
use cocodesk_core::train::{
    config_digest, extract_features, init_model, load_idx, synth_clusters, train as train_model,
    Checkpoint, Dataset, MetricsLog, OptimizerConfig, TrainConfig,
};
use cocodesk_core::{optimal_alpha, AlphaForm};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{
    AlignArgs, AlphaArgs, DatasetKind, FuseArgs, GradLoss, GradcheckArgs, IdentifyArgs, PairsArgs,
    TrainArgs, VerifyArgs,
};
use crate::CliError;

fn usage(e: cocodesk_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| CliError::File {
        path: path.clone(),
        source,
    })?;
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(cocodesk_core::Error::from)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Comment lines embedding the run id and resolved config in CSV outputs.
fn provenance(run_id: &str, config: &Value) -> Vec<String> {
    vec![format!("run_id={run_id}"), format!("config={config}")]
}

fn read_features(path: &Path) -> Result<LabeledFeatures, CliError> {
    Ok(read_features_csv(open(path)?)?)
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn load_dataset(a: &TrainArgs, data_seed: u64) -> Result<(Dataset, Value), CliError> {
    let (dataset, spec) = match a.dataset {
        DatasetKind::Synth => {
            let d = synth_clusters(a.classes, a.input_dim, a.per_class, a.spread, data_seed)
                .map_err(usage)?;
            let spec = json!({
                "kind": "synth",
                "classes": a.classes,
                "input_dim": a.input_dim,
                "per_class": a.per_class,
                "spread": a.spread,
                "seed": data_seed,
            });
            (d, spec)
        }
        DatasetKind::Idx => {
            let (images, labels) = (
                a.idx_images.as_ref().unwrap(),
                a.idx_labels.as_ref().unwrap(),
            );
            let d = load_idx(images, labels)?;
            let spec = json!({
                "kind": "idx",
                "images": path_str(images),
                "labels": path_str(labels),
            });
            (d, spec)
        }
    };
    let (dataset, spec) = match a.limit {
        Some(n) if n < dataset.len() => {
            let (inputs, labels) = dataset.gather(&(0..n).collect::<Vec<_>>());
            let d = Dataset::new(inputs, labels, dataset.classes, dataset.split)?;
            let mut spec = spec;
            spec["limit"] = json!(n);
            (d, spec)
        }
        _ => (dataset, spec),
    };
    Ok((dataset, spec))
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let seed = a.common.seed;
    let cfg = TrainConfig {
        loss: a.loss,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        alpha: a.alpha,
        centroid_mode: a.centroid_mode.into(),
        optimizer: OptimizerConfig {
            learning_rate: a.learning_rate,
            momentum: a.momentum,
            weight_decay: a.weight_decay,
            ..OptimizerConfig::default()
        },
        center_weight: a.center_weight,
        center_rate: a.center_rate,
        triplet_margin: a.triplet_margin,
        triplet_weight: a.triplet_weight,
        init_std: a.init_std,
    };
    cfg.validate().map_err(usage)?;
    if a.feature_dim == 0 || a.hidden.contains(&0) {
        return Err(CliError::Usage("layer widths must be positive".into()));
    }
    let (dataset, data_spec) = load_dataset(&a, a.data_seed.unwrap_or(seed))?;
    let alpha = match a.loss {
        cocodesk_core::train::LossKind::Coco => {
            Some(cfg.alpha.resolve(dataset.classes).map_err(usage)?)
        }
        _ => None,
    };
    let mut layer_sizes = vec![dataset.input_dim()];
    layer_sizes.extend(&a.hidden);
    layer_sizes.push(a.feature_dim);

    let config = json!({
        "command": "train",
        "seed": seed,
        "dataset": data_spec,
        "layer_sizes": layer_sizes,
        "train": cfg,
        "alpha_resolved": alpha,
    });
    let mut model = init_model(&layer_sizes, a.init_std, seed).map_err(usage)?;
    let run = train_model(&mut model, &dataset, &cfg)?;
    let features = extract_features(&model, &dataset)?;

    let out = &a.common.out;
    ensure_dir(out)?;
    let metrics = MetricsLog::new(config.clone(), run.per_epoch.clone());
    let metrics_path = write_json(out, "metrics.json", &metrics)?;
    let comments = provenance(&metrics.run_id, &config);
    let (features_path, mut w) = create(out, "features.csv")?;
    write_features_csv(&mut w, &features, &comments)?;
    let (ckpt_path, w) = create(out, "checkpoint.bin")?;
    Checkpoint {
        config: config.to_string(),
        model,
        tensors: run.head.tensors(),
    }
    .write(w)?;

    if let Some(last) = run.per_epoch.last() {
        say!(
            "{} epochs of {}: mean loss {}, train accuracy {}",
            last.epoch,
            cfg.loss,
            last.mean_loss,
            last.train_accuracy
        );
    }
    for p in [metrics_path, features_path, ckpt_path] {
        say!("wrote {}", p.display());
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if a.seeds == 0 || !(a.tolerance > 0.0) {
        return Err(CliError::Usage(
            "--seeds must be positive and --tolerance > 0".into(),
        ));
    }
    let losses: Vec<CheckedLoss> = match a.loss {
        GradLoss::All => CheckedLoss::ALL.to_vec(),
        GradLoss::Coco => vec![CheckedLoss::Coco],
        GradLoss::Softmax => vec![CheckedLoss::Softmax],
        GradLoss::Center => vec![CheckedLoss::Center],
        GradLoss::Triplet => vec![CheckedLoss::Triplet],
    };
    let config = json!({
        "command": "gradcheck",
        "seed": a.common.seed,
        "losses": losses.iter().map(|l| l.name()).collect::<Vec<_>>(),
        "seeds_per_shape": a.seeds,
        "tolerance": a.tolerance,
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for loss in losses {
        let r = check_standard_grid(loss, a.seeds, a.common.seed)?;
        say!(
            "{}: {} configurations, {} skipped, max relative error {:e}",
            loss.name(),
            r.checked,
            r.skipped_seeds.len(),
            r.max_relative_error
        );
        if !(r.max_relative_error < a.tolerance) {
            failures.push(format!("{} error {:e}", loss.name(), r.max_relative_error));
        }
        reports.push(json!({
            "loss": loss.name(),
            "checked": r.checked,
            "skipped_seeds": r.skipped_seeds,
            "max_relative_error": r.max_relative_error,
            "worst_coordinate": r.worst_coordinate,
        }));
    }
    ensure_dir(&a.common.out)?;
    let path = write_json(
        &a.common.out,
        "gradcheck.json",
        &json!({ "run_id": config_digest(&config), "config": config, "reports": reports }),
    )?;
    say!("wrote {}", path.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "tolerance {:e} exceeded: {}",
            a.tolerance,
            failures.join(", ")
        )))
    }
}

pub fn pairs(a: PairsArgs) -> Result<(), CliError> {
    if a.bins == 0 || a.max_pairs == 0 {
        return Err(CliError::Usage(
            "--bins and --max-pairs must be positive".into(),
        ));
    }
    let set = read_features(&a.features)?;
    let config = json!({
        "command": "pairs",
        "seed": a.common.seed,
        "features": path_str(&a.features),
        "max_pairs": a.max_pairs,
        "bins": a.bins,
    });
    let run_id = config_digest(&config);
    let stats = pair_stats_with_bins(&set, a.max_pairs, a.common.seed, a.bins)?;
    let out = &a.common.out;
    ensure_dir(out)?;
    let json_path = write_json(
        out,
        "pairs.json",
        &json!({
            "run_id": run_id,
            "config": config,
            "positive_pairs": stats.positive_cosines.len(),
            "negative_pairs": stats.negative_cosines.len(),
            "mean_pos": stats.mean_pos,
            "mean_neg": stats.mean_neg,
            "separation": stats.separation,
        }),
    )?;
    let (hist_path, w) = create(out, "histogram.csv")?;
    write_histogram_csv(w, &stats, &provenance(&run_id, &config))?;
    say!(
        "mean_pos {} mean_neg {} separation {}",
        stats.mean_pos,
        stats.mean_neg,
        stats.separation
    );
    say!(
        "wrote {}\nwrote {}",
        json_path.display(),
        hist_path.display()
    );
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<(), CliError> {
    if a.max_pairs == 0 {
        return Err(CliError::Usage("--max-pairs must be positive".into()));
    }
    let set = read_features(&a.features)?;
    let config = json!({
        "command": "verify",
        "seed": a.common.seed,
        "features": path_str(&a.features),
        "max_pairs": a.max_pairs,
    });
    let run_id = config_digest(&config);
    let (scores, same) = sample_verification_pairs(&set, a.max_pairs, a.common.seed)?;
    let result = verify_scores(&scores, &same)?;
    let out = &a.common.out;
    ensure_dir(out)?;
    let json_path = write_json(
        out,
        "verification.json",
        &json!({
            "run_id": run_id,
            "config": config,
            "pairs": scores.len(),
            "best_threshold": result.best_threshold,
            "accuracy": result.accuracy,
            "auc": result.auc,
        }),
    )?;
    let (roc_path, w) = create(out, "roc.csv")?;
    write_roc_csv(w, &result, &provenance(&run_id, &config))?;
    say!(
        "accuracy {} at threshold {}, auc {}",
        result.accuracy,
        result.best_threshold,
        result.auc
    );
    say!(
        "wrote {}\nwrote {}",
        json_path.display(),
        roc_path.display()
    );
    Ok(())
}

pub fn identify(a: IdentifyArgs) -> Result<(), CliError> {
    if a.trials == 0 || a.ranks == 0 || a.counts.is_empty() {
        return Err(CliError::Usage(
            "--trials, --ranks and --counts must be non-empty and positive".into(),
        ));
    }
    let probes = read_features(&a.probes)?;
    let gallery = read_features(&a.gallery)?;
    let (pool, source) = match &a.distractors {
        Some(p) => (read_features(p)?.features, json!(path_str(p))),
        None => (
            random_features(a.pool, probes.dim(), a.common.seed),
            json!({ "gaussian": a.pool }),
        ),
    };
    let config = json!({
        "command": "identify",
        "seed": a.common.seed,
        "probes": path_str(&a.probes),
        "gallery": path_str(&a.gallery),
        "distractors": source,
        "counts": a.counts,
        "trials": a.trials,
        "ranks": a.ranks,
    });
    let run_id = config_digest(&config);
    let result = identify_with_ranks(
        &probes,
        &gallery,
        &pool,
        &a.counts,
        a.trials,
        a.common.seed,
        a.ranks,
    )?;
    let out = &a.common.out;
    ensure_dir(out)?;
    let json_path = write_json(
        out,
        "identification.json",
        &json!({
            "run_id": run_id,
            "config": config,
            "distractor_counts": result.distractor_counts,
            "top1_accuracy": result.top1_accuracy,
        }),
    )?;
    let (cmc_path, w) = create(out, "cmc.csv")?;
    write_cmc_csv(w, &result, &provenance(&run_id, &config))?;
    for (n, acc) in result.distractor_counts.iter().zip(&result.top1_accuracy) {
        say!("{n} distractors: top-1 {acc}");
    }
    say!(
        "wrote {}\nwrote {}",
        json_path.display(),
        cmc_path.display()
    );
    Ok(())
}

/// Calibration file written by `fuse` and accepted back by `--calibration`.
#[derive(Debug, Serialize, Deserialize)]
struct CalibrationDoc {
    run_id: String,
    config: Value,
    fusion: FusionModel,
}

fn read_scores(path: &Path) -> Result<RegionScores, CliError> {
    Ok(RegionScores::from_json(&read_text(path)?)?)
}

pub fn fuse(a: FuseArgs) -> Result<(), CliError> {
    if a.max_iters == 0 || !(a.tol > 0.0) {
        return Err(CliError::Usage(
            "--max-iters must be positive and --tol > 0".into(),
        ));
    }
    let config = json!({
        "command": "fuse",
        "seed": a.common.seed,
        "validation": a.validation.as_deref().map(path_str),
        "calibration": a.calibration.as_deref().map(path_str),
        "test": a.test.as_deref().map(path_str),
        "max_iters": a.max_iters,
        "tol": a.tol,
    });
    let run_id = config_digest(&config);
    let out = &a.common.out;
    ensure_dir(out)?;
    let model = match (&a.calibration, &a.validation) {
        (Some(p), _) => {
            let doc: CalibrationDoc =
                serde_json::from_str(&read_text(p)?).map_err(cocodesk_core::Error::from)?;
            doc.fusion
        }
        (None, Some(p)) => {
            let model = fit_fusion(&read_scores(p)?, a.max_iters, a.tol)?;
            let doc = CalibrationDoc {
                run_id: run_id.clone(),
                config: config.clone(),
                fusion: model,
            };
            let path = write_json(out, "calibration.json", &doc)?;
            for r in &doc.fusion.regions {
                say!(
                    "{}: beta0 {} beta1 {} weight {}{}",
                    r.name,
                    r.beta0,
                    r.beta1,
                    r.weight,
                    if r.separable {
                        " (separable, capped)"
                    } else {
                        ""
                    }
                );
            }
            say!("validation top-1 {}", doc.fusion.validation_top1);
            say!("wrote {}", path.display());
            doc.fusion
        }
        (None, None) => unreachable!("clap requires one of --validation and --calibration"),
    };
    if let Some(p) = &a.test {
        let test = read_scores(p)?;
        let (weights, cals) = model.aligned_to(&test)?;
        let merged = merge_scores(&test, &weights, &cals)?;
        let assigned = assign_identity(&merged, &test.reference_labels)?;
        let top1 = test
            .probe_labels
            .as_ref()
            .map(|t| top1_accuracy(&assigned, t));
        let path = write_json(
            out,
            "assignments.json",
            &json!({
                "run_id": run_id,
                "config": config,
                "assignments": assigned,
                "top1_accuracy": top1,
            }),
        )?;
        if let Some(acc) = top1 {
            say!("test top-1 {acc}");
        }
        say!("wrote {}", path.display());
    }
    Ok(())
}

pub fn alpha(a: AlphaArgs) -> Result<(), CliError> {
    let exact = optimal_alpha(a.classes, a.target_loss, AlphaForm::ExactBound).map_err(usage)?;
    let closed = optimal_alpha(a.classes, a.target_loss, AlphaForm::ClosedForm).map_err(usage)?;
    say!("classes = {}", a.classes);
    say!("target_loss = {:e}", a.target_loss);
    say!("exact_bound = {exact}");
    say!("closed_form = {closed}");
    say!("closed_form_loss_floor = {}", loss_floor(closed, a.classes));
    Ok(())
}

pub fn align(a: AlignArgs) -> Result<(), CliError> {
    let source = read_keypoints(open(&a.source)?)?;
    let target = read_keypoints(open(&a.target)?)?;
    let (p, q) = match_keypoints(&source, &target);
    let map = fit_affine(&p, &q)?;
    let config = json!({
        "command": "align",
        "seed": a.common.seed,
        "source": path_str(&a.source),
        "target": path_str(&a.target),
    });
    let run_id = config_digest(&config);
    let residual = max_residual(&map, &p, &q);
    let out = &a.common.out;
    ensure_dir(out)?;
    let json_path = write_json(
        out,
        "affine.json",
        &json!({
            "run_id": run_id,
            "config": config,
            "matched_points": p.len(),
            "a": map.a,
            "b": map.b,
            "max_residual": residual,
        }),
    )?;
    let moved: Vec<Keypoint> = source
        .iter()
        .zip(apply_affine(
            &map,
            &source.iter().map(|k| k.point).collect::<Vec<_>>(),
        ))
        .map(|(k, point)| Keypoint {
            id: k.id.clone(),
            point,
        })
        .collect();
    let (csv_path, w) = create(out, "aligned.csv")?;
    write_keypoints(w, &moved, &provenance(&run_id, &config))?;
    say!("matched {} points, max residual {residual:e}", p.len());
    say!(
        "wrote {}\nwrote {}",
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}
