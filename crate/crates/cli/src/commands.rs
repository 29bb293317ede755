//! Subcommand implementations.
//!
//! Output layout under `--out` (every file digest-tracked in manifest.json;
//! wall-clock timings live only in the manifest):
//!
//! ```text
//! data/{train,val,test}.jsonl, data/ood_<regime>.jsonl   (generate)
//! checkpoint.bin                                          (train)
//! detections.jsonl                                        (eval)
//! scores_<role>_<level>.jsonl, ood_<regime>_<level>.json  (ood-bench)
//! <stem>_hist.{csv,svg}, <stem>_roc.{csv,svg}             (ood-bench, report)
//! novel_result.json                                       (novel-bench)
//! overhead.{json,csv}                                     (overhead)
//! report.{json,csv}                                       (eval, ood-bench, report)
//! manifest.json                                           (all)
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use dbea_core::jsonx;
use dbea_core::metrics::{SampleLabel, ScoredSample};
use dbea_core::model::TandemModel;
use dbea_core::monitor::SceneScore;
use dbea_core::world::{export_split_to_path, generate_dataset, RegimeKind};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{thread_count, RunConfig};
use crate::error::{CliError, Result};
use crate::evalrun::{
    detect_split, metrics_from_detections, overhead_report, run_novel_object_benchmark,
    run_ood_benchmark, OodBenchOutcome, ScoreLevel, SceneDetections,
};
use crate::report::{
    auroc_from_roc_csv, emit_ood_plots, emit_report, now_unix_ms, scores_from_jsonl,
    scores_to_jsonl, sha256_hex, write_manifest, OutputTracker, ReportRow, RunManifest,
    ARTIFACT_VERSION,
};
use crate::train::{fit, EpochStats};

pub struct CommandContext {
    pub config: RunConfig,
    pub checkpoint: Option<PathBuf>,
    pub level: ScoreLevel,
}

fn manifest_base(cfg: &RunConfig) -> Result<RunManifest> {
    Ok(RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_sha256: sha256_hex(cfg.to_toml()?.as_bytes()),
        seed: cfg.seed,
        started_unix_ms: now_unix_ms(),
        wall_seconds: 0.0,
        epochs: Vec::new(),
        rows: Vec::new(),
        files: Vec::new(),
    })
}

fn finish_manifest(
    mut manifest: RunManifest,
    tracker: OutputTracker,
    dir: &Path,
    started: Instant,
    epochs: Vec<EpochStats>,
    rows: Vec<ReportRow>,
) -> Result<()> {
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.epochs = epochs;
    manifest.rows = rows;
    manifest.files = tracker.into_files();
    write_manifest(dir, &manifest)
}

fn checkpoint_path(ctx: &CommandContext) -> PathBuf {
    ctx.checkpoint
        .clone()
        .unwrap_or_else(|| ctx.config.out_dir.join("checkpoint.bin"))
}

fn load_model(ctx: &CommandContext) -> Result<TandemModel> {
    load_checkpoint(&checkpoint_path(ctx), Some(&ctx.config.model_config()))
}

/// `generate`: materialize every split as JSON lines.
pub fn cmd_generate(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let splits = generate_dataset(&cfg.dataset, cfg.seed).map_err(CliError::from)?;
    std::fs::create_dir_all(cfg.out_dir.join("data"))?;
    for (name, records) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        let rel = format!("data/{name}.jsonl");
        export_split_to_path(records, &cfg.out_dir.join(&rel)).map_err(CliError::from)?;
        tracker.record_existing(&rel)?;
    }
    for (regime, records) in &splits.ood {
        let rel = format!("data/ood_{}.jsonl", regime.as_str());
        export_split_to_path(records, &cfg.out_dir.join(&rel)).map_err(CliError::from)?;
        tracker.record_existing(&rel)?;
    }
    println!(
        "generated {} train / {} val / {} test scenes (+{} ood regimes)",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        splits.ood.len()
    );
    finish_manifest(manifest, tracker, &cfg.out_dir, started, Vec::new(), Vec::new())
}

/// `train`: fit on the training split and persist the checkpoint. On
/// divergence the last-good checkpoint is still written and the process
/// reports exit code 4.
pub fn cmd_train(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let splits = generate_dataset(&cfg.dataset, cfg.seed).map_err(CliError::from)?;
    let outcome = fit(cfg, &splits, thread_count())?;
    for e in &outcome.history {
        println!(
            "epoch {:>3}: total {:.5} base {:.5} ta {:.5} tq {:.5} div {:.5}",
            e.epoch, e.total, e.base, e.ta, e.tq, e.diversity
        );
    }
    save_checkpoint(&outcome.model, &cfg.out_dir.join("checkpoint.bin"))?;
    tracker.record_existing("checkpoint.bin")?;
    let history = outcome.history.clone();
    finish_manifest(manifest, tracker, &cfg.out_dir, started, history, Vec::new())?;
    if let Some(msg) = outcome.divergence {
        return Err(CliError::Divergence(format!(
            "{msg}; last-good checkpoint retained at {}",
            cfg.out_dir.join("checkpoint.bin").display()
        )));
    }
    Ok(())
}

fn detections_to_jsonl(scenes: &[SceneDetections]) -> Result<String> {
    let mut out = String::new();
    for s in scenes {
        out.push_str(&jsonx::to_json_line(s).map_err(CliError::from)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn detections_from_jsonl(text: &str) -> Result<Vec<SceneDetections>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(jsonx::from_json_line(line, i + 1).map_err(CliError::from)?);
    }
    Ok(out)
}

/// `eval`: detection metrics over the in-distribution test split.
pub fn cmd_eval(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let model = load_model(ctx)?;
    let splits = generate_dataset(&cfg.dataset, cfg.seed).map_err(CliError::from)?;
    let detections = detect_split(&model, &splits.test)?;
    tracker.write("detections.jsonl", detections_to_jsonl(&detections)?.as_bytes())?;
    let metrics = metrics_from_detections(&detections)?;
    println!(
        "eval: scenes {} detections {} mAP {:?} AP50 {:?} PCorr-all {:?} PCorr-tp {:?}",
        metrics.scenes, metrics.detections, metrics.map, metrics.ap50, metrics.pcorr_all, metrics.pcorr_tp
    );
    let row = ReportRow::named(mode_name(&ctx.config)).with_detection(&metrics);
    emit_report(&mut tracker, std::slice::from_ref(&row))?;
    finish_manifest(manifest, tracker, &cfg.out_dir, started, Vec::new(), vec![row])
}

fn mode_name(cfg: &RunConfig) -> &'static str {
    match cfg.model.mode {
        dbea_core::model::ModelMode::Dbea => "dbea",
        dbea_core::model::ModelMode::Vanilla => "vanilla",
    }
}

fn level_str(level: ScoreLevel) -> &'static str {
    match level {
        ScoreLevel::Image => "image",
        ScoreLevel::Object => "object",
    }
}

fn emit_bench_outputs(
    tracker: &mut OutputTracker,
    outcome: &OodBenchOutcome,
    regime: RegimeKind,
) -> Result<()> {
    let level = level_str(outcome.level);
    tracker.write(
        &format!("scores_id_{level}.jsonl"),
        scores_to_jsonl(&outcome.id_scores)?.as_bytes(),
    )?;
    tracker.write(
        &format!("scores_{}_{level}.jsonl", regime.as_str()),
        scores_to_jsonl(&outcome.ood_scores)?.as_bytes(),
    )?;
    tracker.write(
        &format!("ood_{}_{level}.json", regime.as_str()),
        format!("{}\n", jsonx::to_json_line(&outcome.result).map_err(CliError::from)?).as_bytes(),
    )?;
    let (id_vals, ood_vals, samples) = collect_samples(&outcome.id_scores, &outcome.ood_scores, outcome.level);
    emit_ood_plots(
        tracker,
        &format!("{}_{level}", regime.as_str()),
        &id_vals,
        &ood_vals,
        &samples,
    )?;
    Ok(())
}

fn collect_samples(
    id_scores: &[SceneScore],
    ood_scores: &[SceneScore],
    level: ScoreLevel,
) -> (Vec<f64>, Vec<f64>, Vec<ScoredSample>) {
    let extract = |scores: &[SceneScore]| -> Vec<f64> {
        match level {
            ScoreLevel::Image => scores.iter().map(|s| s.image_usm).collect(),
            ScoreLevel::Object => scores
                .iter()
                .flat_map(|s| s.per_object.iter().map(|o| o.usm))
                .collect(),
        }
    };
    let id_vals = extract(id_scores);
    let ood_vals = extract(ood_scores);
    let samples = id_vals
        .iter()
        .map(|&v| ScoredSample::new(v, SampleLabel::InDistribution))
        .chain(ood_vals.iter().map(|&v| ScoredSample::new(v, SampleLabel::Ood)))
        .collect();
    (id_vals, ood_vals, samples)
}

/// `ood-bench`: score the in-distribution test split against every requested
/// OOD regime and emit metric tables, dumps, and plots.
pub fn cmd_ood_bench(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let model = load_model(ctx)?;
    let splits = generate_dataset(&cfg.dataset, cfg.seed).map_err(CliError::from)?;
    let mut rows = Vec::new();
    for (&regime, ood_split) in &splits.ood {
        if regime == RegimeKind::NovelClass {
            continue; // handled by novel-bench
        }
        let outcome = run_ood_benchmark(&model, &splits.test, ood_split, ctx.level, &cfg.monitor)?;
        println!(
            "{} vs {} ({}): AUROC {:.4} AUPR-In {:.4} AUPR-Out {:.4} FPR@95 {:.4} DE@95 {:.4}",
            mode_name(cfg),
            regime.as_str(),
            level_str(ctx.level),
            outcome.result.auroc,
            outcome.result.aupr_in,
            outcome.result.aupr_out,
            outcome.result.fpr_at_95,
            outcome.result.de_at_95
        );
        emit_bench_outputs(&mut tracker, &outcome, regime)?;
        rows.push(
            ReportRow::named(format!(
                "{}/{}/{}",
                mode_name(cfg),
                regime.as_str(),
                level_str(ctx.level)
            ))
            .with_ood(&outcome.result),
        );
        // reported AUROC must match the emitted curve to 1e-9
        let csv = std::fs::read_to_string(
            cfg.out_dir
                .join(format!("{}_{}_roc.csv", regime.as_str(), level_str(ctx.level))),
        )?;
        let recomputed = auroc_from_roc_csv(&csv)?;
        if (recomputed - outcome.result.auroc).abs() > 1e-9 {
            return Err(CliError::Data(format!(
                "roc curve inconsistent with reported auroc: {recomputed} vs {}",
                outcome.result.auroc
            )));
        }
    }
    emit_report(&mut tracker, &rows)?;
    finish_manifest(manifest, tracker, &cfg.out_dir, started, Vec::new(), rows)
}

/// `novel-bench`: train with the configured class withheld and run the
/// object-level novel-object protocol.
pub fn cmd_novel_bench(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let held_out = cfg.dataset.held_out_class.ok_or_else(|| {
        CliError::Config("novel-bench requires dataset.held_out_class".into())
    })?;
    if !cfg.dataset.ood_regimes.contains(&RegimeKind::NovelClass) {
        return Err(CliError::Config(
            "novel-bench requires dataset.ood_regimes to include novel_class".into(),
        ));
    }
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let splits = generate_dataset(&cfg.dataset, cfg.seed).map_err(CliError::from)?;

    let (model, history) = match &ctx.checkpoint {
        Some(path) => (load_checkpoint(path, Some(&cfg.model_config()))?, Vec::new()),
        None => {
            let outcome = fit(cfg, &splits, thread_count())?;
            if let Some(msg) = outcome.divergence {
                return Err(CliError::Divergence(msg));
            }
            save_checkpoint(&outcome.model, &cfg.out_dir.join("checkpoint.bin"))?;
            tracker.record_existing("checkpoint.bin")?;
            (outcome.model, outcome.history)
        }
    };

    let novel_split = &splits.ood[&RegimeKind::NovelClass];
    let outcome = run_novel_object_benchmark(&model, novel_split, held_out, &cfg.monitor)?;
    match &outcome.result {
        Some(r) => println!(
            "novel-bench class {held_out}: AUROC {:.4} ({} novel / {} id, {} fp excluded)",
            r.auroc, outcome.novel_samples, outcome.id_samples, outcome.excluded_false_positives
        ),
        None => println!(
            "novel-bench class {held_out}: metrics absent ({} novel / {} id samples)",
            outcome.novel_samples, outcome.id_samples
        ),
    }
    tracker.write(
        "novel_result.json",
        format!("{}\n", jsonx::to_json_line(&outcome).map_err(CliError::from)?).as_bytes(),
    )?;
    let rows = match &outcome.result {
        Some(r) => vec![ReportRow::named(format!("{}/novel_class/object", mode_name(cfg))).with_ood(r)],
        None => Vec::new(),
    };
    emit_report(&mut tracker, &rows)?;
    finish_manifest(manifest, tracker, &cfg.out_dir, started, history, rows)
}

/// `overhead`: closed-form parameter accounting for the configured tandem
/// model against the default vanilla baseline.
pub fn cmd_overhead(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let vanilla = RunConfig::default_vanilla();
    let report = overhead_report(&vanilla.model_config(), &cfg.model_config());
    println!(
        "vanilla total {} | tandem total {} | reduction {:.2}%",
        report.vanilla.total,
        report.dbea.total,
        report.reduction_fraction * 100.0
    );
    println!(
        "  trunk {} -> {} | per-head {} x{} -> {} x{}",
        report.vanilla.trunk,
        report.dbea.trunk,
        report.vanilla.per_head,
        report.vanilla.num_heads,
        report.dbea.per_head,
        report.dbea.num_heads
    );
    tracker.write(
        "overhead.json",
        format!("{}\n", jsonx::to_json_line(&report).map_err(CliError::from)?).as_bytes(),
    )?;
    let csv = format!(
        "component,vanilla,dbea\ntrunk,{},{}\nbox_head,{},{}\ncls_head,{},{}\nheads_total,{},{}\ntotal,{},{}\nreduction_fraction,,{:.6}\n",
        report.vanilla.trunk,
        report.dbea.trunk,
        report.vanilla.box_head,
        report.dbea.box_head,
        report.vanilla.cls_head,
        report.dbea.cls_head,
        report.vanilla.heads_total,
        report.dbea.heads_total,
        report.vanilla.total,
        report.dbea.total,
        report.reduction_fraction
    );
    tracker.write("overhead.csv", csv.as_bytes())?;
    finish_manifest(manifest, tracker, &cfg.out_dir, started, Vec::new(), Vec::new())
}

/// `report`: recompute metrics from dumps in the output directory (the
/// external evaluation path) and emit tables and plots.
pub fn cmd_report(ctx: &CommandContext) -> Result<()> {
    let cfg = &ctx.config;
    let started = Instant::now();
    let manifest = manifest_base(cfg)?;
    let mut tracker = OutputTracker::new(&cfg.out_dir)?;
    let mut rows = Vec::new();

    let det_path = cfg.out_dir.join("detections.jsonl");
    if det_path.exists() {
        let detections = detections_from_jsonl(&std::fs::read_to_string(&det_path)?)?;
        let metrics = metrics_from_detections(&detections)?;
        rows.push(ReportRow::named(format!("{}(from-dump)", mode_name(cfg))).with_detection(&metrics));
    }

    for level in ["image", "object"] {
        let id_path = cfg.out_dir.join(format!("scores_id_{level}.jsonl"));
        if !id_path.exists() {
            continue;
        }
        let id_scores = scores_from_jsonl(&std::fs::read_to_string(&id_path)?)?;
        for regime in [RegimeKind::NearOod, RegimeKind::FarOod, RegimeKind::NovelClass] {
            let path = cfg
                .out_dir
                .join(format!("scores_{}_{level}.jsonl", regime.as_str()));
            if !path.exists() {
                continue;
            }
            let ood_scores = scores_from_jsonl(&std::fs::read_to_string(&path)?)?;
            let parsed_level: ScoreLevel = level.parse()?;
            let (id_vals, ood_vals, samples) = collect_samples(&id_scores, &ood_scores, parsed_level);
            let result = dbea_core::metrics::ood_benchmark(&samples).map_err(CliError::from)?;
            emit_ood_plots(
                &mut tracker,
                &format!("{}_{level}_fromdump", regime.as_str()),
                &id_vals,
                &ood_vals,
                &samples,
            )?;
            rows.push(
                ReportRow::named(format!("from-dump/{}/{level}", regime.as_str())).with_ood(&result),
            );
        }
    }
    if rows.is_empty() {
        println!("report: no dumps found in {}", cfg.out_dir.display());
    }
    emit_report(&mut tracker, &rows)?;
    finish_manifest(manifest, tracker, &cfg.out_dir, started, Vec::new(), rows)
}
