//! Benchmark runners: detection evaluation, ID-vs-OOD scoring, the held-out
//! novel-class protocol, and parameter-overhead accounting.

use serde::{Deserialize, Serialize};

use dbea_core::geometry::iou;
use dbea_core::metrics::{
    average_precision, coco_iou_thresholds, ood_benchmark, pcorr_split, ApGroundTruth,
    ApPrediction, DetectionRecord, MatchedGt, OODBenchmarkResult, SampleLabel, ScoredSample,
};
use dbea_core::model::{param_count, select_topk, ModelConfig, ModelMode, TandemModel};
use dbea_core::monitor::{score_scene, MonitorConfig, SceneScore};
use dbea_core::world::{GtObject, RegimeKind, SceneRecord};

use crate::error::{CliError, Result};

/// Scoring level for OOD benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreLevel {
    Image,
    Object,
}

impl std::str::FromStr for ScoreLevel {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(ScoreLevel::Image),
            "object" => Ok(ScoreLevel::Object),
            other => Err(CliError::Usage(format!(
                "unknown level '{other}', expected image|object"
            ))),
        }
    }
}

/// Detection-quality summary over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub pcorr_all: Option<f64>,
    pub pcorr_tp: Option<f64>,
    pub scenes: usize,
    pub detections: usize,
}

/// One scene's dumped detections plus its ground truth, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDetections {
    pub scene_id: u64,
    pub regime: RegimeKind,
    pub detections: Vec<DetectionRecord>,
    pub ground_truth: Vec<GtObject>,
}

/// Runs the detector over a split and builds detection records: top-K fused
/// detections, each greedily matched (confidence order, best IoU, every
/// ground truth consumed once) for calibration bookkeeping.
pub fn detect_split(model: &TandemModel, scenes: &[SceneRecord]) -> Result<Vec<SceneDetections>> {
    let mut out = Vec::with_capacity(scenes.len());
    for record in scenes {
        let (output, _) = model.forward(&record.features).map_err(CliError::from)?;
        let topk = select_topk(&output.fused, model.config.top_k).map_err(CliError::from)?;
        let mut order = topk.clone();
        order.sort_by(|&a, &b| {
            output.fused[b]
                .confidence
                .partial_cmp(&output.fused[a].confidence)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut consumed = vec![false; record.scene.objects.len()];
        let mut records = Vec::with_capacity(order.len());
        for &q in &order {
            let det = &output.fused[q];
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in record.scene.objects.iter().enumerate() {
                if consumed[gi] {
                    continue;
                }
                let overlap = iou(&det.bbox, &gt.bbox);
                if overlap > 0.0 && best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            let (matched_gt, iou_val) = match best {
                Some((gi, overlap)) => {
                    consumed[gi] = true;
                    let gt = &record.scene.objects[gi];
                    (
                        Some(MatchedGt {
                            class_id: gt.class_id,
                            bbox: gt.bbox,
                        }),
                        Some(overlap),
                    )
                }
                None => (None, None),
            };
            records.push(DetectionRecord {
                scene_id: record.scene.scene_id,
                bbox: det.bbox,
                class_id: det.class_id,
                confidence: det.confidence,
                matched_gt,
                iou: iou_val,
            });
        }
        out.push(SceneDetections {
            scene_id: record.scene.scene_id,
            regime: record.scene.regime,
            detections: records,
            ground_truth: record.scene.objects.clone(),
        });
    }
    Ok(out)
}

/// Detection metrics from dumped records; also the external evaluation path
/// for third-party detector dumps in the same schema.
pub fn metrics_from_detections(scenes: &[SceneDetections]) -> Result<DetectionMetrics> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut records = Vec::new();
    for scene in scenes {
        for det in &scene.detections {
            preds.push(ApPrediction {
                scene_id: scene.scene_id,
                class_id: det.class_id,
                confidence: det.confidence,
                bbox: det.bbox,
            });
            records.push(det.clone());
        }
        for gt in &scene.ground_truth {
            gts.push(ApGroundTruth {
                scene_id: scene.scene_id,
                class_id: gt.class_id,
                bbox: gt.bbox,
            });
        }
    }
    let ap = average_precision(&preds, &gts, &coco_iou_thresholds()).ok();
    let (pcorr_all, pcorr_tp) = if records.is_empty() {
        (None, None)
    } else {
        pcorr_split(&records, 0.5).map_err(CliError::from)?
    };
    Ok(DetectionMetrics {
        map: ap.as_ref().map(|r| r.map),
        ap50: ap.as_ref().map(|r| r.ap50),
        pcorr_all,
        pcorr_tp,
        scenes: scenes.len(),
        detections: records.len(),
    })
}

/// Per-scene OOD scores. Tandem checkpoints score through the monitor;
/// vanilla checkpoints score from confidence (`1 - confidence` so that higher
/// still means more OOD).
pub fn score_split(
    model: &TandemModel,
    scenes: &[SceneRecord],
    monitor: &MonitorConfig,
) -> Result<Vec<SceneScore>> {
    match model.config.mode {
        ModelMode::Dbea => {
            let mut out = Vec::with_capacity(scenes.len());
            for record in scenes {
                out.push(score_scene(model, record, monitor).map_err(CliError::from)?);
            }
            Ok(out)
        }
        ModelMode::Vanilla => {
            let mut out = Vec::with_capacity(scenes.len());
            for record in scenes {
                let (output, _) = model.forward(&record.features).map_err(CliError::from)?;
                let topk = select_topk(&output.fused, model.config.top_k).map_err(CliError::from)?;
                let mean_conf = topk.iter().map(|&q| output.fused[q].confidence).sum::<f64>()
                    / topk.len() as f64;
                let per_object = topk
                    .iter()
                    .map(|&q| dbea_core::monitor::ObjectScore {
                        index: q,
                        usm: 1.0 - output.fused[q].confidence,
                        confidence: output.fused[q].confidence,
                    })
                    .collect();
                out.push(SceneScore {
                    scene_id: record.scene.scene_id,
                    regime: record.scene.regime,
                    image_usm: 1.0 - mean_conf,
                    per_object,
                });
            }
            Ok(out)
        }
    }
}

/// Benchmark output: the metric table plus both score dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OodBenchOutcome {
    pub level: ScoreLevel,
    pub result: OODBenchmarkResult,
    pub id_scores: Vec<SceneScore>,
    pub ood_scores: Vec<SceneScore>,
}

/// ID-vs-OOD benchmark at image or object level; labels follow the regime of
/// the split each sample came from.
pub fn run_ood_benchmark(
    model: &TandemModel,
    id_split: &[SceneRecord],
    ood_split: &[SceneRecord],
    level: ScoreLevel,
    monitor: &MonitorConfig,
) -> Result<OodBenchOutcome> {
    if id_split.is_empty() || ood_split.is_empty() {
        return Err(CliError::Data("ood benchmark needs non-empty splits".into()));
    }
    let id_scores = score_split(model, id_split, monitor)?;
    let ood_scores = score_split(model, ood_split, monitor)?;
    let mut samples = Vec::new();
    for (scores, label) in [
        (&id_scores, SampleLabel::InDistribution),
        (&ood_scores, SampleLabel::Ood),
    ] {
        for s in scores.iter() {
            match level {
                ScoreLevel::Image => samples.push(ScoredSample::new(s.image_usm, label)),
                ScoreLevel::Object => {
                    samples.extend(s.per_object.iter().map(|o| ScoredSample::new(o.usm, label)))
                }
            }
        }
    }
    let result = ood_benchmark(&samples).map_err(CliError::from)?;
    Ok(OodBenchOutcome {
        level,
        result,
        id_scores,
        ood_scores,
    })
}

/// Novel-object outcome; `result` is absent when no detection overlapped a
/// held-out ground truth (no positives, undefined metrics).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NovelBenchOutcome {
    pub held_out_class: usize,
    pub result: Option<OODBenchmarkResult>,
    pub novel_samples: usize,
    pub id_samples: usize,
    pub excluded_false_positives: usize,
}

/// Object-level novel-class protocol over the novel evaluation split of a
/// model trained with the class withheld.
///
/// Labels come from ground-truth overlap only: a detection overlapping a
/// held-out-class ground truth at IoU >= 0.5 is a novel positive, one
/// overlapping any other ground truth is in-distribution, everything else is
/// a false positive and excluded.
pub fn run_novel_object_benchmark(
    model: &TandemModel,
    novel_split: &[SceneRecord],
    held_out_class: usize,
    monitor: &MonitorConfig,
) -> Result<NovelBenchOutcome> {
    if novel_split.is_empty() {
        return Err(CliError::Config("novel benchmark needs a novel-class eval split".into()));
    }
    if !novel_split
        .iter()
        .any(|r| r.scene.objects.iter().any(|o| o.class_id == held_out_class))
    {
        return Err(CliError::Config(
            "held-out class absent from the novel evaluation scenes".into(),
        ));
    }
    let mut samples = Vec::new();
    let mut excluded = 0usize;
    let scores = score_split(model, novel_split, monitor)?;
    for (record, score) in novel_split.iter().zip(&scores) {
        let (output, _) = model.forward(&record.features).map_err(CliError::from)?;
        for object_score in &score.per_object {
            // Overlap with ground truth decides the label; predicted class
            // never does.
            let det_bbox = output.fused[object_score.index].bbox;
            let mut best_novel = 0.0_f64;
            let mut best_other = 0.0_f64;
            for gt in &record.scene.objects {
                let overlap = iou(&det_bbox, &gt.bbox);
                if gt.class_id == held_out_class {
                    best_novel = best_novel.max(overlap);
                } else {
                    best_other = best_other.max(overlap);
                }
            }
            if best_novel >= 0.5 {
                samples.push(ScoredSample::new(object_score.usm, SampleLabel::Ood));
            } else if best_other >= 0.5 {
                samples.push(ScoredSample::new(object_score.usm, SampleLabel::InDistribution));
            } else {
                excluded += 1;
            }
        }
    }
    let novel_samples = samples.iter().filter(|s| s.label == SampleLabel::Ood).count();
    let id_samples = samples.len() - novel_samples;
    let result = ood_benchmark(&samples).ok();
    Ok(NovelBenchOutcome {
        held_out_class,
        result,
        novel_samples,
        id_samples,
        excluded_false_positives: excluded,
    })
}

/// Parameter accounting for a pair of configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub vanilla: ComponentCounts,
    pub dbea: ComponentCounts,
    /// `(vanilla - dbea) / vanilla`.
    pub reduction_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCounts {
    pub trunk: usize,
    pub box_head: usize,
    pub cls_head: usize,
    pub per_head: usize,
    pub num_heads: usize,
    pub heads_total: usize,
    pub total: usize,
}

fn component_counts(cfg: &ModelConfig) -> ComponentCounts {
    let counts = param_count(cfg);
    ComponentCounts {
        trunk: counts.trunk,
        box_head: counts.box_head,
        cls_head: counts.cls_head,
        per_head: counts.box_head + counts.cls_head,
        num_heads: counts.num_heads,
        heads_total: counts.heads,
        total: counts.total,
    }
}

/// Closed-form parameter table for a vanilla/tandem configuration pair.
pub fn overhead_report(vanilla: &ModelConfig, dbea: &ModelConfig) -> OverheadReport {
    let v = component_counts(vanilla);
    let d = component_counts(dbea);
    let reduction_fraction = (v.total as f64 - d.total as f64) / v.total as f64;
    OverheadReport {
        vanilla: v,
        dbea: d,
        reduction_fraction,
    }
}
