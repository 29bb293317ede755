//! Threshold-free OOD separability metrics, calibration correlation, and
//! COCO-style detection quality.
//!
//! Conventions: a higher score means "more OOD"; OOD samples are the
//! positives for AUROC/FPR/DE. AUPR-Out keeps that convention while AUPR-In
//! treats in-distribution samples as positives over negated scores. Ties are
//! processed as single threshold blocks everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    InDistribution,
    Ood,
}

/// One scored sample of an ID-vs-OOD benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: SampleLabel,
}

impl ScoredSample {
    pub fn new(score: f64, label: SampleLabel) -> Self {
        Self { score, label }
    }
}

fn validate_samples(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::Data("non-finite score".into()));
    }
    let pos = samples.iter().filter(|s| s.label == SampleLabel::Ood).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "need at least one sample of each label".into(),
        ));
    }
    Ok((pos, neg))
}

/// AUROC via the Mann-Whitney rank statistic with midranks for ties:
/// `P(score_ood > score_id) + 0.5 * P(equal)`.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = validate_samples(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.partial_cmp(&samples[b].score).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midrank
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if samples[idx].label == SampleLabel::Ood {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC points `(fpr, tpr)` from (0,0) to (1,1), one step per distinct score,
/// thresholds descending ("positive" means score >= threshold).
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = validate_samples(samples)?;
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            match sorted[i].label {
                SampleLabel::Ood => tp += 1,
                SampleLabel::InDistribution => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuprPositive {
    /// In-distribution as positive, scores negated.
    In,
    /// OOD as positive, scores as-is.
    Out,
}

/// Area under precision-recall by all-threshold step integration.
pub fn aupr(samples: &[ScoredSample], positive: AuprPositive) -> Result<f64> {
    validate_samples(samples)?;
    let is_positive = |s: &ScoredSample| match positive {
        AuprPositive::Out => s.label == SampleLabel::Ood,
        AuprPositive::In => s.label == SampleLabel::InDistribution,
    };
    let effective = |s: &ScoredSample| match positive {
        AuprPositive::Out => s.score,
        AuprPositive::In => -s.score,
    };
    let total_pos = samples.iter().filter(|s| is_positive(s)).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("no positive samples for AUPR".into()));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| effective(b).partial_cmp(&effective(a)).unwrap());

    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = effective(sorted[i]);
        while i < sorted.len() && effective(sorted[i]) == threshold {
            if is_positive(sorted[i]) {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// The ROC operating point selected by the conservative rule: the largest
/// threshold whose TPR reaches the target, i.e. the smallest positive set —
/// and therefore the smallest FPR — achieving it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

pub fn operating_point(samples: &[ScoredSample], tpr_target: f64) -> Result<OperatingPoint> {
    let (pos, neg) = validate_samples(samples)?;
    if !(0.0 < tpr_target && tpr_target <= 1.0) {
        return Err(Error::Config("tpr_target must be in (0, 1]".into()));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            match sorted[i].label {
                SampleLabel::Ood => tp += 1,
                SampleLabel::InDistribution => fp += 1,
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        if tpr >= tpr_target {
            return Ok(OperatingPoint {
                threshold,
                tpr,
                fpr: fp as f64 / neg as f64,
            });
        }
    }
    unreachable!("the smallest threshold always reaches TPR 1");
}

/// False-positive rate at the conservative TPR-target operating point.
pub fn fpr_at_tpr(samples: &[ScoredSample], tpr_target: f64) -> Result<f64> {
    Ok(operating_point(samples, tpr_target)?.fpr)
}

/// Equal-prior detection error at the TPR-target operating point:
/// `0.5 * (1 - TPR_achieved) + 0.5 * FPR`.
pub fn de_at_tpr(samples: &[ScoredSample], tpr_target: f64) -> Result<f64> {
    let op = operating_point(samples, tpr_target)?;
    Ok(0.5 * (1.0 - op.tpr) + 0.5 * op.fpr)
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("pearson inputs differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedMetric("pearson needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("pearson undefined at zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One evaluated detection: prediction, optional matched ground truth, IoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: u64,
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
    pub matched_gt: Option<MatchedGt>,
    /// IoU with the matched ground truth; absent when unmatched.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedGt {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Confidence-vs-IoU correlation over all records and over true positives.
///
/// A record is a true positive when its matched ground truth shares the
/// predicted class and the IoU reaches `iou_tp_threshold`. Unmatched records
/// contribute IoU 0 to the all-records correlation. Either correlation is
/// reported absent (not an error) when undefined on its point set.
pub fn pcorr_split(
    records: &[DetectionRecord],
    iou_tp_threshold: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    if !(0.0 < iou_tp_threshold && iou_tp_threshold < 1.0) {
        return Err(Error::Config("iou_tp_threshold must be in (0, 1)".into()));
    }
    let all_c: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    let all_iou: Vec<f64> = records.iter().map(|r| r.iou.unwrap_or(0.0)).collect();
    let pcorr_all = pearson(&all_c, &all_iou).ok();

    let tp: Vec<&DetectionRecord> = records
        .iter()
        .filter(|r| {
            r.matched_gt
                .map(|g| g.class_id == r.class_id && r.iou.unwrap_or(0.0) >= iou_tp_threshold)
                .unwrap_or(false)
        })
        .collect();
    let tp_c: Vec<f64> = tp.iter().map(|r| r.confidence).collect();
    let tp_iou: Vec<f64> = tp.iter().map(|r| r.iou.unwrap_or(0.0)).collect();
    let pcorr_tp = pearson(&tp_c, &tp_iou).ok();
    Ok((pcorr_all, pcorr_tp))
}

/// Prediction input for average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApPrediction {
    pub scene_id: u64,
    pub class_id: usize,
    pub confidence: f64,
    pub bbox: BBox,
}

/// Ground-truth input for average precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApGroundTruth {
    pub scene_id: u64,
    pub class_id: usize,
    pub bbox: BBox,
}

/// Detection-quality summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap50: f64,
    pub map: f64,
    /// Classes that had at least one ground truth.
    pub evaluated_classes: Vec<usize>,
}

/// The 0.50:0.05:0.95 threshold ladder.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// AP for one class at one IoU threshold: confidence-sorted greedy matching
/// (each ground truth consumed once per threshold run), precision-recall with
/// all-point interpolation.
pub fn ap_single_class(
    preds: &[ApPrediction],
    gts: &[ApGroundTruth],
    class_id: usize,
    iou_threshold: f64,
) -> Option<f64> {
    let class_gts: Vec<&ApGroundTruth> = gts.iter().filter(|g| g.class_id == class_id).collect();
    if class_gts.is_empty() {
        return None;
    }
    let mut class_preds: Vec<(usize, &ApPrediction)> = preds
        .iter()
        .enumerate()
        .filter(|(_, p)| p.class_id == class_id)
        .collect();
    if class_preds.is_empty() {
        return Some(0.0);
    }
    class_preds.sort_by(|(ia, a), (ib, b)| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
    });
    let mut consumed = vec![false; class_gts.len()];
    let mut tps = Vec::with_capacity(class_preds.len());
    for (_, pred) in &class_preds {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in class_gts.iter().enumerate() {
            if consumed[gi] || gt.scene_id != pred.scene_id {
                continue;
            }
            let overlap = iou(&pred.bbox, &gt.bbox);
            if overlap >= iou_threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        match best {
            Some((gi, _)) => {
                consumed[gi] = true;
                tps.push(true);
            }
            None => tps.push(false),
        }
    }
    let total_gt = class_gts.len() as f64;
    let mut precisions = Vec::with_capacity(tps.len());
    let mut recalls = Vec::with_capacity(tps.len());
    let mut tp_count = 0usize;
    for (i, &is_tp) in tps.iter().enumerate() {
        if is_tp {
            tp_count += 1;
        }
        precisions.push(tp_count as f64 / (i + 1) as f64);
        recalls.push(tp_count as f64 / total_gt);
    }
    // precision envelope (all-point interpolation)
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        if precisions[i + 1] > precisions[i] {
            precisions[i] = precisions[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..precisions.len() {
        ap += (recalls[i] - prev_recall) * precisions[i];
        prev_recall = recalls[i];
    }
    Some(ap)
}

/// AP50 and multi-threshold mAP over all classes with ground truth.
pub fn average_precision(
    preds: &[ApPrediction],
    gts: &[ApGroundTruth],
    iou_thresholds: &[f64],
) -> Result<ApReport> {
    if gts.is_empty() {
        return Err(Error::UndefinedMetric("average precision needs ground truth".into()));
    }
    let mut classes: Vec<usize> = gts.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mean_over_classes = |thr: f64| -> f64 {
        let aps: Vec<f64> = classes
            .iter()
            .filter_map(|&c| ap_single_class(preds, gts, c, thr))
            .collect();
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    let ap50 = mean_over_classes(0.5);
    let map = iou_thresholds.iter().map(|&t| mean_over_classes(t)).sum::<f64>()
        / iou_thresholds.len() as f64;
    Ok(ApReport {
        ap50,
        map,
        evaluated_classes: classes,
    })
}

/// Full ID-vs-OOD benchmark summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OODBenchmarkResult {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub fpr_at_95: f64,
    pub de_at_95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Computes every Section-5 style metric for one sample set.
pub fn ood_benchmark(samples: &[ScoredSample]) -> Result<OODBenchmarkResult> {
    let (pos, neg) = validate_samples(samples)?;
    Ok(OODBenchmarkResult {
        auroc: auroc(samples)?,
        aupr_in: aupr(samples, AuprPositive::In)?,
        aupr_out: aupr(samples, AuprPositive::Out)?,
        fpr_at_95: fpr_at_tpr(samples, 0.95)?,
        de_at_95: de_at_tpr(samples, 0.95)?,
        n_id: neg,
        n_ood: pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(scores_ood: &[f64], scores_id: &[f64]) -> Vec<ScoredSample> {
        scores_ood
            .iter()
            .map(|&s| ScoredSample::new(s, SampleLabel::Ood))
            .chain(scores_id.iter().map(|&s| ScoredSample::new(s, SampleLabel::InDistribution)))
            .collect()
    }

    #[test]
    fn auroc_perfect_separation() {
        let s = mk(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auroc_all_ties_is_half() {
        let s = mk(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
    }

    #[test]
    fn auroc_pair_counting() {
        // 3 of 4 (ood, id) pairs ordered correctly
        let s = mk(&[0.8, 0.3], &[0.5, 0.1]);
        assert_eq!(auroc(&s).unwrap(), 0.75);
    }

    #[test]
    fn auroc_single_class_is_undefined() {
        let s: Vec<ScoredSample> = vec![ScoredSample::new(0.4, SampleLabel::Ood)];
        assert!(matches!(auroc(&s), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn aupr_perfect_is_one_both_ways() {
        let s = mk(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(aupr(&s, AuprPositive::Out).unwrap(), 1.0);
        assert_eq!(aupr(&s, AuprPositive::In).unwrap(), 1.0);
    }

    #[test]
    fn aupr_hand_threshold_sweep() {
        // precision path (1, 1/2, 2/3) over recall steps -> 5/6
        let s = mk(&[0.8, 0.3], &[0.5, 0.1]);
        let v = aupr(&s, AuprPositive::Out).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn aupr_random_scores_approach_positive_fraction() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let p = 0.3;
        let samples: Vec<ScoredSample> = (0..n)
            .map(|_| {
                let label = if rng.gen_bool(p) {
                    SampleLabel::Ood
                } else {
                    SampleLabel::InDistribution
                };
                ScoredSample::new(rng.gen_range(0.0..1.0), label)
            })
            .collect();
        let v = aupr(&samples, AuprPositive::Out).unwrap();
        assert!((v - p).abs() < 0.02, "got {v}");
    }

    #[test]
    fn fpr_perfect_separation_is_zero() {
        let s = mk(&[0.9, 0.8, 0.7], &[0.2, 0.1, 0.0]);
        assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 0.0);
    }

    #[test]
    fn fpr_all_equal_scores_is_one() {
        let s = mk(&[0.5; 4], &[0.5; 4]);
        assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn de_hand_value_matching_paper_row() {
        // TPR exactly 0.95 with FPR 0.103 -> DE 0.0765
        let mut samples = Vec::new();
        for _ in 0..19 {
            samples.push(ScoredSample::new(2.0, SampleLabel::Ood));
        }
        samples.push(ScoredSample::new(-1.0, SampleLabel::Ood));
        for _ in 0..103 {
            samples.push(ScoredSample::new(2.0, SampleLabel::InDistribution));
        }
        for _ in 0..897 {
            samples.push(ScoredSample::new(0.0, SampleLabel::InDistribution));
        }
        let op = operating_point(&samples, 0.95).unwrap();
        assert!((op.tpr - 0.95).abs() < 1e-12);
        assert!((op.fpr - 0.103).abs() < 1e-12);
        let de = de_at_tpr(&samples, 0.95).unwrap();
        assert!((de - 0.0765).abs() < 1e-12, "got {de}");
    }

    #[test]
    fn de_perfect_separation() {
        // 20 positives, threshold hits TPR exactly 0.95 with zero FPR
        let pos: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.01).collect();
        let s = mk(&pos, &[0.1, 0.2, 0.3]);
        let de = de_at_tpr(&s, 0.95).unwrap();
        assert!((de - 0.025).abs() < 1e-12, "got {de}");
    }

    #[test]
    fn pearson_identities() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        let v = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
        assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    fn rec(confidence: f64, iou: f64) -> DetectionRecord {
        let bbox = BBox::new(0.5, 0.5, 0.2, 0.2);
        DetectionRecord {
            scene_id: 0,
            bbox,
            class_id: 0,
            confidence,
            matched_gt: Some(MatchedGt { class_id: 0, bbox }),
            iou: Some(iou),
        }
    }

    #[test]
    fn pcorr_split_hand_cases() {
        let records = vec![rec(0.9, 0.9), rec(0.5, 0.5), rec(0.1, 0.1)];
        let (all, tp) = pcorr_split(&records, 0.5).unwrap();
        assert!((all.unwrap() - 1.0).abs() < 1e-12);
        // threshold excludes the 0.1 record; remaining 2 are perfectly linear
        assert!((tp.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcorr_tp_absent_on_zero_variance() {
        let records = vec![rec(0.9, 1.0), rec(0.5, 1.0), rec(0.2, 1.0)];
        let (_, tp) = pcorr_split(&records, 0.5).unwrap();
        assert!(tp.is_none());
    }

    #[test]
    fn ap_exact_single_prediction() {
        let bbox = BBox::new(0.5, 0.5, 0.2, 0.2);
        let preds = vec![ApPrediction {
            scene_id: 0,
            class_id: 0,
            confidence: 0.9,
            bbox,
        }];
        let gts = vec![ApGroundTruth {
            scene_id: 0,
            class_id: 0,
            bbox,
        }];
        let report = average_precision(&preds, &gts, &coco_iou_thresholds()).unwrap();
        assert_eq!(report.ap50, 1.0);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn ap_no_predictions_is_zero() {
        let gts = vec![ApGroundTruth {
            scene_id: 0,
            class_id: 0,
            bbox: BBox::new(0.5, 0.5, 0.2, 0.2),
        }];
        let report = average_precision(&[], &gts, &coco_iou_thresholds()).unwrap();
        assert_eq!(report.ap50, 0.0);
        assert_eq!(report.map, 0.0);
    }

    #[test]
    fn ap_duplicate_penalty_hand_walk() {
        // GT box; pred A conf 0.9 IoU ~0.6, pred B conf 0.8 IoU ~0.9.
        let gt_box = BBox::new(0.5, 0.5, 0.4, 0.4);
        // IoU(pred_a, gt): shift cx so intersection/union = 0.6: offset d gives
        // IoU = (w - d) / (w + d); d = w(1-q)/(1+q) with q=0.6 -> d = 0.1
        let pred_a = BBox::new(0.6, 0.5, 0.4, 0.4);
        // q = 0.9 -> d = 0.4*0.1/1.9 = 0.02105...
        let pred_b = BBox::new(0.5 + 0.4 * 0.1 / 1.9, 0.5, 0.4, 0.4);
        assert!((iou(&pred_a, &gt_box) - 0.6).abs() < 1e-9);
        assert!((iou(&pred_b, &gt_box) - 0.9).abs() < 1e-9);
        let preds = vec![
            ApPrediction {
                scene_id: 0,
                class_id: 0,
                confidence: 0.9,
                bbox: pred_a,
            },
            ApPrediction {
                scene_id: 0,
                class_id: 0,
                confidence: 0.8,
                bbox: pred_b,
            },
        ];
        let gts = vec![ApGroundTruth {
            scene_id: 0,
            class_id: 0,
            bbox: gt_box,
        }];
        // at 0.5 the high-confidence prediction matches first, B is a duplicate FP
        let ap50 = ap_single_class(&preds, &gts, 0, 0.5).unwrap();
        assert!((ap50 - 1.0).abs() < 1e-12, "got {ap50}");
        // at 0.7 only B can match: curve (0, 1/2) -> AP 0.5
        let ap70 = ap_single_class(&preds, &gts, 0, 0.7).unwrap();
        assert!((ap70 - 0.5).abs() < 1e-12, "got {ap70}");
    }

    #[test]
    fn zero_gt_class_excluded_from_mean() {
        let bbox = BBox::new(0.5, 0.5, 0.2, 0.2);
        let preds = vec![
            ApPrediction {
                scene_id: 0,
                class_id: 0,
                confidence: 0.9,
                bbox,
            },
            // class 7 never appears in ground truth
            ApPrediction {
                scene_id: 0,
                class_id: 7,
                confidence: 0.9,
                bbox,
            },
        ];
        let gts = vec![ApGroundTruth {
            scene_id: 0,
            class_id: 0,
            bbox,
        }];
        let report = average_precision(&preds, &gts, &[0.5]).unwrap();
        assert_eq!(report.evaluated_classes, vec![0]);
        assert_eq!(report.ap50, 1.0);
    }
}
