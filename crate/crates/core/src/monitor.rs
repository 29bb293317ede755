//! Uncertainty scores from tandem-head disagreement.
//!
//! Scores read the raw head outputs before fusion (fusion would erase the
//! disagreement being measured); top-K membership is decided by fused
//! confidence. The image-level score centers per-detection variances by
//! their top-K means; the object-level score keeps raw variances and
//! normalizes by detection confidence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{select_topk, HeadOutput, TandemModel};
use crate::world::{RegimeKind, SceneRecord};

/// Per-scene uncertainty values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub image_usm: f64,
    /// `(detection index, score)` for every top-K detection.
    pub per_object_usm: Vec<(usize, f64)>,
    pub top_k_used: usize,
}

/// Monitor options. `skip_outer_sqrt` drops the literal outer square root of
/// the image-level formula for ablation; default keeps the printed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub skip_outer_sqrt: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            skip_outer_sqrt: false,
        }
    }
}

#[inline]
fn pair_vars(alpha: &HeadOutput, beta: &HeadOutput, q: usize) -> (f64, f64) {
    let a = alpha.boxes.row(q);
    let b = beta.boxes.row(q);
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dw = a[2] - b[2];
    let dh = a[3] - b[3];
    let xy_var = (dx * dx + dy * dy).sqrt();
    let wh_var = dw * dw + dh * dh;
    (xy_var, wh_var)
}

/// Image-level uncertainty over a top-K selection.
///
/// Per detection: `xy_var = sqrt(dx^2 + dy^2)`, `wh_var = dw^2 + dh^2`;
/// both are centered by multiplication with their top-K means; the score is
/// `mean(sqrt(xy_centered) * wh_centered)`, outer square root included
/// verbatim.
pub fn usm_image(
    alpha: &HeadOutput,
    beta: &HeadOutput,
    topk: &[usize],
    cfg: &MonitorConfig,
) -> Result<f64> {
    if topk.is_empty() {
        return Err(Error::EmptySelection("usm_image needs at least one detection".into()));
    }
    let q_total = alpha.queries();
    if topk.iter().any(|&q| q >= q_total) {
        return Err(Error::Shape("top-K index out of range".into()));
    }
    let k = topk.len() as f64;
    let mut xy = Vec::with_capacity(topk.len());
    let mut wh = Vec::with_capacity(topk.len());
    for &q in topk {
        let (xv, wv) = pair_vars(alpha, beta, q);
        xy.push(xv);
        wh.push(wv);
    }
    let xy_mean = xy.iter().sum::<f64>() / k;
    let wh_mean = wh.iter().sum::<f64>() / k;
    let mut total = 0.0;
    for i in 0..xy.len() {
        let xy_centered = xy[i] * xy_mean;
        let wh_centered = wh[i] * wh_mean;
        let xy_term = if cfg.skip_outer_sqrt {
            xy_centered
        } else {
            xy_centered.sqrt()
        };
        total += xy_term * wh_centered;
    }
    Ok(total / k)
}

/// Object-level uncertainty for one detection: `sqrt(xy_var) * wh_var / sqrt(C)`
/// with raw (uncentered) variances and the fused confidence `C` in (0, 1].
pub fn usm_object(alpha: &HeadOutput, beta: &HeadOutput, q: usize, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(Error::InvalidConfidence(confidence));
    }
    if q >= alpha.queries() {
        return Err(Error::Shape("detection index out of range".into()));
    }
    let (xy_var, wh_var) = pair_vars(alpha, beta, q);
    Ok(xy_var.sqrt() * wh_var / confidence.sqrt())
}

/// One line of the score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub scene_id: u64,
    pub regime: RegimeKind,
    pub image_usm: f64,
    pub per_object: Vec<ObjectScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub index: usize,
    pub usm: f64,
    pub confidence: f64,
}

/// Scores every scene of a split in input order.
pub fn score_batch(
    model: &TandemModel,
    scenes: &[SceneRecord],
    cfg: &MonitorConfig,
) -> Result<Vec<SceneScore>> {
    let mut out = Vec::with_capacity(scenes.len());
    for record in scenes {
        out.push(score_scene(model, record, cfg)?);
    }
    Ok(out)
}

/// Forward pass plus both monitor levels for one scene.
pub fn score_scene(
    model: &TandemModel,
    record: &SceneRecord,
    cfg: &MonitorConfig,
) -> Result<SceneScore> {
    let (output, _) = model.forward(&record.features)?;
    let beta = output
        .beta
        .as_ref()
        .ok_or_else(|| Error::Config("situation monitor requires tandem heads".into()))?;
    let topk = select_topk(&output.fused, model.config.top_k)?;
    let image_usm = usm_image(&output.alpha, beta, &topk, cfg)?;
    let mut per_object = Vec::with_capacity(topk.len());
    for &q in &topk {
        let confidence = output.fused[q].confidence;
        let usm = usm_object(&output.alpha, beta, q, confidence)?;
        per_object.push(ObjectScore {
            index: q,
            usm,
            confidence,
        });
    }
    Ok(SceneScore {
        scene_id: record.scene.scene_id,
        regime: record.scene.regime,
        image_usm,
        per_object,
    })
}

/// Convenience wrapper: uncertainty values without the dump metadata.
pub fn uncertainty_score(
    alpha: &HeadOutput,
    beta: &HeadOutput,
    fused_confidences: &[f64],
    topk: &[usize],
    cfg: &MonitorConfig,
) -> Result<UncertaintyScore> {
    let image_usm = usm_image(alpha, beta, topk, cfg)?;
    let mut per_object_usm = Vec::with_capacity(topk.len());
    for &q in topk {
        per_object_usm.push((q, usm_object(alpha, beta, q, fused_confidences[q])?));
    }
    Ok(UncertaintyScore {
        image_usm,
        per_object_usm,
        top_k_used: topk.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2;

    fn head(boxes: &[[f64; 4]]) -> HeadOutput {
        HeadOutput {
            boxes: Tensor2::from_rows(&boxes.iter().map(|b| b.to_vec()).collect::<Vec<_>>()).unwrap(),
            logits: Tensor2::zeros(boxes.len(), 2),
        }
    }

    const CFG: MonitorConfig = MonitorConfig {
        skip_outer_sqrt: false,
    };

    #[test]
    fn agreement_gives_zero_everywhere() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2], [0.1, 0.9, 0.3, 0.4]]);
        assert_eq!(usm_image(&a, &a, &[0, 1], &CFG).unwrap(), 0.0);
        assert_eq!(usm_object(&a, &a, 0, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn image_level_hand_value() {
        // K=1: xy_var 0.02, centered 4e-4, sqrt -> 0.02; wh_var 0.0025,
        // centered 6.25e-6; U = 1.25e-7
        let a = head(&[[0.5, 0.5, 0.2, 0.2]]);
        let b = head(&[[0.52, 0.5, 0.25, 0.2]]);
        let v = usm_image(&a, &b, &[0], &CFG).unwrap();
        assert!((v - 1.25e-7).abs() < 1e-12, "got {v:e}");
    }

    #[test]
    fn object_level_hand_value() {
        // sqrt(0.02) * 0.0025 / 0.9
        let a = head(&[[0.5, 0.5, 0.2, 0.2]]);
        let b = head(&[[0.52, 0.5, 0.25, 0.2]]);
        let v = usm_object(&a, &b, 0, 0.81).unwrap();
        let expected = 0.02_f64.sqrt() * 0.0025 / 0.81_f64.sqrt();
        assert!((v - expected).abs() < 1e-12, "got {v:e} want {expected:e}");
        assert!((expected - 3.928e-4).abs() < 1e-6);
    }

    #[test]
    fn confidence_quarter_doubles_object_score() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2]]);
        let b = head(&[[0.52, 0.5, 0.25, 0.2]]);
        let at_one = usm_object(&a, &b, 0, 1.0).unwrap();
        let at_quarter = usm_object(&a, &b, 0, 0.25).unwrap();
        assert!((at_quarter - 2.0 * at_one).abs() < 1e-15);
    }

    #[test]
    fn invalid_confidence_rejected() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2]]);
        assert!(matches!(
            usm_object(&a, &a, 0, 0.0),
            Err(Error::InvalidConfidence(_))
        ));
        assert!(usm_object(&a, &a, 0, -0.5).is_err());
    }

    #[test]
    fn empty_topk_is_an_error() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2]]);
        assert!(matches!(
            usm_image(&a, &a, &[], &CFG),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn scaling_gaps_up_increases_image_score() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2], [0.3, 0.3, 0.1, 0.1]]);
        let gaps = [[0.02, -0.01, 0.03, 0.01], [0.01, 0.02, -0.02, 0.03]];
        let mut prev = 0.0;
        for t in [1.0, 1.5, 2.0, 3.0] {
            let boxes: Vec<[f64; 4]> = (0..2)
                .map(|q| {
                    let base = a.boxes.row(q);
                    [
                        base[0] + t * gaps[q][0],
                        base[1] + t * gaps[q][1],
                        base[2] + t * gaps[q][2],
                        base[3] + t * gaps[q][3],
                    ]
                })
                .collect();
            let b = head(&boxes);
            let v = usm_image(&a, &b, &[0, 1], &CFG).unwrap();
            assert!(v > prev, "t={t}: {v} <= {prev}");
            prev = v;
        }
    }

    #[test]
    fn common_offset_leaves_scores_unchanged() {
        let a = head(&[[0.40, 0.40, 0.20, 0.20]]);
        let b = head(&[[0.42, 0.41, 0.23, 0.19]]);
        let shift = 0.07;
        let a2 = head(&[[0.40 + shift, 0.40 + shift, 0.20 + shift, 0.20 + shift]]);
        let b2 = head(&[[0.42 + shift, 0.41 + shift, 0.23 + shift, 0.19 + shift]]);
        let v1 = usm_image(&a, &b, &[0], &CFG).unwrap();
        let v2 = usm_image(&a2, &b2, &[0], &CFG).unwrap();
        assert!((v1 - v2).abs() < 1e-15);
        let o1 = usm_object(&a, &b, 0, 0.5).unwrap();
        let o2 = usm_object(&a2, &b2, 0, 0.5).unwrap();
        assert!((o1 - o2).abs() < 1e-15);
    }

    #[test]
    fn permuting_topk_leaves_image_score_unchanged() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2], [0.3, 0.3, 0.1, 0.1], [0.7, 0.2, 0.4, 0.3]]);
        let b = head(&[[0.52, 0.48, 0.22, 0.21], [0.33, 0.28, 0.12, 0.14], [0.66, 0.25, 0.37, 0.33]]);
        let v1 = usm_image(&a, &b, &[0, 1, 2], &CFG).unwrap();
        let v2 = usm_image(&a, &b, &[2, 0, 1], &CFG).unwrap();
        assert!((v1 - v2).abs() < 1e-15);
    }

    #[test]
    fn skip_outer_sqrt_flag_changes_formula() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2]]);
        let b = head(&[[0.52, 0.5, 0.25, 0.2]]);
        let ablated = MonitorConfig {
            skip_outer_sqrt: true,
        };
        let v = usm_image(&a, &b, &[0], &ablated).unwrap();
        // xy_centered 4e-4 used without the root
        assert!((v - 4e-4 * 6.25e-6).abs() < 1e-18, "got {v:e}");
    }
}
