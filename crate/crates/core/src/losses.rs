//! Ground-truth-driven losses for the tandem detector.
//!
//! The stack combines a detection base loss (classification + L1 + GIoU on
//! both heads), a tandem aiding term pulling the heads together on matched
//! boxes, a tandem quelling term pushing them apart on unmatched boxes, and a
//! cosine diversity term decorrelating the classification logits. Tandem
//! terms touch only box outputs; diversity touches only logits.
//!
//! Every value is returned together with analytic gradients with respect to
//! the raw head outputs (post-squash boxes, logits); the full stack is
//! covered by central finite differences in the test suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::giou_with_grad;
use crate::matching::{hungarian_match, CostWeights, MatchAssignment};
use crate::model::{HeadOutput, ModelCache, ModelGrads, TandemModel, TandemOutput};
use crate::tensor::Tensor2;
use crate::world::GtObject;

/// Loss combination weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ta: f64,
    pub lambda_tq: f64,
    pub lambda_div: f64,
    pub w_cls: f64,
    pub w_l1: f64,
    pub w_giou: f64,
    /// Smoothing constant removing the quelling singularity at zero gap.
    pub epsilon_tq: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ta: 1.0,
            lambda_tq: 10.0,
            lambda_div: 40.0,
            w_cls: 2.0,
            w_l1: 5.0,
            w_giou: 2.0,
            epsilon_tq: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_ta", self.lambda_ta),
            ("lambda_tq", self.lambda_tq),
            ("lambda_div", self.lambda_div),
            ("w_cls", self.w_cls),
            ("w_l1", self.w_l1),
            ("w_giou", self.w_giou),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("loss.{name} must be >= 0, got {v}")));
            }
        }
        if !(self.epsilon_tq > 0.0) {
            return Err(Error::Config(format!(
                "loss.epsilon_tq must be > 0, got {}",
                self.epsilon_tq
            )));
        }
        Ok(())
    }

    pub fn cost_weights(&self) -> CostWeights {
        CostWeights {
            w_cls: self.w_cls,
            w_l1: self.w_l1,
            w_giou: self.w_giou,
        }
    }
}

/// Scalar components of one loss evaluation.
///
/// `total = base + lambda_ta * ta + lambda_tq * tq + lambda_div * diversity`,
/// with `tandem` the weighted tandem pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub base: f64,
    pub ta: f64,
    pub tq: f64,
    pub tandem: f64,
    pub diversity: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        Self {
            base: 0.0,
            ta: 0.0,
            tq: 0.0,
            tandem: 0.0,
            diversity: 0.0,
            total: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.base, self.ta, self.tq, self.tandem, self.diversity, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.base += other.base;
        self.ta += other.ta;
        self.tq += other.tq;
        self.tandem += other.tandem;
        self.diversity += other.diversity;
        self.total += other.total;
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self {
            base: self.base * f,
            ta: self.ta * f,
            tq: self.tq * f,
            tandem: self.tandem * f,
            diversity: self.diversity * f,
            total: self.total * f,
        }
    }
}

/// Gradients with respect to one head's raw outputs.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub d_boxes: Tensor2,
    pub d_logits: Tensor2,
}

impl HeadGrads {
    fn zeros_like(head: &HeadOutput) -> Self {
        Self {
            d_boxes: Tensor2::zeros(head.boxes.rows(), head.boxes.cols()),
            d_logits: Tensor2::zeros(head.logits.rows(), head.logits.cols()),
        }
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Detection base loss over one head: cross-entropy for every query (matched
/// queries to their ground-truth class, unmatched to no-object) plus L1 and
/// GIoU box terms on matched queries. Mean over queries.
fn base_loss_one_head(
    head: &HeadOutput,
    assignment: &MatchAssignment,
    gt: &[GtObject],
    weights: &LossWeights,
    no_object_class: usize,
    scale: f64,
    grads: &mut HeadGrads,
) -> Result<f64> {
    let q_total = head.queries();
    if q_total == 0 {
        return Ok(0.0);
    }
    let logit_dim = head.logits.cols();
    if no_object_class >= logit_dim {
        return Err(Error::Shape("no-object class outside logit dimension".into()));
    }
    let per_query = scale / q_total as f64;
    let mut probs = vec![0.0; logit_dim];
    let mut value = 0.0;

    let mut target = vec![usize::MAX; q_total];
    for &(q, g) in &assignment.pairs {
        if q >= q_total || g >= gt.len() {
            return Err(Error::Shape("assignment indices out of range".into()));
        }
        target[q] = g;
    }

    for q in 0..q_total {
        softmax_into(head.logits.row(q), &mut probs);
        let class = match target[q] {
            usize::MAX => no_object_class,
            g => gt[g].class_id,
        };
        if class >= logit_dim {
            return Err(Error::Data(format!("gt class {class} outside logit dim")));
        }
        let ce = -probs[class].max(1e-300).ln();
        value += weights.w_cls * ce;
        let drow = grads.d_logits.row_mut(q);
        for (k, &p) in probs.iter().enumerate() {
            let indicator = if k == class { 1.0 } else { 0.0 };
            drow[k] += weights.w_cls * (p - indicator) * per_query;
        }

        if target[q] != usize::MAX {
            let g = &gt[target[q]];
            let pred = head.bbox(q);
            // L1 on center-format coordinates
            let deltas = [
                pred.cx - g.bbox.cx,
                pred.cy - g.bbox.cy,
                pred.w - g.bbox.w,
                pred.h - g.bbox.h,
            ];
            let l1: f64 = deltas.iter().map(|d| d.abs()).sum();
            value += weights.w_l1 * l1;
            let (giou_val, giou_grad) = giou_with_grad(&pred, &g.bbox);
            value += weights.w_giou * (1.0 - giou_val);
            let brow = grads.d_boxes.row_mut(q);
            for k in 0..4 {
                brow[k] += (weights.w_l1 * deltas[k].signum() - weights.w_giou * giou_grad[k])
                    * per_query;
            }
        }
    }
    Ok(value / q_total as f64)
}

/// Base detection loss applied to both heads symmetrically and averaged.
pub fn base_loss(
    alpha: &HeadOutput,
    beta: Option<&HeadOutput>,
    assignment: &MatchAssignment,
    gt: &[GtObject],
    weights: &LossWeights,
    no_object_class: usize,
) -> Result<(f64, HeadGrads, Option<HeadGrads>)> {
    let heads = if beta.is_some() { 2.0 } else { 1.0 };
    let mut alpha_grads = HeadGrads::zeros_like(alpha);
    let va = base_loss_one_head(
        alpha,
        assignment,
        gt,
        weights,
        no_object_class,
        1.0 / heads,
        &mut alpha_grads,
    )?;
    match beta {
        Some(b) => {
            let mut beta_grads = HeadGrads::zeros_like(b);
            let vb = base_loss_one_head(
                b,
                assignment,
                gt,
                weights,
                no_object_class,
                1.0 / heads,
                &mut beta_grads,
            )?;
            Ok(((va + vb) / 2.0, alpha_grads, Some(beta_grads)))
        }
        None => Ok((va, alpha_grads, None)),
    }
}

/// Tandem aiding: mean over matched queries of the summed absolute coordinate
/// gaps between the two heads' boxes. Zero when nothing is matched.
pub fn tandem_aiding(
    alpha: &HeadOutput,
    beta: &HeadOutput,
    assignment: &MatchAssignment,
) -> Result<(f64, Tensor2, Tensor2)> {
    let mut d_alpha = Tensor2::zeros(alpha.boxes.rows(), 4);
    let mut d_beta = Tensor2::zeros(beta.boxes.rows(), 4);
    let n = assignment.pairs.len();
    if n == 0 {
        return Ok((0.0, d_alpha, d_beta));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    for &(q, _) in &assignment.pairs {
        let a = alpha.boxes.row(q);
        let b = beta.boxes.row(q);
        for k in 0..4 {
            let delta = a[k] - b[k];
            value += delta.abs();
            let s = delta.signum(); // subgradient 0 at the tie
            d_alpha.row_mut(q)[k] += s * inv;
            d_beta.row_mut(q)[k] -= s * inv;
        }
    }
    Ok((value * inv, d_alpha, d_beta))
}

/// Tandem quelling: mean over unmatched queries of `sum_k 1/sqrt(gap_k^2 + eps)`.
/// The epsilon removes the singularity at equal boxes, which is exactly the
/// state at initialization. Zero when every query is matched.
pub fn tandem_quelling(
    alpha: &HeadOutput,
    beta: &HeadOutput,
    assignment: &MatchAssignment,
    epsilon_tq: f64,
) -> Result<(f64, Tensor2, Tensor2)> {
    if !(epsilon_tq > 0.0) {
        return Err(Error::Config("epsilon_tq must be > 0".into()));
    }
    let mut d_alpha = Tensor2::zeros(alpha.boxes.rows(), 4);
    let mut d_beta = Tensor2::zeros(beta.boxes.rows(), 4);
    let n = assignment.unmatched_queries.len();
    if n == 0 {
        return Ok((0.0, d_alpha, d_beta));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    for &q in &assignment.unmatched_queries {
        let a = alpha.boxes.row(q);
        let b = beta.boxes.row(q);
        for k in 0..4 {
            let delta = a[k] - b[k];
            let denom = (delta * delta + epsilon_tq).sqrt();
            value += 1.0 / denom;
            let d = -delta / (denom * denom * denom);
            d_alpha.row_mut(q)[k] += d * inv;
            d_beta.row_mut(q)[k] -= d * inv;
        }
    }
    Ok((value * inv, d_alpha, d_beta))
}

/// Mean cosine similarity between the heads' per-query class-score vectors
/// over all queries. Only the real-class logits enter (the no-object channel
/// carries matching bookkeeping, not class evidence). Queries where either
/// vector has norm below 1e-12 contribute zero.
pub fn diversity_loss(
    alpha: &HeadOutput,
    beta: &HeadOutput,
    num_classes: usize,
) -> Result<(f64, Tensor2, Tensor2)> {
    if !alpha.logits.same_shape(&beta.logits) {
        return Err(Error::Shape("logit shapes differ between heads".into()));
    }
    let q_total = alpha.logits.rows();
    let dim = alpha.logits.cols();
    if num_classes == 0 || num_classes > dim {
        return Err(Error::Shape(format!(
            "diversity over {num_classes} classes with logit dim {dim}"
        )));
    }
    let mut d_alpha = Tensor2::zeros(q_total, dim);
    let mut d_beta = Tensor2::zeros(q_total, dim);
    if q_total == 0 {
        return Ok((0.0, d_alpha, d_beta));
    }
    let inv = 1.0 / q_total as f64;
    let mut value = 0.0;
    for q in 0..q_total {
        let a = &alpha.logits.row(q)[..num_classes];
        let b = &beta.logits.row(q)[..num_classes];
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na < 1e-12 || nb < 1e-12 {
            continue;
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let cos = dot / (na * nb);
        value += cos;
        let da = d_alpha.row_mut(q);
        for k in 0..num_classes {
            da[k] += inv * (b[k] / (na * nb) - cos * a[k] / (na * na));
        }
        let db = d_beta.row_mut(q);
        for k in 0..num_classes {
            db[k] += inv * (a[k] / (na * nb) - cos * b[k] / (nb * nb));
        }
    }
    Ok((value * inv, d_alpha, d_beta))
}

/// Full loss gradients with respect to both heads' raw outputs.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub alpha: HeadGrads,
    pub beta: Option<HeadGrads>,
}

/// Composes the full loss for one scene given head outputs and a matching.
///
/// Tandem terms act only on box outputs of unmatched/matched queries;
/// diversity acts only on classification logits.
pub fn dbea_loss(
    output: &TandemOutput,
    assignment: &MatchAssignment,
    gt: &[GtObject],
    weights: &LossWeights,
    no_object_class: usize,
) -> Result<(LossBreakdown, LossGrads)> {
    weights.validate()?;
    let (base, mut alpha_grads, mut beta_grads) = base_loss(
        &output.alpha,
        output.beta.as_ref(),
        assignment,
        gt,
        weights,
        no_object_class,
    )?;

    let (ta, tq, diversity) = match output.beta.as_ref() {
        Some(beta) => {
            let (ta, ta_da, ta_db) = tandem_aiding(&output.alpha, beta, assignment)?;
            let (tq, tq_da, tq_db) =
                tandem_quelling(&output.alpha, beta, assignment, weights.epsilon_tq)?;
            let (div, div_da, div_db) =
                diversity_loss(&output.alpha, beta, no_object_class)?;
            let bg = beta_grads
                .as_mut()
                .ok_or_else(|| Error::Shape("beta grads missing for tandem loss".into()))?;
            alpha_grads.d_boxes.add_scaled(&ta_da, weights.lambda_ta)?;
            alpha_grads.d_boxes.add_scaled(&tq_da, weights.lambda_tq)?;
            alpha_grads.d_logits.add_scaled(&div_da, weights.lambda_div)?;
            bg.d_boxes.add_scaled(&ta_db, weights.lambda_ta)?;
            bg.d_boxes.add_scaled(&tq_db, weights.lambda_tq)?;
            bg.d_logits.add_scaled(&div_db, weights.lambda_div)?;
            (ta, tq, div)
        }
        None => (0.0, 0.0, 0.0),
    };

    let tandem = weights.lambda_ta * ta + weights.lambda_tq * tq;
    let breakdown = LossBreakdown {
        base,
        ta,
        tq,
        tandem,
        diversity,
        total: base + tandem + weights.lambda_div * diversity,
    };
    if !breakdown.is_finite() {
        return Err(Error::Divergence("non-finite loss".into()));
    }
    Ok((
        breakdown,
        LossGrads {
            alpha: alpha_grads,
            beta: beta_grads,
        },
    ))
}

/// Forward, match, loss, and backward for one scene.
///
/// When `fixed_match` is given it is used instead of re-matching; gradient
/// checks rely on this to keep the piecewise-constant assignment frozen.
pub fn scene_loss(
    model: &TandemModel,
    features: &Tensor2,
    gt: &[GtObject],
    weights: &LossWeights,
    fixed_match: Option<&MatchAssignment>,
) -> Result<(LossBreakdown, ModelGrads, MatchAssignment)> {
    let (output, cache) = model.forward(features)?;
    let assignment = match fixed_match {
        Some(m) => m.clone(),
        None => hungarian_match(&output.fused, gt, &weights.cost_weights())?,
    };
    let (breakdown, grads) = dbea_loss(
        &output,
        &assignment,
        gt,
        weights,
        model.config.no_object_class(),
    )?;
    let model_grads = backward_from_loss(model, &cache, &grads)?;
    Ok((breakdown, model_grads, assignment))
}

/// Routes loss gradients through the model.
pub fn backward_from_loss(
    model: &TandemModel,
    cache: &ModelCache,
    grads: &LossGrads,
) -> Result<ModelGrads> {
    model.backward(
        cache,
        &grads.alpha.d_boxes,
        &grads.alpha.d_logits,
        grads.beta.as_ref().map(|g| &g.d_boxes),
        grads.beta.as_ref().map(|g| &g.d_logits),
    )
}

/// Loss evaluation without gradients, for finite differencing.
pub fn scene_loss_value(
    model: &TandemModel,
    features: &Tensor2,
    gt: &[GtObject],
    weights: &LossWeights,
    fixed_match: &MatchAssignment,
) -> Result<LossBreakdown> {
    let (output, _) = model.forward(features)?;
    let (breakdown, _) = dbea_loss(
        &output,
        fixed_match,
        gt,
        weights,
        model.config.no_object_class(),
    )?;
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::tensor::Tensor2;

    fn head(boxes: &[[f64; 4]], logits: &[Vec<f64>]) -> HeadOutput {
        HeadOutput {
            boxes: Tensor2::from_rows(&boxes.iter().map(|b| b.to_vec()).collect::<Vec<_>>()).unwrap(),
            logits: Tensor2::from_rows(logits).unwrap(),
        }
    }

    fn single_match() -> MatchAssignment {
        MatchAssignment {
            pairs: vec![(0, 0)],
            unmatched_queries: vec![],
        }
    }

    #[test]
    fn weights_reject_negative_lambda() {
        let w = LossWeights {
            lambda_tq: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            epsilon_tq: 0.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn aiding_zero_for_equal_heads_and_hand_value() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2]], &[vec![0.0, 0.0]]);
        let m = single_match();
        let (v, _, _) = tandem_aiding(&a, &a, &m).unwrap();
        assert_eq!(v, 0.0);

        let b = head(&[[0.52, 0.5, 0.25, 0.2]], &[vec![0.0, 0.0]]);
        let (v, _, _) = tandem_aiding(&a, &b, &m).unwrap();
        assert!((v - 0.07).abs() < 1e-12, "got {v}");
        // swapping heads leaves the value unchanged
        let (v_swapped, _, _) = tandem_aiding(&b, &a, &m).unwrap();
        assert!((v - v_swapped).abs() < 1e-15);
    }

    #[test]
    fn aiding_zero_without_matches() {
        let a = head(&[[0.1, 0.2, 0.3, 0.4]], &[vec![0.0, 0.0]]);
        let b = head(&[[0.9, 0.8, 0.7, 0.6]], &[vec![0.0, 0.0]]);
        let m = MatchAssignment {
            pairs: vec![],
            unmatched_queries: vec![0],
        };
        let (v, _, _) = tandem_aiding(&a, &b, &m).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn quelling_singular_case_under_epsilon() {
        // equal boxes, eps = 1e-4: per query 4 / sqrt(1e-4) = 400
        let a = head(&[[0.5, 0.5, 0.2, 0.2]], &[vec![0.0, 0.0]]);
        let m = MatchAssignment {
            pairs: vec![],
            unmatched_queries: vec![0],
        };
        let (v, _, _) = tandem_quelling(&a, &a, &m, 1e-4).unwrap();
        assert!((v - 400.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn quelling_maximal_gap_value() {
        let a = head(&[[1.0, 1.0, 1.0, 1.0]], &[vec![0.0, 0.0]]);
        let b = head(&[[0.0, 0.0, 0.0, 0.0]], &[vec![0.0, 0.0]]);
        let m = MatchAssignment {
            pairs: vec![],
            unmatched_queries: vec![0],
        };
        let (v, _, _) = tandem_quelling(&a, &b, &m, 1e-4).unwrap();
        let expected = 4.0 / (1.0_f64 + 1e-4).sqrt();
        assert!((v - expected).abs() < 1e-12, "got {v} want {expected}");
    }

    #[test]
    fn quelling_decreases_as_gap_grows() {
        let m = MatchAssignment {
            pairs: vec![],
            unmatched_queries: vec![0],
        };
        let base = head(&[[0.5, 0.5, 0.5, 0.5]], &[vec![0.0, 0.0]]);
        let mut prev = f64::INFINITY;
        for gap in [0.0, 0.1, 0.2, 0.4, 0.5] {
            let other = head(&[[0.5 + gap, 0.5, 0.5, 0.5]], &[vec![0.0, 0.0]]);
            let (v, _, _) = tandem_quelling(&base, &other, &m, 1e-4).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn diversity_identities() {
        let a = head(&[[0.5; 4]], &[vec![1.0, 0.0]]);
        let (v, _, _) = diversity_loss(&a, &a, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-15);

        let b = head(&[[0.5; 4]], &[vec![0.0, 1.0]]);
        let (v, _, _) = diversity_loss(&a, &b, 2).unwrap();
        assert!(v.abs() < 1e-15);

        let c = head(&[[0.5; 4]], &[vec![1.0, 1.0]]);
        let (v, _, _) = diversity_loss(&c, &a, 2).unwrap();
        assert!((v - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn diversity_ignores_no_object_channel() {
        // identical real-class logits, wildly different no-object logits
        let a = head(&[[0.5; 4]], &[vec![1.0, 0.5, 9.0]]);
        let b = head(&[[0.5; 4]], &[vec![1.0, 0.5, -9.0]]);
        let (v, da, _) = diversity_loss(&a, &b, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(da.row(0)[2], 0.0);
    }

    #[test]
    fn diversity_invariant_under_positive_rescaling() {
        let a = head(&[[0.5; 4]], &[vec![0.3, -0.7, 1.1]]);
        let b = head(&[[0.5; 4]], &[vec![-0.2, 0.5, 0.9]]);
        let mut b_scaled = b.clone();
        for v in b_scaled.logits.as_mut_slice() {
            *v *= 37.5;
        }
        let (v1, _, _) = diversity_loss(&a, &b, 3).unwrap();
        let (v2, _, _) = diversity_loss(&a, &b_scaled, 3).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn diversity_degenerate_zero_vector_contributes_zero() {
        let a = head(&[[0.5; 4]], &[vec![0.0, 0.0]]);
        let b = head(&[[0.5; 4]], &[vec![1.0, 2.0]]);
        let (v, da, _) = diversity_loss(&a, &b, 2).unwrap();
        assert_eq!(v, 0.0);
        assert!(da.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn base_loss_perfect_prediction_is_zero() {
        let gt = vec![GtObject {
            class_id: 0,
            bbox: BBox::new(0.5, 0.5, 0.2, 0.2),
        }];
        // huge margin on the correct class, exact box
        let a = head(&[[0.5, 0.5, 0.2, 0.2]], &[vec![80.0, 0.0, 0.0]]);
        let m = single_match();
        let w = LossWeights::default();
        let (v, _, _) = base_loss(&a, Some(&a), &m, &gt, &w, 2).unwrap();
        assert!(v.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn base_loss_no_gt_no_object_is_zero() {
        let a = head(&[[0.5, 0.5, 0.2, 0.2]], &[vec![0.0, 0.0, 80.0]]);
        let m = MatchAssignment {
            pairs: vec![],
            unmatched_queries: vec![0],
        };
        let w = LossWeights::default();
        let (v, _, _) = base_loss(&a, None, &m, &[], &w, 2).unwrap();
        assert!(v.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn base_loss_uniform_probs_gives_ln5() {
        // 5-way uniform softmax: classification term = -ln(0.2) = ln 5
        let gt = vec![GtObject {
            class_id: 1,
            bbox: BBox::new(0.5, 0.5, 0.2, 0.2),
        }];
        let a = head(&[[0.5, 0.5, 0.2, 0.2]], &[vec![0.0; 5]]);
        let m = single_match();
        let w = LossWeights {
            w_cls: 1.0,
            w_l1: 0.0,
            w_giou: 0.0,
            ..LossWeights::default()
        };
        let (v, _, _) = base_loss(&a, Some(&a), &m, &gt, &w, 4).unwrap();
        assert!((v - 5.0_f64.ln()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn zero_lambdas_recover_base_loss() {
        let gt = vec![GtObject {
            class_id: 0,
            bbox: BBox::new(0.4, 0.4, 0.2, 0.2),
        }];
        let alpha = head(
            &[[0.5, 0.5, 0.25, 0.2], [0.2, 0.8, 0.1, 0.1]],
            &[vec![1.0, -0.5, 0.2], vec![1.0, -0.5, 0.2]],
        );
        let beta = head(
            &[[0.45, 0.52, 0.22, 0.19], [0.7, 0.3, 0.2, 0.15]],
            &[vec![-0.3, 0.8, 0.1], vec![-0.3, 0.8, 0.1]],
        );
        let output = TandemOutput {
            fused: crate::model::fuse_tandem(&alpha, &beta, 2).unwrap(),
            alpha,
            beta: Some(beta),
        };
        let m = MatchAssignment {
            pairs: vec![(0, 0)],
            unmatched_queries: vec![1],
        };
        let w0 = LossWeights {
            lambda_ta: 0.0,
            lambda_tq: 0.0,
            lambda_div: 0.0,
            ..LossWeights::default()
        };
        let (bd, _) = dbea_loss(&output, &m, &gt, &w0, 2).unwrap();
        assert!((bd.total - bd.base).abs() < 1e-15);
        // breakdown identity with default weights
        let w = LossWeights::default();
        let (bd, _) = dbea_loss(&output, &m, &gt, &w, 2).unwrap();
        let recomputed = bd.base + w.lambda_ta * bd.ta + w.lambda_tq * bd.tq + w.lambda_div * bd.diversity;
        assert!((bd.total - recomputed).abs() < 1e-12);
        assert!((bd.tandem - (w.lambda_ta * bd.ta + w.lambda_tq * bd.tq)).abs() < 1e-12);
    }
}
