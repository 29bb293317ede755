//! The tandem head stack: shared trunk, duplicated detectors, mean fusion.
//!
//! A shared trunk embeds query features; one (vanilla) or two (tandem mode)
//! detection heads regress boxes through a 3-layer feed-forward stack with a
//! squashing output and classify through a linear logit layer that includes
//! an explicit no-object class. Tandem inference fuses the two heads by
//! averaging boxes and class probabilities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mlp::{Activation, Mlp, MlpCache, MlpGrads};
use crate::optim::{adamw_step, AdamWConfig, OptimState};
use crate::tensor::Tensor2;
use crate::world::child_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Vanilla,
    Dbea,
}

/// Model hyperparameters. `trunk_hidden` plays the role of the feed-forward
/// channel count that the tandem variant halves to offset head duplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub trunk_hidden: usize,
    pub head_hidden: usize,
    /// Real classes; a no-object class is appended internally.
    pub num_classes: usize,
    pub queries: usize,
    pub top_k: usize,
    pub mode: ModelMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            trunk_hidden: 64,
            head_hidden: 32,
            num_classes: 5,
            queries: 25,
            top_k: 10,
            mode: ModelMode::Dbea,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.trunk_hidden == 0
            || self.head_hidden == 0
            || self.num_classes == 0
            || self.queries == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.top_k == 0 || self.top_k > self.queries {
            return Err(Error::Config(format!(
                "model.top_k {} must be in 1..={}",
                self.top_k, self.queries
            )));
        }
        Ok(())
    }

    /// Logit dimension: real classes plus the no-object class.
    pub fn logit_dim(&self) -> usize {
        self.num_classes + 1
    }

    pub fn no_object_class(&self) -> usize {
        self.num_classes
    }
}

/// Raw per-head outputs: squashed boxes and unnormalized class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// queries x 4, components in [0, 1] through the sigmoid squash.
    pub boxes: Tensor2,
    /// queries x (num_classes + 1).
    pub logits: Tensor2,
}

impl HeadOutput {
    pub fn bbox(&self, q: usize) -> BBox {
        let r = self.boxes.row(q);
        BBox::new(r[0], r[1], r[2], r[3])
    }

    pub fn queries(&self) -> usize {
        self.boxes.rows()
    }
}

/// One fused detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// Mean per-head probability over all classes including no-object.
    pub class_probs: Vec<f64>,
    /// argmax over real classes.
    pub class_id: usize,
    /// Max mean probability over real classes (no-object excluded).
    pub confidence: f64,
}

/// Tandem forward result: per-head raw outputs plus fused detections.
#[derive(Debug, Clone)]
pub struct TandemOutput {
    pub alpha: HeadOutput,
    pub beta: Option<HeadOutput>,
    pub fused: Vec<Detection>,
}

/// One detection head.
///
/// The stem is the first layer of the 3-layer box regressor; both the box
/// tail and the classification projection read the stem's representation, so
/// decorrelating the heads' logits decorrelates the representations their box
/// paths run on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionHead {
    /// trunk_hidden -> head_hidden, relu. Box FFN layer 1.
    pub stem: Mlp,
    /// head_hidden -> head_hidden -> 4, relu then sigmoid. Box FFN layers 2-3.
    pub box_tail: Mlp,
    /// head_hidden -> num_classes + 1 logits.
    pub cls: Mlp,
}

impl DetectionHead {
    /// Bias prior on the no-object logit at init: queries start as confident
    /// background, which anchors the early classification signal.
    const NO_OBJECT_BIAS: f64 = 4.0;

    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let stem = Mlp::new_with_rng(cfg.trunk_hidden, &[(cfg.head_hidden, Activation::Relu)], rng);
        let box_tail = Mlp::new_with_rng(
            cfg.head_hidden,
            &[
                (cfg.head_hidden, Activation::Relu),
                (4, Activation::Sigmoid),
            ],
            rng,
        );
        let mut cls =
            Mlp::new_with_rng(cfg.head_hidden, &[(cfg.logit_dim(), Activation::Identity)], rng);
        cls.layers[0].bias[cfg.no_object_class()] = Self::NO_OBJECT_BIAS;
        Self { stem, box_tail, cls }
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count() + self.box_tail.param_count() + self.cls.param_count()
    }
}

/// Forward caches needed for the backward pass through one head.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub stem_cache: MlpCache,
    pub box_cache: MlpCache,
    pub cls_cache: MlpCache,
}

/// Full forward cache for a scene.
#[derive(Debug, Clone)]
pub struct ModelCache {
    pub trunk_cache: MlpCache,
    pub alpha: HeadCache,
    pub beta: Option<HeadCache>,
}

/// Gradients for one head's components.
#[derive(Debug, Clone)]
pub struct HeadGradsSet {
    pub stem: MlpGrads,
    pub box_tail: MlpGrads,
    pub cls: MlpGrads,
}

impl HeadGradsSet {
    fn zeros_like(head: &DetectionHead) -> Self {
        Self {
            stem: MlpGrads::zeros_like(&head.stem),
            box_tail: MlpGrads::zeros_like(&head.box_tail),
            cls: MlpGrads::zeros_like(&head.cls),
        }
    }

    fn add_scaled(&mut self, other: &HeadGradsSet, scale: f64) -> Result<()> {
        self.stem.add_scaled(&other.stem, scale)?;
        self.box_tail.add_scaled(&other.box_tail, scale)?;
        self.cls.add_scaled(&other.cls, scale)
    }

    fn scale(&mut self, factor: f64) {
        self.stem.scale(factor);
        self.box_tail.scale(factor);
        self.cls.scale(factor);
    }

    fn is_finite(&self) -> bool {
        self.stem.is_finite() && self.box_tail.is_finite() && self.cls.is_finite()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = self.stem.flatten();
        out.extend(self.box_tail.flatten());
        out.extend(self.cls.flatten());
        out
    }
}

/// Gradients shaped like the whole model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub trunk: MlpGrads,
    pub alpha: HeadGradsSet,
    pub beta: Option<HeadGradsSet>,
}

impl ModelGrads {
    pub fn zeros_like(model: &TandemModel) -> Self {
        Self {
            trunk: MlpGrads::zeros_like(&model.trunk),
            alpha: HeadGradsSet::zeros_like(&model.alpha),
            beta: model.beta.as_ref().map(HeadGradsSet::zeros_like),
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) -> Result<()> {
        self.trunk.add_scaled(&other.trunk, scale)?;
        self.alpha.add_scaled(&other.alpha, scale)?;
        if let (Some(a), Some(b)) = (self.beta.as_mut(), other.beta.as_ref()) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.trunk.scale(factor);
        self.alpha.scale(factor);
        if let Some(g) = self.beta.as_mut() {
            g.scale(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.is_finite()
            && self.alpha.is_finite()
            && self.beta.as_ref().map_or(true, HeadGradsSet::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.trunk.flatten();
        out.extend(self.alpha.flatten());
        if let Some(g) = &self.beta {
            out.extend(g.flatten());
        }
        out
    }
}

/// Optimizer state for one head.
#[derive(Debug, Clone)]
pub struct HeadOptimState {
    pub stem: OptimState,
    pub box_tail: OptimState,
    pub cls: OptimState,
}

impl HeadOptimState {
    fn new(head: &DetectionHead) -> Self {
        Self {
            stem: OptimState::new(&head.stem),
            box_tail: OptimState::new(&head.box_tail),
            cls: OptimState::new(&head.cls),
        }
    }
}

/// Optimizer state for every trainable component.
#[derive(Debug, Clone)]
pub struct ModelOptimState {
    pub trunk: OptimState,
    pub alpha: HeadOptimState,
    pub beta: Option<HeadOptimState>,
}

/// The full detector: shared trunk plus one or two heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TandemModel {
    pub config: ModelConfig,
    pub trunk: Mlp,
    pub alpha: DetectionHead,
    pub beta: Option<DetectionHead>,
}

impl TandemModel {
    /// Seeded init. Tandem heads draw independent random parameters from
    /// distinct child seeds.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut trunk_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0x7100, 0));
        let trunk = Mlp::new_with_rng(
            config.feature_dim,
            &[
                (config.trunk_hidden, Activation::Relu),
                (config.trunk_hidden, Activation::Relu),
            ],
            &mut trunk_rng,
        );
        let mut alpha_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0x7200, 0));
        let alpha = DetectionHead::new(config, &mut alpha_rng);
        let beta = match config.mode {
            ModelMode::Dbea => {
                let mut beta_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0x7300, 0));
                Some(DetectionHead::new(config, &mut beta_rng))
            }
            ModelMode::Vanilla => None,
        };
        Ok(Self {
            config: config.clone(),
            trunk,
            alpha,
            beta,
        })
    }

    /// Trunk embeddings for a feature batch.
    pub fn trunk_forward(&self, features: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features have dim {}, model expects {}",
                features.cols(),
                self.config.feature_dim
            )));
        }
        self.trunk.forward(features)
    }

    /// One head over trunk embeddings: stem representation feeds both the
    /// box tail and the classification projection.
    pub fn head_forward(head: &DetectionHead, embeddings: &Tensor2) -> Result<(HeadOutput, HeadCache)> {
        let (hidden, stem_cache) = head.stem.forward(embeddings)?;
        let (boxes, box_cache) = head.box_tail.forward(&hidden)?;
        let (logits, cls_cache) = head.cls.forward(&hidden)?;
        Ok((
            HeadOutput { boxes, logits },
            HeadCache {
                stem_cache,
                box_cache,
                cls_cache,
            },
        ))
    }

    /// Full forward pass: trunk, heads, fusion.
    pub fn forward(&self, features: &Tensor2) -> Result<(TandemOutput, ModelCache)> {
        if features.rows() != self.config.queries {
            return Err(Error::Shape(format!(
                "expected {} queries, got {}",
                self.config.queries,
                features.rows()
            )));
        }
        let (emb, trunk_cache) = self.trunk_forward(features)?;
        let (alpha_out, alpha_cache) = Self::head_forward(&self.alpha, &emb)?;
        let (beta_out, beta_cache) = match &self.beta {
            Some(head) => {
                let (o, c) = Self::head_forward(head, &emb)?;
                (Some(o), Some(c))
            }
            None => (None, None),
        };
        let fused = match &beta_out {
            Some(beta) => fuse_tandem(&alpha_out, beta, self.config.num_classes)?,
            None => fuse_single(&alpha_out, self.config.num_classes),
        };
        Ok((
            TandemOutput {
                alpha: alpha_out,
                beta: beta_out,
                fused,
            },
            ModelCache {
                trunk_cache,
                alpha: alpha_cache,
                beta: beta_cache,
            },
        ))
    }

    /// Backward pass from per-head output gradients; returns full model grads.
    ///
    /// `d_alpha_boxes`/`d_logits` are dL/d(post-activation outputs).
    pub fn backward(
        &self,
        cache: &ModelCache,
        d_alpha_boxes: &Tensor2,
        d_alpha_logits: &Tensor2,
        d_beta_boxes: Option<&Tensor2>,
        d_beta_logits: Option<&Tensor2>,
    ) -> Result<ModelGrads> {
        fn head_backward(
            head: &DetectionHead,
            cache: &HeadCache,
            d_boxes: &Tensor2,
            d_logits: &Tensor2,
        ) -> Result<(Tensor2, HeadGradsSet)> {
            let (d_hidden_box, box_tail) = head.box_tail.backward(&cache.box_cache, d_boxes)?;
            let (d_hidden_cls, cls) = head.cls.backward(&cache.cls_cache, d_logits)?;
            let mut d_hidden = d_hidden_box;
            d_hidden.add_scaled(&d_hidden_cls, 1.0)?;
            let (d_emb, stem) = head.stem.backward(&cache.stem_cache, &d_hidden)?;
            Ok((d_emb, HeadGradsSet { stem, box_tail, cls }))
        }

        let (mut d_emb, alpha) =
            head_backward(&self.alpha, &cache.alpha, d_alpha_boxes, d_alpha_logits)?;
        let mut beta = None;
        if let (Some(head), Some(bcache)) = (&self.beta, &cache.beta) {
            let db = d_beta_boxes
                .ok_or_else(|| Error::Shape("missing beta box gradients for tandem model".into()))?;
            let dl = d_beta_logits
                .ok_or_else(|| Error::Shape("missing beta logit gradients for tandem model".into()))?;
            let (d_emb_b, g) = head_backward(head, bcache, db, dl)?;
            d_emb.add_scaled(&d_emb_b, 1.0)?;
            beta = Some(g);
        }
        let (_, trunk) = self.trunk.backward(&cache.trunk_cache, &d_emb)?;
        Ok(ModelGrads { trunk, alpha, beta })
    }

    pub fn new_optim_state(&self) -> ModelOptimState {
        ModelOptimState {
            trunk: OptimState::new(&self.trunk),
            alpha: HeadOptimState::new(&self.alpha),
            beta: self.beta.as_ref().map(HeadOptimState::new),
        }
    }

    /// AdamW update over every component.
    pub fn apply_grads(
        &mut self,
        grads: &ModelGrads,
        state: &mut ModelOptimState,
        cfg: &AdamWConfig,
    ) -> Result<()> {
        fn head_step(
            head: &mut DetectionHead,
            grads: &HeadGradsSet,
            state: &mut HeadOptimState,
            cfg: &AdamWConfig,
        ) -> Result<()> {
            adamw_step(&mut head.stem, &grads.stem, &mut state.stem, cfg)?;
            adamw_step(&mut head.box_tail, &grads.box_tail, &mut state.box_tail, cfg)?;
            adamw_step(&mut head.cls, &grads.cls, &mut state.cls, cfg)
        }
        adamw_step(&mut self.trunk, &grads.trunk, &mut state.trunk, cfg)?;
        head_step(&mut self.alpha, &grads.alpha, &mut state.alpha, cfg)?;
        if let Some(head) = self.beta.as_mut() {
            head_step(
                head,
                grads.beta.as_ref().ok_or_else(|| Error::Shape("missing beta grads".into()))?,
                state.beta.as_mut().unwrap(),
                cfg,
            )?;
        }
        Ok(())
    }

    /// All parameters flattened in a fixed component order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = self.trunk.flatten_params();
        for head in std::iter::once(&self.alpha).chain(self.beta.as_ref()) {
            out.extend(head.stem.flatten_params());
            out.extend(head.box_tail.flatten_params());
            out.extend(head.cls.flatten_params());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut components: Vec<&mut Mlp> = vec![
            &mut self.trunk,
            &mut self.alpha.stem,
            &mut self.alpha.box_tail,
            &mut self.alpha.cls,
        ];
        if let Some(b) = self.beta.as_mut() {
            components.push(&mut b.stem);
            components.push(&mut b.box_tail);
            components.push(&mut b.cls);
        }
        let mut at = 0;
        for mlp in components {
            let n = mlp.param_count();
            if at + n > flat.len() {
                return Err(Error::Shape(format!(
                    "flat vector length {} too short for parameter count",
                    flat.len()
                )));
            }
            mlp.set_flat_params(&flat[at..at + n])?;
            at += n;
        }
        if at != flat.len() {
            return Err(Error::Shape(format!(
                "flat vector length {} vs parameter count {at}",
                flat.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count()
            + self.alpha.param_count()
            + self.beta.as_ref().map_or(0, DetectionHead::param_count)
    }
}

fn softmax(logits: &[f64], out: &mut [f64]) {
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

fn detection_from_probs(bbox: BBox, probs: Vec<f64>, num_classes: usize) -> Detection {
    let (class_id, confidence) = probs[..num_classes]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    Detection {
        bbox,
        class_probs: probs,
        class_id,
        confidence,
    }
}

/// Mean fusion of the tandem heads: element-wise mean of boxes, mean of the
/// per-head softmax probabilities. Confidence is the max fused probability
/// over real classes so background queries rank last.
pub fn fuse_tandem(alpha: &HeadOutput, beta: &HeadOutput, num_classes: usize) -> Result<Vec<Detection>> {
    if !alpha.boxes.same_shape(&beta.boxes) || !alpha.logits.same_shape(&beta.logits) {
        return Err(Error::Shape("tandem head output shapes differ".into()));
    }
    let q = alpha.queries();
    let dim = alpha.logits.cols();
    let mut pa = vec![0.0; dim];
    let mut pb = vec![0.0; dim];
    let mut fused = Vec::with_capacity(q);
    for i in 0..q {
        softmax(alpha.logits.row(i), &mut pa);
        softmax(beta.logits.row(i), &mut pb);
        let probs: Vec<f64> = pa.iter().zip(&pb).map(|(a, b)| 0.5 * (a + b)).collect();
        let ba = alpha.bbox(i);
        let bb = beta.bbox(i);
        let bbox = BBox::new(
            0.5 * (ba.cx + bb.cx),
            0.5 * (ba.cy + bb.cy),
            0.5 * (ba.w + bb.w),
            0.5 * (ba.h + bb.h),
        );
        fused.push(detection_from_probs(bbox, probs, num_classes));
    }
    Ok(fused)
}

/// Vanilla-mode "fusion": the single head's own softmax and boxes.
pub fn fuse_single(head: &HeadOutput, num_classes: usize) -> Vec<Detection> {
    let q = head.queries();
    let dim = head.logits.cols();
    let mut probs = vec![0.0; dim];
    (0..q)
        .map(|i| {
            softmax(head.logits.row(i), &mut probs);
            detection_from_probs(head.bbox(i), probs.clone(), num_classes)
        })
        .collect()
}

/// Indices of the k most confident detections, descending confidence, ties
/// broken by lower query index.
pub fn select_topk(detections: &[Detection], k: usize) -> Result<Vec<usize>> {
    if k > detections.len() {
        return Err(Error::Config(format!(
            "top_k {k} exceeds detection count {}",
            detections.len()
        )));
    }
    let mut idx: Vec<usize> = (0..detections.len()).collect();
    idx.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Closed-form parameter accounting for a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trunk: usize,
    pub box_head: usize,
    pub cls_head: usize,
    pub heads: usize,
    pub num_heads: usize,
    pub total: usize,
}

/// Counts sum(in*out + out) over the trunk and every head layer.
pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let dense = |i: usize, o: usize| i * o + o;
    let trunk = dense(cfg.feature_dim, cfg.trunk_hidden) + dense(cfg.trunk_hidden, cfg.trunk_hidden);
    let box_head = dense(cfg.trunk_hidden, cfg.head_hidden)
        + dense(cfg.head_hidden, cfg.head_hidden)
        + dense(cfg.head_hidden, 4);
    let cls_head = dense(cfg.head_hidden, cfg.logit_dim());
    let num_heads = match cfg.mode {
        ModelMode::Vanilla => 1,
        ModelMode::Dbea => 2,
    };
    let heads = num_heads * (box_head + cls_head);
    ParamCount {
        trunk,
        box_head,
        cls_head,
        heads,
        num_heads,
        total: trunk + heads,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feature_dim: 6,
            trunk_hidden: 8,
            head_hidden: 5,
            num_classes: 3,
            queries: 7,
            top_k: 4,
            mode: ModelMode::Dbea,
        }
    }

    fn head_output(boxes: &[[f64; 4]], logits: &[Vec<f64>]) -> HeadOutput {
        HeadOutput {
            boxes: Tensor2::from_rows(&boxes.iter().map(|b| b.to_vec()).collect::<Vec<_>>()).unwrap(),
            logits: Tensor2::from_rows(logits).unwrap(),
        }
    }

    #[test]
    fn zero_head_squashes_to_half() {
        // zero weights and bias: sigmoid(0) = 0.5 on every box component
        let cfg = tiny_cfg();
        let mut model = TandemModel::new(&cfg, 0).unwrap();
        for layer in model
            .alpha
            .stem
            .layers
            .iter_mut()
            .chain(&mut model.alpha.box_tail.layers)
        {
            layer.weight.scale(0.0);
            layer.bias.fill(0.0);
        }
        let features = Tensor2::zeros(cfg.queries, cfg.feature_dim);
        let (out, _) = model.forward(&features).unwrap();
        for q in 0..cfg.queries {
            let b = out.alpha.bbox(q);
            assert_eq!((b.cx, b.cy, b.w, b.h), (0.5, 0.5, 0.5, 0.5));
        }
    }

    #[test]
    fn identical_heads_produce_identical_outputs() {
        let cfg = tiny_cfg();
        let mut model = TandemModel::new(&cfg, 0).unwrap();
        model.beta = Some(model.alpha.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut features = Tensor2::zeros(cfg.queries, cfg.feature_dim);
        for v in features.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (out, _) = model.forward(&features).unwrap();
        assert_eq!(out.alpha, out.beta.unwrap());
    }

    #[test]
    fn independent_heads_differ_on_random_input() {
        let cfg = tiny_cfg();
        let model = TandemModel::new(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut features = Tensor2::zeros(cfg.queries, cfg.feature_dim);
        for v in features.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (out, _) = model.forward(&features).unwrap();
        assert_ne!(out.alpha, out.beta.unwrap());
    }

    #[test]
    fn fuse_means_boxes_and_probs() {
        // alpha (0.4,0.4,0.2,0.2), beta (0.6,0.6,0.2,0.2) -> (0.5,0.5,0.2,0.2)
        let ln = f64::ln;
        // logits chosen so the softmaxes are (0.8, 0.2) and (0.6, 0.4)
        let alpha = head_output(&[[0.4, 0.4, 0.2, 0.2]], &[vec![ln(0.8), ln(0.2)]]);
        let beta = head_output(&[[0.6, 0.6, 0.2, 0.2]], &[vec![ln(0.6), ln(0.4)]]);
        let fused = fuse_tandem(&alpha, &beta, 1).unwrap();
        let d = &fused[0];
        assert!((d.bbox.cx - 0.5).abs() < 1e-15);
        assert!((d.bbox.cy - 0.5).abs() < 1e-15);
        assert!((d.bbox.w - 0.2).abs() < 1e-15);
        assert!((d.class_probs[0] - 0.7).abs() < 1e-12);
        assert!((d.class_probs[1] - 0.3).abs() < 1e-12);
        assert!((d.confidence - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fusing_identical_heads_is_identity_on_boxes() {
        let h = head_output(
            &[[0.3, 0.7, 0.1, 0.4], [0.9, 0.2, 0.5, 0.6]],
            &[vec![1.0, -1.0, 0.2], vec![0.0, 0.0, 0.0]],
        );
        let fused = fuse_tandem(&h, &h, 2).unwrap();
        for (q, d) in fused.iter().enumerate() {
            assert_eq!(d.bbox, h.bbox(q));
        }
    }

    #[test]
    fn topk_orders_by_confidence_with_index_ties() {
        let mk = |conf: f64| Detection {
            bbox: BBox::new(0.5, 0.5, 0.1, 0.1),
            class_probs: vec![conf, 1.0 - conf],
            class_id: 0,
            confidence: conf,
        };
        let dets = vec![mk(0.9), mk(0.1), mk(0.5)];
        assert_eq!(select_topk(&dets, 2).unwrap(), vec![0, 2]);
        assert_eq!(select_topk(&dets, 3).unwrap(), vec![0, 2, 1]);
        let tied = vec![mk(0.5), mk(0.5)];
        assert_eq!(select_topk(&tied, 1).unwrap(), vec![0]);
        assert!(select_topk(&tied, 3).is_err());
    }

    #[test]
    fn param_count_matches_hand_count_and_instances() {
        // single dense 4 -> 2 is 10 parameters
        assert_eq!(4 * 2 + 2, 10);
        let cfg = tiny_cfg();
        let counts = param_count(&cfg);
        let model = TandemModel::new(&cfg, 0).unwrap();
        assert_eq!(counts.total, model.param_count());
        let vanilla_cfg = ModelConfig {
            mode: ModelMode::Vanilla,
            ..cfg.clone()
        };
        let vanilla = param_count(&vanilla_cfg);
        assert_eq!(
            counts.total,
            vanilla.total + counts.box_head + counts.cls_head,
            "tandem adds exactly one extra head at equal trunk width"
        );
    }

    #[test]
    fn halved_trunk_tandem_is_smaller_than_full_vanilla() {
        let dbea = param_count(&ModelConfig::default());
        let vanilla = param_count(&ModelConfig {
            trunk_hidden: 128,
            mode: ModelMode::Vanilla,
            ..ModelConfig::default()
        });
        assert!(dbea.total < vanilla.total);
    }

    #[test]
    fn boxes_stay_in_unit_range() {
        let cfg = tiny_cfg();
        let model = TandemModel::new(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut features = Tensor2::zeros(cfg.queries, cfg.feature_dim);
            for v in features.as_mut_slice() {
                *v = rng.gen_range(-50.0..50.0);
            }
            let (out, _) = model.forward(&features).unwrap();
            for d in &out.fused {
                for v in [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
