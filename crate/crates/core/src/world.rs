//! Seeded synthetic detection scenes and per-query input features.
//!
//! Scenes stand in for decoder-output embeddings: each query carries a
//! feature vector produced by a frozen random nonlinear map over a latent
//! object descriptor. Four regimes are generated:
//!
//! - in-distribution: the training world,
//! - near-OOD: the same world map over shifted latent distributions,
//! - far-OOD: an independently seeded world map,
//! - novel-class: the in-distribution map with classes withheld from training.
//!
//! Everything is deterministic under the master seed; each scene derives its
//! own child seed so parallel and serial generation agree byte-for-byte.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::jsonx;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    InDistribution,
    NearOod,
    FarOod,
    NovelClass,
}

impl RegimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::InDistribution => "in_distribution",
            RegimeKind::NearOod => "near_ood",
            RegimeKind::FarOod => "far_ood",
            RegimeKind::NovelClass => "novel_class",
        }
    }
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Ground-truth carrier for one generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub regime: RegimeKind,
    pub objects: Vec<GtObject>,
}

/// What a query was rendered from. Training-time metadata only; never fed to
/// the model and not exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    Object(usize),
    Background,
}

/// Generator configuration: world geometry, regime shifts, and split sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Number of real object classes (a no-object class is added by the model).
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Hidden width of the frozen world map.
    pub world_hidden: usize,
    /// Gaussian latent noise dimensions appended to each descriptor.
    pub noise_dim: usize,
    pub noise_sigma: f64,
    /// Queries rendered per scene.
    pub queries: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// In-distribution box side interval.
    pub min_size: f64,
    pub max_size: f64,
    /// Near-OOD box side interval (disjoint from the in-distribution one).
    /// Unfamiliar near objects draw sizes from its upper half; the scene mean
    /// width lands inside the interval.
    pub near_min_size: f64,
    pub near_max_size: f64,
    /// Fraction of near-OOD objects keeping in-distribution sizes.
    pub near_familiar: f64,
    /// Geometric skew applied to the near-OOD class prior; 1.0 = uniform.
    pub near_class_bias: f64,
    /// Probability that an object takes the scene's dominant class instead of
    /// a uniform draw; scene-level class clustering.
    pub scene_class_mix: f64,
    /// Upper box side for background latents; backgrounds sweep a wider size
    /// range than annotated objects.
    pub background_max_size: f64,
    /// Within-scene box side span: objects of one scene share a scale drawn
    /// per scene and vary by at most this much around it.
    pub scene_size_span: f64,
    /// Exponent shaping the scene-scale density; > 1 makes large-scale scenes
    /// progressively rarer.
    pub size_tail: f64,
    /// Class withheld from every training scene; present in novel-class
    /// evaluation scenes.
    pub held_out_class: Option<usize>,
    /// 0 = held-out class keeps its own latent direction (far-novel);
    /// values toward 1 mix it onto a trained neighbour class (near-novel).
    pub novel_similarity: f64,
    /// In-distribution scenes split across train/val/test.
    pub id_scenes: usize,
    /// Split ratio, normalized internally.
    pub split: [f64; 3],
    /// Evaluation scenes generated per requested OOD regime.
    pub ood_eval_scenes: usize,
    /// OOD regimes to generate evaluation sets for.
    pub ood_regimes: Vec<RegimeKind>,
    /// Regime of the training split; anything but in_distribution is rejected.
    pub train_regime: RegimeKind,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 16,
            world_hidden: 32,
            noise_dim: 4,
            noise_sigma: 0.05,
            queries: 25,
            min_objects: 13,
            max_objects: 16,
            min_size: 0.08,
            max_size: 0.30,
            near_min_size: 0.301,
            near_max_size: 0.95,
            near_familiar: 0.75,
            near_class_bias: 0.55,
            scene_class_mix: 0.65,
            background_max_size: 0.95,
            scene_size_span: 0.06,
            size_tail: 2.0,
            held_out_class: None,
            novel_similarity: 0.0,
            id_scenes: 2000,
            split: [7.5, 1.0, 1.5],
            ood_eval_scenes: 300,
            ood_regimes: vec![RegimeKind::NearOod, RegimeKind::FarOod],
            train_regime: RegimeKind::InDistribution,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("dataset.num_classes must be >= 1".into()));
        }
        if self.min_size > 1.0 {
            return Err(Error::Config("dataset.min_size must be <= 1".into()));
        }
        if self.min_size <= 0.0 || self.max_size > 1.0 || self.min_size > self.max_size {
            return Err(Error::Config("dataset box size interval is infeasible".into()));
        }
        if self.near_min_size <= 0.0
            || self.near_max_size > 1.0
            || self.near_min_size > self.near_max_size
        {
            return Err(Error::Config("dataset.near_* box size interval is infeasible".into()));
        }
        if self.max_objects > self.queries {
            return Err(Error::Config(format!(
                "dataset.max_objects {} exceeds queries {}",
                self.max_objects, self.queries
            )));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::Config("dataset.min_objects exceeds max_objects".into()));
        }
        if self.split.iter().any(|&f| f <= 0.0) {
            return Err(Error::Config("dataset.split fractions must be positive".into()));
        }
        if self.near_class_bias <= 0.0 {
            return Err(Error::Config("dataset.near_class_bias must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.scene_class_mix) {
            return Err(Error::Config("dataset.scene_class_mix must be in [0, 1]".into()));
        }
        if self.background_max_size < self.max_size || self.background_max_size > 1.0 {
            return Err(Error::Config(
                "dataset.background_max_size must lie in [max_size, 1]".into(),
            ));
        }
        if !(self.scene_size_span > 0.0) || self.scene_size_span > self.max_size - self.min_size {
            return Err(Error::Config(
                "dataset.scene_size_span must be positive and fit the size interval".into(),
            ));
        }
        if !(self.size_tail >= 1.0) {
            return Err(Error::Config("dataset.size_tail must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.near_familiar) {
            return Err(Error::Config("dataset.near_familiar must be in [0, 1)".into()));
        }
        // the near mixture mean must land inside the configured near interval
        let odd_mean = 0.25 * self.near_min_size + 0.75 * self.near_max_size;
        let scale_mean = self.min_size
            + (self.max_size - self.scene_size_span - self.min_size).max(0.0)
                / (self.size_tail + 1.0);
        let id_mean = scale_mean + 0.5 * self.scene_size_span;
        let mix_mean = self.near_familiar * id_mean + (1.0 - self.near_familiar) * odd_mean;
        if mix_mean < self.near_min_size || mix_mean > self.near_max_size {
            return Err(Error::Config(format!(
                "near size mixture mean {mix_mean:.3} falls outside the configured near interval"
            )));
        }
        if !(0.0..=1.0).contains(&self.novel_similarity) {
            return Err(Error::Config("dataset.novel_similarity must be in [0, 1]".into()));
        }
        if let Some(h) = self.held_out_class {
            if h >= self.num_classes {
                return Err(Error::Config(format!(
                    "dataset.held_out_class {h} out of range 0..{}",
                    self.num_classes
                )));
            }
            if self.num_classes < 2 {
                return Err(Error::Config(
                    "holding out a class requires num_classes >= 2".into(),
                ));
            }
        }
        if self.train_regime != RegimeKind::InDistribution {
            return Err(Error::Config(format!(
                "train split must be in_distribution, got {}",
                self.train_regime.as_str()
            )));
        }
        if self.ood_regimes.contains(&RegimeKind::InDistribution) {
            return Err(Error::Config("ood_regimes must not list in_distribution".into()));
        }
        if self.ood_regimes.contains(&RegimeKind::NovelClass) && self.held_out_class.is_none() {
            return Err(Error::Config(
                "novel_class regime requested without dataset.held_out_class".into(),
            ));
        }
        if !self.ood_regimes.is_empty() && self.ood_eval_scenes == 0 {
            return Err(Error::Config(
                "ood regimes requested with zero ood_eval_scenes".into(),
            ));
        }
        Ok(())
    }

    fn latent_dim(&self) -> usize {
        // class block + background flag + box + noise
        self.num_classes + 1 + 4 + self.noise_dim
    }

    /// Classes allowed in training and in-distribution scenes.
    fn trained_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|c| Some(*c) != self.held_out_class)
            .collect()
    }
}

/// Frozen random feature map: a two-layer nonlinear core over the class,
/// background, and noise channels plus a linear pathway for the box block,
/// so object scale moves features along fixed directions.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    pub feature_dim: usize,
    latent_dim: usize,
    /// Core channels (class block, background flag, noise) into the hidden layer.
    w1: Tensor2,
    b1: Vec<f64>,
    w2: Tensor2,
    b2: Vec<f64>,
    /// Linear box pathway, 4 x feature_dim.
    box_w: Tensor2,
    /// Offset of the box block within the latent vector.
    box_at: usize,
}

impl WorldMap {
    pub fn apply(&self, latent: &[f64], out: &mut [f64]) {
        debug_assert_eq!(latent.len(), self.latent_dim);
        debug_assert_eq!(out.len(), self.feature_dim);
        let hidden = self.w1.cols();
        let mut h = vec![0.0; hidden];
        let mut core_row = 0;
        for (i, &x) in latent.iter().enumerate() {
            if (self.box_at..self.box_at + 4).contains(&i) {
                continue;
            }
            let row = self.w1.row(core_row);
            for (j, hj) in h.iter_mut().enumerate() {
                *hj = row[j].mul_add(x, *hj);
            }
            core_row += 1;
        }
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = (*hj + self.b1[j]).tanh();
        }
        out.copy_from_slice(&self.b2);
        for (j, &hj) in h.iter().enumerate() {
            let row = self.w2.row(j);
            for (k, ok) in out.iter_mut().enumerate() {
                *ok = row[k].mul_add(hj, *ok);
            }
        }
        for k in 0..4 {
            let row = self.box_w.row(k);
            let x = latent[self.box_at + k];
            for (o, ok) in out.iter_mut().enumerate() {
                *ok = row[o].mul_add(x, *ok);
            }
        }
    }
}

// Domain separation tags for child seed derivation.
const TAG_WORLD_ID: u64 = 0x01;
const TAG_WORLD_FAR: u64 = 0x02;
const TAG_SCENE: u64 = 0x10;

/// splitmix64-style mixing so each (tag, index) gets an independent stream.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn child_seed(master: u64, tag: u64, index: u64) -> u64 {
    mix(mix(master ^ tag.wrapping_mul(0xd6e8feb86659fd93)).wrapping_add(index))
}

fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; both uniforms drawn unconditionally to keep streams aligned.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Builds the frozen world map for a regime. Far-OOD draws from an
/// independent seed stream; every other regime shares the in-distribution map.
pub fn make_world(seed: u64, regime: RegimeKind, cfg: &DatasetConfig) -> WorldMap {
    let tag = match regime {
        RegimeKind::FarOod => TAG_WORLD_FAR,
        _ => TAG_WORLD_ID,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, tag, 0));
    let latent_dim = cfg.latent_dim();
    let core_dim = latent_dim - 4;
    let hidden = cfg.world_hidden;
    let s1 = 1.6 / (core_dim as f64).sqrt();
    let s2 = 1.6 / (hidden as f64).sqrt();
    let mut w1 = Tensor2::zeros(core_dim, hidden);
    for v in w1.as_mut_slice() {
        *v = s1 * sample_normal(&mut rng);
    }
    let b1: Vec<f64> = (0..hidden).map(|_| 0.3 * sample_normal(&mut rng)).collect();
    let mut w2 = Tensor2::zeros(hidden, cfg.feature_dim);
    for v in w2.as_mut_slice() {
        *v = s2 * sample_normal(&mut rng);
    }
    let b2: Vec<f64> = (0..cfg.feature_dim).map(|_| 0.1 * sample_normal(&mut rng)).collect();
    let mut box_w = Tensor2::zeros(4, cfg.feature_dim);
    for v in box_w.as_mut_slice() {
        *v = 0.8 * sample_normal(&mut rng);
    }
    WorldMap {
        feature_dim: cfg.feature_dim,
        latent_dim,
        w1,
        b1,
        w2,
        b2,
        box_w,
        box_at: cfg.num_classes + 1,
    }
}

fn sample_box<R: Rng + ?Sized>(rng: &mut R, min_size: f64, max_size: f64) -> BBox {
    let w = rng.gen_range(min_size..=max_size);
    let h = rng.gen_range(min_size..=max_size);
    let cx = rng.gen_range(w / 2.0..=1.0 - w / 2.0);
    let cy = rng.gen_range(h / 2.0..=1.0 - h / 2.0);
    BBox::new(cx, cy, w, h)
}

fn sample_class<R: Rng + ?Sized>(rng: &mut R, classes: &[usize], bias: f64) -> usize {
    if (bias - 1.0).abs() < 1e-12 {
        return classes[rng.gen_range(0..classes.len())];
    }
    // geometric-style weights bias^rank over the listed classes
    let weights: Vec<f64> = (0..classes.len()).map(|k| bias.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (k, &w) in weights.iter().enumerate() {
        if draw < w {
            return classes[k];
        }
        draw -= w;
    }
    classes[classes.len() - 1]
}

/// Samples one scene for a regime. Near-OOD shifts box sizes and the class
/// prior; novel-class scenes are guaranteed at least one held-out object.
pub fn sample_scene<R: Rng + ?Sized>(
    regime: RegimeKind,
    rng: &mut R,
    scene_id: u64,
    cfg: &DatasetConfig,
) -> Result<Scene> {
    cfg.validate()?;
    let trained = cfg.trained_classes();
    let n = if cfg.max_objects == 0 {
        0
    } else {
        rng.gen_range(cfg.min_objects..=cfg.max_objects)
    };
    // scene-level class clustering: a dominant class per scene
    let dominant = trained[rng.gen_range(0..trained.len())];
    let clustered_class = |rng: &mut R| -> usize {
        if rng.gen_range(0.0..1.0) < cfg.scene_class_mix {
            dominant
        } else {
            trained[rng.gen_range(0..trained.len())]
        }
    };
    // scene-level size coherence: one scale per scene, shaped so large-scale
    // scenes thin out toward the top of the interval
    let span = cfg.scene_size_span;
    let scene_scale = |rng: &mut R, lo: f64, hi: f64, tail: f64| -> f64 {
        let u: f64 = rng.gen_range(0.0..1.0);
        lo + (hi - span - lo).max(0.0) * u.powf(tail)
    };
    let id_scale = scene_scale(rng, cfg.min_size, cfg.max_size, cfg.size_tail);
    // deterministic familiar count so confidence ranking can always fill the
    // top-K with in-distribution-sized objects on near scenes
    let familiar_count = (cfg.near_familiar * n as f64).round() as usize;
    let mut objects = Vec::with_capacity(n);
    for i in 0..n {
        let (class_id, bbox) = match regime {
            RegimeKind::InDistribution | RegimeKind::FarOod => (
                clustered_class(rng),
                sample_box(rng, id_scale, (id_scale + span).min(cfg.max_size)),
            ),
            RegimeKind::NearOod => {
                let class = sample_class(rng, &trained, cfg.near_class_bias);
                // familiar sizes first; the rest from the upper half of the
                // shifted interval
                let bbox = if i < familiar_count {
                    sample_box(rng, id_scale, (id_scale + span).min(cfg.max_size))
                } else {
                    let lo = 0.5 * (cfg.near_min_size + cfg.near_max_size);
                    sample_box(rng, lo, cfg.near_max_size)
                };
                (class, bbox)
            }
            RegimeKind::NovelClass => {
                let held = cfg.held_out_class.ok_or_else(|| {
                    Error::Config("novel_class scene without held_out_class".into())
                })?;
                let class = if i == 0 {
                    held
                } else {
                    clustered_class(rng)
                };
                (class, sample_box(rng, id_scale, (id_scale + span).min(cfg.max_size)))
            }
        };
        objects.push(GtObject { class_id, bbox });
    }
    Ok(Scene {
        scene_id,
        regime,
        objects,
    })
}

/// Latent class block: one-hot, except a held-out class partially mixed onto
/// its neighbour when `novel_similarity > 0`.
fn class_block(cfg: &DatasetConfig, class_id: usize, out: &mut [f64]) {
    out.fill(0.0);
    let s = cfg.novel_similarity;
    if Some(class_id) == cfg.held_out_class && s > 0.0 {
        let neighbour = (class_id + 1) % cfg.num_classes;
        out[class_id] = 1.0 - s;
        out[neighbour] = s;
    } else {
        out[class_id] = 1.0;
    }
}

/// Renders all queries of a scene through a world map.
///
/// Object queries encode `(class one-hot | 0 | box | noise)`; background
/// queries encode `(zeros | 1 | random box | noise)`. Query order is shuffled
/// so index carries no signal.
pub fn render_queries<R: Rng + ?Sized>(
    scene: &Scene,
    world: &WorldMap,
    rng: &mut R,
    cfg: &DatasetConfig,
) -> Result<(Tensor2, Vec<QuerySource>)> {
    if world.feature_dim != cfg.feature_dim || world.latent_dim != cfg.latent_dim() {
        return Err(Error::Shape(format!(
            "world map dims {}x{} do not match config {}x{}",
            world.latent_dim,
            world.feature_dim,
            cfg.latent_dim(),
            cfg.feature_dim
        )));
    }
    if scene.objects.len() > cfg.queries {
        return Err(Error::Config(format!(
            "scene {} has {} objects for {} queries",
            scene.scene_id,
            scene.objects.len(),
            cfg.queries
        )));
    }
    let q = cfg.queries;
    let c = cfg.num_classes;
    let mut latent = vec![0.0; cfg.latent_dim()];
    let mut sources: Vec<QuerySource> = (0..q)
        .map(|i| {
            if i < scene.objects.len() {
                QuerySource::Object(i)
            } else {
                QuerySource::Background
            }
        })
        .collect();
    // Fisher-Yates with the scene rng.
    for i in (1..q).rev() {
        let j = rng.gen_range(0..=i);
        sources.swap(i, j);
    }
    let mut features = Tensor2::zeros(q, cfg.feature_dim);
    for (qi, src) in sources.iter().enumerate() {
        latent.fill(0.0);
        match src {
            QuerySource::Object(oi) => {
                let obj = &scene.objects[*oi];
                class_block(cfg, obj.class_id, &mut latent[..c]);
                latent[c] = 0.0;
                latent[c + 1] = obj.bbox.cx;
                latent[c + 2] = obj.bbox.cy;
                latent[c + 3] = obj.bbox.w;
                latent[c + 4] = obj.bbox.h;
            }
            QuerySource::Background => {
                let b = sample_box(rng, cfg.min_size, cfg.background_max_size);
                latent[c] = 1.0;
                latent[c + 1] = b.cx;
                latent[c + 2] = b.cy;
                latent[c + 3] = b.w;
                latent[c + 4] = b.h;
            }
        }
        for k in 0..cfg.noise_dim {
            latent[c + 5 + k] = cfg.noise_sigma * sample_normal(rng);
        }
        world.apply(&latent, features.row_mut(qi));
    }
    Ok((features, sources))
}

/// One scene with its rendered query features.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene: Scene,
    pub features: Tensor2,
    /// Generation metadata; empty for imported records.
    pub sources: Vec<QuerySource>,
}

/// Train/val/test in-distribution splits plus per-regime evaluation sets.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<SceneRecord>,
    pub val: Vec<SceneRecord>,
    pub test: Vec<SceneRecord>,
    pub ood: BTreeMap<RegimeKind, Vec<SceneRecord>>,
}

fn split_counts(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let sum: f64 = fractions.iter().sum();
    let train = ((total as f64) * fractions[0] / sum).round() as usize;
    let val = ((total as f64) * fractions[1] / sum).round() as usize;
    let train = train.min(total);
    let val = val.min(total - train);
    [train, val, total - train - val]
}

fn generate_block(
    master_seed: u64,
    regime: RegimeKind,
    world: &WorldMap,
    count: usize,
    id_offset: u64,
    cfg: &DatasetConfig,
) -> Result<Vec<SceneRecord>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let scene_id = id_offset + i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(master_seed, TAG_SCENE, scene_id));
        let scene = sample_scene(regime, &mut rng, scene_id, cfg)?;
        let (features, sources) = render_queries(&scene, world, &mut rng, cfg)?;
        out.push(SceneRecord {
            scene,
            features,
            sources,
        });
    }
    Ok(out)
}

/// Generates the full dataset: in-distribution train/val/test plus the
/// requested OOD evaluation regimes. The training split is in-distribution
/// only, and held-out classes never appear outside novel-class scenes.
pub fn generate_dataset(cfg: &DatasetConfig, master_seed: u64) -> Result<DatasetSplits> {
    cfg.validate()?;
    let id_world = make_world(master_seed, RegimeKind::InDistribution, cfg);
    let counts = split_counts(cfg.id_scenes, &cfg.split);

    let train = generate_block(master_seed, RegimeKind::InDistribution, &id_world, counts[0], 0, cfg)?;
    let val = generate_block(
        master_seed,
        RegimeKind::InDistribution,
        &id_world,
        counts[1],
        counts[0] as u64,
        cfg,
    )?;
    let test = generate_block(
        master_seed,
        RegimeKind::InDistribution,
        &id_world,
        counts[2],
        (counts[0] + counts[1]) as u64,
        cfg,
    )?;

    let mut ood = BTreeMap::new();
    let mut offset = cfg.id_scenes as u64;
    for &regime in &cfg.ood_regimes {
        let world = match regime {
            RegimeKind::FarOod => make_world(master_seed, RegimeKind::FarOod, cfg),
            _ => id_world.clone(),
        };
        let block = generate_block(master_seed, regime, &world, cfg.ood_eval_scenes, offset, cfg)?;
        offset += cfg.ood_eval_scenes as u64;
        ood.insert(regime, block);
    }

    // Zero-shot contract: training contains only in-distribution scenes and
    // no held-out-class instances anywhere outside novel-class sets.
    debug_assert!(train.iter().all(|r| r.scene.regime == RegimeKind::InDistribution));
    Ok(DatasetSplits {
        train,
        val,
        test,
        ood,
    })
}

#[derive(Serialize)]
struct SceneLine<'a> {
    scene_id: u64,
    regime: RegimeKind,
    objects: &'a [GtObject],
    features: Vec<&'a [f64]>,
}

#[derive(Deserialize)]
struct SceneLineOwned {
    scene_id: u64,
    regime: RegimeKind,
    objects: Vec<GtObject>,
    features: Vec<Vec<f64>>,
}

/// Writes one split as JSON lines, floats at 17 significant digits.
pub fn export_split<W: Write>(records: &[SceneRecord], writer: &mut W) -> Result<()> {
    for rec in records {
        let line = SceneLine {
            scene_id: rec.scene.scene_id,
            regime: rec.scene.regime,
            objects: &rec.scene.objects,
            features: (0..rec.features.rows()).map(|r| rec.features.row(r)).collect(),
        };
        writeln!(writer, "{}", jsonx::to_json_line(&line)?)?;
    }
    Ok(())
}

pub fn export_split_to_path(records: &[SceneRecord], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    export_split(records, &mut file)
}

/// Reads a JSON-lines split produced by [`export_split`].
pub fn import_split<R: BufRead>(reader: R) -> Result<Vec<SceneRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SceneLineOwned = jsonx::from_json_line(&line, idx + 1)?;
        let features = Tensor2::from_rows(&parsed.features)
            .map_err(|e| Error::Data(format!("line {}: {e}", idx + 1)))?;
        out.push(SceneRecord {
            scene: Scene {
                scene_id: parsed.scene_id,
                regime: parsed.regime,
                objects: parsed.objects,
            },
            features,
            sources: Vec::new(),
        });
    }
    Ok(out)
}

pub fn import_split_from_path(path: &Path) -> Result<Vec<SceneRecord>> {
    let file = std::fs::File::open(path)?;
    import_split(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            id_scenes: 20,
            ood_eval_scenes: 10,
            queries: 8,
            max_objects: 3,
            min_objects: 1,
            feature_dim: 6,
            world_hidden: 10,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn world_map_is_deterministic_per_seed_and_regime() {
        let cfg = small_cfg();
        let a = make_world(1, RegimeKind::InDistribution, &cfg);
        let b = make_world(1, RegimeKind::InDistribution, &cfg);
        assert_eq!(a, b);
        let far = make_world(1, RegimeKind::FarOod, &cfg);
        assert_ne!(a, far);
        // near and novel share the in-distribution map
        assert_eq!(a, make_world(1, RegimeKind::NearOod, &cfg));
        assert_eq!(a, make_world(1, RegimeKind::NovelClass, &cfg));
    }

    #[test]
    fn id_and_far_maps_differ_on_sampled_latents() {
        let cfg = small_cfg();
        let id = make_world(1, RegimeKind::InDistribution, &cfg);
        let far = make_world(1, RegimeKind::FarOod, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut differing = 0usize;
        let total = 10_000;
        let mut a = vec![0.0; cfg.feature_dim];
        let mut b = vec![0.0; cfg.feature_dim];
        for _ in 0..total {
            let latent: Vec<f64> = (0..cfg.latent_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            id.apply(&latent, &mut a);
            far.apply(&latent, &mut b);
            let l2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if l2 > 0.0 {
                differing += 1;
            }
        }
        assert!(differing as f64 >= 0.99 * total as f64, "only {differing} differ");
    }

    #[test]
    fn empty_scene_when_max_objects_zero() {
        let cfg = DatasetConfig {
            max_objects: 0,
            min_objects: 0,
            ..small_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scene = sample_scene(RegimeKind::InDistribution, &mut rng, 0, &cfg).unwrap();
        assert!(scene.objects.is_empty());
    }

    #[test]
    fn scene_sampling_is_reproducible() {
        let cfg = small_cfg();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = sample_scene(RegimeKind::InDistribution, &mut r1, 7, &cfg).unwrap();
        let b = sample_scene(RegimeKind::InDistribution, &mut r2, 7, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scene_boxes_respect_bounds() {
        let cfg = small_cfg();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for regime in [RegimeKind::InDistribution, RegimeKind::NearOod] {
                let scene = sample_scene(regime, &mut rng, seed, &cfg).unwrap();
                for obj in &scene.objects {
                    let (x1, y1, x2, y2) = obj.bbox.corners();
                    assert!(x1 >= -1e-12 && y1 >= -1e-12 && x2 <= 1.0 + 1e-12 && y2 <= 1.0 + 1e-12);
                    assert!(obj.bbox.w >= cfg.min_size.min(cfg.near_min_size));
                }
            }
        }
    }

    #[test]
    fn near_ood_widths_live_in_shifted_interval() {
        // default object counts: the familiar/odd mixture mean is tuned for them
        let cfg = DatasetConfig {
            feature_dim: 6,
            world_hidden: 10,
            ..DatasetConfig::default()
        };
        let mut widths = Vec::new();
        for i in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let scene = sample_scene(RegimeKind::NearOod, &mut rng, i, &cfg).unwrap();
            widths.extend(scene.objects.iter().map(|o| o.bbox.w));
        }
        let mean = widths.iter().sum::<f64>() / widths.len() as f64;
        assert!(mean >= cfg.near_min_size && mean <= cfg.near_max_size, "mean {mean}");
        // disjoint from the in-distribution interval
        assert!(cfg.near_min_size > cfg.max_size);
    }

    #[test]
    fn rendering_is_deterministic_and_class_sensitive() {
        let mut cfg = small_cfg();
        cfg.noise_sigma = 0.0;
        let world = make_world(1, RegimeKind::InDistribution, &cfg);
        let bbox = BBox::new(0.5, 0.5, 0.2, 0.2);
        let scene_a = Scene {
            scene_id: 0,
            regime: RegimeKind::InDistribution,
            objects: vec![GtObject { class_id: 0, bbox }],
        };
        let mut scene_b = scene_a.clone();
        scene_b.objects[0].class_id = 1;

        let (fa1, _) = render_queries(&scene_a, &world, &mut ChaCha8Rng::seed_from_u64(9), &cfg).unwrap();
        let (fa2, _) = render_queries(&scene_a, &world, &mut ChaCha8Rng::seed_from_u64(9), &cfg).unwrap();
        assert_eq!(fa1, fa2);
        let (fb, _) = render_queries(&scene_b, &world, &mut ChaCha8Rng::seed_from_u64(9), &cfg).unwrap();
        assert_ne!(fa1, fb);
    }

    #[test]
    fn empty_scene_renders_all_background() {
        let cfg = small_cfg();
        let world = make_world(1, RegimeKind::InDistribution, &cfg);
        let scene = Scene {
            scene_id: 0,
            regime: RegimeKind::InDistribution,
            objects: vec![],
        };
        let (_, sources) = render_queries(&scene, &world, &mut ChaCha8Rng::seed_from_u64(2), &cfg).unwrap();
        assert!(sources.iter().all(|s| *s == QuerySource::Background));
    }

    #[test]
    fn every_object_is_covered_by_a_query() {
        let cfg = small_cfg();
        let world = make_world(4, RegimeKind::InDistribution, &cfg);
        for i in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let scene = sample_scene(RegimeKind::InDistribution, &mut rng, i, &cfg).unwrap();
            let (_, sources) = render_queries(&scene, &world, &mut rng, &cfg).unwrap();
            for oi in 0..scene.objects.len() {
                assert!(sources.contains(&QuerySource::Object(oi)));
            }
        }
    }

    #[test]
    fn split_counts_follow_ratio() {
        assert_eq!(split_counts(100, &[7.5, 1.0, 1.5]), [75, 10, 15]);
        assert_eq!(split_counts(2000, &[7.5, 1.0, 1.5]), [1500, 200, 300]);
    }

    #[test]
    fn train_split_is_in_distribution_only() {
        let cfg = small_cfg();
        let splits = generate_dataset(&cfg, 0).unwrap();
        assert!(splits.train.iter().all(|r| r.scene.regime == RegimeKind::InDistribution));
        assert_eq!(splits.train.len(), 15);
        assert_eq!(splits.val.len(), 2);
        assert_eq!(splits.test.len(), 3);
        assert_eq!(splits.ood.len(), 2);
    }

    #[test]
    fn non_id_train_regime_rejected() {
        let cfg = DatasetConfig {
            train_regime: RegimeKind::FarOod,
            ..small_cfg()
        };
        assert!(matches!(generate_dataset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn held_out_class_never_trains() {
        let cfg = DatasetConfig {
            held_out_class: Some(3),
            ood_regimes: vec![RegimeKind::NovelClass],
            ..small_cfg()
        };
        let splits = generate_dataset(&cfg, 1).unwrap();
        let train_has_held_out = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .flat_map(|r| &r.scene.objects)
            .any(|o| o.class_id == 3);
        assert!(!train_has_held_out);
        let novel = &splits.ood[&RegimeKind::NovelClass];
        assert!(novel.iter().all(|r| r.scene.objects.iter().any(|o| o.class_id == 3)));
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg, 9).unwrap();
        let b = generate_dataset(&cfg, 9).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.scene, y.scene);
            assert_eq!(x.features, y.features);
        }
    }

    #[test]
    fn export_import_roundtrip() {
        let cfg = small_cfg();
        let splits = generate_dataset(&cfg, 2).unwrap();
        let mut buf = Vec::new();
        export_split(&splits.test, &mut buf).unwrap();
        let back = import_split(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), splits.test.len());
        for (a, b) in back.iter().zip(&splits.test) {
            assert_eq!(a.scene, b.scene);
            assert_eq!(a.features, b.features);
        }
    }
}
