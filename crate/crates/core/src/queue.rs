//! Online template queue: a fixed set of static target templates from
//! first-frame augmentation plus a bounded FIFO of online templates
//! committed every `n` frames from a samples bar.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::StackedTemplates;
use crate::bbox::BBox;
use crate::checkpoint::{Checkpoint, TensorRecord};
use crate::error::{Result, TregError};
use crate::tensor::{roi_pool, FeatureMap};

/// One committed template: pooled target features plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateEntry {
    pub features: FeatureMap,
    pub confidence: f64,
    pub frame_index: u64,
    pub is_static: bool,
}

/// How a commit boundary picks from the samples bar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    /// Never commit; the queue stays static.
    Disabled,
    /// Commit the last observed sample regardless of confidence.
    FixedInterval,
    /// Commit the sample with the highest confidence; ties go to the most
    /// recent frame.
    #[default]
    ConfidenceBased,
}

/// How the static templates are chosen from the augmented pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticSelection {
    /// The identity view plus the augmentations most cosine-similar to it.
    #[default]
    MostSimilar,
    /// The identity view plus the first augmentations in generation order.
    FirstGenerated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueueConfig {
    pub static_count: usize,
    pub max_online: usize,
    pub update_interval: u64,
    pub strategy: UpdateStrategy,
    pub static_selection: StaticSelection,
    pub template_size: usize,
    /// Augmented variants generated from the first frame (identity included).
    pub augment_count: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            static_count: 3,
            max_online: 4,
            update_interval: 25,
            strategy: UpdateStrategy::ConfidenceBased,
            static_selection: StaticSelection::MostSimilar,
            template_size: 5,
            augment_count: 15,
        }
    }
}

impl QueueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.static_count == 0 || self.static_count > 7 {
            return Err(TregError::Config(format!(
                "static_count must be in 1..=7, got {}",
                self.static_count
            )));
        }
        if self.static_count + self.max_online > 7 {
            return Err(TregError::Config(format!(
                "static_count + max_online must be <= 7, got {} + {}",
                self.static_count, self.max_online
            )));
        }
        if self.update_interval == 0 {
            return Err(TregError::Config("update_interval must be positive".into()));
        }
        if self.augment_count < self.static_count {
            return Err(TregError::Config(format!(
                "augment_count {} < static_count {}",
                self.augment_count, self.static_count
            )));
        }
        Ok(())
    }

    /// Named queue configurations used by the CLI and the ablations.
    pub fn preset(name: &str) -> Result<Self> {
        let base = QueueConfig::default();
        match name {
            "static1" => Ok(QueueConfig {
                static_count: 1,
                max_online: 0,
                strategy: UpdateStrategy::Disabled,
                ..base
            }),
            "static3" => Ok(QueueConfig {
                max_online: 0,
                strategy: UpdateStrategy::Disabled,
                ..base
            }),
            "static7" => Ok(QueueConfig {
                static_count: 7,
                max_online: 0,
                strategy: UpdateStrategy::Disabled,
                ..base
            }),
            "fixed" => Ok(QueueConfig { strategy: UpdateStrategy::FixedInterval, ..base }),
            "confidence" => Ok(QueueConfig { strategy: UpdateStrategy::ConfidenceBased, ..base }),
            other => Err(TregError::Config(format!(
                "unknown queue preset '{other}' (expected static1|static3|static7|fixed|confidence)"
            ))),
        }
    }
}

/// A pending sample observed since the last commit boundary.
#[derive(Clone, Debug, PartialEq)]
struct BarSample {
    features: FeatureMap,
    confidence: f64,
    frame_index: u64,
}

/// The queue state machine. Single-owner mutable state; snapshots from
/// [`TemplateQueueState::as_stacked`] are immutable values.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateQueueState {
    config: QueueConfig,
    statics: Vec<TemplateEntry>,
    online: Vec<TemplateEntry>,
    samples_bar: Vec<BarSample>,
    last_frame: Option<u64>,
}

/// An augmented view of the first frame together with its adjusted target
/// box (in the feature map's own cell coordinates).
#[derive(Clone, Debug)]
pub struct AugmentedSample {
    pub map: FeatureMap,
    pub bbox: BBox,
}

fn sample_bilinear(map: &FeatureMap, ch: usize, x: f64, y: f64) -> f64 {
    let h = map.height() as f64;
    let w = map.width() as f64;
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(map.width() - 1);
    let y1 = (y0 + 1).min(map.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = map.get(ch, y0, x0);
    let v01 = map.get(ch, y0, x1);
    let v10 = map.get(ch, y1, x0);
    let v11 = map.get(ch, y1, x1);
    v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Shifts map content by `(dx, dy)` cells with bilinear resampling and
/// edge clamping.
pub fn translate_map(map: &FeatureMap, dx: f64, dy: f64) -> FeatureMap {
    FeatureMap::from_fn(map.channels(), map.height(), map.width(), |c, r, col| {
        sample_bilinear(map, c, col as f64 - dx, r as f64 - dy)
    })
}

/// Rotates map content by `angle` radians around `(cx, cy)` with bilinear
/// resampling.
pub fn rotate_map(map: &FeatureMap, angle: f64, cx: f64, cy: f64) -> FeatureMap {
    let (sin, cos) = angle.sin_cos();
    FeatureMap::from_fn(map.channels(), map.height(), map.width(), |c, r, col| {
        let x = col as f64 - cx;
        let y = r as f64 - cy;
        let sx = cx + cos * x + sin * y;
        let sy = cy - sin * x + cos * y;
        sample_bilinear(map, c, sx, sy)
    })
}

/// One pass of 3x3 box blur with edge clamping.
pub fn blur_map(map: &FeatureMap) -> FeatureMap {
    let (h, w) = (map.height() as isize, map.width() as isize);
    FeatureMap::from_fn(map.channels(), map.height(), map.width(), |c, r, col| {
        let mut acc = 0.0;
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let rr = (r as isize + dr).clamp(0, h - 1) as usize;
                let cc = (col as isize + dc).clamp(0, w - 1) as usize;
                acc += map.get(c, rr, cc);
            }
        }
        acc / 9.0
    })
}

/// Generates `count` views of the first frame: the identity first, then
/// seeded translations, rotations, and blurs in rotation.
pub fn init_augmentations(
    features: &FeatureMap,
    gt_box: &BBox,
    seed: u64,
    count: usize,
) -> Result<Vec<AugmentedSample>> {
    if gt_box.area() <= 0.0 {
        return Err(TregError::Precondition("augmentation box has zero area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    out.push(AugmentedSample { map: features.clone(), bbox: *gt_box });
    for i in 1..count {
        match i % 3 {
            0 => {
                let passes = rng.gen_range(1..=2);
                let mut m = features.clone();
                for _ in 0..passes {
                    m = blur_map(&m);
                }
                out.push(AugmentedSample { map: m, bbox: *gt_box });
            }
            1 => {
                let dx = rng.gen_range(-2.0..2.0);
                let dy = rng.gen_range(-2.0..2.0);
                out.push(AugmentedSample {
                    map: translate_map(features, dx, dy),
                    bbox: gt_box.shifted(dx, dy),
                });
            }
            _ => {
                let angle = rng.gen_range(-0.35..0.35);
                out.push(AugmentedSample {
                    map: rotate_map(features, angle, gt_box.cx, gt_box.cy),
                    bbox: *gt_box,
                });
            }
        }
    }
    Ok(out)
}

fn cosine(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na: f64 = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

impl TemplateQueueState {
    /// Builds the queue from the first frame: generates the augmented
    /// views, pools each to the template size, and keeps the identity view
    /// plus the augmentations selected by the config rule as statics. The
    /// online portion starts empty. `gt_box` is in the feature map's cell
    /// coordinates.
    pub fn init_static(
        features: &FeatureMap,
        gt_box: &BBox,
        seed: u64,
        config: QueueConfig,
    ) -> Result<Self> {
        config.validate()?;
        let augmented = init_augmentations(features, gt_box, seed, config.augment_count)?;
        let pooled: Vec<FeatureMap> = augmented
            .iter()
            .map(|a| roi_pool(&a.map, &a.bbox, config.template_size))
            .collect::<Result<_>>()?;

        // The identity view is always kept; rank the rest.
        let mut order: Vec<usize> = (1..pooled.len()).collect();
        if config.static_selection == StaticSelection::MostSimilar {
            let mut scored: Vec<(usize, f64)> = order
                .iter()
                .map(|&i| (i, cosine(&pooled[i], &pooled[0])))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            order = scored.into_iter().map(|(i, _)| i).collect();
        }
        let mut statics = vec![TemplateEntry {
            features: pooled[0].clone(),
            confidence: 1.0,
            frame_index: 0,
            is_static: true,
        }];
        for &i in order.iter().take(config.static_count - 1) {
            statics.push(TemplateEntry {
                features: pooled[i].clone(),
                confidence: 1.0,
                frame_index: 0,
                is_static: true,
            });
        }
        Ok(TemplateQueueState {
            config,
            statics,
            online: Vec::new(),
            samples_bar: Vec::new(),
            last_frame: None,
        })
    }

    pub fn config(&self) -> &QueueConfig {
        &self.config
    }

    pub fn statics(&self) -> &[TemplateEntry] {
        &self.statics
    }

    pub fn online(&self) -> &[TemplateEntry] {
        &self.online
    }

    pub fn samples_bar_len(&self) -> usize {
        self.samples_bar.len()
    }

    pub fn total_committed(&self) -> usize {
        self.statics.len() + self.online.len()
    }

    /// Appends a pooled sample to the bar. Frame indices must strictly
    /// increase across calls.
    pub fn observe(
        &mut self,
        frame_index: u64,
        pooled_features: FeatureMap,
        confidence: f64,
    ) -> Result<()> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(TregError::Ordering(format!(
                    "observe at frame {frame_index} after frame {last}"
                )));
            }
        }
        let k = self.config.template_size;
        if pooled_features.height() != k || pooled_features.width() != k {
            return Err(TregError::shape(
                format!("{k}x{k} template"),
                pooled_features.shape_str(),
            ));
        }
        self.last_frame = Some(frame_index);
        self.samples_bar.push(BarSample {
            features: pooled_features,
            confidence: confidence.clamp(0.0, 1.0),
            frame_index,
        });
        Ok(())
    }

    /// At a boundary (`frame_index` a positive multiple of the update
    /// interval) commits one bar sample as a new online entry, evicting
    /// the oldest online entry when full, and empties the bar. Outside
    /// boundaries this is a no-op.
    pub fn maybe_commit(&mut self, frame_index: u64) -> Option<TemplateEntry> {
        if self.config.strategy == UpdateStrategy::Disabled {
            return None;
        }
        if frame_index == 0 || frame_index % self.config.update_interval != 0 {
            return None;
        }
        if self.samples_bar.is_empty() {
            return None;
        }
        let chosen = match self.config.strategy {
            UpdateStrategy::FixedInterval => self.samples_bar.last().unwrap().clone(),
            UpdateStrategy::ConfidenceBased | UpdateStrategy::Disabled => {
                let mut best = &self.samples_bar[0];
                for s in &self.samples_bar[1..] {
                    // >= so later frames win ties
                    if s.confidence >= best.confidence {
                        best = s;
                    }
                }
                best.clone()
            }
        };
        self.samples_bar.clear();
        if self.config.max_online == 0 {
            return None;
        }
        let entry = TemplateEntry {
            features: chosen.features,
            confidence: chosen.confidence,
            frame_index: chosen.frame_index,
            is_static: false,
        };
        if self.online.len() == self.config.max_online {
            self.online.remove(0);
        }
        self.online.push(entry.clone());
        Some(entry)
    }

    /// Stacks statics then online entries for the attention block.
    pub fn as_stacked(&self) -> Result<StackedTemplates> {
        if self.statics.is_empty() {
            return Err(TregError::Precondition("queue has no static templates".into()));
        }
        let entries: Vec<FeatureMap> = self
            .statics
            .iter()
            .chain(self.online.iter())
            .map(|e| e.features.clone())
            .collect();
        StackedTemplates::new(entries)
    }

    /// First static template (the identity view), the single-template
    /// source for the correlation fusions.
    pub fn primary_template(&self) -> Result<&FeatureMap> {
        self.statics
            .first()
            .map(|e| &e.features)
            .ok_or_else(|| TregError::Precondition("queue has no static templates".into()))
    }

    /// Serializes queue state (for pausing and resuming a tracking
    /// session) into checkpoint records under `prefix`.
    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        let meta = vec![
            self.statics.len() as f64,
            self.online.len() as f64,
            self.samples_bar.len() as f64,
            self.config.update_interval as f64,
            self.last_frame.map(|f| f as f64 + 1.0).unwrap_or(0.0),
        ];
        ck.insert(format!("{prefix}.meta"), TensorRecord::vector(meta));
        let put_entry = |ck: &mut Checkpoint, name: String, e: &TemplateEntry| {
            let (c, h, w) = e.features.shape();
            ck.insert(
                format!("{name}.features"),
                TensorRecord::new(vec![c, h, w], e.features.data().to_vec()).unwrap(),
            );
            ck.insert(
                format!("{name}.info"),
                TensorRecord::vector(vec![
                    e.confidence,
                    e.frame_index as f64,
                    if e.is_static { 1.0 } else { 0.0 },
                ]),
            );
        };
        for (i, e) in self.statics.iter().enumerate() {
            put_entry(ck, format!("{prefix}.static.{i}"), e);
        }
        for (i, e) in self.online.iter().enumerate() {
            put_entry(ck, format!("{prefix}.online.{i}"), e);
        }
        for (i, s) in self.samples_bar.iter().enumerate() {
            let (c, h, w) = s.features.shape();
            ck.insert(
                format!("{prefix}.bar.{i}.features"),
                TensorRecord::new(vec![c, h, w], s.features.data().to_vec()).unwrap(),
            );
            ck.insert(
                format!("{prefix}.bar.{i}.info"),
                TensorRecord::vector(vec![s.confidence, s.frame_index as f64, 0.0]),
            );
        }
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str, config: QueueConfig) -> Result<Self> {
        let meta = &ck.get(&format!("{prefix}.meta"))?.data;
        if meta.len() != 5 {
            return Err(TregError::Parse("queue meta record malformed".into()));
        }
        let n_static = meta[0] as usize;
        let n_online = meta[1] as usize;
        let n_bar = meta[2] as usize;
        let last_frame = if meta[4] > 0.0 { Some(meta[4] as u64 - 1) } else { None };
        let get_entry = |name: String| -> Result<TemplateEntry> {
            let feat = ck.get(&format!("{name}.features"))?;
            let dims = &feat.dims;
            if dims.len() != 3 {
                return Err(TregError::Parse(format!("{name}.features not rank 3")));
            }
            let features = FeatureMap::new(dims[0], dims[1], dims[2], feat.data.clone())?;
            let info = &ck.get(&format!("{name}.info"))?.data;
            Ok(TemplateEntry {
                features,
                confidence: info[0],
                frame_index: info[1] as u64,
                is_static: info[2] != 0.0,
            })
        };
        let mut statics = Vec::with_capacity(n_static);
        for i in 0..n_static {
            statics.push(get_entry(format!("{prefix}.static.{i}"))?);
        }
        let mut online = Vec::with_capacity(n_online);
        for i in 0..n_online {
            online.push(get_entry(format!("{prefix}.online.{i}"))?);
        }
        let mut samples_bar = Vec::with_capacity(n_bar);
        for i in 0..n_bar {
            let e = get_entry(format!("{prefix}.bar.{i}"))?;
            samples_bar.push(BarSample {
                features: e.features,
                confidence: e.confidence,
                frame_index: e.frame_index,
            });
        }
        Ok(TemplateQueueState { config, statics, online, samples_bar, last_frame })
    }
}
