//! Deterministic synthetic sequence generator: a textured rectangle target
//! under translation, scaling, and aspect deformation, over a textured
//! background with distractor rectangles. Ground truth is exact by
//! construction.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Result, TregError};
use crate::tensor::FeatureMap;

/// One rendered grayscale frame, already quantized to 8 bits. Tracking and
/// training always see these quantized values, whether frames come from
/// memory or from PGM files on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.width + c]
    }

    /// The frame as a 1-channel feature map with values in [0, 1].
    pub fn to_map(&self) -> FeatureMap {
        FeatureMap::new(
            1,
            self.height,
            self.width,
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("frame dims are valid")
    }
}

/// A generated sequence with exact per-frame ground truth.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
    pub boxes: Vec<BBox>,
}

/// Everything that determines a sequence, bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub name: String,
    pub length: usize,
    pub image_size: usize,
    pub start_center: (f64, f64),
    pub velocity: (f64, f64),
    pub base_size: (f64, f64),
    /// Smooth per-frame scale factor oscillates inside this range.
    pub scale_range: (f64, f64),
    pub scale_cycles: f64,
    /// Aspect-ratio warp amplitude; 0 keeps the box rigid.
    pub aspect_amplitude: f64,
    pub aspect_cycles: f64,
    /// Uniform boundary jitter in pixels.
    pub jitter: f64,
    pub distractor_count: usize,
    /// 0 = unrelated texture, 1 = the target's own texture.
    pub distractor_similarity: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(TregError::Config("sequence length must be positive".into()));
        }
        if self.image_size < 32 {
            return Err(TregError::Config("image size must be at least 32".into()));
        }
        if !(self.base_size.0 > 2.0 && self.base_size.1 > 2.0) {
            return Err(TregError::Config("target base size too small".into()));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.1 >= self.scale_range.0) {
            return Err(TregError::Config(format!(
                "degenerate scale range {:?}",
                self.scale_range
            )));
        }
        if !(0.0..1.0).contains(&self.aspect_amplitude) {
            return Err(TregError::Config("aspect amplitude must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_similarity) {
            return Err(TregError::Config("distractor similarity must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Texture {
    base: f64,
    amplitude: f64,
    freq_u: f64,
    freq_v: f64,
    phase_u: f64,
    phase_v: f64,
    border: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Texture {
            base: rng.gen_range(0.35..0.75),
            amplitude: rng.gen_range(0.25..0.45),
            freq_u: rng.gen_range(1.5..4.0),
            freq_v: rng.gen_range(1.5..4.0),
            phase_u: rng.gen_range(0.0..TAU),
            phase_v: rng.gen_range(0.0..TAU),
            border: rng.gen_range(0.0..0.15),
        }
    }

    fn lerp(a: &Texture, b: &Texture, t: f64) -> Texture {
        let m = |x: f64, y: f64| x + (y - x) * t;
        Texture {
            base: m(a.base, b.base),
            amplitude: m(a.amplitude, b.amplitude),
            freq_u: m(a.freq_u, b.freq_u),
            freq_v: m(a.freq_v, b.freq_v),
            phase_u: m(a.phase_u, b.phase_u),
            phase_v: m(a.phase_v, b.phase_v),
            border: m(a.border, b.border),
        }
    }

    /// Value at normalized box coordinates (u, v) in [0, 1]^2. The pattern
    /// is attached to the box, so it stretches with deformation.
    fn value(&self, u: f64, v: f64) -> f64 {
        let edge = u.min(1.0 - u).min(v).min(1.0 - v);
        if edge < 0.12 {
            return self.border;
        }
        self.base
            + self.amplitude
                * (TAU * (self.freq_u * u + self.phase_u / TAU)).sin()
                * (TAU * (self.freq_v * v + self.phase_v / TAU)).sin()
    }
}

struct Actor {
    texture: Texture,
    center: (f64, f64),
    velocity: (f64, f64),
    size: (f64, f64),
}

/// Renders a sequence from its spec. Fails if the spec'd motion would push
/// the target outside the image at any frame.
pub fn gen_sequence(spec: &SequenceSpec) -> Result<Sequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target_tex = Texture::random(&mut rng);
    let scale_phase = rng.gen_range(0.0..TAU);
    let aspect_phase = rng.gen_range(0.0..TAU);

    let size = spec.image_size as f64;
    let mut distractors: Vec<Actor> = (0..spec.distractor_count)
        .map(|_| {
            let own = Texture::random(&mut rng);
            Actor {
                texture: Texture::lerp(&own, &target_tex, spec.distractor_similarity),
                center: (rng.gen_range(0.15..0.85) * size, rng.gen_range(0.15..0.85) * size),
                velocity: (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                size: (
                    spec.base_size.0 * rng.gen_range(0.7..1.3),
                    spec.base_size.1 * rng.gen_range(0.7..1.3),
                ),
            }
        })
        .collect();

    // Background pattern, static across the sequence.
    let bg_base = rng.gen_range(0.25..0.45);
    let bg_amp = rng.gen_range(0.03..0.10);
    let bg_fx = rng.gen_range(0.02..0.06);
    let bg_fy = rng.gen_range(0.02..0.06);
    let bg_px = rng.gen_range(0.0..TAU);
    let bg_py = rng.gen_range(0.0..TAU);

    let (lo, hi) = spec.scale_range;
    let mut frames = Vec::with_capacity(spec.length);
    let mut boxes = Vec::with_capacity(spec.length);
    for t in 0..spec.length {
        let phase = t as f64 / spec.length as f64;
        let scale = lo + (hi - lo) * 0.5 * (1.0 + (TAU * spec.scale_cycles * phase + scale_phase).sin());
        let aspect = 1.0 + spec.aspect_amplitude * (TAU * spec.aspect_cycles * phase + aspect_phase).sin();
        let jw = if spec.jitter > 0.0 { rng.gen_range(-spec.jitter..spec.jitter) } else { 0.0 };
        let jh = if spec.jitter > 0.0 { rng.gen_range(-spec.jitter..spec.jitter) } else { 0.0 };
        let w = (spec.base_size.0 * scale * aspect + jw).max(4.0);
        let h = (spec.base_size.1 * scale / aspect + jh).max(4.0);
        let cx = spec.start_center.0 + spec.velocity.0 * t as f64;
        let cy = spec.start_center.1 + spec.velocity.1 * t as f64;
        let gt = BBox::new(cx, cy, w, h)?;
        let (x1, y1, x2, y2) = gt.corners();
        if x1 < 1.0 || y1 < 1.0 || x2 > size - 1.0 || y2 > size - 1.0 {
            return Err(TregError::Config(format!(
                "target leaves the image at frame {t}: box ({x1:.1},{y1:.1})-({x2:.1},{y2:.1})"
            )));
        }

        let n = spec.image_size;
        let mut pixels = vec![0u8; n * n];
        for r in 0..n {
            for c in 0..n {
                let px = c as f64 + 0.5;
                let py = r as f64 + 0.5;
                let mut v = bg_base
                    + bg_amp * (TAU * bg_fx * px + bg_px).sin() * (TAU * bg_fy * py + bg_py).sin();
                for d in &distractors {
                    let dx1 = d.center.0 - d.size.0 / 2.0;
                    let dx2 = d.center.0 + d.size.0 / 2.0;
                    let dy1 = d.center.1 - d.size.1 / 2.0;
                    let dy2 = d.center.1 + d.size.1 / 2.0;
                    if px >= dx1 && px <= dx2 && py >= dy1 && py <= dy2 {
                        v = d.texture.value((px - dx1) / d.size.0, (py - dy1) / d.size.1);
                    }
                }
                if px >= x1 && px <= x2 && py >= y1 && py <= y2 {
                    v = target_tex.value((px - x1) / w, (py - y1) / h);
                }
                if spec.noise_level > 0.0 {
                    v += rng.gen_range(-spec.noise_level..spec.noise_level);
                }
                pixels[r * n + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        frames.push(Frame { width: n, height: n, pixels });
        boxes.push(gt);

        for d in &mut distractors {
            d.center.0 += d.velocity.0;
            d.center.1 += d.velocity.1;
            // Bounce distractors off the walls so they stay in play.
            if d.center.0 < 0.1 * size || d.center.0 > 0.9 * size {
                d.velocity.0 = -d.velocity.0;
            }
            if d.center.1 < 0.1 * size || d.center.1 > 0.9 * size {
                d.velocity.1 = -d.velocity.1;
            }
        }
    }
    Ok(Sequence { name: spec.name.clone(), frames, boxes })
}

/// The three named sub-suites and their motion profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SubSuite {
    /// Translation only: fixed size and aspect.
    Rigid,
    /// Translation plus smooth scale oscillation.
    Scale,
    /// Translation plus aspect warp and boundary jitter.
    Deform,
}

impl SubSuite {
    pub fn name(&self) -> &'static str {
        match self {
            SubSuite::Rigid => "RIGID",
            SubSuite::Scale => "SCALE",
            SubSuite::Deform => "DEFORM",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RIGID" => Ok(SubSuite::Rigid),
            "SCALE" => Ok(SubSuite::Scale),
            "DEFORM" => Ok(SubSuite::Deform),
            other => Err(TregError::Config(format!(
                "unknown sub-suite '{other}' (expected RIGID|SCALE|DEFORM)"
            ))),
        }
    }

    pub fn all() -> [SubSuite; 3] {
        [SubSuite::Rigid, SubSuite::Scale, SubSuite::Deform]
    }
}

/// Parameters of a whole benchmark suite; expands into per-sequence specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSpec {
    pub sub_suites: Vec<SubSuite>,
    pub sequences_per_suite: usize,
    pub length: usize,
    pub image_size: usize,
    pub distractor_count: usize,
    pub distractor_similarity: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            sub_suites: SubSuite::all().to_vec(),
            sequences_per_suite: 20,
            length: 50,
            image_size: 128,
            distractor_count: 2,
            distractor_similarity: 0.5,
            noise_level: 0.02,
            seed: 0,
        }
    }
}

impl SuiteSpec {
    /// Expands the suite into sequence specs. Start positions and
    /// velocities are drawn so the target stays inside the image for the
    /// whole sequence.
    pub fn expand(&self) -> Result<Vec<(SubSuite, SequenceSpec)>> {
        let mut out = Vec::new();
        for (si, sub) in self.sub_suites.iter().enumerate() {
            for i in 0..self.sequences_per_suite {
                let seq_seed = self
                    .seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((si as u64) << 32)
                    .wrapping_add(i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
                let size = self.image_size as f64;
                let base_w = rng.gen_range(0.14 * size..0.30 * size);
                let base_h = rng.gen_range(0.14 * size..0.30 * size);
                let (scale_range, aspect_amplitude, jitter) = match sub {
                    SubSuite::Rigid => ((1.0, 1.0), 0.0, 0.0),
                    SubSuite::Scale => ((0.7, 1.45), 0.0, 0.0),
                    SubSuite::Deform => ((0.9, 1.15), 0.28, 1.0),
                };
                // Worst-case half extent over the sequence.
                let max_scale = scale_range.1;
                let max_aspect = 1.0 + aspect_amplitude;
                let half_w = base_w * max_scale * max_aspect / 2.0 + jitter + 2.0;
                let half_h = base_h * max_scale * max_aspect / 2.0 + jitter + 2.0;
                let margin_x = half_w + 2.0;
                let margin_y = half_h + 2.0;
                let sx = rng.gen_range(margin_x..size - margin_x);
                let sy = rng.gen_range(margin_y..size - margin_y);
                // Velocity toward the side with more room.
                let vmag_x = rng.gen_range(0.4..1.6);
                let vmag_y = rng.gen_range(0.4..1.6);
                let span = self.length as f64 - 1.0;
                let vx = pick_velocity(sx, vmag_x, margin_x, size - margin_x, span, &mut rng);
                let vy = pick_velocity(sy, vmag_y, margin_y, size - margin_y, span, &mut rng);
                out.push((
                    *sub,
                    SequenceSpec {
                        name: format!("{}_{:03}", sub.name(), i),
                        length: self.length,
                        image_size: self.image_size,
                        start_center: (sx, sy),
                        velocity: (vx, vy),
                        base_size: (base_w, base_h),
                        scale_range,
                        scale_cycles: 1.0,
                        aspect_amplitude,
                        aspect_cycles: 1.5,
                        jitter,
                        distractor_count: self.distractor_count,
                        distractor_similarity: self.distractor_similarity,
                        noise_level: self.noise_level,
                        seed: seq_seed ^ 0xABCD_EF01,
                    },
                ));
            }
        }
        Ok(out)
    }
}

fn pick_velocity(
    start: f64,
    mag: f64,
    lo: f64,
    hi: f64,
    span: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let room_pos = hi - start;
    let room_neg = start - lo;
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let room = if dir > 0.0 { room_pos } else { room_neg };
    let v = mag.min(room / span.max(1.0));
    dir * v
}
