//! Deterministic synthetic fine-grained classification data.
//!
//! Every image shows the same background texture and the same large ellipse,
//! so images of different classes look nearly alike. The class is carried
//! only by a small 4×4 motif stamped at a random position with a random
//! rotation, plus per-pixel Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::augment::bilinear;
use crate::data::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAX_CLASSES: usize = 16;
pub const MIN_SIDE: usize = 16;
pub const MOTIF_CELLS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub hw: usize,
    pub noise_sigma: f64,
    pub max_rotation_deg: f64,
    /// Pixels per motif cell; `None` means `hw / 16`.
    pub motif_scale: Option<usize>,
}

impl SynthConfig {
    pub fn new(seed: u64, classes: usize, per_class_train: usize, per_class_test: usize, hw: usize) -> Self {
        SynthConfig {
            seed,
            classes,
            per_class_train,
            per_class_test,
            hw,
            noise_sigma: 0.05,
            max_rotation_deg: 15.0,
            motif_scale: None,
        }
    }

    fn cell(&self) -> usize {
        self.motif_scale.unwrap_or(self.hw / 16).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > MAX_CLASSES {
            return Err(Error::Invalid(format!(
                "classes must be in 1..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        if self.hw < MIN_SIDE {
            return Err(Error::Invalid(format!("image side must be at least {MIN_SIDE}, got {}", self.hw)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Invalid("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Where and how a motif was stamped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub center_y: f64,
    pub center_x: f64,
    pub degrees: f64,
}

/// Parts of the image shared by every sample of a seed.
struct Scene {
    background: Vec<f32>,
    motifs: Vec<[[f32; 3]; MOTIF_CELLS * MOTIF_CELLS]>,
}

fn scene_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream() << 40) | index as u64);
    rng
}

fn build_scene(cfg: &SynthConfig) -> Scene {
    let mut rng = scene_rng(cfg.seed);
    let hw = cfg.hw;
    let n = hw as f64;
    let base: [f64; 3] = [rng.gen_range(0.3..0.5), rng.gen_range(0.3..0.5), rng.gen_range(0.3..0.5)];
    let shape_color: [f64; 3] = [rng.gen_range(0.5..0.7), rng.gen_range(0.4..0.6), rng.gen_range(0.2..0.4)];
    let (fy, fx) = (rng.gen_range(1.5..3.0), rng.gen_range(1.5..3.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut background = vec![0.0f32; 3 * hw * hw];
    for c in 0..3 {
        for y in 0..hw {
            for x in 0..hw {
                let (u, v) = (y as f64 / n, x as f64 / n);
                let texture = 0.08 * (std::f64::consts::TAU * (fy * u + fx * v) + phase + c as f64).sin();
                // large ellipse shared by every image
                let (dy, dx) = ((u - 0.5) / 0.38, (v - 0.5) / 0.30);
                let value = if dy * dy + dx * dx <= 1.0 {
                    shape_color[c] + 0.5 * texture
                } else {
                    base[c] + texture
                };
                background[(c * hw + y) * hw + x] = value as f32;
            }
        }
    }

    // Motifs: high-contrast random color patterns, pairwise distinct.
    let mut motifs: Vec<[[f32; 3]; MOTIF_CELLS * MOTIF_CELLS]> = Vec::with_capacity(cfg.classes);
    while motifs.len() < cfg.classes {
        let mut m = [[0.0f32; 3]; MOTIF_CELLS * MOTIF_CELLS];
        for cell in &mut m {
            for ch in cell.iter_mut() {
                *ch = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            }
        }
        let distinct = motifs.iter().all(|o| {
            let diff: usize = o
                .iter()
                .zip(&m)
                .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y).count())
                .sum();
            diff >= 12
        });
        if distinct {
            motifs.push(m);
        }
    }
    Scene { background, motifs }
}

fn render(cfg: &SynthConfig, scene: &Scene, label: usize, rng: &mut ChaCha8Rng) -> (Tensor<f32>, Placement) {
    let hw = cfg.hw;
    let cell = cfg.cell();
    let side = (MOTIF_CELLS * cell) as f64;
    // keep the rotated stamp inside the frame
    let margin = side * std::f64::consts::FRAC_1_SQRT_2 + 1.0;
    let lo = margin;
    let hi = (hw as f64 - 1.0 - margin).max(lo);
    let placement = Placement {
        center_y: rng.gen_range(lo..=hi),
        center_x: rng.gen_range(lo..=hi),
        degrees: rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg),
    };

    // motif expanded to pixel resolution, one plane per channel, plus a mask
    let ms = MOTIF_CELLS * cell;
    let motif = &scene.motifs[label];
    let mut planes = vec![vec![0.0f32; ms * ms]; 3];
    let mask = vec![1.0f32; ms * ms];
    for y in 0..ms {
        for x in 0..ms {
            let c = motif[(y / cell) * MOTIF_CELLS + x / cell];
            for ch in 0..3 {
                planes[ch][y * ms + x] = c[ch];
            }
        }
    }

    let mut img = scene.background.clone();
    let (sin, cos) = placement.degrees.to_radians().sin_cos();
    let half = (ms as f64 - 1.0) / 2.0;
    let reach = margin.ceil() as i64;
    let (cy, cx) = (placement.center_y, placement.center_x);
    for y in (cy as i64 - reach).max(0)..=(cy as i64 + reach).min(hw as i64 - 1) {
        for x in (cx as i64 - reach).max(0)..=(cx as i64 + reach).min(hw as i64 - 1) {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let mx = cos * dx - sin * dy + half;
            let my = sin * dx + cos * dy + half;
            let alpha = bilinear(&mask, ms, ms, my, mx);
            if alpha <= 0.0 {
                continue;
            }
            for (ch, plane) in planes.iter().enumerate() {
                let v = bilinear(plane, ms, ms, my, mx) / alpha;
                let idx = (ch * hw + y as usize) * hw + x as usize;
                img[idx] = (alpha * v + (1.0 - alpha) * img[idx] as f64) as f32;
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
    for v in &mut img {
        *v = (*v as f64 + noise.sample(rng)).clamp(0.0, 1.0) as f32;
    }
    (Tensor::new(&[3, hw, hw], img).expect("image shape"), placement)
}

/// One sample of a split, with its motif placement.
pub fn generate_sample(cfg: &SynthConfig, split: Split, index: usize) -> Result<(Sample, Placement)> {
    cfg.validate()?;
    let scene = build_scene(cfg);
    Ok(sample_with_scene(cfg, &scene, split, index))
}

fn sample_with_scene(cfg: &SynthConfig, scene: &Scene, split: Split, index: usize) -> (Sample, Placement) {
    let label = index % cfg.classes;
    let mut rng = sample_rng(cfg.seed, split, index);
    let (image, placement) = render(cfg, scene, label, &mut rng);
    let sample = Sample {
        image,
        label,
        id: format!("{}-{index:05}", split.name()),
    };
    (sample, placement)
}

/// Train and test splits with balanced labels (`label = index % classes`).
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let scene = build_scene(cfg);
    let split = |split: Split, per_class: usize| {
        let samples = (0..per_class * cfg.classes)
            .map(|i| sample_with_scene(cfg, &scene, split, i).0)
            .collect();
        Dataset::new(samples, cfg.classes)
    };
    Ok((split(Split::Train, cfg.per_class_train)?, split(Split::Test, cfg.per_class_test)?))
}
