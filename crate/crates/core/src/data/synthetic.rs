//! Procedural cabin scenes. Every image shares one background layout
//! (window, dashboard, steering wheel, seat, a seated figure, and optional
//! fixed clutter). A class is a coloured geometric cue of random position
//! and size; a grey distractor of random shape appears in half the images
//! so shape alone never decides the class. A global illumination factor
//! scales each image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    /// Number of fixed clutter shapes added to the shared background; also
    /// scales the per-image pixel noise.
    pub background_complexity: usize,
    /// Cue diameter as a fraction of the image side.
    pub cue_size_range: (f32, f32),
    pub illumination_range: (f32, f32),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 8,
            train_per_class: 200,
            test_per_class: 100,
            image_size: 224,
            background_complexity: 3,
            cue_size_range: (0.1, 0.3),
            illumination_range: (0.6, 1.3),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return bad(format!("num_classes must be in 2..={MAX_CLASSES}, got {}", self.num_classes));
        }
        if self.image_size < 16 {
            return bad(format!("image_size {} is below 16", self.image_size));
        }
        let (lo, hi) = self.cue_size_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("cue_size_range {:?} must satisfy 0 < lo <= hi < 1", self.cue_size_range));
        }
        let (lo, hi) = self.illumination_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("illumination_range {:?} must be positive and ordered", self.illumination_range));
        }
        Ok(())
    }
}

/// Inclusive pixel bounds `[x0, y0, x1, y1]` of a rendered cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CueBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CueBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    /// Measured cue extents, aligned with the samples.
    pub train_cues: Vec<CueBox>,
    pub test_cues: Vec<CueBox>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk,
    Square,
    Ring,
    Cross,
}

const SHAPES: [Shape; 4] = [Shape::Disk, Shape::Square, Shape::Ring, Shape::Cross];
const COLORS: [[f32; 3]; 4] = [[0.95, 0.2, 0.15], [0.15, 0.85, 0.25], [0.95, 0.85, 0.1], [0.2, 0.6, 1.0]];
const MAX_CLASSES: usize = SHAPES.len() * COLORS.len();

/// Class `c` is shape `c mod 4` in colour `c div 4`.
fn class_cue(c: usize) -> (Shape, [f32; 3]) {
    (SHAPES[c % SHAPES.len()], COLORS[c / SHAPES.len()])
}

/// Whether pixel centre `(x, y)` lies inside `shape` of radius `r` at
/// `(cx, cy)`.
fn covers(shape: Shape, cx: f32, cy: f32, r: f32, x: f32, y: f32) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        Shape::Disk => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        Shape::Ring => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        Shape::Cross => (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r),
    }
}

struct Canvas {
    size: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let plane = self.size * self.size;
        for (c, v) in rgb.iter().enumerate() {
            self.data[c * plane + y * self.size + x] = *v;
        }
    }

    /// Paints `shape` and returns the bounds of the painted pixels.
    fn paint(&mut self, shape: Shape, cx: f32, cy: f32, r: f32, rgb: [f32; 3]) -> Option<CueBox> {
        let s = self.size;
        let lo = |v: f32| (v - r - 1.0).floor().max(0.0) as usize;
        let hi = |v: f32| ((v + r + 1.0).ceil() as usize).min(s - 1);
        let mut bounds: Option<CueBox> = None;
        for y in lo(cy)..=hi(cy) {
            for x in lo(cx)..=hi(cx) {
                if covers(shape, cx, cy, r, x as f32 + 0.5, y as f32 + 0.5) {
                    self.set(x, y, rgb);
                    let b = bounds.get_or_insert(CueBox { x0: x, y0: y, x1: x, y1: y });
                    b.x0 = b.x0.min(x);
                    b.y0 = b.y0.min(y);
                    b.x1 = b.x1.max(x);
                    b.y1 = b.y1.max(y);
                }
            }
        }
        bounds
    }

    fn rect(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, rgb: [f32; 3]) {
        let s = self.size as f32;
        for y in (y0 * s) as usize..((y1 * s) as usize).min(self.size) {
            for x in (x0 * s) as usize..((x1 * s) as usize).min(self.size) {
                self.set(x, y, rgb);
            }
        }
    }
}

/// The shared background. Clutter positions come from a fixed stream so
/// every image of every split sees the same layout.
fn background(size: usize, complexity: usize) -> Vec<f32> {
    let mut canvas = Canvas {
        size,
        data: vec![0.0; 3 * size * size],
    };
    for y in 0..size {
        let t = y as f32 / size as f32;
        let shade = [0.42 - 0.15 * t, 0.44 - 0.15 * t, 0.5 - 0.15 * t];
        for x in 0..size {
            canvas.set(x, y, shade);
        }
    }
    let s = size as f32;
    canvas.rect(0.55, 0.05, 0.95, 0.35, [0.72, 0.76, 0.82]);
    canvas.rect(0.45, 0.35, 0.8, 0.85, [0.3, 0.3, 0.35]);
    canvas.rect(0.48, 0.42, 0.75, 0.8, [0.35, 0.4, 0.55]);
    canvas.paint(Shape::Disk, 0.6 * s, 0.3 * s, 0.09 * s, [0.8, 0.65, 0.55]);
    canvas.paint(Shape::Ring, 0.3 * s, 0.72 * s, 0.18 * s, [0.1, 0.1, 0.1]);
    canvas.rect(0.0, 0.82, 1.0, 1.0, [0.25, 0.2, 0.18]);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ca_b1_4e);
    for _ in 0..complexity {
        let shape = SHAPES[rng.random_range(0..SHAPES.len())];
        let g = rng.random_range(0.15f32..0.6);
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        canvas.paint(shape, cx, cy, rng.random_range(0.03..0.08) * s, [g, g, g * 1.05]);
    }
    canvas.data
}

fn render(cfg: &SyntheticConfig, base: &[f32], label: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, CueBox) {
    let size = cfg.image_size;
    let s = size as f32;
    let mut canvas = Canvas {
        size,
        data: base.to_vec(),
    };
    if rng.random_bool(0.5) {
        let shape = SHAPES[rng.random_range(0..SHAPES.len())];
        let r = rng.random_range(cfg.cue_size_range.0..=cfg.cue_size_range.1) * s / 2.0;
        let (cx, cy) = (rng.random_range(r..s - r), rng.random_range(r..s - r));
        canvas.paint(shape, cx, cy, r, [0.55, 0.55, 0.55]);
    }
    let (shape, color) = class_cue(label);
    let r = (rng.random_range(cfg.cue_size_range.0..=cfg.cue_size_range.1) * s / 2.0).max(1.0);
    let margin = r.min(s / 2.0 - 0.5);
    let cx = rng.random_range(margin..=s - margin);
    let cy = rng.random_range(margin..=s - margin);
    let cue = canvas
        .paint(shape, cx, cy, r, color)
        .unwrap_or(CueBox {
            x0: cx as usize,
            y0: cy as usize,
            x1: cx as usize,
            y1: cy as usize,
        });
    let noise = 0.01 + 0.005 * cfg.background_complexity as f32;
    let light = rng.random_range(cfg.illumination_range.0..=cfg.illumination_range.1);
    for v in canvas.data.iter_mut() {
        *v = ((*v + rng.random_range(-noise..=noise)) * light).clamp(0.0, 1.0);
    }
    (canvas.data, cue)
}

fn split(cfg: &SyntheticConfig, base: &[f32], split: Split, per_class: usize) -> (Dataset, Vec<CueBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });
    let n = per_class * cfg.num_classes;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut cues = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % cfg.num_classes;
        let (img, cue) = render(cfg, base, label, &mut rng);
        images.push(img);
        labels.push(label);
        cues.push(cue);
    }
    let ds = Dataset {
        split,
        sample_shape: vec![3, cfg.image_size, cfg.image_size],
        class_names: (0..cfg.num_classes).map(|c| format!("class{c:02}")).collect(),
        images,
        labels,
    };
    (ds, cues)
}

/// Renders class-balanced train and test splits from independent streams
/// of one seed. Labels cycle through the classes in sample order.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let base = background(cfg.image_size, cfg.background_complexity);
    let (train, train_cues) = split(cfg, &base, Split::Train, cfg.train_per_class);
    let (test, test_cues) = split(cfg, &base, Split::Test, cfg.test_per_class);
    Ok(SyntheticData {
        train,
        test,
        train_cues,
        test_cues,
    })
}
