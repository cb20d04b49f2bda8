//! Procedural map-like tiles for desk-scale experiments.
//!
//! Tiles look like scanned topographic sheets: paper-toned background with
//! low-frequency staining, brown contour-like curves and clusters of text-like
//! glyphs. The target class is drawn on top:
//!
//! * [`SynthClass::LinearFeatures`]: railway-style polylines, a 5 px black band
//!   whose core alternates between black and white dashes.
//! * [`SynthClass::ArealFeatures`]: tinted polygons with diagonal hatching.
//!
//! Masks are exact rasterisations of the drawn symbols (pixel centres inside
//! the band or polygon). Each sample uses its own ChaCha stream, so sample `i`
//! of a seed is the same whatever `count` is.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::{Mask, SegmentationSample};
use crate::error::{Error, Result};

pub const SYNTH_TILE: usize = 224;
const MIN_FG: f64 = 0.01;
const MAX_FG: f64 = 0.5;

const PAPER: [f32; 3] = [0.93, 0.90, 0.83];
const CONTOUR: [f32; 3] = [0.55, 0.36, 0.22];
const INK: [f32; 3] = [0.08, 0.08, 0.08];
const DASH_FILL: [f32; 3] = [0.96, 0.95, 0.92];
const AREA_TINT: [f32; 3] = [0.80, 0.87, 0.70];
const HATCH: [f32; 3] = [0.22, 0.36, 0.16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthClass {
    LinearFeatures,
    ArealFeatures,
}

impl SynthClass {
    pub fn name(self) -> &'static str {
        match self {
            SynthClass::LinearFeatures => "linear-features",
            SynthClass::ArealFeatures => "areal-features",
        }
    }
}

impl FromStr for SynthClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-features" => Ok(SynthClass::LinearFeatures),
            "areal-features" => Ok(SynthClass::ArealFeatures),
            other => Err(Error::Config(format!(
                "unknown synthetic class `{other}` (expected linear-features or areal-features)"
            ))),
        }
    }
}

struct Canvas {
    image: Array3<f32>,
    h: usize,
    w: usize,
}

impl Canvas {
    fn blend(&mut self, y: usize, x: usize, color: [f32; 3], alpha: f32) {
        for (c, &v) in color.iter().enumerate() {
            let p = &mut self.image[[y, x, c]];
            *p = *p * (1.0 - alpha) + v * alpha;
        }
    }
}

fn seg_dist2(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2), t)
}

/// Nearest point on a polyline: squared distance and arc length at the foot point.
fn polyline_query(px: f64, py: f64, pts: &[(f64, f64)]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let mut arc = 0.0;
    for w in pts.windows(2) {
        let len = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        let (d2, t) = seg_dist2(px, py, w[0], w[1]);
        if d2 < best.0 {
            best = (d2, arc + t * len);
        }
        arc += len;
    }
    best
}

/// Pixels whose centre lies within `half_width` of the polyline, plus arc length.
fn polyline_pixels(h: usize, w: usize, pts: &[(f64, f64)], half_width: f64) -> Vec<(usize, usize, f64, f64)> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let clampi = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
    let (ya, yb) = (clampi(y0 - half_width - 1.0, h), clampi(y1 + half_width + 2.0, h));
    let (xa, xb) = (clampi(x0 - half_width - 1.0, w), clampi(x1 + half_width + 2.0, w));
    let hw2 = half_width * half_width;
    let mut out = Vec::new();
    for y in ya..yb {
        for x in xa..xb {
            let (d2, s) = polyline_query(x as f64 + 0.5, y as f64 + 0.5, pts);
            if d2 <= hw2 {
                out.push((y, x, d2.sqrt(), s));
            }
        }
    }
    out
}

fn stroke(canvas: &mut Canvas, pts: &[(f64, f64)], half_width: f64, color: [f32; 3], alpha: f32) {
    for (y, x, _, _) in polyline_pixels(canvas.h, canvas.w, pts, half_width) {
        canvas.blend(y, x, color, alpha);
    }
}

/// A wandering path that enters at one edge and leaves across the tile.
fn wandering_path(rng: &mut ChaCha8Rng, h: usize, w: usize, step: f64, turn: f64) -> Vec<(f64, f64)> {
    let (hf, wf) = (h as f64, w as f64);
    let (mut x, mut y, mut dir) = match rng.random_range(0..4) {
        0 => (rng.random_range(0.0..wf), 0.0, PI / 2.0),
        1 => (rng.random_range(0.0..wf), hf, -PI / 2.0),
        2 => (0.0, rng.random_range(0.0..hf), 0.0),
        _ => (wf, rng.random_range(0.0..hf), PI),
    };
    dir += rng.random_range(-0.6..0.6);
    let mut pts = vec![(x, y)];
    let max_steps = (4.0 * (hf + wf) / step) as usize;
    for _ in 0..max_steps {
        dir += rng.random_range(-turn..turn);
        x += step * dir.cos();
        y += step * dir.sin();
        pts.push((x, y));
        if x < -10.0 || y < -10.0 || x > wf + 10.0 || y > hf + 10.0 {
            break;
        }
    }
    pts
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Canvas {
    let noise = Normal::new(0.0, 0.015).unwrap();
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.005..0.04),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.01..0.03),
            )
        })
        .collect();
    let mut image = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let stain: f64 = waves
                .iter()
                .map(|&(f, th, ph, a)| a * ((x as f64 * th.cos() + y as f64 * th.sin()) * f + ph).sin())
                .sum();
            for c in 0..3 {
                let v = PAPER[c] as f64 + stain + noise.sample(rng);
                image[[y, x, c]] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Canvas { image, h, w }
}

fn contours(rng: &mut ChaCha8Rng, canvas: &mut Canvas) {
    let n = rng.random_range(2..6);
    for _ in 0..n {
        let pts = wandering_path(rng, canvas.h, canvas.w, 6.0, 0.25);
        stroke(canvas, &pts, 0.8, CONTOUR, 0.85);
    }
}

fn glyphs(rng: &mut ChaCha8Rng, canvas: &mut Canvas) {
    let words = rng.random_range(2..6);
    for _ in 0..words {
        let mut x = rng.random_range(0.0..canvas.w as f64);
        let y = rng.random_range(0.0..canvas.h as f64);
        let letters = rng.random_range(3..7);
        for _ in 0..letters {
            for _ in 0..rng.random_range(2..4) {
                let a = (x + rng.random_range(0.0..5.0), y + rng.random_range(0.0..8.0));
                let b = (x + rng.random_range(0.0..5.0), y + rng.random_range(0.0..8.0));
                stroke(canvas, &[a, b], 0.7, INK, 0.9);
            }
            x += 7.0;
        }
    }
}

fn railway(rng: &mut ChaCha8Rng, canvas: &mut Canvas, mask: &mut Mask) {
    let pts = wandering_path(rng, canvas.h, canvas.w, 8.0, 0.12);
    let dash = 10.0;
    let phase = rng.random_range(0.0..2.0 * dash);
    for (y, x, d, s) in polyline_pixels(canvas.h, canvas.w, &pts, 2.5) {
        mask[[y, x]] = true;
        let hollow = d < 1.5 && ((s + phase) / dash).floor() as i64 % 2 == 1;
        canvas.blend(y, x, if hollow { DASH_FILL } else { INK }, 1.0);
    }
}

fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn hatched_polygon(rng: &mut ChaCha8Rng, canvas: &mut Canvas, mask: &mut Mask) {
    let cx = rng.random_range(0.15..0.85) * canvas.w as f64;
    let cy = rng.random_range(0.15..0.85) * canvas.h as f64;
    let r = rng.random_range(0.08..0.22) * canvas.w.min(canvas.h) as f64;
    let n = rng.random_range(5..10);
    let start = rng.random_range(0.0..2.0 * PI);
    let poly: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = start + 2.0 * PI * i as f64 / n as f64;
            let rr = r * rng.random_range(0.6..1.3);
            (cx + rr * a.cos(), cy + rr * a.sin())
        })
        .collect();
    let spacing = rng.random_range(4.0..7.0);
    for y in 0..canvas.h {
        for x in 0..canvas.w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !point_in_polygon(px, py, &poly) {
                continue;
            }
            mask[[y, x]] = true;
            let on_hatch = ((px + py) / spacing).fract() < 0.22;
            canvas.blend(y, x, if on_hatch { HATCH } else { AREA_TINT }, 0.9);
        }
    }
}

/// Render one `h x w` tile of the given class.
pub fn render(rng: &mut ChaCha8Rng, h: usize, w: usize, class: SynthClass) -> (Array3<f32>, Mask) {
    loop {
        let mut canvas = background(rng, h, w);
        contours(rng, &mut canvas);
        glyphs(rng, &mut canvas);
        let mut mask = Mask::from_elem((h, w), false);
        match class {
            SynthClass::LinearFeatures => {
                let n = rng.random_range(1..3);
                for _ in 0..n {
                    railway(rng, &mut canvas, &mut mask);
                }
            }
            SynthClass::ArealFeatures => {
                let n = rng.random_range(1..4);
                for _ in 0..n {
                    hatched_polygon(rng, &mut canvas, &mut mask);
                }
            }
        }
        let fg = mask.iter().filter(|&&m| m).count() as f64 / (h * w) as f64;
        if (MIN_FG..=MAX_FG).contains(&fg) {
            return (canvas.image, mask);
        }
    }
}

pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generate `count` synthetic 224x224 tiles.
pub fn synth_generate(seed: u64, count: usize, class: SynthClass) -> Result<Vec<SegmentationSample>> {
    if count == 0 {
        return Err(Error::Config("synthetic dataset needs count >= 1".into()));
    }
    (0..count)
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let (image, mask) = render(&mut rng, SYNTH_TILE, SYNTH_TILE, class);
            SegmentationSample::new(image, mask, None, format!("{}-{seed}-{i:04}", class.name()))
        })
        .collect()
}

/// A single large synthetic scan, e.g. for tiled prediction.
pub fn synth_scan(seed: u64, h: usize, w: usize, class: SynthClass) -> SegmentationSample {
    let mut rng = sample_rng(seed, u64::MAX);
    let (image, mask) = render(&mut rng, h, w, class);
    SegmentationSample {
        image,
        mask,
        ignore: None,
        source: format!("{}-scan-{seed}", class.name()),
        origin: (0, 0),
    }
}
