//! Synthetic data for tests, demos and the desk-scale experiments.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::descriptor::GrayImage;
use crate::io::write_atomic;
use crate::ktangent::Label;
use crate::spd::SpdMatrix;
use crate::Result;

/// A 2×2 SPD sample with the orientation mode it was drawn from
/// (`None` for negatives).
#[derive(Clone, Debug)]
pub struct BimodalSample {
    pub matrix: SpdMatrix,
    pub label: Label,
    pub mode: Option<usize>,
}

/// Labeled 2×2 SPD matrices `e^t R(θ) diag(e^{s/2}, e^{-s/2}) R(θ)ᵀ` with
/// anisotropy `s ~ U(1, 4)` and log-scale `t ~ N(±0.3, 0.4)` (sign of the
/// label). Positives are oriented along one of two modes, `θ ≈ 0` or
/// `θ ≈ π/2` (σ 0.15), negatives along one of the diagonals `θ ≈ π/4, 3π/4`
/// (σ 0.25). Labels alternate, starting with a positive.
///
/// The two positive modes are far apart on the manifold, so a single
/// tangent space at their mean represents both poorly; tangent spaces at
/// each mode do not.
pub fn bimodal_spd(n: usize, rng: &mut impl Rng) -> Vec<BimodalSample> {
    let scale_pos = Normal::new(0.3, 0.4).unwrap();
    let scale_neg = Normal::new(-0.3, 0.4).unwrap();
    let jitter_pos = Normal::new(0.0, 0.15).unwrap();
    let jitter_neg = Normal::new(0.0, 0.25).unwrap();
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let s: f64 = rng.gen_range(1.0..4.0);
            let (t, theta, mode): (f64, f64, Option<usize>) = if positive {
                let t = scale_pos.sample(rng);
                let m = rng.gen_range(0..2usize);
                (t, m as f64 * FRAC_PI_2 + jitter_pos.sample(rng), Some(m))
            } else {
                let t = scale_neg.sample(rng);
                let base = if rng.gen_bool(0.5) {
                    FRAC_PI_4
                } else {
                    3.0 * FRAC_PI_4
                };
                (t, base + jitter_neg.sample(rng), None)
            };
            let (sn, cs) = theta.sin_cos();
            let r = Matrix2::new(cs, -sn, sn, cs);
            let d = Matrix2::new((s / 2.0).exp(), 0.0, 0.0, (-s / 2.0).exp());
            let z = r * d * r.transpose() * t.exp();
            let z = DMatrix::from_fn(2, 2, |i, j| z[(i, j)]);
            BimodalSample {
                matrix: SpdMatrix::new(z).expect("rotation of a positive diagonal"),
                label: if positive {
                    Label::Positive
                } else {
                    Label::Negative
                },
                mode,
            }
        })
        .collect()
}

fn fill_ellipse(img: &mut [f64], w: usize, h: usize, c: (f64, f64), r: (f64, f64), v: f64) {
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 + 0.5 - c.0) / r.0;
            let dy = (y as f64 + 0.5 - c.1) / r.1;
            if dx * dx + dy * dy <= 1.0 {
                img[y * w + x] = v;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_rect(img: &mut [f64], w: usize, h: usize, x0: f64, y0: f64, x1: f64, y1: f64, v: f64) {
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if px >= x0 && px < x1 && py >= y0 && py < y1 {
                img[y * w + x] = v;
            }
        }
    }
}

fn contrast(rng: &mut impl Rng, base: f64, lo: f64, hi: f64) -> f64 {
    let d = rng.gen_range(lo..hi);
    if base + d > 255.0 || (base - d >= 0.0 && rng.gen_bool(0.5)) {
        base - d
    } else {
        base + d
    }
}

/// Adds noise and quantizes to multiples of 1/255, so images survive an
/// 8-bit save and load unchanged.
fn finish(mut px: Vec<f64>, w: usize, h: usize, rng: &mut impl Rng) -> GrayImage {
    let noise = Normal::new(0.0, rng.gen_range(4.0..12.0)).unwrap();
    for p in &mut px {
        *p = (*p + noise.sample(rng)).round().clamp(0.0, 255.0) / 255.0;
    }
    GrayImage::new(w, h, px).expect("synthetic image size")
}

fn background(w: usize, h: usize, rng: &mut impl Rng) -> (Vec<f64>, f64) {
    let base = rng.gen_range(40.0..215.0);
    let gx = rng.gen_range(-40.0..40.0);
    let gy = rng.gen_range(-40.0..40.0);
    let px = (0..w * h)
        .map(|i| {
            let (x, y) = (
                (i % w) as f64 / w as f64 - 0.5,
                (i / w) as f64 / h as f64 - 0.5,
            );
            base + gx * x + gy * y
        })
        .collect();
    (px, base)
}

/// Random shapes; `scale` is the size of a pedestrian-sized window so that
/// distractors match the objects of interest in size.
fn draw_clutter(
    px: &mut [f64],
    w: usize,
    h: usize,
    base: f64,
    count: usize,
    scale: (f64, f64),
    rng: &mut impl Rng,
) {
    let (wf, hf) = (w as f64, h as f64);
    let (sw, sh) = scale;
    for _ in 0..count {
        let v = contrast(rng, base, 20.0, 100.0);
        let cx = rng.gen_range(0.0..wf);
        let cy = rng.gen_range(0.0..hf);
        match rng.gen_range(0..6) {
            0 => {
                let r = (rng.gen_range(1.5..sw * 0.6), rng.gen_range(1.5..sh * 0.4));
                fill_ellipse(px, w, h, (cx, cy), r, v);
            }
            1 => {
                let (bw, bh) = (rng.gen_range(2.0..sw), rng.gen_range(2.0..sh * 0.5));
                fill_rect(
                    px,
                    w,
                    h,
                    cx - bw / 2.0,
                    cy - bh / 2.0,
                    cx + bw / 2.0,
                    cy + bh / 2.0,
                    v,
                );
            }
            2 => {
                let (bw, bh) = (rng.gen_range(1.5..4.0), rng.gen_range(sh * 0.2..sh));
                fill_rect(
                    px,
                    w,
                    h,
                    cx - bw / 2.0,
                    cy - bh / 2.0,
                    cx + bw / 2.0,
                    cy + bh / 2.0,
                    v,
                );
            }
            3 => {
                // a pair of leg-like bars
                let (bw, bh) = (rng.gen_range(1.5..4.0), rng.gen_range(sh * 0.3..sh * 0.6));
                let gap = rng.gen_range(2.0..sw * 0.5);
                for x in [cx - gap / 2.0, cx + gap / 2.0] {
                    fill_rect(px, w, h, x - bw / 2.0, cy, x + bw / 2.0, cy + bh, v);
                }
            }
            4 => {
                // an upright body-sized blob
                let r = (
                    rng.gen_range(sw * 0.15..sw * 0.35),
                    rng.gen_range(sh * 0.15..sh * 0.35),
                );
                fill_ellipse(px, w, h, (cx, cy), r, v);
            }
            _ => {
                let (s, c) = rng.gen_range(0.0..std::f64::consts::PI).sin_cos();
                let period = rng.gen_range(3.0..10.0);
                let amp = (v - base) / 2.0;
                for y in 0..h {
                    for x in 0..w {
                        let t = (x as f64 * c + y as f64 * s) / period * std::f64::consts::TAU;
                        px[y * w + x] += amp * t.sin();
                    }
                }
            }
        }
    }
}

/// A stick-figure pedestrian (head, torso, two legs) over a cluttered
/// background, with random polarity, contrast, pose jitter and pixel noise.
pub fn pedestrian_window(w: usize, h: usize, rng: &mut impl Rng) -> GrayImage {
    let (mut px, base) = background(w, h, rng);
    let (wf, hf) = (w as f64, h as f64);
    let n = rng.gen_range(0..3);
    draw_clutter(&mut px, w, h, base, n, (wf, hf), rng);
    let cx = wf * (0.5 + rng.gen_range(-0.08..0.08));
    let top = hf * rng.gen_range(0.0..0.08);
    let body = contrast(rng, base, 15.0, 90.0);
    let legs = if rng.gen_bool(0.6) {
        body
    } else {
        contrast(rng, base, 15.0, 90.0)
    };
    let spread = wf * rng.gen_range(0.03..0.18);
    let leg_w = wf * rng.gen_range(0.1..0.2);
    for side in [-1.0, 1.0] {
        let x = cx + side * spread;
        fill_rect(
            &mut px,
            w,
            h,
            x - leg_w / 2.0,
            top + 0.5 * hf,
            x + leg_w / 2.0,
            hf * 0.97,
            legs,
        );
    }
    fill_ellipse(
        &mut px,
        w,
        h,
        (cx, top + 0.34 * hf),
        (wf * rng.gen_range(0.18..0.28), 0.19 * hf),
        body,
    );
    fill_ellipse(
        &mut px,
        w,
        h,
        (cx, top + 0.1 * hf),
        (wf * 0.13, hf * 0.065),
        body,
    );
    finish(px, w, h, rng)
}

/// Person-free clutter: blobs, bars, bar pairs and oriented gratings, sized
/// relative to an 18×36 pedestrian window.
pub fn clutter_image(w: usize, h: usize, rng: &mut impl Rng) -> GrayImage {
    let (mut px, base) = background(w, h, rng);
    let shapes = rng.gen_range(2..8) * (w * h).div_ceil(18 * 36).max(1);
    draw_clutter(&mut px, w, h, base, shapes, (18.0, 36.0), rng);
    finish(px, w, h, rng)
}

/// Sizes of a generated image dataset.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticDatasetSpec {
    pub window_w: usize,
    pub window_h: usize,
    pub positives: usize,
    pub negative_images: usize,
    pub negative_w: usize,
    pub negative_h: usize,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            window_w: 18,
            window_h: 36,
            positives: 200,
            negative_images: 20,
            negative_w: 64,
            negative_h: 64,
        }
    }
}

/// Writes a dataset to `dir`: positives tiled into one sheet image
/// (`positives.pgm`), negatives as `neg_NNN.pgm`, and `manifest.txt`.
/// Returns the manifest path.
pub fn write_synthetic_dataset(
    dir: &Path,
    spec: &SyntheticDatasetSpec,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ww, wh) = (spec.window_w, spec.window_h);
    let cols = (spec.positives as f64).sqrt().ceil().max(1.0) as usize;
    let rows = spec.positives.div_ceil(cols).max(1);
    let mut sheet = vec![0.0; cols * ww * rows * wh];
    let mut manifest = format!("# synthetic dataset, seed {seed}\nWINDOW {ww} {wh}\nMARGIN 0\n");
    for i in 0..spec.positives {
        let win = pedestrian_window(ww, wh, &mut rng);
        let (x0, y0) = ((i % cols) * ww, (i / cols) * wh);
        for y in 0..wh {
            for x in 0..ww {
                sheet[(y0 + y) * cols * ww + x0 + x] = win.get(x, y);
            }
        }
        let _ = writeln!(manifest, "P positives.pgm {x0} {y0} {ww} {wh}");
    }
    GrayImage::new(cols * ww, rows * wh, sheet)?.save_pgm(&dir.join("positives.pgm"))?;
    for i in 0..spec.negative_images {
        let name = format!("neg_{i:03}.pgm");
        clutter_image(spec.negative_w, spec.negative_h, &mut rng).save_pgm(&dir.join(&name))?;
        let _ = writeln!(manifest, "N {name}");
    }
    let path = dir.join("manifest.txt");
    write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}
