//! Newton fractal for `z^3 - 1`, colored by a 10-D parameter vector: a hue
//! and saturation per root, one transition speed and a base RGB color.
//!
//! Pixels that converge quickly show their root's color; slower pixels fade
//! toward the base color with weight `exp(-speed * iterations)`. The per-pixel
//! path uses only IEEE basic arithmetic, so output is bit-identical for equal
//! inputs regardless of thread count.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};

pub const NUM_PARAMS: usize = 10;
pub const SPEED_MIN: f64 = 0.05;
pub const SPEED_MAX: f64 = 2.0;
const SINGULAR: f64 = 1e-12;

/// Cube roots of unity, index 0 at `1`.
pub fn roots() -> [Complex64; 3] {
    let h = 0.75f64.sqrt();
    [Complex64::new(1.0, 0.0), Complex64::new(-0.5, h), Complex64::new(-0.5, -h)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoringParams {
    /// Turns, in `[0, 1)`.
    pub root_hue: [f64; 3],
    pub root_sat: [f64; 3],
    pub transition_speed: f64,
    pub base_color: [f64; 3],
}

impl ColoringParams {
    /// The box art sessions search over, in `to_vec` order.
    pub fn domain() -> Domain {
        let mut lower = vec![0.0; NUM_PARAMS];
        let mut upper = vec![1.0; NUM_PARAMS];
        lower[6] = SPEED_MIN;
        upper[6] = SPEED_MAX;
        Domain::new(lower, upper).expect("static bounds")
    }

    /// `[hue0, hue1, hue2, sat0, sat1, sat2, speed, r, g, b]`
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_PARAMS {
            return Err(Error::InvalidArgument(format!("expected {NUM_PARAMS} coloring values, got {}", v.len())));
        }
        Self::domain().check(v, 0)?;
        Ok(ColoringParams {
            root_hue: [v[0], v[1], v[2]],
            root_sat: [v[3], v[4], v[5]],
            transition_speed: v[6],
            base_color: [v[7], v[8], v[9]],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_PARAMS);
        v.extend_from_slice(&self.root_hue);
        v.extend_from_slice(&self.root_sat);
        v.push(self.transition_speed);
        v.extend_from_slice(&self.base_color);
        v
    }

    pub fn root_color(&self, root: usize) -> [f64; 3] {
        hsv_to_rgb(self.root_hue[root], self.root_sat[root], 1.0)
    }
}

/// HSV to RGB with hue in turns.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Rectangle of the complex plane; `im_max` maps to the top row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub width: usize,
    pub height: usize,
    pub viewport: Viewport,
    pub max_iters: u32,
    pub tol: f64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            width: 384,
            height: 384,
            viewport: Viewport { re_min: -2.0, re_max: 2.0, im_min: -2.0, im_max: 2.0 },
            max_iters: 40,
            tol: 1e-6,
        }
    }
}

impl RenderSpec {
    pub fn with_size(width: usize, height: usize) -> Self {
        RenderSpec { width, height, ..Default::default() }
    }

    pub fn check(&self) -> Result<()> {
        let v = &self.viewport;
        if self.width == 0 || self.height == 0 || !(self.tol > 0.0) || !(v.re_min < v.re_max && v.im_min < v.im_max) {
            return Err(Error::InvalidArgument(format!("invalid render spec {self:?}")));
        }
        Ok(())
    }

    /// Complex coordinate at the centre of pixel `(col, row)`.
    pub fn pixel_to_complex(&self, col: usize, row: usize) -> Complex64 {
        let v = &self.viewport;
        let re = v.re_min + (col as f64 + 0.5) * (v.re_max - v.re_min) / self.width as f64;
        let im = v.im_max - (row as f64 + 0.5) * (v.im_max - v.im_min) / self.height as f64;
        Complex64::new(re, im)
    }
}

/// Newton iteration from `z0`: the root reached (if any) and the number of
/// updates taken. Returns `None` when the iteration stalls near the critical
/// point `0` or runs out of iterations.
pub fn newton_classify(z0: Complex64, spec: &RenderSpec) -> (Option<usize>, u32) {
    let rs = roots();
    let mut z = z0;
    let mut iters = 0;
    loop {
        let z2 = z * z;
        let p = z2 * z - 1.0;
        if p.norm_sqr() < spec.tol * spec.tol {
            let nearest = (0..3)
                .min_by(|&a, &b| (z - rs[a]).norm_sqr().total_cmp(&(z - rs[b]).norm_sqr()))
                .unwrap_or(0);
            return (Some(nearest), iters);
        }
        if z.norm_sqr() < SINGULAR * SINGULAR || iters >= spec.max_iters {
            return (None, iters);
        }
        z -= p / (3.0 * z2);
        iters += 1;
    }
}

/// Row-major 8-bit RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc
                .write_header()
                .map_err(|e| Error::InvalidArgument(format!("png: {e}")))?;
            w.write_image_data(&self.pixels)
                .map_err(|e| Error::InvalidArgument(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Color for a pixel that reached `root` after `iters` updates.
fn shade(params: &ColoringParams, decay: f64, root: Option<usize>, iters: u32) -> [u8; 3] {
    let base = params.base_color;
    let Some(r) = root else {
        return base.map(to_u8);
    };
    let mut w = 1.0;
    for _ in 0..iters {
        w *= decay;
    }
    let c = params.root_color(r);
    [0, 1, 2].map(|k| to_u8(w * c[k] + (1.0 - w) * base[k]))
}

/// `exp(-speed)` by a fixed 40-term Taylor sum: plain arithmetic, so the same
/// bits everywhere, unlike the platform `exp`. Accurate to ~1 ulp on the
/// speed range.
pub fn decay_factor(speed: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= -speed / k as f64;
        sum += term;
    }
    sum
}

/// Render the fractal. Rows are computed in parallel into disjoint slices, so
/// the buffer does not depend on scheduling.
pub fn render(params: &ColoringParams, spec: &RenderSpec) -> Result<Image> {
    spec.check()?;
    ColoringParams::domain().check(&params.to_vec(), 0)?;
    let decay = decay_factor(params.transition_speed);
    let mut pixels = vec![0u8; 3 * spec.width * spec.height];
    pixels
        .par_chunks_mut(3 * spec.width)
        .enumerate()
        .for_each(|(row, line)| {
            for col in 0..spec.width {
                let (root, iters) = newton_classify(spec.pixel_to_complex(col, row), spec);
                line[3 * col..3 * col + 3].copy_from_slice(&shade(params, decay, root, iters));
            }
        });
    Ok(Image { width: spec.width, height: spec.height, pixels })
}
