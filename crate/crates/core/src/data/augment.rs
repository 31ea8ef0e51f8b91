//! Random horizontal flips and small rotations.

use rand::Rng;

use crate::numcore::Tensor;

pub const DEFAULT_MAX_ROTATION_DEG: f64 = 15.0;

/// Bilinear sample of a single `h×w` plane at continuous `(y, x)`; samples
/// outside the plane read as zero.
pub(crate) fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let weight = wy * wx;
            if weight != 0.0 {
                v += weight * at(y0 + dy, x0 + dx);
            }
        }
    }
    v
}

/// Rotates every channel of `img[C×H×W]` by `degrees` about the image center
/// (counter-clockwise), filling uncovered pixels with zero.
pub fn rotate(img: &Tensor<f32>, degrees: f64) -> Tensor<f32> {
    if degrees == 0.0 {
        return img.clone();
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(img.numel());
    for plane in img.data().chunks(h * w).take(c) {
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                // inverse rotation of the destination pixel
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                out.push(bilinear(plane, h, w, sy, sx) as f32);
            }
        }
    }
    Tensor::new(img.shape(), out).expect("same shape")
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let w = *img.shape().last().expect("image rank");
    let data = img
        .data()
        .chunks(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    Tensor::new(img.shape(), data).expect("same shape")
}

/// Deterministic augmentation: optional flip, then rotation, then clamp to `[0, 1]`.
pub fn augment_with(img: &Tensor<f32>, flip: bool, degrees: f64) -> Tensor<f32> {
    let flipped = if flip { flip_horizontal(img) } else { img.clone() };
    rotate(&flipped, degrees).map(|v| v.clamp(0.0, 1.0))
}

/// Flip with probability 0.5 and rotate by `uniform(-max_deg, max_deg)`.
pub fn augment(img: &Tensor<f32>, rng: &mut impl Rng, max_deg: f64) -> Tensor<f32> {
    let flip = rng.gen_bool(0.5);
    let degrees = if max_deg > 0.0 {
        rng.gen_range(-max_deg..=max_deg)
    } else {
        0.0
    };
    augment_with(img, flip, degrees)
}
