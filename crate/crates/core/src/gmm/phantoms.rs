//! Procedural phantom templates: random ellipses and anisotropic
//! Gaussian blobs, clipped to [0, 1]. These stand in for a training set
//! as the means of the mixture prior.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{invalid, Result};
use crate::image::{Image, ImageGrid};

#[derive(Debug, Clone)]
pub struct PhantomTemplateSet {
    pub grid: ImageGrid,
    pub templates: Vec<Image>,
}

pub fn make_phantoms(grid: ImageGrid, count: usize, rng_seed: u64) -> Result<PhantomTemplateSet> {
    if count == 0 {
        return Err(invalid("phantom count must be >= 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let templates = (0..count).map(|_| single_phantom(grid, &mut rng)).collect();
    Ok(PhantomTemplateSet { grid, templates })
}

fn single_phantom(grid: ImageGrid, rng: &mut impl Rng) -> Image {
    let side = grid.side as f64;
    let half = side * grid.pixel_size / 2.0;
    let mut img = Image::zeros(grid);

    let n_ellipses = rng.gen_range(2..=4);
    for _ in 0..n_ellipses {
        let cx = rng.gen_range(-0.5 * half..0.5 * half);
        let cy = rng.gen_range(-0.5 * half..0.5 * half);
        let a = rng.gen_range(0.15 * half..0.7 * half);
        let b = rng.gen_range(0.15 * half..0.7 * half);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let amp = rng.gen_range(0.2..0.7);
        let (sin_p, cos_p) = phi.sin_cos();
        stamp(&mut img, |x, y| {
            let u = (x - cx) * cos_p + (y - cy) * sin_p;
            let v = -(x - cx) * sin_p + (y - cy) * cos_p;
            let r2 = (u / a).powi(2) + (v / b).powi(2);
            if r2 <= 1.0 {
                amp
            } else {
                0.0
            }
        });
    }

    let n_blobs = rng.gen_range(1..=3);
    for _ in 0..n_blobs {
        let cx = rng.gen_range(-0.6 * half..0.6 * half);
        let cy = rng.gen_range(-0.6 * half..0.6 * half);
        let sx = rng.gen_range(0.08 * half..0.35 * half);
        let sy = rng.gen_range(0.08 * half..0.35 * half);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let amp = rng.gen_range(0.2..0.6);
        let (sin_p, cos_p) = phi.sin_cos();
        stamp(&mut img, |x, y| {
            let u = (x - cx) * cos_p + (y - cy) * sin_p;
            let v = -(x - cx) * sin_p + (y - cy) * cos_p;
            amp * (-0.5 * ((u / sx).powi(2) + (v / sy).powi(2))).exp()
        });
    }

    for v in img.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

fn stamp(img: &mut Image, f: impl Fn(f64, f64) -> f64) {
    let grid = img.grid;
    for i in 0..grid.side {
        let y = grid.row_center(i);
        for j in 0..grid.side {
            let x = grid.col_center(j);
            let v = img.get(i, j) + f(x, y);
            img.set(i, j, v);
        }
    }
}
