//! Joseph's method: line integrals with linear interpolation along the
//! dominant axis. The adjoint enumerates the same weights transposed, so
//! the pair is an exact transpose by construction.

use ndarray::{Array1, Array2};

use super::RadonGeometry;

/// Visit every (pixel, weight) pair of the ray at `angle_idx`, `det_idx`.
#[inline]
pub(super) fn for_each_ray_weight(
    geom: &RadonGeometry,
    angle_idx: usize,
    det_idx: usize,
    mut visit: impl FnMut(usize, f64),
) {
    let side = geom.grid.side;
    let px = geom.grid.pixel_size;
    let half = (side as f64 - 1.0) / 2.0;
    let theta = geom.angles[angle_idx];
    let (sin_t, cos_t) = theta.sin_cos();
    let t = geom.det_positions[det_idx];

    if cos_t.abs() >= sin_t.abs() {
        // Ray closer to vertical: march over rows, interpolate columns.
        let w = px / cos_t.abs();
        for i in 0..side {
            let y = (half - i as f64) * px;
            let x = (t - y * sin_t) / cos_t;
            let cf = x / px + half;
            let j0 = cf.floor();
            let frac = cf - j0;
            let j0 = j0 as isize;
            if (0..side as isize).contains(&j0) {
                visit(i * side + j0 as usize, w * (1.0 - frac));
            }
            if (0..side as isize).contains(&(j0 + 1)) {
                visit(i * side + (j0 + 1) as usize, w * frac);
            }
        }
    } else {
        // Ray closer to horizontal: march over columns, interpolate rows.
        let w = px / sin_t.abs();
        for j in 0..side {
            let x = (j as f64 - half) * px;
            let y = (t - x * cos_t) / sin_t;
            let rf = half - y / px;
            let i0 = rf.floor();
            let frac = rf - i0;
            let i0 = i0 as isize;
            if (0..side as isize).contains(&i0) {
                visit(i0 as usize * side + j, w * (1.0 - frac));
            }
            if (0..side as isize).contains(&(i0 + 1)) {
                visit((i0 + 1) as usize * side + j, w * frac);
            }
        }
    }
}

pub(super) fn forward(geom: &RadonGeometry, x: &Array1<f64>) -> Array1<f64> {
    let d = geom.num_detectors;
    let mut sino = Array1::zeros(geom.m_p());
    for a in 0..geom.num_projections {
        for k in 0..d {
            let mut acc = 0.0;
            for_each_ray_weight(geom, a, k, |pix, w| acc += w * x[pix]);
            sino[a * d + k] = acc;
        }
    }
    sino
}

pub(super) fn adjoint(geom: &RadonGeometry, s: &Array1<f64>) -> Array1<f64> {
    let d = geom.num_detectors;
    let mut img = Array1::zeros(geom.grid.n());
    for a in 0..geom.num_projections {
        for k in 0..d {
            let v = s[a * d + k];
            if v != 0.0 {
                for_each_ray_weight(geom, a, k, |pix, w| img[pix] += w * v);
            }
        }
    }
    img
}

/// Explicit dense `H` (m_p x n), assembled from the same ray weights.
pub(super) fn dense(geom: &RadonGeometry) -> Array2<f64> {
    let d = geom.num_detectors;
    let mut h = Array2::zeros((geom.m_p(), geom.grid.n()));
    for a in 0..geom.num_projections {
        for k in 0..d {
            let row = a * d + k;
            for_each_ray_weight(geom, a, k, |pix, w| h[[row, pix]] += w);
        }
    }
    h
}
