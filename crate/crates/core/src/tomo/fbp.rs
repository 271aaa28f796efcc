//! Ram-Lak filtered back-projection.

use ndarray::Array1;
use rustfft::{num_complex::Complex64, FftPlanner};

use super::RadonGeometry;

/// Ramp-filter every projection in the frequency domain.
pub(super) fn ramp_filter(geom: &RadonGeometry, sino: &Array1<f64>) -> Array1<f64> {
    let d = geom.num_detectors;
    let n_fft = (2 * d).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let ifft = planner.plan_fft_inverse(n_fft);

    // |f| in cycles per physical unit at the FFT bin frequencies.
    let freq_abs: Vec<f64> = (0..n_fft)
        .map(|k| {
            let k_signed = if k <= n_fft / 2 { k } else { n_fft - k };
            k_signed as f64 / (n_fft as f64 * geom.det_spacing)
        })
        .collect();

    let mut out = Array1::zeros(sino.len());
    let mut buf = vec![Complex64::default(); n_fft];
    for a in 0..geom.num_projections {
        for (slot, k) in buf.iter_mut().zip(0..n_fft) {
            *slot = if k < d {
                Complex64::new(sino[a * d + k], 0.0)
            } else {
                Complex64::default()
            };
        }
        fft.process(&mut buf);
        for (slot, f) in buf.iter_mut().zip(&freq_abs) {
            *slot *= f;
        }
        ifft.process(&mut buf);
        let scale = 1.0 / n_fft as f64; // rustfft leaves the 1/N to us
        for k in 0..d {
            out[a * d + k] = buf[k].re * scale;
        }
    }
    out
}

/// Back-projection scale so that `fbp(H x) ~ x` for smooth images:
/// angular quadrature `pi/p`, detector quadrature `dt`, and the adjoint's
/// own `px^2` pixel footprint.
pub(super) fn fbp_scale(geom: &RadonGeometry) -> f64 {
    let px = geom.grid.pixel_size;
    std::f64::consts::PI * geom.det_spacing / (geom.num_projections as f64 * px * px)
}
