//! Discretized parallel-beam Radon transform, its exact adjoint,
//! filtered back-projection and measurement simulation.

mod fbp;
mod operator;
mod radon;

pub use operator::{DenseOperator, MeasurementOp, RadonOperator};

use std::sync::Arc;

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_mismatch, invalid, Error, Result};
use crate::image::{Image, ImageGrid};

/// Parallel-beam acquisition geometry: `p` equispaced angles over `[0, pi)`
/// and `d` detectors spanning the grid's circumscribed circle.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonGeometry {
    pub grid: ImageGrid,
    pub num_projections: usize,
    pub num_detectors: usize,
    pub angles: Vec<f64>,
    pub det_positions: Vec<f64>,
    pub det_spacing: f64,
}

impl RadonGeometry {
    /// Sinogram dimension `m_p = p * d`.
    pub fn m_p(&self) -> usize {
        self.num_projections * self.num_detectors
    }
}

/// Default detector count: covers the grid diagonal with roughly
/// pixel-sized bins.
pub fn default_detector_count(grid: &ImageGrid) -> usize {
    (grid.side as f64 * std::f64::consts::SQRT_2).ceil() as usize + 1
}

/// Build a geometry with equispaced angles `theta_j = j*pi/p`.
pub fn make_geometry(grid: ImageGrid, p: usize, d: usize) -> Result<RadonGeometry> {
    if p == 0 {
        return Err(invalid("number of projections must be >= 1"));
    }
    if d == 0 {
        return Err(invalid("number of detectors must be >= 1"));
    }
    let angles: Vec<f64> = (0..p)
        .map(|j| j as f64 * std::f64::consts::PI / p as f64)
        .collect();
    let radius = grid.circumradius();
    let (det_positions, det_spacing) = if d == 1 {
        (vec![0.0], 2.0 * radius)
    } else {
        let spacing = 2.0 * radius / (d as f64 - 1.0);
        ((0..d).map(|k| -radius + k as f64 * spacing).collect(), spacing)
    };
    Ok(RadonGeometry {
        grid,
        num_projections: p,
        num_detectors: d,
        angles,
        det_positions,
        det_spacing,
    })
}

/// A measured (or simulated) sinogram, laid out projection-major.
#[derive(Debug, Clone)]
pub struct Sinogram {
    pub geometry: Arc<RadonGeometry>,
    pub values: Array1<f64>,
}

impl Sinogram {
    pub fn new(geometry: Arc<RadonGeometry>, values: Array1<f64>) -> Result<Self> {
        if values.len() != geometry.m_p() {
            return Err(dim_mismatch(format!(
                "sinogram has {} values, geometry expects m_p = {}",
                values.len(),
                geometry.m_p()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(invalid("sinogram contains non-finite values"));
        }
        Ok(Self { geometry, values })
    }
}

/// Measurement noise: i.i.d. Gaussian with standard deviation `sigma_y`
/// in sinogram units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_y: f64,
}

impl NoiseModel {
    pub fn new(sigma_y: f64) -> Result<Self> {
        if !(sigma_y > 0.0) {
            return Err(invalid(format!("sigma_y must be > 0, got {sigma_y}")));
        }
        Ok(Self { sigma_y })
    }

    /// Zero-noise model, accepted by `simulate_measurement` for testing only.
    pub fn noiseless() -> Self {
        Self { sigma_y: 0.0 }
    }
}

/// Simulate `y = H x + eps`, reproducible per seed.
pub fn simulate_measurement(
    x: &Image,
    op: &RadonOperator,
    noise: &NoiseModel,
    rng_seed: u64,
) -> Result<Sinogram> {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    simulate_measurement_rng(x, op, noise, &mut rng)
}

pub fn simulate_measurement_rng(
    x: &Image,
    op: &RadonOperator,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<Sinogram> {
    let mut y = op.forward(&x.data)?;
    if noise.sigma_y > 0.0 {
        for v in y.iter_mut() {
            *v += noise.sigma_y * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Sinogram::new(op.geometry_arc(), y)
}

/// Noise-level calibration: 1% of the dataset's average 180-projection
/// sinogram dynamic.
pub fn calibrate_sigma_y(dataset: &[Image], grid: ImageGrid, d: usize) -> Result<NoiseModel> {
    if dataset.is_empty() {
        return Err(invalid("calibration dataset is empty"));
    }
    let geom = make_geometry(grid, 180, d)?;
    let op = RadonOperator::new(Arc::new(geom));
    let mut total_dynamic = 0.0;
    for img in dataset {
        let sino = op.forward(&img.data)?;
        let max = sino.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = sino.iter().cloned().fold(f64::INFINITY, f64::min);
        total_dynamic += max - min;
    }
    let sigma_y = total_dynamic / (100.0 * dataset.len() as f64);
    if sigma_y == 0.0 {
        return Err(Error::DegenerateCalibration);
    }
    NoiseModel::new(sigma_y)
}

#[cfg(test)]
mod tests;
