//! Measurement operators: the Radon operator with its cached
//! factorizations, and a dense matrix operator for tests and tiny
//! instances.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, SVD, UPLO};
use once_cell::sync::OnceCell;

use super::{fbp, radon, RadonGeometry};
use crate::error::{dim_mismatch, Result};

/// Symmetric eigendecomposition `M = Q diag(vals) Q^T`.
#[derive(Debug)]
pub struct SymEigen {
    pub vectors: Array2<f64>,
    pub values: Array1<f64>,
}

fn sym_eigen(m: &Array2<f64>) -> Result<SymEigen> {
    let (values, vectors) = m.eigh(UPLO::Lower)?;
    Ok(SymEigen { vectors, values })
}

struct SvdCache {
    u: Array2<f64>,
    vt: Array2<f64>,
    sigma_inv: Array1<f64>,
}

/// A linear measurement operator `H` with forward, adjoint, a
/// pseudo-inverse surrogate, and cached Gram factorizations.
pub trait MeasurementOp: Sync {
    fn dim_image(&self) -> usize;
    fn dim_meas(&self) -> usize;

    fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>>;
    fn adjoint(&self, y: &Array1<f64>) -> Result<Array1<f64>>;

    /// Fast surrogate for `H^dagger` (FBP for the Radon operator).
    fn pseudo_inverse(&self, y: &Array1<f64>) -> Result<Array1<f64>>;

    /// Exact Moore-Penrose `H^dagger` via cached SVD of the dense matrix.
    fn moore_penrose(&self, y: &Array1<f64>) -> Result<Array1<f64>>;

    /// Dense `H` (m_p x n), assembled once.
    fn dense(&self) -> Result<&Array2<f64>>;

    /// Dense `H H^T` (m_p x m_p).
    fn gram_meas(&self) -> Result<&Array2<f64>>;

    /// Eigendecomposition of `H H^T`.
    fn gram_meas_eigen(&self) -> Result<&SymEigen>;

    /// Eigendecomposition of `H^T H` (n x n).
    fn gram_image_eigen(&self) -> Result<&SymEigen>;
}

fn check_image_dim(op: &dyn MeasurementOp, x: &Array1<f64>) -> Result<()> {
    if x.len() != op.dim_image() {
        return Err(dim_mismatch(format!(
            "image vector has {} entries, operator expects {}",
            x.len(),
            op.dim_image()
        )));
    }
    Ok(())
}

fn check_meas_dim(op: &dyn MeasurementOp, y: &Array1<f64>) -> Result<()> {
    if y.len() != op.dim_meas() {
        return Err(dim_mismatch(format!(
            "measurement vector has {} entries, operator expects {}",
            y.len(),
            op.dim_meas()
        )));
    }
    Ok(())
}

fn svd_cache(h: &Array2<f64>) -> Result<SvdCache> {
    let (u, s, vt) = h.svd(true, true)?;
    let u = u.expect("svd requested u");
    let vt = vt.expect("svd requested vt");
    let cutoff = s.iter().cloned().fold(0.0, f64::max)
        * h.nrows().max(h.ncols()) as f64
        * f64::EPSILON;
    let sigma_inv = s.mapv(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    Ok(SvdCache { u, vt, sigma_inv })
}

fn pinv_apply(c: &SvdCache, y: &Array1<f64>) -> Array1<f64> {
    let z = c.u.t().dot(y);
    let k = c.sigma_inv.len().min(z.len());
    let mut zk = z.slice(ndarray::s![..k]).to_owned();
    zk *= &c.sigma_inv.slice(ndarray::s![..k]);
    c.vt.slice(ndarray::s![..k, ..]).t().dot(&zk)
}

/// The parallel-beam Radon operator on a fixed geometry. Immutable and
/// safely shareable; factorizations are computed on first use.
pub struct RadonOperator {
    geom: Arc<RadonGeometry>,
    dense: OnceCell<Array2<f64>>,
    gram_meas: OnceCell<Array2<f64>>,
    gram_meas_eigen: OnceCell<SymEigen>,
    gram_image_eigen: OnceCell<SymEigen>,
    svd: OnceCell<SvdCache>,
}

impl RadonOperator {
    pub fn new(geom: Arc<RadonGeometry>) -> Self {
        Self {
            geom,
            dense: OnceCell::new(),
            gram_meas: OnceCell::new(),
            gram_meas_eigen: OnceCell::new(),
            gram_image_eigen: OnceCell::new(),
            svd: OnceCell::new(),
        }
    }

    pub fn from_geometry(geom: RadonGeometry) -> Self {
        Self::new(Arc::new(geom))
    }

    pub fn geometry(&self) -> &RadonGeometry {
        &self.geom
    }

    pub fn geometry_arc(&self) -> Arc<RadonGeometry> {
        Arc::clone(&self.geom)
    }

    /// Ramp-filtered back-projection estimate of the image.
    pub fn fbp(&self, s: &Array1<f64>) -> Result<Array1<f64>> {
        check_meas_dim(self, s)?;
        let filtered = fbp::ramp_filter(&self.geom, s);
        let back = radon::adjoint(&self.geom, &filtered);
        Ok(back * fbp::fbp_scale(&self.geom))
    }
}

impl MeasurementOp for RadonOperator {
    fn dim_image(&self) -> usize {
        self.geom.grid.n()
    }

    fn dim_meas(&self) -> usize {
        self.geom.m_p()
    }

    fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_image_dim(self, x)?;
        Ok(radon::forward(&self.geom, x))
    }

    fn adjoint(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        check_meas_dim(self, y)?;
        Ok(radon::adjoint(&self.geom, y))
    }

    fn pseudo_inverse(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        self.fbp(y)
    }

    fn moore_penrose(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        check_meas_dim(self, y)?;
        let dense = self.dense()?;
        let cache = self.svd.get_or_try_init(|| svd_cache(dense))?;
        Ok(pinv_apply(cache, y))
    }

    fn dense(&self) -> Result<&Array2<f64>> {
        Ok(self.dense.get_or_init(|| radon::dense(&self.geom)))
    }

    fn gram_meas(&self) -> Result<&Array2<f64>> {
        let h = self.dense()?;
        Ok(self.gram_meas.get_or_init(|| h.dot(&h.t())))
    }

    fn gram_meas_eigen(&self) -> Result<&SymEigen> {
        let g = self.gram_meas()?;
        self.gram_meas_eigen.get_or_try_init(|| sym_eigen(g))
    }

    fn gram_image_eigen(&self) -> Result<&SymEigen> {
        let h = self.dense()?;
        self.gram_image_eigen
            .get_or_try_init(|| sym_eigen(&h.t().dot(h)))
    }
}

/// An explicit dense operator, mainly for oracles and tiny instances
/// (identity operators, hand-built matrices).
pub struct DenseOperator {
    h: Array2<f64>,
    gram_meas: OnceCell<Array2<f64>>,
    gram_meas_eigen: OnceCell<SymEigen>,
    gram_image_eigen: OnceCell<SymEigen>,
    svd: OnceCell<SvdCache>,
}

impl DenseOperator {
    pub fn new(h: Array2<f64>) -> Self {
        Self {
            h,
            gram_meas: OnceCell::new(),
            gram_meas_eigen: OnceCell::new(),
            gram_image_eigen: OnceCell::new(),
            svd: OnceCell::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Array2::eye(n))
    }
}

impl MeasurementOp for DenseOperator {
    fn dim_image(&self) -> usize {
        self.h.ncols()
    }

    fn dim_meas(&self) -> usize {
        self.h.nrows()
    }

    fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        check_image_dim(self, x)?;
        Ok(self.h.dot(x))
    }

    fn adjoint(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        check_meas_dim(self, y)?;
        Ok(self.h.t().dot(y))
    }

    fn pseudo_inverse(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        self.moore_penrose(y)
    }

    fn moore_penrose(&self, y: &Array1<f64>) -> Result<Array1<f64>> {
        check_meas_dim(self, y)?;
        let cache = self.svd.get_or_try_init(|| svd_cache(&self.h))?;
        Ok(pinv_apply(cache, y))
    }

    fn dense(&self) -> Result<&Array2<f64>> {
        Ok(&self.h)
    }

    fn gram_meas(&self) -> Result<&Array2<f64>> {
        Ok(self.gram_meas.get_or_init(|| self.h.dot(&self.h.t())))
    }

    fn gram_meas_eigen(&self) -> Result<&SymEigen> {
        let g = self.gram_meas()?;
        self.gram_meas_eigen.get_or_try_init(|| sym_eigen(g))
    }

    fn gram_image_eigen(&self) -> Result<&SymEigen> {
        self.gram_image_eigen
            .get_or_try_init(|| sym_eigen(&self.h.t().dot(&self.h)))
    }
}
