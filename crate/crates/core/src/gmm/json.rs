//! JSON serialization of mixture priors: weights in clear, float arrays
//! as base64-encoded little-endian f64.

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Covariance, GmmPrior};
use crate::error::{Error, Result};

pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub(crate) fn decode_f64s(s: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("float payload length not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
enum CovarianceDoc {
    Isotropic { dim: usize, c: f64 },
    Diagonal { diag: String },
    Full { dim: usize, matrix: String },
}

#[derive(Serialize, Deserialize)]
struct GmmDoc {
    weights: Vec<f64>,
    dim: usize,
    means: Vec<String>,
    covariances: Vec<CovarianceDoc>,
}

impl GmmPrior {
    pub fn to_json(&self) -> Result<String> {
        let doc = GmmDoc {
            weights: self.weights.clone(),
            dim: self.dim,
            means: self.means.iter().map(|m| encode_f64s(m.as_slice().unwrap())).collect(),
            covariances: self
                .covs
                .iter()
                .map(|c| match &**c {
                    Covariance::Isotropic { dim, var } => CovarianceDoc::Isotropic { dim: *dim, c: *var },
                    Covariance::Diagonal { diag } => CovarianceDoc::Diagonal {
                        diag: encode_f64s(diag.as_slice().unwrap()),
                    },
                    full @ Covariance::Full { .. } => {
                        let m = full.to_matrix();
                        CovarianceDoc::Full {
                            dim: m.nrows(),
                            matrix: encode_f64s(m.as_slice().unwrap()),
                        }
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: GmmDoc = serde_json::from_str(json)?;
        let means: Result<Vec<Array1<f64>>> = doc
            .means
            .iter()
            .map(|m| Ok(Array1::from_vec(decode_f64s(m)?)))
            .collect();
        let covs: Result<Vec<Arc<Covariance>>> = doc
            .covariances
            .iter()
            .map(|c| {
                Ok(Arc::new(match c {
                    CovarianceDoc::Isotropic { dim, c } => Covariance::isotropic(*dim, *c)?,
                    CovarianceDoc::Diagonal { diag } => {
                        Covariance::diagonal(Array1::from_vec(decode_f64s(diag)?))?
                    }
                    CovarianceDoc::Full { dim, matrix } => {
                        let vals = decode_f64s(matrix)?;
                        let m = Array2::from_shape_vec((*dim, *dim), vals)
                            .map_err(|e| Error::Format(e.to_string()))?;
                        Covariance::full(m)?
                    }
                }))
            })
            .collect();
        GmmPrior::new(doc.weights, means?, covs?)
    }
}
