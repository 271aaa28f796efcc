//! Flat binary tensor format shared by images and sinograms.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON
//! header (shape, dtype, layout), then raw little-endian f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SVBTNSR1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

pub fn write_tensor(
    path: impl AsRef<Path>,
    shape: &[usize],
    layout: &str,
    data: &[f64],
) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(crate::error::dim_mismatch(format!(
            "tensor shape {:?} expects {} values, got {}",
            shape,
            expected,
            data.len()
        )));
    }
    let header = TensorHeader {
        shape: shape.to_vec(),
        dtype: "f64".to_string(),
        layout: layout.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(TensorHeader, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, not a tensor file".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: TensorHeader = serde_json::from_slice(&json)?;
    if header.dtype != "f64" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let count: usize = header.shape.iter().product();
    let mut data = vec![0.0f64; count];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        write_tensor(&path, &[3, 4], "row-major", &data).unwrap();
        let (h, back) = read_tensor(&path).unwrap();
        assert_eq!(h.shape, vec![3, 4]);
        assert_eq!(h.layout, "row-major");
        assert_eq!(back, data);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        assert!(write_tensor(&path, &[2, 2], "row-major", &[1.0]).is_err());
    }
}
