//! `SBMD` binary model files and their JSON metadata sidecar.
//!
//! Layout (little-endian):
//!
//! | field            | type        |
//! |------------------|-------------|
//! | magic `"SBMD"`   | 4 bytes     |
//! | version (= 1)    | u16         |
//! | d                | u32         |
//! | M                | u64         |
//! | ε                | f64         |
//! | mode             | u8 (0 fixed, 1 variable bandwidth, 2 empirical covariance) |
//! | β                | f64         |
//! | Z                | f64         |
//! | KDE bandwidth    | f64 (0 unless variable bandwidth) |
//! | residual         | f64         |
//! | iterations       | u64         |
//! | v                | M × f64     |
//! | data             | d·M × f64, column-major |
//! | ρ                | M × f64, variable bandwidth only |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeModel, SinkhornOptions};
use crate::error::{Error, Result};
use crate::kernel::{KernelMode, KernelSpec};
use crate::training::TrainingSet;

const MAGIC: &[u8; 4] = b"SBMD";
const VERSION: u16 = 1;

/// Fit metadata written next to the binary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub dim: usize,
    pub count: usize,
    pub epsilon: f64,
    pub mode: KernelMode,
    pub beta: f64,
    pub z_norm: f64,
    pub residual: f64,
    pub iterations: usize,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl FitMetadata {
    pub fn of(model: &BridgeModel) -> Self {
        let spec = model.spec();
        Self {
            dim: model.dim(),
            count: model.count(),
            epsilon: spec.epsilon(),
            mode: spec.mode(),
            beta: spec.beta(),
            z_norm: spec.z_norm(),
            residual: model.residual(),
            iterations: model.iterations_used(),
            tolerance: model.options().tol,
            max_iter: model.options().max_iter,
        }
    }
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Format {
            format: "SBMD",
            reason: format!("truncated file: {e}"),
        })?;
        Ok(buf)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_model<W: Write>(model: &BridgeModel, mut w: W) -> Result<()> {
    let spec = model.spec();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.dim() as u32).to_le_bytes())?;
    w.write_all(&(model.count() as u64).to_le_bytes())?;
    put_f64(&mut w, spec.epsilon())?;
    w.write_all(&[spec.mode().code()])?;
    put_f64(&mut w, spec.beta())?;
    put_f64(&mut w, spec.z_norm())?;
    put_f64(&mut w, spec.density().map_or(0.0, |k| k.bandwidth()))?;
    put_f64(&mut w, model.residual())?;
    w.write_all(&(model.iterations_used() as u64).to_le_bytes())?;
    for v in model.weights().iter() {
        put_f64(&mut w, *v)?;
    }
    for v in model.training().data().iter() {
        put_f64(&mut w, *v)?;
    }
    if spec.mode() == KernelMode::VariableBandwidth {
        for r in spec.rho() {
            put_f64(&mut w, *r)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<BridgeModel> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != MAGIC {
        return Err(Error::Format {
            format: "SBMD",
            reason: "bad magic".into(),
        });
    }
    let version = u16::from_le_bytes(c.bytes::<2>()?);
    if version != VERSION {
        return Err(Error::Format {
            format: "SBMD",
            reason: format!("unsupported version {version}"),
        });
    }
    let d = u32::from_le_bytes(c.bytes::<4>()?) as usize;
    let m = u64::from_le_bytes(c.bytes::<8>()?) as usize;
    let epsilon = c.f64()?;
    let mode = KernelMode::from_code(c.bytes::<1>()?[0]).ok_or_else(|| Error::Format {
        format: "SBMD",
        reason: "unknown kernel mode".into(),
    })?;
    let beta = c.f64()?;
    let z_norm = c.f64()?;
    let kde_bandwidth = c.f64()?;
    let residual = c.f64()?;
    let iterations = u64::from_le_bytes(c.bytes::<8>()?) as usize;
    let v = c.f64s(m)?;
    let data = c.f64s(d * m)?;
    let ts = TrainingSet::new(nalgebra::DMatrix::from_vec(d, m, data))?;
    let spec = match mode {
        KernelMode::Fixed => KernelSpec::fixed(&ts, epsilon)?,
        KernelMode::EmpiricalCovariance => KernelSpec::empirical_covariance(&ts, epsilon)?,
        KernelMode::VariableBandwidth => {
            let rho = c.f64s(m)?;
            KernelSpec::variable_from_parts(&ts, epsilon, beta, kde_bandwidth, rho, z_norm)?
        }
    };
    BridgeModel::from_weights(ts, spec, v, residual, iterations, SinkhornOptions::default())
}

/// Writes `path` (binary) and `path` with a `.json` extension (metadata).
pub fn save_model(model: &BridgeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    write_model(model, &mut out)?;
    out.flush()?;
    let meta = serde_json::to_string_pretty(&FitMetadata::of(model))?;
    std::fs::write(path.with_extension("json"), meta + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BridgeModel> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::sinkhorn_fit;

    fn roundtrip(model: &BridgeModel) -> BridgeModel {
        let mut buf = Vec::new();
        write_model(model, &mut buf).unwrap();
        read_model(buf.as_slice()).unwrap()
    }

    #[test]
    fn roundtrip_preserves_queries_in_every_mode() {
        let ts = TrainingSet::from_samples(&[[0.0, 0.2], [0.5, -0.1], [1.3, 0.8], [-0.4, 0.6]]).unwrap();
        let specs = [
            KernelSpec::fixed(&ts, 0.2).unwrap(),
            KernelSpec::variable(&ts, 0.2, -0.3).unwrap(),
            KernelSpec::empirical_covariance(&ts, 0.2).unwrap(),
        ];
        for spec in specs {
            let model = sinkhorn_fit(&ts, &spec, SinkhornOptions::default()).unwrap();
            let back = roundtrip(&model);
            assert_eq!(back.weights(), model.weights());
            assert_eq!(back.spec().rho(), model.spec().rho());
            let x = [0.3, 0.1];
            assert_eq!(
                back.conditional_mean(&x).unwrap(),
                model.conditional_mean(&x).unwrap()
            );
        }
    }

    #[test]
    fn header_fields_are_where_documented() {
        let ts = TrainingSet::from_samples(&[[1.0], [2.0]]).unwrap();
        let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 0.5).unwrap(), SinkhornOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SBMD");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[10..18].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[18..26].try_into().unwrap()), 0.5);
        assert_eq!(buf[26], 0);
        // header 67 bytes + v (2) + data (2)
        assert_eq!(buf.len(), 67 + 4 * 8);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(read_model(&b"SBMX"[..]).is_err());
        let ts = TrainingSet::from_samples(&[[1.0], [2.0]]).unwrap();
        let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 0.5).unwrap(), SinkhornOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_model(buf.as_slice()), Err(Error::Format { .. })));
    }
}
