//! Binary model file.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "GAEMODEL"
//! version      u32      FORMAT_VERSION
//! encoder      u8       0 = gat, 1 = gcn
//! self_loops   u8       0 or 1
//! num_dims     u32
//! layer_dims   u64 × num_dims
//! lambda       f64
//! leaky_slope  f64
//! per layer l:
//!   weight     f64 × dims[l]·dims[l+1], row-major
//!   attention  f64 × 2·dims[l+1]       (gat only; self half then neighbor half)
//! ```
//!
//! The file must end exactly after the last layer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{GatParams, GcnParams};
use crate::model::{layer_activation, EncoderKind, GaeModel, LayerParams};
use crate::numerics::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"GAEMODEL";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &GaeModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match model.kind {
        EncoderKind::Gat => 0,
        EncoderKind::Gcn => 1,
    });
    out.push(model.self_loops as u8);
    out.extend_from_slice(&(model.layer_dims.len() as u32).to_le_bytes());
    for &d in &model.layer_dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&model.lambda.to_le_bytes());
    out.extend_from_slice(&model.leaky_slope.to_le_bytes());
    for buf in model.buffers() {
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt(format!("{what} size overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<GaeModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Corrupt("not a model file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let kind = match r.u8("encoder kind")? {
        0 => EncoderKind::Gat,
        1 => EncoderKind::Gcn,
        other => return Err(Error::Corrupt(format!("unknown encoder tag {other}"))),
    };
    let self_loops = match r.u8("self-loop flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::Corrupt(format!("bad self-loop flag {other}"))),
    };
    let num_dims = r.u32("dimension count")? as usize;
    let mut layer_dims = Vec::new();
    for _ in 0..num_dims {
        let d = r.u64("layer dims")?;
        layer_dims.push(usize::try_from(d).map_err(|_| Error::Corrupt(format!("dimension {d} too large")))?);
    }
    let lambda = r.f64("lambda")?;
    let leaky_slope = r.f64("leaky slope")?;
    let num_layers = num_dims.saturating_sub(1);
    let mut layers = Vec::with_capacity(num_layers);
    for (l, dims) in layer_dims.windows(2).enumerate() {
        let (d_in, d_out) = (dims[0], dims[1]);
        let count = d_in
            .checked_mul(d_out)
            .ok_or_else(|| Error::Corrupt("weight size overflows".into()))?;
        let weight = DenseMatrix::new(d_in, d_out, r.f64s(count, "weights")?)
            .map_err(|e| Error::Corrupt(format!("layer {l}: {e}")))?;
        let activation = layer_activation(l, num_layers);
        layers.push(match kind {
            EncoderKind::Gat => LayerParams::Gat(GatParams {
                weight,
                attention: r.f64s(2 * d_out, "attention")?,
                leaky_slope,
                activation,
            }),
            EncoderKind::Gcn => LayerParams::Gcn(GcnParams { weight, activation }),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - r.pos
        )));
    }
    let model = GaeModel {
        kind,
        layer_dims,
        layers,
        lambda,
        self_loops,
        leaky_slope,
    };
    model.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    if model.buffers().iter().any(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::Corrupt("non-finite parameter".into()));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &GaeModel) -> Result<()> {
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<GaeModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::init_model;

    fn bits(m: &GaeModel) -> Vec<u64> {
        m.buffers().iter().flat_map(|b| b.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        for kind in [EncoderKind::Gat, EncoderKind::Gcn] {
            let m = init_model(kind, &[7, 5, 3], 3e-4, false, 0.15, 11).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.bin");
            save_model(&path, &m).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(bits(&back), bits(&m));
            assert_eq!(back.lambda.to_bits(), m.lambda.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let m = init_model(EncoderKind::Gcn, &[2, 1], 0.5, true, 0.2, 0).unwrap();
        let b = encode_model(&m).unwrap();
        assert_eq!(&b[..8], b"GAEMODEL");
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(b[12], 1);
        assert_eq!(b[13], 1);
        assert_eq!(&b[14..18], &[2, 0, 0, 0]);
        assert_eq!(b.len(), 18 + 2 * 8 + 2 * 8 + 2 * 8);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corrupt() {
        let m = init_model(EncoderKind::Gat, &[3, 2], 0.0, true, 0.2, 1).unwrap();
        let b = encode_model(&m).unwrap();
        for cut in [0, 5, 12, 30, b.len() - 1] {
            assert!(matches!(decode_model(&b[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut longer = b.clone();
        longer.push(0);
        assert!(matches!(decode_model(&longer), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch() {
        let m = init_model(EncoderKind::Gat, &[3, 2], 0.0, true, 0.2, 1).unwrap();
        let mut b = encode_model(&m).unwrap();
        b[8] = 9;
        assert!(matches!(
            decode_model(&b),
            Err(Error::Version { found: 9, supported: 1 })
        ));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(decode_model(b"NOTAMODELxxxxxxxx"), Err(Error::Corrupt(_))));
    }
}
