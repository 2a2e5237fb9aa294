//! Versioned binary serialization of named parameters.
//!
//! Layout (all integers little-endian):
//!   magic "COAD" | version u32 | entries until EOF
//! entry:
//!   name_len u64 | name bytes | rank u64 | extents u64 x rank | values f32 x n
//!
//! Values are stored as 32-bit floats regardless of the model's compute
//! precision, so an f32 model round-trips bit-exactly.

use std::path::Path;

use crate::error::{CoadError, Result};
use crate::nn::Param;
use crate::tensor::Scalar;

pub const MAGIC: [u8; 4] = *b"COAD";
pub const VERSION: u32 = 1;

pub fn serialize<T: Scalar>(params: &[Param<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in params {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.tensor().shape();
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.tensor().data().iter() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn exhausted(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

/// Loads serialized values into an existing parameter set. Every entry must
/// match a model parameter by name and shape, and every model parameter must
/// be covered.
pub fn deserialize_into<T: Scalar>(bytes: &[u8], params: &[Param<T>]) -> Result<()> {
    let mut r = Reader { bytes, pos: 0 };
    match r.take(4) {
        Some(m) if m == MAGIC => {}
        _ => return Err(CoadError::CheckpointBadMagic),
    }
    let version = r
        .take(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(CoadError::CheckpointBadMagic)?;
    if version != VERSION {
        return Err(CoadError::CheckpointBadVersion {
            found: version,
            expected: VERSION,
        });
    }

    let by_name: std::collections::HashMap<&str, &Param<T>> =
        params.iter().map(|p| (p.name(), p)).collect();
    let mut filled = std::collections::HashSet::new();

    while !r.exhausted() {
        let name_len = r.u64().ok_or_else(|| CoadError::CheckpointTruncated {
            name: "<entry header>".into(),
        })? as usize;
        let name_bytes = r.take(name_len).ok_or_else(|| CoadError::CheckpointTruncated {
            name: "<entry name>".into(),
        })?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CoadError::Data("checkpoint entry name is not utf-8".into()))?
            .to_string();
        let rank = r.u64().ok_or_else(|| CoadError::CheckpointTruncated {
            name: name.clone(),
        })? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64().ok_or_else(|| CoadError::CheckpointTruncated {
                name: name.clone(),
            })? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r
            .take(numel * 4)
            .ok_or_else(|| CoadError::CheckpointTruncated { name: name.clone() })?;

        let param = by_name
            .get(name.as_str())
            .ok_or_else(|| CoadError::CheckpointMismatch {
                name: name.clone(),
                detail: "no such parameter in the model".into(),
            })?;
        if param.tensor().shape() != shape.as_slice() {
            return Err(CoadError::CheckpointMismatch {
                name: name.clone(),
                detail: format!(
                    "shape {:?} in file vs {:?} in model",
                    shape,
                    param.tensor().shape()
                ),
            });
        }
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::of_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        param.tensor().set_data(&values);
        if !filled.insert(name.clone()) {
            return Err(CoadError::CheckpointMismatch {
                name,
                detail: "duplicate entry".into(),
            });
        }
    }

    if filled.len() != params.len() {
        let missing = params
            .iter()
            .find(|p| !filled.contains(p.name()))
            .map(|p| p.name().to_string())
            .unwrap_or_default();
        return Err(CoadError::CheckpointMismatch {
            name: missing,
            detail: "parameter missing from checkpoint".into(),
        });
    }
    Ok(())
}

pub fn save_file<T: Scalar>(path: &Path, params: &[Param<T>]) -> Result<()> {
    std::fs::write(path, serialize(params))
        .map_err(|e| CoadError::io(path.display().to_string(), e))
}

pub fn load_file<T: Scalar>(path: &Path, params: &[Param<T>]) -> Result<()> {
    let bytes =
        std::fs::read(path).map_err(|e| CoadError::io(path.display().to_string(), e))?;
    deserialize_into(&bytes, params)
}

/// Name/shape listing for inspection, without mutating anything.
pub fn list_entries(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>)>> {
    let mut r = Reader { bytes, pos: 0 };
    match r.take(4) {
        Some(m) if m == MAGIC => {}
        _ => return Err(CoadError::CheckpointBadMagic),
    }
    let version = r
        .take(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(CoadError::CheckpointBadMagic)?;
    if version != VERSION {
        return Err(CoadError::CheckpointBadVersion {
            found: version,
            expected: VERSION,
        });
    }
    let mut out = Vec::new();
    while !r.exhausted() {
        let name_len = r.u64().ok_or_else(|| CoadError::CheckpointTruncated {
            name: "<entry header>".into(),
        })? as usize;
        let name = String::from_utf8_lossy(r.take(name_len).ok_or_else(|| {
            CoadError::CheckpointTruncated {
                name: "<entry name>".into(),
            }
        })?)
        .into_owned();
        let rank = r.u64().ok_or_else(|| CoadError::CheckpointTruncated {
            name: name.clone(),
        })? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64().ok_or_else(|| CoadError::CheckpointTruncated {
                name: name.clone(),
            })? as usize);
        }
        let numel: usize = shape.iter().product();
        r.take(numel * 4)
            .ok_or_else(|| CoadError::CheckpointTruncated { name: name.clone() })?;
        out.push((name, shape));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameter;

    fn sample_params() -> Vec<Param<f32>> {
        vec![
            Parameter::new("a.weight", &[2, 3], vec![1.0, -0.5, 0.25, 3.5, 0.0, -9.0]).unwrap(),
            Parameter::new("a.bias", &[2], vec![0.125, -0.75]).unwrap(),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = sample_params();
        let bytes = serialize(&params);
        let fresh = sample_params();
        for p in &fresh {
            p.tensor().set_data(&vec![0.0; p.numel()]);
        }
        deserialize_into(&bytes, &fresh).unwrap();
        for (a, b) in params.iter().zip(&fresh) {
            let av = a.tensor().to_vec();
            let bv = b.tensor().to_vec();
            for (x, y) in av.iter().zip(&bv) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_magic_is_a_magic_error() {
        let params = sample_params();
        let mut bytes = serialize(&params);
        bytes[0] = b'X';
        assert!(matches!(
            deserialize_into(&bytes, &params).unwrap_err(),
            CoadError::CheckpointBadMagic
        ));
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let params = sample_params();
        let mut bytes = serialize(&params);
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            deserialize_into(&bytes, &params).unwrap_err(),
            CoadError::CheckpointBadVersion { found: 99, .. }
        ));
    }

    #[test]
    fn truncated_payload_names_the_parameter() {
        let params = sample_params();
        let bytes = serialize(&params);
        let cut = &bytes[..bytes.len() - 3];
        match deserialize_into(cut, &params).unwrap_err() {
            CoadError::CheckpointTruncated { name } => assert_eq!(name, "a.bias"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_and_missing_entries_are_detected() {
        let params = sample_params();
        let bytes = serialize(&params);

        let other = vec![
            Parameter::<f32>::new("a.weight", &[3, 2], vec![0.0; 6]).unwrap(),
            Parameter::<f32>::new("a.bias", &[2], vec![0.0; 2]).unwrap(),
        ];
        assert!(matches!(
            deserialize_into(&bytes, &other).unwrap_err(),
            CoadError::CheckpointMismatch { .. }
        ));

        let extra = vec![
            Parameter::<f32>::new("a.weight", &[2, 3], vec![0.0; 6]).unwrap(),
            Parameter::<f32>::new("a.bias", &[2], vec![0.0; 2]).unwrap(),
            Parameter::<f32>::new("b.new", &[1], vec![0.0]).unwrap(),
        ];
        match deserialize_into(&bytes, &extra).unwrap_err() {
            CoadError::CheckpointMismatch { name, .. } => assert_eq!(name, "b.new"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn listing_reports_names_and_shapes() {
        let params = sample_params();
        let bytes = serialize(&params);
        let entries = list_entries(&bytes).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0], ("a.weight".to_string(), vec![2, 3]));
        assert_eq!(entries[1], ("a.bias".to_string(), vec![2]));
    }
}
