//! Feature concatenation and scale encoding.
//!
//! A per-scale block is `f_B = [f_D, f_G, f_S, f_C]`. The encoded vector gives
//! each scale its own slots plus a constant input:
//!
//! ```text
//! [ small block | C_S | large block | C_L ]
//! ```
//!
//! Only the active scale's block is filled and only its constant is 1, so the
//! weight on that constant acts as a per-scale bias in the first layer.

use std::fs;
use std::path::Path;

use crate::edges::Scale;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const DATASET_MAGIC: &[u8; 8] = b"DFKDS001";

/// Slot layout of encoded descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Per-feature dimension of hand-crafted features on small patches.
    pub dim_small: usize,
    /// Per-feature dimension of hand-crafted features on large patches.
    pub dim_large: usize,
    /// Dimension of the deep feature (same for both scales).
    pub deep_dim: usize,
}

impl Layout {
    pub fn new(dim_small: usize, dim_large: usize, deep_dim: usize) -> Self {
        Self {
            dim_small,
            dim_large,
            deep_dim,
        }
    }

    pub fn hand_dim(&self, scale: Scale) -> usize {
        3 * self.feature_dim(scale)
    }

    pub fn feature_dim(&self, scale: Scale) -> usize {
        match scale {
            Scale::Small => self.dim_small,
            Scale::Large => self.dim_large,
        }
    }

    /// Length of `f_B` for one scale.
    pub fn block_dim(&self, scale: Scale) -> usize {
        self.hand_dim(scale) + self.deep_dim
    }

    /// First slot of the scale's block.
    pub fn block_offset(&self, scale: Scale) -> usize {
        match scale {
            Scale::Small => 0,
            Scale::Large => self.block_dim(Scale::Small) + 1,
        }
    }

    /// Slot of the scale's constant input.
    pub fn constant_slot(&self, scale: Scale) -> usize {
        self.block_offset(scale) + self.block_dim(scale)
    }

    pub fn encoded_dim(&self) -> usize {
        self.block_dim(Scale::Small) + self.block_dim(Scale::Large) + 2
    }
}

/// `[f_D, f_G, f_S, f_C]` for one patch.
pub fn concat(f_d: &[f64], f_g: &[f64], f_s: &[f64], f_c: &[f64], scale: Scale, layout: &Layout) -> Result<Vec<f64>> {
    let n = layout.feature_dim(scale);
    for (name, f, want) in [
        ("f_D", f_d, n),
        ("f_G", f_g, n),
        ("f_S", f_s, n),
        ("f_C", f_c, layout.deep_dim),
    ] {
        if f.len() != want {
            return Err(Error::shape(
                format!("{name} of dim {want} for {} patches", scale.as_str()),
                f.len(),
            ));
        }
    }
    let mut out = Vec::with_capacity(layout.block_dim(scale));
    out.extend_from_slice(f_d);
    out.extend_from_slice(f_g);
    out.extend_from_slice(f_s);
    out.extend_from_slice(f_c);
    Ok(out)
}

/// Places `f_B` in its scale's slots and sets that scale's constant to 1.
pub fn encode_scale(block: &[f64], scale: Scale, layout: &Layout) -> Result<Vec<f64>> {
    if block.len() != layout.block_dim(scale) {
        return Err(Error::shape(layout.block_dim(scale), block.len()));
    }
    let mut out = vec![0.0; layout.encoded_dim()];
    let off = layout.block_offset(scale);
    out[off..off + block.len()].copy_from_slice(block);
    out[layout.constant_slot(scale)] = 1.0;
    Ok(out)
}

/// Inverse of [`encode_scale`] for valid encoded vectors.
pub fn decode(encoded: &[f64], layout: &Layout) -> Result<(Vec<f64>, Scale)> {
    let scale = active_scale(encoded, layout)?;
    let off = layout.block_offset(scale);
    Ok((encoded[off..off + layout.block_dim(scale)].to_vec(), scale))
}

/// Scale whose constant slot is 1; errors unless exactly one is.
pub fn active_scale(encoded: &[f64], layout: &Layout) -> Result<Scale> {
    if encoded.len() != layout.encoded_dim() {
        return Err(Error::shape(layout.encoded_dim(), encoded.len()));
    }
    let cs = encoded[layout.constant_slot(Scale::Small)];
    let cl = encoded[layout.constant_slot(Scale::Large)];
    match (cs == 1.0, cl == 1.0) {
        (true, false) if cl == 0.0 => Ok(Scale::Small),
        (false, true) if cs == 0.0 => Ok(Scale::Large),
        _ => Err(Error::invalid(
            "encoded descriptor must have exactly one scale constant set to 1",
        )),
    }
}

/// One labeled encoded descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub encoded: Vec<f64>,
    pub label: u8,
}

/// `magic | u32 count | u32 dim | count × (dim × f32, u8 label)`, little-endian.
pub fn encode_dataset(records: &[DatasetRecord], dim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + records.len() * (4 * dim + 1));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        if r.encoded.len() != dim {
            return Err(Error::shape(dim, r.encoded.len()));
        }
        for &v in &r.encoded {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(r.label);
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(Vec<DatasetRecord>, usize)> {
    if bytes.len() < 16 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::format("missing DFKDS001 header"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let rec = 4 * dim + 1;
    let body = &bytes[16..];
    if body.len() != count * rec {
        return Err(Error::format(format!(
            "dataset body has {} bytes, expected {}",
            body.len(),
            count * rec
        )));
    }
    let records = body
        .chunks_exact(rec)
        .map(|chunk| DatasetRecord {
            encoded: chunk[..4 * dim]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            label: chunk[4 * dim],
        })
        .collect();
    Ok((records, dim))
}

pub fn save_dataset(records: &[DatasetRecord], dim: usize, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(records, dim)?)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<DatasetRecord>, usize)> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_layout() -> Layout {
        Layout::new(13, 25, 20)
    }

    #[test]
    fn block_dims() {
        let l = default_layout();
        assert_eq!(l.block_dim(Scale::Large), 95);
        assert_eq!(l.block_dim(Scale::Small), 59);
        assert_eq!(l.encoded_dim(), 156);
        let f = concat(&[0.0; 25], &[0.0; 25], &[0.0; 25], &[0.0; 20], Scale::Large, &l).unwrap();
        assert_eq!(f.len(), 95);
        assert!(f.iter().all(|&v| v == 0.0));
        let f = concat(&[0.0; 13], &[0.0; 13], &[0.0; 13], &[0.0; 20], Scale::Small, &l).unwrap();
        assert_eq!(f.len(), 59);
    }

    #[test]
    fn concat_order_and_mismatch() {
        let l = Layout::new(2, 3, 1);
        let f = concat(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0], Scale::Small, &l).unwrap();
        assert_eq!(f, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(concat(&[1.0, 2.0], &[3.0], &[5.0, 6.0], &[7.0], Scale::Small, &l).is_err());
        assert!(concat(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0], Scale::Large, &l).is_err());
    }

    #[test]
    fn large_slots() {
        let l = default_layout();
        let block: Vec<f64> = (0..95).map(|i| 1.0 + i as f64).collect();
        let e = encode_scale(&block, Scale::Large, &l).unwrap();
        assert!(e[..60].iter().all(|&v| v == 0.0));
        assert_eq!(&e[60..155], &block[..]);
        assert_eq!(e[155], 1.0);
    }

    #[test]
    fn small_slots() {
        let l = default_layout();
        let block: Vec<f64> = (0..59).map(|i| 1.0 + i as f64).collect();
        let e = encode_scale(&block, Scale::Small, &l).unwrap();
        assert_eq!(&e[..59], &block[..]);
        assert_eq!(e[59], 1.0);
        assert!(e[60..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_block_dim() {
        let l = default_layout();
        assert!(encode_scale(&[0.0; 59], Scale::Large, &l).is_err());
        assert!(decode(&[0.0; 156], &l).is_err());
    }

    #[test]
    fn dataset_round_trip_and_truncation() {
        let recs = vec![
            DatasetRecord {
                encoded: vec![0.5, 1.0, 0.0],
                label: 3,
            },
            DatasetRecord {
                encoded: vec![0.25, 0.0, 1.0],
                label: 11,
            },
        ];
        let bytes = encode_dataset(&recs, 3).unwrap();
        assert_eq!(bytes.len(), 16 + 2 * 13);
        let (back, dim) = decode_dataset(&bytes).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(back, recs);
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_dataset(b"DFKDS002\0\0\0\0\0\0\0\0").is_err());
    }
}
