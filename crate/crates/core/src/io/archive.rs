//! Binary voxel container.
//!
//! Layout: the 8-byte magic `LWVX0001` (the last four bytes are the format
//! version), a kind byte, `d h w c` as little-endian u32, then the payload.
//! Dense payloads are row-major f32 values with channels innermost. Sparse
//! payloads are a u64 count followed by `count` records of three u32
//! coordinates `(z, y, x)` and `c` f32 features, in row-major order.
//! Occupancy fields are stored like dense grids with `c = 1` and are always
//! thresholded at zero.
//!
//! Values are stored as f32, so `load(save(x)) == x` holds for latents whose
//! values are exactly representable in f32 and `save(load(b)) == b` holds
//! for every valid archive.

use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{DenseLatentGrid, GridDims, OccupancyField, SparseLatent};

const PREFIX: &[u8; 4] = b"LWVX";
const VERSION: &[u8; 4] = b"0001";

const KIND_DENSE: u8 = 0;
const KIND_SPARSE: u8 = 1;
const KIND_OCCUPANCY: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum VoxelArchive {
    Dense(DenseLatentGrid),
    Sparse(SparseLatent),
    Occupancy(OccupancyField),
}

impl VoxelArchive {
    pub fn kind_name(&self) -> &'static str {
        match self {
            VoxelArchive::Dense(_) => "dense",
            VoxelArchive::Sparse(_) => "sparse",
            VoxelArchive::Occupancy(_) => "occupancy",
        }
    }

    pub fn dims(&self) -> GridDims {
        match self {
            VoxelArchive::Dense(g) => g.dims(),
            VoxelArchive::Sparse(s) => s.dims(),
            VoxelArchive::Occupancy(o) => o.dims(),
        }
    }

    pub fn into_dense(self) -> Result<DenseLatentGrid> {
        match self {
            VoxelArchive::Dense(g) => Ok(g),
            other => Err(Error::Format(format!(
                "expected a dense archive, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn into_sparse(self) -> Result<SparseLatent> {
        match self {
            VoxelArchive::Sparse(s) => Ok(s),
            other => Err(Error::Format(format!(
                "expected a sparse archive, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn into_occupancy(self) -> Result<OccupancyField> {
        match self {
            VoxelArchive::Occupancy(o) => Ok(o),
            other => Err(Error::Format(format!(
                "expected an occupancy archive, found {}",
                other.kind_name()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = self.dims();
        let mut out = Vec::new();
        out.extend_from_slice(PREFIX);
        out.extend_from_slice(VERSION);
        let kind = match self {
            VoxelArchive::Dense(_) => KIND_DENSE,
            VoxelArchive::Sparse(_) => KIND_SPARSE,
            VoxelArchive::Occupancy(_) => KIND_OCCUPANCY,
        };
        out.push(kind);
        for v in [dims.d, dims.h, dims.w, dims.c] {
            out.extend_from_slice(&u32_of(v)?.to_le_bytes());
        }
        let put = |out: &mut Vec<u8>, vals: &[f64]| {
            vals.iter()
                .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes()))
        };
        match self {
            VoxelArchive::Dense(g) => put(&mut out, g.data()),
            VoxelArchive::Occupancy(o) => {
                if o.threshold() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "occupancy archives are thresholded at 0, field uses {}",
                        o.threshold()
                    )));
                }
                put(&mut out, o.values());
            }
            VoxelArchive::Sparse(s) => {
                out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                for i in 0..s.len() {
                    for v in s.position(i) {
                        out.extend_from_slice(&(v as u32).to_le_bytes());
                    }
                    put(&mut out, s.feature(i));
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != PREFIX {
            return Err(Error::Format("not a voxel archive (bad magic)".into()));
        }
        let version = r.take(4)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported archive version {:?}",
                String::from_utf8_lossy(version)
            )));
        }
        let kind = r.take(1)?[0];
        let mut d = [0usize; 4];
        for v in &mut d {
            *v = r.u32()? as usize;
        }
        let dims = GridDims::new(d[0], d[1], d[2], d[3])?;
        let archive = match kind {
            KIND_DENSE => {
                let n = checked_len(dims.voxels(), dims.c)?;
                VoxelArchive::Dense(DenseLatentGrid::from_vec(dims, r.f32s(n)?)?)
            }
            KIND_OCCUPANCY => {
                VoxelArchive::Occupancy(OccupancyField::new(dims, r.f32s(dims.voxels())?, 0.0)?)
            }
            KIND_SPARSE => {
                let count = usize::try_from(r.u64()?)
                    .map_err(|_| Error::Format("sparse count overflows".into()))?;
                if count > dims.voxels() {
                    return Err(Error::Format(format!(
                        "{count} sparse records exceed {} voxels",
                        dims.voxels()
                    )));
                }
                let mut positions = Vec::with_capacity(count);
                let mut feats = Vec::with_capacity(count * dims.c);
                let mut last: Option<usize> = None;
                for _ in 0..count {
                    let p = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
                    if !(p[0] < dims.d && p[1] < dims.h && p[2] < dims.w) {
                        return Err(Error::Format(format!(
                            "sparse position {p:?} outside {:?}",
                            dims.spatial()
                        )));
                    }
                    let key = dims.voxel_index(p);
                    if last.is_some_and(|l| l >= key) {
                        return Err(Error::Format(
                            "sparse records are not in strictly increasing order".into(),
                        ));
                    }
                    last = Some(key);
                    positions.push(p);
                    feats.extend(r.f32s(dims.c)?);
                }
                VoxelArchive::Sparse(SparseLatent::new(dims, &positions, &feats)?)
            }
            other => return Err(Error::Format(format!("unknown archive kind {other}"))),
        };
        if r.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidDims(format!("extent {v} does not fit in u32")))
}

fn checked_len(voxels: usize, c: usize) -> Result<usize> {
    voxels
        .checked_mul(c)
        .ok_or_else(|| Error::Format("payload size overflows".into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("archive is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("payload size overflows".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn f32_values(n: usize, seed: u64) -> Vec<f64> {
        rng::normal_vec(&mut rng::seeded(seed), n)
            .into_iter()
            .map(|v| v as f32 as f64)
            .collect()
    }

    #[test]
    fn header_layout() {
        let dims = GridDims::new(2, 3, 4, 1).unwrap();
        let bytes = VoxelArchive::Dense(DenseLatentGrid::filled(dims, 1.5))
            .to_bytes()
            .unwrap();
        assert_eq!(&bytes[..8], b"LWVX0001");
        assert_eq!(bytes[8], 0);
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[21..25], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 25 + 24 * 4);
        assert_eq!(&bytes[25..29], &1.5f32.to_le_bytes());
    }

    #[test]
    fn sparse_layout() {
        let dims = GridDims::new(4, 4, 4, 2).unwrap();
        let s = SparseLatent::new(dims, &[[3, 2, 1], [0, 0, 1]], &[5.0, 6.0, 1.0, 2.0]).unwrap();
        let bytes = VoxelArchive::Sparse(s).to_bytes().unwrap();
        assert_eq!(bytes[8], 1);
        assert_eq!(&bytes[25..33], &2u64.to_le_bytes());
        // first record is the smaller row-major index
        assert_eq!(
            &bytes[33..45],
            [0u32, 0, 1]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<_>>()
                .as_slice()
        );
        assert_eq!(&bytes[45..49], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 33 + 2 * (12 + 8));
    }

    #[test]
    fn wrong_version_and_magic_rejected() {
        let dims = GridDims::cube(2, 1).unwrap();
        let mut bytes = VoxelArchive::Dense(DenseLatentGrid::zeros(dims))
            .to_bytes()
            .unwrap();
        bytes[7] = b'2';
        assert!(
            matches!(VoxelArchive::from_bytes(&bytes), Err(Error::Format(m)) if m.contains("version"))
        );
        bytes[0] = b'X';
        assert!(
            matches!(VoxelArchive::from_bytes(&bytes), Err(Error::Format(m)) if m.contains("magic"))
        );
    }

    #[test]
    fn truncated_and_trailing_rejected() {
        let dims = GridDims::cube(2, 1).unwrap();
        let bytes = VoxelArchive::Dense(DenseLatentGrid::zeros(dims))
            .to_bytes()
            .unwrap();
        assert!(VoxelArchive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(VoxelArchive::from_bytes(&long).is_err());
    }

    #[test]
    fn occupancy_round_trip_and_threshold_check() {
        let dims = GridDims::new(2, 2, 3, 1).unwrap();
        let occ = OccupancyField::new(dims, f32_values(12, 1), 0.0).unwrap();
        let a = VoxelArchive::Occupancy(occ);
        assert_eq!(VoxelArchive::from_bytes(&a.to_bytes().unwrap()).unwrap(), a);
        let bad = OccupancyField::new(dims, vec![0.0; 12], 0.5).unwrap();
        assert!(VoxelArchive::Occupancy(bad).to_bytes().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("lwvx-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.lwvx");
        let dims = GridDims::new(3, 2, 2, 2).unwrap();
        let a = VoxelArchive::Dense(DenseLatentGrid::from_vec(dims, f32_values(24, 2)).unwrap());
        a.save(&path).unwrap();
        assert_eq!(VoxelArchive::load(&path).unwrap(), a);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn dense_round_trip_is_bit_exact(seed in 0u64..1000, d in 1usize..5, h in 1usize..5, w in 1usize..5, c in 1usize..4) {
            let dims = GridDims::new(d, h, w, c).unwrap();
            let a = VoxelArchive::Dense(DenseLatentGrid::from_vec(dims, f32_values(dims.voxels() * c, seed)).unwrap());
            let bytes = a.to_bytes().unwrap();
            let b = VoxelArchive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&b, &a);
            prop_assert_eq!(b.to_bytes().unwrap(), bytes);
        }

        #[test]
        fn sparse_round_trip_is_bit_exact(seed in 0u64..1000, n in 1usize..6, c in 1usize..5, keep in 0.0f64..1.0) {
            let dims = GridDims::cube(n, c).unwrap();
            let mut r = rng::seeded(seed);
            let pos: Vec<[usize; 3]> = (0..dims.voxels())
                .filter(|_| rand::Rng::random::<f64>(&mut r) < keep)
                .map(|i| dims.position(i))
                .collect();
            let s = SparseLatent::new(dims, &pos, &f32_values(pos.len() * c, seed + 1)).unwrap();
            let a = VoxelArchive::Sparse(s);
            let bytes = a.to_bytes().unwrap();
            prop_assert_eq!(VoxelArchive::from_bytes(&bytes).unwrap(), a);
        }
    }
}
