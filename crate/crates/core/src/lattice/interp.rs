use crate::error::{Error, Result};
use crate::lattice::grid::SparseLatent;

/// Trilinear blend of the eight cell corners around `query` (`[z, y, x]`,
/// each in `[0, extent - 1]`). Corners missing from the sparse set count as
/// zero vectors with their usual weight; weights are not renormalized.
pub fn trilinear_sample_sparse(s: &SparseLatent, query: [f64; 3]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; s.dims().c];
    trilinear_sample_into(s, query, &mut out)?;
    Ok(out)
}

pub(crate) fn trilinear_sample_into(
    s: &SparseLatent,
    query: [f64; 3],
    out: &mut [f64],
) -> Result<()> {
    let bounds = s.dims().spatial();
    for a in 0..3 {
        if !(query[a] >= 0.0 && query[a] <= (bounds[a] - 1) as f64) {
            return Err(Error::OutOfBounds { query, bounds });
        }
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let base = [
        query[0].floor() as usize,
        query[1].floor() as usize,
        query[2].floor() as usize,
    ];
    let frac = [
        query[0] - base[0] as f64,
        query[1] - base[1] as f64,
        query[2] - base[2] as f64,
    ];
    for corner in 0..8usize {
        let bits = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let mut weight = 1.0;
        let mut p = [0usize; 3];
        for a in 0..3 {
            p[a] = base[a] + bits[a];
            weight *= if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if weight == 0.0 || p.iter().zip(&bounds).any(|(&v, &b)| v >= b) {
            continue;
        }
        if let Some(f) = s.get(p) {
            for (o, v) in out.iter_mut().zip(f) {
                *o += weight * v;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::grid::GridDims;
    use crate::rng;
    use rand::Rng;

    fn random_sparse(seed: u64, n: usize, c: usize, density: f64) -> SparseLatent {
        let mut r = rng::seeded(seed);
        let dims = GridDims::cube(n, c).unwrap();
        let mut pos = Vec::new();
        let mut feats = Vec::new();
        for i in 0..dims.voxels() {
            if r.random::<f64>() < density {
                pos.push(dims.position(i));
                for _ in 0..c {
                    feats.push(rng::normal(&mut r));
                }
            }
        }
        SparseLatent::new(dims, &pos, &feats).unwrap()
    }

    fn oracle(s: &SparseLatent, q: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; s.dims().c];
        for i in 0..s.len() {
            let p = s.position(i);
            let mut w = 1.0;
            for a in 0..3 {
                w *= (1.0 - (q[a] - p[a] as f64).abs()).max(0.0);
            }
            for (o, f) in out.iter_mut().zip(s.feature(i)) {
                *o += w * f;
            }
        }
        out
    }

    #[test]
    fn exact_at_stored_positions() {
        let s = random_sparse(1, 6, 3, 0.4);
        for i in 0..s.len() {
            let p = s.position(i);
            let q = [p[0] as f64, p[1] as f64, p[2] as f64];
            assert_eq!(trilinear_sample_sparse(&s, q).unwrap(), s.feature(i));
        }
    }

    #[test]
    fn cell_center_is_mean_of_corners() {
        let s = random_sparse(2, 4, 2, 1.0);
        let got = trilinear_sample_sparse(&s, [1.5, 0.5, 2.5]).unwrap();
        let mut mean = [0.0; 2];
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let f = s.get([1 + dz, dy, 2 + dx]).unwrap();
                    mean[0] += f[0] / 8.0;
                    mean[1] += f[1] / 8.0;
                }
            }
        }
        assert!((got[0] - mean[0]).abs() < 1e-12 && (got[1] - mean[1]).abs() < 1e-12);
    }

    #[test]
    fn random_queries_match_brute_force() {
        let s = random_sparse(3, 7, 4, 0.5);
        let mut r = rng::seeded(9);
        for _ in 0..1000 {
            let q = [
                r.random::<f64>() * 6.0,
                r.random::<f64>() * 6.0,
                r.random::<f64>() * 6.0,
            ];
            let got = trilinear_sample_sparse(&s, q).unwrap();
            for (g, o) in got.iter().zip(oracle(&s, q)) {
                assert!((g - o).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let s = random_sparse(4, 4, 1, 0.5);
        assert!(trilinear_sample_sparse(&s, [3.01, 0.0, 0.0]).is_err());
        assert!(trilinear_sample_sparse(&s, [0.0, -0.01, 0.0]).is_err());
        assert!(trilinear_sample_sparse(&s, [3.0, 3.0, 3.0]).is_ok());
    }
}
