//! Overlap and surface-distance metrics on binary voxel masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Shape;
use crate::volume::VolumeGrid;

/// Metrics of one reconstruction against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub dsc: f64,
    /// `None` when either surface is empty.
    pub asd_mm: Option<f64>,
}

fn dims_shape(g: &VolumeGrid) -> Shape {
    let [nx, ny, nz] = g.dims();
    Shape::matrix(nx * ny, nz)
}

fn check_dims(op: &'static str, a: &VolumeGrid, b: &VolumeGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension {
            op,
            lhs: dims_shape(a),
            rhs: dims_shape(b),
        });
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dsc_binary(a: &VolumeGrid, b: &VolumeGrid) -> Result<f64> {
    check_dims("dsc", a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x > 0.5, y > 0.5);
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Foreground voxels with a 6-connected background neighbour, out-of-bounds
/// counting as background. Flat indices in ascending order.
pub fn extract_surface(mask: &VolumeGrid) -> Vec<usize> {
    let [nx, ny, nz] = mask.dims();
    let fg = |i: isize, j: isize, k: isize| {
        if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
            return false;
        }
        mask.get([i as usize, j as usize, k as usize]) > 0.5
    };
    let mut out = Vec::new();
    for (flat, &v) in mask.values().iter().enumerate() {
        if v <= 0.5 {
            continue;
        }
        let [i, j, k] = mask.unflat_index(flat);
        let (i, j, k) = (i as isize, j as isize, k as isize);
        let interior = fg(i - 1, j, k)
            && fg(i + 1, j, k)
            && fg(i, j - 1, k)
            && fg(i, j + 1, k)
            && fg(i, j, k - 1)
            && fg(i, j, k + 1);
        if !interior {
            out.push(flat);
        }
    }
    out
}

/// Exact 1-D squared distance transform along one line (lower envelope of
/// parabolas). `f` holds the input cost, `INFINITY` for non-features.
fn edt_line(f: &[f64], weight: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let w2 = weight * weight;
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pf = p as f64;
                    let s = ((fq + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *o = w2 * d * d + f[v[k]];
    }
}

/// Squared anisotropic Euclidean distance (in mm²) from every voxel to the
/// nearest voxel of `features`.
pub fn squared_distance_map(
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    features: &[usize],
) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut d = vec![f64::INFINITY; n];
    for &f in features {
        d[f] = 0.0;
    }
    let strides = [1, nx, nx * ny];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let len = dims[axis];
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        let stride = strides[axis];
        for start in 0..n {
            // Visit each line once, from its first voxel.
            let coord = (start / stride) % len;
            if coord != 0 {
                continue;
            }
            for (t, l) in line.iter_mut().enumerate() {
                *l = d[start + t * stride];
            }
            edt_line(&line, spacing_mm[axis], &mut out, &mut v, &mut z);
            for (t, &o) in out.iter().enumerate() {
                d[start + t * stride] = o;
            }
        }
    }
    d
}

/// Symmetric average surface distance in millimetres.
pub fn asd(a: &VolumeGrid, b: &VolumeGrid) -> Result<f64> {
    check_dims("asd", a, b)?;
    if a.spacing_mm() != b.spacing_mm() {
        return Err(Error::contract("asd needs equal voxel spacing"));
    }
    let sa = extract_surface(a);
    let sb = extract_surface(b);
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::UndefinedMetric(
            "average surface distance of an empty surface",
        ));
    }
    let da = squared_distance_map(a.dims(), a.spacing_mm(), &sa);
    let db = squared_distance_map(a.dims(), a.spacing_mm(), &sb);
    let total: f64 = sa.iter().map(|&p| math::sqrt(db[p])).sum::<f64>()
        + sb.iter().map(|&q| math::sqrt(da[q])).sum::<f64>();
    Ok(total / (sa.len() + sb.len()) as f64)
}

/// DSC and (when defined) ASD of `pred` against `truth`.
pub fn evaluate(pred: &VolumeGrid, truth: &VolumeGrid) -> Result<MetricsRecord> {
    let dsc = dsc_binary(pred, truth)?;
    let asd_mm = match asd(pred, truth) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsRecord { dsc, asd_mm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]]) -> VolumeGrid {
        let mut g = VolumeGrid::zeros(dims, spacing).unwrap();
        for &p in on {
            g.set(p, 1.0);
        }
        g
    }

    fn random_mask(rng: &mut ChaCha8Rng, n: usize, spacing: [f64; 3]) -> VolumeGrid {
        let density = rng.gen_range(0.05..0.5);
        let values = (0..n * n * n)
            .map(|_| (rng.gen::<f64>() < density) as u8 as f64)
            .collect();
        VolumeGrid::new([n; 3], spacing, values).unwrap()
    }

    fn brute_dsc(a: &VolumeGrid, b: &VolumeGrid) -> f64 {
        let mut inter = 0.0;
        let mut total = 0.0;
        for i in 0..a.len() {
            let (x, y) = (a.values()[i], b.values()[i]);
            inter += x * y;
            total += x + y;
        }
        if total == 0.0 {
            1.0
        } else {
            2.0 * inter / total
        }
    }

    fn brute_surface(g: &VolumeGrid) -> Vec<usize> {
        let [nx, ny, nz] = g.dims();
        let offsets: [[isize; 3]; 6] = [
            [1, 0, 0],
            [-1, 0, 0],
            [0, 1, 0],
            [0, -1, 0],
            [0, 0, 1],
            [0, 0, -1],
        ];
        (0..g.len())
            .filter(|&f| {
                let p = g.unflat_index(f);
                g.values()[f] == 1.0
                    && offsets.iter().any(|o| {
                        let q = [
                            p[0] as isize + o[0],
                            p[1] as isize + o[1],
                            p[2] as isize + o[2],
                        ];
                        let inside = q[0] >= 0
                            && q[1] >= 0
                            && q[2] >= 0
                            && (q[0] as usize) < nx
                            && (q[1] as usize) < ny
                            && (q[2] as usize) < nz;
                        !inside || g.get([q[0] as usize, q[1] as usize, q[2] as usize]) == 0.0
                    })
            })
            .collect()
    }

    fn brute_asd(a: &VolumeGrid, b: &VolumeGrid) -> f64 {
        let s = a.spacing_mm();
        let pts = |g: &VolumeGrid| -> Vec<[f64; 3]> {
            brute_surface(g)
                .into_iter()
                .map(|f| {
                    let p = g.unflat_index(f);
                    [p[0] as f64 * s[0], p[1] as f64 * s[1], p[2] as f64 * s[2]]
                })
                .collect()
        };
        let (pa, pb) = (pts(a), pts(b));
        let nearest = |p: &[f64; 3], set: &[[f64; 3]]| {
            set.iter()
                .map(|q| {
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let sum: f64 = pa.iter().map(|p| nearest(p, &pb)).sum::<f64>()
            + pb.iter().map(|q| nearest(q, &pa)).sum::<f64>();
        sum / (pa.len() + pb.len()) as f64
    }

    #[test]
    fn dsc_hand_cases() {
        let d = [4, 4, 4];
        let a = mask(d, [1.0; 3], &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        let b = mask(d, [1.0; 3], &[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 2, 0]]);
        assert_eq!(dsc_binary(&a, &b).unwrap(), 0.5);
        assert_eq!(dsc_binary(&a, &a).unwrap(), 1.0);
        let c = mask(d, [1.0; 3], &[[3, 3, 3]]);
        assert_eq!(dsc_binary(&a, &c).unwrap(), 0.0);
        let empty = VolumeGrid::zeros(d, [1.0; 3]).unwrap();
        assert_eq!(dsc_binary(&empty, &empty).unwrap(), 1.0);
        let other = VolumeGrid::zeros([4, 4, 5], [1.0; 3]).unwrap();
        assert!(matches!(
            dsc_binary(&a, &other),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn surface_cases() {
        let single = mask([5; 3], [1.0; 3], &[[2, 2, 2]]);
        assert_eq!(extract_surface(&single), vec![single.flat_index([2, 2, 2])]);
        let mut cube = Vec::new();
        for k in 1..4 {
            for j in 1..4 {
                for i in 1..4 {
                    cube.push([i, j, k]);
                }
            }
        }
        let cube = mask([5; 3], [1.0; 3], &cube);
        let s = extract_surface(&cube);
        assert_eq!(s.len(), 26);
        assert!(!s.contains(&cube.flat_index([2, 2, 2])));
        assert!(extract_surface(&VolumeGrid::zeros([3; 3], [1.0; 3]).unwrap()).is_empty());
        // A full grid is all boundary on its faces only.
        let full = VolumeGrid::new([3; 3], [1.0; 3], vec![1.0; 27]).unwrap();
        assert_eq!(extract_surface(&full).len(), 26);
    }

    #[test]
    fn asd_hand_cases() {
        let a = mask([8; 3], [1.0; 3], &[[1, 2, 2]]);
        let b = mask([8; 3], [1.0; 3], &[[4, 2, 2]]);
        assert_eq!(asd(&a, &b).unwrap(), 3.0);
        assert_eq!(asd(&a, &a).unwrap(), 0.0);
        let empty = VolumeGrid::zeros([8; 3], [1.0; 3]).unwrap();
        assert!(matches!(asd(&a, &empty), Err(Error::UndefinedMetric(_))));
        let m = evaluate(&a, &empty).unwrap();
        assert_eq!((m.dsc, m.asd_mm), (0.0, None));
    }

    #[test]
    fn metrics_match_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let spacing = if trial % 2 == 0 {
                [1.0; 3]
            } else {
                [
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.5..3.0),
                ]
            };
            let a = random_mask(&mut rng, 12, spacing);
            let b = random_mask(&mut rng, 12, spacing);
            assert_eq!(dsc_binary(&a, &b).unwrap(), brute_dsc(&a, &b));
            assert_eq!(extract_surface(&a), brute_surface(&a));
            let fast = asd(&a, &b).unwrap();
            let slow = brute_asd(&a, &b);
            assert!(
                (fast - slow).abs() < 1e-9,
                "trial {trial}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn distance_map_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = [5, 7, 4];
        let spacing = [0.7, 1.3, 2.1];
        let feats: Vec<usize> = (0..140).filter(|_| rng.gen::<f64>() < 0.1).collect();
        let d = squared_distance_map(dims, spacing, &feats);
        let g = VolumeGrid::zeros(dims, spacing).unwrap();
        for (f, &got) in d.iter().enumerate() {
            let p = g.unflat_index(f);
            let want = feats
                .iter()
                .map(|&q| {
                    let q = g.unflat_index(q);
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * spacing[a]).powi(2))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((got - want).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn dsc_is_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 6, [1.0; 3]);
            let b = random_mask(&mut rng, 6, [1.0; 3]);
            let ab = dsc_binary(&a, &b).unwrap();
            prop_assert_eq!(ab, dsc_binary(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn asd_is_symmetric_and_scales_with_spacing(seed in any::<u64>(), s in 0.25f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 6, [1.0; 3]);
            let b = random_mask(&mut rng, 6, [1.0; 3]);
            prop_assume!(!extract_surface(&a).is_empty() && !extract_surface(&b).is_empty());
            let ab = asd(&a, &b).unwrap();
            prop_assert!((ab - asd(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(ab == 0.0, extract_surface(&a) == extract_surface(&b));
            let scaled = |g: &VolumeGrid| VolumeGrid::new(g.dims(), [s; 3], g.values().to_vec()).unwrap();
            let sab = asd(&scaled(&a), &scaled(&b)).unwrap();
            prop_assert!((sab - s * ab).abs() < 1e-9 * (1.0 + sab));
        }
    }
}
