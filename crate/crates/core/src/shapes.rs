//! Procedural families of closed binary shapes.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::volume::VolumeGrid;

/// Attempts per shape before generation gives up.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    EllipsoidUnion,
    Superquadric,
    TorusBlend,
}

impl Family {
    pub const ALL: [Family; 3] = [
        Family::EllipsoidUnion,
        Family::Superquadric,
        Family::TorusBlend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::EllipsoidUnion => "ellipsoid-union",
            Family::Superquadric => "superquadric",
            Family::TorusBlend => "torus-blend",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of a shape family. Lengths are fractions of half the smallest
/// grid extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilySpec {
    pub family: Family,
    /// Inclusive range of primitives per shape.
    pub k_components: (usize, usize),
    /// Principal radius (major radius for tori).
    pub size: (f64, f64),
    /// Ratio of the secondary radii to the principal one.
    pub aspect: (f64, f64),
    /// Maximum distance of a primitive centre from the grid centre.
    pub offset: f64,
    pub rotate: bool,
    /// Squareness exponents of superquadrics.
    pub exponent: (f64, f64),
    /// Tube radius of tori, relative to the major radius.
    pub tube: (f64, f64),
    /// Smooth-union width in voxels (torus-blend only).
    pub blend: f64,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub seed: u64,
}

impl FamilySpec {
    pub fn new(family: Family, dims: [usize; 3], seed: u64) -> Self {
        let base = FamilySpec {
            family,
            k_components: (1, 3),
            size: (0.45, 0.75),
            aspect: (0.6, 1.0),
            offset: 0.2,
            rotate: true,
            exponent: (0.4, 1.6),
            tube: (0.3, 0.5),
            blend: 2.0,
            dims,
            spacing_mm: [1.0; 3],
            seed,
        };
        match family {
            Family::EllipsoidUnion => FamilySpec {
                offset: 0.35,
                ..base
            },
            Family::Superquadric => FamilySpec {
                k_components: (1, 2),
                size: (0.5, 0.8),
                ..base
            },
            Family::TorusBlend => FamilySpec {
                k_components: (1, 2),
                size: (0.5, 0.7),
                aspect: (0.7, 1.0),
                tube: (0.35, 0.5),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |(lo, hi): (f64, f64), name: &str| {
            if lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi {
                Ok(())
            } else {
                Err(Error::contract(alloc::format!(
                    "invalid {name} range ({lo}, {hi})"
                )))
            }
        };
        if self.k_components.0 == 0 || self.k_components.0 > self.k_components.1 {
            return Err(Error::contract("invalid k_components range"));
        }
        range(self.size, "size")?;
        range(self.aspect, "aspect")?;
        range(self.exponent, "exponent")?;
        range(self.tube, "tube")?;
        if !(self.offset >= 0.0 && self.offset.is_finite())
            || !(self.blend >= 0.0 && self.blend.is_finite())
        {
            return Err(Error::contract("offset and blend must be non-negative"));
        }
        VolumeGrid::zeros(self.dims, self.spacing_mm).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimitiveKind {
    Ellipsoid { radii: [f64; 3] },
    Superquadric { radii: [f64; 3], e1: f64, e2: f64 },
    Torus { major: f64, minor: f64 },
}

/// A primitive placed in voxel-index space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Rows are the primitive's local axes in grid coordinates.
    pub rotation: [[f64; 3]; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Primitive {
    /// Approximate signed distance in voxels, negative inside.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        let r = &self.rotation;
        let q = [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ];
        match self.kind {
            PrimitiveKind::Ellipsoid { radii } => {
                let sq = |a: usize| (q[a] / radii[a]) * (q[a] / radii[a]);
                let s = sq(0) + sq(1) + sq(2);
                (math::sqrt(s) - 1.0) * min3(radii)
            }
            PrimitiveKind::Superquadric { radii, e1, e2 } => {
                let a = |v: f64, r: f64, e: f64| math::pow((v / r).abs(), 2.0 / e);
                let xy = math::pow(a(q[0], radii[0], e2) + a(q[1], radii[1], e2), e2 / e1);
                let f = xy + a(q[2], radii[2], e1);
                (math::pow(f, e1 / 2.0) - 1.0) * min3(radii)
            }
            PrimitiveKind::Torus { major, minor } => {
                let ring = math::sqrt(q[0] * q[0] + q[1] * q[1]) - major;
                math::sqrt(ring * ring + q[2] * q[2]) - minor
            }
        }
    }
}

fn min3(r: [f64; 3]) -> f64 {
    r[0].min(r[1]).min(r[2])
}

/// Polynomial smooth minimum; plain `min` when `k` is zero.
fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

/// Rasterizes the union of `prims` at voxel centres (index coordinates).
pub fn voxelize(
    prims: &[Primitive],
    blend: f64,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
) -> Result<VolumeGrid> {
    let mut grid = VolumeGrid::zeros(dims, spacing_mm)?;
    for flat in 0..grid.len() {
        let [i, j, k] = grid.unflat_index(flat);
        let p = [i as f64, j as f64, k as f64];
        let mut d = f64::INFINITY;
        for prim in prims {
            let di = prim.distance(p);
            d = if d.is_finite() {
                smooth_min(d, di, blend)
            } else {
                di
            };
        }
        if d <= 0.0 {
            grid.values_mut()[flat] = 1.0;
        }
    }
    Ok(grid)
}

/// Uniformly random rotation (from a unit quaternion).
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = 2.0 * core::f64::consts::PI;
    let (a, b) = (math::sqrt(1.0 - u1), math::sqrt(u1));
    let (w, x, y, z) = (
        a * math::sin(tau * u2),
        a * math::cos(tau * u2),
        b * math::sin(tau * u3),
        b * math::cos(tau * u3),
    );
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws the primitives of one candidate shape.
pub fn sample_primitives<R: Rng + ?Sized>(spec: &FamilySpec, rng: &mut R) -> Vec<Primitive> {
    let half = spec.dims.iter().copied().min().unwrap_or(1) as f64 / 2.0;
    let mid = spec.dims.map(|n| (n as f64 - 1.0) / 2.0);
    let k = rng.gen_range(spec.k_components.0..=spec.k_components.1);
    (0..k)
        .map(|c| {
            let center = mid.map(|m| m + uniform(rng, (-1.0, 1.0)) * spec.offset * half);
            let rotation = if spec.rotate {
                random_rotation(rng)
            } else {
                IDENTITY
            };
            let major = uniform(rng, spec.size) * half;
            let radii = [
                major,
                major * uniform(rng, spec.aspect),
                major * uniform(rng, spec.aspect),
            ];
            let kind = match spec.family {
                Family::EllipsoidUnion => PrimitiveKind::Ellipsoid { radii },
                Family::Superquadric => PrimitiveKind::Superquadric {
                    radii,
                    e1: uniform(rng, spec.exponent),
                    e2: uniform(rng, spec.exponent),
                },
                // One torus, blended with ellipsoidal lobes.
                Family::TorusBlend if c == 0 => PrimitiveKind::Torus {
                    major,
                    minor: major * uniform(rng, spec.tube),
                },
                Family::TorusBlend => PrimitiveKind::Ellipsoid {
                    radii: radii.map(|r| r * 0.6),
                },
            };
            Primitive {
                kind,
                center,
                rotation,
            }
        })
        .collect()
}

fn acceptable(g: &VolumeGrid) -> bool {
    let f = g.foreground_fraction();
    (0.02..=0.60).contains(&f) && !g.touches_boundary()
}

/// Generates shape `index` of the family from its own random stream, so any
/// shape can be regenerated without the others.
pub fn generate_shape(spec: &FamilySpec, index: usize) -> Result<VolumeGrid> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let blend = if spec.family == Family::TorusBlend {
        spec.blend
    } else {
        0.0
    };
    for _ in 0..MAX_ATTEMPTS {
        let prims = sample_primitives(spec, &mut rng);
        let g = voxelize(&prims, blend, spec.dims, spec.spacing_mm)?;
        if acceptable(&g) {
            return Ok(g);
        }
    }
    Err(Error::Generation {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

/// `n` closed, nonempty shapes of the family.
pub fn generate_family(spec: &FamilySpec, n: usize) -> Result<Vec<VolumeGrid>> {
    if n == 0 {
        return Err(Error::contract("a family needs at least one shape"));
    }
    (0..n).map(|i| generate_shape(spec, i)).collect()
}
