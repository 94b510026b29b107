//! Scalar transcendental functions that work with and without `std`.
#![allow(clippy::excessive_precision)]

use alloc::vec::Vec;

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn sin_ref(x: f64) -> f64 {
        x.sin()
    }
    #[inline]
    pub fn cos_ref(x: f64) -> f64 {
        x.cos()
    }
    #[inline]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn pow(x: f64, y: f64) -> f64 {
        x.powf(y)
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn sin_ref(x: f64) -> f64 {
        libm::sin(x)
    }
    #[inline]
    pub fn cos_ref(x: f64) -> f64 {
        libm::cos(x)
    }
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn pow(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
}

pub use imp::{exp, ln, pow, sqrt};

// Polynomial kernels on [-pi/4, pi/4] (Cephes coefficients).
const SIN_C: [f64; 6] = [
    1.589_623_015_765_465_680_60e-10,
    -2.505_074_776_285_780_728_66e-8,
    2.755_731_362_138_572_452_13e-6,
    -1.984_126_982_958_953_859_96e-4,
    8.333_333_333_322_118_588_78e-3,
    -1.666_666_666_666_663_072_95e-1,
];
const COS_C: [f64; 6] = [
    -1.135_853_652_138_768_173_00e-11,
    2.087_570_084_197_473_167_78e-9,
    -2.755_731_417_929_673_881_12e-7,
    2.480_158_728_885_170_453_48e-5,
    -1.388_888_888_887_305_641_16e-3,
    4.166_666_666_666_659_292_18e-2,
];
// pi/2 split so that k·PIO2_1 and k·PIO2_2 are exact for moderate k.
const PIO2_1: f64 = 1.570_796_251_296_997_070_31;
const PIO2_2: f64 = 7.549_789_415_861_596_353_36e-8;
const PIO2_3: f64 = 5.390_302_858_158_119_052_90e-15;
const TWO_OVER_PI: f64 = core::f64::consts::FRAC_2_PI;
// Adding this rounds to an integer and leaves it in the low mantissa bits.
const ROUNDER: f64 = 6_755_399_441_055_744.0;
/// Beyond this magnitude the short reduction loses accuracy.
const REDUCE_LIMIT: f64 = 1e5;

#[inline(always)]
fn poly(c: &[f64; 6], z: f64) -> f64 {
    ((((c[0] * z + c[1]) * z + c[2]) * z + c[3]) * z + c[4]) * z + c[5]
}

/// Reduced argument, quadrant and both kernel values.
#[inline(always)]
fn reduce(x: f64) -> (f64, f64, u64) {
    let t = x * TWO_OVER_PI + ROUNDER;
    let q = t.to_bits();
    let k = t - ROUNDER;
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let s = r + r * z * poly(&SIN_C, z);
    let c = 1.0 - 0.5 * z + z * z * poly(&COS_C, z);
    (s, c, q)
}

#[inline(always)]
fn select(q: u64, a: f64, b: f64, negate: u64) -> f64 {
    let v = if q & 1 == 0 { a } else { b };
    f64::from_bits(v.to_bits() ^ (negate << 63))
}

/// Sine, identical on every platform.
#[inline]
pub fn sin(x: f64) -> f64 {
    if x.abs() > REDUCE_LIMIT || !x.is_finite() {
        return imp::sin_ref(x);
    }
    let (s, c, q) = reduce(x);
    select(q, s, c, (q >> 1) & 1)
}

/// Cosine, identical on every platform.
#[inline]
pub fn cos(x: f64) -> f64 {
    if x.abs() > REDUCE_LIMIT || !x.is_finite() {
        return imp::cos_ref(x);
    }
    let (s, c, q) = reduce(x);
    select(q, c, s, ((q + 1) >> 1) & 1)
}

fn in_range(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.abs() <= REDUCE_LIMIT)
}

/// Elementwise sine; bitwise equal to mapping [`sin`].
pub fn sin_vec(xs: &[f64]) -> Vec<f64> {
    if !in_range(xs) {
        return xs.iter().map(|&x| sin(x)).collect();
    }
    xs.iter()
        .map(|&x| {
            let (s, c, q) = reduce(x);
            select(q, s, c, (q >> 1) & 1)
        })
        .collect()
}

/// Elementwise cosine; bitwise equal to mapping [`cos`].
pub fn cos_vec(xs: &[f64]) -> Vec<f64> {
    if !in_range(xs) {
        return xs.iter().map(|&x| cos(x)).collect();
    }
    xs.iter()
        .map(|&x| {
            let (s, c, q) = reduce(x);
            select(q, c, s, ((q + 1) >> 1) & 1)
        })
        .collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sin_cos_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut xs = Vec::new();
        for i in 0..200_000 {
            let scale = [1.0, 10.0, 300.0, 1e4, 2e5][i % 5];
            let x: f64 = rng.gen_range(-scale..scale);
            for (fast, slow) in [(sin(x), imp::sin_ref(x)), (cos(x), imp::cos_ref(x))] {
                assert!(
                    (fast - slow).abs() <= 2.0 * f64::EPSILON,
                    "x={x}: {fast} vs {slow}"
                );
            }
            xs.push(x);
        }
        let (s, c) = (sin_vec(&xs[..1000]), cos_vec(&xs[..1000]));
        for (i, &x) in xs[..1000].iter().enumerate() {
            assert_eq!(s[i].to_bits(), sin(x).to_bits());
            assert_eq!(c[i].to_bits(), cos(x).to_bits());
        }
        assert_eq!(sin(0.0), 0.0);
        assert_eq!(cos(0.0), 1.0);
        assert!(sin(f64::NAN).is_nan() && cos(f64::INFINITY).is_nan());
        assert!((sin(core::f64::consts::PI)).abs() < 1e-15);
    }
}
