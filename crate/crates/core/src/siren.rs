//! Sinusoidal occupancy network `f_θ: [-1, 1]³ → (0, 1)`.
//!
//! Every layer but the last computes `sin(ω₀ · (h·W + b))`; the last is a
//! linear map followed by the logistic function. Weights are stored as
//! `[fan_in, fan_out]` so a batch of row vectors multiplies from the left.

use alloc::format;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{primitive_forward, ParamVector, Primitive, Shape, Tape, Tensor, Var};

/// Architecture of the occupancy network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    /// Number of linear layers, including input and output layers.
    pub n_linear_layers: usize,
    /// Frequency multiplier of the sine activations.
    pub omega0: f64,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec {
            in_dim: 3,
            hidden_dim: 128,
            n_linear_layers: 7,
            omega0: 30.0,
        }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.n_linear_layers < 2 {
            return Err(Error::contract(format!(
                "invalid network spec {self:?}: need positive widths and at least two layers"
            )));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::contract("omega0 must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every linear layer.
    pub fn layer_widths(&self) -> Vec<(usize, usize)> {
        let n = self.n_linear_layers;
        (0..n)
            .map(|i| {
                let fan_in = if i == 0 { self.in_dim } else { self.hidden_dim };
                let fan_out = if i + 1 == n { 1 } else { self.hidden_dim };
                (fan_in, fan_out)
            })
            .collect()
    }

    /// Closed-form scalar count `q`.
    pub fn param_count(&self) -> usize {
        self.layer_widths().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Stable 64-bit FNV-1a fingerprint, used to match checkpoints to specs.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&(self.in_dim as u64).to_le_bytes());
        feed(&(self.hidden_dim as u64).to_le_bytes());
        feed(&(self.n_linear_layers as u64).to_le_bytes());
        feed(&self.omega0.to_bits().to_le_bytes());
        h
    }
}

/// A network specification together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyNet {
    pub spec: NetSpec,
    pub params: ParamVector,
}

/// Draws first-layer weights from `U(-1/in_dim, 1/in_dim)` and later weights
/// from `U(-√(6/fan_in)/ω₀, √(6/fan_in)/ω₀)`; biases start at zero.
pub fn init_siren(spec: NetSpec, seed: u64) -> Result<OccupancyNet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(2 * spec.n_linear_layers);
    for (i, (fan_in, fan_out)) in spec.layer_widths().into_iter().enumerate() {
        let bound = if i == 0 {
            1.0 / fan_in as f64
        } else {
            math::sqrt(6.0 / fan_in as f64) / spec.omega0
        };
        let dist = Uniform::new_inclusive(-bound, bound);
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| dist.sample(&mut rng))
            .collect();
        entries.push((
            format!("l{i}.weight"),
            Tensor::new(Shape::matrix(fan_in, fan_out), w)?,
        ));
        entries.push((format!("l{i}.bias"), Tensor::zeros(Shape::vector(fan_out))));
    }
    Ok(OccupancyNet {
        spec,
        params: ParamVector::new(entries),
    })
}

/// Parameters of the given spec, all zero.
pub fn zero_params(spec: &NetSpec) -> ParamVector {
    let mut entries = Vec::new();
    for (i, (fan_in, fan_out)) in spec.layer_widths().into_iter().enumerate() {
        entries.push((
            format!("l{i}.weight"),
            Tensor::zeros(Shape::matrix(fan_in, fan_out)),
        ));
        entries.push((format!("l{i}.bias"), Tensor::zeros(Shape::vector(fan_out))));
    }
    ParamVector::new(entries)
}

fn check_layout(spec: &NetSpec, shapes: impl Iterator<Item = Shape>) -> Result<()> {
    let expected: Vec<Shape> = spec
        .layer_widths()
        .into_iter()
        .flat_map(|(i, o)| [Shape::matrix(i, o), Shape::vector(o)])
        .collect();
    let got: Vec<Shape> = shapes.collect();
    if got != expected {
        return Err(Error::contract(format!(
            "parameters do not match network spec: expected {expected:?}, got {got:?}"
        )));
    }
    Ok(())
}

fn check_coords(spec: &NetSpec, coords: Shape) -> Result<()> {
    if coords.rank() != 2 || coords.cols() != spec.in_dim {
        return Err(Error::Dimension {
            op: "siren-forward",
            lhs: coords,
            rhs: Shape::matrix(coords.rows(), spec.in_dim),
        });
    }
    Ok(())
}

/// Recorded forward pass: `coords` is `[N, in_dim]`, the result `[N, 1]`.
pub fn forward<'t>(spec: &NetSpec, params: &[Var<'t>], coords: Var<'t>) -> Result<Var<'t>> {
    check_layout(spec, params.iter().map(Var::shape))?;
    check_coords(spec, coords.shape())?;
    let last = spec.n_linear_layers - 1;
    let mut h = coords;
    for (i, layer) in params.chunks_exact(2).enumerate() {
        let z = h.matmul(layer[0])?.add_row(layer[1])?;
        h = if i == last {
            z.sigmoid()
        } else {
            z.scale(spec.omega0).sin()
        };
    }
    Ok(h)
}

/// Tape-free forward pass. Uses the same primitives in the same order as
/// [`forward`], so results agree bitwise.
pub fn predict(spec: &NetSpec, params: &ParamVector, coords: &Tensor) -> Result<Tensor> {
    check_layout(spec, params.tensors().map(Tensor::shape))?;
    check_coords(spec, coords.shape())?;
    let last = spec.n_linear_layers - 1;
    let tensors: Vec<&Tensor> = params.tensors().collect();
    let mut h = coords.clone();
    for (i, layer) in tensors.chunks_exact(2).enumerate() {
        let mm = primitive_forward(
            &Primitive::MatMul {
                ta: false,
                tb: false,
            },
            &[&h, layer[0]],
        )?;
        let z = primitive_forward(&Primitive::AddRow, &[&mm, layer[1]])?;
        h = if i == last {
            primitive_forward(&Primitive::Sigmoid, &[&z])?
        } else {
            let s = primitive_forward(
                &Primitive::Affine {
                    scale: spec.omega0,
                    shift: 0.0,
                },
                &[&z],
            )?;
            primitive_forward(&Primitive::Sin, &[&s])?
        };
    }
    Ok(h)
}

impl OccupancyNet {
    pub fn new(spec: NetSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        check_layout(&spec, params.tensors().map(Tensor::shape))?;
        Ok(OccupancyNet { spec, params })
    }

    pub fn q(&self) -> usize {
        self.params.numel()
    }

    pub fn predict(&self, coords: &Tensor) -> Result<Tensor> {
        predict(&self.spec, &self.params, coords)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, coords: Var<'t>) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let vars = self.params.to_params(tape);
        let out = forward(&self.spec, &vars, coords)?;
        Ok((out, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny() -> NetSpec {
        NetSpec {
            in_dim: 3,
            hidden_dim: 4,
            n_linear_layers: 2,
            omega0: 30.0,
        }
    }

    #[test]
    fn default_spec_parameter_count_matches_layer_formula() {
        let spec = NetSpec::default();
        let formula = (3 * 128 + 128) + 5 * (128 * 128 + 128) + (128 + 1);
        assert_eq!(formula, 83_201);
        assert_eq!(spec.param_count(), formula);
        let net = init_siren(spec, 0).unwrap();
        assert_eq!(net.q(), formula);
        let widths = spec.layer_widths();
        assert_eq!(widths[0], (3, 128));
        assert!(widths[1..6].iter().all(|&w| w == (128, 128)));
        assert_eq!(widths[6], (128, 1));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_siren(NetSpec::default(), 7).unwrap();
        let b = init_siren(NetSpec::default(), 7).unwrap();
        assert!(a.params.bitwise_eq(&b.params));
        let c = init_siren(NetSpec::default(), 8).unwrap();
        assert!(!a.params.bitwise_eq(&c.params));
    }

    #[test]
    fn init_respects_bounds() {
        let spec = NetSpec::default();
        let net = init_siren(spec, 3).unwrap();
        let e = net.params.entries();
        assert!(e[0].1.data().iter().all(|v| v.abs() <= 1.0 / 3.0));
        let hb = libm::sqrt(6.0 / 128.0) / 30.0;
        for (name, t) in &e[2..] {
            if name.ends_with("weight") {
                assert!(t.data().iter().all(|v| v.abs() <= hb), "{name}");
            } else {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn hidden_weight_mean_is_zero_within_three_standard_errors() {
        // 10⁴ draws from U(-b, b): standard error b/√3/√n.
        let spec = NetSpec::default();
        let net = init_siren(spec, 21).unwrap();
        let w = net.params.entries()[2].1.data();
        let draws = &w[..10_000];
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let b = libm::sqrt(6.0 / 128.0) / 30.0;
        let se = b / libm::sqrt(3.0) / libm::sqrt(draws.len() as f64);
        assert!(mean.abs() < 3.0 * se, "mean {mean:e}, se {se:e}");
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let spec = NetSpec::default();
        let coords = Tensor::matrix(2, 3, vec![0.1, -0.7, 0.3, 1.0, 1.0, -1.0]).unwrap();
        let out = predict(&spec, &zero_params(&spec), &coords).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn wrong_column_count_is_a_dimension_error() {
        let net = init_siren(tiny(), 1).unwrap();
        let coords = Tensor::zeros(Shape::matrix(5, 2));
        assert!(matches!(
            net.predict(&coords).unwrap_err(),
            Error::Dimension {
                op: "siren-forward",
                ..
            }
        ));
    }

    #[test]
    fn tape_and_tape_free_forward_agree_bitwise() {
        let net = init_siren(NetSpec::default(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coords = Tensor::matrix(10, 3, coords).unwrap();
        let tape = Tape::new();
        let (out, _) = net.forward(&tape, tape.constant(coords.clone())).unwrap();
        assert!(out.value().bitwise_eq(&net.predict(&coords).unwrap()));
    }

    #[test]
    fn mean_output_gradient_matches_finite_differences() {
        let spec = tiny();
        let net = init_siren(spec, 9).unwrap();
        let coords = Tensor::matrix(
            4,
            3,
            vec![
                0.1, 0.2, -0.3, -0.5, 0.9, 0.0, 0.7, -0.7, 0.4, -1.0, 0.3, 0.8,
            ],
        )
        .unwrap();
        let tape = Tape::new();
        let (out, vars) = net.forward(&tape, tape.constant(coords.clone())).unwrap();
        let g = tape.grad(out.mean().unwrap(), &vars).unwrap();
        let analytic: Vec<f64> = g.iter().flat_map(|t| t.data().to_vec()).collect();
        let flat = net.params.flatten();
        let f = |p: &[f64]| {
            let params = net.params.unflatten(p).unwrap();
            predict(&spec, &params, &coords).unwrap().sum_all() / 4.0
        };
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += h;
            let mut m = flat.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            num += (fd - analytic[i]) * (fd - analytic[i]);
            den += analytic[i] * analytic[i];
        }
        assert!(libm::sqrt(num / den) < 1e-6);
    }

    #[test]
    fn spec_hash_distinguishes_widths() {
        let a = NetSpec::default();
        let b = NetSpec {
            hidden_dim: 64,
            ..a
        };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), NetSpec::default().hash());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rows_are_independent_and_outputs_bounded(
            seed in 0u64..1000,
            coords in proptest::collection::vec(-1.0f64..1.0, 3 * 6),
            rot in 1usize..6,
        ) {
            let net = init_siren(NetSpec { hidden_dim: 16, n_linear_layers: 4, ..NetSpec::default() }, seed).unwrap();
            let x = Tensor::matrix(6, 3, coords.clone()).unwrap();
            let y = net.predict(&x).unwrap();
            prop_assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
            let mut rows: Vec<[f64; 3]> = coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            rows.rotate_left(rot);
            let permuted: Vec<f64> = rows.iter().flatten().copied().collect();
            let yp = net.predict(&Tensor::matrix(6, 3, permuted).unwrap()).unwrap();
            for i in 0..6 {
                prop_assert_eq!(yp.data()[i].to_bits(), y.data()[(i + rot) % 6].to_bits());
            }
        }
    }
}
