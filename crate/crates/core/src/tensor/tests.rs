use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

fn norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    let scale = libm::sqrt(na.max(nb));
    if scale == 0.0 {
        libm::sqrt(diff)
    } else {
        libm::sqrt(diff) / scale
    }
}

/// Scalar probe `Σ p(x) ⊙ w` evaluated without a tape.
fn probe(p: &Primitive, inputs: &[Tensor], w: &Tensor) -> f64 {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let y = primitive_forward(p, &refs).unwrap();
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Central differences of `probe` with respect to every input element.
fn fd_grad(p: &Primitive, inputs: &[Tensor], w: &Tensor, h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].numel());
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            g.push((probe(p, &plus, w) - probe(p, &minus, w)) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

fn tape_probe<'t>(tape: &'t Tape, p: &Primitive, vars: &[Var<'t>], w: &Tensor) -> Var<'t> {
    let y = match (p, vars) {
        (
            Primitive::MatMul {
                ta: false,
                tb: false,
            },
            [a, b],
        ) => a.matmul(*b).unwrap(),
        (Primitive::Add, [a, b]) => a.add(*b).unwrap(),
        (Primitive::Sub, [a, b]) => a.sub(*b).unwrap(),
        (Primitive::Mul, [a, b]) => a.mul(*b).unwrap(),
        (Primitive::Div, [a, b]) => a.div(*b).unwrap(),
        (Primitive::AddRow, [a, b]) => a.add_row(*b).unwrap(),
        (Primitive::SumRows, [a]) => a.sum_rows().unwrap(),
        (Primitive::Affine { scale, shift }, [a]) => a.affine(*scale, *shift),
        (Primitive::Sin, [a]) => a.sin(),
        (Primitive::Cos, [a]) => a.cos(),
        (Primitive::Sigmoid, [a]) => a.sigmoid(),
        (Primitive::Log, [a]) => a.ln(),
        (Primitive::Square, [a]) => a.square(),
        (Primitive::Sum, [a]) => a.sum(),
        (Primitive::Mean, [a]) => a.mean().unwrap(),
        (Primitive::Clamp { lo, hi }, [a]) => a.clamp(*lo, *hi),
        _ => unreachable!("probe not wired for {p:?}"),
    };
    let wv = tape.constant(w.clone());
    y.mul(wv).unwrap().sum()
}

struct Case {
    op: Primitive,
    shapes: Vec<Shape>,
    range: (f64, f64),
}

fn cases() -> Vec<Case> {
    let m = Shape::matrix(4, 3);
    let v = Shape::vector(3);
    let r = (-2.0, 2.0);
    let pos = (0.5, 3.0);
    vec![
        Case {
            op: Primitive::MatMul {
                ta: false,
                tb: false,
            },
            shapes: vec![Shape::matrix(4, 3), Shape::matrix(3, 2)],
            range: r,
        },
        Case {
            op: Primitive::Add,
            shapes: vec![m, m],
            range: r,
        },
        Case {
            op: Primitive::Sub,
            shapes: vec![m, m],
            range: r,
        },
        Case {
            op: Primitive::Mul,
            shapes: vec![m, m],
            range: r,
        },
        Case {
            op: Primitive::Div,
            shapes: vec![m, m],
            range: pos,
        },
        Case {
            op: Primitive::AddRow,
            shapes: vec![m, v],
            range: r,
        },
        Case {
            op: Primitive::SumRows,
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Affine {
                scale: -1.7,
                shift: 0.3,
            },
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Sin,
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Cos,
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Sigmoid,
            shapes: vec![m],
            range: (-4.0, 4.0),
        },
        Case {
            op: Primitive::Log,
            shapes: vec![m],
            range: pos,
        },
        Case {
            op: Primitive::Square,
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Sum,
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Mean,
            shapes: vec![m],
            range: r,
        },
        Case {
            op: Primitive::Clamp { lo: -1.0, hi: 1.0 },
            shapes: vec![m],
            range: r,
        },
    ]
}

fn output_shape(p: &Primitive, inputs: &[Tensor]) -> Shape {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    primitive_forward(p, &refs).unwrap().shape()
}

/// Keeps clamp inputs away from the kinks where central differences straddle
/// two branches.
fn admissible(p: &Primitive, inputs: &[Tensor], h: f64) -> bool {
    match p {
        Primitive::Clamp { lo, hi } => inputs[0]
            .data()
            .iter()
            .all(|v| (v - lo).abs() > 10.0 * h && (v - hi).abs() > 10.0 * h),
        _ => true,
    }
}

#[test]
fn every_primitive_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    for case in cases() {
        let mut trials = 0;
        while trials < 100 {
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|&s| random(&mut rng, s, case.range.0, case.range.1))
                .collect();
            if !admissible(&case.op, &inputs, h) {
                continue;
            }
            trials += 1;
            let w = random(&mut rng, output_shape(&case.op, &inputs), -1.0, 1.0);
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let loss = tape_probe(&tape, &case.op, &vars, &w);
            let grads = tape.grad(loss, &vars).unwrap();
            let fd = fd_grad(&case.op, &inputs, &w, h);
            for (g, f) in grads.iter().zip(&fd) {
                let err = norm_rel_err(g.data(), f);
                assert!(err < 1e-6, "{}: relative error {err:e}", case.op.name());
            }
        }
    }
}

#[test]
fn every_primitive_has_correct_second_derivatives() {
    // Hessian-vector products through `grad_graph` against central
    // differences of the first-order gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-5;
    for case in cases() {
        let mut trials = 0;
        while trials < 20 {
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|&s| random(&mut rng, s, case.range.0, case.range.1))
                .collect();
            if !admissible(&case.op, &inputs, 100.0 * h) {
                continue;
            }
            trials += 1;
            let w = random(&mut rng, output_shape(&case.op, &inputs), -1.0, 1.0);
            // Squaring the probe makes linear primitives have a nonzero Hessian.
            let dirs: Vec<Tensor> = inputs
                .iter()
                .map(|t| random(&mut rng, t.shape(), -1.0, 1.0))
                .collect();
            let grad_at = |xs: &[Tensor]| -> Vec<Tensor> {
                let tape = Tape::new();
                let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
                let l = tape_probe(&tape, &case.op, &vars, &w).square();
                tape.grad(l, &vars).unwrap()
            };
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let l = tape_probe(&tape, &case.op, &vars, &w).square();
            let g = tape.grad_graph(l, &vars).unwrap();
            let mut gv = None;
            for (gi, d) in g.iter().zip(&dirs) {
                let term = gi.mul(tape.constant(d.clone())).unwrap().sum();
                gv = Some(match gv {
                    None => term,
                    Some(acc) => term.add(acc).unwrap(),
                });
            }
            let hv = tape.grad(gv.unwrap(), &vars).unwrap();

            let shifted = |sign: f64| -> Vec<Tensor> {
                inputs
                    .iter()
                    .zip(&dirs)
                    .map(|(x, d)| x.zip(d, |a, b| a + sign * h * b))
                    .collect()
            };
            let gp = grad_at(&shifted(1.0));
            let gm = grad_at(&shifted(-1.0));
            for k in 0..inputs.len() {
                let fd: Vec<f64> = gp[k]
                    .data()
                    .iter()
                    .zip(gm[k].data())
                    .map(|(a, b)| (a - b) / (2.0 * h))
                    .collect();
                let err = norm_rel_err(hv[k].data(), &fd);
                assert!(err < 1e-6, "{}: relative error {err:e}", case.op.name());
            }
        }
    }
}

#[test]
fn sin_and_sigmoid_at_zero() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0));
    assert_eq!(x.sin().value().item(), 0.0);
    assert_eq!(x.sigmoid().value().item(), 0.5);
    let g = tape.grad(x.sin(), &[x]).unwrap();
    assert_eq!(g[0].item(), 1.0);
}

#[test]
fn second_derivative_of_cube() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let cube = x.mul(x).unwrap().mul(x).unwrap();
    let dx = tape.grad_graph(cube, &[x]).unwrap();
    assert_eq!(dx[0].value().item(), 12.0);
    let d2x = tape.grad(dx[0], &[x]).unwrap();
    assert!((d2x[0].item() - 12.0).abs() < 1e-12);
}

#[test]
fn second_derivative_of_sin() {
    for &x0 in &[-1.3, 0.2, 0.9, 2.5] {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(x0));
        let d = tape.grad_graph(x.sin(), &[x]).unwrap();
        let d2 = tape.grad(d[0], &[x]).unwrap()[0].item();
        let exact = -libm::sin(x0);
        assert!((d2 - exact).abs() <= 1e-6 * exact.abs().max(1e-12));
    }
}

#[test]
fn third_order_through_nested_graphs() {
    // d³/dx³ of x⁴ at x = 1.5 is 24x = 36.
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(1.5));
    let x4 = x.square().square();
    let d1 = tape.grad_graph(x4, &[x]).unwrap()[0];
    let d2 = tape.grad_graph(d1, &[x]).unwrap()[0];
    let d3 = tape.grad(d2, &[x]).unwrap()[0].item();
    assert!((d3 - 36.0).abs() < 1e-9);
}

#[test]
fn linear_layer_gradient_matches_finite_differences() {
    // ∂/∂W Σ (W·x)² for a random 4×3 W.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w0 = random(&mut rng, Shape::matrix(4, 3), -1.0, 1.0);
    let x0 = random(&mut rng, Shape::matrix(3, 1), -1.0, 1.0);
    let f = |w: &Tensor| -> f64 {
        let tape = Tape::new();
        let y = tape
            .constant(w.clone())
            .matmul(tape.constant(x0.clone()))
            .unwrap();
        y.square().sum().value().item()
    };
    let tape = Tape::new();
    let w = tape.param(w0.clone());
    let loss = w.matmul(tape.constant(x0.clone())).unwrap().square().sum();
    let g = tape.grad(loss, &[w]).unwrap().remove(0);
    let h = 1e-6;
    let fd: Vec<f64> = (0..w0.numel())
        .map(|i| {
            let mut p = w0.clone();
            p.data_mut()[i] += h;
            let mut m = w0.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect();
    assert!(norm_rel_err(g.data(), &fd) < 1e-6);
}

#[test]
fn gradient_is_linear_over_independent_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a0 = random(&mut rng, Shape::matrix(5, 4), -1.0, 1.0);
    let tape = Tape::new();
    let a = tape.param(a0);
    let t1 = a.sin().sum();
    let t2 = a.square().mean().unwrap();
    let g1 = tape.grad(t1, &[a]).unwrap().remove(0);
    let g2 = tape.grad(t2, &[a]).unwrap().remove(0);
    let g12 = tape.grad(t1.add(t2).unwrap(), &[a]).unwrap().remove(0);
    let summed: Vec<f64> = g1
        .data()
        .iter()
        .zip(g2.data())
        .map(|(x, y)| x + y)
        .collect();
    assert!(norm_rel_err(g12.data(), &summed) < 1e-14);
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let tape = Tape::new();
    let a = tape.param(Tensor::full(Shape::vector(3), 1.0));
    let b = tape.param(Tensor::full(Shape::matrix(2, 2), 1.0));
    let loss = a.square().sum();
    let g = tape.grad(loss, &[a, b]).unwrap();
    assert_eq!(g[1], Tensor::zeros(Shape::matrix(2, 2)));
    let gg = tape.grad_graph(loss, &[b]).unwrap();
    assert_eq!(gg[0].value(), Tensor::zeros(Shape::matrix(2, 2)));
}

#[test]
fn constants_contribute_no_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let c = tape.constant(Tensor::scalar(5.0));
    let y = x.mul(c).unwrap().add(c.square()).unwrap();
    let g = tape.grad(y, &[x]).unwrap();
    assert_eq!(g[0].item(), 5.0);
    let d = x.detach();
    let z = d.mul(x).unwrap();
    assert_eq!(tape.grad(z, &[x]).unwrap()[0].item(), 3.0);
}

#[test]
fn non_scalar_output_is_a_contract_error() {
    let tape = Tape::new();
    let x = tape.param(Tensor::full(Shape::vector(2), 1.0));
    let err = tape.grad(x.sin(), &[x]).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.param(Tensor::zeros(Shape::matrix(2, 3)));
    let b = tape.param(Tensor::zeros(Shape::matrix(2, 2)));
    match a.add(b).unwrap_err() {
        Error::Dimension { op, lhs, rhs } => {
            assert_eq!(op, "add");
            assert_eq!(lhs, Shape::matrix(2, 3));
            assert_eq!(rhs, Shape::matrix(2, 2));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        a.matmul(b).unwrap_err(),
        Error::Dimension { op: "matmul", .. }
    ));
}

#[test]
fn tape_replays_bit_exactly_and_stays_topological() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random(&mut rng, Shape::matrix(3, 8), -1.0, 1.0);
    let x = random(&mut rng, Shape::matrix(16, 3), -1.0, 1.0);
    let b = random(&mut rng, Shape::vector(8), -1.0, 1.0);
    fn build<'t>(tape: &'t Tape, w: &Tensor, x: &Tensor, b: &Tensor) -> Var<'t> {
        let (wv, bv) = (tape.param(w.clone()), tape.param(b.clone()));
        let h = tape
            .constant(x.clone())
            .matmul(wv)
            .unwrap()
            .add_row(bv)
            .unwrap()
            .scale(30.0)
            .sin();
        let loss = h.sigmoid().clamp(1e-7, 1.0 - 1e-7).ln().mean().unwrap();
        let g = tape.grad_graph(loss, &[wv, bv]).unwrap();
        g[0].square().sum().add(g[1].square().sum()).unwrap()
    }
    let t1 = Tape::new();
    let l1 = build(&t1, &w, &x, &b);
    let t2 = Tape::new();
    let l2 = build(&t2, &w, &x, &b);
    assert!(l1.value().bitwise_eq(&l2.value()));
    assert_eq!(t1.verify_replay(), None);
    assert!(t1.is_topological());
}
