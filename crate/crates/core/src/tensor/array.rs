use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Extents of a tensor of rank 0, 1 or 2.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 2],
    rank: u8,
}

impl Shape {
    pub const SCALAR: Shape = Shape {
        dims: [1, 1],
        rank: 0,
    };

    pub const fn vector(n: usize) -> Self {
        Shape {
            dims: [n, 1],
            rank: 1,
        }
    }

    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape {
            dims: [rows, cols],
            rank: 2,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    /// Extents as a slice of length `rank`.
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.rank == 0
    }

    /// Rows of a matrix; `numel` for lower ranks.
    pub fn rows(&self) -> usize {
        match self.rank {
            2 => self.dims[0],
            _ => self.numel(),
        }
    }

    /// Columns of a matrix; 1 for lower ranks.
    pub fn cols(&self) -> usize {
        match self.rank {
            2 => self.dims[1],
            _ => 1,
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rank {
            0 => f.write_str("[]"),
            1 => write!(f, "[{}]", self.dims[0]),
            _ => write!(f, "[{}, {}]", self.dims[0], self.dims[1]),
        }
    }
}

/// Dense row-major array of `f64`. Cloning is cheap: storage is shared and
/// copied on write.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data.as_slice())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::contract(alloc::format!(
                "shape {shape} holds {} values, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Shape::SCALAR, vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::from_parts(Shape::vector(data.len()), data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::matrix(rows, cols), data)
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Self::from_parts(shape, vec![v; shape.numel()])
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Self::from_parts(
            self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Sum of all entries in storage order.
    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.rank() != 2 || sb.rank() != 2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: sa,
            rhs: sb,
        });
    }
    let (m, k) = if ta {
        (sa.cols(), sa.rows())
    } else {
        (sa.rows(), sa.cols())
    };
    let (k2, n) = if tb {
        (sb.cols(), sb.rows())
    } else {
        (sb.rows(), sb.cols())
    };
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: sa,
            rhs: sb,
        });
    }
    if m == 0 || n == 0 || k == 0 {
        return Ok(Tensor::from_parts(Shape::matrix(m, n), vec![0.0; m * n]));
    }
    let mut out: Vec<f64> = Vec::with_capacity(m * n);
    // Row/column strides of the (possibly transposed) logical operands.
    let (rsa, csa) = if ta {
        (1, sa.cols() as isize)
    } else {
        (sa.cols() as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, sb.cols() as isize)
    } else {
        (sb.cols() as isize, 1)
    };
    // SAFETY: the pointers cover m·k, k·n and m·n elements with the strides
    // computed above, `out` does not alias the inputs, and with beta = 0 the
    // kernel writes every element of `out` without reading it.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
        out.set_len(m * n);
    }
    Ok(Tensor::from_parts(Shape::matrix(m, n), out))
}

/// `x[n, m] + b[m]` broadcast over rows.
pub(crate) fn add_row(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sx, sb) = (x.shape(), b.shape());
    if sx.rank() != 2 || sb.rank() != 1 || sb.numel() != sx.cols() {
        return Err(Error::Dimension {
            op: "broadcast-add",
            lhs: sx,
            rhs: sb,
        });
    }
    let cols = sx.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(cols) {
        for (o, &bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(Tensor::from_parts(sx, out))
}

/// Column sums of a matrix: `[n, m] -> [m]`.
pub(crate) fn sum_rows(x: &Tensor) -> Result<Tensor> {
    let sx = x.shape();
    if sx.rank() != 2 {
        return Err(Error::Dimension {
            op: "sum-rows",
            lhs: sx,
            rhs: Shape::SCALAR,
        });
    }
    let cols = sx.cols();
    let mut out = vec![0.0; cols];
    for row in x.data().chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::from_parts(Shape::vector(cols), out))
}

/// Repeats a vector `[m]` as `rows` identical rows.
pub(crate) fn broadcast_rows(b: &Tensor, rows: usize) -> Result<Tensor> {
    let sb = b.shape();
    if sb.rank() != 1 {
        return Err(Error::Dimension {
            op: "broadcast-rows",
            lhs: sb,
            rhs: Shape::matrix(rows, sb.numel()),
        });
    }
    let mut out = Vec::with_capacity(rows * sb.numel());
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    Ok(Tensor::from_parts(Shape::matrix(rows, sb.numel()), out))
}

pub(crate) fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_of_ones_gives_row_sums() {
        let a = Tensor::full(Shape::matrix(2, 3), 1.0);
        let b = Tensor::full(Shape::matrix(3, 1), 1.0);
        let c = matmul(&a, &b, false, false).unwrap();
        assert_eq!(c.shape(), Shape::matrix(2, 1));
        assert_eq!(c.data(), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_transposes_agree_with_explicit_transpose() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let at = Tensor::matrix(3, 2, vec![1., 4., 2., 5., 3., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![1., -1., 0.5, 2., -3., 1.]).unwrap();
        let bt = Tensor::matrix(2, 3, vec![1., 0.5, -3., -1., 2., 1.]).unwrap();
        let ref_ = matmul(&a, &b, false, false).unwrap();
        assert_eq!(matmul(&at, &b, true, false).unwrap(), ref_);
        assert_eq!(matmul(&a, &bt, false, true).unwrap(), ref_);
        assert_eq!(matmul(&at, &bt, true, true).unwrap(), ref_);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(Shape::matrix(2, 3));
        let b = Tensor::zeros(Shape::matrix(2, 3));
        let err = matmul(&a, &b, false, false).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "matmul", .. }));
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(Shape::matrix(2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn row_broadcast_and_sum_are_adjoint() {
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let x = broadcast_rows(&b, 4).unwrap();
        let s = sum_rows(&x).unwrap();
        assert_eq!(s.data(), &[4.0, 8.0, 12.0]);
        let y = add_row(&Tensor::zeros(Shape::matrix(4, 3)), &b).unwrap();
        assert_eq!(x, y);
    }
}
