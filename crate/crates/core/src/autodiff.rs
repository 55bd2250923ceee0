//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records operations in construction order, which is already a
//! topological order, so the backward pass is a single reverse sweep.
//! Log-determinant and positive-definite solve are differentiated through
//! their closed-form adjoints rather than through the Cholesky internals.

use thiserror::Error;

use crate::linalg::{cholesky, Cholesky, JitterPolicy, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("backward requires a 1x1 root, got {0}x{1}")]
    NonScalarRoot(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// `aᵀ b`
    TMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `x + 1·b` with `b` a single row broadcast over rows.
    AddRow(Var, Var),
    /// `x ∘ (1·g)` with `g` a single row broadcast over rows.
    MulRow(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SumSquares(Var),
    Sum(Var),
    Trace(Var),
    DotConst(Var, Matrix),
    LogDetPd {
        a: Var,
        inverse: Matrix,
    },
    SolvePd {
        a: Var,
        b: Var,
        chol: Cholesky,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Operation record for one forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    jitter: JitterPolicy,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_jitter(jitter: JitterPolicy) -> Self {
        Self {
            nodes: Vec::new(),
            jitter,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn t_matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).t_matmul(self.value(b));
        self.push(v, Op::TMatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row expects a single row");
        assert_eq!(rv.cols(), xv.cols(), "add_row width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "mul_row expects a single row");
        assert_eq!(rv.cols(), xv.cols(), "mul_row width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, g) in out.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o *= g;
            }
        }
        self.push(out, Op::MulRow(x, row))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise normalization to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let (xhat, inv_std) = layer_norm_forward(self.value(x), eps);
        self.push(
            xhat.clone(),
            Op::LayerNorm {
                x,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hstack(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// `‖a‖²_F` as a 1x1 node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).frobenius_sq());
        self.push(v, Op::SumSquares(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn trace(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).trace());
        self.push(v, Op::Trace(a))
    }

    /// `Σ a ∘ k` for a constant `k`. Seeds an externally computed upstream
    /// gradient `k` into the graph.
    pub fn dot_const(&mut self, a: Var, k: Matrix) -> Var {
        assert_eq!(self.value(a).shape(), k.shape(), "dot_const shape mismatch");
        let s: f64 = self
            .value(a)
            .as_slice()
            .iter()
            .zip(k.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        self.push(Matrix::scalar(s), Op::DotConst(a, k))
    }

    /// `log |A|` for symmetric positive-definite `A`.
    pub fn logdet_pd(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let chol = cholesky(self.value(a), &self.jitter)?;
        let v = Matrix::scalar(chol.logdet());
        let inverse = chol.inverse();
        Ok(self.push(v, Op::LogDetPd { a, inverse }))
    }

    /// `A⁻¹ B` for symmetric positive-definite `A`.
    pub fn solve_pd(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let chol = cholesky(self.value(a), &self.jitter)?;
        let x = chol.solve(self.value(b))?;
        Ok(self.push(x, Op::SolvePd { a, b, chol }))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let root_val = self.value(root);
        if root_val.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarRoot(root_val.rows(), root_val.cols()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::TMatMul(a, b) => {
                    // out = aᵀ b: ga = b gᵀ, gb = a g
                    let ga = self.value(*b).matmul_t(&g);
                    let gb = self.value(*a).matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *x, g);
                }
                Op::MulRow(x, row) => {
                    let xv = self.value(*x);
                    let rv = self.value(*row);
                    let grow = column_sums(&g.hadamard(xv));
                    let mut gx = g;
                    for r in 0..gx.rows() {
                        for (o, s) in gx.row_mut(r).iter_mut().zip(rv.as_slice()) {
                            *o *= s;
                        }
                    }
                    accumulate(&mut grads, *row, grow);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let gx = g.zip_with(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, gx);
                }
                Op::Tanh(a) => {
                    let gx = g.zip_with(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    accumulate(&mut grads, *x, layer_norm_backward(&g, xhat, inv_std));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.item();
                    accumulate(&mut grads, *a, self.value(*a).scale(s));
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Trace(a) => {
                    let n = self.value(*a).rows();
                    accumulate(&mut grads, *a, Matrix::scaled_identity(n, g.item()));
                }
                Op::DotConst(a, k) => accumulate(&mut grads, *a, k.scale(g.item())),
                Op::LogDetPd { a, inverse } => {
                    // ∂ log|A| / ∂A = A⁻ᵀ = A⁻¹ for symmetric A
                    accumulate(&mut grads, *a, inverse.scale(g.item()));
                }
                Op::SolvePd { a, b, chol } => {
                    // X = A⁻¹B: gB = A⁻ᵀ gX, gA = -gB Xᵀ
                    let gb = chol.solve(&g)?;
                    let ga = gb.matmul_t(&node.value).scale(-1.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

/// Row-wise `(x - mean) / sqrt(var + eps)`. A constant row maps to zeros.
pub fn layer_norm_forward(x: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let d = x.cols() as f64;
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

fn layer_norm_backward(g: &Matrix, xhat: &Matrix, inv_std: &[f64]) -> Matrix {
    let d = g.cols() as f64;
    let mut out = Matrix::zeros(g.rows(), g.cols());
    for r in 0..g.rows() {
        let gr = g.row(r);
        let xr = xhat.row(r);
        let sum_g: f64 = gr.iter().sum();
        let sum_gx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
        let is = inv_std[r];
        for ((o, gv), xv) in out.row_mut(r).iter_mut().zip(gr).zip(xr) {
            *o = is / d * (d * gv - sum_g - xv * sum_gx);
        }
    }
    out
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a leaf, `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, zeros of the given shape when unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

/// Compares an analytic gradient against central finite differences.
///
/// `f` returns the value and analytic gradient at a parameter vector. Returns
/// `max_i |g_i - fd_i| / (|fd_i| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, theta: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(theta);
    assert_eq!(analytic.len(), theta.len(), "gradient length mismatch");
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let (fp, _) = f(&probe);
        probe[i] = theta[i] - step;
        let (fm, _) = f(&probe);
        probe[i] = theta[i];
        let fd = (fp - fm) / (2.0 * step);
        worst = worst.max((analytic[i] - fd).abs() / (fd.abs() + 1e-8));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::identity(2));
        let xtx = t.t_matmul(x, x);
        let root = t.trace(xtx);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get(x).unwrap(), &Matrix::scaled_identity(2, 2.0));
    }

    #[test]
    fn logdet_gradient_is_inverse() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::diag(&[2.0, 4.0]));
        let root = t.logdet_pd(x).unwrap();
        let g = t.backward(root).unwrap();
        assert!(g.get(x).unwrap().max_abs_diff(&Matrix::diag(&[0.5, 0.25])) < 1e-15);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::identity(2));
        assert_eq!(t.backward(x).unwrap_err(), AutodiffError::NonScalarRoot(2, 2));
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::identity(2));
        let y = t.leaf(Matrix::identity(2));
        let root = t.sum_squares(x);
        let g = t.backward(root).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.get_or_zeros(y, (2, 2)), Matrix::zeros(2, 2));
    }

    #[test]
    fn frobenius_penalty_gradient_is_two_c() {
        let c = Matrix::from_rows(&[&[1.5, -2.0, 0.25], &[3.0, 0.0, -1.0]]);
        let mut t = Tape::new();
        let x = t.leaf(c.clone());
        let root = t.sum_squares(x);
        let g = t.backward(root).unwrap();
        assert_eq!(g.get(x).unwrap(), &c.scale(2.0));
    }

    #[test]
    fn half_norm_fd_check() {
        let theta = [0.3, -1.2, 4.0, 0.0];
        let err = finite_diff_check(
            |th| {
                let v = 0.5 * th.iter().map(|x| x * x).sum::<f64>();
                (v, th.to_vec())
            },
            &theta,
            1e-5,
        );
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn constant_fd_check() {
        let err = finite_diff_check(|_| (3.0, vec![0.0; 3]), &[1.0, 2.0, 3.0], 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn layer_norm_rows() {
        let x = Matrix::from_rows(&[&[1.0, 2.0, 3.0, 10.0], &[5.0, 5.0, 5.0, 5.0]]);
        let (y, _) = layer_norm_forward(&x, 1e-5);
        let row = y.row(0);
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
        assert!(y.row(1).iter().all(|v| *v == 0.0));
    }

    /// Smooth composite touching every op; compared against central differences.
    #[test]
    fn composite_graph_matches_finite_differences() {
        let n = 4;
        let d = 3;
        let base: Vec<f64> = (0..n * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let y = Matrix::from_vec(n, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.7, 1.1, -2.2]);
        let eval = |theta: &[f64], want_grad: bool| {
            let mut t = Tape::new();
            let c = t.leaf(Matrix::from_vec(n, d, theta.to_vec()));
            let gain = t.constant(Matrix::row_vector(&[1.0, 0.5, 2.0]));
            let bias = t.constant(Matrix::row_vector(&[0.1, -0.2, 0.3]));
            let ln = t.layer_norm(c, 1e-5);
            let h = t.mul_row(ln, gain);
            let h = t.add_row(h, bias);
            let h = t.tanh(h);
            let cat = t.concat_cols(&[h, c]);
            let ctc = t.t_matmul(cat, cat);
            let xi = t.constant(Matrix::identity(2 * d));
            let xi_post = t.add(ctc, xi);
            let yv = t.constant(y.clone());
            let rhs = t.t_matmul(cat, yv);
            let m = t.solve_pd(xi_post, rhs).unwrap();
            let quad = t.t_matmul(rhs, m);
            let om = t.constant(Matrix::scaled_identity(2, 3.0));
            let omp = t.add(om, quad);
            let ld1 = t.logdet_pd(xi_post).unwrap();
            let ld2 = t.logdet_pd(omp).unwrap();
            let mt = t.transpose(m);
            let tr = t.matmul(mt, m);
            let tr = t.trace(tr);
            let s1 = t.add(ld1, ld2);
            let s1 = t.scale(s1, 0.7);
            let root = t.sub(s1, tr);
            let value = t.value(root).item();
            let grad = if want_grad {
                t.backward(root).unwrap().get(c).unwrap().as_slice().to_vec()
            } else {
                Vec::new()
            };
            (value, grad)
        };
        let err = finite_diff_check(
            |th| {
                let (v, g) = eval(th, true);
                (v, g)
            },
            &base,
            1e-5,
        );
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn repeated_backward_is_bitwise_identical() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]));
        let b = t.leaf(Matrix::column_vector(&[1.0, -1.0]));
        let x = t.solve_pd(a, b).unwrap();
        let root = t.sum_squares(x);
        let g1 = t.backward(root).unwrap();
        let g2 = t.backward(root).unwrap();
        assert_eq!(g1.get(a), g2.get(a));
        assert_eq!(g1.get(b), g2.get(b));
    }
}
