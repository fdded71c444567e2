//! Matrix-valued reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every input id is smaller than
//! the node using it and a single reverse sweep is a valid topological
//! traversal. Row operands (`1×n`) broadcast over every row of the left
//! operand.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::entropy::symbol_bits;
use crate::linalg::Matrix;
use crate::refinement::shrink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Softplus(Var),
    SoftThreshold(Var, Var),
    SteRound(Var, Var),
    SumAbs(Var),
    Sum(Var),
    GaussianBits {
        x: Var,
        mean: Var,
        log_scale: Var,
        step: Var,
    },
    Schedule {
        log_base: Var,
        alpha: Var,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zero-filled to `shape` if absent.
    pub fn take_or_zero(&mut self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::new(a.rows(), a.cols(), data).expect("shape preserved")
}

fn map(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix::new(a.rows(), a.cols(), a.data().iter().map(|x| f(*x)).collect()).expect("shape preserved")
}

fn row_map(a: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(row.shape(), (1, a.cols()), "row operand shape mismatch");
    let r = row.data();
    let mut out = a.clone();
    for i in 0..a.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(r) {
            *v = f(*v, *b);
        }
    }
    out
}

fn column_sums(a: &Matrix) -> Matrix {
    let mut s = vec![0.0; a.cols()];
    for r in a.row_iter() {
        for (acc, v) in s.iter_mut().zip(r) {
            *acc += v;
        }
    }
    Matrix::new(1, a.cols(), s).expect("row shape")
}

fn scalar(v: f64) -> Matrix {
    Matrix::new(1, 1, vec![v]).expect("1x1")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// The single entry of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(Op::MatMulNt(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = row_map(self.value(a), self.value(row), |x, r| x + r);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        let v = row_map(self.value(a), self.value(row), |x, r| x - r);
        self.push(Op::SubRow(a, row), v)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = row_map(self.value(a), self.value(row), |x, r| x * r);
        self.push(Op::MulRow(a, row), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = map(self.value(a), |x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = map(self.value(a), libm::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = map(self.value(a), softplus);
        self.push(Op::Softplus(a), v)
    }

    /// `sign(z)·max(|z| − τ, 0)` with a per-column threshold row.
    pub fn soft_threshold(&mut self, z: Var, tau: Var) -> Var {
        let v = row_map(self.value(z), self.value(tau), shrink);
        self.push(Op::SoftThreshold(z, tau), v)
    }

    /// `round(x/Δ)·Δ` forward, identity backward for `x`.
    pub fn ste_round(&mut self, x: Var, step: Var) -> Var {
        let v = row_map(self.value(x), self.value(step), |x, s| (x / s).round() * s);
        self.push(Op::SteRound(x, step), v)
    }

    pub fn sum_abs(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).data().iter().map(|x| x.abs()).sum());
        self.push(Op::SumAbs(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v)
    }

    /// Total Gaussian-interval bits of every entry of `x`, column `j` using
    /// `(mean_j, exp(log_scale_j), step_j)`.
    pub fn gaussian_bits(&mut self, x: Var, mean: Var, log_scale: Var, step: Var) -> Var {
        let xv = self.value(x);
        let (mu, ls, st) = (
            self.value(mean).data(),
            self.value(log_scale).data(),
            self.value(step).data(),
        );
        assert!(mu.len() == xv.cols() && ls.len() == xv.cols() && st.len() == xv.cols());
        let mut total = 0.0;
        for r in xv.row_iter() {
            for j in 0..r.len() {
                total += symbol_bits(r[j], mu[j], libm::exp(ls[j]), st[j]).bits;
            }
        }
        self.push(
            Op::GaussianBits {
                x,
                mean,
                log_scale,
                step,
            },
            scalar(total),
        )
    }

    /// Row `exp(log_base + α·i)` for `i = 0..n`; both inputs `1×1`.
    pub fn schedule(&mut self, log_base: Var, alpha: Var, n: usize) -> Var {
        let (lb, a) = (self.scalar(log_base), self.scalar(alpha));
        let v = Matrix::new(1, n, (0..n).map(|i| libm::exp(lb + a * i as f64)).collect()).expect("row");
        self.push(Op::Schedule { log_base, alpha }, v)
    }

    /// Hash of every piecewise branch taken in the forward pass. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (k, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::SumAbs(a) => {
                    k.hash(&mut h);
                    for x in self.value(a).data() {
                        (x.partial_cmp(&0.0)).hash(&mut h);
                    }
                }
                Op::SoftThreshold(z, tau) => {
                    k.hash(&mut h);
                    let t = self.value(tau).data();
                    for r in self.value(z).row_iter() {
                        for (x, t) in r.iter().zip(t) {
                            let branch: i8 = if *x > *t {
                                1
                            } else if *x < -*t {
                                -1
                            } else {
                                0
                            };
                            branch.hash(&mut h);
                        }
                    }
                }
                Op::SteRound(x, step) => {
                    k.hash(&mut h);
                    let s = self.value(step).data();
                    for r in self.value(x).row_iter() {
                        for (x, s) in r.iter().zip(s) {
                            ((x / s).round() as i64).hash(&mut h);
                        }
                    }
                }
                Op::GaussianBits {
                    x,
                    mean,
                    log_scale,
                    step,
                } => {
                    k.hash(&mut h);
                    let (mu, ls, st) = (
                        self.value(mean).data(),
                        self.value(log_scale).data(),
                        self.value(step).data(),
                    );
                    for r in self.value(x).row_iter() {
                        for j in 0..r.len() {
                            let g = symbol_bits(r[j], mu[j], libm::exp(ls[j]), st[j]);
                            (g.d_value == 0.0 && g.d_step == 0.0).hash(&mut h);
                        }
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from the `1×1` node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(scalar(1.0));
        for k in (0..=root.0).rev() {
            let node = &self.nodes[k];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.data_mut().iter_mut().zip(d.data()) {
                        *e += x;
                    }
                }
                slot => *slot = Some(d),
            };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(a, g.matmul_nt(self.value(b)));
                    acc(b, self.value(a).matmul_tn(&g));
                }
                Op::MatMulNt(a, b) => {
                    acc(a, g.matmul(self.value(b)));
                    acc(b, g.matmul_tn(self.value(a)));
                }
                Op::Add(a, b) => {
                    acc(a, g.clone());
                    acc(b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(b, g.scale(-1.0));
                    acc(a, g.clone());
                }
                Op::AddRow(a, row) => {
                    acc(row, column_sums(&g));
                    acc(a, g.clone());
                }
                Op::SubRow(a, row) => {
                    acc(row, column_sums(&g).scale(-1.0));
                    acc(a, g.clone());
                }
                Op::MulRow(a, row) => {
                    acc(row, column_sums(&zip_map(&g, self.value(a), |d, x| d * x)));
                    acc(a, row_map(&g, self.value(row), |d, r| d * r));
                }
                Op::Scale(a, c) => acc(a, g.scale(c)),
                Op::Exp(a) => acc(a, zip_map(&g, &node.value, |d, y| d * y)),
                Op::Softplus(a) => acc(a, zip_map(&g, self.value(a), |d, x| d * sigmoid(x))),
                Op::SoftThreshold(z, tau) => {
                    let zv = self.value(z);
                    let t = self.value(tau);
                    let pass = row_map(zv, t, |x, t| if x > t || x < -t { 1.0 } else { 0.0 });
                    let dz = zip_map(&g, &pass, |d, p| d * p);
                    let signed = zip_map(&dz, zv, |d, x| -d * x.signum());
                    acc(tau, column_sums(&signed));
                    acc(z, dz);
                }
                Op::SteRound(x, step) => {
                    let frac = row_map(self.value(x), self.value(step), |x, s| (x / s).round() - x / s);
                    acc(step, column_sums(&zip_map(&g, &frac, |d, f| d * f)));
                    acc(x, g.clone());
                }
                Op::SumAbs(a) => {
                    let d = g.data()[0];
                    acc(a, map(self.value(a), |x| if x == 0.0 { 0.0 } else { d * x.signum() }));
                }
                Op::Sum(a) => {
                    let d = g.data()[0];
                    let shape = self.value(a).shape();
                    acc(a, Matrix::from_fn(shape.0, shape.1, |_, _| d));
                }
                Op::GaussianBits {
                    x,
                    mean,
                    log_scale,
                    step,
                } => {
                    let d = g.data()[0];
                    let xv = self.value(x);
                    let (mu, ls, st) = (
                        self.value(mean).data(),
                        self.value(log_scale).data(),
                        self.value(step).data(),
                    );
                    let n = xv.cols();
                    let mut dx = Matrix::zeros(xv.rows(), n);
                    let (mut dmu, mut dls, mut dst) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for i in 0..xv.rows() {
                        let r = xv.row(i);
                        for j in 0..n {
                            let b = symbol_bits(r[j], mu[j], libm::exp(ls[j]), st[j]);
                            dx.set(i, j, d * b.d_value);
                            dmu[j] += d * b.d_mean;
                            dls[j] += d * b.d_log_scale;
                            dst[j] += d * b.d_step;
                        }
                    }
                    let row = |v: Vec<f64>| Matrix::new(1, n, v).expect("row");
                    acc(x, dx);
                    acc(mean, row(dmu));
                    acc(log_scale, row(dls));
                    acc(step, row(dst));
                }
                Op::Schedule { log_base, alpha } => {
                    let y = node.value.data();
                    let d_base: f64 = g.data().iter().zip(y).map(|(d, y)| d * y).sum();
                    let d_alpha: f64 = g
                        .data()
                        .iter()
                        .zip(y)
                        .enumerate()
                        .map(|(i, (d, y))| d * y * i as f64)
                        .sum();
                    acc(log_base, scalar(d_base));
                    acc(alpha, scalar(d_alpha));
                }
            }
        }
        Gradients { grads }
    }
}
