//! Adam with bias correction, plus a row-sparse update for tables where
//! only a batch of rows receives gradient each step.

use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Matrix,
    v: Matrix,
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    slots: Vec<Moments>,
}

impl Adam {
    /// One moment slot per parameter shape.
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            t: 0,
            slots: shapes
                .iter()
                .map(|&(r, c)| Moments {
                    m: Matrix::zeros(r, c),
                    v: Matrix::zeros(r, c),
                })
                .collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Advances the shared step counter; call once before the updates of a step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.t.max(1) as i32;
        (1.0 - self.cfg.beta1.powi(t), 1.0 - self.cfg.beta2.powi(t))
    }

    pub fn update(&mut self, slot: usize, param: &mut Matrix, grad: &Matrix) {
        assert_eq!(param.shape(), grad.shape());
        let (c1, c2) = self.corrections();
        let cfg = self.cfg;
        let s = &mut self.slots[slot];
        assert_eq!(s.m.shape(), param.shape());
        let (m, v) = (s.m.data_mut(), s.v.data_mut());
        for (k, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
            step_one(cfg, c1, c2, p, *g, &mut m[k], &mut v[k]);
        }
    }

    /// Updates only `rows` of `param`; row `k` of `grad` belongs to `rows[k]`.
    /// Moments of the other rows are left untouched.
    pub fn update_rows(&mut self, slot: usize, param: &mut Matrix, rows: &[usize], grad: &Matrix) {
        assert_eq!(grad.rows(), rows.len());
        assert_eq!(grad.cols(), param.cols());
        let (c1, c2) = self.corrections();
        let cfg = self.cfg;
        let s = &mut self.slots[slot];
        let cols = param.cols();
        let (m, v) = (s.m.data_mut(), s.v.data_mut());
        for (k, &r) in rows.iter().enumerate() {
            let g = grad.row(k);
            for (j, p) in param.row_mut(r).iter_mut().enumerate() {
                let at = r * cols + j;
                step_one(cfg, c1, c2, p, g[j], &mut m[at], &mut v[at]);
            }
        }
    }
}

#[inline]
fn step_one(cfg: AdamConfig, c1: f64, c2: f64, p: &mut f64, g: f64, m: &mut f64, v: &mut f64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let mhat = *m / c1;
    let vhat = *v / c2;
    *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
}

/// Scales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(AdamConfig::new(0.1), &[(2, 2)]);
        let mut p = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let before = p.clone();
        for _ in 0..10 {
            adam.begin_step();
            adam.update(0, &mut p, &Matrix::zeros(2, 2));
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(AdamConfig::new(0.01), &[(1, 2)]);
        let mut p = Matrix::from_rows(&[[0.0, 0.0]]);
        adam.begin_step();
        adam.update(0, &mut p, &Matrix::from_rows(&[[3.0, -0.2]]));
        assert!((p.get(0, 0) + 0.01).abs() < 1e-9);
        assert!((p.get(0, 1) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamConfig::new(0.05), &[(1, 3)]);
        let target = [1.0, -2.0, 0.5];
        let mut p = Matrix::zeros(1, 3);
        for _ in 0..2000 {
            let g = Matrix::new(1, 3, p.data().iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect()).unwrap();
            adam.begin_step();
            adam.update(0, &mut p, &g);
        }
        for (x, t) in p.data().iter().zip(&target) {
            assert!((x - t).abs() < 1e-3);
        }
    }

    #[test]
    fn row_update_matches_dense_on_touched_rows() {
        let mut dense = Adam::new(AdamConfig::new(0.02), &[(3, 2)]);
        let mut sparse = Adam::new(AdamConfig::new(0.02), &[(3, 2)]);
        let mut a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut b = a.clone();
        let g_full = Matrix::from_rows(&[[0.0, 0.0], [0.3, -0.1], [0.0, 0.0]]);
        dense.begin_step();
        dense.update(0, &mut a, &g_full);
        sparse.begin_step();
        sparse.update_rows(0, &mut b, &[1], &Matrix::from_rows(&[[0.3, -0.1]]));
        assert_eq!(a, b);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Matrix::from_rows(&[[3.0]]), Matrix::from_rows(&[[4.0]])];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].get(0, 0), 3.0);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].get(0, 0) - 0.6).abs() < 1e-12 && (g[1].get(0, 0) - 0.8).abs() < 1e-12);
    }
}
