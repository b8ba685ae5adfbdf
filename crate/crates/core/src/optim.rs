//! Adam with global-norm gradient clipping over any flat-tensor parameter set.

use serde::{Deserialize, Serialize};

/// A fixed list of flat tensors. Gradients share the parameter type.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn get_flat(&self, idx: usize) -> f64 {
        let mut i = idx;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {idx} out of range");
    }

    fn set_flat(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {idx} out of range");
    }

    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Denominator floor of the relative error, so exactly-zero gradients are
/// compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

/// Central-difference check of `analytic` against `loss` at the given flat
/// indices (all of them when `indices` is `None`).
pub fn finite_difference_check<P: Parameters>(
    params: &P,
    analytic: &P,
    eps: f64,
    indices: Option<&[usize]>,
    loss: impl Fn(&P) -> f64,
) -> GradCheckReport {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..params.num_params()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
    };
    let mut probe = params.clone();
    for &k in idx {
        let orig = params.get_flat(k);
        probe.set_flat(k, orig + eps);
        let up = loss(&probe);
        probe.set_flat(k, orig - eps);
        let down = loss(&probe);
        probe.set_flat(k, orig);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.get_flat(k);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = k;
        }
    }
    report
}

/// Evenly strided parameter indices, at most `max` of them; used by the
/// save-time self-tests so large models stay cheap to check.
pub fn strided_indices(n: usize, max: usize) -> Vec<usize> {
    let stride = n.div_ceil(max.max(1)).max(1);
    (0..n).step_by(stride).collect()
}

/// Sums per-example gradients in slice order, then divides by the count.
pub fn mean_in_order<P: Parameters>(parts: &[P]) -> Option<P> {
    let mut iter = parts.iter();
    let mut acc = iter.next()?.clone();
    for p in iter {
        acc.add_scaled(p, 1.0);
    }
    acc.scale(1.0 / parts.len() as f64);
    Some(acc)
}

pub fn clip_global_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam<P: Parameters> {
    cfg: AdamConfig,
    m: P,
    v: P,
    t: i32,
}

impl<P: Parameters> Adam<P> {
    pub fn new(params: &P, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let g_all = grads.tensors();
        let m_all = self.m.tensors_mut();
        let v_all = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Pair(Vec<f64>, Vec<f64>);

    impl Parameters for Pair {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0, &self.1]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0, &mut self.1]
        }
    }

    #[test]
    fn flat_indexing_spans_tensors() {
        let mut p = Pair(vec![1.0, 2.0], vec![3.0]);
        assert_eq!(p.num_params(), 3);
        assert_eq!(p.get_flat(2), 3.0);
        p.set_flat(1, 9.0);
        assert_eq!(p.flatten(), vec![1.0, 9.0, 3.0]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = Pair(vec![3.0, 4.0], vec![0.0]);
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Pair(vec![2.0, -3.0], vec![1.0]);
        let mut opt = Adam::new(&p, AdamConfig { learning_rate: 0.05, ..Default::default() });
        for _ in 0..2000 {
            let g = p.clone();
            opt.step(&mut p, &g);
        }
        assert!(p.l2_norm() < 1e-3);
    }
}
