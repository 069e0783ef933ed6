//! Globally adaptive composite Gauss-Legendre quadrature.
//!
//! Each panel carries a 64-node estimate over the whole panel and over its
//! two halves; the panel with the largest discrepancy is halved until the
//! summed discrepancy of every component falls under `rel_tol` times the
//! integral of its absolute value.

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::sync::OnceLock;

use crate::error::{FhError, Result};

pub const NODES: usize = 64;

/// Nodes and weights on `[-1, 1]`.
pub fn gauss_legendre_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(NODES))
}

fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[derive(Debug, Clone)]
pub struct Integral {
    pub values: Vec<f64>,
    pub abs_values: Vec<f64>,
    /// Summed per-component discrepancy between panel and half-panel rules.
    pub error: Vec<f64>,
    pub panels: usize,
}

struct Panel {
    lo: f64,
    hi: f64,
    /// Half-panel estimate (the more accurate one).
    value: Vec<f64>,
    abs_value: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    error: Vec<f64>,
    priority: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn gl<F: Fn(f64, &mut [f64])>(f: &F, lo: f64, hi: f64, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre_rule();
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = vec![0.0; dim];
    let mut acc_abs = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for (x, w) in nodes.iter().zip(weights) {
        f(mid + half * x, &mut buf);
        for j in 0..dim {
            let v = if buf[j].is_finite() { buf[j] } else { 0.0 };
            acc[j] += w * v;
            acc_abs[j] += w * v.abs();
        }
    }
    for j in 0..dim {
        acc[j] *= half;
        acc_abs[j] *= half;
    }
    (acc, acc_abs)
}

fn make_panel<F: Fn(f64, &mut [f64])>(
    f: &F,
    lo: f64,
    hi: f64,
    whole: Vec<f64>,
    dim: usize,
    scale: &[f64],
) -> Panel {
    let mid = 0.5 * (lo + hi);
    let (left, left_abs) = gl(f, lo, mid, dim);
    let (right, right_abs) = gl(f, mid, hi, dim);
    let value: Vec<f64> = (0..dim).map(|j| left[j] + right[j]).collect();
    let abs_value: Vec<f64> = (0..dim).map(|j| left_abs[j] + right_abs[j]).collect();
    let error: Vec<f64> = (0..dim).map(|j| (value[j] - whole[j]).abs()).collect();
    let priority = (0..dim)
        .map(|j| error[j] / scale[j])
        .fold(0.0, f64::max);
    Panel {
        lo,
        hi,
        value,
        abs_value,
        left,
        right,
        error,
        priority,
    }
}

/// Integrates a vector-valued `f` over `[lo, hi]`.
///
/// `f(x, out)` writes `dim` components into `out`; non-finite values are
/// treated as zero (they only arise at underflowing tails).
pub fn integrate<F: Fn(f64, &mut [f64])>(
    f: F,
    lo: f64,
    hi: f64,
    dim: usize,
    rel_tol: f64,
    max_panels: usize,
) -> Result<Integral> {
    const INITIAL: usize = 8;
    let width = (hi - lo) / INITIAL as f64;
    let edges: Vec<(f64, f64)> = (0..INITIAL)
        .map(|i| {
            let a = lo + width * i as f64;
            let b = if i == INITIAL - 1 { hi } else { lo + width * (i + 1) as f64 };
            (a, b)
        })
        .collect();
    let wholes: Vec<(Vec<f64>, Vec<f64>)> = edges.iter().map(|&(a, b)| gl(&f, a, b, dim)).collect();
    let mut scale = vec![0.0; dim];
    for (_, abs) in &wholes {
        for j in 0..dim {
            scale[j] += abs[j];
        }
    }
    for s in &mut scale {
        if !(*s > 0.0) {
            *s = f64::MIN_POSITIVE;
        }
    }
    let mut heap: BinaryHeap<Panel> = edges
        .iter()
        .zip(wholes)
        .map(|(&(a, b), (whole, _))| make_panel(&f, a, b, whole, dim, &scale))
        .collect();

    loop {
        let mut total_abs = vec![0.0; dim];
        let mut err = vec![0.0; dim];
        for p in heap.iter() {
            for j in 0..dim {
                total_abs[j] += p.abs_value[j];
                err[j] += p.error[j];
            }
        }
        let converged = (0..dim).all(|j| err[j] <= rel_tol * total_abs[j] || total_abs[j] == 0.0);
        if converged {
            // sum in position order so the result does not depend on heap layout
            let mut panels: Vec<Panel> = heap.into_vec();
            panels.sort_by(|a, b| a.lo.total_cmp(&b.lo));
            let mut values = vec![0.0; dim];
            for p in &panels {
                for j in 0..dim {
                    values[j] += p.value[j];
                }
            }
            return Ok(Integral {
                values,
                abs_values: total_abs,
                error: err,
                panels: panels.len(),
            });
        }
        if heap.len() >= max_panels {
            let worst = (0..dim)
                .map(|j| err[j] / total_abs[j].max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            return Err(FhError::QuadratureNotConverged {
                panels: heap.len(),
                error: worst,
            });
        }
        let p = heap.pop().expect("non-empty panel set");
        let mid = 0.5 * (p.lo + p.hi);
        if !(mid > p.lo && mid < p.hi) {
            // cannot split further; accept as is
            let mut p = p;
            p.priority = 0.0;
            p.error.iter_mut().for_each(|e| *e = 0.0);
            heap.push(p);
            continue;
        }
        heap.push(make_panel(&f, p.lo, mid, p.left, dim, &scale));
        heap.push(make_panel(&f, mid, p.hi, p.right, dim, &scale));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre_rule();
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let m: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(126)).sum();
        assert_relative_eq!(m, 2.0 / 127.0, max_relative = 1e-12);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn smooth_integrand() {
        let r = integrate(|x, out| out[0] = x.exp(), 0.0, 1.0, 1, 1e-12, 100).unwrap();
        assert_relative_eq!(r.values[0], std::f64::consts::E - 1.0, epsilon = 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫₀¹ x^{-1/2} dx = 2, ∫₀¹ x^{1/2} dx = 2/3
        let r = integrate(
            |x, out| {
                out[0] = x.powf(-0.5);
                out[1] = x.sqrt();
            },
            0.0,
            1.0,
            2,
            1e-10,
            2000,
        )
        .unwrap();
        assert_relative_eq!(r.values[0], 2.0, max_relative = 1e-9);
        assert_relative_eq!(r.values[1], 2.0 / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn sharp_peak() {
        let s = 1e-3;
        let r = integrate(
            |x, out| out[0] = (-(x - 0.3f64).powi(2) / (2.0 * s * s)).exp(),
            0.0,
            1.0,
            1,
            1e-10,
            1000,
        )
        .unwrap();
        assert_relative_eq!(r.values[0], s * (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn budget_exhaustion() {
        let r = integrate(|x, out| out[0] = (1.0 / x).sin() / x, 0.0, 1.0, 1, 1e-14, 10);
        assert!(matches!(r, Err(FhError::QuadratureNotConverged { .. })));
    }
}
