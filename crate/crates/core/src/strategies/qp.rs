//! Nonnegative quadratic program `min_v 1/2 v'Mv + q'v  s.t. v >= 0`
//! for a symmetric positive semidefinite `M`, solved with a Lawson–Hanson
//! style active-set iteration on the Gram form.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Largest KKT violation, scaled by `max(1, ||q||_inf)`.
    pub kkt_residual: f64,
    pub converged: bool,
}

fn gradient(m: &DMatrix<f64>, q: &[f64], v: &[f64]) -> Vec<f64> {
    (0..q.len())
        .map(|i| q[i] + (0..q.len()).map(|j| m[(i, j)] * v[j]).sum::<f64>())
        .collect()
}

/// Scaled KKT residual: primal feasibility, dual feasibility and
/// complementary slackness.
pub(crate) fn kkt_residual(m: &DMatrix<f64>, q: &[f64], v: &[f64]) -> f64 {
    let grad = gradient(m, q, v);
    let scale = q.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let mut worst = 0.0f64;
    for (vi, gi) in v.iter().zip(&grad) {
        worst = worst.max(-vi).max(-gi);
        if *vi > 0.0 {
            worst = worst.max(gi.abs());
        }
    }
    worst / scale
}

/// Minimiser of the unconstrained problem restricted to `passive`; uses a
/// pseudo-inverse so linearly dependent constraint gradients are handled.
fn solve_passive(m: &DMatrix<f64>, q: &[f64], passive: &[bool]) -> Vec<f64> {
    let idx: Vec<usize> = (0..q.len()).filter(|&i| passive[i]).collect();
    let mut z = vec![0.0; q.len()];
    if idx.is_empty() {
        return z;
    }
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
    let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| -q[i]));
    let sol = match sub.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let pinv = sub
                .pseudo_inverse(1e-12)
                .unwrap_or_else(|_| DMatrix::zeros(idx.len(), idx.len()));
            pinv * rhs
        }
    };
    for (k, &i) in idx.iter().enumerate() {
        z[i] = sol[k];
    }
    z
}

pub fn nonneg_qp(m: &DMatrix<f64>, q: &[f64], max_iter: usize, tol: f64) -> QpSolution {
    let n = q.len();
    assert_eq!(m.nrows(), n, "Gram matrix must be n x n");
    let scale = q.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let enter_tol = tol * scale;
    let mut v = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut iterations = 0;

    'outer: while iterations < max_iter {
        let grad = gradient(m, q, &v);
        let entering = (0..n)
            .filter(|&i| !passive[i] && grad[i] < -enter_tol)
            .min_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = entering else { break };
        passive[j] = true;
        loop {
            iterations += 1;
            let z = solve_passive(m, q, &passive);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                v = z;
                break;
            }
            let mut alpha = 1.0f64;
            for i in (0..n).filter(|&i| passive[i] && z[i] <= 0.0) {
                let denom = v[i] - z[i];
                if denom > 0.0 {
                    alpha = alpha.min(v[i] / denom);
                }
            }
            for i in 0..n {
                v[i] += alpha * (z[i] - v[i]);
                if passive[i] && v[i] <= 1e-15 * scale {
                    passive[i] = false;
                    v[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) || iterations >= max_iter {
                continue 'outer;
            }
        }
    }
    for x in &mut v {
        *x = x.max(0.0);
    }
    let kkt = kkt_residual(m, q, &v);
    QpSolution {
        v,
        iterations,
        kkt_residual: kkt,
        converged: kkt <= 1e-8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_active_constraint() {
        // M = [[1]], q = [-1] -> v = 1
        let m = DMatrix::from_element(1, 1, 1.0);
        let s = nonneg_qp(&m, &[-1.0], 100, 1e-14);
        assert!(s.converged);
        assert!((s.v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_when_gradient_nonnegative() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = nonneg_qp(&m, &[0.3, 0.1], 100, 1e-14);
        assert_eq!(s.v, vec![0.0, 0.0]);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn duplicate_constraints_are_handled() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let s = nonneg_qp(&m, &[-1.0, -1.0], 100, 1e-14);
        assert!(s.converged, "{s:?}");
        assert!((s.v[0] + s.v[1] - 1.0).abs() < 1e-10);
    }
}
