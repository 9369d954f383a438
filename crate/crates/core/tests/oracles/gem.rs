//! GEM projection against brute-force active-set enumeration.
//!
//! For `min 1/2 ||h - g||^2 s.t. <h, m_k> >= 0`, the optimum is the
//! equality-constrained projection onto some active subset. Enumerating
//! every subset and keeping the closest feasible candidate recovers it.

#![allow(dead_code)]

use kwscl_core::seed::rng_for;
use kwscl_core::strategies::gem_project;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Projection of `g` onto `{h : <h, m> = 0 for m in active}`.
fn project_onto(g: &[f64], active: &[&Vec<f64>]) -> Option<Vec<f64>> {
    if active.is_empty() {
        return Some(g.to_vec());
    }
    let gram: Vec<Vec<f64>> = active
        .iter()
        .map(|a| active.iter().map(|b| dot(a, b)).collect())
        .collect();
    let rhs: Vec<f64> = active.iter().map(|m| dot(m, g)).collect();
    let w = solve(gram, rhs)?;
    let mut h = g.to_vec();
    for (m, wi) in active.iter().zip(&w) {
        for (hj, mj) in h.iter_mut().zip(m.iter()) {
            *hj -= wi * mj;
        }
    }
    Some(h)
}

fn brute_force(g: &[f64], memories: &[Vec<f64>]) -> Vec<f64> {
    let k = memories.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let active: Vec<&Vec<f64>> = (0..k)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &memories[i])
            .collect();
        let Some(h) = project_onto(g, &active) else {
            continue;
        };
        if memories.iter().any(|m| dot(&h, m) < -1e-9) {
            continue;
        }
        let dist: f64 = h.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, h));
        }
    }
    best.expect("the full active set is always feasible").1
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn projection_matches_brute_force_on_200_instances() {
    let mut rng = rng_for(2024, "gem-oracle");
    let mut projected = 0;
    for case in 0..200 {
        let dim = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=4usize.min(dim));
        let g = gaussian(&mut rng, dim);
        let memories: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut rng, dim)).collect();

        let out = gem_project(&g, &memories).unwrap();
        assert!(out.converged, "case {case}: solver did not converge");
        for m in &memories {
            assert!(
                dot(&out.grad, m) >= -1e-9,
                "case {case}: infeasible by {}",
                dot(&out.grad, m)
            );
        }
        let oracle = brute_force(&g, &memories);
        let err = out
            .grad
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-7, "case {case}: differs from oracle by {err}");

        if memories.iter().all(|m| dot(&g, m) >= 0.0) {
            assert!(!out.projected);
            assert_eq!(
                out.grad.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                g.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                "case {case}: satisfied constraints must leave g bitwise unchanged"
            );
        } else {
            projected += 1;
        }
    }
    // The fixture must exercise the projection path, not only the no-op.
    assert!(
        projected >= 50,
        "only {projected} instances needed projection"
    );
}

pub fn hand_examples() {
    // Orthogonal memory: already satisfied.
    let out = gem_project(&[1.0, 0.0], &[vec![0.0, 1.0]]).unwrap();
    assert_eq!(out.grad, vec![1.0, 0.0]);
    assert!(!out.projected);

    // Single violated constraint: remove the offending component.
    let out = gem_project(&[1.0, -1.0], &[vec![0.0, 1.0]]).unwrap();
    assert!(out.projected);
    assert!((out.grad[0] - 1.0).abs() < 1e-12 && out.grad[1].abs() < 1e-12);

    // Duplicated constraint rows are linearly dependent; the projection is unchanged.
    let out = gem_project(&[1.0, -1.0], &[vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap();
    assert!((out.grad[0] - 1.0).abs() < 1e-9 && out.grad[1].abs() < 1e-9);
}
