//! Small Krylov and fixed-point solvers for complex linear systems given as
//! matrix-free operators.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[derive(Debug, Clone)]
pub struct IterativeOutcome {
    pub solution: Vec<Complex64>,
    pub iterations: usize,
    /// Final residual relative to `‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Restarted GMRES (modified Gram–Schmidt, Givens rotations) for `A x = b`.
pub fn gmres<F>(mut apply: F, b: &[Complex64], x0: Option<&[Complex64]>, tol: f64, restart: usize, max_iter: usize) -> IterativeOutcome
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); n]);
    if bnorm == 0.0 {
        return IterativeOutcome { solution: vec![Complex64::new(0.0, 0.0); n], iterations: 0, residual: 0.0, converged: true };
    }
    let restart = restart.max(1).min(n.max(1));
    let mut total = 0;
    let mut rel;
    loop {
        let ax = apply(&x);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= tol || total >= max_iter {
            break;
        }
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut h = vec![vec![Complex64::new(0.0, 0.0); restart]; restart + 1];
        let mut cs = vec![0.0f64; restart];
        let mut sn = vec![Complex64::new(0.0, 0.0); restart];
        let mut g = vec![Complex64::new(0.0, 0.0); restart + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut used = 0;
        for j in 0..restart {
            let mut w = apply(&basis[j]);
            total += 1;
            for (i, v) in basis.iter().enumerate() {
                let hij = dotc(v, &w);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = Complex64::new(hn, 0.0);
            for i in 0..j {
                let (c, s) = (cs[i], sn[i]);
                let t = c * h[i][j] + s * h[i + 1][j];
                h[i + 1][j] = -s.conj() * h[i][j] + c * h[i + 1][j];
                h[i][j] = t;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            let (c, s) = if denom == 0.0 {
                (1.0, Complex64::new(0.0, 0.0))
            } else if a.norm() == 0.0 {
                (0.0, bb.conj() / bb.norm())
            } else {
                let c = a.norm() / denom;
                (c, (a / a.norm()) * bb.conj() / denom)
            };
            cs[j] = c;
            sn[j] = s;
            h[j][j] = c * a + s * bb;
            h[j + 1][j] = Complex64::new(0.0, 0.0);
            g[j + 1] = -s.conj() * g[j];
            g[j] *= c;
            used = j + 1;
            let est = g[j + 1].norm() / bnorm;
            if est <= tol * 0.5 || total >= max_iter || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|z| z / hn).collect());
        }
        let mut y = vec![Complex64::new(0.0, 0.0); used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for k in i + 1..used {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, vi) in x.iter_mut().zip(&basis[k]) {
                *xi += yk * vi;
            }
        }
    }
    IterativeOutcome { solution: x, iterations: total, residual: rel, converged: rel <= tol }
}

/// Fixed-point iteration `x ← b + K x` (Neumann / Born series).
pub fn neumann_series<F>(mut apply_k: F, b: &[Complex64], tol: f64, max_iter: usize) -> IterativeOutcome
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut x = b.to_vec();
    let mut rel = f64::INFINITY;
    for it in 1..=max_iter {
        let kx = apply_k(&x);
        let next: Vec<Complex64> = b.iter().zip(&kx).map(|(b, k)| b + k).collect();
        let diff = norm(&next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) / bnorm;
        x = next;
        rel = diff;
        if !diff.is_finite() {
            break;
        }
        if diff <= tol {
            return IterativeOutcome { solution: x, iterations: it, residual: rel, converged: true };
        }
    }
    IterativeOutcome { solution: x, iterations: max_iter, residual: rel, converged: false }
}

/// Power-iteration estimate of the spectral radius of `K`.
pub fn spectral_radius_estimate<F>(mut apply_k: F, n: usize, iterations: usize, seed: u64) -> f64
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let mut est = 0.0;
    for _ in 0..iterations {
        let nv = norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        for z in v.iter_mut() {
            *z /= nv;
        }
        let w = apply_k(&v);
        est = norm(&w);
        v = w;
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_apply(a: &[Vec<Complex64>]) -> impl FnMut(&[Complex64]) -> Vec<Complex64> + '_ {
        move |x| a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn test_matrix(n: usize) -> Vec<Vec<Complex64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = if i == j { 4.0 } else { 0.0 };
                        Complex64::new(d + rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 30;
        let a = test_matrix(n);
        let x_true: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0 - i as f64 * 0.3)).collect();
        let b = dense_apply(&a)(&x_true);
        let out = gmres(dense_apply(&a), &b, None, 1e-12, 8, 500);
        assert!(out.converged);
        let err = norm(&out.solution.iter().zip(&x_true).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err < 1e-9 * norm(&x_true), "err {err}");
    }

    #[test]
    fn neumann_matches_direct_for_contraction() {
        let n = 10;
        let k: Vec<Vec<Complex64>> = (0..n)
            .map(|i| (0..n).map(|j| Complex64::new(0.02 * ((i + 2 * j) % 5) as f64, 0.01)).collect())
            .collect();
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, i as f64)).collect();
        let fixed = neumann_series(dense_apply(&k), &b, 1e-14, 200);
        assert!(fixed.converged);
        // (I − K) x = b via GMRES
        let out = gmres(
            |x| {
                let kx = dense_apply(&k)(x);
                x.iter().zip(kx).map(|(a, b)| a - b).collect()
            },
            &b,
            None,
            1e-13,
            20,
            100,
        );
        for (a, b) in fixed.solution.iter().zip(&out.solution) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn neumann_reports_divergence() {
        let k = vec![vec![Complex64::new(1.5, 0.0)]];
        let out = neumann_series(dense_apply(&k), &[Complex64::new(1.0, 0.0)], 1e-10, 50);
        assert!(!out.converged);
        let rho = spectral_radius_estimate(dense_apply(&k), 1, 20, 1);
        assert!((rho - 1.5).abs() < 1e-12);
    }
}
