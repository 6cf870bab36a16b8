//! Many small soft particles: charges `Q_j` from the point-particle linear
//! system, radiation pattern and self-consistent field.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gmres, norm};
use crate::medium::{check_unit, norm3, BackgroundMedium, GreenEvaluator, U0Expansion};
use crate::volume::{dist, free_green};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Largest system solved by dense LU; bigger ones use GMRES.
pub const DENSE_LIMIT: usize = 5000;

/// Condition-number estimate above which the system is rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Capacitance of a sphere of radius `a` under the `1/(4π|x−y|)` kernel.
pub fn sphere_capacitance(a: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::domain(format!("sphere radius must be positive, got {a}")));
    }
    Ok(FOUR_PI * a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: [f64; 3],
    pub radius: f64,
    pub capacitance: f64,
}

impl Particle {
    pub fn sphere(position: [f64; 3], radius: f64) -> Result<Self> {
        Ok(Self { position, radius, capacitance: sphere_capacitance(radius)? })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn new(particles: Vec<Particle>) -> Result<Self> {
        for (i, p) in particles.iter().enumerate() {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(Error::domain(format!("particle {i} has a non-finite position")));
            }
            if !(p.radius > 0.0 && p.radius.is_finite()) {
                return Err(Error::domain(format!("particle {i} has non-positive radius {}", p.radius)));
            }
            if !(p.capacitance > 0.0 && p.capacitance.is_finite()) {
                return Err(Error::domain(format!("particle {i} has non-positive capacitance {}", p.capacitance)));
            }
        }
        let set = Self { particles };
        if let Some((d, i, j)) = set.closest_pair() {
            if d == 0.0 {
                return Err(Error::domain(format!("particles {i} and {j} coincide")));
            }
        }
        Ok(set)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        self.particles.iter().map(|p| p.radius).fold(0.0, f64::max)
    }

    pub fn total_capacitance(&self) -> f64 {
        self.particles.iter().map(|p| p.capacitance).sum()
    }

    /// Smallest pairwise distance and the pair attaining it.
    pub fn closest_pair(&self) -> Option<(f64, usize, usize)> {
        let n = self.particles.len();
        if n < 2 {
            return None;
        }
        // Sort along x and sweep; pairs further apart in x than the current best are skipped.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.particles[a].position[0].total_cmp(&self.particles[b].position[0]));
        let mut best = (f64::INFINITY, 0, 0);
        for (ii, &i) in order.iter().enumerate() {
            let pi = &self.particles[i].position;
            for &j in &order[ii + 1..] {
                let pj = &self.particles[j].position;
                if pj[0] - pi[0] >= best.0 {
                    break;
                }
                let d = dist(pi, pj);
                if d < best.0 {
                    best = (d, i.min(j), i.max(j));
                }
            }
        }
        Some(best)
    }

    /// Same particles moved by `v`.
    pub fn translated(&self, v: &[f64; 3]) -> Self {
        let particles = self
            .particles
            .iter()
            .map(|p| Particle { position: [p.position[0] + v[0], p.position[1] + v[1], p.position[2] + v[2]], ..*p })
            .collect();
        Self { particles }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    pub max_k0a: f64,
    pub min_d_over_a: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { max_k0a: 0.1, min_d_over_a: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub k0a: f64,
    pub ka: f64,
    /// `+∞` when fewer than two particles.
    pub d_over_a: f64,
    pub min_distance: Option<f64>,
    pub closest_pair: Option<(usize, usize)>,
    pub size_ok: bool,
    pub distance_ok: bool,
    pub valid: bool,
}

pub fn regime_check(medium: &BackgroundMedium, particles: &ParticleSet) -> RegimeReport {
    regime_check_with(medium, particles, &RegimeThresholds::default())
}

pub fn regime_check_with(medium: &BackgroundMedium, particles: &ParticleSet, thresholds: &RegimeThresholds) -> RegimeReport {
    let a = particles.max_radius();
    let k0a = medium.k0_max() * a;
    let ka = medium.k() * a;
    let pair = particles.closest_pair();
    let d_over_a = match pair {
        Some((d, _, _)) if a > 0.0 => d / a,
        _ => f64::INFINITY,
    };
    let size_ok = k0a <= thresholds.max_k0a;
    let distance_ok = d_over_a >= thresholds.min_d_over_a;
    RegimeReport {
        k0a,
        ka,
        d_over_a,
        min_distance: pair.map(|p| p.0),
        closest_pair: pair.map(|p| (p.1, p.2)),
        size_ok,
        distance_ok,
        valid: size_ok && distance_ok,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSolution {
    pub charges: Vec<Complex64>,
    pub alpha: [f64; 3],
    /// `‖A Q − b‖ / (‖A‖_F ‖Q‖)`.
    pub residual: f64,
}

enum Solver {
    Empty,
    Dense { lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>, matrix: DMatrix<Complex64> },
    Iterative,
}

/// Assembled point-particle system `(I + diag(C)·G_offdiag) Q = −diag(C)·U₀`
/// for one medium and particle set; solves for any number of incident
/// directions.
pub struct ManyBodySystem {
    medium: BackgroundMedium,
    particles: ParticleSet,
    green: Option<GreenEvaluator>,
    expansions: Vec<U0Expansion>,
    solver: Solver,
    matrix_norm: f64,
    condition: f64,
}

impl std::fmt::Debug for ManyBodySystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManyBodySystem").field("particles", &self.particles.len()).field("condition", &self.condition).finish()
    }
}

impl ManyBodySystem {
    pub fn new(medium: &BackgroundMedium, particles: &ParticleSet) -> Result<Self> {
        let radius = particles.particles().iter().map(|p| norm3(&p.position)).fold(medium.b0(), f64::max);
        let green = if medium.is_vacuum() { None } else { Some(GreenEvaluator::new(medium, radius)?) };
        let expansions = match &green {
            Some(ev) => particles.particles().par_iter().map(|p| ev.u0_expansion(&p.position)).collect(),
            None => Vec::new(),
        };
        let mut sys = Self {
            medium: medium.clone(),
            particles: particles.clone(),
            green,
            expansions,
            solver: Solver::Empty,
            matrix_norm: 0.0,
            condition: 1.0,
        };
        let n = particles.len();
        if n == 0 {
            return Ok(sys);
        }
        if n > DENSE_LIMIT {
            sys.solver = Solver::Iterative;
            return Ok(sys);
        }
        let rows: Vec<Vec<Complex64>> = (0..n).into_par_iter().map(|j| sys.row(j)).collect::<Result<_>>()?;
        let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let matrix_norm = matrix.norm();
        let lu = matrix.clone().lu();
        let pair = particles.closest_pair().map(|p| (p.1, p.2));
        if !lu.is_invertible() {
            return Err(Error::IllConditioned { condition: f64::INFINITY, pair });
        }
        // ‖A‖_F · max ‖A⁻¹v‖/‖v‖ over a few random v.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut inv_norm: f64 = 0.0;
        for _ in 0..4 {
            let v = DVector::from_fn(n, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let x = lu.solve(&v).ok_or(Error::IllConditioned { condition: f64::INFINITY, pair })?;
            inv_norm = inv_norm.max(x.norm() / v.norm());
        }
        let condition = matrix_norm * inv_norm;
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::IllConditioned { condition, pair });
        }
        sys.matrix_norm = matrix_norm;
        sys.condition = condition;
        sys.solver = Solver::Dense { lu, matrix };
        Ok(sys)
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn medium(&self) -> &BackgroundMedium {
        &self.medium
    }

    /// Condition-number estimate of the system matrix (1 for iterative/empty).
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn green(&self, x: &[f64; 3], y: &[f64; 3]) -> Result<Complex64> {
        match &self.green {
            Some(ev) => ev.green(x, y),
            None => {
                let d = dist(x, y);
                if d == 0.0 {
                    return Err(Error::Singular(format!("Green's function at coincident points {x:?}")));
                }
                Ok(free_green(self.medium.k(), d))
            }
        }
    }

    fn row(&self, j: usize) -> Result<Vec<Complex64>> {
        let ps = self.particles.particles();
        let cj = ps[j].capacitance;
        (0..ps.len())
            .map(|m| if m == j { Ok(Complex64::new(1.0, 0.0)) } else { Ok(self.green(&ps[j].position, &ps[m].position)? * cj) })
            .collect()
    }

    /// `U₀(t_m, α)` for particle `m`.
    pub fn u0_at(&self, m: usize, alpha: &[f64; 3]) -> Complex64 {
        if self.green.is_none() {
            let t = &self.particles.particles()[m].position;
            return Complex64::from_polar(1.0, self.medium.k() * (alpha[0] * t[0] + alpha[1] * t[1] + alpha[2] * t[2]));
        }
        self.expansions[m].eval(alpha)
    }

    fn rhs(&self, alpha: &[f64; 3]) -> Vec<Complex64> {
        (0..self.particles.len()).map(|m| -self.u0_at(m, alpha) * self.particles.particles()[m].capacitance).collect()
    }

    fn apply(&self, q: &[Complex64]) -> Vec<Complex64> {
        let ps = self.particles.particles();
        (0..ps.len())
            .into_par_iter()
            .map(|j| {
                let mut acc = q[j];
                for (m, p) in ps.iter().enumerate() {
                    if m != j {
                        acc += self.green(&ps[j].position, &p.position).unwrap_or_default() * ps[j].capacitance * q[m];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn solve(&self, alpha: &[f64; 3]) -> Result<ChargeSolution> {
        check_unit(alpha)?;
        let b = self.rhs(alpha);
        match &self.solver {
            Solver::Empty => Ok(ChargeSolution { charges: Vec::new(), alpha: *alpha, residual: 0.0 }),
            Solver::Dense { lu, matrix } => {
                let bv = DVector::from_vec(b.clone());
                let x = lu
                    .solve(&bv)
                    .ok_or(Error::IllConditioned { condition: f64::INFINITY, pair: self.particles.closest_pair().map(|p| (p.1, p.2)) })?;
                let r = matrix * &x - &bv;
                let xn = x.norm();
                let residual = if xn == 0.0 { r.norm() } else { r.norm() / (self.matrix_norm * xn) };
                Ok(ChargeSolution { charges: x.iter().copied().collect(), alpha: *alpha, residual })
            }
            Solver::Iterative => {
                let out = gmres(|v| self.apply(v), &b, None, 1e-12, 60, 2000);
                if !out.converged {
                    return Err(Error::Divergence { iterations: out.iterations, residual: out.residual, spectral_radius: f64::NAN });
                }
                let residual = out.residual * norm(&b) / norm(&out.solution).max(f64::MIN_POSITIVE);
                Ok(ChargeSolution { charges: out.solution, alpha: *alpha, residual })
            }
        }
    }

    pub fn solve_many(&self, alphas: &[[f64; 3]]) -> Result<Vec<ChargeSolution>> {
        alphas.iter().map(|a| self.solve(a)).collect()
    }

    /// Jacobi iteration `Q ← −C(U₀ + G_offdiag Q)`; converges when the
    /// spectral radius of `diag(C)·G_offdiag` is below one.
    pub fn solve_jacobi(&self, alpha: &[f64; 3], tol: f64, max_iter: usize) -> Result<(ChargeSolution, usize)> {
        check_unit(alpha)?;
        let b = self.rhs(alpha);
        let n = b.len();
        let mut q = b.clone();
        for it in 1..=max_iter {
            let aq = self.apply(&q);
            // A q = q + K q, so K q = A q − q.
            let next: Vec<Complex64> = (0..n).map(|j| b[j] - (aq[j] - q[j])).collect();
            let diff = norm(&next.iter().zip(&q).map(|(a, b)| a - b).collect::<Vec<_>>());
            q = next;
            let scale = norm(&q).max(f64::MIN_POSITIVE);
            if !diff.is_finite() {
                break;
            }
            if diff <= tol * scale {
                return Ok((ChargeSolution { charges: q, alpha: *alpha, residual: diff / scale }, it));
            }
        }
        Err(Error::Divergence { iterations: max_iter, residual: f64::NAN, spectral_radius: f64::NAN })
    }

    fn aq(&self, alpha_out: &[f64; 3], alpha_in: &[f64; 3]) -> Complex64 {
        match &self.green {
            Some(ev) => ev.amplitude(alpha_out, alpha_in),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// `A(α′, α) = A_q(α′, α) + (1/4π) Σ U₀(t_m, −α′) Q_m`.
    pub fn amplitude(&self, charges: &ChargeSolution, alpha_out: &[f64; 3]) -> Complex64 {
        let back = [-alpha_out[0], -alpha_out[1], -alpha_out[2]];
        let s: Complex64 = charges.charges.iter().enumerate().map(|(m, q)| self.u0_at(m, &back) * q).sum();
        self.aq(alpha_out, &charges.alpha) + s / FOUR_PI
    }

    /// Amplitudes `A(α′_i, α_j)`, row-major over outgoing directions.
    pub fn amplitude_table(&self, outgoing: &[[f64; 3]], incoming: &[[f64; 3]]) -> Result<Vec<Complex64>> {
        let sols = self.solve_many(incoming)?;
        let cols: Vec<Vec<Complex64>> =
            sols.par_iter().map(|s| outgoing.iter().map(|o| self.amplitude(s, o)).collect()).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); outgoing.len() * incoming.len()];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                out[i * incoming.len() + j] = *v;
            }
        }
        Ok(out)
    }

    /// Self-consistent field `U₀(x, α) + Σ G(x, t_m) Q_m`, omitting particles
    /// with `|x − t_m| ≤ 2 a_m`.
    pub fn effective_field(&self, charges: &ChargeSolution, x: &[f64; 3]) -> Result<Complex64> {
        let u0 = match &self.green {
            Some(ev) => ev.u0(x, &charges.alpha),
            None => {
                let a = &charges.alpha;
                Complex64::from_polar(1.0, self.medium.k() * (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]))
            }
        };
        let mut s = u0;
        for (p, q) in self.particles.particles().iter().zip(&charges.charges) {
            if dist(x, &p.position) <= 2.0 * p.radius {
                continue;
            }
            s += self.green(x, &p.position)? * q;
        }
        Ok(s)
    }
}

pub fn solve_charges(medium: &BackgroundMedium, particles: &ParticleSet, alpha: &[f64; 3]) -> Result<ChargeSolution> {
    ManyBodySystem::new(medium, particles)?.solve(alpha)
}

pub fn amplitude_discrete(
    medium: &BackgroundMedium,
    particles: &ParticleSet,
    charges: &ChargeSolution,
    alpha_out: &[f64; 3],
) -> Result<Complex64> {
    check_unit(alpha_out)?;
    if charges.charges.len() != particles.len() {
        return Err(Error::domain("charge vector does not match the particle set"));
    }
    let sys = ManyBodySystem {
        medium: medium.clone(),
        particles: particles.clone(),
        green: if medium.is_vacuum() { None } else { Some(GreenEvaluator::new(medium, medium.b0())?) },
        expansions: Vec::new(),
        solver: Solver::Empty,
        matrix_norm: 0.0,
        condition: 1.0,
    };
    let back = [-alpha_out[0], -alpha_out[1], -alpha_out[2]];
    let s: Complex64 = particles
        .particles()
        .iter()
        .zip(&charges.charges)
        .map(|(p, q)| match &sys.green {
            Some(ev) => ev.u0(&p.position, &back) * q,
            None => Complex64::from_polar(1.0, medium.k() * (back[0] * p.position[0] + back[1] * p.position[1] + back[2] * p.position[2])) * q,
        })
        .sum();
    Ok(sys.aq(alpha_out, &charges.alpha) + s / FOUR_PI)
}

pub fn effective_field(
    medium: &BackgroundMedium,
    particles: &ParticleSet,
    charges: &ChargeSolution,
    x: &[f64; 3],
) -> Result<Complex64> {
    if charges.charges.len() != particles.len() {
        return Err(Error::domain("charge vector does not match the particle set"));
    }
    let radius = particles.particles().iter().map(|p| norm3(&p.position)).fold(norm3(x).max(medium.b0()), f64::max);
    let sys = ManyBodySystem {
        medium: medium.clone(),
        particles: particles.clone(),
        green: if medium.is_vacuum() { None } else { Some(GreenEvaluator::new(medium, radius)?) },
        expansions: Vec::new(),
        solver: Solver::Empty,
        matrix_norm: 0.0,
        condition: 1.0,
    };
    sys.effective_field(charges, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vac() -> BackgroundMedium {
        BackgroundMedium::vacuum(1.0, 1.0).unwrap()
    }

    #[test]
    fn capacitance_of_sphere() {
        assert!((sphere_capacitance(0.01).unwrap() - 0.12566371).abs() < 1e-8);
        assert!(sphere_capacitance(0.0).is_err());
    }

    #[test]
    fn regime_examples() {
        let m = BackgroundMedium::homogeneous_ball(1.0, 1.2, 2.0).unwrap();
        let ps = ParticleSet::new(vec![
            Particle::sphere([0.0, 0.0, 0.0], 0.01).unwrap(),
            Particle::sphere([0.5, 0.0, 0.0], 0.01).unwrap(),
        ])
        .unwrap();
        let r = regime_check(&m, &ps);
        assert!((r.k0a - 0.012).abs() < 1e-12 && (r.d_over_a - 50.0).abs() < 1e-9 && r.valid);
        let big = ParticleSet::new(vec![Particle::sphere([0.0; 3], 0.5).unwrap()]).unwrap();
        let r = regime_check(&m, &big);
        assert!((r.k0a - 0.6).abs() < 1e-12 && !r.valid);
        assert!(r.d_over_a.is_infinite() && r.distance_ok);
    }

    #[test]
    fn single_particle_charge() {
        let t = [0.1, -0.2, 0.3];
        let a = 0.01;
        let ps = ParticleSet::new(vec![Particle::sphere(t, a).unwrap()]).unwrap();
        let alpha = [0.0, 0.0, 1.0];
        let sol = solve_charges(&vac(), &ps, &alpha).unwrap();
        let expect = -FOUR_PI * a * Complex64::from_polar(1.0, 0.3);
        assert!((sol.charges[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn coincident_particles_rejected() {
        let p = Particle::sphere([0.0; 3], 0.01).unwrap();
        assert!(ParticleSet::new(vec![p, p]).is_err());
    }

    #[test]
    fn ill_conditioned_pair_is_reported() {
        // C g(d) = −1 at kd = π makes the first 2×2 block singular; the third
        // particle is too weak to lift the degeneracy.
        let k = 1.0;
        let d = std::f64::consts::PI;
        let c = FOUR_PI * d;
        let m = BackgroundMedium::vacuum(k, 1.0).unwrap();
        let ps = ParticleSet::new(vec![
            Particle { position: [0.0; 3], radius: 0.01, capacitance: c },
            Particle { position: [d, 0.0, 0.0], radius: 0.01, capacitance: c },
            Particle { position: [0.0, 40.0, 0.0], radius: 1e-22, capacitance: 1e-20 },
        ])
        .unwrap();
        match ManyBodySystem::new(&m, &ps) {
            Err(Error::IllConditioned { pair, .. }) => assert_eq!(pair, Some((0, 1))),
            other => panic!("expected ill-conditioning, got {other:?}"),
        }
    }
}
