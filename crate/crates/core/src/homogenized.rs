//! Effective-medium limit: the self-consistent field `u_e` for a continuous
//! capacitance density `C(y)` and its scattering amplitude.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gmres, spectral_radius_estimate};
use crate::manybody::{ManyBodySystem, Particle, ParticleSet};
use crate::medium::{check_unit, norm3, BackgroundMedium, GreenEvaluator, U0Expansion};
use crate::quadrature::{build_ball_grid, SphereQuadrature, VolumeGrid};
use crate::volume::{dist, VolumeOperator};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Capacitance per unit volume sampled at the cells of a ball grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceDensityField {
    grid: VolumeGrid,
    values: Vec<f64>,
    b0: f64,
}

impl CapacitanceDensityField {
    pub fn new(grid: VolumeGrid, values: Vec<f64>, b0: f64) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::domain(format!("density has {} values for {} grid cells", values.len(), grid.len())));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("capacitance density must be finite and nonnegative, cell {i} has {v}")));
        }
        if !(b0 > 0.0) {
            return Err(Error::domain("host radius must be positive"));
        }
        Ok(Self { grid, values, b0 })
    }

    /// Samples `f` at the cell centres of a ball grid of radius `b0`.
    pub fn from_fn<F: Fn(&[f64; 3]) -> f64>(b0: f64, h: f64, f: F) -> Result<Self> {
        let grid = build_ball_grid(b0, h)?;
        let values = grid.points().iter().map(&f).collect();
        Self::new(grid, values, b0)
    }

    pub fn zero(b0: f64, h: f64) -> Result<Self> {
        Self::from_fn(b0, h, |_| 0.0)
    }

    pub fn constant(b0: f64, h: f64, c: f64) -> Result<Self> {
        Self::from_fn(b0, h, |_| c)
    }

    /// `eps · exp(−|x|²/(2s²))` truncated to the ball.
    pub fn gaussian(b0: f64, h: f64, eps: f64, s: f64) -> Result<Self> {
        Self::from_fn(b0, h, |x| eps * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * s * s)).exp())
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    /// `∫ C dy` on the grid.
    pub fn total(&self) -> f64 {
        self.values.iter().zip(self.grid.weights()).map(|(v, w)| v * w).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Piecewise-constant value at `x` (zero outside the grid cells).
    pub fn value_at(&self, x: &[f64; 3]) -> f64 {
        if norm3(x) > self.b0 {
            return 0.0;
        }
        self.grid.locate(x).map(|i| self.values[i]).unwrap_or(0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|v| v * factor).collect(), self.b0)
    }
}

/// Closed-form Fourier transform `∫ e^{−iξ·x} eps·e^{−|x|²/(2s²)} dx` of the
/// untruncated Gaussian, for complex `ξ` (bilinear `ξ·ξ`).
pub fn gaussian_fourier(eps: f64, s: f64, xi: &[Complex64; 3]) -> Complex64 {
    let xx = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    (-(xx * (s * s / 2.0))).exp() * (eps * (2.0 * std::f64::consts::PI * s * s).powf(1.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveField {
    pub values: Vec<Complex64>,
    pub alpha: [f64; 3],
    /// Relative residual of the discretized integral equation.
    pub residual: f64,
    pub iterations: usize,
}

pub const GMRES_TOLERANCE: f64 = 1e-10;
pub const GMRES_RESTART: usize = 40;
pub const GMRES_MAX_ITER: usize = 500;

/// Discretized effective-medium equation for one medium and density.
///
/// With `w = u_e − U₀` and the free-space volume operator `K`, the equation
/// `(I + K(q + C)) w = −K(C U₀)` is solved; for `q = 0` this is
/// `u_e + K(C u_e) = U₀`.
pub struct HomogenizedSolver {
    medium: BackgroundMedium,
    density: CapacitanceDensityField,
    op: VolumeOperator,
    green: Option<GreenEvaluator>,
    expansions: Vec<U0Expansion>,
    potential: Vec<f64>,
}

impl std::fmt::Debug for HomogenizedSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HomogenizedSolver").field("cells", &self.density.grid.len()).finish()
    }
}

impl HomogenizedSolver {
    pub fn new(medium: &BackgroundMedium, density: &CapacitanceDensityField) -> Result<Self> {
        let h = density.spacing();
        let limit = 2.0 * std::f64::consts::PI / (10.0 * medium.k0_max());
        if h > limit * (1.0 + 1e-12) {
            return Err(Error::domain(format!("grid spacing {h} does not resolve the wavelength (need h ≤ {limit})")));
        }
        if density.b0() > medium.b0() * (1.0 + 1e-12) {
            return Err(Error::domain("density grid extends beyond the host domain"));
        }
        if !medium.is_vacuum() && density.b0() < medium.b0() * (1.0 - 1e-12) {
            return Err(Error::domain("in a non-vacuum medium the density grid must cover the whole host ball"));
        }
        let op = VolumeOperator::new(&density.grid, medium.k())?;
        let green = if medium.is_vacuum() { None } else { Some(GreenEvaluator::new(medium, medium.b0())?) };
        let expansions = match &green {
            Some(ev) => density.grid.points().par_iter().map(|p| ev.u0_expansion(p)).collect(),
            None => Vec::new(),
        };
        let potential = density
            .grid
            .points()
            .iter()
            .zip(&density.values)
            .map(|(p, c)| cell_average_q(medium, p, h) + c)
            .collect();
        Ok(Self { medium: medium.clone(), density: density.clone(), op, green, expansions, potential })
    }

    pub fn density(&self) -> &CapacitanceDensityField {
        &self.density
    }

    fn u0(&self, i: usize, alpha: &[f64; 3]) -> Complex64 {
        match &self.green {
            Some(_) => self.expansions[i].eval(alpha),
            None => {
                let p = &self.density.grid.points()[i];
                Complex64::from_polar(1.0, self.medium.k() * (alpha[0] * p[0] + alpha[1] * p[1] + alpha[2] * p[2]))
            }
        }
    }

    pub fn u0_on_grid(&self, alpha: &[f64; 3]) -> Vec<Complex64> {
        (0..self.density.grid.len()).map(|i| self.u0(i, alpha)).collect()
    }

    fn apply_system(&self, w: &[Complex64]) -> Vec<Complex64> {
        let vw: Vec<Complex64> = w.iter().zip(&self.potential).map(|(a, v)| a * *v).collect();
        let kv = self.op.apply(&vw);
        w.iter().zip(kv).map(|(a, b)| a + b).collect()
    }

    /// Relative residual of `u_e = U₀ − ∫ G C u_e` for a candidate field,
    /// measured through the equivalent free-space form.
    pub fn residual(&self, field: &EffectiveField) -> f64 {
        let u0 = self.u0_on_grid(&field.alpha);
        let w: Vec<Complex64> = field.values.iter().zip(&u0).map(|(a, b)| a - b).collect();
        let lhs = self.apply_system(&w);
        let cu0: Vec<Complex64> = u0.iter().zip(&self.density.values).map(|(u, c)| u * *c).collect();
        let rhs: Vec<Complex64> = self.op.apply(&cu0).into_iter().map(|z| -z).collect();
        let num: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = field.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        num / den.max(f64::MIN_POSITIVE)
    }

    pub fn solve(&self, alpha: &[f64; 3]) -> Result<EffectiveField> {
        check_unit(alpha)?;
        let u0 = self.u0_on_grid(alpha);
        if self.density.is_zero() {
            return Ok(EffectiveField { values: u0, alpha: *alpha, residual: 0.0, iterations: 0 });
        }
        let cu0: Vec<Complex64> = u0.iter().zip(&self.density.values).map(|(u, c)| u * *c).collect();
        let rhs: Vec<Complex64> = self.op.apply(&cu0).into_iter().map(|z| -z).collect();
        let out = gmres(|w| self.apply_system(w), &rhs, None, GMRES_TOLERANCE, GMRES_RESTART, GMRES_MAX_ITER);
        if !out.converged {
            let rho = spectral_radius_estimate(
                |w| {
                    let vw: Vec<Complex64> = w.iter().zip(&self.potential).map(|(a, v)| a * *v).collect();
                    self.op.apply(&vw)
                },
                rhs.len(),
                30,
                1,
            );
            return Err(Error::Divergence { iterations: out.iterations, residual: out.residual, spectral_radius: rho });
        }
        let values = u0.iter().zip(&out.solution).map(|(a, b)| a + b).collect();
        let mut field = EffectiveField { values, alpha: *alpha, residual: 0.0, iterations: out.iterations };
        field.residual = self.residual(&field);
        Ok(field)
    }

    /// First Born iterate `U₀ − K((q + C)U₀)` restricted to the `C` part:
    /// `u ≈ U₀ − ∫ G C U₀` (vacuum only).
    pub fn born_iterate(&self, alpha: &[f64; 3]) -> Result<EffectiveField> {
        check_unit(alpha)?;
        if self.green.is_some() {
            return Err(Error::domain("first Born iterate is provided for vacuum only"));
        }
        let u0 = self.u0_on_grid(alpha);
        let cu0: Vec<Complex64> = u0.iter().zip(&self.density.values).map(|(u, c)| u * *c).collect();
        let k = self.op.apply(&cu0);
        Ok(EffectiveField { values: u0.iter().zip(k).map(|(a, b)| a - b).collect(), alpha: *alpha, residual: f64::NAN, iterations: 1 })
    }

    fn aq(&self, alpha_out: &[f64; 3], alpha_in: &[f64; 3]) -> Complex64 {
        self.green.as_ref().map(|ev| ev.amplitude(alpha_out, alpha_in)).unwrap_or_default()
    }

    /// `A(α′, α) = A_q(α′, α) − (1/4π) ∫ U₀(y, −α′) C(y) u_e(y, α) dy`.
    pub fn amplitude(&self, field: &EffectiveField, alpha_out: &[f64; 3]) -> Complex64 {
        let back = [-alpha_out[0], -alpha_out[1], -alpha_out[2]];
        let w = self.density.grid.weights();
        let s: Complex64 = (0..w.len())
            .filter(|&i| self.density.values[i] != 0.0)
            .map(|i| self.u0(i, &back) * field.values[i] * (self.density.values[i] * w[i]))
            .sum();
        self.aq(alpha_out, &field.alpha) - s / FOUR_PI
    }

    /// Amplitudes `A(α′_i, α_j)`, row-major over outgoing directions.
    pub fn amplitude_table(&self, outgoing: &[[f64; 3]], incoming: &[[f64; 3]]) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::new(0.0, 0.0); outgoing.len() * incoming.len()];
        for (j, a) in incoming.iter().enumerate() {
            let field = self.solve(a)?;
            let col: Vec<Complex64> = outgoing.par_iter().map(|o| self.amplitude(&field, o)).collect();
            for (i, v) in col.into_iter().enumerate() {
                out[i * incoming.len() + j] = v;
            }
        }
        Ok(out)
    }
}

/// Mean of `q` over the part of the cube of side `h` centred at `p` that lies
/// in the host ball. Cells away from every interface take the centre value.
fn cell_average_q(medium: &BackgroundMedium, p: &[f64; 3], h: f64) -> f64 {
    let layers = medium.layers();
    if layers.is_empty() {
        return 0.0;
    }
    let r = norm3(p);
    let half_diag = 0.5 * 3f64.sqrt() * h;
    if layers.iter().all(|(radius, _)| (r - radius).abs() > half_diag) {
        return medium.potential_q(p);
    }
    const SUB: usize = 8;
    let b0 = medium.b0();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..SUB {
        for j in 0..SUB {
            for l in 0..SUB {
                let off = |t: usize| (t as f64 + 0.5) / SUB as f64 - 0.5;
                let y = [p[0] + h * off(i), p[1] + h * off(j), p[2] + h * off(l)];
                if norm3(&y) <= b0 {
                    sum += medium.potential_q(&y);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        // Sliver thinner than the sub-sampling: use the outermost layer.
        let kk = layers.last().map(|l| l.1).unwrap_or(medium.k());
        return medium.k() * medium.k() - kk * kk;
    }
    sum / count as f64
}

pub fn solve_effective_field(medium: &BackgroundMedium, density: &CapacitanceDensityField, alpha: &[f64; 3]) -> Result<EffectiveField> {
    HomogenizedSolver::new(medium, density)?.solve(alpha)
}

pub fn amplitude_homogenized(
    medium: &BackgroundMedium,
    density: &CapacitanceDensityField,
    field: &EffectiveField,
    alpha_out: &[f64; 3],
) -> Result<Complex64> {
    check_unit(alpha_out)?;
    if field.values.len() != density.grid.len() {
        return Err(Error::domain("effective field does not match the density grid"));
    }
    Ok(HomogenizedSolver::new(medium, density)?.amplitude(field, alpha_out))
}

/// Hard-core rejection sampler: positions with probability ∝ `C`, pairwise
/// distance at least `min_distance`, at most `max_retries` rejections per
/// particle.
pub fn sample_positions<R: Rng>(
    density: &CapacitanceDensityField,
    count: usize,
    min_distance: f64,
    max_retries: usize,
    rng: &mut R,
) -> Result<Vec<[f64; 3]>> {
    let cmax = density.max_value();
    if count > 0 && cmax <= 0.0 {
        return Err(Error::domain("cannot sample particles from a zero density"));
    }
    let b0 = density.b0();
    let cell = min_distance.max(b0 / 64.0);
    let mut hash: std::collections::HashMap<[i64; 3], Vec<usize>> = std::collections::HashMap::new();
    let key = |p: &[f64; 3]| [(p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64];
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(count);
    let min2 = min_distance * min_distance;
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..max_retries {
            let p = [rng.gen_range(-b0..b0), rng.gen_range(-b0..b0), rng.gen_range(-b0..b0)];
            if norm3(&p) > b0 {
                continue;
            }
            if rng.gen::<f64>() * cmax >= density.value_at(&p) {
                continue;
            }
            let kp = key(&p);
            let mut clash = false;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = hash.get(&[kp[0] + dx, kp[1] + dy, kp[2] + dz]) {
                            for &j in list {
                                let q = &out[j];
                                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                                if d2 < min2 {
                                    clash = true;
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            if clash {
                continue;
            }
            hash.entry(kp).or_default().push(out.len());
            out.push(p);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Packing { placed: out.len(), requested: count, min_distance, max_feasible: out.len() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Sphere-rule degree for incident directions.
    pub incoming_degree: usize,
    /// Sphere-rule degree for outgoing directions.
    pub outgoing_degree: usize,
    /// Minimum pair distance in units of the particle radius.
    pub hard_core: f64,
    pub max_retries: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { incoming_degree: 2, outgoing_degree: 6, hard_core: 10.0, max_retries: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyStats {
    /// Relative L² discrepancy of each trial over the direction grid.
    pub per_trial: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Relative L² distance `‖a − b‖/‖b‖` (absolute when `b = 0`).
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Samples `m` identical spheres with `C_m = (∫C)/m` at positions drawn with
/// probability ∝ `C`, and compares their amplitude table with the
/// homogenized one.
pub fn compare_discrete_continuum(
    medium: &BackgroundMedium,
    density: &CapacitanceDensityField,
    m: usize,
    trials: usize,
    seed: u64,
    options: &CompareOptions,
) -> Result<DiscrepancyStats> {
    let incoming = SphereQuadrature::new(options.incoming_degree)?;
    let outgoing = SphereQuadrature::new(options.outgoing_degree)?;
    let solver = HomogenizedSolver::new(medium, density)?;
    let reference = solver.amplitude_table(outgoing.nodes(), incoming.nodes())?;
    let total = density.total();
    let mut per_trial = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let particles = if m == 0 || total == 0.0 {
            ParticleSet::empty()
        } else {
            let cap = total / m as f64;
            let a = cap / FOUR_PI;
            let pos = sample_positions(density, m, options.hard_core * a, options.max_retries, &mut rng)?;
            ParticleSet::new(pos.into_iter().map(|p| Particle { position: p, radius: a, capacitance: cap }).collect())?
        };
        let sys = ManyBodySystem::new(medium, &particles)?;
        let table = sys.amplitude_table(outgoing.nodes(), incoming.nodes())?;
        per_trial.push(relative_l2(&table, &reference));
    }
    let mean = if per_trial.is_empty() { 0.0 } else { per_trial.iter().sum::<f64>() / per_trial.len() as f64 };
    let max = per_trial.iter().copied().fold(0.0, f64::max);
    Ok(DiscrepancyStats { per_trial, mean, max })
}

/// Value of `u_e` at an off-grid point: `U₀(x) − ∫ G(x, y) C(y) u_e(y) dy`
/// with the free-space form of the equation (vacuum only).
pub fn field_at(solver: &HomogenizedSolver, field: &EffectiveField, x: &[f64; 3]) -> Result<Complex64> {
    if solver.green.is_some() {
        return Err(Error::domain("off-grid evaluation is provided for vacuum only"));
    }
    let k = solver.medium.k();
    let a = &field.alpha;
    let mut s = Complex64::from_polar(1.0, k * (a[0] * x[0] + a[1] * x[1] + a[2] * x[2]));
    for ((p, w), (c, u)) in solver.density.grid.points().iter().zip(solver.density.grid.weights()).zip(solver.density.values.iter().zip(&field.values)) {
        let d = dist(x, p);
        if d == 0.0 {
            return Err(Error::Singular("off-grid evaluation at a collocation point".into()));
        }
        s -= crate::volume::free_green(k, d) * u * (c * w);
    }
    Ok(s)
}
