//! Fixed-energy inversion: from an amplitude table at `k = 1`, recover the
//! Fourier transform of the potential on a frequency grid by complex-direction
//! synthesis, then invert it to a capacitance density.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenized::CapacitanceDensityField;
use crate::medium::BackgroundMedium;
use crate::quadrature::{build_ball_grid, build_shell_grid, ShellSpec, SphereQuadrature, VolumeGrid};
use crate::specfun::{
    lm_count, lm_index, spherical_hankel_h_array, spherical_harmonics_all,
    spherical_harmonics_complex_all, ComplexDirection,
};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Scattering amplitude sampled on two sphere rules, stored row-major as
/// `values[i * n_in + j] = A(α′_i, α_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeTable {
    k: f64,
    outgoing: SphereQuadrature,
    incoming: SphereQuadrature,
    values: Vec<Complex64>,
}

impl AmplitudeTable {
    pub fn new(k: f64, outgoing: SphereQuadrature, incoming: SphereQuadrature, values: Vec<Complex64>) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::domain(format!("wavenumber must be positive, got {k}")));
        }
        if values.len() != outgoing.len() * incoming.len() {
            return Err(Error::Format(format!(
                "amplitude table has {} values for {}×{} directions",
                values.len(),
                outgoing.len(),
                incoming.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Format(format!("amplitude value {i} is not finite")));
        }
        Ok(Self { k, outgoing, incoming, values })
    }

    pub fn from_fn<F>(k: f64, outgoing: SphereQuadrature, incoming: SphereQuadrature, f: F) -> Result<Self>
    where
        F: Fn(&[f64; 3], &[f64; 3]) -> Complex64,
    {
        let mut values = Vec::with_capacity(outgoing.len() * incoming.len());
        for o in outgoing.nodes() {
            for a in incoming.nodes() {
                values.push(f(o, a));
            }
        }
        Self::new(k, outgoing, incoming, values)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn outgoing(&self) -> &SphereQuadrature {
        &self.outgoing
    }

    pub fn incoming(&self) -> &SphereQuadrature {
        &self.incoming
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn value(&self, out: usize, inc: usize) -> Complex64 {
        self.values[out * self.incoming.len() + inc]
    }

    /// The same scatterer in units where `k = 1`: lengths are multiplied by
    /// `k`, and so is the amplitude.
    pub fn rescaled_to_unit_wavenumber(&self) -> Self {
        Self {
            k: 1.0,
            outgoing: self.outgoing.clone(),
            incoming: self.incoming.clone(),
            values: self.values.iter().map(|v| v * self.k).collect(),
        }
    }

    /// Relative L² distance to another table on the same directions,
    /// weighted by both quadrature rules.
    pub fn relative_l2_to(&self, reference: &AmplitudeTable) -> Result<f64> {
        if self.values.len() != reference.values.len() {
            return Err(Error::domain("tables have different direction sets"));
        }
        let n_in = self.incoming.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for (idx, (a, b)) in self.values.iter().zip(&reference.values).enumerate() {
            let w = self.outgoing.weights()[idx / n_in] * self.incoming.weights()[idx % n_in];
            num += w * (a - b).norm_sqr();
            den += w * b.norm_sqr();
        }
        Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
    }

    /// Largest pointwise mismatch relative to the largest reference value.
    pub fn max_relative_to(&self, reference: &AmplitudeTable) -> Result<f64> {
        if self.values.len() != reference.values.len() {
            return Err(Error::domain("tables have different direction sets"));
        }
        let scale = reference.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let worst = self.values.iter().zip(&reference.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        Ok(if scale == 0.0 { worst } else { worst / scale })
    }

    /// Re-samples the table onto other sphere rules through its spherical
    /// harmonic expansion in both directions.
    pub fn resample(&self, outgoing: SphereQuadrature, incoming: SphereQuadrature) -> Result<Self> {
        let lo = self.outgoing.degree() / 2;
        let li = self.incoming.degree() / 2;
        let n_out = self.outgoing.len();
        let n_in = self.incoming.len();
        let y_out: Vec<Vec<Complex64>> = self.outgoing.nodes().iter().map(|n| spherical_harmonics_all(lo, n)).collect::<Result<_>>()?;
        let y_in: Vec<Vec<Complex64>> = self.incoming.nodes().iter().map(|n| spherical_harmonics_all(li, n)).collect::<Result<_>>()?;
        let (co, ci) = (lm_count(lo), lm_count(li));
        // c[p][q] = Σ_ij w_i w_j A_ij conj(Y_p(α′_i)) conj(Y_q(α_j))
        let mut half = vec![Complex64::new(0.0, 0.0); co * n_in];
        for i in 0..n_out {
            let w = self.outgoing.weights()[i];
            for p in 0..co {
                let yc = y_out[i][p].conj() * w;
                for j in 0..n_in {
                    half[p * n_in + j] += yc * self.values[i * n_in + j];
                }
            }
        }
        let mut c = vec![Complex64::new(0.0, 0.0); co * ci];
        for p in 0..co {
            for j in 0..n_in {
                let v = half[p * n_in + j] * self.incoming.weights()[j];
                for q in 0..ci {
                    c[p * ci + q] += v * y_in[j][q].conj();
                }
            }
        }
        let new_out: Vec<Vec<Complex64>> = outgoing.nodes().iter().map(|n| spherical_harmonics_all(lo, n)).collect::<Result<_>>()?;
        let new_in: Vec<Vec<Complex64>> = incoming.nodes().iter().map(|n| spherical_harmonics_all(li, n)).collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(outgoing.len() * incoming.len());
        for yo in &new_out {
            let row: Vec<Complex64> = (0..ci).map(|q| (0..co).map(|p| c[p * ci + q] * yo[p]).sum()).collect();
            for yi in &new_in {
                values.push((0..ci).map(|q| row[q] * yi[q]).sum());
            }
        }
        Self::new(self.k, outgoing, incoming, values)
    }
}

/// Outgoing-direction harmonic coefficients `A_ℓm(α_j)` of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipoleCoefficients {
    ell_max: usize,
    incoming: SphereQuadrature,
    /// `coeffs[j * lm_count(ell_max) + lm_index(ℓ, m)]`.
    coeffs: Vec<Complex64>,
    /// `max_j (Σ_m |A_ℓm(α_j)|²)^{1/2}` for each ℓ.
    decay: Vec<f64>,
    support_radius: Option<f64>,
}

/// `√(b₀/ℓ)(b₀e/(2ℓ))^{ℓ+1}`, the growth bound for `|A_ℓ|` of a potential
/// supported in the ball of radius `b₀` (`ℓ = 0` uses the `ℓ = 1` value).
pub fn coefficient_envelope(ell: usize, b0: f64) -> f64 {
    let l = ell.max(1) as f64;
    (b0 / l).sqrt() * (b0 * std::f64::consts::E / (2.0 * l)).powf(l + 1.0)
}

impl MultipoleCoefficients {
    pub fn ell_max(&self) -> usize {
        self.ell_max
    }

    pub fn incoming(&self) -> &SphereQuadrature {
        &self.incoming
    }

    /// All `A_ℓm(α_j)` for one incoming node.
    pub fn at(&self, j: usize) -> &[Complex64] {
        let n = lm_count(self.ell_max);
        &self.coeffs[j * n..(j + 1) * n]
    }

    pub fn coefficient(&self, j: usize, ell: usize, m: i64) -> Complex64 {
        self.at(j)[lm_index(ell, m)]
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    /// Uses the envelope for a potential supported in `|x| ≤ b0` in the
    /// continuation test instead of the measured coefficients.
    pub fn with_support_radius(mut self, b0: f64) -> Result<Self> {
        if !(b0 > 0.0 && b0.is_finite()) {
            return Err(Error::domain("support radius must be positive"));
        }
        self.support_radius = Some(b0);
        Ok(self)
    }

    /// Truncated expansion at a real outgoing direction.
    pub fn evaluate_real(&self, alpha_out: &[f64; 3], j: usize) -> Result<Complex64> {
        let y = spherical_harmonics_all(self.ell_max, alpha_out)?;
        Ok(self.at(j).iter().zip(&y).map(|(a, b)| a * b).sum())
    }
}

pub fn multipole_expand(table: &AmplitudeTable, ell_max: usize) -> Result<MultipoleCoefficients> {
    let degree = table.outgoing.degree();
    if degree < 2 * ell_max {
        return Err(Error::InsufficientQuadrature { required: 2 * ell_max, available: degree });
    }
    let n = lm_count(ell_max);
    let n_in = table.incoming.len();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n_in];
    for (i, (node, w)) in table.outgoing.nodes().iter().zip(table.outgoing.weights()).enumerate() {
        let y = spherical_harmonics_all(ell_max, node)?;
        for j in 0..n_in {
            let a = table.values[i * n_in + j] * *w;
            let row = &mut coeffs[j * n..(j + 1) * n];
            for (c, yv) in row.iter_mut().zip(&y) {
                *c += a * yv.conj();
            }
        }
    }
    let mut decay = vec![0.0f64; ell_max + 1];
    for j in 0..n_in {
        let row = &coeffs[j * n..(j + 1) * n];
        for (l, d) in decay.iter_mut().enumerate() {
            let s: f64 = (-(l as i64)..=l as i64).map(|m| row[lm_index(l, m)].norm_sqr()).sum();
            *d = d.max(s.sqrt());
        }
    }
    Ok(MultipoleCoefficients { ell_max, incoming: table.incoming.clone(), coeffs, decay, support_radius: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuedAmplitude {
    pub value: Complex64,
    /// Estimate of the neglected terms `ℓ > ℓ_max`.
    pub tail: f64,
}

const TAIL_TERMS: usize = 40;

fn degree_norms(y: &[Complex64], ell_max: usize) -> Vec<f64> {
    (0..=ell_max)
        .map(|l| (-(l as i64)..=l as i64).map(|m| y[lm_index(l, m)].norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

/// `Σ_{ℓ≤ℓmax} A_ℓ(α_j) Y_ℓ(θ′)` at a point of the complex quadric.
///
/// The coefficient bound times `|Y_ℓ(θ′)|` must decrease at `ℓ_max`; the
/// bound is the support-radius envelope when one is set and the measured
/// coefficient size otherwise.
pub fn amplitude_at_complex_direction(
    coeffs: &MultipoleCoefficients,
    theta_prime: &ComplexDirection,
    j: usize,
) -> Result<ContinuedAmplitude> {
    if j >= coeffs.incoming.len() {
        return Err(Error::domain(format!("incoming node {j} out of range")));
    }
    let lmax = coeffs.ell_max;
    let y = spherical_harmonics_complex_all(lmax + TAIL_TERMS, theta_prime);
    let a = coeffs.at(j);
    let value: Complex64 = a.iter().zip(&y).map(|(c, yv)| c * yv).sum();
    let ynorm = degree_norms(&y, lmax + TAIL_TERMS);
    let measured: Vec<f64> = (0..=lmax)
        .map(|l| (-(l as i64)..=l as i64).map(|m| a[lm_index(l, m)].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let not_decaying = || {
        Error::Continuation(format!(
            "coefficient decay does not overtake harmonic growth at ell_max = {lmax} (|theta'| = {:.3})",
            theta_prime.magnitude()
        ))
    };
    if lmax == 0 {
        return Ok(ContinuedAmplitude { value, tail: 0.0 });
    }
    let tail = match coeffs.support_radius {
        Some(b0) => {
            let p = |l: usize| coefficient_envelope(l, b0) * ynorm[l];
            if !(p(lmax) < p(lmax - 1)) {
                return Err(not_decaying());
            }
            let scale = (1..=lmax).map(|l| measured[l] / coefficient_envelope(l, b0)).fold(0.0, f64::max);
            scale * (lmax + 1..=lmax + TAIL_TERMS).map(p).sum::<f64>()
        }
        None => {
            let p = |l: usize| measured[l] * ynorm[l];
            let (last, prev) = (p(lmax), p(lmax - 1));
            let peak = (0..=lmax).map(p).fold(0.0, f64::max);
            if last <= 1e-13 * peak {
                // Coefficients already at roundoff level.
                last
            } else {
                let ratio = last / prev;
                if !(ratio < 1.0) {
                    return Err(not_decaying());
                }
                last * ratio / (1.0 - ratio)
            }
        }
    };
    if !tail.is_finite() {
        return Err(not_decaying());
    }
    Ok(ContinuedAmplitude { value, tail })
}

/// Complex directions `θ, θ′` on the quadric with `θ′ − θ = ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPair {
    pub xi: [f64; 3],
    pub theta: ComplexDirection,
    pub theta_prime: ComplexDirection,
    /// `(Σ|θ_j|²)^{1/2}`.
    pub magnitude: f64,
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub z1: Complex64,
    pub z2: Complex64,
    /// Orthonormal frame `e₁, e₂, e₃` with `e₃ ∥ ξ`.
    pub frame: [[f64; 3]; 3],
}

fn frame_for(xi: &[f64; 3], t: f64) -> [[f64; 3]; 3] {
    let e3 = if t > 0.0 { [xi[0] / t, xi[1] / t, xi[2] / t] } else { [0.0, 0.0, 1.0] };
    let a = if e3[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |u: [f64; 3], v: [f64; 3]| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let mut e1 = cross(a, e3);
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = e1.map(|v| v / n);
    let e2 = cross(e3, e1);
    [e1, e2, e3]
}

fn build_pair(xi: &[f64; 3], r_param: f64) -> Result<ThetaPair> {
    let t = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    let c0 = 0.5 - t * t / 8.0;
    if !(r_param > 0.0) || !r_param.is_finite() || r_param * r_param < c0.abs() {
        return Err(Error::domain(format!(
            "r_param = {r_param} is below the admissible bound {:.6} for |xi| = {t}",
            c0.abs().sqrt()
        )));
    }
    let phi = 0.5 * (c0 / (r_param * r_param)).clamp(-1.0, 1.0).acos();
    let z1 = Complex64::from_polar(r_param, phi);
    let z2 = Complex64::from_polar(r_param, -phi);
    let frame = frame_for(xi, t);
    let [e1, e2, _] = frame;
    let common: [Complex64; 3] = [0, 1, 2].map(|a| z1 * e1[a] + z2 * e2[a]);
    let theta_prime = [0, 1, 2].map(|a| common[a] + 0.5 * xi[a]);
    let theta = [0, 1, 2].map(|a| common[a] - 0.5 * xi[a]);
    let theta = ComplexDirection::new(theta)?;
    let theta_prime = ComplexDirection::new(theta_prime)?;
    Ok(ThetaPair { xi: *xi, magnitude: theta.magnitude(), theta, theta_prime, t, r: r_param, phi, z1, z2, frame })
}

/// `θ′ = (t/2)e₃ + z₁e₁ + z₂e₂`, `θ = θ′ − ξ` with `z₁ = re^{iφ}`,
/// `z₂ = re^{−iφ}` and `r² cos 2φ = 1/2 − t²/8`, in a frame where `e₃ ∥ ξ`.
pub fn make_theta_pair(xi: &[f64; 3], r_param: f64) -> Result<ThetaPair> {
    let t = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain("xi must be a nonzero finite vector"));
    }
    build_pair(xi, r_param)
}

/// Acceptance of an approximate minimizer against `d̂(θ) = c₀/|θ|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuStatus {
    /// `F ≤ 2 d̂(θ)`.
    Accepted,
    /// `2 d̂ < F ≤ 10 d̂`.
    Marginal,
    /// `F > 10 d̂`, or the normal equations could not be solved.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuSolution {
    /// `ν` at the incoming quadrature nodes.
    pub nu: Vec<Complex64>,
    /// Achieved value of the synthesis functional.
    pub functional: f64,
    /// `F(0)`, the shell volume.
    pub functional_at_zero: f64,
    pub d_estimate: f64,
    pub theta_magnitude: f64,
    pub ridge: f64,
    pub status: NuStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// Ridge parameter relative to the largest eigenvalue of the normal matrix.
    pub regularization: f64,
    pub shell_radial_nodes: usize,
    /// Angular degree of the shell rule is the incoming degree plus this.
    pub shell_degree_extra: usize,
    /// `c₀` in `d̂(θ) = c₀/|θ|`; calibrated on the zero table when absent.
    pub d_constant: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { regularization: 1e-10, shell_radial_nodes: 6, shell_degree_extra: 10, d_constant: None }
    }
}

/// ξ and radius at which `c₀` is fixed on the zero-potential problem. Larger
/// radii are not used: there the achieved F grows with `|θ|`, and fitting
/// them would inflate `c₀` until every minimizer passes.
pub const CALIBRATION_XI: [f64; 3] = [0.0, 0.0, 1.0];
pub const CALIBRATION_R: f64 = 3.0;

/// Shell collocation data and the total field `u(x_p, α_j)` from the
/// multipole form of the scattered wave, reused for every `θ`.
pub struct SynthesisProblem {
    coeffs: MultipoleCoefficients,
    shell: ShellSpec,
    grid: VolumeGrid,
    /// Row-major `P × n_in`.
    field: Vec<Complex64>,
    options: SynthesisOptions,
    d_constant: f64,
}

impl std::fmt::Debug for SynthesisProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SynthesisProblem")
            .field("shell", &self.shell)
            .field("points", &self.grid.len())
            .field("d_constant", &self.d_constant)
            .finish()
    }
}

fn total_field(coeffs: &MultipoleCoefficients, grid: &VolumeGrid, with_scattered: bool) -> Result<Vec<Complex64>> {
    let lmax = coeffs.ell_max;
    let n = lm_count(lmax);
    let nodes = coeffs.incoming.nodes();
    let n_in = nodes.len();
    let rows: Vec<Result<Vec<Complex64>>> = grid
        .points()
        .par_iter()
        .map(|x| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let mut row: Vec<Complex64> =
                nodes.iter().map(|a| Complex64::from_polar(1.0, a[0] * x[0] + a[1] * x[1] + a[2] * x[2])).collect();
            if with_scattered {
                let xhat = [x[0] / r, x[1] / r, x[2] / r];
                let y = spherical_harmonics_all(lmax, &xhat)?;
                let h = spherical_hankel_h_array(lmax, r)?;
                let basis: Vec<Complex64> = (0..n)
                    .map(|idx| {
                        let l = (idx as f64).sqrt() as usize;
                        y[idx] * h[l]
                    })
                    .collect();
                for (j, u) in row.iter_mut().enumerate() {
                    *u += coeffs.at(j).iter().zip(&basis).map(|(a, b)| a * b).sum::<Complex64>();
                }
            }
            Ok(row)
        })
        .collect();
    let mut out = Vec::with_capacity(grid.len() * n_in);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

impl SynthesisProblem {
    pub fn new(coeffs: MultipoleCoefficients, shell: ShellSpec, options: SynthesisOptions) -> Result<Self> {
        shell.validate()?;
        if !(options.regularization >= 0.0) {
            return Err(Error::domain("regularization must be nonnegative"));
        }
        let degree = coeffs.incoming.degree() + options.shell_degree_extra;
        let grid = build_shell_grid(&shell, options.shell_radial_nodes.max(2), degree)?;
        let field = total_field(&coeffs, &grid, true)?;
        let mut problem = Self { coeffs, shell, grid, field, options, d_constant: f64::NAN };
        problem.d_constant = match options.d_constant {
            Some(c) => c,
            None => problem.calibrate_d_constant()?,
        };
        Ok(problem)
    }

    pub fn coefficients(&self) -> &MultipoleCoefficients {
        &self.coeffs
    }

    pub fn shell(&self) -> &ShellSpec {
        &self.shell
    }

    pub fn d_constant(&self) -> f64 {
        self.d_constant
    }

    pub fn d_estimate(&self, pair: &ThetaPair) -> f64 {
        self.d_constant / pair.magnitude
    }

    /// `c₀ = F·|θ|` for the zero-potential problem on the same shell and
    /// incoming rule.
    fn calibrate_d_constant(&self) -> Result<f64> {
        let zero_field = total_field(&self.coeffs, &self.grid, false)?;
        let pair = make_theta_pair(&CALIBRATION_XI, CALIBRATION_R)?;
        let (_, f, _) = self.solve_normal(&zero_field, &pair);
        Ok(f * pair.magnitude)
    }

    /// Returns `(ν, F(ν), ridge)`; `ν` is empty if the solve failed.
    fn solve_normal(&self, field: &[Complex64], pair: &ThetaPair) -> (Vec<Complex64>, f64, f64) {
        let n_in = self.coeffs.incoming.len();
        let p = self.grid.len();
        let wa = self.coeffs.incoming.weights();
        let b = DMatrix::from_fn(p, n_in, |i, j| {
            let x = &self.grid.points()[i];
            let scale = (-Complex64::i() * pair.theta.dot_real(x)).exp() * self.grid.weights()[i].sqrt();
            scale * field[i * n_in + j] * wa[j]
        });
        let rhs = DVector::from_fn(p, |i, _| Complex64::new(self.grid.weights()[i].sqrt(), 0.0));
        // Tikhonov solve through the SVD of the triangular factor; forming
        // BᴴB would square a condition number that already reaches 1e10.
        let qr = b.clone().qr();
        let qtr = qr.q().adjoint() * &rhs;
        let svd = qr.r().svd(true, true);
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let ridge = self.options.regularization * smax * smax;
        let sol = match (&svd.u, &svd.v_t) {
            (Some(u), Some(vt)) if smax > 0.0 => {
                let mut c = u.adjoint() * &qtr;
                for (ci, sv) in c.iter_mut().zip(svd.singular_values.iter()) {
                    *ci *= *sv / (sv * sv + ridge);
                }
                Some(vt.adjoint() * c)
            }
            (Some(_), Some(_)) => Some(DVector::zeros(n_in)),
            _ => None,
        };
        match sol {
            Some(nu) if nu.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                let res = &b * &nu - &rhs;
                (nu.iter().copied().collect(), res.norm_squared(), ridge)
            }
            _ => (Vec::new(), f64::INFINITY, ridge),
        }
    }

    /// Minimizes `F(ν) = ∫_{b₁≤|x|≤b₂} |e^{−iθ·x} ∫ u(x,α)ν(α)dα − 1|² dx`
    /// over `ν` at the incoming nodes, with a ridge term.
    pub fn minimize(&self, pair: &ThetaPair) -> NuSolution {
        let (nu, functional, ridge) = self.solve_normal(&self.field, pair);
        let d = self.d_estimate(pair);
        let status = if nu.is_empty() || !functional.is_finite() || functional > 10.0 * d {
            NuStatus::Failed
        } else if functional <= 2.0 * d {
            NuStatus::Accepted
        } else {
            NuStatus::Marginal
        };
        NuSolution {
            nu,
            functional,
            functional_at_zero: self.grid.total_weight(),
            d_estimate: d,
            theta_magnitude: pair.magnitude,
            ridge,
            status,
        }
    }

    /// `F(ν)` by direct summation over the shell rule.
    pub fn functional(&self, pair: &ThetaPair, nu: &[Complex64]) -> f64 {
        let n_in = self.coeffs.incoming.len();
        let wa = self.coeffs.incoming.weights();
        self.grid
            .points()
            .iter()
            .zip(self.grid.weights())
            .enumerate()
            .map(|(i, (x, w))| {
                let s: Complex64 = (0..n_in).map(|j| self.field[i * n_in + j] * nu[j] * wa[j]).sum();
                let v = (-Complex64::i() * pair.theta.dot_real(x)).exp() * s - 1.0;
                w * v.norm_sqr()
            })
            .sum()
    }

    /// `Ĉ = −4π ∫ A(θ′, α) ν(α) dα`.
    pub fn fourier_estimate(&self, nu: &NuSolution, pair: &ThetaPair) -> Result<Complex64> {
        fourier_estimate(&self.coeffs, nu, pair)
    }
}

pub fn fourier_estimate(coeffs: &MultipoleCoefficients, nu: &NuSolution, pair: &ThetaPair) -> Result<Complex64> {
    if nu.nu.len() != coeffs.incoming.len() {
        return Err(Error::domain("nu does not match the incoming rule"));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, (v, w)) in nu.nu.iter().zip(coeffs.incoming.weights()).enumerate() {
        if *v == Complex64::new(0.0, 0.0) {
            continue;
        }
        let a = amplitude_at_complex_direction(coeffs, &pair.theta_prime, j)?;
        acc += a.value * *v * *w;
    }
    Ok(-FOUR_PI * acc)
}

/// One-shot form of [`SynthesisProblem::minimize`].
pub fn minimize_f(table: &AmplitudeTable, shell: &ShellSpec, pair: &ThetaPair, regularization: f64) -> Result<NuSolution> {
    if table.k != 1.0 {
        return Err(Error::domain("synthesis expects a table at k = 1; rescale it first"));
    }
    let coeffs = multipole_expand(table, table.outgoing.degree() / 2)?;
    let options = SynthesisOptions { regularization, ..SynthesisOptions::default() };
    Ok(SynthesisProblem::new(coeffs, *shell, options)?.minimize(pair))
}

/// Frequency nodes `ξ ∈ δℤ³` with `|ξ| ≤ ξ_max`, each carrying weight `δ³`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiGrid {
    pub spacing: f64,
    pub xi_max: f64,
    pub nodes: Vec<[f64; 3]>,
}

impl XiGrid {
    pub fn new(xi_max: f64, spacing: f64) -> Result<Self> {
        if !(xi_max > 0.0 && spacing > 0.0 && spacing.is_finite() && xi_max.is_finite()) {
            return Err(Error::domain("xi grid needs positive xi_max and spacing"));
        }
        let m = (xi_max / spacing).floor() as i64;
        let mut nodes = Vec::new();
        for i in -m..=m {
            for j in -m..=m {
                for l in -m..=m {
                    let v = [i as f64 * spacing, j as f64 * spacing, l as f64 * spacing];
                    if (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() <= xi_max * (1.0 + 1e-12) {
                        nodes.push(v);
                    }
                }
            }
        }
        Ok(Self { spacing, xi_max, nodes })
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionParams {
    pub r_param: f64,
    /// Harmonic cutoff of the outgoing expansion (default: half the degree).
    pub ell_max: Option<usize>,
    /// Shell radii as multiples of `b₀`.
    pub shell_factors: (f64, f64),
    /// Spacing of the output density grid (default `b₀/10`).
    pub density_spacing: Option<f64>,
    pub synthesis: SynthesisOptions,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self { r_param: 8.0, ell_max: None, shell_factors: (1.1, 1.3), density_spacing: None, synthesis: SynthesisOptions::default() }
    }
}

/// Default `ξ_max` for real data, `2k · 0.95`.
pub fn default_xi_max(k: f64) -> f64 {
    2.0 * k * 0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiDiagnostic {
    pub xi: [f64; 3],
    pub theta_magnitude: f64,
    pub functional: f64,
    pub d_estimate: f64,
    pub status: NuStatus,
    /// Estimate of the transform of `q + C`.
    pub total_estimate: Complex64,
    /// Transform of the known background `q`.
    pub background: Complex64,
    /// `total_estimate − background`.
    pub estimate: Complex64,
    pub continuation_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconstructionStatus {
    Ok,
    /// More than a quarter of the recovered mass was negative and clamped.
    Unreliable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub density: CapacitanceDensityField,
    /// Negative mass removed by clamping, relative to the total absolute mass.
    pub clamped_fraction: f64,
    pub status: ReconstructionStatus,
    pub diagnostics: Vec<XiDiagnostic>,
}

impl Reconstruction {
    pub fn accepted_fraction(&self) -> f64 {
        if self.diagnostics.is_empty() {
            return 1.0;
        }
        self.diagnostics.iter().filter(|d| d.status == NuStatus::Accepted).count() as f64 / self.diagnostics.len() as f64
    }

    pub fn failed_fraction(&self) -> f64 {
        if self.diagnostics.is_empty() {
            return 0.0;
        }
        self.diagnostics.iter().filter(|d| d.status == NuStatus::Failed || d.continuation_failed).count() as f64
            / self.diagnostics.len() as f64
    }
}

/// Transform `∫_{D₀} e^{−iξ·x} q(x) dx` of the background by direct quadrature.
pub fn background_transform(medium: &BackgroundMedium, grid: &VolumeGrid, xi: &[f64; 3]) -> Complex64 {
    if medium.is_vacuum() {
        return Complex64::new(0.0, 0.0);
    }
    grid.points()
        .iter()
        .zip(grid.weights())
        .map(|(x, w)| Complex64::from_polar(medium.potential_q(x) * w, -(xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2])))
        .sum()
}

/// Recovers `C` from a table of the total potential `q + C`: transform
/// estimates at every `ξ` node, subtraction of the known `q̃`, inverse
/// transform by direct quadrature, and clamping of negative values.
pub fn reconstruct_density(
    table: &AmplitudeTable,
    medium: &BackgroundMedium,
    xi_grid: &XiGrid,
    params: &ReconstructionParams,
) -> Result<Reconstruction> {
    let k = table.k;
    if (medium.k() - k).abs() > 1e-12 * k {
        return Err(Error::domain(format!("table wavenumber {k} differs from the medium's {}", medium.k())));
    }
    let unit_table = table.rescaled_to_unit_wavenumber();
    let unit_medium = medium.rescaled_to_unit_wavenumber();
    let b0 = unit_medium.b0();
    let ell_max = params.ell_max.unwrap_or(unit_table.outgoing.degree() / 2);
    let coeffs = multipole_expand(&unit_table, ell_max)?.with_support_radius(b0)?;
    let shell = ShellSpec::new(b0, params.shell_factors.0 * b0, params.shell_factors.1 * b0)?;
    let problem = SynthesisProblem::new(coeffs, shell, params.synthesis)?;
    let h_unit = params.density_spacing.map(|h| h * k).unwrap_or(b0 / 10.0);
    let unit_grid = build_ball_grid(b0, h_unit)?;

    // C is real, so the estimate at −ξ is the conjugate of the one at ξ.
    let positive = |v: &[f64; 3]| v[0] > 0.0 || (v[0] == 0.0 && (v[1] > 0.0 || (v[1] == 0.0 && v[2] >= 0.0)));
    let half: Vec<[f64; 3]> = xi_grid.nodes.iter().copied().filter(|v| positive(v)).collect();
    let solved: Vec<XiDiagnostic> = half
        .par_iter()
        .map(|xi| {
            let xu = [xi[0] / k, xi[1] / k, xi[2] / k];
            let pair = build_pair(&xu, params.r_param)?;
            let nu = problem.minimize(&pair);
            let (total, failed) = if nu.nu.is_empty() {
                (Complex64::new(0.0, 0.0), true)
            } else {
                match problem.fourier_estimate(&nu, &pair) {
                    Ok(v) => (v, false),
                    Err(Error::Continuation(_)) => (Complex64::new(0.0, 0.0), true),
                    Err(e) => return Err(e),
                }
            };
            let bg = background_transform(&unit_medium, &unit_grid, &xu);
            // Back to the caller's units: C̃(ξ) = C̃₁(ξ/k)/k.
            Ok(XiDiagnostic {
                xi: *xi,
                theta_magnitude: pair.magnitude,
                functional: nu.functional,
                d_estimate: nu.d_estimate,
                status: nu.status,
                total_estimate: total / k,
                background: bg / k,
                estimate: if failed { Complex64::new(0.0, 0.0) } else { (total - bg) / k },
                continuation_failed: failed,
            })
        })
        .collect::<Result<_>>()?;
    let mut diagnostics = Vec::with_capacity(xi_grid.nodes.len());
    for d in &solved {
        diagnostics.push(d.clone());
        if d.xi != [0.0, 0.0, 0.0] {
            let mut m = d.clone();
            m.xi = [-d.xi[0], -d.xi[1], -d.xi[2]];
            m.total_estimate = d.total_estimate.conj();
            m.background = d.background.conj();
            m.estimate = d.estimate.conj();
            diagnostics.push(m);
        }
    }

    let b0_orig = medium.b0();
    let h = params.density_spacing.unwrap_or(b0_orig / 10.0);
    let grid = build_ball_grid(b0_orig, h)?;
    let dv = xi_grid.cell_volume() / (2.0 * std::f64::consts::PI).powi(3);
    let raw: Vec<f64> = grid
        .points()
        .par_iter()
        .map(|x| {
            diagnostics
                .iter()
                .map(|d| (d.estimate * Complex64::from_polar(1.0, d.xi[0] * x[0] + d.xi[1] * x[1] + d.xi[2] * x[2])).re)
                .sum::<f64>()
                * dv
        })
        .collect();
    let w = grid.weights();
    let neg: f64 = raw.iter().zip(w).filter(|(v, _)| **v < 0.0).map(|(v, w)| -v * w).sum();
    let pos: f64 = raw.iter().zip(w).filter(|(v, _)| **v > 0.0).map(|(v, w)| v * w).sum();
    let clamped_fraction = if neg + pos > 0.0 { neg / (neg + pos) } else { 0.0 };
    let values: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let density = CapacitanceDensityField::new(grid, values, b0_orig)?;
    let status = if clamped_fraction > 0.25 { ReconstructionStatus::Unreliable } else { ReconstructionStatus::Ok };
    Ok(Reconstruction { density, clamped_fraction, status, diagnostics })
}

/// Relative L² distance between two densities on the same grid.
pub fn density_relative_l2(a: &CapacitanceDensityField, b: &CapacitanceDensityField) -> Result<f64> {
    if a.grid().len() != b.grid().len() {
        return Err(Error::domain("densities live on different grids"));
    }
    let w = b.grid().weights();
    let num: f64 = a.values().iter().zip(b.values()).zip(w).map(|((x, y), w)| w * (x - y).powi(2)).sum();
    let den: f64 = b.values().iter().zip(w).map(|(y, w)| w * y * y).sum();
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}
