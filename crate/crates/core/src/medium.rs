//! Host medium: radially layered wavenumber inside the ball `|x| ≤ b0`,
//! free space outside. Green's function, scattering solution and far-field
//! amplitude are built from partial waves.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gmres, neumann_series};
use crate::quadrature::VolumeGrid;
use crate::specfun::{bessel_derivatives, legendre_array, spherical_bessel_j_array, spherical_bessel_y_array, spherical_hankel_h1_array};
use crate::volume::{dist, free_green, VolumeOperator};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Vacuum,
    HomogeneousBall { k0: f64 },
    /// Piecewise-constant wavenumber: `wavenumbers[i]` on
    /// `radii[i-1] < |x| ≤ radii[i]`; the last radius equals `b0`.
    Layered { radii: Vec<f64>, wavenumbers: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundMedium {
    k: f64,
    b0: f64,
    profile: Profile,
}

impl BackgroundMedium {
    pub fn vacuum(k: f64, b0: f64) -> Result<Self> {
        Self::new(k, b0, Profile::Vacuum)
    }

    pub fn homogeneous_ball(k: f64, k0: f64, b0: f64) -> Result<Self> {
        Self::new(k, b0, Profile::HomogeneousBall { k0 })
    }

    /// Samples `k0(r)` at the midpoints of `layers` equal-width shells.
    pub fn radial<F: Fn(f64) -> f64>(k: f64, b0: f64, k0_of_r: F, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::domain("radial profile needs at least one layer"));
        }
        let dr = b0 / layers as f64;
        let radii = (1..=layers).map(|i| i as f64 * dr).collect();
        let wavenumbers = (0..layers).map(|i| k0_of_r((i as f64 + 0.5) * dr)).collect();
        Self::new(k, b0, Profile::Layered { radii, wavenumbers })
    }

    pub fn new(k: f64, b0: f64, profile: Profile) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::domain(format!("wavenumber k must be positive, got {k}")));
        }
        if !(b0 > 0.0 && b0.is_finite()) {
            return Err(Error::domain(format!("host radius b0 must be positive, got {b0}")));
        }
        let check_k0 = |k0: f64| {
            if !(k0.is_finite() && k0 >= k) {
                Err(Error::domain(format!("interior wavenumber k0 = {k0} must satisfy k0 ≥ k = {k}")))
            } else {
                Ok(())
            }
        };
        match &profile {
            Profile::Vacuum => {}
            Profile::HomogeneousBall { k0 } => check_k0(*k0)?,
            Profile::Layered { radii, wavenumbers } => {
                if radii.is_empty() || radii.len() != wavenumbers.len() {
                    return Err(Error::domain("layered profile needs matching radii and wavenumbers"));
                }
                if radii.windows(2).any(|w| !(w[0] < w[1])) || !(radii[0] > 0.0) {
                    return Err(Error::domain("layer radii must be positive and increasing"));
                }
                if (radii[radii.len() - 1] - b0).abs() > 1e-12 * b0 {
                    return Err(Error::domain("outermost layer radius must equal b0"));
                }
                for k0 in wavenumbers {
                    check_k0(*k0)?;
                }
            }
        }
        Ok(Self { k, b0, profile })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn is_vacuum(&self) -> bool {
        match &self.profile {
            Profile::Vacuum => true,
            Profile::HomogeneousBall { k0 } => *k0 == self.k,
            Profile::Layered { wavenumbers, .. } => wavenumbers.iter().all(|w| *w == self.k),
        }
    }

    /// Layers as `(outer radius, wavenumber)`, empty for vacuum.
    pub fn layers(&self) -> Vec<(f64, f64)> {
        match &self.profile {
            Profile::Vacuum => Vec::new(),
            Profile::HomogeneousBall { k0 } => vec![(self.b0, *k0)],
            Profile::Layered { radii, wavenumbers } => radii.iter().copied().zip(wavenumbers.iter().copied()).collect(),
        }
    }

    /// Largest interior wavenumber (`k` for vacuum).
    pub fn k0_max(&self) -> f64 {
        self.layers().iter().map(|l| l.1).fold(self.k, f64::max)
    }

    pub fn local_wavenumber(&self, r: f64) -> f64 {
        if r > self.b0 {
            return self.k;
        }
        for (outer, kk) in self.layers() {
            if r <= outer {
                return kk;
            }
        }
        self.k
    }

    pub fn potential_q(&self, x: &[f64; 3]) -> f64 {
        let r = norm3(x);
        let kl = self.local_wavenumber(r);
        self.k * self.k - kl * kl
    }

    /// The same medium in units where the exterior wavenumber is 1.
    pub fn rescaled_to_unit_wavenumber(&self) -> Self {
        let s = self.k;
        let profile = match &self.profile {
            Profile::Vacuum => Profile::Vacuum,
            Profile::HomogeneousBall { k0 } => Profile::HomogeneousBall { k0: k0 / s },
            Profile::Layered { radii, wavenumbers } => Profile::Layered {
                radii: radii.iter().map(|r| r * s).collect(),
                wavenumbers: wavenumbers.iter().map(|w| w / s).collect(),
            },
        };
        Self { k: 1.0, b0: self.b0 * s, profile }
    }
}

pub fn potential_q(medium: &BackgroundMedium, x: &[f64; 3]) -> f64 {
    medium.potential_q(x)
}

pub(crate) fn norm3(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub(crate) fn check_unit(v: &[f64; 3]) -> Result<()> {
    if (norm3(v) - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("direction {v:?} is not a unit vector")));
    }
    Ok(())
}

fn cos_between(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    let (a, b) = (norm3(x), norm3(y));
    if a == 0.0 || b == 0.0 {
        return 1.0;
    }
    ((x[0] * y[0] + x[1] * y[1] + x[2] * y[2]) / (a * b)).clamp(-1.0, 1.0)
}

/// Per-degree radial data: in layer `i` the regular solution is
/// `e^{s_i}(A_i j_ℓ + B_i y_ℓ)(κ_i r)` and the outgoing one is
/// `e^{s'_i}(C_i j_ℓ + D_i y_ℓ)(κ_i r)`; the last layer is the exterior.
#[derive(Debug, Clone)]
struct PartialWave {
    reg: Vec<(f64, f64)>,
    reg_log: Vec<f64>,
    out: Vec<(Complex64, Complex64)>,
    out_log: Vec<f64>,
    /// `t_ℓ` with exterior regular solution ∝ `j_ℓ + t_ℓ h⁽¹⁾_ℓ`.
    t: Complex64,
}

fn basis_at(ell: usize, x: f64) -> (f64, f64, f64, f64) {
    let j = spherical_bessel_j_array(ell + 1, x).expect("positive argument");
    let y = spherical_bessel_y_array(ell + 1, x).expect("positive argument");
    let dj = bessel_derivatives(&j, x);
    let dy = bessel_derivatives(&y, x);
    (j[ell], y[ell], dj[ell], dy[ell])
}

/// Precomputed partial-wave solution of the radial problem.
#[derive(Debug, Clone)]
pub struct GreenEvaluator {
    medium: BackgroundMedium,
    /// `(outer radius, κ)` per layer; the exterior is appended with radius ∞.
    layers: Vec<(f64, f64)>,
    waves: Vec<PartialWave>,
    ell_max: usize,
    /// Degrees beyond which `|t_ℓ| < 1e-17`.
    ell_scatter: usize,
}

impl GreenEvaluator {
    /// Default truncation `ceil(k0_max · radius) + 25` with `radius` the
    /// largest evaluation radius of interest (at least `b0`).
    pub fn new(medium: &BackgroundMedium, radius: f64) -> Result<Self> {
        let ell = (medium.k0_max() * radius.max(medium.b0)).ceil() as usize + 25;
        Self::with_ell_max(medium, ell)
    }

    pub fn with_ell_max(medium: &BackgroundMedium, ell_max: usize) -> Result<Self> {
        let mut layers = medium.layers();
        layers.push((f64::INFINITY, medium.k));
        let nl = layers.len();
        let mut waves = Vec::with_capacity(ell_max + 1);
        let mut ell_scatter = 0;
        'ell: for ell in 0..=ell_max {
            let mut reg = vec![(1.0, 0.0); nl];
            let mut reg_log = vec![0.0; nl];
            for i in 1..nl {
                let rho = layers[i - 1].0;
                let (ka, kb) = (layers[i - 1].1, layers[i].1);
                let (a, b) = reg[i - 1];
                let (ja, ya, dja, dya) = basis_at(ell, ka * rho);
                let psi = a * ja + b * ya;
                let dpsi = ka * (a * dja + b * dya);
                let x = kb * rho;
                let (jb, yb, djb, dyb) = basis_at(ell, x);
                let na = x * x * (dyb * psi - yb * dpsi / kb);
                let nb = x * x * (-djb * psi + jb * dpsi / kb);
                let scale = na.abs().max(nb.abs());
                if !(scale.is_finite() && scale > 0.0) {
                    // Degrees this high are negligible at this radius; stop here.
                    break 'ell;
                }
                reg[i] = (na / scale, nb / scale);
                reg_log[i] = reg_log[i - 1] + scale.ln();
            }
            let (alpha, beta) = reg[nl - 1];
            let t = Complex64::new(beta, 0.0) / Complex64::new(-beta, alpha);

            let mut out = vec![(Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)); nl];
            let mut out_log = vec![0.0; nl];
            for i in (0..nl - 1).rev() {
                let rho = layers[i].0;
                let (ka, kb) = (layers[i].1, layers[i + 1].1);
                let (c, d) = out[i + 1];
                let (jb, yb, djb, dyb) = basis_at(ell, kb * rho);
                let psi = c * jb + d * yb;
                let dpsi = (c * djb + d * dyb) * kb;
                let x = ka * rho;
                let (ja, ya, dja, dya) = basis_at(ell, x);
                let nc = (psi * dya - dpsi * (ya / ka)) * (x * x);
                let nd = (-psi * dja + dpsi * (ja / ka)) * (x * x);
                let scale = nc.norm().max(nd.norm());
                if !(scale.is_finite() && scale > 0.0) {
                    // Degrees this high are negligible at this radius; stop here.
                    break 'ell;
                }
                out[i] = (nc / scale, nd / scale);
                out_log[i] = out_log[i + 1] + scale.ln();
            }
            if t.norm() > 1e-17 {
                ell_scatter = ell + 1;
            }
            waves.push(PartialWave { reg, reg_log, out, out_log, t });
        }
        if waves.is_empty() {
            return Err(Error::domain("no partial wave could be computed for this medium"));
        }
        let ell_max = waves.len() - 1;
        Ok(Self { medium: medium.clone(), layers, waves, ell_max, ell_scatter })
    }

    pub fn medium(&self) -> &BackgroundMedium {
        &self.medium
    }

    pub fn ell_max(&self) -> usize {
        self.ell_max
    }

    /// Exterior coefficients `t_ℓ`.
    pub fn t_coefficients(&self) -> Vec<Complex64> {
        self.waves.iter().map(|w| w.t).collect()
    }

    fn layer_index(&self, r: f64) -> usize {
        self.layers.iter().position(|l| r <= l.0).unwrap_or(self.layers.len() - 1)
    }

    /// `A_q(α′, α) = (−i/k) Σ (2ℓ+1) t_ℓ P_ℓ(α′·α)`.
    pub fn amplitude(&self, alpha_out: &[f64; 3], alpha_in: &[f64; 3]) -> Complex64 {
        if self.ell_scatter == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let p = legendre_array(self.ell_scatter - 1, cos_between(alpha_out, alpha_in));
        let s: Complex64 = self.waves[..self.ell_scatter]
            .iter()
            .zip(&p)
            .enumerate()
            .map(|(l, (w, p))| w.t * ((2 * l + 1) as f64 * p))
            .sum();
        s * Complex64::new(0.0, -1.0 / self.medium.k)
    }

    /// Radial expansion of `U₀(x, ·)` at a fixed point `x`.
    pub fn u0_expansion(&self, x: &[f64; 3]) -> U0Expansion {
        let r = norm3(x);
        let k = self.medium.k;
        if self.ell_scatter == 0 {
            return U0Expansion { k, x: *x, plane_wave: true, coeffs: Vec::new() };
        }
        let li = self.layer_index(r);
        let nl = self.layers.len();
        if li == nl - 1 {
            let lmax = self.ell_scatter - 1;
            let h = spherical_hankel_h1_array(lmax, k * r).expect("exterior radius positive");
            let mut phase = Complex64::new(1.0, 0.0);
            let coeffs = (0..=lmax)
                .map(|l| {
                    let c = phase * ((2 * l + 1) as f64) * self.waves[l].t * h[l];
                    phase *= Complex64::i();
                    c
                })
                .collect();
            return U0Expansion { k, x: *x, plane_wave: true, coeffs };
        }
        let kappa = self.layers[li].1;
        let lmax = ((self.medium.k0_max() * r).ceil() as usize + 25).min(self.ell_max);
        let coeffs = if r == 0.0 {
            let c = self.waves[0].reg_log[li] - self.waves[0].reg_log[nl - 1];
            let w = &self.waves[0];
            vec![(1.0 + w.t) / w.reg[nl - 1].0 * (w.reg[li].0 * c.exp())]
        } else {
            let j = spherical_bessel_j_array(lmax, kappa * r).expect("positive");
            let y = if li == 0 { vec![0.0; lmax + 1] } else { spherical_bessel_y_array(lmax, kappa * r).expect("positive") };
            let mut phase = Complex64::new(1.0, 0.0);
            (0..=lmax)
                .map(|l| {
                    let w = &self.waves[l];
                    let (a, b) = w.reg[li];
                    let (alpha, beta) = w.reg[nl - 1];
                    let scale = (w.reg_log[li] - w.reg_log[nl - 1]).exp();
                    let psi = if li == 0 { a * j[l] } else { a * j[l] + b * y[l] };
                    // (1+t)/α with α the exterior j-coefficient; 1+t = iα/(iα−β).
                    let amp = Complex64::new(0.0, 1.0) / Complex64::new(-beta, alpha);
                    let c = phase * ((2 * l + 1) as f64) * amp * (psi * scale);
                    phase *= Complex64::i();
                    c
                })
                .collect()
        };
        U0Expansion { k, x: *x, plane_wave: false, coeffs }
    }

    /// Scattering solution `U₀(x, α)`.
    pub fn u0(&self, x: &[f64; 3], alpha: &[f64; 3]) -> Complex64 {
        self.u0_expansion(x).eval(alpha)
    }

    /// Green's function `G(x, y)` of the layered medium.
    pub fn green(&self, x: &[f64; 3], y: &[f64; 3]) -> Result<Complex64> {
        let d = dist(x, y);
        if d == 0.0 {
            return Err(Error::Singular(format!("Green's function evaluated at coincident points {x:?}")));
        }
        let k = self.medium.k;
        if self.ell_scatter == 0 {
            return Ok(free_green(k, d));
        }
        let (rx, ry) = (norm3(x), norm3(y));
        let (rs, rl) = if rx <= ry { (rx, ry) } else { (ry, rx) };
        let (ls, ll) = (self.layer_index(rs), self.layer_index(rl));
        let nl = self.layers.len();
        let cosg = cos_between(x, y);
        let p = legendre_array(self.ell_max, cosg);
        let (ks, kl) = (self.layers[ls].1, self.layers[ll].1);
        let same = ls == ll;
        let mut sum = if same { free_green(kl, d) } else { Complex64::new(0.0, 0.0) };

        let js = if rs > 0.0 { spherical_bessel_j_array(self.ell_max, ks * rs)? } else { unit_j(self.ell_max) };
        let need_ys = ls != 0;
        let ys = if need_ys { finite_prefix(spherical_bessel_y_array(self.ell_max, ks * rs)?) } else { Vec::new() };
        let jl = spherical_bessel_j_array(self.ell_max, kl * rl)?;
        let yl = finite_prefix(spherical_bessel_y_array(self.ell_max, kl * rl)?);
        let mut lcap = self.ell_max.min(yl.len().saturating_sub(1));
        if need_ys {
            lcap = lcap.min(ys.len().saturating_sub(1));
        }

        let mut small = 0;
        for l in 0..=lcap {
            let w = &self.waves[l];
            let term = if same {
                let (a, b) = w.reg[ls];
                let (c, dd) = w.out[ls];
                let delta = c * (-b) + dd * a;
                let ysl = if need_ys { ys[l] } else { 0.0 };
                let bracket = (c * a + Complex64::i() * delta) * (js[l] * jl[l])
                    + c * b * (js[l] * yl[l] + ysl * jl[l])
                    + dd * b * (ysl * yl[l]);
                -bracket * (kl / delta)
            } else {
                let (a, b) = w.reg[ls];
                let (c, dd) = w.out[ll];
                let (alpha, beta) = w.reg[nl - 1];
                let psi_s = a * js[l] + if need_ys { b * ys[l] } else { 0.0 };
                let psi_l = c * jl[l] + dd * yl[l];
                let scale = (w.reg_log[ls] - w.reg_log[nl - 1] + w.out_log[ll]).exp();
                -psi_l * psi_s * (scale * k) / Complex64::new(-beta, alpha)
            };
            let contrib = term * ((2 * l + 1) as f64 / FOUR_PI * p[l]);
            sum += contrib;
            let kr = ks.max(kl) * rl;
            if (l as f64) > kr + 2.0 && contrib.norm() <= 1e-15 * sum.norm().max(1e-300) {
                small += 1;
                if small >= 3 {
                    break;
                }
            } else {
                small = 0;
            }
        }
        Ok(sum)
    }
}

fn unit_j(ell_max: usize) -> Vec<f64> {
    let mut v = vec![0.0; ell_max + 1];
    v[0] = 1.0;
    v
}

fn finite_prefix(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().position(|x| !x.is_finite() || x.abs() > 1e280).unwrap_or(v.len());
    v[..n].to_vec()
}

/// `U₀(x, α) = [e^{ikα·x}] + Σ_ℓ c_ℓ P_ℓ(α·x̂)` for a fixed `x`.
#[derive(Debug, Clone)]
pub struct U0Expansion {
    k: f64,
    x: [f64; 3],
    plane_wave: bool,
    coeffs: Vec<Complex64>,
}

impl U0Expansion {
    pub fn eval(&self, alpha: &[f64; 3]) -> Complex64 {
        let x = &self.x;
        let mut s = if self.plane_wave {
            let ph = self.k * (alpha[0] * x[0] + alpha[1] * x[1] + alpha[2] * x[2]);
            Complex64::from_polar(1.0, ph)
        } else {
            Complex64::new(0.0, 0.0)
        };
        if self.coeffs.is_empty() {
            return s;
        }
        let c = cos_between(alpha, x);
        let (mut p0, mut p1) = (1.0, c);
        s += self.coeffs[0];
        for (l, coef) in self.coeffs.iter().enumerate().skip(1) {
            if l > 1 {
                let lf = l as f64;
                let p2 = ((2.0 * lf - 1.0) * c * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
            }
            s += coef * p1;
        }
        s
    }
}

pub fn green_function(medium: &BackgroundMedium, x: &[f64; 3], y: &[f64; 3]) -> Result<Complex64> {
    let radius = norm3(x).max(norm3(y));
    GreenEvaluator::new(medium, radius.min(medium.b0 * 4.0))?.green(x, y)
}

pub fn scattering_solution_u0(medium: &BackgroundMedium, x: &[f64; 3], alpha: &[f64; 3]) -> Result<Complex64> {
    check_unit(alpha)?;
    Ok(GreenEvaluator::new(medium, norm3(x).min(medium.b0))?.u0(x, alpha))
}

pub fn background_amplitude_aq(medium: &BackgroundMedium, alpha_out: &[f64; 3], alpha_in: &[f64; 3]) -> Result<Complex64> {
    check_unit(alpha_out)?;
    check_unit(alpha_in)?;
    Ok(GreenEvaluator::new(medium, medium.b0)?.amplitude(alpha_out, alpha_in))
}

/// Result of the grid-based cross-check solver for a general potential.
#[derive(Debug, Clone)]
pub struct BornSeriesGreen {
    pub value: Complex64,
    pub iterations: usize,
    pub residual: f64,
    /// Always set: this path is a low-accuracy oracle.
    pub low_accuracy: bool,
}

/// `G(x, y)` for an arbitrary potential `q` supported on the grid, from
/// `G(·,y) = g(·,y) − ∫ g(·,z) q(z) G(z,y) dz` solved on the grid, then
/// evaluated at `x`. Both `x` and `y` must lie outside the grid cells.
/// Uses the Born (Neumann) series when it converges and GMRES otherwise.
pub fn born_series_green<Q>(k: f64, q: Q, grid: &VolumeGrid, x: &[f64; 3], y: &[f64; 3]) -> Result<BornSeriesGreen>
where
    Q: Fn(&[f64; 3]) -> f64,
{
    let op = VolumeOperator::new(grid, k)?;
    let qv: Vec<f64> = grid.points().iter().map(&q).collect();
    let rhs: Vec<Complex64> = grid.points().iter().map(|z| free_green(k, dist(z, y))).collect();
    let kmul = |v: &[Complex64]| -> Vec<Complex64> {
        let qvv: Vec<Complex64> = v.iter().zip(&qv).map(|(a, b)| a * *b).collect();
        op.apply(&qvv).into_iter().map(|z| -z).collect()
    };
    let mut out = neumann_series(kmul, &rhs, 1e-10, 200);
    if !out.converged {
        out = gmres(
            |v| {
                let kv = kmul(v);
                v.iter().zip(kv).map(|(a, b)| a - b).collect()
            },
            &rhs,
            None,
            1e-10,
            50,
            500,
        );
        if !out.converged {
            return Err(Error::Divergence { iterations: out.iterations, residual: out.residual, spectral_radius: f64::NAN });
        }
    }
    let qg: Vec<Complex64> = out.solution.iter().zip(&qv).map(|(a, b)| a * *b).collect();
    let value = free_green(k, dist(x, y)) - op.evaluate_at(x, &qg);
    Ok(BornSeriesGreen { value, iterations: out.iterations, residual: out.residual, low_accuracy: true })
}
