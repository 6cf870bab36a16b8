//! Spherical Bessel and Hankel functions, normalized spherical harmonics on
//! the unit sphere and their continuation to complex directions.
//!
//! Hankel functions returned by [`spherical_hankel_h`] use the outgoing
//! normalization `h_ℓ(r) ~ e^{ir}/r`, i.e. `h_ℓ = i^{ℓ+1} h_ℓ^{(1)}` where
//! `h_ℓ^{(1)} = j_ℓ + i y_ℓ` is the textbook third-kind function. Every
//! other module uses this convention; the textbook function is only exposed
//! as [`spherical_hankel_h1_array`] for partial-wave matching.

use num_complex::Complex64;

use crate::error::{Error, Result};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Degree/order pair `(ℓ, m)` with `|m| ≤ ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HarmonicIndex {
    ell: usize,
    m: i64,
}

impl HarmonicIndex {
    pub fn new(ell: usize, m: i64) -> Result<Self> {
        if m.unsigned_abs() as usize > ell {
            return Err(Error::domain(format!("harmonic order |m|={} exceeds degree {ell}", m.abs())));
        }
        Ok(Self { ell, m })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn m(&self) -> i64 {
        self.m
    }

    /// Position of this index in the flat `ℓ² + ℓ + m` layout used by
    /// [`spherical_harmonics_all`].
    pub fn flat(&self) -> usize {
        lm_index(self.ell, self.m)
    }
}

/// Flat index of `(ℓ, m)` in arrays holding all harmonics up to some degree.
#[inline]
pub fn lm_index(ell: usize, m: i64) -> usize {
    ((ell * ell + ell) as i64 + m) as usize
}

/// Number of harmonics with degree `≤ ell_max`.
#[inline]
pub fn lm_count(ell_max: usize) -> usize {
    (ell_max + 1) * (ell_max + 1)
}

/// A point of the complex quadric `{θ ∈ ℂ³ : θ·θ = 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexDirection {
    components: [Complex64; 3],
    kappa: f64,
}

/// Tolerance on `θ·θ = 1` for membership in the complex quadric.
pub const QUADRIC_TOL: f64 = 1e-12;

impl ComplexDirection {
    pub fn new(components: [Complex64; 3]) -> Result<Self> {
        let dot = bilinear_dot(&components, &components);
        // Rounding in θ·θ grows with |θ|²; the tolerance is relative to that scale.
        let scale = components.iter().map(|c| c.norm_sqr()).sum::<f64>().max(1.0);
        if (dot - 1.0).norm() > QUADRIC_TOL * scale {
            return Err(Error::domain(format!("θ·θ = {dot} is not 1")));
        }
        let kappa = components.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
        Ok(Self { components, kappa })
    }

    pub fn from_real(dir: [f64; 3]) -> Result<Self> {
        Self::new(dir.map(|x| Complex64::new(x, 0.0)))
    }

    pub fn components(&self) -> &[Complex64; 3] {
        &self.components
    }

    /// `κ = |Im θ|`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Euclidean norm of the component moduli, `(Σ|θ_j|²)^{1/2}`.
    pub fn magnitude(&self) -> f64 {
        self.components.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `θ·x` for a real point `x` (bilinear, no conjugation).
    pub fn dot_real(&self, x: &[f64; 3]) -> Complex64 {
        self.components[0] * x[0] + self.components[1] * x[1] + self.components[2] * x[2]
    }
}

/// Bilinear (non-Hermitian) product `Σ a_j b_j`.
pub fn bilinear_dot(a: &[Complex64; 3], b: &[Complex64; 3]) -> Complex64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("radial argument must be positive and finite, got {r}")));
    }
    Ok(())
}

/// `j_0 … j_{ell_max}` at `r > 0` by Miller's downward recurrence.
///
/// The recurrence starts at `ell_max + max(15, ceil(r))` and is normalized
/// against whichever of `j_0`, `j_1` has the larger closed-form magnitude.
/// When `r` exceeds every requested degree the upward recurrence is used.
pub fn spherical_bessel_j_array(ell_max: usize, r: f64) -> Result<Vec<f64>> {
    check_radius(r)?;
    if r > (ell_max + 1) as f64 {
        // Upward recurrence is stable while every requested degree is below r.
        let (s, c) = r.sin_cos();
        let mut out = Vec::with_capacity(ell_max + 1);
        out.push(s / r);
        if ell_max >= 1 {
            out.push(s / (r * r) - c / r);
        }
        for n in 1..ell_max {
            out.push((2 * n + 1) as f64 / r * out[n] - out[n - 1]);
        }
        return Ok(out);
    }
    let start = ell_max + 15usize.max(r.ceil() as usize);
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-300_f64.sqrt();
    // Downward: j_{n-1} = (2n+1)/r j_n - j_{n+1}
    let mut n = start;
    while n > 0 {
        let next = (2 * n + 1) as f64 / r * vals[n] - vals[n + 1];
        vals[n - 1] = next;
        if next.abs() > 1e250 {
            for v in vals[n - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
        n -= 1;
    }
    let (s, c) = r.sin_cos();
    let j0 = s / r;
    let scale = if r < 1.0 || j0.abs() >= (s / (r * r) - c / r).abs() {
        j0 / vals[0]
    } else {
        (s / (r * r) - c / r) / vals[1]
    };
    Ok(vals[..=ell_max].iter().map(|v| v * scale).collect())
}

/// `y_0 … y_{ell_max}` at `r > 0` by upward recurrence.
pub fn spherical_bessel_y_array(ell_max: usize, r: f64) -> Result<Vec<f64>> {
    check_radius(r)?;
    let (s, c) = r.sin_cos();
    let mut out = Vec::with_capacity(ell_max + 1);
    out.push(-c / r);
    if ell_max >= 1 {
        out.push(-c / (r * r) - s / r);
    }
    for n in 1..ell_max {
        let next = (2 * n + 1) as f64 / r * out[n] - out[n - 1];
        out.push(next);
    }
    Ok(out)
}

pub fn spherical_bessel_j(ell: usize, r: f64) -> Result<f64> {
    Ok(spherical_bessel_j_array(ell, r)?[ell])
}

pub fn spherical_bessel_y(ell: usize, r: f64) -> Result<f64> {
    Ok(spherical_bessel_y_array(ell, r)?[ell])
}

/// Textbook `h_ℓ^{(1)} = j_ℓ + i y_ℓ` for `ℓ = 0..=ell_max`.
pub fn spherical_hankel_h1_array(ell_max: usize, r: f64) -> Result<Vec<Complex64>> {
    let j = spherical_bessel_j_array(ell_max, r)?;
    let y = spherical_bessel_y_array(ell_max, r)?;
    Ok(j.into_iter().zip(y).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Outgoing Hankel functions normalized so that `h_ℓ(r) r e^{-ir} → 1`.
pub fn spherical_hankel_h_array(ell_max: usize, r: f64) -> Result<Vec<Complex64>> {
    let mut phase = Complex64::i();
    Ok(spherical_hankel_h1_array(ell_max, r)?
        .into_iter()
        .map(|h1| {
            let v = phase * h1;
            phase *= Complex64::i();
            v
        })
        .collect())
}

pub fn spherical_hankel_h(ell: usize, r: f64) -> Result<Complex64> {
    Ok(spherical_hankel_h_array(ell, r)?[ell])
}

/// Derivatives `f_ℓ'(r)` from values `f_0 … f_{L+1}` of any spherical
/// Bessel family (`f_ℓ' = f_{ℓ-1} - (ℓ+1)/r f_ℓ`, `f_0' = -f_1`).
/// Returns `L + 1` derivatives, one fewer than the input length.
pub fn bessel_derivatives<T>(values: &[T], r: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Neg<Output = T>,
{
    let n = values.len().saturating_sub(1);
    (0..n)
        .map(|l| {
            if l == 0 {
                -values[1]
            } else {
                values[l - 1] - values[l] * ((l + 1) as f64 / r)
            }
        })
        .collect()
}

/// Legendre polynomials `P_0(x) … P_{ell_max}(x)`.
pub fn legendre_array(ell_max: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(ell_max + 1);
    p.push(1.0);
    if ell_max >= 1 {
        p.push(x);
    }
    for l in 2..=ell_max {
        let lf = l as f64;
        let v = ((2.0 * lf - 1.0) * x * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
        p.push(v);
    }
    p
}

/// All `Y_ℓm` with `ℓ ≤ ell_max` evaluated on a vector `v` with `v·v = 1`.
///
/// The harmonics are evaluated as homogeneous polynomials of degree `ℓ`,
/// `Y_ℓm(v) = Q_ℓ^m(v₃)(v₁ + i v₂)^m` for `m ≥ 0` and
/// `Y_ℓ,-m(v) = (-1)^m Q_ℓ^m(v₃)(v₁ - i v₂)^m`, where `Q_ℓ^m` is the
/// orthonormalized associated Legendre function stripped of its
/// `sin^m ϑ` factor (Condon–Shortley phase included). For complex `v` this
/// is the analytic continuation; no angles are formed.
pub fn harmonics_polynomial(ell_max: usize, v: &[Complex64; 3]) -> Vec<Complex64> {
    let t = v[2];
    let plus = v[0] + Complex64::i() * v[1];
    let minus = v[0] - Complex64::i() * v[1];
    let mut out = vec![Complex64::new(0.0, 0.0); lm_count(ell_max)];

    let mut q_mm = Complex64::new(1.0 / FOUR_PI.sqrt(), 0.0);
    let mut plus_pow = Complex64::new(1.0, 0.0);
    let mut minus_pow = Complex64::new(1.0, 0.0);
    for m in 0..=ell_max {
        if m > 0 {
            let mf = m as f64;
            q_mm *= -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
            plus_pow *= plus;
            minus_pow *= minus;
        }
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let mut store = |l: usize, q: Complex64| {
            out[lm_index(l, m as i64)] = q * plus_pow;
            if m > 0 {
                out[lm_index(l, -(m as i64))] = q * minus_pow * sign;
            }
        };
        store(m, q_mm);
        if m == ell_max {
            break;
        }
        let mut q_prev = q_mm;
        let mut q_cur = t * q_mm * (2.0 * m as f64 + 3.0).sqrt();
        store(m + 1, q_cur);
        for l in (m + 2)..=ell_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let q_next = (t * q_cur - q_prev * b) * a;
            q_prev = q_cur;
            q_cur = q_next;
            store(l, q_cur);
        }
    }
    out
}

fn check_unit(dir: &[f64; 3]) -> Result<()> {
    let n2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
    if !n2.is_finite() || (n2.sqrt() - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("direction {dir:?} is not a unit vector")));
    }
    Ok(())
}

/// All `Y_ℓm(dir)` for `ℓ ≤ ell_max` on a real unit vector.
pub fn spherical_harmonics_all(ell_max: usize, dir: &[f64; 3]) -> Result<Vec<Complex64>> {
    check_unit(dir)?;
    Ok(harmonics_polynomial(ell_max, &dir.map(|x| Complex64::new(x, 0.0))))
}

/// Orthonormal spherical harmonic `Y_ℓm` at a real unit vector.
pub fn spherical_harmonic(idx: HarmonicIndex, dir: &[f64; 3]) -> Result<Complex64> {
    Ok(spherical_harmonics_all(idx.ell, dir)?[idx.flat()])
}

/// All continued harmonics `Y_ℓm(θ)` for `ℓ ≤ ell_max`, `θ` on the quadric.
pub fn spherical_harmonics_complex_all(ell_max: usize, theta: &ComplexDirection) -> Vec<Complex64> {
    harmonics_polynomial(ell_max, theta.components())
}

/// Analytic continuation of `Y_ℓm` to a complex direction.
pub fn spherical_harmonic_complex(idx: HarmonicIndex, theta: &ComplexDirection) -> Complex64 {
    spherical_harmonics_complex_all(idx.ell, theta)[idx.flat()]
}

/// Right-hand side of the growth bound `|Y_ℓ(θ)| ≤ e^{κρ}/(√(4π)|j_ℓ(ρ)|)`.
/// `rho` defaults to `ℓ + 1/2` when `None`.
pub fn continued_harmonic_bound(ell: usize, kappa: f64, rho: Option<f64>) -> Result<f64> {
    let rho = rho.unwrap_or(ell as f64 + 0.5);
    let j = spherical_bessel_j(ell, rho)?;
    Ok((kappa * rho).exp() / (FOUR_PI.sqrt() * j.abs()))
}
