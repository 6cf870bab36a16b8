#![allow(dead_code)]
//! Independent closed-form oracles shared by the integration tests.

use num_complex::Complex64;

pub const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Spherical Bessel j_0..j_n by Miller's backward recurrence, normalized
/// with j_0 = sin x / x.
pub fn sph_j(n: usize, x: f64) -> Vec<f64> {
    let start = n + 20 + (2.0 * x) as usize;
    let mut v = vec![0.0; start + 2];
    v[start] = 1e-30;
    for l in (1..=start).rev() {
        v[l - 1] = (2 * l + 1) as f64 / x * v[l] - v[l + 1];
        if v[l - 1].abs() > 1e250 {
            for t in v.iter_mut() {
                *t *= 1e-250;
            }
        }
    }
    let scale = (x.sin() / x) / v[0];
    v.truncate(n + 1);
    v.iter().map(|t| t * scale).collect()
}

/// Spherical Neumann y_0..y_n by upward recurrence.
pub fn sph_y(n: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    v[0] = -x.cos() / x;
    if n >= 1 {
        v[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for l in 1..n {
        v[l + 1] = (2 * l + 1) as f64 / x * v[l] - v[l - 1];
    }
    v
}

fn deriv(f: &[f64], x: f64) -> Vec<f64> {
    // f'_l = f_{l-1} − (l+1)/x f_l, and f'_0 = −f_1
    (0..f.len() - 1)
        .map(|l| if l == 0 { -f[1] } else { f[l - 1] - (l + 1) as f64 / x * f[l] })
        .collect()
}

fn legendre(n: usize, t: f64) -> Vec<f64> {
    let mut p = vec![1.0, t];
    for l in 1..n {
        p.push(((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64);
    }
    p.truncate(n + 1);
    p
}

/// Far-field amplitude (e^{ikr}/r convention) of a ball of radius `r0` in
/// which `(∇² + k² − c)u = 0`, i.e. interior wavenumber √(k² − c), c < k².
pub fn constant_sphere_amplitude(k: f64, c: f64, r0: f64, cos_angle: f64) -> Complex64 {
    assert!(c < k * k);
    let kin = (k * k - c).sqrt();
    let n = (k * r0) as usize + 30;
    let jo = sph_j(n + 1, k * r0);
    let yo = sph_y(n + 1, k * r0);
    let ji = sph_j(n + 1, kin * r0);
    let (djo, dyo, dji) = (deriv(&jo, k * r0), deriv(&yo, k * r0), deriv(&ji, kin * r0));
    let p = legendre(n, cos_angle);
    let mut a = Complex64::new(0.0, 0.0);
    for l in 0..=n {
        let h = Complex64::new(jo[l], yo[l]);
        let dh = Complex64::new(djo[l], dyo[l]);
        let num = kin * dji[l] * jo[l] - k * djo[l] * ji[l];
        let den = k * dh * ji[l] - kin * dji[l] * h;
        let t = num / den;
        a += t * ((2 * l + 1) as f64) * p[l];
    }
    a * Complex64::new(0.0, -1.0 / k)
}

/// `∫ e^{−iξ·x} exp(−|x|²/(2s²)) dx` for real `ξ`.
pub fn gaussian_transform(s: f64, xi: &[f64; 3]) -> f64 {
    let xx = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    (2.0 * std::f64::consts::PI * s * s).powf(1.5) * (-s * s * xx / 2.0).exp()
}

pub fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}
