//! Quadrature on the unit sphere, on radial shells and on Cartesian grids
//! clipped to a ball.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Product rule on S²: Gauss–Legendre in `cos ϑ` times the trapezoid rule in
/// azimuth. Integrates spherical harmonics up to `degree` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereQuadrature {
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    degree: usize,
}

impl SphereQuadrature {
    pub fn new(degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::domain("sphere quadrature degree must be at least 1"));
        }
        let n_theta = degree / 2 + 1;
        let n_phi = degree + 1;
        let (ct, wt) = gauss_legendre(n_theta);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (c, w) in ct.iter().zip(&wt) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for j in 0..n_phi {
                let (sp, cp) = (j as f64 * dphi).sin_cos();
                nodes.push([s * cp, s * sp, *c]);
                weights.push(w * dphi);
            }
        }
        Ok(Self { nodes, weights, degree })
    }

    /// Rebuild from explicit nodes (e.g. read from a file); nodes are
    /// checked to be unit vectors and the weights to sum to 4π.
    pub fn from_parts(nodes: Vec<[f64; 3]>, weights: Vec<f64>, degree: usize) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::Format("sphere quadrature needs equally many nodes and weights".into()));
        }
        for n in &nodes {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Format(format!("quadrature node {n:?} is not a unit vector")));
            }
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Format("quadrature weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - FOUR_PI).abs() > 1e-10 {
            return Err(Error::Format(format!("quadrature weights sum to {total}, expected 4π")));
        }
        Ok(Self { nodes, weights, degree })
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<T, F>(&self, mut f: F) -> T
    where
        F: FnMut(&[f64; 3]) -> T,
        T: std::ops::Mul<f64, Output = T> + std::iter::Sum,
    {
        self.nodes.iter().zip(&self.weights).map(|(n, w)| f(n) * *w).sum()
    }
}

/// Radii `b0 < b1 < b2`: `b0` bounds the host domain, `[b1, b2]` is the
/// shell on which the synthesis functional is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellSpec {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
}

impl ShellSpec {
    pub fn new(b0: f64, b1: f64, b2: f64) -> Result<Self> {
        let spec = Self { b0, b1, b2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.b0 && self.b0 < self.b1 && self.b1 < self.b2 && self.b2.is_finite()) {
            return Err(Error::domain(format!(
                "shell radii must satisfy 0 < b0 < b1 < b2, got {} {} {}",
                self.b0, self.b1, self.b2
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        FOUR_PI / 3.0 * (self.b2.powi(3) - self.b1.powi(3))
    }
}

/// Cartesian cell layout behind a ball grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Lower corner of cell (0, 0, 0).
    pub origin: [f64; 3],
    pub spacing: f64,
    pub dims: [usize; 3],
    /// Lattice index of each retained cell, parallel to the grid points.
    pub cells: Vec<[usize; 3]>,
}

impl Lattice {
    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.spacing)
    }

    /// Lattice cell containing `x`, if inside the bounding box.
    pub fn locate(&self, x: &[f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let t = (x[a] - self.origin[a]) / self.spacing;
            if !(t >= 0.0) || t >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = t as usize;
        }
        Some(idx)
    }

    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn total_cells(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Collocation points with positive weights discretizing a volume integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    spacing: f64,
    lattice: Option<Lattice>,
}

impl VolumeGrid {
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<T, F>(&self, mut f: F) -> T
    where
        F: FnMut(&[f64; 3]) -> T,
        T: std::ops::Mul<f64, Output = T> + std::iter::Sum,
    {
        self.points.iter().zip(&self.weights).map(|(p, w)| f(p) * *w).sum()
    }

    /// Index of the grid point whose lattice cell contains `x`.
    pub fn locate(&self, x: &[f64; 3]) -> Option<usize> {
        let lattice = self.lattice.as_ref()?;
        let cell = lattice.locate(x)?;
        // Cells are stored in lexicographic lattice order, so binary search works.
        lattice.cells.binary_search(&cell).ok()
    }
}

/// Product rule on `b1 ≤ |x| ≤ b2`: radial Gauss–Legendre times a sphere rule.
pub fn build_shell_grid(spec: &ShellSpec, n_r: usize, ang_degree: usize) -> Result<VolumeGrid> {
    spec.validate()?;
    if n_r < 2 {
        return Err(Error::domain("shell grid needs at least two radial nodes"));
    }
    let sphere = SphereQuadrature::new(ang_degree)?;
    let (xr, wr) = gauss_legendre(n_r);
    let half = 0.5 * (spec.b2 - spec.b1);
    let mid = 0.5 * (spec.b2 + spec.b1);
    let mut points = Vec::with_capacity(n_r * sphere.len());
    let mut weights = Vec::with_capacity(n_r * sphere.len());
    for (x, w) in xr.iter().zip(&wr) {
        let r = mid + half * x;
        let radial_w = w * half * r * r;
        for (n, sw) in sphere.nodes().iter().zip(sphere.weights()) {
            points.push([r * n[0], r * n[1], r * n[2]]);
            weights.push(radial_w * sw);
        }
    }
    Ok(VolumeGrid { points, weights, spacing: 2.0 * half / n_r as f64, lattice: None })
}

/// Length of `[lo, hi] ∩ [-e, e]`.
fn overlap(lo: f64, hi: f64, e: f64) -> f64 {
    (hi.min(e) - lo.max(-e)).max(0.0)
}

/// Fraction of the cube `[lo, lo+h]³` inside the ball of radius `radius`
/// and the offset of the centroid of that part from the cube centre,
/// integrating the exact chord length over a sub-grid in the first two axes.
fn cell_moments(lo: [f64; 3], h: f64, radius: f64) -> (f64, [f64; 3]) {
    const SUB: usize = 16;
    let dh = h / SUB as f64;
    let c = [lo[0] + 0.5 * h, lo[1] + 0.5 * h, lo[2] + 0.5 * h];
    let mut acc = 0.0;
    let mut m = [0.0; 3];
    for i in 0..SUB {
        let x = lo[0] + (i as f64 + 0.5) * dh;
        for j in 0..SUB {
            let y = lo[1] + (j as f64 + 0.5) * dh;
            let rem = radius * radius - x * x - y * y;
            if rem > 0.0 {
                let e = rem.sqrt();
                let len = overlap(lo[2], lo[2] + h, e);
                if len > 0.0 {
                    let mid = 0.5 * (lo[2].max(-e) + (lo[2] + h).min(e));
                    acc += len;
                    m[0] += len * (x - c[0]);
                    m[1] += len * (y - c[1]);
                    m[2] += len * (mid - c[2]);
                }
            }
        }
    }
    if acc == 0.0 {
        return (0.0, [0.0; 3]);
    }
    (acc * dh * dh / (h * h * h), m.map(|v| v / acc))
}

/// Uniform Cartesian cells of side close to `h` tiling `[-R, R]³`, clipped to
/// the ball `|x| ≤ R`. Boundary cells keep their center as collocation point
/// and carry the volume of their intersection with the ball. Part of that
/// volume is then moved to the inward neighbour along each axis so that the
/// rule also reproduces the first moments of every cut cell, which makes it
/// second order for integrands smooth up to the sphere. The weights are
/// finally rescaled so that they sum to the exact ball volume.
pub fn build_ball_grid(radius: f64, h: f64) -> Result<VolumeGrid> {
    if !(radius > 0.0) || !(h > 0.0) || !radius.is_finite() {
        return Err(Error::domain(format!("ball grid needs positive radius and spacing, got {radius}, {h}")));
    }
    let n = (2.0 * radius / h).ceil().max(1.0) as usize;
    let h = 2.0 * radius / n as f64;
    let origin = [-radius; 3];
    let cell_volume = h * h * h;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut cells = Vec::new();
    let mut offsets = Vec::new();
    let mut slot = vec![usize::MAX; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let lo = [origin[0] + i as f64 * h, origin[1] + j as f64 * h, origin[2] + k as f64 * h];
                let hi = [lo[0] + h, lo[1] + h, lo[2] + h];
                let mut near = 0.0;
                let mut far = 0.0;
                for a in 0..3 {
                    let c = if lo[a] > 0.0 { lo[a] } else if hi[a] < 0.0 { hi[a] } else { 0.0 };
                    near += c * c;
                    let f = lo[a].abs().max(hi[a].abs());
                    far += f * f;
                }
                let (frac, off) = if far.sqrt() <= radius {
                    (1.0, [0.0; 3])
                } else if near.sqrt() >= radius {
                    (0.0, [0.0; 3])
                } else {
                    cell_moments(lo, h, radius)
                };
                if frac > 1e-12 {
                    slot[(i * n + j) * n + k] = points.len();
                    points.push([lo[0] + 0.5 * h, lo[1] + 0.5 * h, lo[2] + 0.5 * h]);
                    weights.push(frac * cell_volume);
                    cells.push([i, j, k]);
                    offsets.push(off);
                }
            }
        }
    }
    let mut moved = vec![0.0; weights.len()];
    for (p, off) in offsets.iter().enumerate() {
        if off.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut transfers: Vec<(usize, f64)> = Vec::with_capacity(3);
        for a in 0..3 {
            if off[a] == 0.0 {
                continue;
            }
            let mut idx = cells[p].map(|v| v as i64);
            idx[a] += if off[a] > 0.0 { 1 } else { -1 };
            if idx.iter().any(|v| *v < 0 || *v >= n as i64) {
                continue;
            }
            let q = slot[((idx[0] as usize) * n + idx[1] as usize) * n + idx[2] as usize];
            if q != usize::MAX {
                transfers.push((q, weights[p] * off[a].abs() / h));
            }
        }
        let total: f64 = transfers.iter().map(|t| t.1).sum();
        let scale = if total > weights[p] { weights[p] / total } else { 1.0 };
        for (q, t) in transfers {
            moved[q] += t * scale;
            moved[p] -= t * scale;
        }
    }
    // A sliver cell can give away nearly all of its weight; keep a floor so
    // that every weight stays positive.
    for (w, m) in weights.iter_mut().zip(&moved) {
        *w = (*w + m).max(0.01 * *w);
    }
    let exact = FOUR_PI / 3.0 * radius.powi(3);
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w *= exact / total;
    }
    Ok(VolumeGrid {
        points,
        weights,
        spacing: h,
        lattice: Some(Lattice { origin, spacing: h, dims: [n, n, n], cells }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{spherical_harmonic, spherical_harmonics_all, HarmonicIndex};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn sphere_constant_and_orthogonality() {
        let q = SphereQuadrature::new(3).unwrap();
        assert_relative_eq!(q.integrate(|_| 1.0), FOUR_PI, epsilon = 1e-12);
        assert!(q.nodes().iter().all(|n| ((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs() < 1e-12));

        let q = SphereQuadrature::new(10).unwrap();
        let idx = HarmonicIndex::new(5, 2).unwrap();
        let s: Complex64 = q.integrate(|n| spherical_harmonic(idx, n).unwrap());
        assert!(s.norm() < 1e-12);

        let q = SphereQuadrature::new(20).unwrap();
        let idx = HarmonicIndex::new(9, -4).unwrap();
        let s: f64 = q.integrate(|n| spherical_harmonic(idx, n).unwrap().norm_sqr());
        assert_relative_eq!(s, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sphere_rule_is_exact_for_harmonic_products() {
        let deg = 12;
        let q = SphereQuadrature::new(deg).unwrap();
        let lmax = deg / 2;
        let vals: Vec<Vec<Complex64>> = q.nodes().iter().map(|n| spherical_harmonics_all(lmax, n).unwrap()).collect();
        let count = (lmax + 1) * (lmax + 1);
        for a in 0..count {
            for b in 0..count {
                let s: Complex64 = vals.iter().zip(q.weights()).map(|(v, w)| v[a] * v[b].conj() * *w).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).norm() < 1e-10, "a={a} b={b} s={s}");
            }
        }
    }

    #[test]
    fn shell_volume_and_moments() {
        let spec = ShellSpec::new(0.5, 1.0, 2.0).unwrap();
        let g = build_shell_grid(&spec, 4, 6).unwrap();
        assert_relative_eq!(g.total_weight(), FOUR_PI / 3.0 * 7.0, max_relative = 1e-8);
        let r2 = g.integrate(|x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        assert_relative_eq!(r2, FOUR_PI * 31.0 / 5.0, max_relative = 1e-10);
        let x1 = g.integrate(|x| x[0]);
        assert!(x1.abs() < 1e-10);
    }

    #[test]
    fn invalid_shells_rejected() {
        assert!(ShellSpec::new(1.0, 0.5, 2.0).is_err());
        assert!(ShellSpec::new(0.0, 0.5, 2.0).is_err());
        let spec = ShellSpec { b0: 1.0, b1: 2.0, b2: 1.5 };
        assert!(build_shell_grid(&spec, 3, 4).is_err());
        let ok = ShellSpec::new(0.5, 1.0, 2.0).unwrap();
        assert!(build_shell_grid(&ok, 1, 4).is_err());
    }

    #[test]
    fn ball_grid_volume_and_locate() {
        let g = build_ball_grid(1.3, 0.2).unwrap();
        assert_relative_eq!(g.total_weight(), FOUR_PI / 3.0 * 1.3f64.powi(3), max_relative = 1e-12);
        assert!(g.weights().iter().all(|w| *w > 0.0));
        for h in [0.3, 0.1, 0.07] {
            let g = build_ball_grid(1.0, h).unwrap();
            assert!(g.weights().iter().all(|w| *w > 0.0));
            assert_relative_eq!(g.total_weight(), FOUR_PI / 3.0, max_relative = 1e-12);
        }
        for (i, p) in g.points().iter().enumerate().step_by(37) {
            assert_eq!(g.locate(p), Some(i));
        }
        assert_eq!(g.locate(&[5.0, 0.0, 0.0]), None);
    }

    #[test]
    fn ball_grid_second_order_for_smooth_integrand() {
        // ∫_{|x|≤1} e^{-|x|²} dx = 4π(√π/4·erf(1) − 1/(2e))
        let erf1 = 0.8427007929497149;
        let exact = 4.0 * std::f64::consts::PI * (std::f64::consts::PI.sqrt() / 4.0 * erf1 - 0.5 / std::f64::consts::E);
        let err = |h: f64| {
            let g = build_ball_grid(1.0, h).unwrap();
            (g.integrate(|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()) - exact).abs()
        };
        let e: Vec<f64> = [0.4, 0.2, 0.1, 0.05].iter().map(|h| err(*h)).collect();
        let ratios: Vec<f64> = e.windows(2).map(|w| w[0] / w[1]).collect();
        // The leading term is the interior midpoint error (h²/24)∮∂f/∂n; a
        // boundary term of order h³ and opposite sign makes the ratio climb
        // to 4 from below.
        assert!(ratios.windows(2).all(|r| r[1] > r[0]), "{ratios:?}");
        assert!((ratios[2] - 4.0).abs() < 0.08, "{ratios:?}");
        let midpoint = 0.05f64.powi(2) / 24.0 * 4.0 * std::f64::consts::PI * 2.0 / std::f64::consts::E;
        assert!((e[3] - midpoint).abs() < 0.02 * midpoint);
    }
}
