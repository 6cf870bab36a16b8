//! Free-space volume potential `∫ g(x−y) w(y) v(y) dy` on a ball lattice,
//! applied by zero-padded FFT convolution.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, VolumeGrid};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// `∫_{[-1/2,1/2]³} |x|⁻¹ dx`.
pub const UNIT_CUBE_INVERSE_DISTANCE: f64 = 2.380_077_363_979_553;

/// Free-space outgoing kernel `e^{ik|x|} / (4π|x|)`.
pub fn free_green(k: f64, dist: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (FOUR_PI * dist), k * dist)
}

/// `∫_{cube of side h centred at 0} e^{ik|x|}/(4π|x|) dx`.
pub fn cube_self_integral(k: f64, h: f64) -> Complex64 {
    let singular = h * h * UNIT_CUBE_INVERSE_DISTANCE / FOUR_PI;
    // (e^{ikr} − 1)/r is bounded; integrate over one octant and multiply by 8.
    let (x, w) = gauss_legendre(10);
    let half = 0.25 * h;
    let mut acc = Complex64::new(0.0, 0.0);
    for (xa, wa) in x.iter().zip(&w) {
        let a = half * (1.0 + xa);
        for (xb, wb) in x.iter().zip(&w) {
            let b = half * (1.0 + xb);
            for (xc, wc) in x.iter().zip(&w) {
                let c = half * (1.0 + xc);
                let r = (a * a + b * b + c * c).sqrt();
                let val = if k * r < 1e-6 {
                    Complex64::new(-0.5 * k * k * r, k)
                } else {
                    (Complex64::new(0.0, k * r).exp() - 1.0) / r
                };
                acc += val * (wa * wb * wc);
            }
        }
    }
    let smooth = acc * (8.0 * half * half * half / FOUR_PI);
    singular + smooth
}

fn fft_axis(data: &mut [Complex64], n: usize, axis: usize, fft: &Arc<dyn Fft<f64>>, line: &mut Vec<Complex64>) {
    let stride = match axis {
        0 => n * n,
        1 => n,
        _ => 1,
    };
    line.resize(n, Complex64::new(0.0, 0.0));
    for a in 0..n {
        for b in 0..n {
            let base = match axis {
                0 => a * n + b,
                1 => a * n * n + b,
                _ => (a * n + b) * n,
            };
            for i in 0..n {
                line[i] = data[base + i * stride];
            }
            fft.process(line);
            for i in 0..n {
                data[base + i * stride] = line[i];
            }
        }
    }
}

/// Discretized free-space volume potential on the cells of a ball grid.
///
/// `apply(v)_i = Σ_{j≠i} g(x_i−x_j) w_j v_j + s_i v_i`, where the self term
/// `s_i` integrates the kernel exactly over the cell cube (scaled by the
/// cell's volume fraction).
pub struct VolumeOperator {
    k: f64,
    n: usize,
    padded: usize,
    cells: Vec<usize>,
    weights: Vec<f64>,
    points: Vec<[f64; 3]>,
    self_terms: Vec<Complex64>,
    kernel_hat: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for VolumeOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VolumeOperator").field("k", &self.k).field("n", &self.n).field("points", &self.points.len()).finish()
    }
}

impl VolumeOperator {
    pub fn new(grid: &VolumeGrid, k: f64) -> Result<Self> {
        let lattice = grid
            .lattice()
            .ok_or_else(|| Error::domain("volume operator needs a lattice-backed grid"))?;
        if lattice.dims[0] != lattice.dims[1] || lattice.dims[1] != lattice.dims[2] {
            return Err(Error::domain("volume operator expects a cubic lattice"));
        }
        let n = lattice.dims[0];
        let padded = 2 * n;
        let h = lattice.spacing;
        let cube = cube_self_integral(k, h);
        let cell_volume = h * h * h;
        let self_terms = grid.weights().iter().map(|w| cube * (w / cell_volume)).collect();
        let cells = lattice
            .cells
            .iter()
            .map(|c| (c[0] * padded + c[1]) * padded + c[2])
            .collect();

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        let mut kernel = vec![Complex64::new(0.0, 0.0); padded * padded * padded];
        let wrap = |d: i64| -> usize { d.rem_euclid(padded as i64) as usize };
        let m = n as i64 - 1;
        for dx in -m..=m {
            for dy in -m..=m {
                for dz in -m..=m {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let dist = h * ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    kernel[(wrap(dx) * padded + wrap(dy)) * padded + wrap(dz)] = free_green(k, dist);
                }
            }
        }
        let mut line = Vec::new();
        for axis in 0..3 {
            fft_axis(&mut kernel, padded, axis, &forward, &mut line);
        }
        let scale = 1.0 / (padded * padded * padded) as f64;
        for z in kernel.iter_mut() {
            *z *= scale;
        }
        Ok(Self {
            k,
            n,
            padded,
            cells,
            weights: grid.weights().to_vec(),
            points: grid.points().to_vec(),
            self_terms,
            kernel_hat: kernel,
            forward,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn wavenumber(&self) -> f64 {
        self.k
    }

    pub fn lattice_size(&self) -> usize {
        self.n
    }

    /// Discrete volume potential of the density `v` at the grid points.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.points.len(), "density length must match the grid");
        let p = self.padded;
        let mut buf = vec![Complex64::new(0.0, 0.0); p * p * p];
        for ((&c, vi), w) in self.cells.iter().zip(v).zip(&self.weights) {
            buf[c] = vi * *w;
        }
        let mut line = Vec::new();
        for axis in 0..3 {
            fft_axis(&mut buf, p, axis, &self.forward, &mut line);
        }
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        for axis in 0..3 {
            fft_axis(&mut buf, p, axis, &self.inverse, &mut line);
        }
        self.cells
            .iter()
            .zip(v)
            .zip(&self.self_terms)
            .map(|((&c, vi), s)| buf[c] + s * vi)
            .collect()
    }

    /// Same sum without FFT, for testing and small grids.
    pub fn apply_direct(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.points.len())
            .map(|i| {
                let mut acc = self.self_terms[i] * v[i];
                for j in 0..self.points.len() {
                    if i != j {
                        let d = dist(&self.points[i], &self.points[j]);
                        acc += free_green(self.k, d) * (self.weights[j]) * v[j];
                    }
                }
                acc
            })
            .collect()
    }

    /// Potential at an arbitrary point outside the grid cells.
    pub fn evaluate_at(&self, x: &[f64; 3], v: &[Complex64]) -> Complex64 {
        self.points
            .iter()
            .zip(&self.weights)
            .zip(v)
            .map(|((p, w), vi)| free_green(self.k, dist(x, p)) * (*w) * vi)
            .sum()
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
