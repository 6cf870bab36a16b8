//! Particle placement: turn a capacitance density into positions of identical
//! small spheres with number density `N = C/𝒞`.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenized::CapacitanceDensityField;
use crate::inverse::AmplitudeTable;
use crate::manybody::{regime_check, sphere_capacitance, ManyBodySystem, Particle, ParticleSet, RegimeReport};
use crate::medium::BackgroundMedium;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Minimum centre distance in units of the radius.
    pub hard_core_factor: f64,
    /// Largest intensity multiplier tried before giving up.
    pub max_oversampling: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { hard_core_factor: 10.0, max_oversampling: 64.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePlan {
    /// Particles per unit volume.
    pub number_density: CapacitanceDensityField,
    pub radius: f64,
    pub capacitance: f64,
    /// `∫ N dx`.
    pub expected_count: f64,
    /// Poisson draw around the expected count that the sampler aimed for.
    pub target_count: usize,
    /// Intensity multiplier at which the thinned process reached the target.
    pub oversampling: f64,
    pub seed: u64,
    pub hard_core_distance: f64,
    pub particles: ParticleSet,
    pub regime: RegimeReport,
}

impl ParticlePlan {
    pub fn count(&self) -> usize {
        self.particles.len()
    }
}

/// Draws positions of an inhomogeneous Poisson process with intensity
/// `scale · N` on the cells of the density grid.
fn poisson_positions<R: Rng>(n: &CapacitanceDensityField, scale: f64, rng: &mut R) -> Vec<[f64; 3]> {
    let grid = n.grid();
    let h = grid.spacing();
    let b0 = n.b0();
    let masses: Vec<f64> = n.values().iter().zip(grid.weights()).map(|(v, w)| v * w * scale).collect();
    let mut out = Vec::new();
    for ((p, m), cell_w) in grid.points().iter().zip(&masses).zip(grid.weights()) {
        if *m <= 0.0 {
            continue;
        }
        let count = Poisson::new(*m).map(|d| d.sample(rng) as usize).unwrap_or(0);
        let full = *cell_w >= 0.999 * h * h * h;
        let mut placed = 0;
        let mut tries = 0;
        while placed < count && tries < 1000 * count.max(1) {
            tries += 1;
            let x = [0, 1, 2].map(|a| p[a] + h * (rng.gen::<f64>() - 0.5));
            if !full && (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() > b0 {
                continue;
            }
            out.push(x);
            placed += 1;
        }
    }
    out
}

/// Matérn type-II thinning: each point gets a uniform mark and survives if no
/// other point within `d` carries a smaller mark.
fn matern_thinning<R: Rng>(points: &[[f64; 3]], d: f64, rng: &mut R) -> Vec<[f64; 3]> {
    let marks: Vec<f64> = points.iter().map(|_| rng.gen()).collect();
    let key = |p: &[f64; 3]| [(p[0] / d).floor() as i64, (p[1] / d).floor() as i64, (p[2] / d).floor() as i64];
    let mut hash: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        hash.entry(key(p)).or_default().push(i);
    }
    let d2 = d * d;
    points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            let k = key(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(list) = hash.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &j in list {
                                if j == *i {
                                    continue;
                                }
                                let q = &points[j];
                                let r2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                                if r2 < d2 && marks[j] < marks[*i] {
                                    return false;
                                }
                            }
                        }
                    }
                }
            }
            true
        })
        .map(|(_, p)| *p)
        .collect()
}

pub fn plan_from_density(medium: &BackgroundMedium, density: &CapacitanceDensityField, a: f64, seed: u64) -> Result<ParticlePlan> {
    plan_from_density_with(medium, density, a, seed, &PlanOptions::default())
}

/// Samples a plan with `N = C/𝒞`. The expected count is `∫N`; the target is
/// a Poisson draw clipped to `±3√∫N`. Matérn-II thinning at hard-core
/// distance `10a` removes intensity, so the input intensity is raised until
/// the thinned pattern holds at least the target, and the surplus is dropped
/// uniformly at random.
pub fn plan_from_density_with(
    medium: &BackgroundMedium,
    density: &CapacitanceDensityField,
    a: f64,
    seed: u64,
    options: &PlanOptions,
) -> Result<ParticlePlan> {
    let cap = sphere_capacitance(a)?;
    let number_density = density.scaled(1.0 / cap)?;
    let expected = number_density.total();
    let hard_core = options.hard_core_factor * a;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = if expected > 0.0 {
        let draw = Poisson::new(expected).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng);
        let band = 3.0 * expected.sqrt();
        draw.clamp((expected - band).max(0.0).ceil(), (expected + band).floor()) as usize
    } else {
        0
    };
    let empty = |oversampling| -> Result<ParticlePlan> {
        let particles = ParticleSet::empty();
        Ok(ParticlePlan {
            regime: regime_check(medium, &particles),
            number_density: number_density.clone(),
            radius: a,
            capacitance: cap,
            expected_count: expected,
            target_count: 0,
            oversampling,
            seed,
            hard_core_distance: hard_core,
            particles,
        })
    };
    if target == 0 {
        return empty(1.0);
    }
    let mut scale = 1.0;
    let mut best = 0;
    loop {
        let raw = poisson_positions(&number_density, scale, &mut rng);
        let mut kept = matern_thinning(&raw, hard_core, &mut rng);
        best = best.max(kept.len());
        if kept.len() >= target {
            kept.shuffle(&mut rng);
            kept.truncate(target);
            // Restore a spatial order so that output files are easy to read.
            kept.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
            let particles = ParticleSet::new(kept.into_iter().map(|p| Particle { position: p, radius: a, capacitance: cap }).collect())?;
            return Ok(ParticlePlan {
                regime: regime_check(medium, &particles),
                number_density,
                radius: a,
                capacitance: cap,
                expected_count: expected,
                target_count: target,
                oversampling: scale,
                seed,
                hard_core_distance: hard_core,
                particles,
            });
        }
        if scale >= options.max_oversampling {
            return Err(Error::Packing { placed: best, requested: target, min_distance: hard_core, max_feasible: best });
        }
        scale = (scale * 1.25).min(options.max_oversampling);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVerification {
    /// Relative L² mismatch over the direction rules.
    pub relative_l2: f64,
    /// Largest pointwise mismatch relative to the largest target value.
    pub worst_relative: f64,
    pub worst_direction: ([f64; 3], [f64; 3]),
}

/// Discrete amplitude of the plan on the target's directions compared with
/// the target.
pub fn verify_plan(medium: &BackgroundMedium, plan: &ParticlePlan, target: &AmplitudeTable) -> Result<PlanVerification> {
    if (target.k() - medium.k()).abs() > 1e-12 * medium.k() {
        return Err(Error::domain("target table and medium have different wavenumbers"));
    }
    let sys = ManyBodySystem::new(medium, &plan.particles)?;
    let values = sys.amplitude_table(target.outgoing().nodes(), target.incoming().nodes())?;
    let table = AmplitudeTable::new(target.k(), target.outgoing().clone(), target.incoming().clone(), values)?;
    let relative_l2 = table.relative_l2_to(target)?;
    let worst_relative = table.max_relative_to(target)?;
    let n_in = target.incoming().len();
    let (idx, _) = table
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b): (&Complex64, &Complex64)| (a - b).norm())
        .enumerate()
        .fold((0, -1.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let worst_direction = (target.outgoing().nodes()[idx / n_in], target.incoming().nodes()[idx % n_in]);
    Ok(PlanVerification { relative_l2, worst_relative, worst_direction })
}
