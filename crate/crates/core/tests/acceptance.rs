//! Acceptance suite: runs the twelve criteria, prints one PASS/FAIL line per
//! criterion and always exits 0 so that a failed criterion is reported
//! without aborting the workspace test run.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softscatter::homogenized::{compare_discrete_continuum, CapacitanceDensityField, CompareOptions, HomogenizedSolver};
use softscatter::inverse::*;
use softscatter::manybody::{solve_charges, ManyBodySystem, Particle, ParticleSet};
use softscatter::medium::BackgroundMedium;
use softscatter::planner::verify_plan;
use softscatter::quadrature::{ShellSpec, SphereQuadrature};
use softscatter::specfun::*;

type Outcome = (bool, String);

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = dot(&v, &v).sqrt();
        if n > 0.1 && n <= 1.0 {
            return unit(v);
        }
    }
}

fn legendre(n: usize, t: f64) -> f64 {
    legendre_array(n, t)[n]
}

fn specfun_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 3];
    for _ in 0..200 {
        let l = rng.gen_range(0..=20usize);
        let r = rng.gen_range(0.5..50.0);
        let j = spherical_bessel_j_array(l + 1, r).unwrap();
        let s: Vec<Complex64> = spherical_hankel_h_array(l + 1, r)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(n, h)| h * Complex64::new(0.0, -1.0).powi(n as i32 + 1))
            .collect();
        let dj = bessel_derivatives(&j, r);
        let ds = bessel_derivatives(&s, r);
        let w = j[l] * ds[l] - dj[l] * s[l];
        worst[0] = worst[0].max((w - Complex64::new(0.0, 1.0 / (r * r))).norm() * r * r);

        let (a, b) = (random_unit(&mut rng), random_unit(&mut rng));
        let ya = spherical_harmonics_all(l, &a).unwrap();
        let yb = spherical_harmonics_all(l, &b).unwrap();
        let sum: Complex64 = (-(l as i64)..=l as i64).map(|m| ya[lm_index(l, m)] * yb[lm_index(l, m)].conj()).sum();
        worst[1] = worst[1].max((sum - (2 * l + 1) as f64 / FOUR_PI * legendre(l, dot(&a, &b))).norm());
    }
    for _ in 0..40 {
        let a = random_unit(&mut rng);
        let xh = random_unit(&mut rng);
        let r = rng.gen_range(0.01..10.0);
        let lmax = r as usize + 20;
        let j = spherical_bessel_j_array(lmax, r).unwrap();
        let ya = spherical_harmonics_all(lmax, &a).unwrap();
        let yx = spherical_harmonics_all(lmax, &xh).unwrap();
        let mut s = Complex64::new(0.0, 0.0);
        for l in 0..=lmax {
            let inner: Complex64 = (-(l as i64)..=l as i64).map(|m| ya[lm_index(l, m)].conj() * yx[lm_index(l, m)]).sum();
            s += Complex64::new(0.0, 1.0).powi(l as i32) * j[l] * inner * FOUR_PI;
        }
        worst[2] = worst[2].max((s - Complex64::from_polar(1.0, r * dot(&a, &xh))).norm());
    }
    let ok = worst[0] <= 1e-10 && worst[1] <= 1e-10 && worst[2] <= 1e-8;
    (ok, format!("wronskian {:.1e}, addition {:.1e}, plane wave {:.1e}", worst[0], worst[1], worst[2]))
}

fn single_particle() -> Outcome {
    let a = 0.01;
    let t = [0.2, -0.1, 0.35];
    let m = BackgroundMedium::vacuum(1.0, 1.0).unwrap();
    let ps = ParticleSet::new(vec![Particle::sphere(t, a).unwrap()]).unwrap();
    let sys = ManyBodySystem::new(&m, &ps).unwrap();
    let quad = SphereQuadrature::new(20).unwrap();
    let mut worst = 0.0f64;
    for alpha in quad.nodes() {
        let sol = sys.solve(alpha).unwrap();
        for out in quad.nodes() {
            let d = sub(alpha, out);
            let expect = -a * Complex64::from_polar(1.0, dot(&d, &t));
            worst = worst.max((sys.amplitude(&sol, out) - expect).norm());
        }
    }
    (worst <= 1e-10, format!("max error {worst:.1e}"))
}

fn two_particles() -> Outcome {
    let m = BackgroundMedium::vacuum(1.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for (a, d) in [(0.02, 0.3), (0.01, 0.5), (0.005, 0.1)] {
        let c = FOUR_PI * a;
        let alpha = [0.0, 0.0, 1.0];
        let ps = ParticleSet::new(vec![Particle::sphere([0.0; 3], a).unwrap(), Particle::sphere([d, 0.0, 0.0], a).unwrap()])
            .unwrap();
        let sol = solve_charges(&m, &ps, &alpha).unwrap();
        let g = Complex64::from_polar(1.0 / (FOUR_PI * d), d);
        let expect = -c / (1.0 + c * g);
        for q in &sol.charges {
            worst = worst.max((q - expect).norm() / expect.norm());
        }
    }
    (worst <= 1e-10, format!("max relative error {worst:.1e}"))
}

fn random_density(seed: u64) -> (BackgroundMedium, CapacitanceDensityField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b0 = 1.0;
    let medium = if seed % 2 == 0 {
        BackgroundMedium::vacuum(1.0, b0).unwrap()
    } else {
        BackgroundMedium::homogeneous_ball(1.0, 1.0 + 0.2 * rng.gen::<f64>(), b0).unwrap()
    };
    let centres: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| {
            let c = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)];
            (c, rng.gen_range(0.25..0.4), rng.gen_range(0.1..1.5))
        })
        .collect();
    let d = CapacitanceDensityField::from_fn(b0, 0.1, |x| {
        centres.iter().map(|(c, s, a)| a * (-(dot(&sub(x, c), &sub(x, c))) / (2.0 * s * s)).exp()).sum()
    })
    .unwrap();
    let q_mass = (medium.potential_q(&[0.0; 3]) * FOUR_PI / 3.0 * b0.powi(3)).abs();
    let factor = if q_mass > 0.0 { (2.0 * q_mass / d.total()).max(1.0) } else { 1.0 };
    (medium, d.scaled(factor).unwrap())
}

fn optical_and_reciprocity() -> Outcome {
    let quad = SphereQuadrature::new(24).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let (m, d) = random_density(seed);
        let solver = HomogenizedSolver::new(&m, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let alpha = random_unit(&mut rng);
        let out = random_unit(&mut rng);
        let f = solver.solve(&alpha).unwrap();
        let total: f64 = quad.integrate(|o| solver.amplitude(&f, o).norm_sqr());
        let rhs = m.k() / FOUR_PI * total;
        let optical = (solver.amplitude(&f, &alpha).im - rhs).abs() / rhs;
        let a1 = solver.amplitude(&f, &out);
        let f2 = solver.solve(&scale(&out, -1.0)).unwrap();
        let a2 = solver.amplitude(&f2, &scale(&alpha, -1.0));
        worst.0 = worst.0.max(optical);
        worst.1 = worst.1.max((a1 - a2).norm() / a1.norm());
    }
    (worst.0 <= 1e-3 && worst.1 <= 1e-3, format!("optical {:.1e}, reciprocity {:.1e}", worst.0, worst.1))
}

fn born_limit() -> Outcome {
    let (k, b0, s, h) = (1.0, 6.0, 1.0, 0.4);
    let m = BackgroundMedium::vacuum(k, b0).unwrap();
    let alpha = [0.0, 0.0, 1.0];
    let outs = [[0.6, 0.0, 0.8], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut errs = Vec::new();
    for eps in [1e-2, 5e-3, 2.5e-3] {
        let d = CapacitanceDensityField::gaussian(b0, h, eps, s).unwrap();
        let solver = HomogenizedSolver::new(&m, &d).unwrap();
        let f = solver.solve(&alpha).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for o in &outs {
            let born = -eps / FOUR_PI * gaussian_transform(s, &scale(&sub(o, &alpha), k));
            num += (solver.amplitude(&f, o) - born).norm_sqr();
            den += born * born;
        }
        errs.push((num / den).sqrt());
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| *r >= 2.0 / 1.5 && *r <= 2.0 * 1.5);
    (ok, format!("errors {}, ratios {ratios:.2?}", sci(&errs)))
}

fn constant_sphere() -> Outcome {
    let (k, c, r0) = (1.0, 0.5, 1.0);
    let alpha = [0.0, 0.0, 1.0];
    let outs = [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
    let m = BackgroundMedium::vacuum(k, r0).unwrap();
    let mut errs = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let d = CapacitanceDensityField::constant(r0, h, c).unwrap();
        let s = HomogenizedSolver::new(&m, &d).unwrap();
        let f = s.solve(&alpha).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for o in &outs {
            let exact = constant_sphere_amplitude(k, c, r0, o[2]);
            num += (s.amplitude(&f, o) - exact).norm_sqr();
            den += exact.norm_sqr();
        }
        errs.push((num / den).sqrt());
    }
    let order = (errs[1] / errs[2]).log2();
    (errs[2] <= 1e-2 && order >= 1.0, format!("errors {}, observed order {order:.2}", sci(&errs)))
}

fn theta_pairs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let xi = scale(&random_unit(&mut rng), rng.gen_range(0.01..3.0));
        let p = make_theta_pair(&xi, rng.gen_range(1.0..20.0)).unwrap();
        let (t, tp) = (p.theta.components(), p.theta_prime.components());
        for a in 0..3 {
            worst = worst.max((tp[a] - t[a] - xi[a]).norm());
        }
        worst = worst.max((t[0] * t[0] + t[1] * t[1] + t[2] * t[2] - 1.0).norm());
        worst = worst.max((tp[0] * tp[0] + tp[1] * tp[1] + tp[2] * tp[2] - 1.0).norm());
    }
    (worst <= 1e-12, format!("max defect {worst:.1e}"))
}

fn log_slope(r: &[f64], f: &[f64]) -> f64 {
    let n = r.len() as f64;
    let (x, y): (Vec<f64>, Vec<f64>) = r.iter().zip(f).map(|(a, b)| (a.ln(), b.ln())).unzip();
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

const R_SWEEP: [f64; 3] = [3.0, 6.0, 12.0];

fn constant_table(value: f64) -> AmplitudeTable {
    AmplitudeTable::from_fn(1.0, SphereQuadrature::new(16).unwrap(), SphereQuadrature::new(16).unwrap(), |_, _| {
        Complex64::new(value, 0.0)
    })
    .unwrap()
}

fn f_trend() -> Outcome {
    let shell = ShellSpec::new(0.5, 0.55, 0.65).unwrap();
    let xi = [0.0, 0.0, 1.0];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, table) in [("zero", constant_table(0.0)), ("particle", constant_table(-0.01))] {
        let coeffs = multipole_expand(&table, 8).unwrap().with_support_radius(0.5).unwrap();
        let problem = SynthesisProblem::new(coeffs, shell, SynthesisOptions::default()).unwrap();
        let f: Vec<f64> = R_SWEEP.iter().map(|r| problem.minimize(&make_theta_pair(&xi, *r).unwrap()).functional).collect();
        let slope = log_slope(&R_SWEEP, &f);
        ok &= f.windows(2).all(|w| w[1] < w[0]) && (-2.0..=-0.3).contains(&slope);
        detail.push(format!("{name}: F {}, slope {slope:.2}", sci(&f)));
    }
    (ok, detail.join("; "))
}

fn born_gaussian_table(eps: f64, s: f64, out_deg: usize, in_deg: usize) -> AmplitudeTable {
    AmplitudeTable::from_fn(1.0, SphereQuadrature::new(out_deg).unwrap(), SphereQuadrature::new(in_deg).unwrap(), |o, a| {
        Complex64::new(-eps / FOUR_PI * gaussian_transform(s, &sub(o, a)), 0.0)
    })
    .unwrap()
}

fn estimate_trend() -> Outcome {
    let (eps, s, b0) = (0.05, 0.3, 1.0);
    let table = born_gaussian_table(eps, s, 20, 16);
    let coeffs = multipole_expand(&table, 10).unwrap().with_support_radius(b0).unwrap();
    let problem = SynthesisProblem::new(coeffs, ShellSpec::new(b0, 1.1 * b0, 1.3 * b0).unwrap(), SynthesisOptions::default()).unwrap();
    let shell_dirs = SphereQuadrature::new(3).unwrap();
    let medians: Vec<f64> = R_SWEEP
        .iter()
        .map(|r| {
            let mut errs: Vec<f64> = shell_dirs
                .nodes()
                .iter()
                .map(|xi| {
                    let pair = make_theta_pair(xi, *r).unwrap();
                    let nu = problem.minimize(&pair);
                    let exact = eps * gaussian_transform(s, xi);
                    match problem.fourier_estimate(&nu, &pair) {
                        Ok(v) => (v - exact).norm(),
                        Err(_) => f64::INFINITY,
                    }
                })
                .collect();
            errs.sort_by(|a, b| a.total_cmp(b));
            errs[errs.len() / 2]
        })
        .collect();
    (medians.windows(2).all(|w| w[1] < w[0]), format!("median errors {}", sci(&medians)))
}

fn roundtrip() -> Outcome {
    let (eps, s, b0, h) = (0.05, 0.3, 1.0, 0.1);
    let m = BackgroundMedium::vacuum(1.0, b0).unwrap();
    let truth = CapacitanceDensityField::gaussian(b0, h, eps, s).unwrap();
    let solver = HomogenizedSolver::new(&m, &truth).unwrap();
    let (out, inc) = (SphereQuadrature::new(20).unwrap(), SphereQuadrature::new(16).unwrap());
    let values = solver.amplitude_table(out.nodes(), inc.nodes()).unwrap();
    let table = AmplitudeTable::new(1.0, out, inc, values).unwrap();
    let params = ReconstructionParams {
        r_param: 8.0,
        ell_max: Some(10),
        shell_factors: (1.1, 1.3),
        density_spacing: Some(h),
        synthesis: SynthesisOptions::default(),
    };
    let rec = reconstruct_density(&table, &m, &XiGrid::new(1.9, 0.25).unwrap(), &params).unwrap();
    let err = density_relative_l2(&rec.density, &truth).unwrap();
    (
        err <= 0.2,
        format!("relative L2 {err:.3}, accepted {:.2}, failed {:.2}, status {:?}", rec.accepted_fraction(), rec.failed_fraction(), rec.status),
    )
}

fn benchmark() -> (BackgroundMedium, CapacitanceDensityField) {
    let m = BackgroundMedium::vacuum(1.0, 1.0).unwrap();
    (m, CapacitanceDensityField::gaussian(1.0, 0.1, 0.5, 0.35).unwrap())
}

fn discrete_to_continuum() -> Outcome {
    let (m, d) = benchmark();
    let opts = CompareOptions::default();
    let small = compare_discrete_continuum(&m, &d, 200, 5, 11, &opts).unwrap();
    let large = compare_discrete_continuum(&m, &d, 1600, 5, 11, &opts).unwrap();
    (large.mean < small.mean, format!("mean discrepancy M=200 {:.3e}, M=1600 {:.3e}", small.mean, large.mean))
}

fn plan_verification() -> Outcome {
    let (m, d) = benchmark();
    let (out, inc) = (SphereQuadrature::new(6).unwrap(), SphereQuadrature::new(2).unwrap());
    let solver = HomogenizedSolver::new(&m, &d).unwrap();
    let values = solver.amplitude_table(out.nodes(), inc.nodes()).unwrap();
    let target = AmplitudeTable::new(1.0, out, inc, values).unwrap();
    let a = d.total() / (2000.0 * FOUR_PI);
    let plan = softscatter::planner::plan_from_density(&m, &d, a, 3).unwrap();
    let v = verify_plan(&m, &plan, &target).unwrap();
    (v.relative_l2 <= 0.15, format!("M = {}, relative L2 mismatch {:.3e}", plan.count(), v.relative_l2))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("special-function identities", 10, specfun_suites),
        ("single-particle closed form", 1, single_particle),
        ("two-particle hand solution", 1, two_particles),
        ("optical theorem and reciprocity", 300, optical_and_reciprocity),
        ("Born-limit error halving", 300, born_limit),
        ("constant-sphere oracle", 600, constant_sphere),
        ("theta-pair exactness", 1, theta_pairs),
        ("achieved F decay", 300, f_trend),
        ("Fourier estimate error decay", 900, estimate_trend),
        ("round-trip reconstruction", 1800, roundtrip),
        ("discrete to continuum convergence", 1200, discrete_to_continuum),
        ("plan verification", 900, plan_verification),
    ];
    let mut passed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (ok, detail) = match result {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        passed += ok as usize;
        println!(
            "criterion {:>2} {}: {} ({detail}) [{:.1} s, limit {} s]",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit
        );
    }
    println!("acceptance: {passed}/12 criteria passed");
}
