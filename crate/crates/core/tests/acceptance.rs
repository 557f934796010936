//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subrad_core::modes::{bright_dark_gap, infinite_lattice_mode, locate_crossing, LatticeSumOptions};
use subrad_core::precision::{fractional_precision, PrecisionInputs};
use subrad_core::sense::{
    default_samples, gradient_t, jacobian, max_sensitivity, perturbed_model, reconstruct,
    ReconstructionOptions, Wrt,
};
use subrad_core::spectra::bright_dark_transmission;
use subrad_core::steady::check_motion_quadrature;
use subrad_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn waveguide() -> Environment {
    Environment::Waveguide { kp: 1.0 }
}

fn chain(n: usize, a: f64, gp: f64, profiles: &[DetuningProfile]) -> EmitterArray {
    build_array(&Geometry::Chain { n, spacing: a }, waveguide(), profiles, gp).unwrap()
}

fn guided(arr: &EmitterArray) -> TransmissionModel {
    TransmissionModel::waveguide(arr, Direction::Right).unwrap()
}

fn random_chain(rng: &mut ChaCha8Rng, lossless: bool) -> EmitterArray {
    let n = rng.gen_range(1..=6);
    let mut x = 0.0;
    let mut pos = Vec::with_capacity(n);
    for _ in 0..n {
        pos.push(Point::new(x, 0.0, 0.0));
        x += rng.gen_range(0.05..0.6);
    }
    let dets = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let gp = if lossless { 0.0 } else { rng.gen_range(0.0..0.1) };
    EmitterArray::new(pos, dets, waveguide(), gp).unwrap()
}

/// A detuning near a random collective resonance.
fn near_resonance(rng: &mut ChaCha8Rng, model: &TransmissionModel) -> f64 {
    let modes = eigenmodes(model.couplings(), model.detunings()).unwrap();
    let a = rng.gen_range(0..modes.len());
    modes.shift(a) + rng.gen_range(-2.0..2.0) * modes.decay_rate(a).max(1e-3)
}

fn narrowest(model: &TransmissionModel) -> f64 {
    let modes = eigenmodes(model.couplings(), model.detunings()).unwrap();
    modes.decay_rates().into_iter().fold(f64::INFINITY, f64::min).max(1e-3)
}

/// Five-point central difference.
fn fd<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

fn c1() -> Outcome {
    let m = eigenmodes(&coupling_matrix(&chain(2, 1.0, 0.0, &[])).unwrap(), &[0.0, 0.0]).unwrap();
    let mut g = m.decay_rates();
    g.sort_by(|a, b| a.total_cmp(b));
    let j_err = (0..2).map(|a| m.shift(a).abs()).fold(0.0, f64::max);
    let g_err = g[0].abs().max((g[1] - 2.0).abs());
    outcome(j_err <= 1e-12 && g_err <= 1e-12, format!("Gamma = {:?}, max |J| = {j_err:.1e}, Gamma error = {g_err:.1e}", g))
}

fn c2() -> Outcome {
    let mut worst: f64 = 0.0;
    for &a in &[0.04, 0.1, 0.2] {
        let d = -0.5 * (K0 * a).tan();
        worst = worst.max((guided(&chain(2, a, 0.0, &[])).transmittance(d).unwrap() - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("max | |t|^2 - 1 | = {worst:.1e}"))
}

fn c3() -> Outcome {
    let d0 = 0.1;
    let dicke = BrightDarkModel::dicke_pair(d0);
    let lattice = BrightDarkModel::from_lattice(0.2, &Dipole::x(), d0, &LatticeSumOptions::default()).unwrap();
    let mut worst_one: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    for m in [&dicke, &lattice] {
        worst_one = worst_one.max((bright_dark_transmission(m, m.lambda_d.re) - 1.0).norm());
        let (p, q) = m.dressed_resonances();
        worst_zero = worst_zero.max(bright_dark_transmission(m, p).norm_sqr()).max(bright_dark_transmission(m, q).norm_sqr());
    }
    // the full two-atom solver at the Dicke point
    let pair = guided(&chain(2, 1.0, 0.0, &[DetuningProfile::Antisymmetric { amplitude: d0 }]));
    worst_one = worst_one.max((pair.evaluate(0.0).unwrap().t[0] - 1.0).norm());
    worst_zero = worst_zero.max(pair.transmittance(d0).unwrap()).max(pair.transmittance(-d0).unwrap());
    outcome(
        worst_one <= 1e-10 && worst_zero <= 1e-10,
        format!(
            "|t(J_D) - 1| = {worst_one:.1e}, max |t|^2 at roots = {worst_zero:.1e} (lattice a=0.2: J_B = {:.4}, J_D = {:.4})",
            lattice.lambda_b.re, lattice.lambda_d.re
        ),
    )
}

fn c4() -> Outcome {
    let s = max_sensitivity(&guided(&chain(1, 1.0, 0.0, &[])), None, 1e-8).unwrap();
    let exact = 9.0 / (4.0 * 3f64.sqrt());
    let err = (s.value - exact).abs();
    outcome(err <= 1e-4, format!("S* = {:.6} at {:.4}, oracle {exact:.6}", s.value, s.argmax))
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut energy: f64 = 0.0;
    let mut recip: f64 = 0.0;
    for _ in 0..100 {
        let arr = random_chain(&mut rng, true);
        let right = guided(&arr);
        let left = TransmissionModel::waveguide(&arr, Direction::Left).unwrap();
        for _ in 0..5 {
            let d = near_resonance(&mut rng, &right);
            let r = right.evaluate(d).unwrap();
            let l = left.evaluate(d).unwrap();
            energy = energy.max((r.transmittance + r.reflectance.unwrap() - 1.0).abs());
            recip = recip.max((r.t[0] - l.t[0]).norm());
        }
    }
    outcome(energy <= 1e-9 && recip <= 1e-10, format!("max | |t|^2+|r|^2-1 | = {energy:.1e}, max |t_R - t_L| = {recip:.1e}"))
}

fn c6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let arr = random_chain(&mut rng, false);
        let model = guided(&arr);
        let d = near_resonance(&mut rng, &model);
        let h = 1e-4 * narrowest(&model);
        let t = |m: &TransmissionModel, x: f64| m.transmittance(x).unwrap();

        let (_, g) = model.transmittance_derivative(d).unwrap();
        let num = fd(|e| t(&model, d + e), h);
        worst = worst.max((g - num).abs() / g.abs().max(1e-6));

        for wrt in [Wrt::Detunings, Wrt::Positions] {
            let (_, grad) = gradient_t(&model, d, wrt).unwrap();
            let step = if wrt == Wrt::Detunings { h } else { 1e-5 };
            // a lone emitter has an identically zero position gradient, so
            // floor the scale well above finite-difference noise
            let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
            for j in 0..model.len() {
                let num = fd(
                    |e| {
                        let mut p = vec![0.0; model.len()];
                        p[j] = e;
                        t(&perturbed_model(&model, wrt, &p).unwrap(), d)
                    },
                    step,
                );
                worst = worst.max((grad[j] - num).abs() / scale);
            }
        }
    }
    outcome(worst <= 1e-5, format!("max relative deviation from finite differences = {worst:.1e}"))
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let arr = random_chain(&mut rng, false);
        let model = guided(&arr);
        let c = rng.gen_range(-0.5..0.5);
        let shifted: Vec<f64> = model.detunings().iter().map(|d| d + c).collect();
        let moved = model.with_detunings(&shifted).unwrap();
        for _ in 0..5 {
            let d = near_resonance(&mut rng, &model);
            worst = worst.max((moved.transmittance(d - c).unwrap() - model.transmittance(d).unwrap()).abs());
        }
    }
    // The emitter shift enters the effective Hamiltonian as -delta, so the
    // profile moves to Delta_L - c.
    outcome(worst <= 1e-10, format!("max |T_(delta+c)(Delta_L - c) - T_delta(Delta_L)| = {worst:.1e}"))
}

/// Separation of the steepest points on either side of the perfect
/// transmission point.
fn window_width(a: f64) -> f64 {
    let model = guided(&chain(2, a, 0.0, &[]));
    let centre = -0.5 * (K0 * a).tan();
    let ga = 2.0 * (0.5 * K0 * a).sin().powi(2);
    let left = max_sensitivity(&model, Some((centre - 3.0 * ga, centre - 1e-9)), 1e-10).unwrap();
    let right = max_sensitivity(&model, Some((centre + 1e-9, centre + 3.0 * ga)), 1e-10).unwrap();
    right.argmax - left.argmax
}

fn c8() -> Outcome {
    let w = [window_width(0.08), window_width(0.04), window_width(0.02)];
    let r1 = w[0] / w[1];
    let r2 = w[1] / w[2];
    let ok = |r: f64| (3.6..=4.4).contains(&r);
    outcome(ok(r1) && ok(r2), format!("widths {:.5} {:.5} {:.5}; ratios {r1:.3} (0.08/0.04), {r2:.3} (0.04/0.02)", w[0], w[1], w[2]))
}

fn pair_smax(a: f64, gp: f64, motion: Option<MotionModel>) -> f64 {
    let arr = chain(2, a, gp, &[]);
    let m = match motion {
        Some(mm) => TransmissionModel::waveguide_with_motion(&arr, Direction::Right, mm).unwrap(),
        None => guided(&arr),
    };
    max_sensitivity(&m, None, 1e-6).unwrap().value
}

fn c9() -> Outcome {
    let spacings = [0.01, 0.02, 0.03, 0.05, 0.08, 0.1, 0.15, 0.2, 0.25];
    let mut pass = true;
    let mut notes = Vec::new();
    for gp in [0.01, 0.1] {
        let s: Vec<f64> = spacings.iter().map(|&a| pair_smax(a, gp, None)).collect();
        let (imax, smax) = s.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        let interior = imax > 0 && imax + 1 < s.len() && s[0] < smax;
        pass &= interior;
        notes.push(format!("Gamma'={gp}: max {smax:.2} at a={} vs {:.2} at a=0.01", spacings[imax], s[0]));
    }
    let dicke = 0.01;
    let clean = pair_smax(dicke, 0.0, None);
    for sigma in [0.01, 0.05] {
        let agree = check_motion_quadrature(&chain(2, dicke, 0.0, &[]), sigma, 40, 100_000, 11, 1e-3);
        let diff = agree.as_ref().map(|d| format!("{d:.1e}")).unwrap_or_else(|e| e.to_string());
        let s = pair_smax(dicke, 0.0, Some(MotionModel::new(sigma, Quadrature::GaussHermite { order: 40 }).unwrap()));
        pass &= agree.is_ok() && s < clean;
        notes.push(format!("sigma={sigma}: S*={s:.2} vs {clean:.2}, GH-MC {diff}"));
    }
    outcome(pass, notes.join("; "))
}

fn c10() -> Outcome {
    let opts = LatticeSumOptions::default();
    let x = Dipole::x();
    let crossing = match locate_crossing(0.25, 0.31, &x, 1e-5, &opts) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("no crossing: {e}")),
    };
    let h = 2e-3;
    let g = |a: f64| bright_dark_gap(a, &x, &opts).unwrap().abs();
    let g0 = g(crossing);
    let left = (g0 - g(crossing - h)) / h;
    let right = (g(crossing + h) - g0) / h;
    let kink = left < 0.0 && right > 0.0 && (right - left).abs() > 0.1 * left.abs().max(right.abs());
    let dark = infinite_lattice_mode([PI / 0.55, PI / 0.55], 0.55, &x, &opts).unwrap();
    let pass = (0.25..=0.31).contains(&crossing) && kink && dark.decay_rate() < 1e-6;
    outcome(
        pass,
        format!(
            "x-polarized crossing at a = {crossing:.4}, one-sided slopes of |J_B - J_D| {left:.3} / {right:.3}, Gamma_D(0.55) = {:.1e}",
            dark.decay_rate()
        ),
    )
}

fn c11() -> Outcome {
    let n = 4;
    let a = 0.1;
    let control = DetuningProfile::Linear1D { slope: 0.1 / ((n - 1) as f64 * a) };
    let model = guided(&chain(n, a, 0.0, &[control]));
    let samples = default_samples(&model).unwrap();
    let jac = jacobian(&model, &samples, Wrt::Detunings).unwrap();

    // mirror symmetry without control
    let bare = guided(&chain(n, a, 0.0, &[]));
    let p = [0.003, -0.001, 0.002, 0.0005];
    let mut q = p;
    q.reverse();
    let m1 = perturbed_model(&bare, Wrt::Detunings, &p).unwrap();
    let m2 = perturbed_model(&bare, Wrt::Detunings, &q).unwrap();
    let mut mirror: f64 = 0.0;
    for i in 0..2001 {
        let d = -3.0 + 6.0 * i as f64 / 2000.0;
        mirror = mirror.max((m1.transmittance(d).unwrap() - m2.transmittance(d).unwrap()).abs());
    }

    // synthetic round trip
    let raw = [0.6, -0.3, 0.5, -0.55];
    let norm = raw.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    let truth: Vec<f64> = raw.iter().map(|v| 0.005 * v / norm).collect();
    let measured: Vec<f64> = {
        let m = perturbed_model(&model, Wrt::Detunings, &truth).unwrap();
        samples.iter().map(|&d| m.transmittance(d).unwrap()).collect()
    };
    let rec = reconstruct(&model, &samples, &measured, Wrt::Detunings, &[0.0; 4], &ReconstructionOptions::default()).unwrap();
    let err = rec.params.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let pass = jac.rank == n && jac.kappa <= 1e4 && mirror <= 1e-10 && err <= 1e-6 && rec.converged;
    outcome(
        pass,
        format!(
            "a={a}: rank {}, kappa {:.1}; mirror max |dT| = {mirror:.1e}; round-trip error {err:.1e} in {} iterations",
            jac.rank, jac.kappa, rec.iterations
        ),
    )
}

fn lattice_smax(side: usize, a: f64, fraction: f64, seed: u64) -> f64 {
    let base = build_array(
        &Geometry::Square { side, spacing: a },
        Environment::FreeSpace { dipole: Dipole::x() },
        &[DetuningProfile::PlaneWave2D { amplitude: 0.1, k: [PI / a, PI / a] }],
        0.0,
    )
    .unwrap();
    let beam = GaussianBeam::along_z(0.3 * side as f64 * a, base.centroid()).unwrap();
    let arr = remove_atoms(&base, fraction, seed).unwrap();
    let m = TransmissionModel::free_space(&arr, &beam, DetectionLayout::standard(beam.waist)).unwrap();
    max_sensitivity(&m, None, 1e-4).unwrap().value
}

fn c12() -> Outcome {
    let seeds = 50u64;
    let intact = lattice_smax(10, 0.5, 0.0, 0);
    let mut stats = vec![(intact, 0.0)];
    for (k, f) in [0.02, 0.05, 0.10].into_iter().enumerate() {
        let v: Vec<f64> = (0..seeds).map(|s| lattice_smax(10, 0.5, f, 1000 * (k as u64 + 1) + s)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        stats.push((mean, (var / v.len() as f64).sqrt()));
    }
    let pass = stats.windows(2).all(|w| w[1].0 <= w[0].0 + (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    let text: Vec<String> = [0.0, 0.02, 0.05, 0.10]
        .iter()
        .zip(&stats)
        .map(|(f, (m, se))| format!("{:.0}%: {m:.2}+-{se:.2}", 100.0 * f))
        .collect();
    outcome(pass, format!("{seeds} seeds per fraction; mean S* {}", text.join(", ")))
}

fn c13() -> Outcome {
    let i = PrecisionInputs::from_preset(Preset::RbD2, 0.01, 1000.0, 0.01, 1.0).unwrap();
    let f = fractional_precision(&i);
    outcome((3e-15..=3e-14).contains(&f), format!("fractional precision {f:.2e}"))
}

fn c14() -> Outcome {
    let a = 0.2;
    let s: Vec<f64> = (2..=10).map(|side| lattice_smax(side, a, 0.0, 0)).collect();
    let drops: Vec<usize> = (1..s.len()).filter(|&i| s[i] < s[i - 1]).map(|i| i + 2).collect();
    let text: Vec<String> = s.iter().map(|v| format!("{v:.1}")).collect();
    outcome(!drops.is_empty(), format!("a={a}, sqrt(N)=2..10: S* = [{}]; decreases at sqrt(N) = {drops:?}", text.join(", ")))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "two-atom Dicke limit", c1, Duration::from_secs(1)),
        (2, "perfect-transmission point", c2, Duration::from_secs(1)),
        (3, "bright/dark transmission zeros", c3, Duration::from_secs(1)),
        (4, "single-atom sensitivity", c4, Duration::from_secs(1)),
        (5, "energy and reciprocity", c5, Duration::from_secs(10)),
        (6, "gradient oracle", c6, Duration::from_secs(30)),
        (7, "global-shift covariance", c7, Duration::from_secs(60)),
        (8, "subradiant width scaling", c8, Duration::from_secs(60)),
        (9, "imperfection trends", c9, Duration::from_secs(120)),
        (10, "lattice crossing", c10, Duration::from_secs(300)),
        (11, "Jacobian and reconstruction", c11, Duration::from_secs(60)),
        (12, "missing atoms", c12, Duration::from_secs(1800)),
        (13, "precision estimate", c13, Duration::from_secs(1)),
        (14, "non-monotone S*(sqrt N)", c14, Duration::from_secs(600)),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run, budget) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2}: {} {name} [{:.2}s / {}s] {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
