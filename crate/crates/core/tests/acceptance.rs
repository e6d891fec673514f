//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use num_complex::Complex64;
use qclab::dynamics::{self, GroundSurface, PhaseState, Scheme, SimConfig, Surface};
use qclab::gibbs::{self, Budget, CorrectedSurface, CORRECTION_COEFFICIENT};
use qclab::lab::{self, ConvergeConfig, RunRecord};
use qclab::oscint::{self, OscillatoryIntegrand};
use qclab::qref::{self, GridHamiltonian, Laplacian};
use qclab::rng::{self, StreamRng};
use qclab::{wkb, ModelSpec, ModelSystem, Result};
use rand::Rng;
use std::f64::consts::PI;
use std::time::Instant;

const MASSES: [f64; 4] = [64.0, 256.0, 1024.0, 4096.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn none() -> Option<&'static mut StreamRng> {
    None
}

fn gap_spec() -> ModelSpec {
    ModelSpec::new("two_level_gap", 2, 2.0 * PI).with_param("delta", 0.25)
}

fn cross_spec() -> ModelSpec {
    ModelSpec::new("two_level_cross", 2, 2.0 * PI)
}

fn scalar_cos(a: f64) -> ModelSystem {
    ModelSystem::build(&ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", a)).unwrap()
}

fn rate(spec: &ModelSpec, scheme: Scheme, energy: f64, lo: f64, hi: f64) -> Result<Outcome> {
    let rec = lab::converge(spec, &ConvergeConfig::new(scheme, &MASSES, energy))?;
    let errors: Vec<String> = rec.cells.iter().map(|c| format!("{:.3e}", c.error)).collect();
    let Some(fit) = rec.fit else {
        return outcome(false, format!("no fit, errors [{}]", errors.join(", ")));
    };
    outcome(
        fit.alpha >= lo && fit.alpha <= hi,
        format!("alpha = {:.3} +- {:.3}, errors [{}] {:?}", fit.alpha, fit.stderr, errors.join(", "), fit.flags),
    )
}

fn criterion_1() -> Result<Outcome> {
    rate(&gap_spec(), Scheme::Bo, 0.0, 0.7, 1.3)
}

fn criterion_2() -> Result<Outcome> {
    rate(&gap_spec(), Scheme::Ehrenfest, 0.0, 0.7, 1.3)
}

fn criterion_3() -> Result<Outcome> {
    rate(&cross_spec(), Scheme::Bo, 2.5, 0.3, 0.7)
}

fn criterion_4() -> Result<Outcome> {
    rate(&cross_spec(), Scheme::Ehrenfest, 2.5, 0.55, f64::INFINITY)
}

fn criterion_5() -> Result<Outcome> {
    let m = scalar_cos(0.1);
    let mut pts = Vec::new();
    for &mass in &MASSES {
        let k = wkb::nearest_quantum_number(&m, 1.0, mass)?;
        let e = wkb::quantized_energy(&m, k, mass)?;
        let n = qref::resolved_grid(&m, mass, e, 64)?;
        let field = wkb::WkbField::bo(&m, e, mass, n, 0.0)?;
        let phi = wkb::assemble_wkb_eigenfunction(&field, 1e-6)?;
        let h = GridHamiltonian::assemble(&m, mass, n, Laplacian::Spectral, e)?;
        pts.push((mass, qref::residual_norm(&h, &phi, e)?));
    }
    let fit = lab::fit_rate(&pts)?;
    let slope = -fit.alpha;
    let res: Vec<String> = pts.iter().map(|p| format!("{:.3e}", p.1)).collect();
    outcome((-1.3..=-0.7).contains(&slope), format!("slope = {slope:.3}, residuals [{}]", res.join(", ")))
}

fn criterion_6() -> Result<Outcome> {
    let gap = ModelSystem::build(&gap_spec())?;
    let (mut one_d, mut liouville) = (0.0f64, 0.0f64);
    for (m, x0, p0) in [(scalar_cos(0.4), 0.3, 1.6), (scalar_cos(0.2), 2.0, 0.9), (gap, 0.3, 1.6)] {
        let cfg = SimConfig::new(Scheme::Bo, 10.0, 0.005, 1.0);
        let tr = dynamics::simulate(&m, &PhaseState::bo_start(&m, x0, p0)?, &cfg, none())?;
        let w = wkb::weight_along(&tr, &m)?;
        one_d = one_d.max(w.one_d_deviation);
        liouville = liouville.max(w.liouville_deviation);
    }
    outcome(one_d <= 1e-6 && liouville <= 1e-6, format!("1-D deviation {one_d:.2e}, Liouville deviation {liouville:.2e}"))
}

fn criterion_7() -> Result<Outcome> {
    let gap = ModelSystem::build(&gap_spec())?;
    let mass: f64 = 1024.0;
    let dt = 0.1 / mass.sqrt();
    let mut s = PhaseState::ehrenfest_start(&gap, 0.2, 1.0, mass, false)?;
    for _ in 0..100_000 {
        s = dynamics::step_ehrenfest(&gap, &s, dt, mass, dynamics::DEFAULT_C_STEP)?;
    }
    let norm_drift = (s.norm_sqr().sqrt() - 1.0).abs();

    let m = scalar_cos(0.5);
    let surf = GroundSurface(&m);
    let mut pts = Vec::new();
    for dt in [2e-2, 1e-2, 5e-3, 2.5e-3] {
        let mut s = PhaseState::bo_start(&m, 0.1, 0.3)?;
        let h0 = dynamics::energy(&m, &surf, Scheme::Bo, &s)?;
        let mut worst = 0.0f64;
        for _ in 0..(5.0 / dt) as usize {
            s = dynamics::step_bo(&m, &s, dt)?;
            worst = worst.max((dynamics::energy(&m, &surf, Scheme::Bo, &s)? - h0).abs());
        }
        pts.push((1.0 / dt, worst));
    }
    let slope = lab::fit_rate(&pts)?.alpha;

    let mut s = PhaseState::bo_start(&gap, 0.3, 0.9)?;
    let (x0, p0) = (s.x, s.p);
    for _ in 0..2000 {
        s = dynamics::step_bo(&gap, &s, 0.01)?;
    }
    s.p = -s.p;
    for _ in 0..2000 {
        s = dynamics::step_bo(&gap, &s, 0.01)?;
    }
    let reversal = (s.x - x0).abs().max((s.p + p0).abs());
    outcome(
        norm_drift <= 1e-10 && (slope - 2.0).abs() <= 0.2 && reversal <= 1e-10,
        format!("norm drift {norm_drift:.2e} per 1e5 steps, energy slope {slope:.3}, reversal {reversal:.2e}"),
    )
}

fn criterion_8() -> Result<Outcome> {
    let m = ModelSystem::build(&gap_spec())?;
    let mass: f64 = 1024.0;
    let mut r = rng::stream(8, 0);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..20 {
        let x0 = r.random::<f64>() * m.length;
        let p0 = 1.5 + r.random::<f64>();
        let e_cfg = SimConfig::new(Scheme::Ehrenfest, 0.0, 0.1 / mass.sqrt(), mass);
        let b_cfg = SimConfig::new(Scheme::Bo, 0.0, 2e-3, mass);
        let e = dynamics::hitting_value_function(&m, &PhaseState::ehrenfest_start(&m, x0, p0, mass, false)?, &e_cfg, 100.0)?;
        let b = dynamics::hitting_value_function(&m, &PhaseState::bo_start(&m, x0, p0)?, &b_cfg, 100.0)?;
        let bound = 1.5 * e.tau * e.max_excitation;
        let gap = (e.theta_gain - b.theta_gain).abs();
        worst = worst.max(gap / bound);
        if gap > bound {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of 20 starts violate, worst |dtheta| / bound = {worst:.3}"))
}

fn criterion_9() -> Result<Outcome> {
    let spec = ModelSpec::new("multi_level", 3, 2.0 * PI)
        .with_param("gap_1", 1.2)
        .with_param("gap_2", 1.8)
        .with_param("eps", 0.005)
        .with_param("a", 0.5);
    let m = ModelSystem::build(&spec)?;
    let t = 0.1;
    let g = |x: f64| x.cos();
    let rep = gibbs::equilibrium_compare(&m, &g, t, &Budget::default(), PI, 9)?;
    let admissible = rep.kappa <= 0.05 && rep.gibbs.temperature_ratio <= 0.1;
    outcome(
        admissible && rep.pass,
        format!(
            "kappa {:.4}, T/gap {:.4}, Langevin diff {:.2e} (sigma {:.1e}), Smoluchowski diff {:.2e} (sigma {:.1e})",
            rep.kappa,
            rep.gibbs.temperature_ratio,
            rep.langevin_difference,
            rep.langevin_sigma,
            rep.smoluchowski_difference,
            rep.smoluchowski_sigma
        ),
    )
}

fn criterion_10() -> Result<Outcome> {
    let spec = ModelSpec::new("multi_level", 3, 2.0 * PI)
        .with_param("gap_1", 1.0)
        .with_param("gap_2", 1.5)
        .with_param("eps", 0.2)
        .with_param("a", 0.5);
    let m = ModelSystem::build(&spec)?;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..10 {
        let x = 2.0 * PI * (i as f64 + 0.5) / 10.0;
        let est = gibbs::marginal_ratio(&m, x, PI, 0.1, 4096, 10 + i as u64)?;
        worst = worst.max(est.log_ratio.abs() / (est.kappa + 3.0 * est.mc_error));
        if !est.within_bound {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of 10 points outside, worst |log r| / (kappa + 3 err) = {worst:.3}"))
}

fn criterion_11() -> Result<Outcome> {
    let spec = ModelSpec::new("multi_level", 2, 2.0 * PI).with_param("gap_1", 1.0).with_param("eps", 0.6).with_param("a", 0.1);
    let m = ModelSystem::build(&spec)?;
    let t = 0.1;
    let g = |x: f64| x.cos();
    let budget = Budget { t_final: 30_000.0, burn_in: 100.0, dt_smoluchowski: 0.01, ..Budget::default() };
    let reference = gibbs::gibbs_observable(&m, &g, t, 256, PI, 8192, 11)?;
    let smol = |surface: &dyn Surface, seed: u64| gibbs::chain_average(surface, Scheme::Smoluchowski, &g, t, &budget, PI, seed);
    let plain = smol(&GroundSurface(&m), 1)?;
    let corrected = smol(&CorrectedSurface { model: &m, temperature: t, coefficient: CORRECTION_COEFFICIENT }, 2)?;
    let sigma = plain.std_error.hypot(corrected.std_error);
    let shift = (corrected.mean - plain.mean).abs();
    let d_plain = (plain.mean - reference.value).abs();
    let d_corr = (corrected.mean - reference.value).abs();
    let ratio = d_plain / d_corr;
    let diag = gibbs::corrected_potential(&m, t, CORRECTION_COEFFICIENT, 256)?.diagnostics;
    outcome(
        shift > 5.0 * sigma && ratio >= 2.0,
        format!(
            "reduction {ratio:.2} (plain {d_plain:.3e}, corrected {d_corr:.3e}, sigma {:.1e}, reference err {:.1e}), \
             correction {:.1} sigma, T/gap {:.2}, log slope {:.2}",
            corrected.std_error,
            reference.mc_error,
            shift / sigma,
            diag.temperature_ratio,
            diag.log_slope,
        ),
    )
}

fn criterion_12() -> Result<Outcome> {
    let remainder = |mass: f64| -> Result<(f64, f64)> {
        let it = OscillatoryIntegrand::new(
            |s| 0.5 * s * s + s.powi(4) / 24.0,
            |s| s + s.powi(3) / 6.0,
            |s| 1.0 + 0.5 * s * s,
            |s| Complex64::new((-0.5 * s * s).exp() * (1.0 + 0.5 * s), 0.0),
            mass,
            (-10.0, 10.0),
        );
        let exact = oscint::oscillatory_quadrature(&it, None)?.value;
        Ok((mass, (oscint::stationary_phase_expand(&it, 0)?.value - exact).norm()))
    };
    let rem: Vec<(f64, f64)> = [1e2, 1e3, 1e4, 1e5].iter().map(|&m| remainder(m)).collect::<Result<_>>()?;
    let order0 = -lab::fit_rate(&rem)?.alpha;

    let fresnel = lab::oscint_demo("fresnel", &[1.0, 1e2, 1e4])?.iter().map(|r| r.error).fold(0.0, f64::max);

    let cross = lab::oscint_demo("crossing", &MASSES)?;
    let pts: Vec<(f64, f64)> = cross.iter().map(|r| (r.mass, r.magnitude)).collect();
    let crossing = -lab::fit_rate(&pts)?.alpha;

    let over = lab::oscint_demo("overlap", &[64.0, 256.0, 1024.0])?;
    let decays = over.iter().all(|r| r.magnitude <= over[0].magnitude * over[0].mass / r.mass + 1e-12);
    let mags: Vec<String> = over.iter().map(|r| format!("{:.2e}", r.magnitude)).collect();

    outcome(
        (order0 + 0.75).abs() <= 0.1 && fresnel <= 1e-8 && (crossing + 0.25).abs() <= 0.05 && decays,
        format!(
            "order-0 slope {order0:.3}, Fresnel error {fresnel:.1e}, critical-point slope {crossing:.3}, \
             no-critical-point magnitudes [{}]",
            mags.join(", ")
        ),
    )
}

fn criterion_13() -> Result<Outcome> {
    let mut cfg = ConvergeConfig::new(Scheme::Ehrenfest, &[64.0, 256.0, 1024.0], 0.0);
    cfg.seed = 13;
    let rec = lab::converge(&gap_spec(), &cfg)?;
    let stored = RunRecord::from_json(&rec.to_json()?)?;
    let again = lab::replay(&stored)?;
    let same = again.fingerprint() == rec.fingerprint() && stored.fingerprint() == rec.fingerprint();
    outcome(same, format!("{} fingerprint words compared", rec.fingerprint().len()))
}

fn main() {
    let criteria: [(usize, fn() -> Result<Outcome>); 13] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
        (13, criterion_13),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2}: {verdict}  {detail}  [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
