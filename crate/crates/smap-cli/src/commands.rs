use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use smap_core::decompose::{build_phi_m, extract_modulation, synthesize, DecomposeConfig};
use smap_core::diagnostics::{
    coercivity_minimum, lyapunov_monitor, verify_hardy_suite, verify_j_bound, CoercivityForm, InequalityEstimate,
};
use smap_core::evolve::{evolve_run, EvolveConfig, RunOutcome, SphereField};
use smap_core::modulation_ode::{fit_blowup_law, integrate, shoot_a0, ModulationState, OdeLaw, StopRule, Trajectory};
use smap_core::profiles::{
    flux_projection, residual_psi0, scales, weighted_norm_sq, CutoffFamily, ProfileConfig, ProfileSet,
};
use smap_core::{DiffOrder, Operators, RadialGrid, SmapError};

use crate::config::{DecomposeRunConfig, EvolveRunConfig, Law, OdeConfig, ProfilesConfig, ShootConfig, Suite, VerifyConfig, A0};
use crate::output::{read_csv, Manifest, OutDir};
use crate::CliError;

const LYAPUNOV_FIT_FRACTION: f64 = 0.5;
const FLUX_BAND: f64 = 5.0;

fn law(l: Law) -> OdeLaw {
    OdeLaw { kind: l.into(), remainder: 0.0 }
}

fn trajectory_rows(tr: &Trajectory) -> Vec<Vec<f64>> {
    tr.points.iter().map(|p| vec![p.s, p.t, p.lambda, p.theta, p.a, p.b, p.kappa()]).collect()
}

const TRAJECTORY_HEADER: [&str; 7] = ["s", "t", "lambda", "Theta", "a", "b", "kappa"];

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0.ln() / n, y + p.1.ln() / n));
    let sxy: f64 = points.iter().map(|p| (p.0.ln() - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0.ln() - mx).powi(2)).sum();
    sxy / sxx
}

/// Residual norms at `a = 0` on a grid reaching `4B₁(b)`.
fn residual_norms(b: f64, cfg: &ProfilesConfig) -> Result<(f64, f64), SmapError> {
    let b1 = scales(b).1;
    let g = RadialGrid::log_uniform(cfg.y_min, 4.0 * b1, cfg.grid_n)?;
    let ops = Operators::new(&g, DiffOrder::Sixth);
    let r = residual_psi0(0.0, b, &ops, &ProfileConfig::with_b_star(cfg.b_star))?;
    Ok((weighted_norm_sq(&ops, &r.psi.beta, 0, 6.0, 2.0 * b1), weighted_norm_sq(&ops, &r.psi.gamma, 0, 8.0, 2.0 * b1)))
}

#[derive(Serialize)]
struct SlopeCheck {
    name: &'static str,
    points: Vec<(f64, f64)>,
    slope: f64,
    expected: f64,
    tolerance: f64,
    pass: bool,
}

pub fn profiles(cfg: &ProfilesConfig, out: &Path) -> Result<(), CliError> {
    let pcfg = ProfileConfig::with_b_star(cfg.b_star);
    let (b, a) = (cfg.b, cfg.a);
    let y_max = cfg.y_max.unwrap_or_else(|| 4.0 * scales(b).1);
    let g = RadialGrid::log_uniform(cfg.y_min, y_max, cfg.grid_n)?;
    let ops = Operators::new(&g, DiffOrder::Sixth);
    let ps = ProfileSet::build(a, b, &ops, &pcfg)?;
    let res = residual_psi0(a, b, &ops, &pcfg)?;
    let manifest = Manifest::new("profiles", cfg, Some(g.spec()));
    let out = OutDir::create(out)?;

    let rows = (0..g.len()).map(|i| {
        vec![
            g.nodes()[i],
            ps.t1[i],
            ps.sigma_b[i],
            ps.t02[i],
            ps.t11[i],
            ps.t20[i],
            ps.t03[i],
            ps.s02[i],
            ps.alpha0[i],
            ps.beta0[i],
            ps.gamma0[i],
        ]
    });
    let header = ["y", "T1", "Sigma_b", "T02", "T11", "T20", "T03", "S02", "alpha0", "beta0", "gamma0"];
    out.write_csv("profiles.csv", &manifest, &[], &header, rows)?;
    let rows = (0..g.len()).map(|i| vec![g.nodes()[i], res.psi.alpha[i], res.psi.beta[i], res.psi.gamma[i]]);
    out.write_csv("residual.csv", &manifest, &[], &["y", "psi_alpha", "psi_beta", "psi_gamma"], rows)?;

    // the flux identities use the a = 0 residual for the β part and a = b/(2|log b|) for the α part
    let l = b.ln().abs();
    let phi = build_phi_m(cfg.m, &ops, &CutoffFamily::default())?;
    let r0 = if a == 0.0 { res.clone() } else { residual_psi0(0.0, b, &ops, &pcfg)? };
    let a_flux = b / (2.0 * l);
    let ra = residual_psi0(a_flux, b, &ops, &pcfg)?;
    let flux_beta = flux_projection(&r0.psi.beta, &phi, &ops)? * l / (-2.0 * b * b);
    let flux_alpha = flux_projection(&ra.psi.alpha, &phi, &ops)? * l / (-2.0 * a_flux * b);
    let band = FLUX_BAND / l;

    let sweep: Vec<f64> = vec![b, b / 10.0, b / 100.0];
    let norms = sweep.par_iter().map(|&bb| residual_norms(bb, cfg)).collect::<Result<Vec<_>, _>>()?;
    let check = |name, pick: fn(&(f64, f64)) -> f64, expected, tolerance| {
        let points: Vec<(f64, f64)> = sweep.iter().zip(&norms).map(|(bb, n)| (*bb, pick(n))).collect();
        let slope = log_log_slope(&points);
        SlopeCheck { name, points, slope, expected, tolerance, pass: (slope - expected).abs() <= tolerance }
    };
    let slopes = vec![check("psi2_over_y6", |n| n.0, 4.0, 0.3), check("psi3_over_y8", |n| n.1, 6.0, 0.4)];
    out.write_json(
        "profile_report.json",
        &manifest,
        json!({
            "a": a,
            "b": b,
            "cb": ps.cb,
            "db": ps.db,
            "inner_scale": ps.inner_scale,
            "outer_scale": ps.outer_scale,
            "norms": { "psi2_over_y6": norms[0].0, "psi3_over_y8": norms[0].1 },
            "flux": { "beta_ratio": flux_beta, "alpha_ratio": flux_alpha, "band": band,
                      "pass": (flux_beta - 1.0).abs() <= band && (flux_alpha - 1.0).abs() <= band },
            "slope_checks": slopes,
        }),
    )
}

pub fn ode(cfg: &OdeConfig, out: &Path) -> Result<(), CliError> {
    if cfg.b0.is_nan() || cfg.b0 <= 0.0 {
        return Err(SmapError::Parameter(format!("b0 = {} must be positive", cfg.b0)).into());
    }
    let stop = StopRule { stop_on_escape: cfg.stop_on_escape, ..StopRule::until(cfg.s_end) };
    let tr = integrate(&ModulationState::initial(cfg.a0, cfg.b0), &law(cfg.law), &stop, cfg.rtol)?;
    let manifest = Manifest::new("ode", cfg, None);
    let out = OutDir::create(out)?;
    out.write_csv("ode_trajectory.csv", &manifest, &[], &TRAJECTORY_HEADER, trajectory_rows(&tr))?;
    let fit = fit_blowup_law(&tr).ok();
    out.write_json(
        "ode_report.json",
        &manifest,
        json!({
            "outcome": tr.outcome,
            "escaped": tr.escape_s.is_some(),
            "escape_s": tr.escape_s,
            "final": tr.last(),
            "points": tr.points.len(),
            "blowup_fit": fit.map(|f| json!({ "t_blowup": f.t_blowup, "kappa": f.kappa, "drift": f.drift })),
        }),
    )
}

fn kappa_history(tr: &Trajectory, max_points: usize) -> Vec<(f64, f64)> {
    let stride = tr.points.len().div_ceil(max_points).max(1);
    let mut h: Vec<(f64, f64)> = tr.points.iter().step_by(stride).map(|p| (p.s, p.kappa())).collect();
    let last = tr.last();
    if h.last().map(|p| p.0) != Some(last.s) {
        h.push((last.s, last.kappa()));
    }
    h
}

pub fn shoot(cfg: &ShootConfig, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest::new("shoot", cfg, None);
    let l = law(cfg.law);
    let shot = match shoot_a0(cfg.b0, &l, cfg.horizon_b_ratio, cfg.b_star) {
        Ok(s) => s,
        Err(e @ SmapError::Numerical(_)) => {
            let out = OutDir::create(out)?;
            out.write_json("shooting_report.json", &manifest, json!({ "status": "failed", "message": e.to_string() }))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let cont = integrate(&ModulationState::initial(shot.a0, cfg.b0), &l, &StopRule::until(cfg.s_end), 1e-10)?;
    let fit = fit_blowup_law(&cont);
    let out = OutDir::create(out)?;
    out.write_csv("ode_trajectory.csv", &manifest, &[], &TRAJECTORY_HEADER, trajectory_rows(&cont))?;
    let max_kappa = shot.trajectory.points.iter().map(|p| p.kappa().abs()).fold(0.0, f64::max);
    out.write_json(
        "shooting_report.json",
        &manifest,
        json!({
            "status": "ok",
            "a0": shot.a0,
            "interval": shot.interval,
            "endpoint_sides": shot.endpoint_sides,
            "bisection_steps": shot.bisection_steps,
            "max_abs_kappa": max_kappa,
            "kappa_history": kappa_history(&shot.trajectory, 200),
            "blowup_fit": match &fit {
                Ok(f) => json!({ "t_blowup": f.t_blowup, "t_spread": f.t_spread, "kappa": f.kappa, "drift": f.drift }),
                Err(e) => json!({ "error": e.to_string() }),
            },
        }),
    )
}

fn snapshot_rows(field: &SphereField) -> Vec<Vec<f64>> {
    field.grid().nodes().iter().zip(field.values()).map(|(r, v)| vec![*r, v[0], v[1], v[2]]).collect()
}

pub fn evolve(cfg: &EvolveRunConfig, out: &Path) -> Result<(), CliError> {
    let a0 = match cfg.a0 {
        A0::Fixed(x) => x,
        A0::Shoot => shoot_a0(cfg.b0, &law(cfg.law), cfg.horizon_b_ratio, 2.0 * cfg.b0)?.a0,
    };
    let ecfg = EvolveConfig {
        r_min: cfg.r_min,
        r_max: cfg.r_max,
        n: cfg.grid_n,
        t_end: cfg.t_end,
        lambda_min: cfg.lambda_min,
        dt_factor: cfg.dt_factor,
        extract_every: cfg.extract_every,
        snapshot_every: cfg.snapshot_every,
        decompose: DecomposeConfig::adapted_to(cfg.b0),
        ..EvolveConfig::default()
    };
    let grid = ecfg.grid()?;
    let v0 = synthesize(&grid, 1.0, 0.0, a0, cfg.b0, &ecfg.decompose)?;
    let run = evolve_run(&v0, &ModulationState::initial(a0, cfg.b0), &ecfg)?;
    let manifest = Manifest::new("evolve", cfg, Some(grid.spec()));
    let out = OutDir::create(out)?;
    let rows = run.samples.iter().map(|s| {
        let p = &s.state;
        vec![p.t, p.s, p.lambda, p.theta, p.a, p.b, s.energy, s.energies.e1, s.energies.e2, s.energies.e4, s.sphere_violation]
    });
    let header = ["t", "s", "lambda", "Theta", "a", "b", "E", "E1", "E2", "E4", "sphere_violation"];
    out.write_csv("trajectory.csv", &manifest, &[], &header, rows)?;
    for (k, (t, field)) in run.snapshots.iter().enumerate() {
        let info = format!("t={t} N={} r_max={}", field.len(), field.grid().y_max());
        out.write_csv(&format!("snapshots/snapshot_{k:04}.csv"), &manifest, &[info], &["r", "v1", "v2", "v3"], snapshot_rows(field))?;
    }
    let lyapunov = lyapunov_monitor(&run.samples, LYAPUNOV_FIT_FRACTION).ok();
    let min_lambda = run.min_lambda();
    out.write_json(
        "run_report.json",
        &manifest,
        json!({
            "a0": a0,
            "outcome": run.outcome,
            "message": run.message,
            "steps": run.steps,
            "min_lambda": min_lambda,
            "focusing": 1.0 / min_lambda,
            "regrids": run.regrids,
            "max_step_drift": run.max_step_drift,
            "last_state": run.samples.last().map(|s| s.state),
            "snapshots": run.snapshots.len(),
            "lyapunov": lyapunov.map(|r| json!({ "constant": r.constant, "fit_fraction": r.fit_fraction, "holds": r.holds, "worst_ratio": r.worst_ratio })),
        }),
    )?;
    if run.outcome == RunOutcome::ConstraintViolation {
        return Err(SmapError::Numerical(run.message).into());
    }
    Ok(())
}

/// A field written by `evolve` (one snapshot file).
pub fn load_snapshot(path: &Path) -> Result<SphereField, CliError> {
    let (_, rows) = read_csv(path)?;
    if rows.len() < 8 || rows.iter().any(|r| r.len() != 4) {
        return Err(CliError::Config(format!("{}: expected rows r, v1, v2, v3", path.display())));
    }
    let r: Vec<f64> = rows.iter().map(|row| row[0]).collect();
    let grid = RadialGrid::log_uniform(r[0], r[r.len() - 1], r.len())?;
    if grid.nodes().iter().zip(&r).any(|(g, x)| ((g - x) / x).abs() > 1e-9) {
        return Err(CliError::Config(format!("{}: radii are not on a log-uniform grid", path.display())));
    }
    let values = rows.iter().map(|row| [row[1], row[2], row[3]]).collect();
    let mut field = SphereField::new(grid, values)?;
    field.normalize();
    Ok(field)
}

pub fn decompose(cfg: &DecomposeRunConfig, out: &Path) -> Result<(), CliError> {
    let dcfg = DecomposeConfig::adapted_to(cfg.b_max);
    let field = match &cfg.snapshot {
        Some(path) => load_snapshot(path)?,
        None => {
            let grid = RadialGrid::log_uniform(cfg.r_min, cfg.r_max, cfg.grid_n)?;
            synthesize(&grid, cfg.lambda, cfg.theta, cfg.a, cfg.b, &dcfg)?
        }
    };
    let guess = ModulationState { lambda: cfg.guess_lambda, theta: cfg.guess_theta, ..ModulationState::initial(cfg.guess_a, cfg.guess_b) };
    let d = extract_modulation(&field, &guess, &dcfg)?;
    let manifest = Manifest::new("decompose", cfg, Some(field.grid().spec()));
    let out = OutDir::create(out)?;
    let rows = (0..d.grid.len()).map(|i| vec![d.grid.nodes()[i], d.w.alpha[i], d.w.beta[i], d.w.gamma[i]]);
    out.write_csv("radiation.csv", &manifest, &[], &["y", "alpha", "beta", "gamma"], rows)?;
    out.write_json(
        "decomposition.json",
        &manifest,
        json!({
            "lambda": d.state.lambda,
            "theta": d.state.theta,
            "a": d.state.a,
            "b": d.state.b,
            "m": dcfg.m,
            "pairings": d.pairings,
            "iterations": d.iterations,
        }),
    )
}

fn flux_estimates(cfg: &VerifyConfig) -> Result<Vec<InequalityEstimate>, SmapError> {
    let b = cfg.b;
    let pcfg = ProfileConfig::with_b_star(0.5);
    let l = b.ln().abs();
    let g = RadialGrid::log_uniform(1e-4, 4.0 * scales(b).1, cfg.flux_grid_n)?;
    let ops = Operators::new(&g, DiffOrder::Sixth);
    let phi = build_phi_m(cfg.m, &ops, &CutoffFamily::default())?;
    let a = b / (2.0 * l);
    let (r0, ra) = rayon::join(|| residual_psi0(0.0, b, &ops, &pcfg), || residual_psi0(a, b, &ops, &pcfg));
    let (r0, ra) = (r0?, ra?);
    let band = FLUX_BAND / l;
    let beta = flux_projection(&r0.psi.beta, &phi, &ops)? * l / (-2.0 * b * b);
    let alpha = flux_projection(&ra.psi.alpha, &phi, &ops)? * l / (-2.0 * a * b);
    let entry = |name: &str, reference: String, c: f64| InequalityEstimate {
        name: name.into(),
        reference,
        estimated_constant: c,
        grid: g.spec(),
        n_samples: 1,
        pass: (c - 1.0).abs() <= band,
    };
    Ok(vec![
        entry("flux_beta", format!("(HΨ₀⁽²⁾,Φ_M)/(Λφ,Φ_M)·|log b|/(-2b²) = 1 ± {FLUX_BAND}/|log b| at b = {b:e}"), beta),
        entry("flux_alpha", format!("(HΨ₀⁽¹⁾,Φ_M)/(Λφ,Φ_M)·|log b|/(-2ab) = 1 ± {FLUX_BAND}/|log b| at b = {b:e}"), alpha),
    ])
}

fn coercivity_estimates(cfg: &VerifyConfig) -> Result<Vec<InequalityEstimate>, SmapError> {
    let g = RadialGrid::log_uniform(cfg.y_min, cfg.y_max, cfg.coercivity_n)?;
    let (h, h2) = rayon::join(
        || coercivity_minimum(&g, cfg.m, CoercivityForm::H),
        || coercivity_minimum(&g, cfg.m, CoercivityForm::HSquared),
    );
    let entry = |name: &str, reference: &str, e: smap_core::diagnostics::CoercivityEstimate| InequalityEstimate {
        name: name.into(),
        reference: reference.into(),
        estimated_constant: e.rayleigh_min,
        grid: e.grid,
        n_samples: 1,
        pass: e.rayleigh_min > 0.0 && e.rayleigh_min.is_finite(),
    };
    Ok(vec![
        entry("h_coercivity", "∫|Hu|² ≥ c(M) · weighted Ḣ¹-type norm under (u,Φ_M) = 0", h?),
        entry("h2_coercivity", "∫|H²u|² ≥ c(M) · weighted Ḣ²-type norm under (u,Φ_M) = (Hu,Φ_M) = 0", h2?),
    ])
}

fn jbound_estimates(cfg: &VerifyConfig) -> Result<Vec<InequalityEstimate>, SmapError> {
    let g = RadialGrid::log_uniform(cfg.y_min, cfg.y_max, cfg.grid_n)?;
    let jb = verify_j_bound(&g)?;
    Ok(vec![InequalityEstimate {
        name: "j_bound".into(),
        reference: "max_y (1+Z)AT₁ = max_y y⁻²∫_0^y τΛφ² dτ < 1".into(),
        estimated_constant: jb.max_j,
        grid: g.spec(),
        n_samples: 1,
        pass: jb.max_j < 1.0,
    }])
}

/// Runs the selected suites; the returned flag is the conjunction of all `pass` entries.
pub fn verify(cfg: &VerifyConfig, out: &Path) -> Result<bool, CliError> {
    let wants = |s: Suite| cfg.suite == Suite::All || cfg.suite == s;
    let mut results = Vec::new();
    if wants(Suite::Jbound) {
        results.extend(jbound_estimates(cfg)?);
    }
    if wants(Suite::Hardy) {
        let g = RadialGrid::log_uniform(cfg.y_min, cfg.y_max, cfg.grid_n)?;
        results.extend(verify_hardy_suite(&g, cfg.samples, cfg.seed)?);
    }
    if wants(Suite::Coercivity) {
        results.extend(coercivity_estimates(cfg)?);
    }
    if wants(Suite::Flux) {
        results.extend(flux_estimates(cfg)?);
    }
    let pass = results.iter().all(|r| r.pass);
    let grid = smap_core::GridSpec { y_min: cfg.y_min, y_max: cfg.y_max, n: cfg.grid_n };
    let manifest = Manifest::new("verify", cfg, Some(grid));
    let out = OutDir::create(out)?;
    out.write_json("verification_report.json", &manifest, json!({ "suite": cfg.suite, "pass": pass, "results": results }))?;
    Ok(pass)
}
