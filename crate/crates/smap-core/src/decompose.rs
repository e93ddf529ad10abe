//! Orthogonality-based decomposition of a sphere-valued field near `Q`.

use serde::{Deserialize, Serialize};

use nalgebra::{Matrix4, Vector4};

use crate::error::{numerical, param, Result, SmapError};
use crate::evolve::{rotate, SphereField};
use crate::ground_state::{ambient_to_frame, frame_to_ambient};
use crate::grid::{DiffOrder, Field, RadialGrid};
use crate::modulation_ode::ModulationState;
use crate::operators::{FieldTriple, Operators};
use crate::profiles::{build_t1, scales, CutoffFamily, ProfileBasis, ProfileSet};

pub const DEFAULT_M: f64 = 50.0;
/// Smallest accepted `M`.
pub const MIN_M: f64 = 2.0;

/// `Φ_M = χ_MΛφ - c_M H(χ_MΛφ)` with `c_M` chosen so that `(Φ_M, T₁) = 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiM {
    pub m: f64,
    pub phi: Field,
    pub c_m: f64,
    /// `HΦ_M` on the same grid.
    pub h_phi: Field,
    /// `(Λφ, Φ_M)`.
    pub lambda_pairing: f64,
}

pub fn build_phi_m(m: f64, ops: &Operators, cutoff: &CutoffFamily) -> Result<PhiM> {
    let grid = ops.grid();
    if !(m >= MIN_M) || cutoff.outer * m > grid.y_max() {
        return param(format!("Φ_M needs M ≥ {MIN_M} and 2M ≤ y_max, got M = {m}, y_max = {}", grid.y_max()));
    }
    let base: Field = grid.nodes().iter().zip(ops.lambda_phi()).map(|(y, lp)| cutoff.at_scale(*y, m) * lp).collect();
    // HΛφ = 0, so H(χ_MΛφ) lives where χ_M varies; inside, the stencil output
    // is amplified roundoff. A smooth window keeps the pairings smooth in λ.
    let inner_scale = 0.25 * m * cutoff.inner / cutoff.outer;
    let h_base: Field = ops
        .apply_h(&base)
        .iter()
        .zip(grid.nodes())
        .map(|(h, y)| if *y > cutoff.outer * m { 0.0 } else { (1.0 - cutoff.at_scale(*y, inner_scale)) * h })
        .collect();
    let t1 = build_t1(grid);
    let den = ops.inner(&h_base, &t1);
    if den.abs() < 1e-12 {
        return numerical("degenerate pairing (H(χ_MΛφ), T₁)");
    }
    let c_m = ops.inner(&base, &t1) / den;
    let phi: Field = base.iter().zip(&h_base).map(|(f, h)| f - c_m * h).collect();
    let h_phi: Field = h_base.iter().zip(ops.apply_h(&h_base)).map(|(h, hh)| h - c_m * hh).collect();
    let lambda_pairing = ops.inner(ops.lambda_phi(), &phi);
    Ok(PhiM { m, phi, c_m, h_phi, lambda_pairing })
}

/// Options shared by synthesis and extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub m: f64,
    pub cutoff: CutoffFamily,
    pub order: DiffOrder,
    /// Largest `|b|` accepted while iterating.
    pub b_limit: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { m: DEFAULT_M, cutoff: CutoffFamily::default(), order: DiffOrder::Sixth, b_limit: 0.2, tol: 1e-10, max_iter: 30 }
    }
}

impl DecomposeConfig {
    /// `M` small enough that `HΦ_M` lives where the localized profiles are
    /// uncut for every `|b| ≤ b_max`; otherwise the `(a, b)` pairings vanish.
    pub fn adapted_to(b_max: f64) -> Self {
        let base = DecomposeConfig::default();
        let (_, outer) = scales(b_max);
        let m = DEFAULT_M.min(0.4 * outer).max(MIN_M);
        DecomposeConfig { m, ..base }
    }
}

/// Frenet coordinates of the realized profile: the tangent part
/// `W = α̃₀e_r + β̃₀e_τ` is carried to the sphere by the exponential map at
/// `Q`, giving `(α̃₀ sinc|W|, β̃₀ sinc|W|, cos|W| - 1)`.
pub fn sphere_realization(w: &FieldTriple) -> FieldTriple {
    let n = w.len();
    let mut out = FieldTriple::zeros(n);
    for i in 0..n {
        let (a, b) = (w.alpha[i], w.beta[i]);
        let norm = a.hypot(b);
        let sinc = if norm < 1e-8 { 1.0 - norm * norm / 6.0 } else { norm.sin() / norm };
        out.alpha[i] = a * sinc;
        out.beta[i] = b * sinc;
        // cos|W| - 1 without cancellation
        out.gamma[i] = -2.0 * (0.5 * norm).sin().powi(2);
    }
    out
}

/// Frenet coordinates of `e^{-ΘR} v(λ y)` on the rescaled nodes `y_i = r_i/λ`.
pub fn frenet_coordinates(v: &SphereField, lambda: f64, theta: f64) -> FieldTriple {
    let n = v.len();
    let mut out = FieldTriple::zeros(n);
    for (i, &r) in v.grid().nodes().iter().enumerate() {
        let c = ambient_to_frame(r / lambda, rotate(v.values()[i], -theta));
        out.alpha[i] = c[0];
        out.beta[i] = c[1];
        out.gamma[i] = c[2];
    }
    out
}

/// Operators, profile basis and `Φ_M` on one rescaled grid.
struct Frame {
    lambda: f64,
    ops: Operators,
    basis: ProfileBasis,
    phi: PhiM,
}

impl Frame {
    fn new(grid: &RadialGrid, lambda: f64, cfg: &DecomposeConfig) -> Result<Self> {
        let ops = Operators::new(&grid.scaled(1.0 / lambda), cfg.order);
        let basis = ProfileBasis::new(&ops)?;
        let phi = build_phi_m(cfg.m, &ops, &cfg.cutoff)?;
        Ok(Frame { lambda, ops, basis, phi })
    }

    fn profile(&self, a: f64, b: f64, cfg: &DecomposeConfig) -> Result<FieldTriple> {
        let ps = ProfileSet::from_basis(a, b, &self.ops, &self.basis, &cfg.cutoff)?;
        Ok(sphere_realization(&ps.localized()))
    }
}

/// `v(r) = e^{ΘR}[Q + realized w̃₀(a, b)](r/λ)` on the nodes of `grid`.
pub fn synthesize(grid: &RadialGrid, lambda: f64, theta: f64, a: f64, b: f64, cfg: &DecomposeConfig) -> Result<SphereField> {
    if !(lambda > 0.0) {
        return param(format!("λ must be positive, got {lambda}"));
    }
    let frame = Frame::new(grid, lambda, cfg)?;
    let w = frame.profile(a, b, cfg)?;
    let values = frame
        .ops
        .grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &y)| rotate(frame_to_ambient(y, w.alpha[i], w.beta[i], w.gamma[i]), theta))
        .collect();
    SphereField::new(grid.clone(), values)
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub state: ModulationState,
    /// Radiation in the rescaled variable `y = r/λ`.
    pub w: FieldTriple,
    pub w_perp: FieldTriple,
    /// `(α,Φ_M), (β,Φ_M), (Hα,Φ_M), (Hβ,Φ_M)` divided by `(Λφ,Φ_M)`.
    pub pairings: [f64; 4],
    pub iterations: usize,
    /// Rescaled grid the radiation lives on.
    pub grid: RadialGrid,
    /// d(pairings)/d(λ, Θ, a, b) near the solution.
    pub jacobian: Matrix4<f64>,
}

fn pairings(w: &FieldTriple, frame: &Frame) -> [f64; 4] {
    let ops = &frame.ops;
    let p = &frame.phi;
    let s = 1.0 / p.lambda_pairing;
    [
        s * ops.inner(&w.alpha, &p.phi),
        s * ops.inner(&w.beta, &p.phi),
        s * ops.inner(&w.alpha, &p.h_phi),
        s * ops.inner(&w.beta, &p.h_phi),
    ]
}

fn norm4(f: &[f64; 4]) -> f64 {
    f.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton solve of the four orthogonality conditions for `(λ, Θ, a, b)`,
/// with `w = frenet(v; λ, Θ) - realized w̃₀(a, b)`.
pub fn extract_modulation(v: &SphereField, guess: &ModulationState, cfg: &DecomposeConfig) -> Result<Decomposition> {
    extract_modulation_warm(v, guess, cfg, None)
}

/// As [`extract_modulation`], starting from a previously computed Jacobian
/// (chord iteration). Falls back to a fresh finite-difference Jacobian when
/// the chord step stalls.
pub fn extract_modulation_warm(
    v: &SphereField,
    guess: &ModulationState,
    cfg: &DecomposeConfig,
    prior: Option<&Matrix4<f64>>,
) -> Result<Decomposition> {
    let grid = v.grid();
    let mut x = [guess.lambda, guess.theta, guess.a, guess.b];
    if !(x[0] > 0.0) || x.iter().any(|c| !c.is_finite()) {
        return param(format!("invalid extraction guess {guess:?}"));
    }
    let mut frame = Frame::new(grid, x[0], cfg)?;
    let residual = |x: &[f64; 4], frame: &mut Frame| -> Result<([f64; 4], FieldTriple)> {
        if !(x[0] > 0.0) || x[3].abs() > cfg.b_limit {
            return numerical(format!("parameters left the admissible range: {x:?}"));
        }
        if frame.lambda != x[0] {
            *frame = Frame::new(grid, x[0], cfg)?;
        }
        let w = frenet_coordinates(v, x[0], x[1]).sub(&frame.profile(x[2], x[3], cfg)?);
        Ok((pairings(&w, frame), w))
    };
    let fd_jacobian = |x: &[f64; 4], frame: &mut Frame| -> Result<Matrix4<f64>> {
        let scale_ab = x[3].abs().max(1e-3);
        let steps = [1e-6 * x[0], 1e-6, 1e-6 * scale_ab, 1e-6 * scale_ab];
        let mut jac = Matrix4::zeros();
        for k in 0..4 {
            let mut xp = *x;
            let mut xm = *x;
            xp[k] += steps[k];
            xm[k] -= steps[k];
            let (fp, _) = residual(&xp, frame)?;
            let (fm, _) = residual(&xm, frame)?;
            for r in 0..4 {
                jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * steps[k]);
            }
        }
        let svd = jac.svd(false, false);
        let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
        if !(smin > 1e-10 * smax) {
            return numerical("degenerate extraction Jacobian");
        }
        Ok(jac)
    };
    let (mut f, mut w) = residual(&x, &mut frame)?;
    let mut jac = prior.copied();
    let mut iterations = 0;
    while norm4(&f) > cfg.tol {
        if iterations >= cfg.max_iter {
            return numerical(format!("extraction did not converge (pairing norm {:.3e}); field left the tube", norm4(&f)));
        }
        iterations += 1;
        let base = norm4(&f);
        let rhs = Vector4::from_column_slice(&f);
        let solve = |j: &Matrix4<f64>| j.lu().solve(&rhs).ok_or_else(|| SmapError::Numerical("singular extraction Jacobian".into()));
        if let Some(j) = jac {
            // chord step: accept only a clear contraction
            let delta = solve(&j)?;
            let trial = [x[0] - delta[0], x[1] - delta[1], x[2] - delta[2], x[3] - delta[3]];
            if let Ok((ft, wt)) = residual(&trial, &mut frame) {
                if norm4(&ft) < 0.1 * base {
                    x = trial;
                    f = ft;
                    w = wt;
                    continue;
                }
            }
        }
        let j = fd_jacobian(&x, &mut frame)?;
        jac = Some(j);
        let delta = solve(&j)?;
        let mut damping = 1.0;
        loop {
            let trial = [x[0] - damping * delta[0], x[1] - damping * delta[1], x[2] - damping * delta[2], x[3] - damping * delta[3]];
            match residual(&trial, &mut frame) {
                Ok((ft, wt)) if norm4(&ft) < base || damping < 1e-3 => {
                    x = trial;
                    f = ft;
                    w = wt;
                    break;
                }
                _ if damping < 1e-3 => return numerical("extraction line search failed"),
                _ => damping *= 0.5,
            }
        }
    }
    let jacobian = match jac {
        Some(j) => j,
        None => fd_jacobian(&x, &mut frame)?,
    };
    // make sure the returned radiation lives on the final frame
    let (f, w) = if frame.lambda == x[0] { (f, w) } else { residual(&x, &mut frame)? };
    let state = ModulationState { lambda: x[0], theta: x[1], a: x[2], b: x[3], ..*guess };
    Ok(Decomposition { state, w_perp: w.perp(), w, pairings: f, iterations, grid: frame.ops.grid().clone(), jacobian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::lambda_phi;
    use crate::profiles::t1_closed;

    fn grid() -> RadialGrid {
        RadialGrid::log_uniform(1e-3, 400.0, 1200).unwrap()
    }

    #[test]
    fn phi_m_orthogonality_and_growth() {
        let g = RadialGrid::log_uniform(1e-4, 1e3, 2500).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let t1 = build_t1(&g);
        for &m in &[20.0, 50.0, 100.0] {
            let p = build_phi_m(m, &ops, &CutoffFamily::default()).unwrap();
            assert!(ops.inner(&p.phi, &t1).abs() < 1e-10 * ops.inner(&p.phi, &p.phi).sqrt() * ops.inner(&t1, &t1).sqrt());
            let ratio = p.lambda_pairing / (4.0 * m.ln());
            assert!(ratio > 0.6 && ratio < 1.2, "M = {m}: {ratio}");
        }
        assert!(build_phi_m(1.0, &ops, &CutoffFamily::default()).is_err());
        assert!(build_phi_m(600.0, &ops, &CutoffFamily::default()).is_err());
    }

    #[test]
    fn frenet_coordinates_of_rotated_and_rescaled_q() {
        let g = grid();
        let q = SphereField::q_profile(&g, 1.0);
        let w = frenet_coordinates(&q, 1.0, 0.0);
        assert!(w.components().iter().all(|c| c.iter().all(|v| v.abs() < 1e-15)));
        let th = 1e-3;
        let w = frenet_coordinates(&q.rotated(th), 1.0, 0.0);
        for (i, &y) in g.nodes().iter().enumerate() {
            assert!((w.beta[i] - th.sin() * lambda_phi(y)).abs() < 1e-15);
            assert!(w.alpha[i].abs() < 1e-6);
        }
        let l0 = 1.0 + 1e-4;
        let w = frenet_coordinates(&SphereField::q_profile(&g, l0), 1.0, 0.0);
        for (i, &y) in g.nodes().iter().enumerate() {
            assert!((w.alpha[i] + (l0 - 1.0) * lambda_phi(y)).abs() < 1e-7);
        }
    }

    #[test]
    fn realization_is_on_sphere() {
        let w = FieldTriple { alpha: vec![0.0, 0.3, 1.5], beta: vec![0.0, -0.4, 2.0], gamma: vec![0.0; 3] };
        assert!(sphere_realization(&w).sphere_violation() < 1e-15);
    }

    #[test]
    fn extraction_recovers_q_and_jacobian_pattern() {
        let g = grid();
        let cfg = DecomposeConfig::default();
        let q = SphereField::q_profile(&g, 1.0);
        let guess = ModulationState { lambda: 1.01, theta: 0.02, a: 1e-4, b: 1e-3, ..ModulationState::initial(0.0, 0.0) };
        let d = extract_modulation(&q, &guess, &cfg).unwrap();
        assert!((d.state.lambda - 1.0).abs() < 1e-9 && d.state.theta.abs() < 1e-9);
        assert!(d.state.a.abs() < 1e-9 && d.state.b.abs() < 1e-9);

        let frame = Frame::new(&g, 1.0, &cfg).unwrap();
        let ops = &frame.ops;
        let lp_pair = frame.phi.lambda_pairing;
        let t1 = build_t1(ops.grid());
        assert!(ops.inner(&t1, &frame.phi.phi).abs() < 1e-10 * lp_pair);
        assert!(ops.inner(ops.lambda_phi(), &frame.phi.h_phi).abs() < 1e-6 * lp_pair);
        assert!((ops.inner(&t1, &frame.phi.h_phi) / lp_pair - 1.0).abs() < 1e-6);
        assert!(t1_closed(1.0).is_finite());
    }

    #[test]
    fn synthesis_round_trip() {
        let g = grid();
        let (l0, th0, a0, b0) = (0.9, 0.3, 2e-3, 0.05);
        let cfg = DecomposeConfig::adapted_to(b0);
        let v = synthesize(&g, l0, th0, a0, b0, &cfg).unwrap();
        assert!(v.sphere_violation() < 1e-14);
        let guess = ModulationState { lambda: 1.0, theta: 0.25, a: 0.0, b: 0.04, ..ModulationState::initial(0.0, 0.0) };
        let d = extract_modulation(&v, &guess, &cfg).unwrap();
        assert!((d.state.lambda - l0).abs() < 1e-8);
        assert!((d.state.theta - th0).abs() < 1e-8);
        assert!((d.state.a - a0).abs() < 1e-8);
        assert!((d.state.b - b0).abs() < 1e-8);
    }
}
