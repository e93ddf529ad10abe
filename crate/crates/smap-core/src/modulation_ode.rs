//! The reduced dynamics of `(λ, Θ, a, b)` in the rescaled time `s`,
//! codimension-one shooting for `a₀`, and the blow-up law fit.

use serde::{Deserialize, Serialize};

use crate::error::{numerical, param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
    pub theta: f64,
    pub a: f64,
    pub b: f64,
}

impl ModulationState {
    /// `λ = 1`, `Θ = 0` at `s = t = 0`.
    pub fn initial(a: f64, b: f64) -> Self {
        ModulationState { s: 0.0, t: 0.0, lambda: 1.0, theta: 0.0, a, b }
    }

    /// `κ = a|log b| / (2b)`; zero when `b ≤ 0`.
    pub fn kappa(&self) -> f64 {
        kappa(self.a, self.b)
    }
}

pub fn kappa(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a * b.ln().abs() / (2.0 * b)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    /// `b_s = -b²`, `a_s = 0`.
    Leading,
    /// `b_s = -b²(1 + 2/|log b|) - a²`, `a_s = -2ab/|log b|`.
    Refined,
}

/// Vector field for `(a, b)`; `remainder` injects `ε b²/|log b|^{3/2}` into
/// `a_s` to probe the sensitivity to the dropped error terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeLaw {
    pub kind: LawKind,
    pub remainder: f64,
}

impl OdeLaw {
    pub fn leading() -> Self {
        OdeLaw { kind: LawKind::Leading, remainder: 0.0 }
    }

    pub fn refined() -> Self {
        OdeLaw { kind: LawKind::Refined, remainder: 0.0 }
    }

    pub fn with_remainder(self, eps: f64) -> Self {
        OdeLaw { remainder: eps, ..self }
    }
}

/// Derivatives in `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDerivative {
    pub lambda_s: f64,
    pub theta_s: f64,
    pub a_s: f64,
    pub b_s: f64,
    pub t_s: f64,
}

/// `λ_s = -bλ`, `Θ_s = -a`, `t_s = λ²` and the selected law for `(a, b)`.
/// Outside `0 < b < e⁻¹` the refined law continues as `b_s = -b² - a²`, `a_s = 0`.
pub fn ode_rhs(state: &ModulationState, law: &OdeLaw) -> StateDerivative {
    let (a, b) = (state.a, state.b);
    let (a_s, b_s) = match law.kind {
        LawKind::Leading => (0.0, -b * b),
        LawKind::Refined => {
            if b > 0.0 && b < (-1.0f64).exp() {
                let l = b.ln().abs();
                (-2.0 * a * b / l + law.remainder * b * b / l.powf(1.5), -b * b * (1.0 + 2.0 / l) - a * a)
            } else {
                (0.0, -b * b - a * a)
            }
        }
    };
    StateDerivative {
        lambda_s: -b * state.lambda,
        theta_s: -a,
        a_s,
        b_s,
        t_s: state.lambda * state.lambda,
    }
}

/// Stop conditions, checked after every accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub s_end: f64,
    /// Stop once `0 < b ≤ b_floor`.
    pub b_floor: Option<f64>,
    /// Stop once `|κ| ≥ kappa_exit`.
    pub kappa_exit: Option<f64>,
    pub lambda_min: Option<f64>,
    /// Stop when `b` changes sign.
    pub stop_on_escape: bool,
}

impl StopRule {
    pub fn until(s_end: f64) -> Self {
        StopRule { s_end, b_floor: None, kappa_exit: None, lambda_min: None, stop_on_escape: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Horizon,
    BFloor,
    KappaExit { side: i8 },
    LambdaFloor,
    Escaped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<ModulationState>,
    /// `t_k - t_{k-1}` as integrated over step `k` (zero for `k = 0`).
    pub dt: Vec<f64>,
    pub derivs: Vec<StateDerivative>,
    pub outcome: Outcome,
    /// `s` at which `b` first crossed zero (linear interpolation between steps).
    pub escape_s: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &ModulationState {
        self.points.last().expect("trajectory is never empty")
    }

    /// Cubic Hermite interpolation of the state at `s` inside the integrated range.
    pub fn sample(&self, s: f64) -> Option<ModulationState> {
        let k = self.points.partition_point(|p| p.s < s);
        if k == 0 {
            return (self.points[0].s == s).then_some(self.points[0]);
        }
        if k >= self.points.len() {
            return None;
        }
        let (p0, p1) = (&self.points[k - 1], &self.points[k]);
        let (d0, d1) = (&self.derivs[k - 1], &self.derivs[k]);
        let h = p1.s - p0.s;
        let u = (s - p0.s) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u).powi(2);
        let h10 = u * (1.0 - u).powi(2);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let herm = |y0: f64, y1: f64, m0: f64, m1: f64| h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
        Some(ModulationState {
            s,
            t: herm(p0.t, p1.t, d0.t_s, d1.t_s),
            lambda: herm(p0.lambda, p1.lambda, d0.lambda_s, d1.lambda_s),
            theta: herm(p0.theta, p1.theta, d0.theta_s, d1.theta_s),
            a: herm(p0.a, p1.a, d0.a_s, d1.a_s),
            b: herm(p0.b, p1.b, d0.b_s, d1.b_s),
        })
    }
}

// Dormand–Prince 5(4)
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

type Vec5 = [f64; 5];

fn pack(st: &ModulationState) -> Vec5 {
    [st.lambda, st.theta, st.a, st.b, st.t]
}

fn unpack(s: f64, y: &Vec5) -> ModulationState {
    ModulationState { s, lambda: y[0], theta: y[1], a: y[2], b: y[3], t: y[4] }
}

fn deriv(s: f64, y: &Vec5, law: &OdeLaw) -> Vec5 {
    let d = ode_rhs(&unpack(s, y), law);
    [d.lambda_s, d.theta_s, d.a_s, d.b_s, d.t_s]
}

const MAX_STEPS: usize = 5_000_000;

/// Adaptive Dormand–Prince integration with relative tolerance `rtol`. The
/// error of `(a, b)` is measured against `|b|`, the time `t` is carried
/// along without error control (its increments inherit the accuracy of `λ`).
pub fn integrate(state0: &ModulationState, law: &OdeLaw, stop: &StopRule, rtol: f64) -> Result<Trajectory> {
    if !(state0.lambda > 0.0) || !state0.b.is_finite() || !state0.a.is_finite() {
        return param(format!("invalid initial state {state0:?}"));
    }
    if !(rtol > 0.0 && rtol < 1e-2) {
        return param(format!("tolerance {rtol} out of range"));
    }
    let b_scale0 = state0.b.abs().max(state0.a.abs()).max(1e-300);
    let mut s = state0.s;
    let mut y = pack(state0);
    let mut k1 = deriv(s, &y, law);
    let mut points = vec![*state0];
    let mut dts = vec![0.0];
    let mut derivs = vec![ode_rhs(state0, law)];
    let mut h = (1e-3 / b_scale0).min(stop.s_end - s).max(1e-12);
    let mut outcome = Outcome::Horizon;
    let mut escape_s = None;
    let mut steps = 0;
    while s < stop.s_end {
        steps += 1;
        if steps > MAX_STEPS {
            return numerical("modulation integrator exceeded the step budget");
        }
        h = h.min(stop.s_end - s);
        let mut k = [[0.0; 5]; 7];
        k[0] = k1;
        for stage in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(stage) {
                for c in 0..5 {
                    ys[c] += h * A[stage][j] * kj[c];
                }
            }
            k[stage] = deriv(s + C[stage] * h, &ys, law);
        }
        let mut y5 = y;
        let mut err = [0.0; 5];
        let mut dt = 0.0;
        for c in 0..5 {
            let mut inc5 = 0.0;
            let mut inc4 = 0.0;
            for st in 0..7 {
                inc5 += B5[st] * k[st][c];
                inc4 += B4[st] * k[st][c];
            }
            y5[c] += h * inc5;
            err[c] = h * (inc5 - inc4);
            if c == 4 {
                dt = h * inc5;
            }
        }
        let b_scale = y[3].abs().max(y5[3].abs()).max(1e-8 * b_scale0);
        let scales = [
            y[0].abs().max(y5[0].abs()),
            y[1].abs().max(y5[1].abs()).max(1e-6),
            b_scale,
            b_scale,
        ];
        let norm = (0..4).map(|c| (err[c] / (rtol * scales[c])).powi(2)).sum::<f64>().sqrt() / 2.0;
        if !norm.is_finite() {
            h *= 0.25;
            if h < 1e-14 * s.abs().max(1.0) {
                return numerical("step size underflow in modulation integrator");
            }
            continue;
        }
        if norm <= 1.0 {
            let s_new = s + h;
            if y[3] > 0.0 && y5[3] <= 0.0 && escape_s.is_none() {
                escape_s = Some(s + h * y[3] / (y[3] - y5[3]));
            }
            s = s_new;
            y = y5;
            k1 = k[6];
            let st = unpack(s, &y);
            points.push(st);
            dts.push(dt);
            derivs.push(ode_rhs(&st, law));
            if let Some(kx) = stop.kappa_exit {
                let kap = st.kappa();
                if kap.abs() >= kx {
                    outcome = Outcome::KappaExit { side: kap.signum() as i8 };
                    break;
                }
            }
            if stop.stop_on_escape && escape_s.is_some() {
                outcome = Outcome::Escaped;
                break;
            }
            if let Some(bf) = stop.b_floor {
                if st.b > 0.0 && st.b <= bf {
                    outcome = Outcome::BFloor;
                    break;
                }
            }
            if let Some(lm) = stop.lambda_min {
                if st.lambda <= lm {
                    outcome = Outcome::LambdaFloor;
                    break;
                }
            }
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * s.abs().max(1.0) {
            return numerical("step size underflow in modulation integrator");
        }
    }
    Ok(Trajectory { points, dt: dts, derivs, outcome, escape_s })
}

/// Exit side of a trajectory started at `(a₀, b₀)`: `±1` through `κ = ±1`,
/// `0` if it stays trapped until `b ≤ b₀/horizon_ratio`.
pub fn exit_side(a0: f64, b0: f64, law: &OdeLaw, horizon_ratio: f64, rtol: f64) -> Result<(i8, Trajectory)> {
    let stop = StopRule {
        s_end: f64::INFINITY,
        b_floor: Some(b0 / horizon_ratio),
        kappa_exit: Some(1.0),
        lambda_min: None,
        stop_on_escape: true,
    };
    let tr = integrate(&ModulationState::initial(a0, b0), law, &stop, rtol)?;
    let side = match tr.outcome {
        Outcome::KappaExit { side } => side,
        Outcome::Escaped => tr.last().a.signum() as i8,
        _ => 0,
    };
    Ok((side, tr))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShootResult {
    pub a0: f64,
    pub interval: (f64, f64),
    pub endpoint_sides: (i8, i8),
    pub bisection_steps: usize,
    pub trajectory: Trajectory,
}

const SHOOT_RTOL: f64 = 1e-10;

/// Bisection for the trapped `a₀` inside `|a₀| ≤ b₀/(4|log b₀|)`.
pub fn shoot_a0(b0: f64, law: &OdeLaw, horizon_ratio: f64, b_star: f64) -> Result<ShootResult> {
    if !(b0 > 0.0 && b0 < b_star) {
        return param(format!("b0 = {b0} outside (0, {b_star})"));
    }
    if !(horizon_ratio > 1.0) {
        return param("horizon ratio must exceed 1");
    }
    let half = b0 / (4.0 * b0.ln().abs());
    let (mut lo, mut hi) = (-half, half);
    let (side_lo, _) = exit_side(lo, b0, law, horizon_ratio, SHOOT_RTOL)?;
    let (side_hi, _) = exit_side(hi, b0, law, horizon_ratio, SHOOT_RTOL)?;
    if side_lo != -1 || side_hi != 1 {
        return numerical(format!("shooting endpoints exit on sides ({side_lo}, {side_hi}); widen the interval"));
    }
    let mut steps = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        steps += 1;
        let (side, tr) = exit_side(mid, b0, law, horizon_ratio, SHOOT_RTOL)?;
        if side == 0 || hi - lo <= 1e-14 * b0 || steps >= 60 {
            return Ok(ShootResult {
                a0: mid,
                interval: (-half, half),
                endpoint_sides: (side_lo, side_hi),
                bisection_steps: steps,
                trajectory: tr,
            });
        }
        if side < 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Fit of `λ(t) = κ (T-t)/|log(T-t)|²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupFit {
    pub t_blowup: f64,
    /// Spread of the tail-corrected `T` estimates over three nested end windows.
    pub t_spread: f64,
    pub kappa: f64,
    /// `(T-t, r)` with `r = λ|log(T-t)|²/(T-t)`.
    pub ratio_series: Vec<(f64, f64)>,
    /// Relative change of `r` across each decade of `T-t`, earliest decade first.
    pub drift: Vec<f64>,
}

/// `∫_s^∞ λ² ds` for a locally power-law `λ² ∝ s^{-2sb}`.
fn tail_time(p: &ModulationState) -> f64 {
    let q = 2.0 * p.s * p.b - 1.0;
    if q > 0.0 {
        p.lambda * p.lambda * p.s / q
    } else {
        0.0
    }
}

pub fn fit_blowup_law(tr: &Trajectory) -> Result<BlowupFit> {
    let n = tr.points.len();
    let first = tr.points[0].lambda;
    let last = tr.last();
    if n < 10 || !(last.lambda > 0.0) || (first / last.lambda).log10() < 3.0 {
        return param("blow-up fit needs λ to decrease by at least three decades");
    }
    // remaining time before each point, summed backwards from the tail
    let tail = tail_time(last);
    let mut remaining = vec![0.0; n];
    remaining[n - 1] = tail;
    for k in (0..n - 1).rev() {
        remaining[k] = remaining[k + 1] + tr.dt[k + 1];
    }
    let t_blowup = last.t + tail;
    let windows: Vec<f64> = [n - 1, (n - 1) * 9 / 10, (n - 1) * 8 / 10].iter().map(|&k| tr.points[k].t + tail_time(&tr.points[k])).collect();
    let t_spread = windows.iter().fold(0.0f64, |m, w| m.max((w - t_blowup).abs()));
    let ratio_series: Vec<(f64, f64)> = (0..n)
        .filter(|&k| remaining[k] > 0.0 && remaining[k] < 0.5)
        .map(|k| {
            let r = remaining[k];
            (r, tr.points[k].lambda * r.ln().powi(2) / r)
        })
        .collect();
    if ratio_series.len() < 4 {
        return param("too few samples close to the blow-up time");
    }
    let kappa = ratio_series.last().unwrap().1;
    let top = ratio_series[0].0.log10().floor() as i64;
    let bottom = ratio_series.last().unwrap().0.log10().ceil() as i64;
    let mut drift = Vec::new();
    for d in (bottom..top).rev() {
        let (hi, lo) = (10f64.powi(d as i32 + 1), 10f64.powi(d as i32));
        let inside: Vec<&(f64, f64)> = ratio_series.iter().filter(|(r, _)| *r <= hi && *r >= lo).collect();
        if inside.len() >= 2 {
            let (r0, r1) = (inside[0].1, inside[inside.len() - 1].1);
            drift.push((r1 - r0).abs() / r1.abs());
        }
    }
    Ok(BlowupFit { t_blowup, t_spread, kappa, ratio_series, drift })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhs_examples() {
        let st = ModulationState::initial(0.0, 0.02);
        let d = ode_rhs(&st, &OdeLaw::leading());
        assert_eq!((d.lambda_s, d.theta_s, d.a_s, d.b_s), (-0.02, -0.0, 0.0, -0.0004));
        let d = ode_rhs(&ModulationState::initial(0.0, 1e-3), &OdeLaw::refined());
        assert!((d.b_s + 1e-6 * (1.0 + 2.0 / 1000f64.ln())).abs() < 1e-20);
        let d = ode_rhs(&ModulationState::initial(1e-4, 1e-3), &OdeLaw::refined());
        assert!(d.a_s < 0.0);
        let d = ode_rhs(&ModulationState::initial(1e-4, -1e-3), &OdeLaw::refined());
        assert_eq!(d.a_s, 0.0);
        assert!((d.b_s + 1e-6 + 1e-8).abs() < 1e-20);
    }

    #[test]
    fn leading_law_closed_form() {
        let b0 = 1e-2;
        let tr = integrate(&ModulationState::initial(0.0, b0), &OdeLaw::leading(), &StopRule::until(1e5), 1e-10).unwrap();
        for p in &tr.points {
            let b = 1.0 / (p.s + 1.0 / b0);
            assert!((p.b - b).abs() <= 1e-9 * b);
            assert!((p.lambda - 1.0 / (1.0 + b0 * p.s)).abs() <= 1e-9 * p.lambda);
        }
        let mid = tr.sample(123.4).unwrap();
        assert!((mid.b - 1.0 / (123.4 + 100.0)).abs() < 1e-5 * mid.b);
    }

    #[test]
    fn bracket_monotonicity_along_refined_flow() {
        // α = 2 ∓ 2/√log M with M = 50
        let c = 2.0 / 50f64.ln().sqrt();
        let tr = integrate(&ModulationState::initial(0.0, 1e-2), &OdeLaw::refined(), &StopRule::until(1e7), 1e-10).unwrap();
        for (alpha, sign) in [(2.0 - c, -1.0), (2.0 + c, 1.0)] {
            let q: Vec<f64> = tr.points.iter().map(|p| p.b * p.b.ln().abs().powf(alpha) / p.lambda).collect();
            assert!(q.windows(2).all(|w| sign * (w[1] - w[0]) >= 0.0), "alpha = {alpha}");
        }
    }

    #[test]
    fn kappa_moves_away_from_zero() {
        let b0: f64 = 1e-2;
        let a0 = 0.2 * b0 / b0.ln().abs();
        let tr = integrate(
            &ModulationState::initial(a0, b0),
            &OdeLaw::refined(),
            &StopRule { kappa_exit: Some(1.0), ..StopRule::until(1e9) },
            1e-10,
        )
        .unwrap();
        let k: Vec<f64> = tr.points.iter().map(|p| p.kappa()).collect();
        assert!(k.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(tr.outcome, Outcome::KappaExit { side: 1 });
    }

    #[test]
    fn shooting_with_injected_remainder_stays_trapped() {
        let b0 = 1e-2;
        let law = OdeLaw::refined().with_remainder(0.05);
        let r = shoot_a0(b0, &law, 100.0, 0.05).unwrap();
        assert_eq!(r.endpoint_sides, (-1, 1));
        assert!(r.trajectory.points.iter().all(|p| p.kappa().abs() < 1.0));
        assert!(r.trajectory.last().b <= b0 / 100.0);
        assert!(shoot_a0(0.2, &law, 100.0, 0.05).is_err());
    }
}
