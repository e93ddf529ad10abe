//! Sphere-valued radial solver for `∂_t v = v ∧ (Δv + R²v/r²)`, the
//! 1-equivariant reduction of `∂_t u = u ∧ Δu` with `u = e^{θR} v(t, r)`.
//!
//! Space is a finite-volume discretization on a log grid with the origin
//! pinned to `e_z` and the outer node held fixed. Time stepping is the
//! implicit midpoint rule solved by Newton, which conserves `|v_i|` and the
//! discrete Dirichlet energy exactly up to the solver tolerance.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::decompose::{extract_modulation, extract_modulation_warm, DecomposeConfig, Decomposition};
use crate::diagnostics::{energies, Energies};
use crate::error::{numerical, param, Result};
use crate::ground_state::{lambda_phi, z_fn};
use crate::grid::{DiffOrder, RadialGrid};
use crate::operators::Operators;
use crate::modulation_ode::ModulationState;

pub type Vec3 = [f64; 3];

/// `e^{θR} v` with `R = [[0,-1,0],[1,0,0],[0,0,0]]`.
pub fn rotate(v: Vec3, theta: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unit vectors `v(r_i)` on the nodes of a radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    grid: RadialGrid,
    v: Vec<Vec3>,
}

impl SphereField {
    pub fn new(grid: RadialGrid, v: Vec<Vec3>) -> Result<Self> {
        if grid.len() != v.len() {
            return param(format!("{} values for {} nodes", v.len(), grid.len()));
        }
        if v.iter().flatten().any(|x| !x.is_finite()) {
            return numerical("non-finite sphere field");
        }
        Ok(SphereField { grid, v })
    }

    /// `Q(r/λ) = (Λφ, 0, Z)(r/λ)`.
    pub fn q_profile(grid: &RadialGrid, lambda: f64) -> Self {
        let v = grid.nodes().iter().map(|r| [lambda_phi(r / lambda), 0.0, z_fn(r / lambda)]).collect();
        SphereField { grid: grid.clone(), v }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec3] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn rotated(&self, theta: f64) -> Self {
        SphereField { grid: self.grid.clone(), v: self.v.iter().map(|x| rotate(*x, theta)).collect() }
    }

    /// `max_i ||v_i|² - 1|`.
    pub fn sphere_violation(&self) -> f64 {
        self.v.iter().map(|x| (dot(x, x) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn normalize(&mut self) {
        for x in &mut self.v {
            let n = dot(x, x).sqrt();
            x.iter_mut().for_each(|c| *c /= n);
        }
    }

    pub fn max_distance(&self, other: &Self) -> f64 {
        self.v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

/// Finite-volume `Δ + R²/r²` with the origin ghost `e_z` and a fixed last node.
#[derive(Debug, Clone)]
pub struct RadialOperator {
    r: Vec<f64>,
    /// `κ_{i-1/2} / w_i` and `κ_{i+1/2} / w_i`.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Face conductances `κ_{i-1/2} = r_{i-1/2} / (r_i - r_{i-1})`, face 0 against the origin.
    faces: Vec<f64>,
    /// Dual cell areas `w_i`.
    cells: Vec<f64>,
}

const ORIGIN: Vec3 = [0.0, 0.0, 1.0];

impl RadialOperator {
    pub fn new(grid: &RadialGrid) -> Self {
        let r = grid.nodes().to_vec();
        let n = r.len();
        let left = |i: usize| if i == 0 { 0.0 } else { r[i - 1] };
        let faces: Vec<f64> = (0..n).map(|i| 0.5 * (r[i] + left(i)) / (r[i] - left(i))).collect();
        let cells: Vec<f64> = (0..n)
            .map(|i| {
                let right = if i + 1 < n { r[i + 1] } else { r[i] };
                r[i] * (right - left(i)) / 2.0
            })
            .collect();
        let lower = (0..n).map(|i| faces[i] / cells[i]).collect();
        let upper = (0..n).map(|i| if i + 1 < n { faces[i + 1] / cells[i] } else { 0.0 }).collect();
        RadialOperator { r, lower, upper, faces, cells }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Magnitude of the row `i` coefficients, the roundoff scale of `(Lv)_i`.
    pub fn scale(&self, i: usize) -> f64 {
        self.lower[i] + self.upper[i] + 1.0 / (self.r[i] * self.r[i])
    }

    fn neighbor_left<'a>(&self, v: &'a [Vec3], i: usize) -> &'a Vec3 {
        if i == 0 {
            &ORIGIN
        } else {
            &v[i - 1]
        }
    }

    /// `(Lv)_i` at an interior node.
    fn apply_at(&self, v: &[Vec3], i: usize) -> Vec3 {
        let l = self.neighbor_left(v, i);
        let u = &v[i + 1];
        let c = &v[i];
        let r2 = self.r[i] * self.r[i];
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = self.lower[i] * (l[k] - c[k]) + self.upper[i] * (u[k] - c[k]);
        }
        out[0] -= c[0] / r2;
        out[1] -= c[1] / r2;
        out
    }

    /// `v ∧ Lv` at every node, zero at the fixed last node.
    pub fn rhs(&self, v: &[Vec3]) -> Vec<Vec3> {
        let n = v.len();
        let mut out = vec![[0.0; 3]; n];
        for i in 0..n - 1 {
            out[i] = cross(&v[i], &self.apply_at(v, i));
        }
        out
    }

    /// Discrete Dirichlet energy
    /// `2π [Σ_faces κ |Δv|² + Σ_i w_i (v₁² + v₂²)/r_i²]`.
    pub fn energy(&self, v: &[Vec3]) -> f64 {
        let n = v.len();
        let mut e = 0.0;
        for i in 0..n {
            let l = self.neighbor_left(v, i);
            let d = [v[i][0] - l[0], v[i][1] - l[1], v[i][2] - l[2]];
            e += self.faces[i] * dot(&d, &d);
            e += self.cells[i] * (v[i][0].powi(2) + v[i][1].powi(2)) / (self.r[i] * self.r[i]);
        }
        2.0 * PI * e
    }
}

fn skew(a: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0)
}

/// Newton tolerance on the update of the implicit midpoint equations.
const NEWTON_TOL: f64 = 1e-13;
/// Times a failed step is retried as two half steps.
const MAX_HALVINGS: usize = 6;
const NEWTON_MAX: usize = 25;

/// One implicit midpoint step `v' = v + dt (v_m ∧ L v_m)`, `v_m = (v+v')/2`,
/// followed by renormalization. Returns the pre-projection constraint drift.
pub fn midpoint_step(op: &RadialOperator, v: &[Vec3], dt: f64) -> Result<(Vec<Vec3>, f64)> {
    let n = v.len();
    let mut next = v.to_vec();
    let mut converged = false;
    for _ in 0..NEWTON_MAX {
        let mid: Vec<Vec3> = (0..n).map(|i| [0.5 * (v[i][0] + next[i][0]), 0.5 * (v[i][1] + next[i][1]), 0.5 * (v[i][2] + next[i][2])]).collect();
        let lm: Vec<Vec3> = (0..n - 1).map(|i| op.apply_at(&mid, i)).collect();
        let mut g = vec![Vector3::zeros(); n - 1];
        for i in 0..n - 1 {
            let f = cross(&mid[i], &lm[i]);
            for k in 0..3 {
                g[i][k] = next[i][k] - v[i][k] - dt * f[k];
            }
        }
        // block tridiagonal Jacobian of G with respect to v'
        let m = n - 1;
        let mut diag = Vec::with_capacity(m);
        let mut lower = Vec::with_capacity(m);
        let mut upper = Vec::with_capacity(m);
        for i in 0..m {
            let r2 = op.r[i] * op.r[i];
            let sk = skew(&mid[i]);
            let lmat = Matrix3::from_diagonal(&Vector3::new(
                -op.lower[i] - op.upper[i] - 1.0 / r2,
                -op.lower[i] - op.upper[i] - 1.0 / r2,
                -op.lower[i] - op.upper[i],
            ));
            let d = Matrix3::identity() - 0.5 * dt * (sk * lmat - skew(&lm[i]));
            diag.push(d);
            lower.push(-0.5 * dt * op.lower[i] * sk);
            upper.push(-0.5 * dt * op.upper[i] * sk);
        }
        // the fixed last node does not couple as an unknown
        let delta = block_thomas(&lower, &diag, &upper, &g)?;
        let mut size: f64 = 0.0;
        for i in 0..m {
            for k in 0..3 {
                next[i][k] -= delta[i][k];
                size = size.max(delta[i][k].abs());
            }
        }
        if !size.is_finite() {
            break;
        }
        if size <= NEWTON_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return numerical("implicit midpoint Newton iteration did not converge");
    }
    let drift = next.iter().map(|x| (dot(x, x) - 1.0).abs()).fold(0.0, f64::max);
    for x in next.iter_mut().take(n - 1) {
        let s = dot(x, x).sqrt();
        x.iter_mut().for_each(|c| *c /= s);
    }
    Ok((next, drift))
}

/// Advance by `dt`, replacing a step whose Newton solve fails by two half steps.
pub fn adaptive_step(op: &RadialOperator, v: &[Vec3], dt: f64) -> Result<(Vec<Vec3>, f64)> {
    fn go(op: &RadialOperator, v: &[Vec3], dt: f64, depth: usize) -> Result<(Vec<Vec3>, f64)> {
        match midpoint_step(op, v, dt) {
            Ok(x) => Ok(x),
            Err(_) if depth < MAX_HALVINGS => {
                let (half, d1) = go(op, v, dt / 2.0, depth + 1)?;
                let (full, d2) = go(op, &half, dt / 2.0, depth + 1)?;
                Ok((full, d1.max(d2)))
            }
            Err(e) => Err(e),
        }
    }
    go(op, v, dt, 0)
}

fn block_thomas(lower: &[Matrix3<f64>], diag: &[Matrix3<f64>], upper: &[Matrix3<f64>], rhs: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let m = diag.len();
    let mut c_prime: Vec<Matrix3<f64>> = Vec::with_capacity(m);
    let mut d_prime: Vec<Vector3<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let (a, r) = if i == 0 {
            (diag[0], rhs[0])
        } else {
            (diag[i] - lower[i] * c_prime[i - 1], rhs[i] - lower[i] * d_prime[i - 1])
        };
        let inv = a.try_inverse().ok_or_else(|| crate::SmapError::Numerical("singular block in midpoint solve".into()))?;
        c_prime.push(inv * upper[i]);
        d_prime.push(inv * r);
    }
    let mut x = vec![Vector3::zeros(); m];
    x[m - 1] = d_prime[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d_prime[i] - c_prime[i] * x[i + 1];
    }
    Ok(x)
}

/// The discrete harmonic map: the planar field `(sin θ_i, 0, cos θ_i)` with
/// `v ∧ Lv = 0` at every interior node, origin at `e_z` and the last node at
/// `Q(r_max/λ)`.
pub fn discrete_harmonic_map(grid: &RadialGrid, lambda: f64) -> Result<SphereField> {
    let op = RadialOperator::new(grid);
    let r = grid.nodes();
    let n = r.len();
    let mut th: Vec<f64> = r.iter().map(|x| 2.0 * (x / lambda).atan()).collect();
    for _ in 0..50 {
        let m = n - 1;
        let mut g = vec![0.0; m];
        let (mut a, mut b, mut c) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            let left = if i == 0 { 0.0 } else { th[i - 1] };
            let right = th[i + 1];
            let (dl, du) = (left - th[i], right - th[i]);
            g[i] = op.lower[i] * dl.sin() + op.upper[i] * du.sin() - th[i].sin() * th[i].cos() / (r[i] * r[i]);
            a[i] = if i == 0 { 0.0 } else { op.lower[i] * dl.cos() };
            c[i] = if i + 1 < m { op.upper[i] * du.cos() } else { 0.0 };
            b[i] = -op.lower[i] * dl.cos() - op.upper[i] * du.cos() - (2.0 * th[i]).cos() / (r[i] * r[i]);
        }
        let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let scale = g.iter().zip(&b).map(|(gi, bi)| (gi / bi).abs()).fold(0.0, f64::max);
        if scale < 1e-15 || gmax == 0.0 {
            break;
        }
        let delta = thomas(&a, &b, &c, &g);
        for i in 0..m {
            th[i] -= delta[i];
        }
    }
    let v = th.iter().map(|t| [t.sin(), 0.0, t.cos()]).collect();
    SphereField::new(grid.clone(), v)
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Prepend `extra` log-spaced nodes inside the first node, filling them from
/// the regular expansion `v₁,₂ ≈ r(c₁ + c₃r²)`, `v₃ ≈ 1 + d₂r²` fitted on the
/// first two nodes.
pub fn refine_origin(field: &SphereField, extra: usize) -> Result<SphereField> {
    let g = field.grid();
    let q = g.log_step().exp();
    let y_min = g.y_min() / q.powi(extra as i32);
    let grid = RadialGrid::log_uniform(y_min, g.y_max(), g.len() + extra)?;
    let r = g.nodes();
    let v = field.values();
    let (r0, r1) = (r[0], r[1]);
    let mut fit = [[0.0; 2]; 3];
    for k in 0..2 {
        // v_k / r = c1 + c3 r²
        let (f0, f1) = (v[0][k] / r0, v[1][k] / r1);
        let c3 = (f1 - f0) / (r1 * r1 - r0 * r0);
        fit[k] = [f0 - c3 * r0 * r0, c3];
    }
    let d2 = (v[0][2] - 1.0) / (r0 * r0);
    let mut values = Vec::with_capacity(grid.len());
    for &x in &grid.nodes()[..extra] {
        let mut p = [x * (fit[0][0] + fit[0][1] * x * x), x * (fit[1][0] + fit[1][1] * x * x), 1.0 + d2 * x * x];
        let s = dot(&p, &p).sqrt();
        p.iter_mut().for_each(|c| *c /= s);
        values.push(p);
    }
    values.extend_from_slice(v);
    SphereField::new(grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n: usize,
    /// `dt = dt_factor · λ²`, capped by `dt_max`.
    pub dt_factor: f64,
    pub dt_max: f64,
    pub t_end: f64,
    /// Stop when the extracted `λ` falls below this value.
    pub lambda_min: f64,
    /// Stop after `b` has stayed negative while `λ` grew by this factor from its minimum.
    pub arrest_growth: f64,
    /// Abort if the sphere constraint is violated beyond this.
    pub violation_cap: f64,
    /// Re-grid when `λ` falls below this fraction of its value at the last re-grid.
    pub regrid_ratio: f64,
    /// Steps between extractions.
    pub extract_every: usize,
    /// Extractions between stored snapshots (0 = none).
    pub snapshot_every: usize,
    pub decompose: DecomposeConfig,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            r_min: 1e-3,
            r_max: 200.0,
            n: 1200,
            dt_factor: 0.02,
            dt_max: 0.05,
            t_end: 100.0,
            lambda_min: 0.05,
            arrest_growth: 1.5,
            violation_cap: 1e-10,
            regrid_ratio: 0.5,
            extract_every: 10,
            snapshot_every: 0,
            decompose: DecomposeConfig::default(),
        }
    }
}

impl EvolveConfig {
    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::log_uniform(self.r_min, self.r_max, self.n)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSample {
    pub state: ModulationState,
    pub energy: f64,
    pub energies: Energies,
    pub sphere_violation: f64,
    pub pairing_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    TimeLimit,
    LambdaFloor,
    Arrested,
    LeftTube,
    ConstraintViolation,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub samples: Vec<RunSample>,
    pub snapshots: Vec<(f64, SphereField)>,
    pub outcome: RunOutcome,
    pub message: String,
    /// Times at which the grid was refined, with the energy before and after.
    pub regrids: Vec<(f64, f64, f64)>,
    pub steps: usize,
    pub max_step_drift: f64,
    pub last_decomposition: Option<Decomposition>,
}

impl RunRecord {
    pub fn min_lambda(&self) -> f64 {
        self.samples.iter().map(|s| s.state.lambda).fold(f64::INFINITY, f64::min)
    }
}

fn pairing_norm(d: &Decomposition) -> f64 {
    d.pairings.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Evolve `v0` and decompose at the configured cadence.
pub fn evolve_run(v0: &SphereField, guess: &ModulationState, cfg: &EvolveConfig) -> Result<RunRecord> {
    if !(cfg.dt_factor > 0.0) || cfg.extract_every == 0 {
        return param("dt_factor must be positive and extract_every nonzero");
    }
    let mut field = v0.clone();
    let mut op = RadialOperator::new(field.grid());
    let mut t = 0.0;
    let mut s = 0.0;
    let first = extract_modulation(&field, guess, &cfg.decompose)?;
    let mut state = ModulationState { s, t, ..first.state };
    let mut samples = vec![sample(&field, &op, &first, state)];
    let mut snapshots = Vec::new();
    if cfg.snapshot_every > 0 {
        snapshots.push((t, field.clone()));
    }
    let mut last = first;
    let mut trend: Option<(ModulationState, f64)> = None;
    let mut lambda_ref = state.lambda;
    let mut lambda_low = state.lambda;
    let mut regrids = Vec::new();
    let mut steps = 0;
    let mut max_drift: f64 = 0.0;
    let mut outcome = RunOutcome::TimeLimit;
    let mut message = String::new();
    'outer: while t < cfg.t_end {
        let dt_base = (cfg.dt_factor * state.lambda * state.lambda).min(cfg.dt_max);
        let lambda_before = state.lambda;
        let mut done = 0;
        let mut elapsed = 0.0;
        while done < cfg.extract_every && t < cfg.t_end {
            let dt = dt_base.min(cfg.t_end - t);
            let (next, drift) = match adaptive_step(&op, field.values(), dt) {
                Ok(x) => x,
                Err(e) => {
                    outcome = RunOutcome::ConstraintViolation;
                    message = e.to_string();
                    break 'outer;
                }
            };
            max_drift = max_drift.max(drift);
            field = SphereField::new(field.grid().clone(), next)?;
            t += dt;
            elapsed += dt;
            steps += 1;
            done += 1;
        }
        let violation = field.sphere_violation();
        if violation > cfg.violation_cap {
            outcome = RunOutcome::ConstraintViolation;
            message = format!("sphere constraint violated by {violation:.3e}");
            break;
        }
        let mut guess = ModulationState { s, t, ..last.state };
        if let Some((prev, span)) = trend {
            // linear predictor from the previous two extractions
            let r = elapsed / span;
            guess.lambda += r * (last.state.lambda - prev.lambda);
            guess.theta += r * (last.state.theta - prev.theta);
            guess.a += r * (last.state.a - prev.a);
            guess.b += r * (last.state.b - prev.b);
            if !(guess.lambda > 0.0) {
                guess.lambda = last.state.lambda;
            }
        }
        let d = match extract_modulation_warm(&field, &guess, &cfg.decompose, Some(&last.jacobian)) {
            Ok(d) => d,
            Err(e) => {
                outcome = RunOutcome::LeftTube;
                message = e.to_string();
                break;
            }
        };
        // s = ∫ dt/λ², trapezoid between extractions
        s += 0.5 * elapsed * (1.0 / (lambda_before * lambda_before) + 1.0 / (d.state.lambda * d.state.lambda));
        state = ModulationState { s, t, ..d.state };
        samples.push(sample(&field, &op, &d, state));
        if cfg.snapshot_every > 0 && samples.len() % cfg.snapshot_every == 0 {
            snapshots.push((t, field.clone()));
        }
        trend = Some((last.state, elapsed));
        last = d;
        lambda_low = lambda_low.min(state.lambda);
        if state.lambda <= cfg.lambda_min {
            outcome = RunOutcome::LambdaFloor;
            break;
        }
        if state.b < 0.0 && state.lambda >= cfg.arrest_growth * lambda_low {
            outcome = RunOutcome::Arrested;
            break;
        }
        if state.lambda < cfg.regrid_ratio * lambda_ref {
            let before = op.energy(field.values());
            let extra = (std::f64::consts::LN_2 / field.grid().log_step()).ceil() as usize;
            field = refine_origin(&field, extra)?;
            op = RadialOperator::new(field.grid());
            regrids.push((t, before, op.energy(field.values())));
            lambda_ref = state.lambda;
        }
    }
    Ok(RunRecord { samples, snapshots, outcome, message, regrids, steps, max_step_drift: max_drift, last_decomposition: Some(last) })
}

fn sample(field: &SphereField, op: &RadialOperator, d: &Decomposition, state: ModulationState) -> RunSample {
    RunSample {
        state,
        energy: op.energy(field.values()),
        energies: energies(&d.w, &Operators::new(&d.grid, DiffOrder::Sixth)),
        sphere_violation: field.sphere_violation(),
        pairing_norm: pairing_norm(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> RadialGrid {
        RadialGrid::log_uniform(1e-3, 50.0, 300).unwrap()
    }

    fn random_field(grid: &RadialGrid, seed: u64) -> SphereField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let center: f64 = rng.gen_range(0.5..3.0);
        let q = SphereField::q_profile(grid, 1.0);
        let v = q
            .values()
            .iter()
            .zip(grid.nodes())
            .map(|(x, r)| {
                // smooth bump vanishing like r at the origin
                let bump = r / center * (-(r / center).ln().powi(2)).exp() / (1.0 + r / center);
                let mut p = [x[0] + amp[0] * bump, x[1] + amp[1] * bump, x[2] + amp[2] * bump * r / center];
                let s = dot(&p, &p).sqrt();
                p.iter_mut().for_each(|c| *c /= s);
                p
            })
            .collect();
        SphereField::new(grid.clone(), v).unwrap()
    }

    #[test]
    fn rhs_is_tangent_and_q_is_nearly_stationary() {
        let g = small_grid();
        let op = RadialOperator::new(&g);
        let f = random_field(&g, 7);
        let rhs = op.rhs(f.values());
        for (v, w) in f.values().iter().zip(&rhs) {
            assert!(dot(v, w).abs() < 1e-13 * (1.0 + dot(w, w).sqrt()));
        }
        let q = SphereField::q_profile(&g, 1.0);
        let rq = op.rhs(q.values());
        let rot = op.rhs(q.rotated(0.7).values());
        for (i, (a, b)) in rq.iter().zip(&rot).enumerate() {
            // rotation acts on the rhs as on the field
            let ra = rotate(*a, 0.7);
            assert!((0..3).all(|k| (ra[k] - b[k]).abs() < 1e-14 * op.scale(i)));
        }
    }

    #[test]
    fn discrete_harmonic_map_is_a_fixed_point() {
        let g = small_grid();
        let qh = discrete_harmonic_map(&g, 1.0).unwrap();
        let op = RadialOperator::new(&g);
        let rhs = op.rhs(qh.values());
        assert!(rhs.iter().enumerate().all(|(i, x)| x.iter().all(|c| c.abs() < 1e-13 * op.scale(i))));
        let mut v = qh.values().to_vec();
        for _ in 0..100 {
            v = midpoint_step(&op, &v, 0.01).unwrap().0;
        }
        let end = SphereField::new(g.clone(), v).unwrap();
        assert!(end.max_distance(&qh) < 1e-12);
        let e = op.energy(qh.values());
        assert!((e / (8.0 * PI) - 1.0).abs() < 1e-2, "{e}");
    }

    #[test]
    fn midpoint_conserves_energy_and_constraint() {
        let g = small_grid();
        let op = RadialOperator::new(&g);
        let mut v = random_field(&g, 3).values().to_vec();
        let e0 = op.energy(&v);
        for _ in 0..20 {
            let (next, drift) = midpoint_step(&op, &v, 1e-3).unwrap();
            assert!(drift < 1e-12);
            v = next;
        }
        assert!((op.energy(&v) - e0).abs() < 1e-11 * e0);
    }

    #[test]
    fn origin_refinement_keeps_values() {
        let g = small_grid();
        let q = SphereField::q_profile(&g, 1.0);
        let fine = refine_origin(&q, 40).unwrap();
        assert_eq!(fine.len(), q.len() + 40);
        assert!((fine.grid().nodes()[40] / g.nodes()[0] - 1.0).abs() < 1e-12);
        let exact = SphereField::q_profile(fine.grid(), 1.0);
        assert!(fine.max_distance(&exact) < 1e-8);
    }
}
