//! Energy hierarchy, modulation-law residuals, the Lyapunov monitor and the
//! numerical inequality checks (logarithmic Hardy bounds, coercivity of `H`
//! and `H²` under the `Φ_M` constraints, the bound `J < 1`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::build_phi_m;
use crate::error::{numerical, param, Result};
use crate::evolve::RunSample;
use crate::grid::{DiffOrder, Field, GridSpec, RadialGrid};
use crate::operators::{FieldTriple, Operators};
use crate::profiles::CutoffFamily;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    /// `∫|∂_y w|² + |w/y|²`.
    pub e1: f64,
    /// `∫|H w^⊥|²`.
    pub e2: f64,
    /// `∫|H² w^⊥|²`.
    pub e4: f64,
}

/// Lower end of the energy integrals in the rescaled variable. Below it the
/// discrete `H²` of near-regular radiation is dominated by roundoff.
pub const ENERGY_FLOOR: f64 = 0.05;

/// `∫_{y ≥ ENERGY_FLOOR} f y dy`, or the full integral if the grid starts above the floor.
fn integrate_above_floor(grid: &RadialGrid, f: &[f64]) -> f64 {
    if grid.y_min() >= ENERGY_FLOOR {
        return grid.integrate(f);
    }
    let running = grid.cumulative(f);
    running[running.len() - 1] - at(grid, &running, ENERGY_FLOOR)
}

pub fn energies(w: &FieldTriple, ops: &Operators) -> Energies {
    let grid = ops.grid();
    let y = grid.nodes();
    let mut e1 = 0.0;
    for comp in w.components() {
        let d = ops.dy(comp);
        let dens: Field = (0..y.len()).map(|i| d[i] * d[i] + (comp[i] / y[i]).powi(2)).collect();
        e1 += integrate_above_floor(grid, &dens);
    }
    let mut e2 = 0.0;
    let mut e4 = 0.0;
    for comp in [&w.alpha, &w.beta] {
        let h = ops.apply_h(comp);
        let hh = ops.apply_h(&h);
        e2 += integrate_above_floor(grid, &h.iter().map(|x| x * x).collect::<Field>());
        e4 += integrate_above_floor(grid, &hh.iter().map(|x| x * x).collect::<Field>());
    }
    Energies { e1, e2, e4 }
}

/// Residuals of the modulation laws along a run, as functions of `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationResidual {
    pub s: f64,
    pub b: f64,
    /// `λ_s/λ + b`.
    pub scaling: f64,
    /// `Θ_s + a`.
    pub phase: f64,
    /// `b_s + b²(1 + 2/|log b|)`.
    pub b_law: f64,
    /// `a_s + 2ab/|log b|`.
    pub a_law: f64,
    /// `max(|scaling|, |phase|) / b³`.
    pub geometric_ratio: f64,
    /// `|b_law| √log M / (√ℰ₄ + b²/|log b|)`.
    pub b_law_ratio: f64,
    /// `|a_law| √log M / (√ℰ₄ + b²/|log b|)`.
    pub a_law_ratio: f64,
}

/// Three-point derivative on a non-uniform abscissa.
fn derivative3(x: [f64; 3], f: [f64; 3]) -> f64 {
    let (h0, h1) = (x[1] - x[0], x[2] - x[1]);
    -f[0] * h1 / (h0 * (h0 + h1)) + f[1] * (h1 - h0) / (h0 * h1) + f[2] * h0 / (h1 * (h0 + h1))
}

pub fn modulation_residuals(samples: &[RunSample], m: f64) -> Result<Vec<ModulationResidual>> {
    if samples.len() < 5 {
        return param(format!("need at least 5 samples for s-derivatives, got {}", samples.len()));
    }
    if samples.windows(2).any(|w| !(w[1].state.s > w[0].state.s)) {
        return param("sample times must increase strictly in s");
    }
    let sqrt_log_m = m.ln().sqrt();
    let mut out = Vec::with_capacity(samples.len() - 2);
    for win in samples.windows(3) {
        let st = [win[0].state, win[1].state, win[2].state];
        let xs = [st[0].s, st[1].s, st[2].s];
        let c = st[1];
        let d = |f: fn(&crate::modulation_ode::ModulationState) -> f64| derivative3(xs, [f(&st[0]), f(&st[1]), f(&st[2])]);
        let log_b = c.b.abs().ln().abs();
        let scaling = d(|x| x.lambda.ln()) + c.b;
        let phase = d(|x| x.theta) + c.a;
        let b_law = d(|x| x.b) + c.b * c.b * (1.0 + 2.0 / log_b);
        let a_law = d(|x| x.a) + 2.0 * c.a * c.b / log_b;
        let scale = win[1].energies.e4.sqrt() + c.b * c.b / log_b;
        out.push(ModulationResidual {
            s: c.s,
            b: c.b,
            scaling,
            phase,
            b_law,
            a_law,
            geometric_ratio: scaling.abs().max(phase.abs()) / c.b.abs().powi(3),
            b_law_ratio: b_law.abs() * sqrt_log_m / scale,
            a_law_ratio: a_law.abs() * sqrt_log_m / scale,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovPoint {
    pub t: f64,
    /// `ℰ₄/λ⁶`.
    pub g: f64,
    /// `∫_0^t |b|⁵ / (λ⁸ log²|b|) dt`.
    pub forcing: f64,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub points: Vec<LyapunovPoint>,
    /// Envelope constant fitted on the leading `fit_fraction` of the run.
    pub constant: f64,
    pub fit_fraction: f64,
    /// Envelope holds on every sample.
    pub holds: bool,
    /// `max (G - G(0)) / (C · forcing)` over the samples after the fit window.
    pub worst_ratio: f64,
}

/// `G = ℰ₄/λ⁶` against `G(0) + C ∫ |b|⁵/(λ⁸ log²|b|) dt`, with `C` fitted on
/// the first part of the run and then held fixed.
pub fn lyapunov_monitor(samples: &[RunSample], fit_fraction: f64) -> Result<LyapunovReport> {
    if samples.len() < 2 {
        return param("lyapunov monitor needs at least two samples");
    }
    if !(fit_fraction > 0.0 && fit_fraction <= 1.0) {
        return param(format!("fit fraction {fit_fraction} outside (0, 1]"));
    }
    let rate = |x: &RunSample| {
        let b = x.state.b.abs();
        if b == 0.0 {
            0.0
        } else {
            b.powi(5) / (x.state.lambda.powi(8) * b.ln().powi(2))
        }
    };
    let g: Vec<f64> = samples.iter().map(|x| x.energies.e4 / x.state.lambda.powi(6)).collect();
    let mut forcing = vec![0.0; samples.len()];
    for i in 1..samples.len() {
        let dt = samples[i].state.t - samples[i - 1].state.t;
        forcing[i] = forcing[i - 1] + 0.5 * dt * (rate(&samples[i]) + rate(&samples[i - 1]));
    }
    let t0 = samples[0].state.t;
    let t_fit = t0 + fit_fraction * (samples[samples.len() - 1].state.t - t0);
    let mut constant: f64 = 0.0;
    for i in 1..samples.len() {
        if samples[i].state.t <= t_fit && forcing[i] > 0.0 {
            constant = constant.max((g[i] - g[0]) / forcing[i]);
        }
    }
    let mut worst: f64 = 0.0;
    let mut holds = true;
    let points = (0..samples.len())
        .map(|i| {
            let envelope = g[0] + constant * forcing[i];
            if g[i] > envelope * (1.0 + 1e-12) {
                holds = false;
            }
            if samples[i].state.t > t_fit && constant * forcing[i] > 0.0 {
                worst = worst.max((g[i] - g[0]) / (constant * forcing[i]));
            }
            LyapunovPoint { t: samples[i].state.t, g: g[i], forcing: forcing[i], envelope }
        })
        .collect();
    Ok(LyapunovReport { points, constant, fit_fraction, holds, worst_ratio: worst })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityEstimate {
    pub name: String,
    pub reference: String,
    pub estimated_constant: f64,
    pub grid: GridSpec,
    pub n_samples: usize,
    pub pass: bool,
}

/// Radii at which the Hardy bounds are sampled.
pub const HARDY_RADII: [f64; 3] = [4.0, 16.0, 40.0];

/// A sum of bumps `Σ c_k exp(-log²(y/y_k)/(2σ_k²))`, smooth in `log y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpField {
    bumps: Vec<(f64, f64, f64)>,
}

impl BumpField {
    pub fn random(rng: &mut impl Rng, y_lo: f64, y_hi: f64) -> Self {
        let count = rng.gen_range(3..=8);
        let bumps = (0..count)
            .map(|_| {
                let center = (rng.gen_range(y_lo.ln()..y_hi.ln())).exp();
                (rng.gen_range(-1.0..1.0), center, rng.gen_range(0.3..1.0))
            })
            .collect();
        BumpField { bumps }
    }

    pub fn value(&self, y: f64) -> f64 {
        self.bumps.iter().map(|&(c, y0, s)| c * (-(y / y0).ln().powi(2) / (2.0 * s * s)).exp()).sum()
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(c, y0, s)| {
                let l = (y / y0).ln();
                -c * (-l * l / (2.0 * s * s)).exp() * l / (s * s * y)
            })
            .sum()
    }
}

/// `∫_lo^hi f y dy` from the running integral, interpolated cubically in `log y`.
fn integral_between(grid: &RadialGrid, running: &[f64], lo: f64, hi: f64) -> f64 {
    at(grid, running, hi) - at(grid, running, lo)
}

fn at(grid: &RadialGrid, running: &[f64], y: f64) -> f64 {
    let nodes = grid.nodes();
    let n = nodes.len();
    if y <= nodes[0] {
        return running[0] * (y / nodes[0]).powi(2).min(1.0);
    }
    let j = grid.index_at_least(y).clamp(2, n - 2);
    let idx = [j - 2, j - 1, j, j + 1];
    let x = y.ln();
    idx.iter()
        .map(|&k| {
            let xk = nodes[k].ln();
            let basis: f64 = idx.iter().filter(|&&m| m != k).map(|&m| (x - nodes[m].ln()) / (xk - nodes[m].ln())).product();
            basis * running[k]
        })
        .sum()
}

struct HardyTerms<'a> {
    grid: &'a RadialGrid,
    v2: Field,
    dv2: Field,
}

impl HardyTerms<'_> {
    fn integral(&self, weight: impl Fn(f64) -> f64, of_derivative: bool, lo: f64, hi: f64) -> f64 {
        let src = if of_derivative { &self.dv2 } else { &self.v2 };
        let f: Field = self.grid.nodes().iter().zip(src).map(|(&y, &v)| v * weight(y)).collect();
        let running = self.grid.cumulative(&f);
        integral_between(self.grid, &running, lo, hi)
    }
}

fn log_weight(y: f64) -> f64 {
    (1.0 + y.ln().abs()).powi(-2)
}

/// `LHS/RHS` of each logarithmic Hardy bound for one field, maximized over [`HARDY_RADII`].
fn hardy_ratios(grid: &RadialGrid, field: &BumpField) -> [f64; 6] {
    let t = HardyTerms {
        grid,
        v2: grid.map(|y| field.value(y).powi(2)),
        dv2: grid.map(|y| field.derivative(y).powi(2)),
    };
    let unit = |_: f64| 1.0;
    let core = t.integral(unit, false, 1.0, 2.0);
    // ratios of two negligible integrals measure interpolation noise only
    let floor = 1e-10 * (grid.integrate(&t.v2) + grid.integrate(&t.dv2));
    let ratio = |lhs: f64, rhs: f64| if rhs > floor { lhs / rhs } else { 0.0 };
    let mut best = [0.0f64; 6];
    for &r in &HARDY_RADII {
        let log_r = r.ln();
        let grad_r = t.integral(unit, true, 0.0, r);
        let ratios = [
            ratio(t.integral(|y| log_weight(y) / (y * y), false, 0.0, r), core + grad_r),
            {
                let gamma: f64 = 4.0;
                let lhs = gamma * gamma / 4.0 * t.integral(|y| log_weight(y) / y.powf(2.0 + gamma), false, 1.0, r);
                ratio(lhs, core + t.integral(|y| log_weight(y) / y.powf(gamma), true, 1.0, r))
            },
            {
                let sup = grid
                    .nodes()
                    .iter()
                    .copied()
                    .filter(|&y| (1.0..=r).contains(&y))
                    .chain([1.0, r])
                    .map(|y| field.value(y).powi(2))
                    .fold(0.0, f64::max);
                ratio(sup, core + r * r * t.integral(|y| 1.0 / (y * y), true, 1.0, r))
            },
            ratio(t.integral(unit, false, 0.0, r), r * r * (t.integral(unit, false, 0.0, 2.0) + log_r * grad_r)),
            ratio(t.integral(|y| 1.0 / (y * y), false, r, 2.0 * r), t.integral(unit, false, 0.0, 2.0) + log_r * t.integral(unit, true, 0.0, 2.0 * r)),
            ratio(
                t.integral(|y| 1.0 / (y * y), false, 0.0, 2.0 * r),
                log_r * t.integral(unit, false, 0.0, 2.0) + log_r * log_r * t.integral(unit, true, 0.0, 2.0 * r),
            ),
        ];
        for (b, x) in best.iter_mut().zip(ratios) {
            *b = b.max(x);
        }
    }
    best
}

const HARDY_NAMES: [(&str, &str); 6] = [
    ("log_hardy", "∫_{y≤R} v²/(y²(1+|log y|)²) ≲ ∫_{1≤y≤2} v² + ∫_{y≤R} |∇v|²"),
    ("weighted_log_hardy", "γ²/4 ∫_{1≤y≤R} v²/(y^{2+γ}(1+|log y|)²) ≤ C_γ ∫_{1≤y≤2} v² + ∫ |∇v|²/(y^γ(1+|log y|)²), γ = 4"),
    ("sup_bound", "‖v‖²_{L∞(1≤y≤R)} ≲ ∫_{1≤y≤2} v² + R² ∫_{1≤y≤R} |∇v|²/y²"),
    ("l2_growth", "∫_{y≤R} v² ≲ R²(∫_{y≤2} v² + log R ∫_{y≤R} |∇v|²)"),
    ("annulus_hardy", "∫_{R≤y≤2R} v²/y² ≲ ∫_{y≤2} v² + log R ∫_{y≤2R} |∇v|²"),
    ("full_hardy", "∫_{y≤2R} v²/y² ≲ log R ∫_{y≤2} v² + log²R ∫_{y≤2R} |∇v|²"),
];

/// Sample `n_samples` random bump fields (sample `k` seeded with `seed + k`)
/// and report the largest `LHS/RHS` per inequality.
pub fn verify_hardy_suite(grid: &RadialGrid, n_samples: usize, seed: u64) -> Result<Vec<InequalityEstimate>> {
    if n_samples == 0 {
        return param("need at least one sample");
    }
    if grid.y_max() < 2.0 * HARDY_RADII[2] || grid.y_min() > 1e-2 {
        return param(format!("Hardy suite needs a grid covering [1e-2, {}]", 2.0 * HARDY_RADII[2]));
    }
    let y_hi = grid.y_max() / 4.0;
    let per_sample: Vec<[f64; 6]> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            hardy_ratios(grid, &BumpField::random(&mut rng, 1e-2, y_hi))
        })
        .collect();
    Ok(HARDY_NAMES
        .iter()
        .enumerate()
        .map(|(j, (name, reference))| {
            let c = per_sample.iter().map(|r| r[j]).fold(0.0, f64::max);
            InequalityEstimate {
                name: name.to_string(),
                reference: reference.to_string(),
                estimated_constant: c,
                grid: grid.spec(),
                n_samples,
                pass: c.is_finite() && c > 0.0,
            }
        })
        .collect())
}

/// Dense matrix of a linear grid operator, column by column.
fn operator_matrix(n: usize, apply: impl Fn(&[f64]) -> Field + Sync) -> DMatrix<f64> {
    let cols: Vec<Field> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            apply(&e)
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// `diag(√w) K`.
fn weighted_rows(k: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| w[i].sqrt() * k[(i, j)])
}

/// Nodes inside the first `ORIGIN_NODES` are tied to a regular expansion `y(c₁ + c₃y²)`.
const ORIGIN_NODES: usize = 6;

/// Map from free values (nodes `ORIGIN_NODES..`) to all nodes.
fn regular_origin_map(y: &[f64]) -> DMatrix<f64> {
    let n = y.len();
    let k = ORIGIN_NODES;
    let mut p = DMatrix::zeros(n, n - k);
    for j in k..n {
        p[(j, j - k)] = 1.0;
    }
    let (y0, y1) = (y[k], y[k + 1]);
    for i in 0..k {
        // interpolate u/y = c₁ + c₃ y² through nodes k and k+1
        let t = (y[i] * y[i] - y0 * y0) / (y1 * y1 - y0 * y0);
        p[(i, 0)] = y[i] / y0 * (1.0 - t);
        p[(i, 1)] = y[i] / y1 * t;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityEstimate {
    pub grid: GridSpec,
    pub m: f64,
    /// Minimum of the discrete Rayleigh quotient; the empirical `1/C(M)`.
    pub rayleigh_min: f64,
    /// Same minimum with the orthogonality constraints dropped.
    pub unconstrained_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoercivityForm {
    /// `∫|Hu|²` against the weighted `Ḣ¹`-type norm, under `(u,Φ_M) = 0`.
    H,
    /// `∫|H²u|²` against the weighted `Ḣ²`-type norm, under `(u,Φ_M) = (Hu,Φ_M) = 0`.
    HSquared,
}

/// `min ‖F x‖² / ‖G x‖²` over `x ⊥ constraints`. Works on the factors
/// directly: forming `FᵀF` squares operator entries that reach `1e17` near
/// the origin and the quadratic forms drown in cancellation.
fn constrained_min(f: &DMatrix<f64>, g: &DMatrix<f64>, constraints: &[DVector<f64>]) -> Result<f64> {
    let m = f.ncols();
    let scale: Vec<f64> = (0..m).map(|j| 1.0 / g.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let s = DMatrix::from_diagonal(&DVector::from_vec(scale));
    let basis = if constraints.is_empty() {
        s
    } else {
        let c = DMatrix::from_columns(&constraints.iter().map(|v| &s * v).collect::<Vec<_>>());
        let k = constraints.len();
        let q = c.qr().q();
        // orthogonal complement of the constraint columns
        let mut full = DMatrix::<f64>::identity(m, m);
        full.columns_mut(0, k).copy_from(&q);
        let qf = full.qr().q();
        let cols: Vec<_> = (k..m).map(|j| qf.column(j).into_owned()).collect();
        s * DMatrix::from_columns(&cols)
    };
    let (f, g) = (f * &basis, g * &basis);
    let r = g.qr().r();
    let rmax = r.diagonal().amax();
    if !(rmax > 0.0) || r.diagonal().iter().any(|d| d.abs() < 1e-14 * rmax) {
        return numerical("normalization form is singular on the admissible subspace");
    }
    // X = F R⁻¹, i.e. Rᵀ Xᵀ = Fᵀ
    let xt = r
        .transpose()
        .solve_lower_triangular(&f.transpose())
        .ok_or_else(|| crate::SmapError::Numerical("triangular solve failed".into()))?;
    let sv = xt.singular_values();
    let min = sv.min();
    if !min.is_finite() {
        return numerical("singular value iteration produced a non-finite value");
    }
    Ok(min * min)
}

/// Rayleigh minimum of the coercivity form on `grid` with `Φ_M` built from `m`.
pub fn coercivity_minimum(grid: &RadialGrid, m: f64, form: CoercivityForm) -> Result<CoercivityEstimate> {
    let ops = Operators::new(grid, DiffOrder::Sixth);
    let phi = build_phi_m(m, &ops, &CutoffFamily::default())?;
    let y = grid.nodes().to_vec();
    let n = y.len();
    let w = grid.weights();
    let lw: Vec<f64> = y.iter().map(|&t| log_weight(t)).collect();
    let h = operator_matrix(n, |f| ops.apply_h(f));
    let d1 = operator_matrix(n, |f| ops.dy(f));
    let d2 = operator_matrix(n, |f| ops.dyy(f));
    let id = DMatrix::<f64>::identity(n, n);
    let weighted = |g: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..n).map(|i| w[i] * g(i)).collect() };
    let p = regular_origin_map(&y);
    let c1 = DVector::from_iterator(n, (0..n).map(|i| w[i] * phi.phi[i]));
    let (numer, blocks, constraints) = match form {
        CoercivityForm::H => {
            let numer = weighted_rows(&h, w);
            let blocks = vec![
                weighted_rows(&d1, &weighted(&|i| lw[i] / (y[i] * y[i]))),
                weighted_rows(&id, &weighted(&|i| lw[i] / y[i].powi(4))),
                weighted_rows(&d2, &weighted(&|i| if y[i] >= 1.0 { lw[i] } else { 0.0 })),
            ];
            (numer, blocks, vec![c1])
        }
        CoercivityForm::HSquared => {
            let numer = weighted_rows(&(&h * &h), w);
            let blocks = vec![
                weighted_rows(&h, &weighted(&|i| lw[i] / y[i].powi(4))),
                weighted_rows(&(&d1 * &h), &weighted(&|i| lw[i] / (y[i] * y[i]))),
                weighted_rows(&(&d2 * &d2), &weighted(&|i| lw[i])),
                weighted_rows(&(&d1 * &d2), &weighted(&|i| lw[i] / (y[i] * y[i]))),
                weighted_rows(&d2, &weighted(&|i| lw[i] / y[i].powi(4))),
                weighted_rows(&d1, &weighted(&|i| lw[i] / (y[i] * y[i] * (1.0 + y[i].powi(4))))),
                weighted_rows(&id, &weighted(&|i| lw[i] / (y[i].powi(4) * (1.0 + y[i].powi(4))))),
            ];
            // (Hu, Φ_M) = uᵀ Hᵀ W Φ_M
            let c2 = h.transpose() * &c1;
            (numer, blocks, vec![c1, c2])
        }
    };
    let f = numer * &p;
    let mut g = DMatrix::zeros(blocks.len() * n, p.ncols());
    for (k, b) in blocks.iter().enumerate() {
        g.rows_mut(k * n, n).copy_from(&(b * &p));
    }
    let reduced: Vec<DVector<f64>> = constraints.iter().map(|c| p.transpose() * c).collect();
    let rayleigh_min = constrained_min(&f, &g, &reduced)?;
    let unconstrained_min = constrained_min(&f, &g, &[])?;
    Ok(CoercivityEstimate { grid: grid.spec(), m, rayleigh_min, unconstrained_min })
}

/// `J(y) = y⁻² ∫_0^y τ Λφ(τ)² dτ = 2[log(1+y²) - y²/(1+y²)]/y²`.
pub fn j_closed(y: f64) -> f64 {
    let u = y * y;
    if u < 1e-3 {
        // 2Σ_{k≥2} (-1)^k (k-1) u^{k-1} / k
        let mut sum = 0.0;
        let mut p = u;
        for k in 2..12 {
            sum += if k % 2 == 0 { 1.0 } else { -1.0 } * (k as f64 - 1.0) / k as f64 * p;
            p *= u;
        }
        2.0 * sum
    } else {
        2.0 * ((u).ln_1p() - u / (1.0 + u)) / u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JBound {
    pub max_j: f64,
    pub argmax: f64,
    pub d1: f64,
    /// Largest gap between the quadrature `J` and the closed form on the grid.
    pub quadrature_error: f64,
}

/// `max_y J(y)` from grid quadrature of `τΛφ²`, refined by golden section on the closed form.
pub fn verify_j_bound(grid: &RadialGrid) -> Result<JBound> {
    let y = grid.nodes();
    let lp2: Field = grid.map(|t| crate::ground_state::lambda_phi(t).powi(2));
    let running = grid.cumulative(&lp2);
    let j: Field = y.iter().zip(&running).map(|(t, r)| r / (t * t)).collect();
    if j.iter().any(|x| !(*x >= 0.0 && *x < 1.0)) {
        return numerical("J left [0, 1) on the grid");
    }
    let quadrature_error = y.iter().zip(&j).map(|(t, v)| (v - j_closed(*t)).abs()).fold(0.0, f64::max);
    let k = (0..j.len()).max_by(|&a, &b| j[a].total_cmp(&j[b])).unwrap_or(0);
    let (mut lo, mut hi) = (y[k.saturating_sub(1)], y[(k + 1).min(y.len() - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if j_closed(x1) < j_closed(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    let argmax = 0.5 * (lo + hi);
    let max_j = j_closed(argmax);
    Ok(JBound { max_j, argmax, d1: 1.0 - max_j, quadrature_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::lambda_phi;
    use crate::profiles::build_t1;

    #[test]
    fn zero_radiation_has_zero_energies() {
        let g = RadialGrid::log_uniform(1e-3, 100.0, 400).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        assert_eq!(energies(&FieldTriple::zeros(g.len()), &ops), Energies::default());
    }

    #[test]
    fn e2_of_localized_bump_matches_product_rule() {
        // η = exp(-1/((y-1)(2-y))) on (1,2), with η', η'' by hand
        let eta = |y: f64| if y > 1.0 && y < 2.0 { (-1.0 / ((y - 1.0) * (2.0 - y))).exp() } else { 0.0 };
        let q = |y: f64| (y - 1.0) * (2.0 - y);
        let dq = |y: f64| 3.0 - 2.0 * y;
        let deta = |y: f64| if y > 1.0 && y < 2.0 { eta(y) * dq(y) / q(y).powi(2) } else { 0.0 };
        let d2eta = |y: f64| {
            if y > 1.0 && y < 2.0 {
                let g = dq(y) / q(y).powi(2);
                let dg = (-2.0 * q(y).powi(2) - 2.0 * q(y) * dq(y) * dq(y)) / q(y).powi(4);
                eta(y) * (g * g + dg)
            } else {
                0.0
            }
        };
        let lp = |y: f64| 2.0 * y / (1.0 + y * y);
        let dlp = |y: f64| 2.0 * (1.0 - y * y) / (1.0 + y * y).powi(2);
        let d2lp = |y: f64| 4.0 * y * (y * y - 3.0) / (1.0 + y * y).powi(3);
        let v = |y: f64| (y.powi(4) - 6.0 * y * y + 1.0) / (1.0 + y * y).powi(2);
        let h_exact = |y: f64| {
            let f = lp(y) * eta(y);
            let df = dlp(y) * eta(y) + lp(y) * deta(y);
            let d2f = d2lp(y) * eta(y) + 2.0 * dlp(y) * deta(y) + lp(y) * d2eta(y);
            -d2f - df / y + v(y) * f / (y * y)
        };
        let g = RadialGrid::log_uniform(0.5, 4.0, 3000).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let w = FieldTriple { alpha: g.map(|y| lp(y) * eta(y)), beta: vec![0.0; g.len()], gamma: vec![0.0; g.len()] };
        let e = energies(&w, &ops);
        let exact = g.norm_sq(&g.map(h_exact));
        assert!((e.e2 / exact - 1.0).abs() < 1e-6, "{} vs {exact}", e.e2);
    }

    #[test]
    fn j_bound_and_limits() {
        let g = RadialGrid::log_uniform(1e-4, 1e4, 2000).unwrap();
        let jb = verify_j_bound(&g).unwrap();
        assert!(jb.max_j < 1.0 && jb.max_j > 0.4, "{jb:?}");
        assert!(jb.quadrature_error < 1e-8, "{jb:?}");
        assert!(j_closed(1e-6) < 1e-11 && j_closed(1e6) < 1e-10);
        // J = (1+Z) A T₁
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let at1 = ops.apply_a(&build_t1(&g));
        for i in (100..1900).step_by(97) {
            let y = g.nodes()[i];
            let z = (1.0 - y * y) / (1.0 + y * y);
            assert!(((1.0 + z) * at1[i] - j_closed(y)).abs() < 1e-7, "y = {y}");
        }
        let _ = lambda_phi(1.0);
    }

    #[test]
    fn j_series_matches_closed_form() {
        for &y in &[0.02, 0.03, 0.0316] {
            let u: f64 = y * y;
            let direct = 2.0 * (u.ln_1p() - u / (1.0 + u)) / u;
            assert!((j_closed(y) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn bump_derivative_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = BumpField::random(&mut rng, 1e-2, 50.0);
        for &y in &[0.05, 0.7, 3.0, 20.0] {
            let h = 1e-6 * y;
            let fd = (f.value(y + h) - f.value(y - h)) / (2.0 * h);
            assert!((fd - f.derivative(y)).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn hardy_suite_is_deterministic() {
        let g = RadialGrid::log_uniform(1e-3, 200.0, 800).unwrap();
        let a = verify_hardy_suite(&g, 8, 5).unwrap();
        let b = verify_hardy_suite(&g, 8, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|e| e.pass));
    }

    #[test]
    fn derivative3_is_exact_on_quadratics() {
        let f = |x: f64| 3.0 * x * x - x + 2.0;
        let xs = [0.1, 0.4, 1.3];
        assert!((derivative3(xs, [f(xs[0]), f(xs[1]), f(xs[2])]) - (6.0 * 0.4 - 1.0)).abs() < 1e-12);
    }
}
