//! Corrector profiles of the slowly modulated approximate solution, their
//! localization at the scale `B₁`, the modulation vector and the residual.

use serde::{Deserialize, Serialize};

use crate::decompose::PhiM;
use crate::error::{numerical, param, Result};
use crate::ground_state::{gamma_green, lambda_phi};
use crate::grid::{Field, RadialGrid};
use crate::operators::{FieldTriple, Operators};

pub const DEFAULT_B_STAR: f64 = 1e-2;

/// Smooth cutoff equal to 1 on `[0, inner]` and 0 on `[outer, ∞)`, with the
/// `C^∞` transition `q(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffFamily {
    fn default() -> Self {
        CutoffFamily { inner: 1.0, outer: 2.0 }
    }
}

impl CutoffFamily {
    pub fn eval(&self, x: f64) -> f64 {
        let t = (self.outer - x) / (self.outer - self.inner);
        if t >= 1.0 {
            1.0
        } else if t <= 0.0 {
            0.0
        } else {
            let u = 1.0 / t - 1.0 / (1.0 - t);
            if u > 700.0 {
                0.0
            } else {
                1.0 / (1.0 + u.exp())
            }
        }
    }

    /// `χ_M(y) = χ(y/M)`; an infinite scale gives 1.
    pub fn at_scale(&self, y: f64, m: f64) -> f64 {
        if m.is_infinite() {
            1.0
        } else {
            self.eval(y / m)
        }
    }

    pub fn on_grid(&self, grid: &RadialGrid, m: f64) -> Field {
        grid.map(|y| self.at_scale(y, m))
    }
}

/// `B₀ = b^{-1/2}` and `B₁ = |log b| b^{-1/2}`.
pub fn scales(b: f64) -> (f64, f64) {
    let b = b.abs();
    if b == 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let b0 = b.powf(-0.5);
    (b0, b.ln().abs() * b0)
}

/// `F(y) = ∫_0^y log(1+s²)/s ds`.
pub fn log_integral(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y > 1.0 {
        // s -> 1/s symmetry, F(1) = π²/24
        std::f64::consts::PI.powi(2) / 12.0 + y.ln().powi(2) - log_integral(1.0 / y)
    } else {
        // F = -Li₂(-u)/2 = Li₂(u/(1+u))/2 + ln²(1+u)/4, u = y²
        let u = y * y;
        let l = u.ln_1p();
        0.5 * dilog_half(u / (1.0 + u)) + 0.25 * l * l
    }
}

/// `Li₂(w)` for `0 ≤ w ≤ 1/2`.
fn dilog_half(w: f64) -> f64 {
    let mut term = w;
    let mut sum = 0.0;
    for k in 1..80 {
        let t = term / (k * k) as f64;
        sum += t;
        if t < 1e-17 * sum {
            break;
        }
        term *= w;
    }
    sum
}

fn t1_numerator_series() -> [f64; 16] {
    let log_c = |k: usize| -> f64 {
        if k == 0 {
            0.0
        } else {
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            s / k as f64
        }
    };
    let f_c = |k: usize| -> f64 {
        if k == 0 {
            0.0
        } else {
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            s / (2.0 * (k * k) as f64)
        }
    };
    let mut c = [0.0; 16];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut v = log_c(k);
        if k >= 2 {
            v -= log_c(k - 2);
        }
        if k == 2 {
            v += 2.0;
        }
        if k == 1 {
            v -= 1.0;
        }
        if k >= 1 {
            v -= 4.0 * f_c(k - 1);
        }
        *ck = v;
    }
    c
}

/// The regular solution of `H T₁ = Λφ` without `Λφ` component at the origin:
/// `T₁ = [(1-y⁴) log(1+y²) + 2y⁴ - y² - 4y² F(y)] / (2y(1+y²))`.
pub fn t1_closed(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let u = y * y;
    if y <= 0.1 {
        let c = t1_numerator_series();
        let num = c.iter().rev().fold(0.0, |acc, ck| acc * u + ck);
        return num / (2.0 * y * (1.0 + u));
    }
    let num = (1.0 - u * u) * u.ln_1p() + 2.0 * u * u - u - 4.0 * u * log_integral(y);
    num / (2.0 * y * (1.0 + u))
}

pub fn build_t1(grid: &RadialGrid) -> Field {
    grid.map(t1_closed)
}

/// Constants of the radiation `Σ_b`:
/// `c_b = 4 / ∫ χ_{B₀/4} Λφ² y dy`, `d_b = c_b ∫ χ_{B₀/4} Λφ Γ y dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiationConstants {
    pub cb: f64,
    pub db: f64,
}

pub fn radiation_constants(b: f64, cutoff: &CutoffFamily) -> Result<RadiationConstants> {
    let b = b.abs();
    if b == 0.0 {
        return Ok(RadiationConstants { cb: 0.0, db: 0.0 });
    }
    if !(b < 0.5) || !b.is_finite() {
        return param(format!("radiation constants need 0 < b < 1/2, got {b}"));
    }
    let (b0, _) = scales(b);
    let span = cutoff.outer * b0 / 4.0;
    let y_min = 1e-6;
    let decades = (span / y_min).log10();
    let grid = RadialGrid::log_uniform(y_min, span, (decades * 400.0) as usize + 50)?;
    let chi_lp = grid.map(|y| cutoff.at_scale(y, b0 / 4.0) * lambda_phi(y));
    let lp = grid.map(lambda_phi);
    let gm = grid.map(|y| gamma_green(y).expect("positive node"));
    let mass = grid.inner(&chi_lp, &lp);
    if !(mass > 0.0) {
        return numerical("degenerate radiation normalization");
    }
    let cb = 4.0 / mass;
    let db = cb * grid.inner(&chi_lp, &gm);
    Ok(RadiationConstants { cb, db })
}

/// `Σ_b = c_b [Λφ ∫χ_{B₀/4}ΛφΓ - Γ ∫χ_{B₀/4}Λφ²] - d_b (1-χ_{3B₀}) Λφ`,
/// so `HΣ_b = c_b χ_{B₀/4}Λφ - d_b H[(1-χ_{3B₀})Λφ]` and `Σ_b = -4Γ` for `y ≥ 6B₀`.
pub fn build_sigma_b(b: f64, ops: &Operators, cfg: &ProfileConfig) -> Result<(Field, RadiationConstants)> {
    cfg.check_b(b)?;
    sigma_b_unchecked(b, ops, &cfg.cutoff)
}

fn sigma_b_unchecked(b: f64, ops: &Operators, cutoff: &CutoffFamily) -> Result<(Field, RadiationConstants)> {
    let rc = radiation_constants(b, cutoff)?;
    let grid = ops.grid();
    if rc.cb == 0.0 {
        return Ok((vec![0.0; grid.len()], rc));
    }
    let (b0, _) = scales(b);
    let source: Field = grid.map(|y| rc.cb * cutoff.at_scale(y, b0 / 4.0) * lambda_phi(y));
    let mut sigma = ops.green_solve(&source)?;
    for (s, y) in sigma.iter_mut().zip(grid.nodes()) {
        *s -= rc.db * (1.0 - cutoff.at_scale(*y, 3.0 * b0)) * lambda_phi(*y);
    }
    Ok((sigma, rc))
}

/// Profile parameters that do not depend on `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub b_star: f64,
    pub cutoff: CutoffFamily,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { b_star: DEFAULT_B_STAR, cutoff: CutoffFamily::default() }
    }
}

impl ProfileConfig {
    pub fn with_b_star(b_star: f64) -> Self {
        ProfileConfig { b_star, ..Default::default() }
    }

    fn check_b(&self, b: f64) -> Result<()> {
        if !(b > 0.0 && b < self.b_star) {
            return param(format!("b = {b} outside (0, {})", self.b_star));
        }
        Ok(())
    }

    fn check(&self, a: f64, b: f64) -> Result<()> {
        self.check_b(b)?;
        let bound = b / b.ln().abs();
        if !a.is_finite() || a.abs() > bound * (1.0 + 1e-12) {
            return param(format!("|a| = {} exceeds b/|log b| = {bound}", a.abs()));
        }
        Ok(())
    }
}

/// The `b`-independent profiles: `T₁`, `S₀,₂ = -T₁²/2`, `T₂,₀` and the
/// derivative fields reused by every source.
#[derive(Debug, Clone)]
pub struct ProfileBasis {
    pub t1: Field,
    pub dt1: Field,
    pub scaling_t1: Field,
    pub s02: Field,
    pub laplacian_s02: Field,
    pub sigma20: Field,
    pub t20: Field,
}

impl ProfileBasis {
    pub fn new(ops: &Operators) -> Result<Self> {
        let grid = ops.grid();
        let y = grid.nodes();
        let z = ops.z();
        let t1 = build_t1(grid);
        let dt1 = ops.dy(&t1);
        let scaling_t1: Field = (0..t1.len()).map(|i| y[i] * dt1[i]).collect();
        let s02: Field = t1.iter().map(|t| -0.5 * t * t).collect();
        let laplacian_s02 = ops.laplacian(&s02);
        // 2Z(1+Z)T₁²/y + 2(1+Z)T₁T₁' + (1+Z)T₁
        let sigma20: Field = (0..t1.len())
            .map(|i| {
                let zp = 1.0 + z[i];
                2.0 * z[i] * zp * t1[i] * t1[i] / y[i] + 2.0 * zp * t1[i] * dt1[i] + zp * t1[i]
            })
            .collect();
        let t20 = ops.green_solve(&sigma20)?;
        Ok(ProfileBasis { t1, dt1, scaling_t1, s02, laplacian_s02, sigma20, t20 })
    }
}

/// Profiles at one `(a, b)` and the localized approximate solution
/// `w̃₀ = (α̃₀, β̃₀, γ̃₀)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSet {
    pub a: f64,
    pub b: f64,
    pub inner_scale: f64,
    pub outer_scale: f64,
    pub cb: f64,
    pub db: f64,
    pub t1: Field,
    pub sigma_b: Field,
    pub t02: Field,
    pub t11: Field,
    pub t20: Field,
    pub t03: Field,
    pub s02: Field,
    pub sigma02: Field,
    pub sigma11: Field,
    pub sigma20: Field,
    pub sigma03: Field,
    /// `χ_{B₁}` on the grid.
    pub localization: Field,
    pub alpha0: Field,
    pub beta0: Field,
    pub gamma0: Field,
}

impl ProfileSet {
    /// Guarded construction: `0 < b < b*`, `|a| ≤ b/|log b|`.
    pub fn build(a: f64, b: f64, ops: &Operators, cfg: &ProfileConfig) -> Result<Self> {
        cfg.check(a, b)?;
        let basis = ProfileBasis::new(ops)?;
        Self::from_basis(a, b, ops, &basis, &cfg.cutoff)
    }

    /// No admissibility guard. The profiles use `|b|`, the polynomial
    /// structure keeps the signs of `a` and `b`; `b = 0` is the limit with no
    /// radiation and no localization.
    pub fn from_basis(a: f64, b: f64, ops: &Operators, basis: &ProfileBasis, cutoff: &CutoffFamily) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() || b.abs() >= 0.5 {
            return param(format!("profile parameters out of range: a = {a}, b = {b}"));
        }
        let grid = ops.grid();
        let y = grid.nodes();
        let z = ops.z();
        let n = grid.len();
        let (sigma_b, rc) = sigma_b_unchecked(b, ops, cutoff)?;
        let (inner_scale, outer_scale) = scales(b);
        let t1 = &basis.t1;
        let dt1 = &basis.dt1;

        // 2(1+Z)∂S₀,₂ - ΛT₁ + T₁ + Σ_b
        let sigma02: Field = (0..n)
            .map(|i| -2.0 * (1.0 + z[i]) * t1[i] * dt1[i] - basis.scaling_t1[i] + t1[i] + sigma_b[i])
            .collect();
        let t02 = ops.green_solve(&sigma02)?;
        // 2Z(1+Z)T₁²/y + 2(1+Z)T₁T₁' + ΛT₁ + ZT₁ - Σ_b
        let sigma11: Field = (0..n)
            .map(|i| {
                let zp = 1.0 + z[i];
                2.0 * z[i] * zp * t1[i] * t1[i] / y[i] + 2.0 * zp * t1[i] * dt1[i] + basis.scaling_t1[i] + z[i] * t1[i]
                    - sigma_b[i]
            })
            .collect();
        let t11 = ops.green_solve(&sigma11)?;
        // 2Z(1+Z)T₀,₂T₁/y - T₁ΔS₀,₂ + 2(1+Z)T₁T₀,₂' + ΛT₀,₂ - 2T₀,₂
        let dt02 = ops.dy(&t02);
        let sigma03: Field = (0..n)
            .map(|i| {
                let zp = 1.0 + z[i];
                2.0 * z[i] * zp * t02[i] * t1[i] / y[i] - t1[i] * basis.laplacian_s02[i] + 2.0 * zp * t1[i] * dt02[i]
                    + y[i] * dt02[i]
                    - 2.0 * t02[i]
            })
            .collect();
        let t03 = ops.green_solve(&sigma03)?;

        let localization = cutoff.on_grid(grid, outer_scale);
        let mut alpha0 = vec![0.0; n];
        let mut beta0 = vec![0.0; n];
        let mut gamma0 = vec![0.0; n];
        for i in 0..n {
            let chi = localization[i];
            alpha0[i] = chi * (a * t1[i] + b * b * t02[i] + a * a * basis.t20[i]);
            beta0[i] = chi * (b * t1[i] + a * b * t11[i] + b * b * b * t03[i]);
            gamma0[i] = -0.5 * b * b * (chi * t1[i]).powi(2);
        }
        Ok(ProfileSet {
            a,
            b,
            inner_scale,
            outer_scale,
            cb: rc.cb,
            db: rc.db,
            t1: t1.clone(),
            sigma_b,
            t02,
            t11,
            t20: basis.t20.clone(),
            t03,
            s02: basis.s02.clone(),
            sigma02,
            sigma11,
            sigma20: basis.sigma20.clone(),
            sigma03,
            localization,
            alpha0,
            beta0,
            gamma0,
        })
    }

    pub fn localized(&self) -> FieldTriple {
        FieldTriple { alpha: self.alpha0.clone(), beta: self.beta0.clone(), gamma: self.gamma0.clone() }
    }

    fn cut(&self, f: &[f64]) -> Field {
        f.iter().zip(&self.localization).map(|(v, c)| v * c).collect()
    }

    /// `S̃₀,₂ = γ̃₀ / b² = -T̃₁²/2`.
    fn localized_s02(&self) -> Field {
        self.t1.iter().zip(&self.localization).map(|(t, c)| -0.5 * (c * t).powi(2)).collect()
    }

    /// The modulation vector `Mod(t)` for the given rates.
    pub fn modulation_vector(&self, ops: &Operators, rates: &ModulationRates) -> FieldTriple {
        let n = self.t1.len();
        let lp = ops.lambda_phi();
        let z = ops.z();
        let t1c = self.cut(&self.t1);
        let t02c = self.cut(&self.t02);
        let s02c = self.localized_s02();
        let la = ops.scaling(&self.alpha0);
        let lb = ops.scaling(&self.beta0);
        let lg = ops.scaling(&self.gamma0);
        let (al, be, ga) = (&self.alpha0, &self.beta0, &self.gamma0);
        let b = self.b;
        let da = rates.a_s;
        let db = rates.b_s + b * b;
        let dl = rates.lambda_rate + b;
        let dt = rates.theta_s + self.a;
        let mut out = FieldTriple::zeros(n);
        for i in 0..n {
            out.alpha[i] = -da * t1c[i] - db * 2.0 * b * t02c[i] + dl * (lp[i] + la[i] + ga[i] * lp[i]) + dt * be[i] * z[i];
            out.beta[i] = -db * t1c[i] + dl * lb[i] - dt * (lp[i] + al[i] * z[i] + ga[i] * lp[i]);
            out.gamma[i] = -db * 2.0 * b * s02c[i] + dl * (lg[i] - al[i] * lp[i]) + dt * be[i] * lp[i];
        }
        out
    }

    /// `(2bT̃₀,₂, T̃₁, 2bS̃₀,₂)`, the `b`-derivative through the explicit powers of `b`.
    fn explicit_b_derivative(&self) -> FieldTriple {
        let b = self.b;
        FieldTriple {
            alpha: self.cut(&self.t02).iter().map(|v| 2.0 * b * v).collect(),
            beta: self.cut(&self.t1),
            gamma: self.localized_s02().iter().map(|v| 2.0 * b * v).collect(),
        }
    }

    /// `(e_z + w̃₀) ∧ [ℍw̃₀ + Λφ(Θ_s, λ_s/λ, 0)]` with the rates of the leading law.
    fn twisted_hamiltonian(&self, ops: &Operators) -> FieldTriple {
        let w = self.localized();
        let mut h = ops.apply_bbh(&w);
        for (i, lp) in ops.lambda_phi().iter().enumerate() {
            h.alpha[i] -= self.a * lp;
            h.beta[i] -= self.b * lp;
        }
        let mut ez = w;
        ez.gamma.iter_mut().for_each(|g| *g += 1.0);
        ez.cross(&h)
    }
}

/// `(a_s, b_s, λ_s/λ, Θ_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationRates {
    pub a_s: f64,
    pub b_s: f64,
    pub lambda_rate: f64,
    pub theta_s: f64,
}

impl ModulationRates {
    /// `λ_s/λ = -b`, `Θ_s = -a`, `b_s = -(b²+a²)`, `a_s = 0`.
    pub fn leading_law(a: f64, b: f64) -> Self {
        ModulationRates { a_s: 0.0, b_s: -(b * b + a * a), lambda_rate: -b, theta_s: -a }
    }

    /// Rates for which every bracket of the modulation vector vanishes.
    pub fn exact_for_profile(a: f64, b: f64) -> Self {
        ModulationRates { a_s: 0.0, b_s: -b * b, lambda_rate: -b, theta_s: -a }
    }
}

/// Residual of the localized profile. `profile_part` is the error with the
/// `s`-derivative carried only by the explicit powers of `b`;
/// `rate_part = (b²+a²)[∂_b w̃₀ - (2bT̃₀,₂, T̃₁, 2bS̃₀,₂)]` collects the
/// implicit dependence of the profiles on `b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residual {
    pub psi: FieldTriple,
    pub profile_part: FieldTriple,
    pub rate_part: FieldTriple,
}

/// Relative step of the centered difference in `b`.
const DB_STEP: f64 = 1e-3;

/// `Ψ̃₀ = -∂_s w̃₀ - bΛw̃₀ + aZRw̃₀ - (e_z+w̃₀)∧[ℍw̃₀ - Λφ(a,b,0)] - Mod`
/// with rates frozen to the leading law, obtained by applying the discrete
/// operators to the assembled profile.
pub fn residual_psi0(a: f64, b: f64, ops: &Operators, cfg: &ProfileConfig) -> Result<Residual> {
    cfg.check(a, b)?;
    let basis = ProfileBasis::new(ops)?;
    residual_from_basis(a, b, ops, &basis, &cfg.cutoff)
}

pub fn residual_from_basis(a: f64, b: f64, ops: &Operators, basis: &ProfileBasis, cutoff: &CutoffFamily) -> Result<Residual> {
    let ps = ProfileSet::from_basis(a, b, ops, basis, cutoff)?;
    let delta = DB_STEP * b.abs().max(1e-12);
    let plus = ProfileSet::from_basis(a, b + delta, ops, basis, cutoff)?.localized();
    let minus = ProfileSet::from_basis(a, b - delta, ops, basis, cutoff)?.localized();
    let dw_db = plus.sub(&minus).scale(0.5 / delta);

    let rates = ModulationRates::leading_law(a, b);
    let w = ps.localized();
    let n = w.len();
    let z = ops.z();
    let lw = w.map_components(|f| ops.scaling(f));
    let twisted = ps.twisted_hamiltonian(ops);
    let explicit = ps.explicit_b_derivative();
    let mut profile_part = FieldTriple::zeros(n);
    for i in 0..n {
        // -bΛw + aZRw - twisted + b²∂_b^{explicit}w, with R(α,β,γ) = (-β,α,0)
        profile_part.alpha[i] = -b * lw.alpha[i] - a * z[i] * w.beta[i] - twisted.alpha[i] + b * b * explicit.alpha[i];
        profile_part.beta[i] = -b * lw.beta[i] + a * z[i] * w.alpha[i] - twisted.beta[i] + b * b * explicit.beta[i];
        profile_part.gamma[i] = -b * lw.gamma[i] - twisted.gamma[i] + b * b * explicit.gamma[i];
    }
    let rate_part = dw_db.sub(&explicit).scale(-rates.b_s);
    let psi = profile_part.add(&rate_part);
    Ok(Residual { psi, profile_part, rate_part })
}

/// The expanded polynomial form of the unlocalized residual at `a = 0`,
/// valid where `χ_{B₁} = 1`. Used only to cross-check [`residual_psi0`].
pub fn expanded_residual_unmodulated(ps: &ProfileSet, ops: &Operators) -> FieldTriple {
    let y = ops.grid().nodes();
    let z = ops.z();
    let b = ps.b;
    let n = y.len();
    let dt02 = ops.dy(&ps.t02);
    let ds02 = ops.dy(&ps.s02);
    let lap_s02 = ops.laplacian(&ps.s02);
    let lt03 = ops.scaling(&ps.t03);
    let (b3, b4, b5) = (b.powi(3), b.powi(4), b.powi(5));
    let mut out = FieldTriple::zeros(n);
    for i in 0..n {
        let zp = 1.0 + z[i];
        let (t1, t02, t03, s02) = (ps.t1[i], ps.t02[i], ps.t03[i], ps.s02[i]);
        out.alpha[i] = b5 * (-t03 * (-lap_s02[i] + 2.0 * zp * (dt02[i] + z[i] * t02 / y[i])) + s02 * ps.sigma03[i]);
        out.beta[i] = -b * b * ps.sigma_b[i]
            + b4 * (-t02 * lap_s02[i] + 2.0 * z[i] * zp * t02 * t02 / y[i] + 2.0 * zp * t02 * dt02[i] - s02 * ps.sigma02[i]
                + 2.0 * zp * s02 * ds02[i]
                - lt03[i]);
        out.gamma[i] = b3 * t1 * ps.sigma_b[i] + b5 * (-t02 * ps.sigma03[i] + t03 * ps.sigma02[i] - 2.0 * zp * t03 * ds02[i]);
    }
    out
}

/// `∫_{y ≤ cut} |∂_y^k f|² / y^p  y dy`.
pub fn weighted_norm_sq(ops: &Operators, f: &[f64], derivative: usize, power: f64, cut: f64) -> f64 {
    let mut g = f.to_vec();
    for _ in 0..derivative {
        g = ops.dy(&g);
    }
    let grid = ops.grid();
    let dens: Field = grid
        .nodes()
        .iter()
        .zip(&g)
        .map(|(y, v)| if *y <= cut { v * v / y.powf(power) } else { 0.0 })
        .collect();
    grid.integrate(&dens)
}

/// `(H f, Φ_M) / (Λφ, Φ_M)`, evaluated as `(f, HΦ_M) / (Λφ, Φ_M)`.
pub fn flux_projection(field: &[f64], phi: &PhiM, ops: &Operators) -> Result<f64> {
    if phi.lambda_pairing.abs() < 1e-12 {
        return numerical("degenerate pairing (Λφ, Φ_M)");
    }
    if phi.phi.len() != field.len() {
        return param("field and Φ_M live on different grids");
    }
    Ok(ops.inner(field, &phi.h_phi) / phi.lambda_pairing)
}
