//! Discrete `A`, `A*`, `H = A*A`, `H̃ = AA*`, the vectorial Hamiltonian and
//! the Green's-function inverse of `H`.

use serde::{Deserialize, Serialize};

use crate::error::{numerical, param, Result};
use crate::ground_state::GroundStateTable;
use crate::grid::{DiffOrder, Field, RadialGrid, Stencils};

/// Frenet coordinates `(α, β, γ)` of a map relative to `Q`, one field each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTriple {
    pub alpha: Field,
    pub beta: Field,
    pub gamma: Field,
}

impl FieldTriple {
    pub fn zeros(n: usize) -> Self {
        FieldTriple { alpha: vec![0.0; n], beta: vec![0.0; n], gamma: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn components(&self) -> [&Field; 3] {
        [&self.alpha, &self.beta, &self.gamma]
    }

    pub fn map_components(&self, f: impl Fn(&Field) -> Field) -> Self {
        FieldTriple { alpha: f(&self.alpha), beta: f(&self.beta), gamma: f(&self.gamma) }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let z = |a: &Field, b: &Field| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
        FieldTriple {
            alpha: z(&self.alpha, &other.alpha),
            beta: z(&self.beta, &other.beta),
            gamma: z(&self.gamma, &other.gamma),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_components(|f| f.iter().map(|x| c * x).collect())
    }

    /// Same triple with `γ` set to zero.
    pub fn perp(&self) -> Self {
        FieldTriple { alpha: self.alpha.clone(), beta: self.beta.clone(), gamma: vec![0.0; self.len()] }
    }

    /// `max |α² + β² + (1+γ)² - 1|`.
    pub fn sphere_violation(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.alpha[i].powi(2) + self.beta[i].powi(2) + (1.0 + self.gamma[i]).powi(2) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Pointwise cross product `self ∧ other` (components in the Frenet frame).
    pub fn cross(&self, other: &Self) -> Self {
        let n = self.len();
        let mut out = FieldTriple::zeros(n);
        for i in 0..n {
            let (a1, a2, a3) = (self.alpha[i], self.beta[i], self.gamma[i]);
            let (b1, b2, b3) = (other.alpha[i], other.beta[i], other.gamma[i]);
            out.alpha[i] = a2 * b3 - a3 * b2;
            out.beta[i] = a3 * b1 - a1 * b3;
            out.gamma[i] = a1 * b2 - a2 * b1;
        }
        out
    }
}

/// Differential operators bound to one grid.
#[derive(Debug, Clone)]
pub struct Operators {
    grid: RadialGrid,
    order: DiffOrder,
    stencils: Stencils,
    ground: GroundStateTable,
}

impl Operators {
    pub fn new(grid: &RadialGrid, order: DiffOrder) -> Self {
        Operators {
            grid: grid.clone(),
            order,
            stencils: Stencils::new(grid.nodes(), order),
            ground: GroundStateTable::on(grid),
        }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn order(&self) -> DiffOrder {
        self.order
    }

    pub fn ground(&self) -> &GroundStateTable {
        &self.ground
    }

    pub fn lambda_phi(&self) -> &Field {
        &self.ground.lambda_phi
    }

    pub fn z(&self) -> &Field {
        &self.ground.z
    }

    pub fn gamma(&self) -> &Field {
        &self.ground.gamma
    }

    pub fn dy(&self, f: &[f64]) -> Field {
        self.stencils.first(f)
    }

    pub fn dyy(&self, f: &[f64]) -> Field {
        self.stencils.second(f)
    }

    /// Radial Laplacian `f'' + f'/y`.
    pub fn laplacian(&self, f: &[f64]) -> Field {
        let d1 = self.dy(f);
        let d2 = self.dyy(f);
        self.pointwise3(&d1, &d2, |y, d1, d2| d2 + d1 / y)
    }

    /// Scaling generator `Λf = y f'`.
    pub fn scaling(&self, f: &[f64]) -> Field {
        let d1 = self.dy(f);
        self.grid.nodes().iter().zip(&d1).map(|(y, d)| y * d).collect()
    }

    /// `A f = -f' + Z f / y`.
    pub fn apply_a(&self, f: &[f64]) -> Field {
        let d1 = self.dy(f);
        (0..f.len()).map(|i| -d1[i] + self.ground.z[i] * f[i] / self.grid.nodes()[i]).collect()
    }

    /// `A* f = f' + (1+Z) f / y`.
    pub fn apply_astar(&self, f: &[f64]) -> Field {
        let d1 = self.dy(f);
        (0..f.len()).map(|i| d1[i] + (1.0 + self.ground.z[i]) * f[i] / self.grid.nodes()[i]).collect()
    }

    /// `H f = -Δf + V f / y²`.
    pub fn apply_h(&self, f: &[f64]) -> Field {
        let lap = self.laplacian(f);
        (0..f.len())
            .map(|i| {
                let y = self.grid.nodes()[i];
                -lap[i] + self.ground.potential[i] * f[i] / (y * y)
            })
            .collect()
    }

    /// `H̃ f = -Δf + 4 f / (y² (1+y²))`.
    pub fn apply_htilde(&self, f: &[f64]) -> Field {
        let lap = self.laplacian(f);
        (0..f.len())
            .map(|i| {
                let y = self.grid.nodes()[i];
                -lap[i] + 4.0 * f[i] / (y * y * (1.0 + y * y))
            })
            .collect()
    }

    /// Vectorial Hamiltonian
    /// `ℍw = (Hα - 2(1+Z)γ', Hβ, -Δγ + 2(1+Z)(α' + Zα/y))`.
    pub fn apply_bbh(&self, w: &FieldTriple) -> FieldTriple {
        let ha = self.apply_h(&w.alpha);
        let hb = self.apply_h(&w.beta);
        let lg = self.laplacian(&w.gamma);
        let dg = self.dy(&w.gamma);
        let da = self.dy(&w.alpha);
        let n = w.len();
        let mut out = FieldTriple::zeros(n);
        for i in 0..n {
            let y = self.grid.nodes()[i];
            let z = self.ground.z[i];
            out.alpha[i] = ha[i] - 2.0 * (1.0 + z) * dg[i];
            out.beta[i] = hb[i];
            out.gamma[i] = -lg[i] + 2.0 * (1.0 + z) * (da[i] + z * w.alpha[i] / y);
        }
        out
    }

    /// `𝔸w = (Aα, Aβ, 0)`.
    pub fn apply_bba(&self, w: &FieldTriple) -> FieldTriple {
        FieldTriple { alpha: self.apply_a(&w.alpha), beta: self.apply_a(&w.beta), gamma: vec![0.0; w.len()] }
    }

    /// Regular solution of `H f = g`:
    /// `f = Λφ ∫_0^y g Γ x dx - Γ ∫_0^y g Λφ x dx`, with no added multiple of `Λφ`.
    pub fn green_solve(&self, g: &[f64]) -> Result<Field> {
        if g.len() != self.grid.len() {
            return param("source length does not match grid");
        }
        if g.iter().any(|x| !x.is_finite()) {
            return numerical("non-finite source in green_solve");
        }
        if g[0] != 0.0 && g[0].signum() == g[1].signum() {
            let p = (g[1] / g[0]).ln() / self.grid.log_step();
            if p < -0.9 {
                return param(format!("source is singular at the origin (local power {p:.2})"));
            }
        }
        let lp = &self.ground.lambda_phi;
        let gm = &self.ground.gamma;
        let with_gamma: Field = g.iter().zip(gm).map(|(a, b)| a * b).collect();
        let with_lp: Field = g.iter().zip(lp).map(|(a, b)| a * b).collect();
        let c1 = self.grid.cumulative(&with_gamma);
        let c2 = self.grid.cumulative(&with_lp);
        Ok((0..g.len()).map(|i| lp[i] * c1[i] - gm[i] * c2[i]).collect())
    }

    /// `(f, g) = ∫ f g y dy`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.grid.inner(f, g)
    }

    fn pointwise3(&self, a: &[f64], b: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Field {
        (0..a.len()).map(|i| f(self.grid.nodes()[i], a[i], b[i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::{gamma_green, lambda_phi, z_fn};

    fn weighted_norm(g: &RadialGrid, f: &[f64], lo: f64, hi: f64) -> f64 {
        let masked: Field = g.nodes().iter().zip(f).map(|(y, v)| if *y >= lo && *y <= hi { *v } else { 0.0 }).collect();
        g.norm_sq(&masked).sqrt()
    }

    #[test]
    fn a_annihilates_resonance() {
        let g = RadialGrid::log_uniform(1e-3, 1e3, 1500).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let a = ops.apply_a(ops.lambda_phi());
        assert!(a.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn a_on_identity_field() {
        let g = RadialGrid::log_uniform(1e-3, 1e3, 1500).unwrap();
        let ops = Operators::new(&g, DiffOrder::Second);
        let f = g.nodes().to_vec();
        let a = ops.apply_a(&f);
        for (i, &y) in g.nodes().iter().enumerate() {
            assert!((a[i] - (-2.0 * y * y / (1.0 + y * y))).abs() < 1e-10 * (1.0 + y));
        }
    }

    #[test]
    fn factorization_holds_to_second_order() {
        let f_of = |y: f64| y * y * (-y).exp();
        let err = |n: usize| {
            let g = RadialGrid::log_uniform(1e-2, 40.0, n).unwrap();
            let ops = Operators::new(&g, DiffOrder::Second);
            let f = g.map(f_of);
            let h = ops.apply_h(&f);
            let aa = ops.apply_astar(&ops.apply_a(&f));
            let d: Field = h.iter().zip(&aa).map(|(a, b)| a - b).collect();
            weighted_norm(&g, &d, 0.05, 30.0)
        };
        let (e1, e2) = (err(400), err(800));
        assert!(e2 < 1e-3 && e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn second_kernel_element_is_annihilated() {
        let g = RadialGrid::log_uniform(1e-2, 1e2, 800).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let h = ops.apply_h(ops.gamma());
        for (i, &y) in g.nodes().iter().enumerate().skip(10).take(g.len() - 20) {
            let scale = gamma_green(y).unwrap().abs() / (y * y) + 1.0 / y;
            assert!(h[i].abs() < 1e-6 * scale, "y={y}: {}", h[i]);
        }
    }

    #[test]
    fn vectorial_hamiltonian_with_zero_gamma() {
        let g = RadialGrid::log_uniform(1e-2, 50.0, 600).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let a = g.map(|y| y * (-y * y / 4.0).exp());
        let b = g.map(|y| y * y * y * (-y).exp());
        let w = FieldTriple { alpha: a.clone(), beta: b.clone(), gamma: vec![0.0; g.len()] };
        let hw = ops.apply_bbh(&w);
        let ha = ops.apply_h(&a);
        let hb = ops.apply_h(&b);
        let da = ops.dy(&a);
        for (i, &y) in g.nodes().iter().enumerate() {
            let z = z_fn(y);
            assert_eq!(hw.alpha[i], ha[i]);
            assert_eq!(hw.beta[i], hb[i]);
            assert!((hw.gamma[i] - 2.0 * (1.0 + z) * (da[i] + z * a[i] / y)).abs() < 1e-12);
        }
    }

    #[test]
    fn green_solve_reproduces_known_solution() {
        let g = RadialGrid::log_uniform(1e-4, 1e3, 1500).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let zero = ops.green_solve(&vec![0.0; g.len()]).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
        // H(Λφ) = 0, so the solution of H f = H(y³e^{-y²}) differs from the
        // target by a kernel multiple only
        let target = g.map(|y| y.powi(3) * (-y * y).exp());
        let src = ops.apply_h(&target);
        let f = ops.green_solve(&src).unwrap();
        let hf = ops.apply_h(&f);
        let resid: f64 = hf.iter().zip(&src).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(resid < 1e-6, "{resid}");
        let _ = lambda_phi(1.0);
    }
}
