//! Closed-form quantities of the degree-one harmonic map `Q` and its Frenet frame.
//!
//! `Q(y) = (Λφ, 0, Z)` with `φ = 2 atan y`; the Frenet frame along `Q` is
//! `e_r = (Z, 0, -Λφ)`, `e_τ = (0, 1, 0)`.

use std::f64::consts::PI;

use crate::error::{param, Result};
use crate::grid::{Field, RadialGrid};
use crate::operators::{FieldTriple, Operators};

/// `Λφ = y φ'(y) = sin φ = 2y/(1+y²)`, the scaling resonance.
pub fn lambda_phi(y: f64) -> f64 {
    2.0 * y / (1.0 + y * y)
}

/// `Z = cos φ = (1-y²)/(1+y²)`.
pub fn z_fn(y: f64) -> f64 {
    (1.0 - y * y) / (1.0 + y * y)
}

/// Potential of the linearized operator, `V = (y⁴-6y²+1)/(1+y²)²`.
pub fn v_fn(y: f64) -> f64 {
    let y2 = y * y;
    (y2 * y2 - 6.0 * y2 + 1.0) / ((1.0 + y2) * (1.0 + y2))
}

pub fn phi_fn(y: f64) -> f64 {
    2.0 * y.atan()
}

/// `dΛφ/dy = Z (1+Z)`.
pub fn lambda_phi_prime(y: f64) -> f64 {
    let z = z_fn(y);
    z * (1.0 + z)
}

/// `dZ/dy = -Λφ (1+Z)`.
pub fn z_prime(y: f64) -> f64 {
    -lambda_phi(y) * (1.0 + z_fn(y))
}

/// The singular element of the kernel of `H`,
/// `Γ(y) = Λφ ∫_1^y dx / (x Λφ²)`, from the antiderivative of `(1+2x²+x⁴)/x³`.
pub fn gamma_green(y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return param(format!("second kernel element is singular at y = {y}"));
    }
    let y2 = y * y;
    let antiderivative = 0.5 * y2 - 0.5 / y2 + 2.0 * y.ln();
    Ok(y / (2.0 * (1.0 + y2)) * antiderivative)
}

/// Derivative of `Γ`, from the Wronskian `y (Λφ Γ' - Γ Λφ') = 1`.
pub fn gamma_green_prime(y: f64) -> Result<f64> {
    let g = gamma_green(y)?;
    Ok((1.0 / y + g * lambda_phi_prime(y)) / lambda_phi(y))
}

/// Ground-state functions tabulated on a grid.
#[derive(Debug, Clone)]
pub struct GroundStateTable {
    pub lambda_phi: Field,
    pub z: Field,
    pub potential: Field,
    pub gamma: Field,
}

impl GroundStateTable {
    pub fn on(grid: &RadialGrid) -> Self {
        GroundStateTable {
            lambda_phi: grid.map(lambda_phi),
            z: grid.map(z_fn),
            potential: grid.map(v_fn),
            gamma: grid.map(|y| gamma_green(y).expect("grid nodes are positive")),
        }
    }
}

/// Ambient components of `α e_r + β e_τ + (1+γ) Q` at radius `y`.
pub fn frame_to_ambient(y: f64, alpha: f64, beta: f64, gamma: f64) -> [f64; 3] {
    let lp = lambda_phi(y);
    let z = z_fn(y);
    [alpha * z + (1.0 + gamma) * lp, beta, -alpha * lp + (1.0 + gamma) * z]
}

/// Frenet coordinates `(α, β, γ)` of an ambient vector at radius `y`.
pub fn ambient_to_frame(y: f64, v: [f64; 3]) -> [f64; 3] {
    let lp = lambda_phi(y);
    let z = z_fn(y);
    [z * v[0] - lp * v[2], v[1], lp * v[0] + z * v[2] - 1.0]
}

/// `∫|∇u|² dx` for the map with Frenet coordinates `v`, using the exact energy
/// density in the moving frame:
/// `(α' + (1+Z)(1+γ))² + β'² + (γ' - (1+Z)α)² + ((αZ + (1+γ)Λφ)² + β²)/y²`.
pub fn dirichlet_energy(v: &FieldTriple, ops: &Operators) -> f64 {
    let grid = ops.grid();
    let da = ops.dy(&v.alpha);
    let db = ops.dy(&v.beta);
    let dg = ops.dy(&v.gamma);
    let density: Field = (0..grid.len())
        .map(|i| {
            let y = grid.nodes()[i];
            let (a, b, g) = (v.alpha[i], v.beta[i], v.gamma[i]);
            let lp = lambda_phi(y);
            let z = z_fn(y);
            let radial = (da[i] + (1.0 + z) * (1.0 + g)).powi(2)
                + db[i] * db[i]
                + (dg[i] - (1.0 + z) * a).powi(2);
            let angular = ((a * z + (1.0 + g) * lp).powi(2) + b * b) / (y * y);
            radial + angular
        })
        .collect();
    2.0 * PI * grid.integrate_with_origin_power(&density, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DiffOrder;

    #[test]
    fn pointwise_values() {
        assert_eq!(lambda_phi(0.0), 0.0);
        assert_eq!(lambda_phi(1.0), 1.0);
        assert!((lambda_phi(1e3) - 1.999998e-3).abs() < 1e-12);
        assert_eq!(z_fn(0.0), 1.0);
        assert_eq!(z_fn(1.0), 0.0);
        assert_eq!(v_fn(1.0), -1.0);
        assert!((v_fn(1e8) - 1.0).abs() < 1e-12);
        assert!((phi_fn(1.0) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pythagoras_and_potential_identity() {
        for k in -40..=40 {
            let y = 10f64.powf(k as f64 / 10.0);
            assert!((lambda_phi(y).powi(2) + z_fn(y).powi(2) - 1.0).abs() < 1e-12);
            // ΛZ = Z² - 1, V = 2ΛZ + 1
            let lz = y * z_prime(y);
            assert!((lz - (z_fn(y).powi(2) - 1.0)).abs() < 1e-12);
            assert!((v_fn(y) - (2.0 * lz + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_of_z_by_finite_differences() {
        let g = RadialGrid::log_uniform(1e-3, 1e3, 1200).unwrap();
        let ops = Operators::new(&g, DiffOrder::Second);
        let z = g.map(z_fn);
        let lz = ops.scaling(&z);
        let err = g.nodes().iter().zip(&lz).map(|(y, l)| (l - (z_fn(*y).powi(2) - 1.0)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3 * g.log_step().powi(2) * 1e3, "max error {err}");
    }

    #[test]
    fn second_kernel_element() {
        assert_eq!(gamma_green(1.0).unwrap(), 0.0);
        assert!(gamma_green(0.0).is_err());
        let y = 1e3;
        assert!((gamma_green(y).unwrap() / (y / 4.0) - 1.0).abs() < 1e-4);
        let y = 1e-2;
        assert!((y * gamma_green(y).unwrap()).abs() < 1.0);
    }

    #[test]
    fn wronskian_from_closed_forms() {
        // Γ' computed independently by a centered difference of the closed form
        for k in -30..=30 {
            let y = 10f64.powf(k as f64 / 10.0);
            let h = 1e-5 * y;
            let dg = (gamma_green(y + h).unwrap() - gamma_green(y - h).unwrap()) / (2.0 * h);
            let w = y * (lambda_phi(y) * dg - gamma_green(y).unwrap() * lambda_phi_prime(y));
            assert!((w - 1.0).abs() < 1e-8 * (1.0 + y * y + 1.0 / (y * y)).sqrt(), "y={y}, W={w}");
        }
    }

    #[test]
    fn frame_round_trip() {
        for &y in &[1e-3, 0.5, 1.0, 7.0, 1e4] {
            let v = frame_to_ambient(y, 0.3, -0.2, -0.1);
            let back = ambient_to_frame(y, v);
            assert!((back[0] - 0.3).abs() < 1e-14 && (back[1] + 0.2).abs() < 1e-14 && (back[2] + 0.1).abs() < 1e-14);
        }
        // right-handed frame: e_r × e_τ = Q
        let y = 0.7;
        let er = frame_to_ambient(y, 1.0, 0.0, -1.0);
        let et = frame_to_ambient(y, 0.0, 1.0, -1.0);
        let q = frame_to_ambient(y, 0.0, 0.0, 0.0);
        let cross = [er[1] * et[2] - er[2] * et[1], er[2] * et[0] - er[0] * et[2], er[0] * et[1] - er[1] * et[0]];
        for k in 0..3 {
            assert!((cross[k] - q[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_of_ground_state() {
        let g = RadialGrid::log_uniform(1e-5, 1e5, 2000).unwrap();
        let ops = Operators::new(&g, DiffOrder::Sixth);
        let e = dirichlet_energy(&FieldTriple::zeros(g.len()), &ops);
        let exact = 8.0 * PI * (1.0 - 1.0 / (1.0 + 1e10));
        assert!((e - exact).abs() / exact < 1e-8, "{e}");
    }
}
