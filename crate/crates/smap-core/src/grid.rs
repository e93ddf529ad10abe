//! Log-uniform radial grids with quadrature for the measure `y dy` and
//! finite-difference stencils on the actual (non-uniform) nodes.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// A radial function sampled on the nodes of a [`RadialGrid`].
pub type Field = Vec<f64>;

/// Points per Lagrange panel used by the composite quadrature.
const PANEL_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffOrder {
    /// Three-point stencils, second-order accurate.
    Second,
    /// Seven-point stencils, sixth-order accurate.
    Sixth,
}

impl DiffOrder {
    fn width(self) -> usize {
        match self {
            DiffOrder::Second => 3,
            DiffOrder::Sixth => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<RadialGrid> {
        RadialGrid::log_uniform(self.y_min, self.y_max, self.n)
    }
}

/// Geometric grid `y_i = y_min q^i`. Weights integrate `f(y) y dy` over
/// `[y_min, y_max]`; the origin panel `[0, y_min]` is handled separately by
/// [`RadialGrid::integrate`] and [`RadialGrid::cumulative`].
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_step: f64,
}

impl RadialGrid {
    pub fn log_uniform(y_min: f64, y_max: f64, n: usize) -> Result<Self> {
        if !(y_min > 0.0 && y_max > y_min && y_min.is_finite() && y_max.is_finite()) {
            return param(format!("invalid grid span [{y_min}, {y_max}]"));
        }
        if n < 2 * PANEL_POINTS {
            return param(format!("grid needs at least {} nodes, got {n}", 2 * PANEL_POINTS));
        }
        let log_step = (y_max / y_min).ln() / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| y_min * (log_step * i as f64).exp()).collect();
        nodes[n - 1] = y_max;
        let mut grid = RadialGrid { nodes, weights: vec![0.0; n], log_step };
        grid.weights = grid.panel_weights_total();
        Ok(grid)
    }

    /// Default span: first node at `1e-4 * y_max`.
    pub fn with_default_span(y_max: f64, n: usize) -> Result<Self> {
        Self::log_uniform(1e-4 * y_max, y_max, n)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { y_min: self.y_min(), y_max: self.y_max(), n: self.len() }
    }

    /// Same node pattern with every node multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let nodes: Vec<f64> = self.nodes.iter().map(|y| y * factor).collect();
        let weights = self.weights.iter().map(|w| w * factor * factor).collect();
        RadialGrid { nodes, weights, log_step: self.log_step }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn y_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn y_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Spacing in `log y`.
    pub fn log_step(&self) -> f64 {
        self.log_step
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        self.nodes.iter().map(|&y| f(y)).collect()
    }

    /// Index of the first node `>= y` (or `len()` if none).
    pub fn index_at_least(&self, y: f64) -> usize {
        self.nodes.partition_point(|&x| x < y)
    }

    /// `∫_0^{y_max} f y dy`, origin panel closed with the local power of `f`
    /// estimated from the first two nodes.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.origin_panel(f) + dot(&self.weights, f)
    }

    /// `∫_0^{y_max} f y dy` with a prescribed leading power `f ~ y^p` at the origin.
    pub fn integrate_with_origin_power(&self, f: &[f64], p: f64) -> f64 {
        f[0] * self.nodes[0].powi(2) / (p + 2.0) + dot(&self.weights, f)
    }

    /// `(f, g) = ∫ f g y dy`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.integrate(&prod)
    }

    /// Weighted squared norm `∫ f² y dy`.
    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.inner(f, f)
    }

    /// Running integral `F_i = ∫_0^{y_i} f y dy`.
    pub fn cumulative(&self, f: &[f64]) -> Field {
        let n = self.len();
        let mut out = vec![0.0; n];
        out[0] = self.origin_panel(f);
        let g: Vec<f64> = f.iter().zip(&self.nodes).map(|(v, y)| v * y * y).collect();
        for j in 0..n - 1 {
            let start = panel_start(j, n);
            let coeffs = panel_coefficients(j - start);
            let panel: f64 = (0..PANEL_POINTS).map(|k| coeffs[k] * g[start + k]).sum();
            out[j + 1] = out[j] + self.log_step * panel;
        }
        out
    }

    fn origin_panel(&self, f: &[f64]) -> f64 {
        let y0 = self.nodes[0];
        let p = leading_power(f[0], f[1], self.log_step);
        f[0] * y0 * y0 / (p + 2.0)
    }

    fn panel_weights_total(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![0.0; n];
        for j in 0..n - 1 {
            let start = panel_start(j, n);
            let coeffs = panel_coefficients(j - start);
            for k in 0..PANEL_POINTS {
                let y = self.nodes[start + k];
                w[start + k] += self.log_step * coeffs[k] * y * y;
            }
        }
        w
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Local exponent of `f ~ y^p` from two consecutive log-grid samples,
/// clamped to keep the origin panel integrable.
fn leading_power(f0: f64, f1: f64, log_step: f64) -> f64 {
    if f0 == 0.0 || f0.signum() != f1.signum() {
        return 0.0;
    }
    ((f1 / f0).ln() / log_step).clamp(-1.9, 40.0)
}

fn panel_start(j: usize, n: usize) -> usize {
    let half = PANEL_POINTS / 2 - 1;
    j.saturating_sub(half).min(n - PANEL_POINTS)
}

/// `∫_0^1 ℓ_k(t) dt` for the Lagrange basis on integer nodes `-offset .. PANEL_POINTS-offset`,
/// i.e. the panel `[node offset, node offset+1]` within a six-point window.
fn panel_coefficients(offset: usize) -> [f64; PANEL_POINTS] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<[f64; PANEL_POINTS]>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..PANEL_POINTS - 1)
            .map(|off| {
                let pts: Vec<f64> = (0..PANEL_POINTS).map(|k| k as f64 - off as f64).collect();
                let mut c = [0.0; PANEL_POINTS];
                for (k, ck) in c.iter_mut().enumerate() {
                    // expand ℓ_k as a polynomial in t, then integrate over [0, 1]
                    let mut poly = vec![1.0];
                    let mut denom = 1.0;
                    for (m, &pm) in pts.iter().enumerate() {
                        if m == k {
                            continue;
                        }
                        denom *= pts[k] - pm;
                        let mut next = vec![0.0; poly.len() + 1];
                        for (d, &a) in poly.iter().enumerate() {
                            next[d + 1] += a;
                            next[d] -= a * pm;
                        }
                        poly = next;
                    }
                    *ck = poly.iter().enumerate().map(|(d, a)| a / (d as f64 + 1.0)).sum::<f64>() / denom;
                }
                c
            })
            .collect()
    });
    table[offset]
}

/// Finite-difference weights for first and second derivatives at every node.
#[derive(Debug, Clone)]
pub struct Stencils {
    start: Vec<usize>,
    width: Vec<usize>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
}

impl Stencils {
    pub fn new(nodes: &[f64], order: DiffOrder) -> Self {
        let n = nodes.len();
        let w = order.width();
        let half = w / 2;
        let mut start = Vec::with_capacity(n);
        let mut width = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for i in 0..n {
            // one extra point on one-sided stencils keeps the second derivative at full order
            let (s, wi) = if i < half {
                (0, w + 1)
            } else if i + half >= n {
                (n - w - 1, w + 1)
            } else {
                (i - half, w)
            };
            let local: Vec<f64> = nodes[s..s + wi].iter().map(|x| x - nodes[i]).collect();
            let c = fornberg_weights(0.0, &local, 2);
            start.push(s);
            width.push(wi);
            d1.push(c.iter().map(|row| row[1]).collect());
            d2.push(c.iter().map(|row| row[2]).collect());
        }
        Stencils { start, width, d1, d2 }
    }

    pub fn first(&self, f: &[f64]) -> Field {
        self.apply(f, &self.d1)
    }

    pub fn second(&self, f: &[f64]) -> Field {
        self.apply(f, &self.d2)
    }

    fn apply(&self, f: &[f64], w: &[Vec<f64>]) -> Field {
        (0..f.len())
            .map(|i| {
                let s = self.start[i];
                (0..self.width[i]).map(|k| w[i][k] * f[s + k]).sum()
            })
            .collect()
    }
}

/// Fornberg's recursion: weights `c[j][k]` for the k-th derivative at `z`
/// from samples at `x[j]`.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c
}
