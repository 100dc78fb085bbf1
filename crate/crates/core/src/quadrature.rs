//! Gauss–Legendre rules on `[-1, 1]` and their tensor products on the
//! parent square.

use crate::error::{Error, Result};

pub const MAX_POINTS: usize = 64;

/// Nodes and weights of the `n`-point Gauss–Legendre rule, nodes ascending.
pub fn gauss_legendre_1d(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > MAX_POINTS {
        return Err(Error::Argument(format!(
            "Gauss-Legendre rule size {n} outside 1..={MAX_POINTS}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Tensor-product rule on `[-1, 1]^2`. Node `g = a + b * n_u` pairs the
/// `a`-th node in the first direction with the `b`-th in the second.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub n_u: usize,
    pub n_v: usize,
    /// One-dimensional nodes in each direction.
    pub nodes_u: Vec<f64>,
    pub nodes_v: Vec<f64>,
    pub weights_u: Vec<f64>,
    pub weights_v: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn tensor_rule(n_u: usize, n_v: usize) -> Result<QuadratureRule> {
    let (nodes_u, weights_u) = gauss_legendre_1d(n_u)?;
    let (nodes_v, weights_v) = gauss_legendre_1d(n_v)?;
    let mut nodes = Vec::with_capacity(n_u * n_v);
    let mut weights = Vec::with_capacity(n_u * n_v);
    for b in 0..n_v {
        for a in 0..n_u {
            nodes.push([nodes_u[a], nodes_v[b]]);
            weights.push(weights_u[a] * weights_v[b]);
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        n_u,
        n_v,
        nodes_u,
        nodes_v,
        weights_u,
        weights_v,
    })
}
