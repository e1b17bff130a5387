//! Quadrature on the reference triangle and the reference edge `[0, 1]`.
//!
//! Triangle rules above degree 1 are collapsed Gauss products: Gauss-Legendre
//! in `u` and `v` mapped through `(x, y) = (u, (1 - u) v)`. They have
//! positive weights and are exact up to the advertised degree.

use nalgebra::Point2;

use crate::error::{Error, Result};

pub const MIN_DEGREE: usize = 1;
pub const MAX_DEGREE: usize = 10;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Reference coordinates; for edge rules only `x` is used.
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point2<f64>, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    /// Barycentric coordinates `(1 - x - y, x, y)` of each triangle point.
    pub fn barycentric(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [1.0 - p.x - p.y, p.x, p.y]).collect()
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
        return Err(Error::UnsupportedDegree { degree, min: MIN_DEGREE, max: MAX_DEGREE });
    }
    Ok(())
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Newton on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        // map [-1, 1] -> [0, 1]; reverse so nodes ascend
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule on the reference triangle exact for polynomials of total degree ≤ `degree`.
pub fn triangle_rule(degree: usize) -> Result<QuadratureRule> {
    check_degree(degree)?;
    if degree == 1 {
        return Ok(QuadratureRule {
            points: vec![Point2::new(1.0 / 3.0, 1.0 / 3.0)],
            weights: vec![0.5],
            exactness_degree: 1,
        });
    }
    // the collapse adds a factor (1 - u), so u needs one extra degree
    let n = (degree + 3) / 2;
    let (nodes, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (u, wu) in nodes.iter().zip(&w) {
        for (v, wv) in nodes.iter().zip(&w) {
            points.push(Point2::new(*u, (1.0 - u) * v));
            weights.push(wu * wv * (1.0 - u));
        }
    }
    Ok(QuadratureRule { points, weights, exactness_degree: degree })
}

/// Gauss rule on `[0, 1]` exact for polynomials of degree ≤ `degree`.
pub fn edge_rule(degree: usize) -> Result<QuadratureRule> {
    check_degree(degree)?;
    let n = degree / 2 + 1;
    let (nodes, weights) = gauss_legendre(n);
    Ok(QuadratureRule {
        points: nodes.into_iter().map(|t| Point2::new(t, 0.0)).collect(),
        weights,
        exactness_degree: 2 * n - 1,
    })
}
