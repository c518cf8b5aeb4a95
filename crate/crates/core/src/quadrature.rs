//! One-dimensional Gauss rules on `[0, 1]` and collapsed-Gauss rules on the
//! reference triangle `{(1,0), (0,1), (0,0)}`.

use crate::error::{Error, Result};

/// Largest polynomial degree supported by [`triangle_quadrature`].
pub const MAX_TRIANGLE_DEGREE: usize = 20;

/// A quadrature rule on an interval or on the reference triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

pub type LineRule = QuadratureRule<1>;
pub type TriangleRule = QuadratureRule<2>;

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; D], f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Legendre polynomial `P_n(x)` and its derivative on `[-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint value P_n'(+-1) = (+-1)^{n-1} n(n+1)/2
        x.signum().powi(n as i32 - 1) * nf * (nf + 1.0) / 2.0
    } else {
        nf * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// `n`-point Gauss-Legendre rule mapped to `[0, 1]`, exact to degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> LineRule {
    assert!(n >= 1);
    let mut points = vec![[0.0]; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        // nodes in ascending order on [0, 1]
        points[n - 1 - i] = [0.5 * (1.0 + x)];
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    QuadratureRule {
        points,
        weights,
        exact_degree: 2 * n - 1,
    }
}

/// `n`-point Gauss-Lobatto rule on `[0, 1]` (endpoints included), exact to
/// degree `2n - 3`. Interior nodes are the roots of `P_{n-1}'`.
pub fn gauss_lobatto_1d(n: usize) -> Result<LineRule> {
    if !(2..=8).contains(&n) {
        return Err(Error::UnsupportedDegree {
            what: "Gauss-Lobatto rule",
            degree: n,
        });
    }
    let m = n - 1;
    let mf = m as f64;
    let mut xs = vec![-1.0; n];
    xs[m] = 1.0;
    for (i, slot) in xs.iter_mut().enumerate().take(m).skip(1) {
        let mut x = -(std::f64::consts::PI * i as f64 / mf).cos();
        for _ in 0..100 {
            // Newton on q(x) = (1 - x^2) P_m'(x), whose interior roots are the nodes
            // q'(x) = -m(m+1) P_m(x)
            let (p, dp) = legendre(m, x);
            let q = (1.0 - x * x) * dp;
            let dq = -mf * (mf + 1.0) * p;
            let dx = q / dq;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        *slot = x;
    }
    let points = xs.iter().map(|&x| [0.5 * (1.0 + x)]).collect();
    let weights = xs
        .iter()
        .map(|&x| {
            let (p, _) = legendre(m, x);
            1.0 / (mf * (mf + 1.0) * p * p)
        })
        .collect();
    Ok(QuadratureRule {
        points,
        weights,
        exact_degree: 2 * n - 3,
    })
}

/// Interior nodes of the `(n+1)`-point Gauss-Lobatto rule on `[0, 1]`.
pub fn gauss_lobatto_interior(degree: usize) -> Result<Vec<f64>> {
    let rule = gauss_lobatto_1d(degree + 1)?;
    Ok(rule.points[1..degree].iter().map(|p| p[0]).collect())
}

/// Quadrature rule on the reference triangle exact for polynomials of total
/// degree `degree`. Degree 0 and 1 use the centroid rule; higher degrees use
/// a collapsed (Duffy) tensor product of Gauss-Legendre rules.
pub fn triangle_quadrature(degree: usize) -> Result<TriangleRule> {
    if degree > MAX_TRIANGLE_DEGREE {
        return Err(Error::UnsupportedDegree {
            what: "triangle quadrature",
            degree,
        });
    }
    if degree <= 1 {
        return Ok(QuadratureRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            exact_degree: 1,
        });
    }
    // x1 = u, x2 = (1 - u) v with Jacobian (1 - u): degree+1 in u, degree in v.
    let n = (degree + 3) / 2;
    let g = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (u, wu) in g.iter() {
        for (v, wv) in g.iter() {
            points.push([u[0], (1.0 - u[0]) * v[0]]);
            weights.push(wu * wv * (1.0 - u[0]));
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        exact_degree: degree,
    })
}
