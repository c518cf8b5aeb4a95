//! Reference triangle `K^ = conv{(1,0), (0,1), (0,0)}`, nodal layouts and
//! Lagrange bases for arbitrary unisolvent node sets.
//!
//! Node layout used everywhere in the crate: the three vertices, then the
//! edge nodes of local edges 0, 1, 2 (each listed from the edge's first to
//! its second vertex), then interior nodes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const REF_VERTICES: [[f64; 2]; 3] = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];

/// Local edge `j` joins local vertices `LOCAL_EDGES[j]` and is opposite vertex `j`.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

pub fn dim_p(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Point on local edge `edge` at parameter `t` (0 at its first vertex).
pub fn edge_point(edge: usize, t: f64) -> [f64; 2] {
    let [a, b] = LOCAL_EDGES[edge];
    let (pa, pb) = (REF_VERTICES[a], REF_VERTICES[b]);
    [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
}

/// Equispaced interior lattice points of degree `degree`, optionally scaled
/// about the centroid.
pub fn interior_lattice(degree: usize, scale: f64) -> Vec<[f64; 2]> {
    let n = degree as f64;
    let c = 1.0 / 3.0;
    let mut pts = Vec::new();
    for j in 1..degree {
        for i in 1..degree - j {
            let p = [i as f64 / n, j as f64 / n];
            pts.push([c + scale * (p[0] - c), c + scale * (p[1] - c)]);
        }
    }
    pts
}

pub fn equispaced_params(degree: usize) -> Vec<f64> {
    (1..degree).map(|i| i as f64 / degree as f64).collect()
}

/// Full nodal layout from edge parameters (ascending, in `(0,1)`) and
/// interior points.
pub fn layout(edge_params: &[f64], interior: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut nodes = REF_VERTICES.to_vec();
    for e in 0..3 {
        nodes.extend(edge_params.iter().map(|&t| edge_point(e, t)));
    }
    nodes.extend_from_slice(interior);
    nodes
}

pub fn equispaced_layout(degree: usize) -> Vec<[f64; 2]> {
    layout(&equispaced_params(degree), &interior_lattice(degree, 1.0))
}

/// Basis values and derivatives at one reference point. Second derivatives
/// are stored as `[xx, xy, yy]`.
#[derive(Debug, Clone, Default)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
    pub hessians: Vec<[f64; 3]>,
}

/// Nodal Lagrange basis of `P_degree` on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriangleBasis {
    degree: usize,
    nodes: Vec<[f64; 2]>,
    exponents: Vec<(i32, i32)>,
    /// Column `i` holds the monomial coefficients of basis function `i`.
    coeffs: DMatrix<f64>,
    condition: f64,
}

impl TriangleBasis {
    pub fn new(degree: usize, nodes: Vec<[f64; 2]>) -> Result<Self> {
        let n = dim_p(degree);
        if nodes.len() != n {
            return Err(Error::DimensionMismatch {
                what: "triangle basis nodes",
                expected: n,
                got: nodes.len(),
            });
        }
        let exponents: Vec<(i32, i32)> = (0..=degree as i32)
            .flat_map(|t| (0..=t).map(move |b| (t - b, b)))
            .collect();
        let vander = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = exponents[j];
            nodes[i][0].powi(a) * nodes[i][1].powi(b)
        });
        let svd = vander.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-12 * smax {
            return Err(Error::InvalidMesh(format!(
                "degree-{degree} node set is not unisolvent"
            )));
        }
        let inv = vander.try_inverse().ok_or_else(|| {
            Error::InvalidMesh(format!("degree-{degree} node set is not unisolvent"))
        })?;
        Ok(Self {
            degree,
            nodes,
            exponents,
            coeffs: inv,
            condition: smax / smin,
        })
    }

    pub fn equispaced(degree: usize) -> Self {
        Self::new(degree, equispaced_layout(degree)).expect("equispaced lattice is unisolvent")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// 2-norm condition number of the monomial Vandermonde matrix.
    pub fn vandermonde_condition(&self) -> f64 {
        self.condition
    }

    pub fn eval(&self, x: [f64; 2]) -> BasisEval {
        let n = self.len();
        let pw = |v: f64, e: i32| if e < 0 { 0.0 } else { v.powi(e) };
        let mut m = vec![0.0; n];
        let mut mx = vec![0.0; n];
        let mut my = vec![0.0; n];
        let mut mxx = vec![0.0; n];
        let mut mxy = vec![0.0; n];
        let mut myy = vec![0.0; n];
        for (j, &(a, b)) in self.exponents.iter().enumerate() {
            let (af, bf) = (a as f64, b as f64);
            m[j] = pw(x[0], a) * pw(x[1], b);
            mx[j] = af * pw(x[0], a - 1) * pw(x[1], b);
            my[j] = bf * pw(x[0], a) * pw(x[1], b - 1);
            mxx[j] = af * (af - 1.0) * pw(x[0], a - 2) * pw(x[1], b);
            mxy[j] = af * bf * pw(x[0], a - 1) * pw(x[1], b - 1);
            myy[j] = bf * (bf - 1.0) * pw(x[0], a) * pw(x[1], b - 2);
        }
        let mut out = BasisEval {
            values: vec![0.0; n],
            grads: vec![[0.0; 2]; n],
            hessians: vec![[0.0; 3]; n],
        };
        for i in 0..n {
            let c = self.coeffs.column(i);
            let dot = |v: &[f64]| c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            out.values[i] = dot(&m);
            out.grads[i] = [dot(&mx), dot(&my)];
            out.hessians[i] = [dot(&mxx), dot(&mxy), dot(&myy)];
        }
        out
    }

    /// Tabulates the basis at every point of `points`.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> Vec<BasisEval> {
        points.iter().map(|&p| self.eval(p)).collect()
    }
}
