//! Assembly of the discrete saddle-point system
//!
//! ```text
//! a_h(u, v) + b_h(v, p) = (f_h, v)
//! b_h(u, q)             = -(g_h, q)
//! ```
//!
//! with `a_h(u, v) = int Def u : Def v + u . v` and `b_h(v, q) = -int div v q`
//! on the curved surface. Data are `f_h = f o p` and `g_h = mu_h (g o p)`.

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, SurfaceOracle, Vec3};
use crate::manufactured::ExactSolution;
use crate::mesh::HighOrderMesh;
use crate::quadrature::{triangle_quadrature, TriangleRule};
use crate::reference::BasisEval;
use crate::spaces::{velocity_shapes, DofHandler};
use crate::transforms::GammaPiolaAtPoint;

pub type SparseMatrix = SparseColMat<usize, f64>;

/// Right-hand side data given on the exact surface.
pub trait SurfaceData: Sync {
    fn f(&self, y: &Vec3) -> Result<Vec3>;
    fn g(&self, y: &Vec3) -> Result<f64>;
}

impl SurfaceData for ExactSolution {
    fn f(&self, y: &Vec3) -> Result<Vec3> {
        ExactSolution::f(self, y)
    }

    fn g(&self, y: &Vec3) -> Result<f64> {
        ExactSolution::g(self, y)
    }
}

/// Homogeneous data `f = 0`, `g = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroData;

impl SurfaceData for ZeroData {
    fn f(&self, _: &Vec3) -> Result<Vec3> {
        Ok(Vec3::zeros())
    }

    fn g(&self, _: &Vec3) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    /// `m_j = int q_j`.
    pub m: Vec<f64>,
    /// Pressure mass matrix, used to precondition the Schur complement.
    pub pressure_mass: SparseMatrix,
    pub fvec: Vec<f64>,
    pub gvec: Vec<f64>,
    pub n_velocity: usize,
    pub n_pressure: usize,
}

pub fn default_quad_degree(r: usize) -> usize {
    2 * r + 2
}

/// Basis and geometry tabulations shared by all elements.
pub(crate) struct Tabulation {
    pub rule: TriangleRule,
    pub geometry: Vec<BasisEval>,
    pub velocity: Vec<BasisEval>,
    pub pressure: Vec<BasisEval>,
}

impl Tabulation {
    pub fn new(mesh: &HighOrderMesh, handler: &DofHandler, degree: usize) -> Result<Self> {
        let rule = triangle_quadrature(degree)?;
        Ok(Self {
            geometry: mesh.geometry_basis().tabulate(&rule.points),
            velocity: handler.velocity_basis.tabulate(&rule.points),
            pressure: handler.pressure_basis.tabulate(&rule.points),
            rule,
        })
    }
}

pub(crate) fn deformation(grad: &Mat3, nu_h: &Vec3) -> Mat3 {
    let pi = Mat3::identity() - nu_h * nu_h.transpose();
    pi * (grad + grad.transpose()) * pi * 0.5
}

struct ElementBlocks {
    vdofs: Vec<usize>,
    pdofs: Vec<usize>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    f: DVector<f64>,
    g: DVector<f64>,
    m: DVector<f64>,
    mass: DMatrix<f64>,
}

/// Block-diagonal map from global node coefficients to reference components.
fn coupling_matrix(handler: &DofHandler, k: usize) -> DMatrix<f64> {
    let c = &handler.coupling[k];
    let mut t = DMatrix::zeros(2 * c.len(), 2 * c.len());
    for (i, ci) in c.iter().enumerate() {
        t.view_mut((2 * i, 2 * i), (2, 2)).copy_from(ci);
    }
    t
}

fn element_blocks(
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    handler: &DofHandler,
    data: &dyn SurfaceData,
    tab: &Tabulation,
    k: usize,
) -> Result<ElementBlocks> {
    let nv = 2 * handler.velocity_basis.len();
    let np = handler.pressure_basis.len();
    let mut a = DMatrix::zeros(nv, nv);
    let mut b = DMatrix::zeros(np, nv);
    let mut f = DVector::zeros(nv);
    let mut g = DVector::zeros(np);
    let mut m = DVector::zeros(np);
    let mut mass = DMatrix::zeros(np, np);
    for (q, (_, w)) in tab.rule.iter().enumerate() {
        let me = mesh.eval_tabulated(k, &tab.geometry[q]);
        if !(me.sqrt_det > 0.0) {
            return Err(Error::DegenerateElement {
                element: k,
                value: me.sqrt_det,
            });
        }
        let nu_h = me.normal();
        let tp = oracle.closest_point(&me.point)?;
        let mu = GammaPiolaAtPoint::from_parts(&tp, &nu_h, k)?.mu_h;
        let dx = w * me.sqrt_det;
        let shapes = velocity_shapes(&me, &tab.velocity[q]);
        let defs: Vec<Mat3> = shapes.iter().map(|s| deformation(&s.grad, &nu_h)).collect();
        let divs: Vec<f64> = shapes.iter().map(|s| s.grad.trace()).collect();
        let fq = data.f(&tp.p)?;
        let gq = mu * data.g(&tp.p)?;
        for i in 0..nv {
            for j in i..nv {
                let v = dx * (defs[i].dot(&defs[j]) + shapes[i].value.dot(&shapes[j].value));
                a[(i, j)] += v;
            }
            f[i] += dx * fq.dot(&shapes[i].value);
        }
        let psi = &tab.pressure[q].values;
        for (pi, &pv) in psi.iter().enumerate() {
            for j in 0..nv {
                b[(pi, j)] -= dx * pv * divs[j];
            }
            g[pi] -= dx * gq * pv;
            m[pi] += dx * pv;
            for (pj, &qv) in psi.iter().enumerate() {
                mass[(pi, pj)] += dx * pv * qv;
            }
        }
    }
    for i in 0..nv {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let t = coupling_matrix(handler, k);
    let a = t.transpose() * a * &t;
    let b = b * &t;
    let f = t.transpose() * f;
    Ok(ElementBlocks {
        vdofs: handler.velocity_dofs(k),
        pdofs: handler.pressure_dofs(k).to_vec(),
        a,
        b,
        f,
        g,
        m,
        mass,
    })
}

pub(crate) fn sparse_from_triplets(
    nrows: usize,
    ncols: usize,
    t: &[Triplet<usize, usize, f64>],
) -> Result<SparseMatrix> {
    SparseMatrix::try_new_from_triplets(nrows, ncols, t)
        .map_err(|e| Error::SingularSystem(format!("sparse matrix creation failed: {e:?}")))
}

fn dense_triplets(
    rows: &[usize],
    cols: &[usize],
    block: &DMatrix<f64>,
    out: &mut Vec<Triplet<usize, usize, f64>>,
) {
    for (j, &c) in cols.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            let v = block[(i, j)];
            if v != 0.0 {
                out.push(Triplet::new(r, c, v));
            }
        }
    }
}

/// Assembles the saddle-point system with a rule of exactness `quad_degree`.
/// Element kernels run in parallel; their contributions are concatenated in
/// element order so the result does not depend on scheduling.
pub fn assemble_system(
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    handler: &DofHandler,
    data: &dyn SurfaceData,
    quad_degree: usize,
) -> Result<SaddleSystem> {
    if handler.coupling.len() != mesh.n_elements() {
        return Err(Error::DimensionMismatch {
            what: "dof handler elements",
            expected: mesh.n_elements(),
            got: handler.coupling.len(),
        });
    }
    let tab = Tabulation::new(mesh, handler, quad_degree)?;
    let blocks = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| element_blocks(mesh, oracle, handler, data, &tab, k))
        .collect::<Result<Vec<_>>>()?;
    let (nu, np) = (handler.n_velocity(), handler.n_pressure());
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    let mut tm = Vec::new();
    let mut fvec = vec![0.0; nu];
    let mut gvec = vec![0.0; np];
    let mut m = vec![0.0; np];
    for blk in &blocks {
        dense_triplets(&blk.vdofs, &blk.vdofs, &blk.a, &mut ta);
        dense_triplets(&blk.pdofs, &blk.vdofs, &blk.b, &mut tb);
        dense_triplets(&blk.pdofs, &blk.pdofs, &blk.mass, &mut tm);
        for (i, &d) in blk.vdofs.iter().enumerate() {
            fvec[d] += blk.f[i];
        }
        for (i, &d) in blk.pdofs.iter().enumerate() {
            gvec[d] += blk.g[i];
            m[d] += blk.m[i];
        }
    }
    Ok(SaddleSystem {
        a: sparse_from_triplets(nu, nu, &ta)?,
        b: sparse_from_triplets(np, nu, &tb)?,
        m,
        pressure_mass: sparse_from_triplets(np, np, &tm)?,
        fvec,
        gvec,
        n_velocity: nu,
        n_pressure: np,
    })
}

fn assemble_square(
    mesh: &HighOrderMesh,
    handler: &DofHandler,
    quad_degree: usize,
    velocity: bool,
) -> Result<SparseMatrix> {
    let tab = Tabulation::new(mesh, handler, quad_degree)?;
    let blocks: Vec<(Vec<usize>, DMatrix<f64>)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let mut local = if velocity {
                DMatrix::zeros(
                    2 * handler.velocity_basis.len(),
                    2 * handler.velocity_basis.len(),
                )
            } else {
                DMatrix::zeros(handler.pressure_basis.len(), handler.pressure_basis.len())
            };
            for (q, (_, w)) in tab.rule.iter().enumerate() {
                let me = mesh.eval_tabulated(k, &tab.geometry[q]);
                let dx = w * me.sqrt_det;
                if velocity {
                    let shapes = velocity_shapes(&me, &tab.velocity[q]);
                    for (i, si) in shapes.iter().enumerate() {
                        for (j, sj) in shapes.iter().enumerate() {
                            local[(i, j)] += dx * (si.grad.dot(&sj.grad) + si.value.dot(&sj.value));
                        }
                    }
                } else {
                    let psi = &tab.pressure[q].values;
                    for (i, a) in psi.iter().enumerate() {
                        for (j, b) in psi.iter().enumerate() {
                            local[(i, j)] += dx * a * b;
                        }
                    }
                }
            }
            if velocity {
                let t = coupling_matrix(handler, k);
                (handler.velocity_dofs(k), t.transpose() * local * &t)
            } else {
                (handler.pressure_dofs(k).to_vec(), local)
            }
        })
        .collect();
    let n = if velocity {
        handler.n_velocity()
    } else {
        handler.n_pressure()
    };
    let mut trip = Vec::new();
    for (dofs, local) in &blocks {
        dense_triplets(dofs, dofs, local, &mut trip);
    }
    sparse_from_triplets(n, n, &trip)
}

/// Velocity `H^1` Gram matrix `int grad u : grad v + u . v`.
pub fn assemble_velocity_h1(
    mesh: &HighOrderMesh,
    handler: &DofHandler,
    quad_degree: usize,
) -> Result<SparseMatrix> {
    assemble_square(mesh, handler, quad_degree, true)
}

/// Pressure `L^2` mass matrix.
pub fn assemble_pressure_mass(
    mesh: &HighOrderMesh,
    handler: &DofHandler,
    quad_degree: usize,
) -> Result<SparseMatrix> {
    assemble_square(mesh, handler, quad_degree, false)
}

/// `y = M x` for a compressed-column matrix.
pub fn matvec(m: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    matvec_acc(m, x, &mut y, 1.0);
    y
}

/// `y += alpha M x`.
pub fn matvec_acc(m: &SparseMatrix, x: &[f64], y: &mut [f64], alpha: f64) {
    let cp = m.symbolic().col_ptr();
    let ri = m.symbolic().row_idx();
    let val = m.val();
    for (j, &xj) in x.iter().enumerate() {
        for p in cp[j]..cp[j + 1] {
            y[ri[p]] += alpha * val[p] * xj;
        }
    }
}

/// `y += alpha M^T x`.
pub fn matvec_transpose_acc(m: &SparseMatrix, x: &[f64], y: &mut [f64], alpha: f64) {
    let cp = m.symbolic().col_ptr();
    let ri = m.symbolic().row_idx();
    let val = m.val();
    for (j, yj) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for p in cp[j]..cp[j + 1] {
            s += val[p] * x[ri[p]];
        }
        *yj += alpha * s;
    }
}

pub fn to_dense(m: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    let cp = m.symbolic().col_ptr();
    let ri = m.symbolic().row_idx();
    for j in 0..m.ncols() {
        for p in cp[j]..cp[j + 1] {
            d[(ri[p], j)] += m.val()[p];
        }
    }
    d
}
