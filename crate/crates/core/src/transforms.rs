//! Piola transforms: reference triangle to curved element, curved element to
//! exact surface and back, the nodal tangent-plane transfer, and the area and
//! edge-length change factors.

use nalgebra::{Matrix2x3, Matrix3x2};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, SurfaceOracle, TubePoint, Vec3};
use crate::mesh::{HighOrderMesh, MapEval};

/// Reference-to-element Piola matrix `P = J / sqrt(det G)` and its
/// pseudo-inverse `P^+ = sqrt(det G) G^{-1} J^T`.
#[derive(Debug, Clone, Copy)]
pub struct PiolaAtPoint {
    pub p: Matrix3x2<f64>,
    pub pdagger: Matrix2x3<f64>,
}

impl PiolaAtPoint {
    pub fn new(m: &MapEval) -> Self {
        Self {
            p: m.jac / m.sqrt_det,
            pdagger: m.metric_inv * m.jac.transpose() * m.sqrt_det,
        }
    }
}

/// Piola maps between a curved element and the exact surface at one point.
#[derive(Debug, Clone, Copy)]
pub struct GammaPiolaAtPoint {
    pub mu_h: f64,
    /// `(1/mu_h) [Pi - d H]`: element tangent vectors to surface tangent vectors.
    pub l_fwd: Mat3,
    /// `mu_h [I - nu (x) nu_h / (nu . nu_h)] [I - d H]^{-1}`.
    pub l_inv: Mat3,
}

impl GammaPiolaAtPoint {
    /// Builds the maps from the tube data at `x = a_K(xhat)` and the element
    /// normal `nu_h` there.
    pub fn from_parts(tp: &TubePoint, nu_h: &Vec3, element: usize) -> Result<Self> {
        let align = tp.nu.dot(nu_h);
        let shift = Mat3::identity() - tp.h * tp.d;
        let mu_h = align * shift.determinant();
        if !(mu_h > 0.0) {
            return Err(Error::NonPositiveJacobian {
                element,
                value: mu_h,
            });
        }
        if align <= 0.5 {
            return Err(Error::SingularFactor {
                element,
                alignment: align,
            });
        }
        let l_fwd = (tp.pi - tp.h * tp.d) / mu_h;
        let oblique = Mat3::identity() - tp.nu * nu_h.transpose() / align;
        let shift_inv = shift.try_inverse().ok_or(Error::SingularFactor {
            element,
            alignment: align,
        })?;
        Ok(Self {
            mu_h,
            l_fwd,
            l_inv: oblique * shift_inv * mu_h,
        })
    }

    pub fn forward(&self, v: &Vec3) -> Vec3 {
        self.l_fwd * v
    }

    pub fn inverse(&self, w: &Vec3) -> Vec3 {
        self.l_inv * w
    }
}

fn at_point(
    oracle: &SurfaceOracle,
    mesh: &HighOrderMesh,
    element: usize,
    xhat: [f64; 2],
) -> Result<(TubePoint, GammaPiolaAtPoint)> {
    let m = mesh.eval(element, xhat);
    let tp = oracle.closest_point(&m.point)?;
    let g = GammaPiolaAtPoint::from_parts(&tp, &m.normal(), element)?;
    Ok((tp, g))
}

/// Area factor `mu_h = (nu . nu_h) det(I - d H)` with `mu_h dA_h = dA`.
pub fn mu_h(
    oracle: &SurfaceOracle,
    mesh: &HighOrderMesh,
    element: usize,
    xhat: [f64; 2],
) -> Result<f64> {
    Ok(at_point(oracle, mesh, element, xhat)?.1.mu_h)
}

/// Pushes a vector tangent to the element at `a_K(xhat)` to the tangent plane
/// of the exact surface at `p(a_K(xhat))`.
pub fn gamma_piola_forward(
    oracle: &SurfaceOracle,
    mesh: &HighOrderMesh,
    element: usize,
    xhat: [f64; 2],
    v: &Vec3,
) -> Result<Vec3> {
    Ok(at_point(oracle, mesh, element, xhat)?.1.forward(v))
}

/// Pulls a vector tangent to the exact surface at `p(a_K(xhat))` back to the
/// element tangent plane at `a_K(xhat)`.
pub fn gamma_piola_inverse(
    oracle: &SurfaceOracle,
    mesh: &HighOrderMesh,
    element: usize,
    xhat: [f64; 2],
    w: &Vec3,
) -> Result<Vec3> {
    Ok(at_point(oracle, mesh, element, xhat)?.1.inverse(w))
}

/// Nodal transfer `M x = (nu_ref . nu_K) x - nu_ref (nu_K . x)`, mapping
/// vectors tangent to the plane normal to `nu_ref` into the plane normal to
/// `nu_k`.
pub fn node_transfer_matrix(nu_ref: &Vec3, nu_k: &Vec3) -> Result<Mat3> {
    let align = nu_ref.dot(nu_k);
    if align <= 0.5 {
        return Err(Error::NearTangentPlaneFlip { alignment: align });
    }
    Ok(Mat3::identity() * align - nu_ref * nu_k.transpose())
}

/// Edge-length factor `|grad Psi t|` on global edge `e` at parameter `s`
/// (from the lower to the higher vertex), relative to the straight base edge.
pub fn edge_transfer_factor(mesh: &HighOrderMesh, e: usize, s: f64) -> f64 {
    let (t, xhat) = mesh.edge_point(e, s);
    let [lo, hi] = mesh.base.edges[e];
    let base_len = (mesh.base.vertices[hi] - mesh.base.vertices[lo]).norm();
    edge_speed(mesh, t, e, xhat) / base_len
}

/// `|d a_K / ds|` along edge `e` parameterized from lower to higher vertex on
/// `[0, 1]`.
pub fn edge_speed(mesh: &HighOrderMesh, t: usize, e: usize, xhat: [f64; 2]) -> f64 {
    let (j, flip) = mesh.local_edge(t, e);
    let [a, b] = crate::reference::LOCAL_EDGES[j];
    let (pa, pb) = (
        crate::reference::REF_VERTICES[a],
        crate::reference::REF_VERTICES[b],
    );
    let sign = if flip { -1.0 } else { 1.0 };
    let that = nalgebra::Vector2::new(pb[0] - pa[0], pb[1] - pa[1]) * sign;
    (mesh.eval(t, xhat).jac * that).norm()
}
