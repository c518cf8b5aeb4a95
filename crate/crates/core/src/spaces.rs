//! Velocity and pressure spaces on a curved mesh.
//!
//! Velocity nodes carry two coefficients in an orthonormal frame of the
//! tangent plane of their master element `K_a`. On any other element `K`
//! containing the node, the nodal value is obtained with the transfer matrix
//! `M_a^K` and then pulled back to the reference triangle by the Piola
//! pseudo-inverse, giving the 2x2 coupling `C_{a,K}`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3x2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, SurfaceOracle, Vec3};
use crate::mesh::{BaseMesh, HighOrderMesh, MapEval};
use crate::quadrature::{gauss_lobatto_interior, LineRule};
use crate::reference::{
    dim_p, edge_point, equispaced_layout, equispaced_params, interior_lattice, layout, BasisEval,
    TriangleBasis, LOCAL_EDGES, REF_VERTICES,
};
use crate::transforms::{node_transfer_matrix, GammaPiolaAtPoint, PiolaAtPoint};

/// Placement of the velocity nodes on the interior of each edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    GaussLobatto,
    Equispaced,
}

impl Placement {
    /// Edge parameters in `(0, 1)`, ascending.
    pub fn edge_params(self, r: usize) -> Result<Vec<f64>> {
        match self {
            Placement::GaussLobatto => gauss_lobatto_interior(r),
            Placement::Equispaced => Ok(equispaced_params(r)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::GaussLobatto => "gauss-lobatto",
            Placement::Equispaced => "equispaced",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss-lobatto" | "gl" => Ok(Placement::GaussLobatto),
            "equispaced" | "eq" => Ok(Placement::Equispaced),
            _ => Err(Error::InvalidMesh(format!(
                "unknown node placement '{s}' (expected gauss-lobatto or equispaced)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Vertex(usize),
    /// `index` counts from the lower to the higher vertex of the edge.
    Edge {
        edge: usize,
        index: usize,
    },
    Interior {
        tri: usize,
        index: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub position: Vec3,
    pub class: NodeClass,
    /// `(element, local node index)` for every element containing the node,
    /// sorted by element.
    pub incidences: Vec<(usize, usize)>,
}

/// Continuous Lagrange numbering of a degree-`degree` layout whose edge
/// parameters are symmetric about 1/2.
#[derive(Debug, Clone)]
pub struct Numbering {
    pub degree: usize,
    pub count: usize,
    /// Local-to-global node map per element, in reference layout order.
    pub l2g: Vec<Vec<usize>>,
}

impl Numbering {
    pub fn new(base: &BaseMesh, degree: usize) -> Self {
        let ne = degree - 1;
        let ni = (degree - 1) * degree.saturating_sub(2) / 2;
        let nv = base.vertices.len();
        let int_offset = nv + base.edges.len() * ne;
        let l2g = base
            .triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let mut ids: Vec<usize> = tri.to_vec();
                for j in 0..3 {
                    let e = base.tri_edges[t][j];
                    let flip = base.tri_edge_flip[t][j];
                    ids.extend((0..ne).map(|m| nv + e * ne + if flip { ne - 1 - m } else { m }));
                }
                ids.extend((0..ni).map(|m| int_offset + t * ni + m));
                ids
            })
            .collect();
        Self {
            degree,
            count: int_offset + base.triangles.len() * ni,
            l2g,
        }
    }
}

/// Velocity node set `N_{h,k}` with reference coordinates per element.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub r: usize,
    pub placement: Placement,
    pub edge_params: Vec<f64>,
    /// Reference layout shared by all elements.
    pub ref_nodes: Vec<[f64; 2]>,
    pub numbering: Numbering,
    pub nodes: Vec<Node>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn enumerate_nodes(mesh: &HighOrderMesh, r: usize, placement: Placement) -> Result<NodeSet> {
    enumerate_nodes_with_interior(mesh, r, placement, 1.0)
}

/// As [`enumerate_nodes`], with the equispaced interior lattice scaled by
/// `interior_scale` about the centroid.
pub fn enumerate_nodes_with_interior(
    mesh: &HighOrderMesh,
    r: usize,
    placement: Placement,
    interior_scale: f64,
) -> Result<NodeSet> {
    if r < 2 {
        return Err(Error::UnsupportedDegree {
            what: "velocity space",
            degree: r,
        });
    }
    let edge_params = placement.edge_params(r)?;
    let ref_nodes = layout(&edge_params, &interior_lattice(r, interior_scale));
    let numbering = Numbering::new(&mesh.base, r);
    let ne = r - 1;
    let mut nodes: Vec<Option<Node>> = vec![None; numbering.count];
    for (t, ids) in numbering.l2g.iter().enumerate() {
        for (i, &g) in ids.iter().enumerate() {
            let slot = &mut nodes[g];
            match slot {
                Some(node) => node.incidences.push((t, i)),
                None => {
                    let class = if i < 3 {
                        NodeClass::Vertex(mesh.base.triangles[t][i])
                    } else if i < 3 + 3 * ne {
                        let j = (i - 3) / ne;
                        let m = (i - 3) % ne;
                        let flip = mesh.base.tri_edge_flip[t][j];
                        NodeClass::Edge {
                            edge: mesh.base.tri_edges[t][j],
                            index: if flip { ne - 1 - m } else { m },
                        }
                    } else {
                        NodeClass::Interior {
                            tri: t,
                            index: i - 3 - 3 * ne,
                        }
                    };
                    *slot = Some(Node {
                        position: mesh.eval(t, ref_nodes[i]).point,
                        class,
                        incidences: vec![(t, i)],
                    });
                }
            }
        }
    }
    let nodes = nodes
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidMesh("velocity numbering has gaps".into()))?;
    Ok(NodeSet {
        r,
        placement,
        edge_params,
        ref_nodes,
        numbering,
        nodes,
    })
}

/// Degrees of freedom of the Taylor-Hood pair `V_h x Q_h`.
#[derive(Debug, Clone)]
pub struct DofHandler {
    pub node_set: NodeSet,
    /// Master element `K_a` per node.
    pub master: Vec<usize>,
    /// Orthonormal frame of the tangent plane of `K_a` at each node.
    pub frames: Vec<Matrix3x2<f64>>,
    /// `C_{a,K}` per element and local node.
    pub coupling: Vec<Vec<Matrix2<f64>>>,
    pub velocity_basis: TriangleBasis,
    pub pressure: Numbering,
    pub pressure_basis: TriangleBasis,
}

/// Orthonormal basis of the plane normal to `nu`, seeded by `e_z` unless
/// `e_x` is less aligned with `nu`.
pub fn tangent_frame(nu: &Vec3) -> Matrix3x2<f64> {
    let seed = if nu[2].abs() <= nu[0].abs() {
        Vec3::z()
    } else {
        Vec3::x()
    };
    let f1 = (seed - nu * nu.dot(&seed)).normalize();
    let f2 = nu.cross(&f1);
    Matrix3x2::from_columns(&[f1, f2])
}

pub fn assign_master_elements(mesh: &HighOrderMesh, node_set: NodeSet) -> Result<DofHandler> {
    let r = node_set.r;
    let velocity_basis = TriangleBasis::new(r, node_set.ref_nodes.clone())?;
    let n_elem = mesh.n_elements();
    let mut master = Vec::with_capacity(node_set.len());
    let mut frames = Vec::with_capacity(node_set.len());
    let mut master_normals = Vec::with_capacity(node_set.len());
    for node in &node_set.nodes {
        let (k, i) = node.incidences[0];
        let nu = mesh.eval(k, node_set.ref_nodes[i]).normal();
        master.push(k);
        frames.push(tangent_frame(&nu));
        master_normals.push(nu);
    }
    let mut coupling = Vec::with_capacity(n_elem);
    for k in 0..n_elem {
        let mut row = Vec::with_capacity(node_set.ref_nodes.len());
        for (i, &g) in node_set.numbering.l2g[k].iter().enumerate() {
            let m = mesh.eval(k, node_set.ref_nodes[i]);
            let piola = PiolaAtPoint::new(&m);
            let transfer = node_transfer_matrix(&master_normals[g], &m.normal())?;
            row.push(piola.pdagger * transfer * frames[g]);
        }
        coupling.push(row);
    }
    let pressure = Numbering::new(&mesh.base, r - 1);
    let pressure_basis = TriangleBasis::new(r - 1, equispaced_layout(r - 1))?;
    Ok(DofHandler {
        node_set,
        master,
        frames,
        coupling,
        velocity_basis,
        pressure,
        pressure_basis,
    })
}

impl DofHandler {
    pub fn new(mesh: &HighOrderMesh, r: usize, placement: Placement) -> Result<Self> {
        assign_master_elements(mesh, enumerate_nodes(mesh, r, placement)?)
    }

    pub fn r(&self) -> usize {
        self.node_set.r
    }

    pub fn placement(&self) -> Placement {
        self.node_set.placement
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.node_set.len()
    }

    pub fn n_pressure(&self) -> usize {
        self.pressure.count
    }

    /// Global velocity dof indices of element `k`, ordered `(node, component)`.
    pub fn velocity_dofs(&self, k: usize) -> Vec<usize> {
        self.node_set.numbering.l2g[k]
            .iter()
            .flat_map(|&g| [2 * g, 2 * g + 1])
            .collect()
    }

    pub fn pressure_dofs(&self, k: usize) -> &[usize] {
        &self.pressure.l2g[k]
    }

    /// Reference nodal values `v^(a^) = C_{a,K} g_a` on element `k`.
    pub fn reference_coefficients(&self, k: usize, coeffs: &[f64]) -> Vec<Vector2<f64>> {
        self.node_set.numbering.l2g[k]
            .iter()
            .zip(&self.coupling[k])
            .map(|(&g, c)| c * Vector2::new(coeffs[2 * g], coeffs[2 * g + 1]))
            .collect()
    }

    /// Physical value `F_a g_a` of node `a` on its master element.
    pub fn nodal_value(&self, node: usize, coeffs: &[f64]) -> Vec3 {
        self.frames[node] * Vector2::new(coeffs[2 * node], coeffs[2 * node + 1])
    }
}

/// Piola-mapped velocity field (or shape function) at one point.
#[derive(Debug, Clone, Copy)]
pub struct VelocityPoint {
    pub value: Vec3,
    /// Surface gradient `D_xhat(P w) G^{-1} J^T`.
    pub grad: Mat3,
}

/// `v = J w / sqrt(det G)` and its surface gradient from reference values
/// `w` and reference derivatives `dw = [d_1 w, d_2 w]`.
pub fn piola_field(m: &MapEval, w: Vector2<f64>, dw: [Vector2<f64>; 2]) -> VelocityPoint {
    let s = m.sqrt_det;
    let ds = m.sqrt_det_grad();
    let jw = m.jac * w;
    let mut cols = [Vec3::zeros(); 2];
    for (l, col) in cols.iter_mut().enumerate() {
        let djw = m.hess[l] * w[0] + m.hess[l + 1] * w[1];
        *col = (djw + m.jac * dw[l]) / s - jw * (ds[l] / (s * s));
    }
    let d = Matrix3x2::from_columns(&cols);
    VelocityPoint {
        value: jw / s,
        grad: d * m.metric_inv * m.jac.transpose(),
    }
}

/// The `2 n` reference-component velocity shape functions `P psi_i e_c`,
/// ordered `2 i + c`.
pub fn velocity_shapes(m: &MapEval, b: &BasisEval) -> Vec<VelocityPoint> {
    let mut out = Vec::with_capacity(2 * b.values.len());
    for (psi, g) in b.values.iter().zip(&b.grads) {
        for c in 0..2 {
            let e = if c == 0 { Vector2::x() } else { Vector2::y() };
            out.push(piola_field(m, e * *psi, [e * g[0], e * g[1]]));
        }
    }
    out
}

fn combine(b: &BasisEval, w: &[Vector2<f64>]) -> (Vector2<f64>, [Vector2<f64>; 2]) {
    let mut val = Vector2::zeros();
    let mut dw = [Vector2::zeros(); 2];
    for ((psi, g), wi) in b.values.iter().zip(&b.grads).zip(w) {
        val += wi * *psi;
        dw[0] += wi * g[0];
        dw[1] += wi * g[1];
    }
    (val, dw)
}

/// Value and surface gradient of `v_h` on element `k` at `xhat`.
pub fn evaluate_velocity(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    coeffs: &[f64],
    k: usize,
    xhat: [f64; 2],
) -> VelocityPoint {
    let m = mesh.eval(k, xhat);
    let b = handler.velocity_basis.eval(xhat);
    let w = handler.reference_coefficients(k, coeffs);
    let (val, dw) = combine(&b, &w);
    piola_field(&m, val, dw)
}

/// Nodal interpolant `g_a = F_a^T L_inv(K_a, a) u(p(a))` of a tangential
/// field on the exact surface.
pub fn interpolate_velocity(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    exact_u: impl Fn(&Vec3) -> Vec3,
) -> Result<Vec<f64>> {
    let mut coeffs = vec![0.0; handler.n_velocity()];
    for (a, node) in handler.node_set.nodes.iter().enumerate() {
        let (k, i) = node.incidences[0];
        let m = mesh.eval(k, handler.node_set.ref_nodes[i]);
        let tp = oracle.closest_point(&m.point)?;
        let g = GammaPiolaAtPoint::from_parts(&tp, &m.normal(), k)?;
        let local = handler.frames[a].transpose() * g.inverse(&exact_u(&tp.p));
        coeffs[2 * a] = local[0];
        coeffs[2 * a + 1] = local[1];
    }
    Ok(coeffs)
}

/// Value and surface gradient `J G^{-1} grad^ q` of a pressure field.
pub fn evaluate_pressure(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    coeffs: &[f64],
    k: usize,
    xhat: [f64; 2],
) -> (f64, Vec3) {
    let m = mesh.eval(k, xhat);
    let b = handler.pressure_basis.eval(xhat);
    let (mut val, mut g) = (0.0, [0.0; 2]);
    for (i, &dof) in handler.pressure.l2g[k].iter().enumerate() {
        val += coeffs[dof] * b.values[i];
        g[0] += coeffs[dof] * b.grads[i][0];
        g[1] += coeffs[dof] * b.grads[i][1];
    }
    (val, m.surface_gradient(g))
}

/// Pressure nodal interpolant of `q(p(x))`.
pub fn interpolate_pressure(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    exact_p: impl Fn(&Vec3) -> f64,
) -> Result<Vec<f64>> {
    let mut coeffs = vec![f64::NAN; handler.n_pressure()];
    let nodes = handler.pressure_basis.nodes();
    for (k, ids) in handler.pressure.l2g.iter().enumerate() {
        for (i, &g) in ids.iter().enumerate() {
            if coeffs[g].is_nan() {
                let x = mesh.eval(k, nodes[i]).point;
                coeffs[g] = exact_p(&oracle.closest_point(&x)?.p);
            }
        }
    }
    Ok(coeffs)
}

/// Outward reference normal of local edge `j` (not normalized for `j = 2`).
fn reference_edge_normal(j: usize) -> Vector2<f64> {
    let [a, b] = LOCAL_EDGES[j];
    let (pa, pb) = (REF_VERTICES[a], REF_VERTICES[b]);
    // the reference triangle is counter-clockwise, so the outward normal is
    // the edge tangent rotated clockwise
    Vector2::new(pb[1] - pa[1], -(pb[0] - pa[0]))
}

/// Unit outward co-normal of element `m` along local edge `j`.
pub fn conormal(m: &MapEval, j: usize) -> Vec3 {
    (m.jac * (m.metric_inv * reference_edge_normal(j))).normalize()
}

/// Reference point of global edge `e` at parameter `s` (lower to higher
/// vertex) as seen from triangle `t`, with the local edge index.
pub fn edge_point_in(mesh: &HighOrderMesh, t: usize, e: usize, s: f64) -> ([f64; 2], usize) {
    let (j, flip) = mesh.local_edge(t, e);
    (edge_point(j, if flip { 1.0 - s } else { s }), j)
}

fn conormal_jump(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    e: usize,
    s: f64,
    w: &[Vec<Vector2<f64>>; 2],
) -> (f64, f64) {
    let mut jump = 0.0;
    let mut speed = 0.0;
    for (side, &t) in mesh.base.edge_tris[e].iter().enumerate() {
        let (xhat, j) = edge_point_in(mesh, t, e, s);
        let m = mesh.eval(t, xhat);
        let b = handler.velocity_basis.eval(xhat);
        let (val, dw) = combine(&b, &w[side]);
        jump += piola_field(&m, val, dw).value.dot(&conormal(&m, j));
        if side == 0 {
            let p0 = edge_point_in(mesh, t, e, 0.0).0;
            let p1 = edge_point_in(mesh, t, e, 1.0).0;
            speed = (m.jac * Vector2::new(p1[0] - p0[0], p1[1] - p0[1])).norm();
        }
    }
    (jump, speed)
}

fn edge_coefficients(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    coeffs: &[f64],
    e: usize,
) -> [Vec<Vector2<f64>>; 2] {
    let [t0, t1] = mesh.base.edge_tris[e];
    [
        handler.reference_coefficients(t0, coeffs),
        handler.reference_coefficients(t1, coeffs),
    ]
}

/// `sum_e int_e |v_1 . n_1 + v_2 . n_2|^2` with the given rule on `[0, 1]`.
pub fn conormal_jump_sq(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    coeffs: &[f64],
    rule: &LineRule,
) -> f64 {
    (0..mesh.base.edges.len())
        .map(|e| {
            let w = edge_coefficients(handler, mesh, coeffs, e);
            rule.iter()
                .map(|(s, wq)| {
                    let (jump, speed) = conormal_jump(handler, mesh, e, s[0], &w);
                    wq * speed * jump * jump
                })
                .sum::<f64>()
        })
        .sum()
}

/// Largest co-normal jump over the velocity nodes on each edge (vertices
/// included).
pub fn nodal_conormal_jump_max(handler: &DofHandler, mesh: &HighOrderMesh, coeffs: &[f64]) -> f64 {
    let mut params = vec![0.0];
    params.extend_from_slice(&handler.node_set.edge_params);
    params.push(1.0);
    let mut worst = 0.0f64;
    for e in 0..mesh.base.edges.len() {
        let w = edge_coefficients(handler, mesh, coeffs, e);
        for &s in &params {
            worst = worst.max(conormal_jump(handler, mesh, e, s, &w).0.abs());
        }
    }
    worst
}

/// Number of velocity nodes for a mesh with the given entity counts.
pub fn expected_node_count(vertices: usize, edges: usize, triangles: usize, r: usize) -> usize {
    vertices + edges * (r - 1) + triangles * (dim_p(r) - 3 * r)
}
