//! Polyhedral base meshes and degree-`k` curved surface meshes.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix2, Matrix3x2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SurfaceOracle, Vec3};
use crate::quadrature::triangle_quadrature;
use crate::reference::{edge_point, equispaced_layout, BasisEval, TriangleBasis, LOCAL_EDGES};

/// Closed triangulated surface with global edge numbering.
///
/// Edges are stored as `[lo, hi]` with `lo < hi`; this is the canonical
/// orientation used for every edge-node parameterization.
#[derive(Debug, Clone)]
pub struct BaseMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    /// Global edge index of local edge `j` (see [`LOCAL_EDGES`]).
    pub tri_edges: Vec<[usize; 3]>,
    /// `true` when local edge `j` runs from the higher to the lower vertex.
    pub tri_edge_flip: Vec<[bool; 3]>,
    pub edge_tris: Vec<[usize; 2]>,
}

impl BaseMesh {
    pub fn from_triangles(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut edge_map: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_tris_raw: Vec<Vec<usize>> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        let mut tri_edge_flip = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len())
                || tri[0] == tri[1]
                || tri[1] == tri[2]
                || tri[0] == tri[2]
            {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has invalid vertices {tri:?}"
                )));
            }
            let mut te = [0; 3];
            let mut tf = [false; 3];
            for (j, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let (va, vb) = (tri[*a], tri[*b]);
                let key = [va.min(vb), va.max(vb)];
                let id = *edge_map.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_tris_raw.push(Vec::new());
                    edges.len() - 1
                });
                edge_tris_raw[id].push(t);
                te[j] = id;
                tf[j] = va > vb;
            }
            tri_edges.push(te);
            tri_edge_flip.push(tf);
        }
        let mut edge_tris = Vec::with_capacity(edges.len());
        for (e, tris) in edge_tris_raw.iter().enumerate() {
            if tris.len() != 2 {
                return Err(Error::InvalidMesh(format!(
                    "edge {:?} has {} incident triangles (closed manifold needs 2)",
                    edges[e],
                    tris.len()
                )));
            }
            edge_tris.push([tris[0], tris[1]]);
        }
        let mesh = Self {
            vertices,
            triangles,
            edges,
            tri_edges,
            tri_edge_flip,
            edge_tris,
        };
        let chi = mesh.euler_characteristic();
        if chi != 2 {
            return Err(Error::InvalidMesh(format!(
                "Euler characteristic {chi}, expected 2"
            )));
        }
        Ok(mesh)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    pub fn affine_point(&self, t: usize, xhat: [f64; 2]) -> Vec3 {
        let [a, b, c] = self.triangles[t];
        let (v0, v1, v2) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        v2 + (v0 - v2) * xhat[0] + (v1 - v2) * xhat[1]
    }

    /// Diameter of base triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let v = &self.vertices;
        (v[a] - v[b])
            .norm()
            .max((v[b] - v[c]).norm())
            .max((v[c] - v[a]).norm())
    }

    /// Global parameter (from lower to higher vertex) of the point at local
    /// parameter `t` on local edge `j` of triangle `tri`.
    pub fn global_edge_param(&self, tri: usize, j: usize, t: f64) -> f64 {
        if self.tri_edge_flip[tri][j] {
            1.0 - t
        } else {
            t
        }
    }

    /// Reorders triangles so the affine normal points away from the
    /// surface interior (positive alignment with the exact normal).
    pub fn orient_outward(&mut self, oracle: &SurfaceOracle) -> Result<()> {
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangles[t];
            let (v0, v1, v2) = (self.vertices[a], self.vertices[b], self.vertices[c]);
            let n = (v1 - v0).cross(&(v2 - v0));
            let centroid = (v0 + v1 + v2) / 3.0;
            let nu = oracle.closest_point(&centroid)?.nu;
            if n.dot(&nu) < 0.0 {
                self.triangles[t] = [a, c, b];
            }
        }
        let rebuilt = Self::from_triangles(
            std::mem::take(&mut self.vertices),
            std::mem::take(&mut self.triangles),
        )?;
        *self = rebuilt;
        Ok(())
    }

    /// Projects every vertex onto the surface.
    pub fn project(&mut self, oracle: &SurfaceOracle) -> Result<()> {
        for v in self.vertices.iter_mut() {
            *v = oracle.closest_point(v)?.p;
        }
        Ok(())
    }

    /// One level of 4-way midpoint subdivision; new vertices are projected
    /// onto the surface.
    pub fn refine(&self, oracle: &SurfaceOracle) -> Result<Self> {
        let mut vertices = self.vertices.clone();
        let nv = vertices.len();
        for [a, b] in &self.edges {
            let mid = 0.5 * (self.vertices[*a] + self.vertices[*b]);
            vertices.push(oracle.closest_point(&mid)?.p);
        }
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            // midpoint opposite local vertex j
            let m = self.tri_edges[t].map(|e| nv + e);
            let [v0, v1, v2] = *tri;
            triangles.push([v0, m[2], m[1]]);
            triangles.push([m[2], v1, m[0]]);
            triangles.push([m[1], m[0], v2]);
            triangles.push([m[0], m[1], m[2]]);
        }
        Self::from_triangles(vertices, triangles)
    }

    pub fn read_off(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse_off(std::io::BufReader::new(file))
    }

    pub fn parse_off(reader: impl BufRead) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        let bad = |msg: &str| Error::InvalidMesh(format!("OFF: {msg}"));
        if it.next().as_deref() != Some("OFF") {
            return Err(bad("missing `OFF` header"));
        }
        let mut next_num = |what: &str| -> Result<String> {
            it.next()
                .ok_or_else(|| bad(&format!("unexpected end of file reading {what}")))
        };
        let parse_usize = |s: String| s.parse::<usize>().map_err(|e| bad(&e.to_string()));
        let nv = parse_usize(next_num("counts")?)?;
        let nf = parse_usize(next_num("counts")?)?;
        let _ne = next_num("counts")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut c = [0.0; 3];
            for slot in c.iter_mut() {
                *slot = next_num("vertex")?
                    .parse::<f64>()
                    .map_err(|e| bad(&e.to_string()))?;
            }
            vertices.push(Vec3::new(c[0], c[1], c[2]));
        }
        let mut triangles = Vec::with_capacity(nf);
        for f in 0..nf {
            let n = parse_usize(next_num("face")?)?;
            if n != 3 {
                return Err(bad(&format!(
                    "face {f} has {n} vertices; only triangles are supported"
                )));
            }
            let mut tri = [0; 3];
            for slot in tri.iter_mut() {
                *slot = parse_usize(next_num("face")?)?;
            }
            triangles.push(tri);
        }
        Self::from_triangles(vertices, triangles)
    }

    pub fn write_off(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "OFF")?;
        writeln!(
            w,
            "{} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.edges.len()
        )?;
        for v in &self.vertices {
            writeln!(w, "{:?} {:?} {:?}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = 0.5 * (1.0 + 5f64.sqrt());
    let vertices = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, faces)
}

/// Icosahedron refined `level` times on the unit sphere, then mapped onto
/// the surface (radial scaling followed by closest point projection).
pub fn build_icosphere_base(oracle: &SurfaceOracle, level: usize) -> Result<BaseMesh> {
    let (verts, faces) = icosahedron();
    let unit = SurfaceOracle::new(crate::geometry::Surface::Sphere { radius: 1.0 });
    let vertices = verts.iter().map(|v| v.normalize()).collect();
    let mut mesh = BaseMesh::from_triangles(vertices, faces)?;
    mesh.orient_outward(&unit)?;
    for _ in 0..level {
        mesh = mesh.refine(&unit)?;
    }
    for v in mesh.vertices.iter_mut() {
        *v = oracle
            .closest_point(&oracle.surface.radial_projection(v))?
            .p;
    }
    Ok(mesh)
}

/// Degree-`k` polynomial map `a_K` of the reference triangle, stored by its
/// values at the equispaced degree-`k` nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementMap {
    pub k: usize,
    pub coeffs: Vec<[f64; 3]>,
}

/// Point, Jacobian, metric and second derivatives of `a_K` at one point.
#[derive(Debug, Clone, Copy)]
pub struct MapEval {
    pub point: Vec3,
    pub jac: Matrix3x2<f64>,
    pub metric: Matrix2<f64>,
    pub metric_inv: Matrix2<f64>,
    pub sqrt_det: f64,
    /// Second derivatives `[xx, xy, yy]`.
    pub hess: [Vec3; 3],
}

impl MapEval {
    /// Unit normal `J_1 x J_2 / |J_1 x J_2|`.
    pub fn normal(&self) -> Vec3 {
        self.jac.column(0).cross(&self.jac.column(1)).normalize()
    }

    /// `d sqrt(det G) / d xhat_l` for `l = 0, 1`.
    pub fn sqrt_det_grad(&self) -> [f64; 2] {
        let d = [[self.hess[0], self.hess[1]], [self.hess[1], self.hess[2]]];
        let mut out = [0.0; 2];
        for (l, slot) in out.iter_mut().enumerate() {
            let dj = Matrix3x2::from_columns(&[d[l][0], d[l][1]]);
            let dg = dj.transpose() * self.jac + self.jac.transpose() * dj;
            *slot = 0.5 * self.sqrt_det * (self.metric_inv * dg).trace();
        }
        out
    }

    /// Surface gradient `J G^{-1} grad^` of a scalar with reference gradient `g`.
    pub fn surface_gradient(&self, g: [f64; 2]) -> Vec3 {
        self.jac * (self.metric_inv * nalgebra::Vector2::new(g[0], g[1]))
    }
}

/// The curved surface `Gamma_{h,k}` with one [`ElementMap`] per base triangle.
#[derive(Debug, Clone)]
pub struct HighOrderMesh {
    pub base: BaseMesh,
    pub k: usize,
    pub maps: Vec<ElementMap>,
    pub h_max: f64,
    pub h_min: f64,
    basis: TriangleBasis,
}

/// Lagrange interpolation of the closest point projection on each base
/// triangle at the equispaced degree-`k` nodes. Shared edge nodes are computed
/// from the global edge orientation so adjacent elements use bitwise equal
/// node values.
pub fn build_high_order_mesh(
    base: BaseMesh,
    oracle: &SurfaceOracle,
    k: usize,
) -> Result<HighOrderMesh> {
    if k == 0 {
        return Err(Error::UnsupportedDegree {
            what: "geometry",
            degree: k,
        });
    }
    let basis = TriangleBasis::equispaced(k);
    let ref_nodes = equispaced_layout(k);
    let params = crate::reference::equispaced_params(k);
    let n_edge = params.len();
    let mut edge_nodes: Vec<Vec<Vec3>> = Vec::with_capacity(base.edges.len());
    for [lo, hi] in &base.edges {
        let (a, b) = (base.vertices[*lo], base.vertices[*hi]);
        let pts = params
            .iter()
            .map(|&s| oracle.closest_point(&(a + (b - a) * s)).map(|tp| tp.p))
            .collect::<Result<Vec<_>>>()?;
        edge_nodes.push(pts);
    }
    let mut maps = Vec::with_capacity(base.triangles.len());
    for (t, tri) in base.triangles.iter().enumerate() {
        let mut coeffs = Vec::with_capacity(ref_nodes.len());
        for &v in tri {
            let p = base.vertices[v];
            coeffs.push([p[0], p[1], p[2]]);
        }
        for j in 0..3 {
            let e = base.tri_edges[t][j];
            for m in 0..n_edge {
                let idx = if base.tri_edge_flip[t][j] {
                    n_edge - 1 - m
                } else {
                    m
                };
                let p = edge_nodes[e][idx];
                coeffs.push([p[0], p[1], p[2]]);
            }
        }
        for xhat in &ref_nodes[3 + 3 * n_edge..] {
            let p = oracle.closest_point(&base.affine_point(t, *xhat))?.p;
            coeffs.push([p[0], p[1], p[2]]);
        }
        maps.push(ElementMap { k, coeffs });
    }
    let (mut h_max, mut h_min) = (0.0f64, f64::INFINITY);
    for t in 0..base.triangles.len() {
        let h = base.diameter(t);
        h_max = h_max.max(h);
        h_min = h_min.min(h);
    }
    let mesh = HighOrderMesh {
        base,
        k,
        maps,
        h_max,
        h_min,
        basis,
    };
    mesh.check_nondegenerate()?;
    Ok(mesh)
}

impl HighOrderMesh {
    pub fn n_elements(&self) -> usize {
        self.maps.len()
    }

    pub fn geometry_basis(&self) -> &TriangleBasis {
        &self.basis
    }

    /// Evaluates `a_K` with a basis tabulated at the point.
    pub fn eval_tabulated(&self, element: usize, b: &BasisEval) -> MapEval {
        let coeffs = &self.maps[element].coeffs;
        let mut point = Vec3::zeros();
        let mut d1 = Vec3::zeros();
        let mut d2 = Vec3::zeros();
        let mut hess = [Vec3::zeros(); 3];
        for (i, c) in coeffs.iter().enumerate() {
            let c = Vec3::new(c[0], c[1], c[2]);
            point += c * b.values[i];
            d1 += c * b.grads[i][0];
            d2 += c * b.grads[i][1];
            for (h, bh) in hess.iter_mut().zip(b.hessians[i]) {
                *h += c * bh;
            }
        }
        let jac = Matrix3x2::from_columns(&[d1, d2]);
        let metric = jac.transpose() * jac;
        let det = metric.determinant();
        let metric_inv = Matrix2::new(
            metric[(1, 1)],
            -metric[(0, 1)],
            -metric[(1, 0)],
            metric[(0, 0)],
        ) / det;
        MapEval {
            point,
            jac,
            metric,
            metric_inv,
            sqrt_det: det.max(0.0).sqrt(),
            hess,
        }
    }

    pub fn eval(&self, element: usize, xhat: [f64; 2]) -> MapEval {
        self.eval_tabulated(element, &self.basis.eval(xhat))
    }

    fn check_nondegenerate(&self) -> Result<()> {
        let rule = triangle_quadrature((2 * self.k).max(2))?;
        let tab = self.basis.tabulate(&rule.points);
        for t in 0..self.n_elements() {
            let [a, b, c] = self.base.triangles[t];
            let v = &self.base.vertices;
            let base_normal = (v[b] - v[a]).cross(&(v[c] - v[a]));
            for bq in &tab {
                let m = self.eval_tabulated(t, bq);
                let det = m.metric.determinant();
                let cross = m.jac.column(0).cross(&m.jac.column(1));
                if !(det > 0.0) || cross.dot(&base_normal) <= 0.0 {
                    return Err(Error::DegenerateElement {
                        element: t,
                        value: det,
                    });
                }
            }
        }
        Ok(())
    }

    /// Point on global edge `e` at parameter `s` (lower to higher vertex),
    /// evaluated through the first incident element, together with that
    /// element's local data.
    pub fn edge_point(&self, e: usize, s: f64) -> (usize, [f64; 2]) {
        let t = self.base.edge_tris[e][0];
        let (j, flip) = self.local_edge(t, e);
        let local = if flip { 1.0 - s } else { s };
        (t, edge_point(j, local))
    }

    /// Local index and orientation flag of global edge `e` in triangle `t`.
    pub fn local_edge(&self, t: usize, e: usize) -> (usize, bool) {
        let j = self.base.tri_edges[t]
            .iter()
            .position(|&x| x == e)
            .expect("edge not incident to triangle");
        (j, self.base.tri_edge_flip[t][j])
    }
}

/// Mesh size and shape statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshStatistics {
    pub h_max: f64,
    pub h_min: f64,
    /// Extremes of `det(G) / h_K^4` over quadrature points.
    pub shape_min: f64,
    pub shape_max: f64,
}

pub fn mesh_statistics(mesh: &HighOrderMesh) -> MeshStatistics {
    let rule = triangle_quadrature((2 * mesh.k).max(2)).expect("supported degree");
    let tab = mesh.geometry_basis().tabulate(&rule.points);
    let (mut shape_min, mut shape_max) = (f64::INFINITY, 0.0f64);
    for t in 0..mesh.n_elements() {
        let h4 = mesh.base.diameter(t).powi(4);
        for b in &tab {
            let r = mesh.eval_tabulated(t, b).metric.determinant() / h4;
            shape_min = shape_min.min(r);
            shape_max = shape_max.max(r);
        }
    }
    MeshStatistics {
        h_max: mesh.h_max,
        h_min: mesh.h_min,
        shape_min,
        shape_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;

    fn sphere() -> SurfaceOracle {
        SurfaceOracle::new(Surface::Sphere { radius: 1.0 })
    }

    fn ellipsoid() -> SurfaceOracle {
        SurfaceOracle::new(Surface::Ellipsoid {
            axes: [1.1, 1.2, 1.3],
        })
    }

    #[test]
    fn icosphere_counts() {
        let m = build_icosphere_base(&sphere(), 0).unwrap();
        assert_eq!(
            (m.vertices.len(), m.triangles.len(), m.edges.len()),
            (12, 20, 30)
        );
        let m = build_icosphere_base(&sphere(), 2).unwrap();
        assert_eq!(m.triangles.len(), 320);
        for level in 0..4 {
            let m = build_icosphere_base(&ellipsoid(), level).unwrap();
            assert_eq!(m.euler_characteristic(), 2);
            assert_eq!(m.triangles.len(), 20 * 4usize.pow(level as u32));
            assert!(m.edge_tris.iter().all(|[a, b]| a != b));
        }
    }

    #[test]
    fn icosphere_vertices_on_surface_and_outward() {
        let o = ellipsoid();
        let m = build_icosphere_base(&o, 1).unwrap();
        for v in &m.vertices {
            assert!(o.surface.level_set(v).abs() <= 1e-12);
        }
        let s = sphere();
        let m = build_icosphere_base(&s, 1).unwrap();
        for v in &m.vertices {
            assert!(s.surface.level_set(v).abs() <= 1e-12);
        }
        for t in 0..m.triangles.len() {
            let c = m.affine_point(t, [1.0 / 3.0, 1.0 / 3.0]);
            let [a, b, d] = m.triangles[t];
            let n = (m.vertices[b] - m.vertices[a]).cross(&(m.vertices[d] - m.vertices[a]));
            assert!(n.dot(&c) > 0.0);
        }
    }

    #[test]
    fn affine_geometry_for_k1() {
        let o = ellipsoid();
        let base = build_icosphere_base(&o, 1).unwrap();
        let mesh = build_high_order_mesh(base, &o, 1).unwrap();
        for t in 0..mesh.n_elements() {
            let j0 = mesh.eval(t, [0.1, 0.2]).jac;
            let j1 = mesh.eval(t, [0.6, 0.3]).jac;
            assert!((j0 - j1).abs().max() < 1e-14);
            for xhat in [[0.1, 0.2], [0.25, 0.5]] {
                let a = mesh.eval(t, xhat).point;
                assert!((a - mesh.base.affine_point(t, xhat)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn affine_map_metric() {
        let h = 0.3;
        let verts = vec![
            Vec3::new(h, 0.0, 0.0),
            Vec3::new(0.0, h, 0.0),
            Vec3::zeros(),
        ];
        let map = ElementMap {
            k: 1,
            coeffs: verts.iter().map(|v| [v[0], v[1], v[2]]).collect(),
        };
        let basis = TriangleBasis::equispaced(1);
        let mesh = HighOrderMesh {
            base: BaseMesh {
                vertices: verts,
                triangles: vec![[0, 1, 2]],
                edges: vec![],
                tri_edges: vec![],
                tri_edge_flip: vec![],
                edge_tris: vec![],
            },
            k: 1,
            maps: vec![map],
            h_max: h,
            h_min: h,
            basis,
        };
        let m = mesh.eval(0, [0.2, 0.2]);
        assert!((m.metric - Matrix2::identity() * h * h).abs().max() < 1e-15);
        assert!((m.sqrt_det - h * h).abs() < 1e-15);
    }

    #[test]
    fn vertices_are_interpolated_and_edges_agree() {
        let o = ellipsoid();
        let base = build_icosphere_base(&o, 1).unwrap();
        for k in 1..=4 {
            let mesh = build_high_order_mesh(base.clone(), &o, k).unwrap();
            for t in 0..mesh.n_elements() {
                for (i, v) in mesh.base.triangles[t].iter().enumerate() {
                    let a = mesh.eval(t, crate::reference::REF_VERTICES[i]).point;
                    assert!((a - mesh.base.vertices[*v]).norm() < 1e-13);
                }
            }
            for (e, [t0, t1]) in mesh.base.edge_tris.iter().enumerate() {
                let (j0, f0) = mesh.local_edge(*t0, e);
                let (j1, f1) = mesh.local_edge(*t1, e);
                for s in [0.1, 0.3, 0.5, 0.77, 0.9] {
                    let x0 = mesh
                        .eval(*t0, edge_point(j0, if f0 { 1.0 - s } else { s }))
                        .point;
                    let x1 = mesh
                        .eval(*t1, edge_point(j1, if f1 { 1.0 - s } else { s }))
                        .point;
                    assert!((x0 - x1).norm() < 1e-12, "k={k} edge {e}");
                }
            }
        }
    }

    // Central differences of a_K give an independent check of the Jacobian
    // and the area element.
    #[test]
    fn curved_jacobian_matches_finite_differences() {
        let o = sphere();
        let base = build_icosphere_base(&o, 1).unwrap();
        let mesh = build_high_order_mesh(base, &o, 2).unwrap();
        let eps = 1e-5;
        for t in [0, 17, 55] {
            let x = [0.3, 0.25];
            let m = mesh.eval(t, x);
            let d1 = (mesh.eval(t, [x[0] + eps, x[1]]).point
                - mesh.eval(t, [x[0] - eps, x[1]]).point)
                / (2.0 * eps);
            let d2 = (mesh.eval(t, [x[0], x[1] + eps]).point
                - mesh.eval(t, [x[0], x[1] - eps]).point)
                / (2.0 * eps);
            assert!((d1 - m.jac.column(0)).norm() < 1e-9);
            assert!((d2 - m.jac.column(1)).norm() < 1e-9);
            assert!((d1.cross(&d2).norm() - m.sqrt_det).abs() < 1e-9);
            let g = m.sqrt_det_grad();
            let s = |y: [f64; 2]| mesh.eval(t, y).sqrt_det;
            let g0 = (s([x[0] + eps, x[1]]) - s([x[0] - eps, x[1]])) / (2.0 * eps);
            let g1 = (s([x[0], x[1] + eps]) - s([x[0], x[1] - eps])) / (2.0 * eps);
            assert!((g0 - g[0]).abs() < 1e-8 && (g1 - g[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn statistics_quasi_uniform_and_halving() {
        let o = sphere();
        let mut prev: Option<f64> = None;
        for level in 0..4 {
            let base = build_icosphere_base(&o, level).unwrap();
            let mesh = build_high_order_mesh(base, &o, 2).unwrap();
            let st = mesh_statistics(&mesh);
            assert!(st.h_max / st.h_min <= 1.5, "level {level}: {st:?}");
            assert!(st.shape_min > 0.0);
            if level == 0 {
                // all icosahedron edges project to the same chord length
                let phi: f64 = 0.5 * (1.0 + 5f64.sqrt());
                let chord = 2.0 / (1.0 + phi * phi).sqrt();
                assert!((st.h_max - chord).abs() < 1e-12);
            }
            if let Some(p) = prev {
                assert!((st.h_max / p - 0.5).abs() <= 0.1);
            }
            prev = Some(st.h_max);
        }
    }

    #[test]
    fn off_round_trip_and_errors() {
        let o = ellipsoid();
        let m = build_icosphere_base(&o, 1).unwrap();
        let mut buf = Vec::new();
        m.write_off(&mut buf).unwrap();
        let back = BaseMesh::parse_off(&buf[..]).unwrap();
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.vertices, m.vertices);
        assert!(
            BaseMesh::parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n".as_bytes()).is_err()
        );
        assert!(BaseMesh::parse_off("PLY\n".as_bytes()).is_err());
        assert!(BaseMesh::parse_off(
            "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n4 0 1 2 3\n".as_bytes()
        )
        .is_err());
    }

    #[test]
    fn orient_outward_fixes_flipped_faces() {
        let o = sphere();
        let mut m = build_icosphere_base(&o, 0).unwrap();
        let reference = m.triangles.clone();
        m.triangles[3] = [reference[3][0], reference[3][2], reference[3][1]];
        m.orient_outward(&o).unwrap();
        for t in 0..m.triangles.len() {
            let [a, b, c] = m.triangles[t];
            let n = (m.vertices[b] - m.vertices[a]).cross(&(m.vertices[c] - m.vertices[a]));
            assert!(n.dot(&m.affine_point(t, [1.0 / 3.0, 1.0 / 3.0])) > 0.0);
        }
    }
}
