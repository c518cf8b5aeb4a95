//! Convergence studies and diagnostic probes.

use std::path::PathBuf;
use std::time::Instant;

use rand::{rngs::StdRng, Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_pressure_mass, assemble_system, assemble_velocity_h1, default_quad_degree, ZeroData,
};
use crate::error::{Error, Result};
use crate::geometry::{Surface, SurfaceOracle, Vec3};
use crate::manufactured::build_exact_solution;
use crate::mesh::{build_high_order_mesh, build_icosphere_base, BaseMesh, HighOrderMesh};
use crate::postprocess::{
    default_error_quad_degree, eoc, error_norms, fill_eocs, ConvergenceRecord,
};
use crate::quadrature::{gauss_legendre, triangle_quadrature};
use crate::reference::{edge_point, LOCAL_EDGES};
use crate::solver::{estimate_infsup, solve_saddle};
use crate::spaces::{
    conormal_jump_sq, evaluate_velocity, nodal_conormal_jump_max, tangent_frame, DofHandler,
    Placement,
};
use crate::transforms::{node_transfer_matrix, GammaPiolaAtPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub surface: Surface,
    pub r: usize,
    pub k: usize,
    pub placement: Placement,
    /// Inclusive range of refinement levels.
    pub levels: (usize, usize),
    /// Assembly quadrature degree; defaults to `2r + 2`.
    pub quad_degree: Option<usize>,
    /// Error quadrature degree; defaults to `2r + 4`.
    pub error_quad_degree: Option<usize>,
    /// Coarse mesh refined `level` times instead of the icosphere.
    pub base_mesh: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            surface: Surface::Ellipsoid {
                axes: [1.1, 1.2, 1.3],
            },
            r: 2,
            k: 2,
            placement: Placement::GaussLobatto,
            levels: (1, 4),
            quad_degree: None,
            error_quad_degree: None,
            base_mesh: None,
        }
    }
}

impl StudyConfig {
    pub fn oracle(&self) -> SurfaceOracle {
        SurfaceOracle::new(self.surface)
    }

    pub fn quad_degree(&self) -> usize {
        self.quad_degree
            .unwrap_or_else(|| default_quad_degree(self.r))
    }

    pub fn error_quad_degree(&self) -> usize {
        self.error_quad_degree
            .unwrap_or_else(|| default_error_quad_degree(self.r))
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::UnsupportedDegree {
                what: "velocity space",
                degree: self.r,
            });
        }
        if self.k == 0 {
            return Err(Error::UnsupportedDegree {
                what: "geometry",
                degree: self.k,
            });
        }
        if self.levels.0 > self.levels.1 {
            return Err(Error::InvalidMesh(format!(
                "empty level range {}:{}",
                self.levels.0, self.levels.1
            )));
        }
        Ok(())
    }

    pub fn base_mesh_at(&self, oracle: &SurfaceOracle, level: usize) -> Result<BaseMesh> {
        match &self.base_mesh {
            None => build_icosphere_base(oracle, level),
            Some(path) => {
                let mut mesh = BaseMesh::read_off(path)?;
                mesh.project(oracle)?;
                mesh.orient_outward(oracle)?;
                for _ in 0..level {
                    mesh = mesh.refine(oracle)?;
                }
                Ok(mesh)
            }
        }
    }

    pub fn mesh_at(&self, oracle: &SurfaceOracle, level: usize) -> Result<HighOrderMesh> {
        build_high_order_mesh(self.base_mesh_at(oracle, level)?, oracle, self.k)
    }
}

/// Solves the manufactured problem on one level and measures the errors.
pub fn run_level(config: &StudyConfig, level: usize) -> Result<ConvergenceRecord> {
    let oracle = config.oracle();
    let exact = build_exact_solution(&oracle)?;
    let mesh = config.mesh_at(&oracle, level)?;
    let handler = DofHandler::new(&mesh, config.r, config.placement)?;
    let start = Instant::now();
    let system = assemble_system(&mesh, &oracle, &handler, &exact, config.quad_degree())?;
    let solution = solve_saddle(&system)?;
    let elapsed = start.elapsed().as_secs_f64();
    let norms = error_norms(
        &mesh,
        &oracle,
        &handler,
        &solution.u,
        &solution.p,
        &exact,
        config.error_quad_degree(),
    )?;
    Ok(ConvergenceRecord::new(
        level,
        mesh.h_max,
        handler.n_velocity() + handler.n_pressure(),
        &norms,
        elapsed,
    ))
}

/// Runs every level of the study and fills in the convergence rates.
pub fn run_study(config: &StudyConfig) -> Result<Vec<ConvergenceRecord>> {
    config.validate()?;
    let mut records = (config.levels.0..=config.levels.1)
        .map(|level| run_level(config, level))
        .collect::<Result<Vec<_>>>()?;
    fill_eocs(&mut records)?;
    Ok(records)
}

/// Largest deviations of the curved surface from the exact one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricErrors {
    pub level: usize,
    pub h: f64,
    /// `max |nu - nu_h|`.
    pub normal: f64,
    /// `max |d|` on the curved surface.
    pub distance: f64,
    /// `max |mu_h - 1|`.
    pub area_factor: f64,
}

/// Samples each element at the points of a degree-`2k + 2` rule and along
/// its edges.
pub fn geometric_errors(
    oracle: &SurfaceOracle,
    mesh: &HighOrderMesh,
    level: usize,
) -> Result<GeometricErrors> {
    let mut pts = triangle_quadrature(2 * mesh.k + 2)?.points;
    for j in 0..LOCAL_EDGES.len() {
        pts.extend([0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&t| edge_point(j, t)));
    }
    let mut out = GeometricErrors {
        level,
        h: mesh.h_max,
        normal: 0.0,
        distance: 0.0,
        area_factor: 0.0,
    };
    for t in 0..mesh.n_elements() {
        for x in &pts {
            let me = mesh.eval(t, *x);
            let tp = oracle.closest_point(&me.point)?;
            let nu_h = me.normal();
            let mu = GammaPiolaAtPoint::from_parts(&tp, &nu_h, t)?.mu_h;
            out.normal = out.normal.max((tp.nu - nu_h).norm());
            out.distance = out.distance.max(tp.d.abs());
            out.area_factor = out.area_factor.max((mu - 1.0).abs());
        }
    }
    Ok(out)
}

pub fn geometric_decay(config: &StudyConfig) -> Result<Vec<GeometricErrors>> {
    let oracle = config.oracle();
    (config.levels.0..=config.levels.1)
        .map(|level| geometric_errors(&oracle, &config.mesh_at(&oracle, level)?, level))
        .collect()
}

/// Rates of the three geometric error columns.
pub fn geometric_rates(errors: &[GeometricErrors]) -> Result<[Vec<f64>; 3]> {
    let col = |f: fn(&GeometricErrors) -> f64| {
        eoc(&errors.iter().map(|e| (e.h, f(e))).collect::<Vec<_>>())
    };
    Ok([
        col(|e| e.normal)?,
        col(|e| e.distance)?,
        col(|e| e.area_factor)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformityReport {
    pub samples: usize,
    /// `max (sum_e int_e |[v . n]|^2)^{1/2} / |v|_{L2}` over the samples.
    pub max_relative_jump: f64,
    /// Largest nodal co-normal jump for coefficients in `[-1, 1]`.
    pub max_nodal_jump: f64,
}

fn velocity_l2(handler: &DofHandler, mesh: &HighOrderMesh, coeffs: &[f64]) -> Result<f64> {
    let rule = triangle_quadrature(2 * handler.r())?;
    let mut s = 0.0;
    for k in 0..mesh.n_elements() {
        for (x, w) in rule.iter() {
            let me = mesh.eval(k, *x);
            s += w
                * me.sqrt_det
                * evaluate_velocity(handler, mesh, coeffs, k, *x)
                    .value
                    .norm_squared();
        }
    }
    Ok(s.sqrt())
}

/// Co-normal continuity of random members of the velocity space.
pub fn conformity(
    handler: &DofHandler,
    mesh: &HighOrderMesh,
    samples: usize,
    seed: u64,
) -> Result<ConformityReport> {
    let rule = gauss_legendre(handler.r() + mesh.k + 2);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = ConformityReport {
        samples,
        max_relative_jump: 0.0,
        max_nodal_jump: 0.0,
    };
    for _ in 0..samples {
        let v: Vec<f64> = (0..handler.n_velocity())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let jump = conormal_jump_sq(handler, mesh, &v, &rule).sqrt();
        report.max_relative_jump = report
            .max_relative_jump
            .max(jump / velocity_l2(handler, mesh, &v)?);
        report.max_nodal_jump = report
            .max_nodal_jump
            .max(nodal_conormal_jump_max(handler, mesh, &v));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfSupSample {
    pub level: usize,
    pub h: f64,
    pub beta: f64,
}

/// Discrete inf-sup constant on each level of the configuration.
pub fn infsup_study(config: &StudyConfig) -> Result<Vec<InfSupSample>> {
    let oracle = config.oracle();
    (config.levels.0..=config.levels.1)
        .map(|level| {
            let mesh = config.mesh_at(&oracle, level)?;
            let handler = DofHandler::new(&mesh, config.r, config.placement)?;
            let q = config.quad_degree();
            let system = assemble_system(&mesh, &oracle, &handler, &ZeroData, q)?;
            let h1 = assemble_velocity_h1(&mesh, &handler, q)?;
            let mass = assemble_pressure_mass(&mesh, &handler, q)?;
            Ok(InfSupSample {
                level,
                h: mesh.h_max,
                beta: estimate_infsup(&system.b, &h1, &mass)?,
            })
        })
        .collect()
}

/// `max |L_inv^K(a) w - M_a^K L_inv^{K_a}(a) w|` over velocity nodes `a`,
/// elements `K` containing them and unit tangent vectors `w` of the exact
/// surface at `p(a)`.
pub fn node_transfer_deviation(
    oracle: &SurfaceOracle,
    mesh: &HighOrderMesh,
    handler: &DofHandler,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for node in &handler.node_set.nodes {
        if node.incidences.len() < 2 {
            continue;
        }
        let (ka, ia) = node.incidences[0];
        let ma = mesh.eval(ka, handler.node_set.ref_nodes[ia]);
        let tp = oracle.closest_point(&ma.point)?;
        let frame = tangent_frame(&tp.nu);
        let nu_a = ma.normal();
        let ga = GammaPiolaAtPoint::from_parts(&tp, &nu_a, ka)?;
        for &(k, i) in &node.incidences[1..] {
            let mk = mesh.eval(k, handler.node_set.ref_nodes[i]);
            let tpk = oracle.closest_point(&mk.point)?;
            let gk = GammaPiolaAtPoint::from_parts(&tpk, &mk.normal(), k)?;
            let transfer = node_transfer_matrix(&nu_a, &mk.normal())?;
            for c in 0..2 {
                let w: Vec3 = frame.column(c).into_owned();
                let dev = (gk.inverse(&w) - transfer * ga.inverse(&w)).norm();
                worst = worst.max(dev);
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTransferSample {
    pub level: usize,
    pub h: f64,
    pub deviation: f64,
}

pub fn node_transfer_study(config: &StudyConfig) -> Result<Vec<NodeTransferSample>> {
    let oracle = config.oracle();
    (config.levels.0..=config.levels.1)
        .map(|level| {
            let mesh = config.mesh_at(&oracle, level)?;
            let handler = DofHandler::new(&mesh, config.r, config.placement)?;
            Ok(NodeTransferSample {
                level,
                h: mesh.h_max,
                deviation: node_transfer_deviation(&oracle, &mesh, &handler)?,
            })
        })
        .collect()
}

/// Everything reported by the diagnostics run of the command-line driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub geometric: Vec<GeometricErrors>,
    pub conformity: Vec<(usize, ConformityReport)>,
    pub infsup: Vec<InfSupSample>,
    pub node_transfer: Vec<NodeTransferSample>,
}

/// Runs all probes on the configured levels. The inf-sup estimate uses dense
/// linear algebra and is limited to levels with at most `infsup_max_dofs`
/// velocity unknowns.
pub fn run_diagnostics(config: &StudyConfig, infsup_max_dofs: usize) -> Result<Diagnostics> {
    config.validate()?;
    let oracle = config.oracle();
    let mut conformity_reports = Vec::new();
    let mut infsup_levels = Vec::new();
    for level in config.levels.0..=config.levels.1 {
        let mesh = config.mesh_at(&oracle, level)?;
        let handler = DofHandler::new(&mesh, config.r, config.placement)?;
        conformity_reports.push((level, conformity(&handler, &mesh, 20, level as u64)?));
        if handler.n_velocity() <= infsup_max_dofs {
            infsup_levels.push(level);
        }
    }
    let infsup = match (infsup_levels.first(), infsup_levels.last()) {
        (Some(&a), Some(&b)) => infsup_study(&StudyConfig {
            levels: (a, b),
            ..config.clone()
        })?,
        _ => Vec::new(),
    };
    Ok(Diagnostics {
        geometric: geometric_decay(config)?,
        conformity: conformity_reports,
        infsup,
        node_transfer: node_transfer_study(config)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_errors_shrink_at_the_expected_rates() {
        for k in 1..=3 {
            let config = StudyConfig {
                k,
                levels: (2, 4),
                ..StudyConfig::default()
            };
            let errors = geometric_decay(&config).unwrap();
            let [nu, d, mu] = geometric_rates(&errors).unwrap();
            let last = nu.len() - 1;
            assert!((nu[last] - k as f64).abs() < 0.25, "k={k} {nu:?}");
            assert!((d[last] - (k + 1) as f64).abs() < 0.25, "k={k} {d:?}");
            assert!((mu[last] - (k + 1) as f64).abs() < 0.25, "k={k} {mu:?}");
        }
    }

    #[test]
    fn off_base_mesh_matches_icosphere() {
        let config = StudyConfig::default();
        let o = config.oracle();
        let base = build_icosphere_base(&o, 0).unwrap();
        let path = std::env::temp_dir().join(format!("surfstokes-base-{}.off", std::process::id()));
        base.write_off(std::fs::File::create(&path).unwrap())
            .unwrap();
        let from_file = StudyConfig {
            base_mesh: Some(path.clone()),
            ..config.clone()
        };
        let a = from_file.base_mesh_at(&o, 1).unwrap();
        let b = config.base_mesh_at(&o, 1).unwrap();
        assert_eq!(a.triangles.len(), b.triangles.len());
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn study_validation() {
        let bad = StudyConfig {
            r: 1,
            ..StudyConfig::default()
        };
        assert!(run_study(&bad).is_err());
        let empty = StudyConfig {
            levels: (3, 2),
            ..StudyConfig::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn short_study_produces_rates() {
        let config = StudyConfig {
            levels: (1, 2),
            ..StudyConfig::default()
        };
        let records = run_study(&config).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[0].energy_eoc.is_none());
        let rate = records[1].energy_eoc.unwrap();
        assert!(rate > 1.0, "{rate}");
        assert!(records[1].energy_error < records[0].energy_error);
    }
}
