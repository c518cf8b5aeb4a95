//! Discretization errors on the curved surface, convergence rates and
//! CSV / JSON output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3x2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::ZeroData;
use crate::error::{Error, Result};
use crate::geometry::{Mat3, SurfaceOracle, Vec3};
use crate::manufactured::ExactSolution;
use crate::mesh::HighOrderMesh;
use crate::quadrature::triangle_quadrature;
use crate::spaces::{evaluate_pressure, evaluate_velocity, DofHandler, Placement};
use crate::transforms::GammaPiolaAtPoint;

/// Exact velocity and pressure on the surface.
pub trait ExactFields: Sync {
    fn u(&self, y: &Vec3) -> Vec3;
    fn p(&self, y: &Vec3) -> f64;
}

impl ExactFields for ExactSolution {
    fn u(&self, y: &Vec3) -> Vec3 {
        ExactSolution::u(self, y)
    }

    fn p(&self, y: &Vec3) -> f64 {
        ExactSolution::p(self, y)
    }
}

impl ExactFields for ZeroData {
    fn u(&self, _: &Vec3) -> Vec3 {
        Vec3::zeros()
    }

    fn p(&self, _: &Vec3) -> f64 {
        0.0
    }
}

pub fn default_error_quad_degree(r: usize) -> usize {
    2 * r + 4
}

/// Reference step of the finite differences of the pulled-back velocity.
const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// Broken `H^1` seminorm of the velocity error.
    pub h1_seminorm: f64,
    pub l2_velocity: f64,
    /// `L^2` pressure error with the mean of the difference removed.
    pub l2_pressure: f64,
}

impl ErrorNorms {
    pub fn energy(&self) -> f64 {
        self.h1_seminorm + self.l2_pressure
    }
}

/// Pull-back `u_breve(x) = L_inv(x) u(p(x))` at `a_K(xhat)`.
fn pulled_back(
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    exact: &dyn ExactFields,
    k: usize,
    xhat: [f64; 2],
) -> Result<Vec3> {
    let me = mesh.eval(k, xhat);
    let tp = oracle.closest_point(&me.point)?;
    Ok(GammaPiolaAtPoint::from_parts(&tp, &me.normal(), k)?.inverse(&exact.u(&tp.p)))
}

/// Surface gradient of the pulled-back velocity by fourth-order central
/// differences in the reference coordinates.
fn pulled_back_gradient(
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    exact: &dyn ExactFields,
    k: usize,
    xhat: [f64; 2],
) -> Result<Mat3> {
    let me = mesh.eval(k, xhat);
    let mut cols = [Vec3::zeros(); 2];
    for (l, col) in cols.iter_mut().enumerate() {
        let at = |m: f64| {
            let mut y = xhat;
            y[l] += m * FD_STEP;
            pulled_back(mesh, oracle, exact, k, y)
        };
        *col = (at(-2.0)? - at(2.0)? + (at(1.0)? - at(-1.0)?) * 8.0) / (12.0 * FD_STEP);
    }
    Ok(Matrix3x2::from_columns(&cols) * me.metric_inv * me.jac.transpose())
}

/// Velocity and pressure errors against the pulled-back exact solution.
pub fn error_norms(
    mesh: &HighOrderMesh,
    oracle: &SurfaceOracle,
    handler: &DofHandler,
    u_h: &[f64],
    p_h: &[f64],
    exact: &dyn ExactFields,
    quad_degree: usize,
) -> Result<ErrorNorms> {
    let rule = triangle_quadrature(quad_degree)?;
    // per element: h1^2, l2^2 and the weighted pressure differences
    let parts = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| -> Result<(f64, f64, Vec<(f64, f64)>)> {
            let (mut h1, mut l2) = (0.0, 0.0);
            let mut ep = Vec::with_capacity(rule.len());
            for (x, w) in rule.iter() {
                let me = mesh.eval(k, *x);
                let tp = oracle.closest_point(&me.point)?;
                let g = GammaPiolaAtPoint::from_parts(&tp, &me.normal(), k)?;
                let ub = g.inverse(&exact.u(&tp.p));
                let gub = pulled_back_gradient(mesh, oracle, exact, k, *x)?;
                let vh = evaluate_velocity(handler, mesh, u_h, k, *x);
                let (ph, _) = evaluate_pressure(handler, mesh, p_h, k, *x);
                let dx = w * me.sqrt_det;
                h1 += dx * (gub - vh.grad).norm_squared();
                l2 += dx * (ub - vh.value).norm_squared();
                ep.push((dx, exact.p(&tp.p) - ph));
            }
            Ok((h1, l2, ep))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut h1, mut l2, mut area, mut mean) = (0.0, 0.0, 0.0, 0.0);
    for (a, b, ep) in &parts {
        h1 += a;
        l2 += b;
        for (dx, e) in ep {
            area += dx;
            mean += dx * e;
        }
    }
    mean /= area;
    let pressure_sq: f64 = parts
        .iter()
        .flat_map(|p| p.2.iter())
        .map(|(dx, e)| dx * (e - mean) * (e - mean))
        .sum();
    Ok(ErrorNorms {
        h1_seminorm: h1.sqrt(),
        l2_velocity: l2.sqrt(),
        l2_pressure: pressure_sq.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub level: usize,
    pub h: f64,
    /// Velocity plus pressure unknowns.
    pub dofs: usize,
    pub energy_error: f64,
    pub l2_error: f64,
    pub energy_eoc: Option<f64>,
    pub l2_eoc: Option<f64>,
    pub h1_seminorm_error: f64,
    pub pressure_error: f64,
    /// Wall-clock seconds for assembly and solve.
    pub solve_time: f64,
}

impl ConvergenceRecord {
    pub fn new(level: usize, h: f64, dofs: usize, norms: &ErrorNorms, solve_time: f64) -> Self {
        Self {
            level,
            h,
            dofs,
            energy_error: norms.energy(),
            l2_error: norms.l2_velocity,
            energy_eoc: None,
            l2_eoc: None,
            h1_seminorm_error: norms.h1_seminorm,
            pressure_error: norms.l2_pressure,
            solve_time,
        }
    }
}

/// `rate_i = log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for `(h, e)` pairs.
pub fn eoc(data: &[(f64, f64)]) -> Result<Vec<f64>> {
    if data.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: data.len(),
        });
    }
    data.windows(2)
        .map(|w| {
            let (h0, e0) = w[0];
            let (h1, e1) = w[1];
            if h0 == h1 {
                return Err(Error::InsufficientData { needed: 2, got: 1 });
            }
            Ok((e0 / e1).ln() / (h0 / h1).ln())
        })
        .collect()
}

/// Fills the rate columns; the first record has none.
pub fn fill_eocs(records: &mut [ConvergenceRecord]) -> Result<()> {
    if records.len() < 2 {
        return Ok(());
    }
    let energy = eoc(&records
        .iter()
        .map(|r| (r.h, r.energy_error))
        .collect::<Vec<_>>())?;
    let l2 = eoc(&records
        .iter()
        .map(|r| (r.h, r.l2_error))
        .collect::<Vec<_>>())?;
    for (i, rec) in records.iter_mut().enumerate().skip(1) {
        rec.energy_eoc = Some(energy[i - 1]);
        rec.l2_eoc = Some(l2[i - 1]);
    }
    Ok(())
}

pub const CSV_HEADER: [&str; 7] = [
    "level",
    "h",
    "dofs",
    "energy_error",
    "l2_error",
    "energy_eoc",
    "l2_eoc",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

pub fn write_csv(records: &[ConvergenceRecord], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in records {
        wr.write_record([
            r.level.to_string(),
            format!("{:.10e}", r.h),
            r.dofs.to_string(),
            format!("{:.10e}", r.energy_error),
            format!("{:.10e}", r.l2_error),
            opt(r.energy_eoc),
            opt(r.l2_eoc),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_json(path: impl AsRef<Path>) -> Result<Vec<ConvergenceRecord>> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

pub fn write_outputs(
    records: &[ConvergenceRecord],
    path: impl AsRef<Path>,
    format: OutputFormat,
) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        OutputFormat::Csv => write_csv(records, w),
        OutputFormat::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, records)?;
            w.flush()?;
            Ok(())
        }
    }
}

/// Output file stem for one `(r, k, placement)` study.
pub fn output_stem(r: usize, k: usize, placement: Placement) -> String {
    format!("convergence_r{r}_k{k}_{placement}")
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir` and returns both paths.
pub fn write_study_outputs(
    records: &[ConvergenceRecord],
    dir: impl AsRef<Path>,
    r: usize,
    k: usize,
    placement: Placement,
) -> Result<[PathBuf; 2]> {
    std::fs::create_dir_all(dir.as_ref())?;
    let stem = output_stem(r, k, placement);
    let csv_path = dir.as_ref().join(format!("{stem}.csv"));
    let json_path = dir.as_ref().join(format!("{stem}.json"));
    write_outputs(records, &csv_path, OutputFormat::Csv)?;
    write_outputs(records, &json_path, OutputFormat::Json)?;
    Ok([csv_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Surface;
    use crate::mesh::{build_high_order_mesh, build_icosphere_base};
    use crate::spaces::{interpolate_pressure, interpolate_velocity};

    fn setup(level: usize, k: usize, r: usize) -> (SurfaceOracle, HighOrderMesh, DofHandler) {
        let o = SurfaceOracle::new(Surface::Ellipsoid {
            axes: [1.1, 1.2, 1.3],
        });
        let m = build_high_order_mesh(build_icosphere_base(&o, level).unwrap(), &o, k).unwrap();
        let h = DofHandler::new(&m, r, Placement::GaussLobatto).unwrap();
        (o, m, h)
    }

    #[test]
    fn rates() {
        assert!((eoc(&[(1.0, 1.0), (0.5, 0.25)]).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!((eoc(&[(1.0, 1.0), (0.5, 0.125)]).unwrap()[0] - 3.0).abs() < 1e-15);
        assert!(matches!(
            eoc(&[(1.0, 1.0)]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(eoc(&[(1.0, 1.0), (1.0, 0.5)]).is_err());
    }

    #[test]
    fn zero_solution_has_zero_error() {
        let (o, m, h) = setup(1, 2, 2);
        let e = error_norms(
            &m,
            &o,
            &h,
            &vec![0.0; h.n_velocity()],
            &vec![0.0; h.n_pressure()],
            &ZeroData,
            8,
        )
        .unwrap();
        assert_eq!(
            (e.h1_seminorm, e.l2_velocity, e.l2_pressure),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn interpolant_errors_and_quadrature_stability() {
        let (o, m, h) = setup(2, 2, 2);
        let sol = ExactSolution::new(o.surface);
        let u = interpolate_velocity(&h, &m, &o, |y| sol.u(y)).unwrap();
        let p = interpolate_pressure(&h, &m, &o, |y| sol.p(y)).unwrap();
        let e = error_norms(&m, &o, &h, &u, &p, &sol, 8).unwrap();
        let e2 = error_norms(&m, &o, &h, &u, &p, &sol, 10).unwrap();
        for (a, b) in [
            (e.h1_seminorm, e2.h1_seminorm),
            (e.l2_velocity, e2.l2_velocity),
            (e.l2_pressure, e2.l2_pressure),
        ] {
            assert!(a > 0.0 && a.is_finite());
            assert!((a - b).abs() < 5e-3 * b, "{a} {b}");
        }
        assert!(e.h1_seminorm > e.l2_velocity);
        // constants shifts of the pressure do not change its error
        let shifted: Vec<f64> = p.iter().map(|x| x + 3.0).collect();
        let e3 = error_norms(&m, &o, &h, &u, &shifted, &sol, 8).unwrap();
        assert!((e3.l2_pressure - e.l2_pressure).abs() < 1e-12);
    }

    #[test]
    fn pullback_gradient_matches_piola_divergence_identity() {
        // div of the pulled-back field equals mu_h (div_gamma u) o p
        let (o, m, _) = setup(2, 3, 2);
        let sol = ExactSolution::new(o.surface);
        let rule = triangle_quadrature(4).unwrap();
        for k in (0..m.n_elements()).step_by(37) {
            for (x, _) in rule.iter() {
                let me = m.eval(k, *x);
                let tp = o.closest_point(&me.point).unwrap();
                let mu = GammaPiolaAtPoint::from_parts(&tp, &me.normal(), k)
                    .unwrap()
                    .mu_h;
                let div = pulled_back_gradient(&m, &o, &sol, k, *x).unwrap().trace();
                assert!((div - mu * sol.g(&tp.p).unwrap()).abs() < 1e-8);
            }
        }
    }

    fn sample() -> Vec<ConvergenceRecord> {
        let norms = ErrorNorms {
            h1_seminorm: 0.5,
            l2_velocity: 0.1,
            l2_pressure: 0.5,
        };
        let mut v = vec![
            ConvergenceRecord::new(1, 0.4, 100, &norms, 0.0),
            ConvergenceRecord::new(
                2,
                0.2,
                400,
                &ErrorNorms {
                    h1_seminorm: 0.125,
                    l2_velocity: 0.0125,
                    l2_pressure: 0.125,
                },
                0.0,
            ),
        ];
        fill_eocs(&mut v).unwrap();
        v
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "level,h,dofs,energy_error,l2_error,energy_eoc,l2_eoc"
        );
        assert!(lines[1].ends_with(",,"));
        assert!(lines[2].ends_with(",2.000000,3.000000"));
        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            "level,h,dofs,energy_error,l2_error,energy_eoc,l2_eoc\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let dir = std::env::temp_dir().join(format!("surfstokes-json-{}", std::process::id()));
        let [csv_path, json_path] =
            write_study_outputs(&sample(), &dir, 2, 2, Placement::GaussLobatto).unwrap();
        assert!(csv_path.ends_with("convergence_r2_k2_gauss-lobatto.csv"));
        assert_eq!(read_json(&json_path).unwrap(), sample());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
