//! Direct solution of the saddle-point system and the discrete inf-sup
//! constant.

use faer::linalg::solvers::Solve;
use faer::sparse::Triplet;
use faer::{Mat, Par, Side};
use nalgebra::DMatrix;

use crate::assembly::{
    matvec, matvec_acc, matvec_transpose_acc, sparse_from_triplets, to_dense, SaddleSystem,
    SparseMatrix,
};
use crate::error::{Error, Result};

/// Largest accepted relative residual of the augmented system.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
const MAX_REFINEMENT_STEPS: usize = 5;

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// Multiplier of the mean-value constraint.
    pub lambda: f64,
    /// `|K x - rhs| / |rhs|` of the augmented system (absolute if `rhs = 0`).
    pub residual: f64,
    /// `|m . p|`.
    pub mean: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `[[A, B^T, 0], [B, 0, m], [0, m^T, 0]]`.
fn augmented_matrix(sys: &SaddleSystem) -> Result<SparseMatrix> {
    let (nu, np) = (sys.n_velocity, sys.n_pressure);
    let mut trip = Vec::with_capacity(sys.a.compute_nnz() + 2 * sys.b.compute_nnz() + 2 * np);
    for (m, row0, col0, transpose) in [
        (&sys.a, 0, 0, false),
        (&sys.b, nu, 0, false),
        (&sys.b, nu, 0, true),
    ] {
        let cp = m.symbolic().col_ptr();
        let ri = m.symbolic().row_idx();
        for j in 0..m.ncols() {
            for p in cp[j]..cp[j + 1] {
                let (r, c) = (row0 + ri[p], col0 + j);
                let (r, c) = if transpose { (c, r) } else { (r, c) };
                trip.push(Triplet::new(r, c, m.val()[p]));
            }
        }
    }
    let last = nu + np;
    for (i, &mi) in sys.m.iter().enumerate() {
        trip.push(Triplet::new(nu + i, last, mi));
        trip.push(Triplet::new(last, nu + i, mi));
    }
    sparse_from_triplets(last + 1, last + 1, &trip)
}

fn augmented_residual(sys: &SaddleSystem, x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let (nu, np) = (sys.n_velocity, sys.n_pressure);
    let (u, rest) = x.split_at(nu);
    let (p, lam) = rest.split_at(np);
    let mut r: Vec<f64> = rhs.iter().map(|v| -v).collect();
    {
        let (ru, rest) = r.split_at_mut(nu);
        let (rp, rl) = rest.split_at_mut(np);
        matvec_acc(&sys.a, u, ru, 1.0);
        matvec_transpose_acc(&sys.b, p, ru, 1.0);
        matvec_acc(&sys.b, u, rp, 1.0);
        for (ri, mi) in rp.iter_mut().zip(&sys.m) {
            *ri += mi * lam[0];
        }
        rl[0] += sys.m.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
    }
    r
}

/// Augmented systems up to this size are factorized directly; larger ones use
/// the Schur-complement iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 60_000;
const CG_TOLERANCE: f64 = 1e-12;
const CG_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Sparse LU of the augmented matrix.
    Direct,
    /// Conjugate gradients on the pressure Schur complement `B A^{-1} B^T`,
    /// preconditioned by the pressure mass matrix, with a sparse Cholesky
    /// factor of `A`.
    SchurCg,
}

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct SchurSolver<'a> {
    sys: &'a SaddleSystem,
    a: faer::sparse::linalg::solvers::Llt<usize, f64>,
    mass: faer::sparse::linalg::solvers::Llt<usize, f64>,
    /// `B^T 1`, zero up to rounding for co-normal continuous velocities.
    bt1: Vec<f64>,
    area: f64,
}

impl<'a> SchurSolver<'a> {
    fn new(sys: &'a SaddleSystem) -> Result<Self> {
        let a = sys
            .a
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("Cholesky of A failed: {e:?}")))?;
        let mass = sys.pressure_mass.sp_cholesky(Side::Lower).map_err(|e| {
            Error::SingularSystem(format!("Cholesky of the pressure mass failed: {e:?}"))
        })?;
        let mut bt1 = vec![0.0; sys.n_velocity];
        matvec_transpose_acc(&sys.b, &vec![1.0; sys.n_pressure], &mut bt1, 1.0);
        let area = sys.m.iter().sum();
        Ok(Self {
            sys,
            a,
            mass,
            bt1,
            area,
        })
    }

    fn solve_a(&self, v: &[f64]) -> Vec<f64> {
        let mut x = column(v);
        self.a.solve_in_place(x.as_mut());
        (0..v.len()).map(|i| x[(i, 0)]).collect()
    }

    /// `M^{-1} r` shifted by a constant so that `m . z = 0`.
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut x = column(r);
        self.mass.solve_in_place(x.as_mut());
        let shift = r.iter().sum::<f64>() / self.area;
        (0..r.len()).map(|i| x[(i, 0)] - shift).collect()
    }

    fn schur(&self, p: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.sys.n_velocity];
        matvec_transpose_acc(&self.sys.b, p, &mut w, 1.0);
        matvec(&self.sys.b, &self.solve_a(&w))
    }

    /// Solves `S x = b` for `m . x = 0`.
    fn cg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; b.len()];
        let mut r = b.to_vec();
        let mut z = self.precondition(&r);
        let mut rz = dot(&r, &z);
        if rz <= 0.0 {
            return Ok(x);
        }
        let target = CG_TOLERANCE * rz.sqrt();
        let mut dir = z.clone();
        for _ in 0..CG_MAX_ITERATIONS {
            let sd = self.schur(&dir);
            let alpha = rz / dot(&dir, &sd);
            for i in 0..x.len() {
                x[i] += alpha * dir[i];
                r[i] -= alpha * sd[i];
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            if rz_new.abs().sqrt() <= target {
                return Ok(x);
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..dir.len() {
                dir[i] = z[i] + beta * dir[i];
            }
        }
        Err(Error::SolverDivergence {
            residual: rz.abs().sqrt() / target * CG_TOLERANCE,
        })
    }

    /// Solves the augmented system for the right-hand side `(ru, rp, rl)`.
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (nu, np) = (self.sys.n_velocity, self.sys.n_pressure);
        let (ru, rest) = rhs.split_at(nu);
        let (rp, rl) = rest.split_at(np);
        let c = rl[0] / self.area;
        let ru: Vec<f64> = ru.iter().zip(&self.bt1).map(|(r, b)| r - c * b).collect();
        let mut q = matvec(&self.sys.b, &self.solve_a(&ru));
        for (qi, ri) in q.iter_mut().zip(rp) {
            *qi -= ri;
        }
        let lambda = -q.iter().sum::<f64>() / self.area;
        for (qi, mi) in q.iter_mut().zip(&self.sys.m) {
            *qi += lambda * mi;
        }
        let p0 = self.cg(&q)?;
        let mut w = ru;
        matvec_transpose_acc(&self.sys.b, &p0, &mut w, -1.0);
        let mut x = self.solve_a(&w);
        x.extend(p0.iter().map(|v| v + c));
        x.push(lambda);
        Ok(x)
    }
}

/// Solves the augmented system, directly when it has at most
/// [`DIRECT_SOLVE_LIMIT`] unknowns and by the Schur-complement iteration
/// otherwise.
pub fn solve_saddle(sys: &SaddleSystem) -> Result<SaddleSolution> {
    let method = if sys.n_velocity + sys.n_pressure < DIRECT_SOLVE_LIMIT {
        SolveMethod::Direct
    } else {
        SolveMethod::SchurCg
    };
    solve_saddle_with(sys, method)
}

/// Solves the augmented system with up to five steps of iterative
/// refinement. Dense kernels run sequentially so repeated solves are
/// bit-identical.
pub fn solve_saddle_with(sys: &SaddleSystem, method: SolveMethod) -> Result<SaddleSolution> {
    faer::set_global_parallelism(Par::Seq);
    let (nu, np) = (sys.n_velocity, sys.n_pressure);
    if sys.fvec.len() != nu || sys.gvec.len() != np || sys.m.len() != np {
        return Err(Error::DimensionMismatch {
            what: "saddle system vectors",
            expected: nu + 2 * np,
            got: sys.fvec.len() + sys.gvec.len() + sys.m.len(),
        });
    }
    let n = nu + np + 1;
    let correction: Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + '_> = match method {
        SolveMethod::Direct => {
            let lu = augmented_matrix(sys)?
                .sp_lu()
                .map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e:?}")))?;
            Box::new(move |r: &[f64]| {
                let mut x = column(r);
                lu.solve_in_place(x.as_mut());
                Ok((0..n).map(|i| x[(i, 0)]).collect())
            })
        }
        SolveMethod::SchurCg => {
            let schur = SchurSolver::new(sys)?;
            Box::new(move |r: &[f64]| schur.solve(r))
        }
    };
    let mut rhs = sys.fvec.clone();
    rhs.extend_from_slice(&sys.gvec);
    rhs.push(0.0);
    let scale = norm(&rhs);
    let rel = |r: &[f64]| {
        if scale > 0.0 {
            norm(r) / scale
        } else {
            norm(r)
        }
    };
    let mut x = vec![0.0; n];
    let mut res = rhs.iter().map(|v| -v).collect::<Vec<_>>();
    let mut best = f64::INFINITY;
    for _ in 0..=MAX_REFINEMENT_STEPS {
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let corr = correction(&neg)?;
        let candidate: Vec<f64> = x.iter().zip(&corr).map(|(xi, ci)| xi + ci).collect();
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        let cres = augmented_residual(sys, &candidate, &rhs);
        let r = rel(&cres);
        if r >= best {
            break;
        }
        best = r;
        x = candidate;
        res = cres;
        if r <= 1e-14 {
            break;
        }
    }
    if !(best <= RESIDUAL_TOLERANCE) {
        return Err(Error::SolverDivergence { residual: best });
    }
    let p = x[nu..nu + np].to_vec();
    let mean = sys.m.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>().abs();
    Ok(SaddleSolution {
        lambda: x[n - 1],
        u: x[..nu].to_vec(),
        p,
        residual: best,
        mean,
    })
}

/// Discrete inf-sup constant: the square root of the smallest eigenvalue of
/// `B H^{-1} B^T q = lambda M q` after removing the constant pressure mode.
pub fn estimate_infsup(
    b: &SparseMatrix,
    h1: &SparseMatrix,
    pressure_mass: &SparseMatrix,
) -> Result<f64> {
    faer::set_global_parallelism(Par::Seq);
    let (np, nu) = (b.nrows(), b.ncols());
    if h1.nrows() != nu || pressure_mass.nrows() != np {
        return Err(Error::DimensionMismatch {
            what: "inf-sup operators",
            expected: nu + np,
            got: h1.nrows() + pressure_mass.nrows(),
        });
    }
    let chol = h1
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::EigensolveFailure(format!("H1 Cholesky failed: {e:?}")))?;
    let bt = to_dense(b).transpose();
    let mut x = Mat::from_fn(nu, np, |i, j| bt[(i, j)]);
    chol.solve_in_place(x.as_mut());
    let xd = DMatrix::from_fn(nu, np, |i, j| x[(i, j)]);
    let s = bt.transpose() * xd;
    let s = (&s + s.transpose()) * 0.5;
    let mass = to_dense(pressure_mass);
    let l = mass
        .clone()
        .cholesky()
        .ok_or_else(|| {
            Error::EigensolveFailure("pressure mass matrix is not positive definite".into())
        })?
        .l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::EigensolveFailure("singular mass factor".into()))?;
    let c = &linv * s * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    // constant pressures map to L^T 1 in the transformed coordinates
    let constant = (l.transpose() * DMatrix::from_element(np, 1, 1.0)).normalize();
    let (mut drop, mut align) = (0, 0.0f64);
    for i in 0..np {
        let a = eig.eigenvectors.column(i).dot(&constant.column(0)).abs();
        if a > align {
            align = a;
            drop = i;
        }
    }
    if align < 0.99 {
        return Err(Error::EigensolveFailure(format!(
            "constant pressure mode not isolated (alignment {align})"
        )));
    }
    let smallest = (0..np)
        .filter(|&i| i != drop)
        .map(|i| eig.eigenvalues[i])
        .fold(f64::INFINITY, f64::min);
    if !(smallest > 0.0) {
        return Err(Error::EigensolveFailure(format!(
            "non-positive eigenvalue {smallest}"
        )));
    }
    Ok(smallest.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_pressure_mass, assemble_system, assemble_velocity_h1, matvec, ZeroData,
    };
    use crate::geometry::{Surface, SurfaceOracle};
    use crate::manufactured::ExactSolution;
    use crate::mesh::{build_high_order_mesh, build_icosphere_base, HighOrderMesh};
    use crate::spaces::{DofHandler, Placement};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn setup(level: usize, placement: Placement) -> (SurfaceOracle, HighOrderMesh, DofHandler) {
        let o = SurfaceOracle::new(Surface::Ellipsoid {
            axes: [1.1, 1.2, 1.3],
        });
        let m = build_high_order_mesh(build_icosphere_base(&o, level).unwrap(), &o, 2).unwrap();
        let h = DofHandler::new(&m, 2, placement).unwrap();
        (o, m, h)
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (o, m, h) = setup(0, Placement::GaussLobatto);
        let sys = assemble_system(&m, &o, &h, &ZeroData, 6).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        assert!(sol.u.iter().chain(&sol.p).all(|v| *v == 0.0) && sol.lambda == 0.0);
    }

    #[test]
    fn manufactured_solve_satisfies_galerkin_equations() {
        let (o, m, h) = setup(2, Placement::GaussLobatto);
        let sol_exact = ExactSolution::new(o.surface);
        let sys = assemble_system(&m, &o, &h, &sol_exact, 6).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        assert!(sol.residual <= 1e-10);
        assert!(sol.mean <= 1e-10);
        let again = solve_saddle(&sys).unwrap();
        assert_eq!(sol.u, again.u);
        assert_eq!(sol.p, again.p);

        let mut au = matvec(&sys.a, &sol.u);
        matvec_transpose_acc(&sys.b, &sol.p, &mut au, 1.0);
        let bu = matvec(&sys.b, &sol.u);
        let scale = norm(&sys.fvec).max(norm(&sys.gvec));
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let v: Vec<f64> = (0..h.n_velocity())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let q: Vec<f64> = (0..h.n_pressure())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let rv: f64 = au
                .iter()
                .zip(&sys.fvec)
                .zip(&v)
                .map(|((a, f), v)| (a - f) * v)
                .sum();
            // the multiplier absorbs the constant mode of q
            let rq: f64 = bu
                .iter()
                .zip(&sys.gvec)
                .zip(&q)
                .zip(&sys.m)
                .map(|(((b, g), q), mi)| (b - g + sol.lambda * mi) * q)
                .sum();
            assert!(rv.abs() <= 1e-9 * scale * norm(&v));
            assert!(rq.abs() <= 1e-9 * scale * norm(&q));
        }
        assert!(sol.lambda.abs() < 1e-9 * scale);
    }

    #[test]
    fn schur_iteration_matches_direct_solve() {
        let (o, m, h) = setup(2, Placement::Equispaced);
        let sys = assemble_system(&m, &o, &h, &ExactSolution::new(o.surface), 6).unwrap();
        let direct = solve_saddle_with(&sys, SolveMethod::Direct).unwrap();
        let cg = solve_saddle_with(&sys, SolveMethod::SchurCg).unwrap();
        assert!(cg.residual <= RESIDUAL_TOLERANCE && cg.mean <= 1e-10);
        let du = direct
            .u
            .iter()
            .zip(&cg.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dp = direct
            .p
            .iter()
            .zip(&cg.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(du < 1e-8 && dp < 1e-8, "{du} {dp}");
        let again = solve_saddle_with(&sys, SolveMethod::SchurCg).unwrap();
        assert_eq!(cg.p, again.p);
    }

    #[test]
    fn infsup_is_positive_for_both_placements() {
        for placement in [Placement::GaussLobatto, Placement::Equispaced] {
            let (o, m, h) = setup(1, placement);
            let sys = assemble_system(&m, &o, &h, &ZeroData, 6).unwrap();
            let h1 = assemble_velocity_h1(&m, &h, 6).unwrap();
            let mass = assemble_pressure_mass(&m, &h, 6).unwrap();
            let beta = estimate_infsup(&sys.b, &h1, &mass).unwrap();
            assert!(beta > 0.05 && beta < 1.5, "{beta}");
        }
    }
}
