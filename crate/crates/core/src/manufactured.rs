//! Manufactured solution on the exact surface.
//!
//! Surface operators are applied to a smooth ambient extension of each field
//! by fourth-order central differences with one Richardson step. On the
//! surface, `grad_gamma w = (grad w~) Pi` for any smooth extension `w~`, so the
//! extension need not be constant along normals.

use std::sync::Arc;

use rand::{rngs::StdRng, Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Surface, SurfaceOracle, Vec3};

type NormalField = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;

/// Smallest step, relative to the length scale, accepted before rounding
/// dominates the nested second differences.
const MIN_RELATIVE_STEP: f64 = 1e-5;

/// Richardson disagreement (relative) above which a result is rejected.
const MAX_DISAGREEMENT: f64 = 1e-6;

/// Finite-difference tangential calculus near a surface given by a unit
/// normal field that is smooth in a neighbourhood.
#[derive(Clone)]
pub struct SurfaceOperators {
    normal: NormalField,
    step: f64,
}

impl std::fmt::Debug for SurfaceOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurfaceOperators")
            .field("step", &self.step)
            .finish()
    }
}

/// Tangential derivatives of a vector field at a surface point.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceDerivatives {
    pub grad: Mat3,
    pub div: f64,
    pub def: Mat3,
}

fn outer(a: Vec3, b: Vec3) -> Mat3 {
    a * b.transpose()
}

impl SurfaceOperators {
    /// Operators for a quadric, with step `1e-2` times the smallest semi-axis.
    pub fn new(surface: Surface) -> Self {
        Self {
            normal: Arc::new(move |x| surface.level_set_normal(x)),
            step: 1e-2 * surface.min_semi_axis(),
        }
    }

    pub fn with_normal_field(
        normal: impl Fn(&Vec3) -> Vec3 + Send + Sync + 'static,
        step: f64,
    ) -> Self {
        Self {
            normal: Arc::new(normal),
            step,
        }
    }

    /// Replaces the step; fails if it is below the cancellation threshold
    /// relative to `scale`.
    pub fn with_step(mut self, step: f64, scale: f64) -> Result<Self> {
        if !(step >= MIN_RELATIVE_STEP * scale) {
            return Err(Error::StepTooSmall { step });
        }
        self.step = step;
        Ok(self)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn projector(&self, x: &Vec3) -> Mat3 {
        let n = (self.normal)(x);
        Mat3::identity() - outer(n, n)
    }

    fn central4<T>(f: &impl Fn(&Vec3) -> T, x: &Vec3, dir: usize, h: f64) -> T
    where
        T: std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let at = |m: f64| {
            let mut y = *x;
            y[dir] += m * h;
            f(&y)
        };
        (at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) * (1.0 / (12.0 * h))
    }

    /// Ambient Jacobian `J_ij = d_j w_i` with a Richardson estimate and the
    /// largest disagreement between the two levels.
    fn jacobian_with_error(&self, w: &impl Fn(&Vec3) -> Vec3, x: &Vec3) -> (Mat3, f64) {
        let h = self.step;
        let mut jac = Mat3::zeros();
        let mut err = 0.0f64;
        for dir in 0..3 {
            let coarse = Self::central4(w, x, dir, h);
            let fine = Self::central4(w, x, dir, 0.5 * h);
            let rich = (fine * 16.0 - coarse) / 15.0;
            err = err.max((rich - fine).amax());
            jac.set_column(dir, &rich);
        }
        (jac, err)
    }

    fn jacobian(&self, w: &impl Fn(&Vec3) -> Vec3, x: &Vec3) -> Mat3 {
        self.jacobian_with_error(w, x).0
    }

    fn checked<T>(value: T, err: f64, size: f64, step: f64) -> Result<T> {
        if err > MAX_DISAGREEMENT * size.max(1.0) || !err.is_finite() {
            return Err(Error::StepTooSmall { step });
        }
        Ok(value)
    }

    /// `grad_gamma q = Pi grad q~` of a scalar.
    pub fn grad_scalar(&self, q: impl Fn(&Vec3) -> f64, y: &Vec3) -> Result<Vec3> {
        let wrapped = |x: &Vec3| Vec3::new(q(x), 0.0, 0.0);
        let (jac, err) = self.jacobian_with_error(&wrapped, y);
        let g = self.projector(y) * jac.row(0).transpose();
        Self::checked(g, err, g.amax(), self.step)
    }

    /// `grad_gamma w = (grad w~) Pi`.
    pub fn grad(&self, w: impl Fn(&Vec3) -> Vec3, y: &Vec3) -> Result<Mat3> {
        let (jac, err) = self.jacobian_with_error(&w, y);
        let g = jac * self.projector(y);
        Self::checked(g, err, g.amax(), self.step)
    }

    pub fn derivatives(&self, w: impl Fn(&Vec3) -> Vec3, y: &Vec3) -> Result<SurfaceDerivatives> {
        let grad = self.grad(w, y)?;
        let pi = self.projector(y);
        Ok(SurfaceDerivatives {
            grad,
            div: grad.trace(),
            def: pi * (grad + grad.transpose()) * pi * 0.5,
        })
    }

    pub fn div(&self, w: impl Fn(&Vec3) -> Vec3, y: &Vec3) -> Result<f64> {
        Ok(self.grad(w, y)?.trace())
    }

    /// Extension of `Def_gamma w` to a neighbourhood using the ambient
    /// projector.
    fn def_extension(&self, w: &impl Fn(&Vec3) -> Vec3, x: &Vec3) -> Mat3 {
        let pi = self.projector(x);
        let g = self.jacobian(w, x) * pi;
        pi * (g + g.transpose()) * pi * 0.5
    }

    /// `div_gamma Def_gamma w`, with `(div_gamma T)_i = sum_jk d_k T_ij Pi_kj`.
    pub fn div_def(&self, w: impl Fn(&Vec3) -> Vec3, y: &Vec3) -> Result<Vec3> {
        let pi = self.projector(y);
        let h = self.step;
        let t = |x: &Vec3| self.def_extension(&w, x);
        let mut out = Vec3::zeros();
        let mut err = 0.0f64;
        for k in 0..3 {
            let coarse = Self::central4(&t, y, k, h);
            let fine = Self::central4(&t, y, k, 0.5 * h);
            let dt = (fine * 16.0 - coarse) / 15.0;
            err = err.max((dt - fine).amax());
            for i in 0..3 {
                for j in 0..3 {
                    out[i] += dt[(i, j)] * pi[(k, j)];
                }
            }
        }
        Self::checked(out, err, out.amax(), self.step)
    }
}

/// The test problem: `u = Pi (-z^2, x, y)`, `p = x y^3 + z`,
/// `f = -Pi div Def u + grad p + u`, `g = div u`.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub surface: Surface,
    pub ops: SurfaceOperators,
}

fn raw_u(x: &Vec3) -> Vec3 {
    Vec3::new(-x[2] * x[2], x[0], x[1])
}

impl ExactSolution {
    pub fn new(surface: Surface) -> Self {
        Self {
            surface,
            ops: SurfaceOperators::new(surface),
        }
    }

    /// Ambient extension `Pi(x) (-z^2, x, y)` using the level-set normal.
    pub fn u_extended(&self, x: &Vec3) -> Vec3 {
        self.surface.level_set_projector(x) * raw_u(x)
    }

    pub fn u(&self, y: &Vec3) -> Vec3 {
        self.u_extended(y)
    }

    pub fn p(&self, y: &Vec3) -> f64 {
        y[0] * y[1].powi(3) + y[2]
    }

    pub fn grad_p(&self, y: &Vec3) -> Vec3 {
        let g = Vec3::new(y[1].powi(3), 3.0 * y[0] * y[1] * y[1], 1.0);
        self.surface.level_set_projector(y) * g
    }

    pub fn grad_u(&self, y: &Vec3) -> Result<Mat3> {
        self.ops.grad(|x| self.u_extended(x), y)
    }

    pub fn g(&self, y: &Vec3) -> Result<f64> {
        self.ops.div(|x| self.u_extended(x), y)
    }

    pub fn f(&self, y: &Vec3) -> Result<Vec3> {
        let pi = self.surface.level_set_projector(y);
        let dd = self.ops.div_def(|x| self.u_extended(x), y)?;
        let grad_p = self.ops.grad_scalar(|x| self.p(x), y)?;
        Ok(-(pi * dd) + grad_p + self.u(y))
    }
}

/// Builds the test problem and checks tangency and finiteness of the data on
/// a random sample of surface points.
pub fn build_exact_solution(oracle: &SurfaceOracle) -> Result<ExactSolution> {
    let sol = ExactSolution::new(oracle.surface);
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for _ in 0..32 {
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let y = oracle
            .closest_point(&oracle.surface.radial_projection(&dir))?
            .p;
        let nu = oracle.surface.level_set_normal(&y);
        let u = sol.u(&y);
        let f = sol.f(&y)?;
        let g = sol.g(&y)?;
        if u.dot(&nu).abs() > 1e-12 || !f.iter().all(|v| v.is_finite()) || !g.is_finite() {
            return Err(Error::InvalidSurface(format!(
                "manufactured data failed sanity check at {:?}",
                [y[0], y[1], y[2]]
            )));
        }
    }
    Ok(sol)
}
