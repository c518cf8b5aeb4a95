//! Exact surface oracle: signed distance, closest point projection, normal,
//! Weingarten map and tangential projection for quadric level-set surfaces.
//!
//! Surfaces are the zero level set of
//! `phi(x) = x^2/a^2 + y^2/b^2 + z^2/c^2 - 1`, with `d > 0` where `phi > 0`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A closed convex quadric surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    Sphere { radius: f64 },
    Ellipsoid { axes: [f64; 3] },
}

impl Surface {
    pub fn semi_axes(&self) -> [f64; 3] {
        match *self {
            Surface::Sphere { radius } => [radius; 3],
            Surface::Ellipsoid { axes } => axes,
        }
    }

    pub fn min_semi_axis(&self) -> f64 {
        let s = self.semi_axes();
        s[0].min(s[1]).min(s[2])
    }

    pub fn level_set(&self, x: &Vec3) -> f64 {
        let s = self.semi_axes();
        (0..3).map(|i| (x[i] / s[i]).powi(2)).sum::<f64>() - 1.0
    }

    pub fn level_set_gradient(&self, x: &Vec3) -> Vec3 {
        let s = self.semi_axes();
        Vec3::from_fn(|i, _| 2.0 * x[i] / (s[i] * s[i]))
    }

    /// Normalized level-set gradient. Agrees with the distance normal on the
    /// surface only; off the surface it is a different smooth extension.
    pub fn level_set_normal(&self, x: &Vec3) -> Vec3 {
        self.level_set_gradient(x).normalize()
    }

    /// `I - n n^T` with `n` the normalized level-set gradient at `x`.
    pub fn level_set_projector(&self, x: &Vec3) -> Mat3 {
        let n = self.level_set_normal(x);
        Mat3::identity() - n * n.transpose()
    }

    /// Scales `x` along the ray from the origin onto the surface.
    pub fn radial_projection(&self, x: &Vec3) -> Vec3 {
        x / (self.level_set(x) + 1.0).sqrt()
    }
}

impl FromStr for Surface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidSurface(format!("expected `kind:params`, got `{s}`")))?;
        let values = params
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidSurface(format!("`{s}`: {e}")))?;
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidSurface(format!(
                "`{s}`: parameters must be positive"
            )));
        }
        match (kind.trim(), values.as_slice()) {
            ("sphere", [r]) => Ok(Surface::Sphere { radius: *r }),
            ("ellipsoid", [a, b, c]) => Ok(Surface::Ellipsoid { axes: [*a, *b, *c] }),
            _ => Err(Error::InvalidSurface(format!(
                "`{s}`: expected `sphere:R` or `ellipsoid:a,b,c`"
            ))),
        }
    }
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Surface::Sphere { radius } => write!(f, "sphere:{radius}"),
            Surface::Ellipsoid { axes } => {
                write!(f, "ellipsoid:{},{},{}", axes[0], axes[1], axes[2])
            }
        }
    }
}

/// Geometric data at a point of the tubular neighborhood.
#[derive(Debug, Clone, Copy)]
pub struct TubePoint {
    pub x: Vec3,
    /// Closest point on the surface.
    pub p: Vec3,
    /// Signed distance, positive outside.
    pub d: f64,
    pub nu: Vec3,
    /// Weingarten map `D^2 d` evaluated at `x` (not at `p`).
    pub h: Mat3,
    pub pi: Mat3,
}

/// Closest point / distance oracle for a [`Surface`].
#[derive(Debug, Clone, Copy)]
pub struct SurfaceOracle {
    pub surface: Surface,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub tube_width: f64,
}

impl SurfaceOracle {
    pub fn new(surface: Surface) -> Self {
        Self {
            surface,
            newton_tol: 1e-13,
            newton_max_iter: 50,
            tube_width: 0.5 * surface.min_semi_axis(),
        }
    }

    pub fn with_tube_width(mut self, width: f64) -> Self {
        self.tube_width = width;
        self
    }

    pub fn closest_point(&self, x: &Vec3) -> Result<TubePoint> {
        let tp = match self.surface {
            Surface::Sphere { radius } => self.sphere_closest_point(radius, x)?,
            Surface::Ellipsoid { axes } => self.ellipsoid_closest_point(axes, x)?,
        };
        if tp.d.abs() > self.tube_width {
            return Err(Error::OutsideTube {
                point: [x[0], x[1], x[2]],
                distance: tp.d.abs(),
                width: self.tube_width,
            });
        }
        Ok(tp)
    }

    pub fn weingarten(&self, x: &Vec3) -> Result<Mat3> {
        Ok(self.closest_point(x)?.h)
    }

    /// Normal-constant extension `w(p(x))` of a field given on the surface.
    pub fn evaluate_extension<T>(&self, field: impl Fn(&Vec3) -> T, x: &Vec3) -> Result<T> {
        Ok(field(&self.closest_point(x)?.p))
    }

    fn sphere_closest_point(&self, radius: f64, x: &Vec3) -> Result<TubePoint> {
        let r = x.norm();
        if r == 0.0 {
            return Err(Error::NonConvergence {
                point: [0.0; 3],
                iterations: 0,
            });
        }
        let nu = x / r;
        let pi = Mat3::identity() - nu * nu.transpose();
        Ok(TubePoint {
            x: *x,
            p: nu * radius,
            d: r - radius,
            nu,
            h: pi / r,
            pi,
        })
    }

    // The stationarity condition y - x + (t/2) grad phi(y) = 0 gives
    // y_i = x_i s_i^2 / (s_i^2 + t); the constraint phi(y) = 0 becomes a scalar
    // equation in t that is convex and decreasing on t > -min s_i^2.
    fn ellipsoid_closest_point(&self, s: [f64; 3], x: &Vec3) -> Result<TubePoint> {
        let s2 = [s[0] * s[0], s[1] * s[1], s[2] * s[2]];
        let secular = |t: f64| -> (f64, f64) {
            let mut f = -1.0;
            let mut df = 0.0;
            for i in 0..3 {
                let q = x[i] * s[i] / (s2[i] + t);
                f += q * q;
                df -= 2.0 * q * q / (s2[i] + t);
            }
            (f, df)
        };
        let pole = -s2[0].min(s2[1]).min(s2[2]);
        let mut t = (0..3)
            .map(|i| s[i] * x[i].abs() - s2[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if t <= pole {
            t = 0.5 * pole;
        }
        let fail = || Error::NonConvergence {
            point: [x[0], x[1], x[2]],
            iterations: self.newton_max_iter,
        };
        let mut converged = false;
        for _ in 0..self.newton_max_iter {
            let (f, df) = secular(t);
            if !(f.is_finite() && df < 0.0) {
                return Err(fail());
            }
            let step = f / df;
            let mut next = t - step;
            if next <= pole {
                next = 0.5 * (t + pole);
            }
            let small_step = (next - t).abs() <= self.newton_tol * (1.0 + t.abs());
            t = next;
            if f.abs() <= self.newton_tol || small_step {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(fail());
        }
        let p = Vec3::from_fn(|i, _| x[i] * s2[i] / (s2[i] + t));
        let grad = Vec3::from_fn(|i, _| 2.0 * p[i] / s2[i]);
        let gnorm = grad.norm();
        let nu = grad / gnorm;
        let d = 0.5 * t * gnorm;
        let pi = Mat3::identity() - nu * nu.transpose();
        let hess = Mat3::from_diagonal(&Vec3::from_fn(|i, _| 2.0 / s2[i]));
        // Shape operator at p, then transported to x: H(x) = W (I + d W)^{-1}.
        let w = pi * hess * pi / gnorm;
        let shift = (Mat3::identity() + w * d).try_inverse().ok_or_else(fail)?;
        let h = w * shift;
        Ok(TubePoint {
            x: *x,
            p,
            d,
            nu,
            h: 0.5 * (h + h.transpose()),
            pi,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ellipsoid() -> SurfaceOracle {
        SurfaceOracle::new(Surface::Ellipsoid {
            axes: [1.1, 1.2, 1.3],
        })
    }

    #[test]
    fn parses_surface_strings() {
        assert_eq!(
            "ellipsoid:1.1,1.2,1.3".parse::<Surface>().unwrap(),
            Surface::Ellipsoid {
                axes: [1.1, 1.2, 1.3]
            }
        );
        assert_eq!(
            "sphere:2".parse::<Surface>().unwrap(),
            Surface::Sphere { radius: 2.0 }
        );
        assert!("torus:1,2".parse::<Surface>().is_err());
        assert!("sphere:-1".parse::<Surface>().is_err());
        assert!("sphere".parse::<Surface>().is_err());
        let s = Surface::Ellipsoid {
            axes: [1.1, 1.2, 1.3],
        };
        assert_eq!(s.to_string().parse::<Surface>().unwrap(), s);
    }

    #[test]
    fn sphere_radial_point() {
        let o = SurfaceOracle::new(Surface::Sphere { radius: 1.0 }).with_tube_width(2.0);
        let tp = o.closest_point(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((tp.p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((tp.d - 1.0).abs() < 1e-15);
        assert!((tp.nu - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn ellipsoid_axis_point_is_fixed() {
        let tp = ellipsoid()
            .closest_point(&Vec3::new(1.1, 0.0, 0.0))
            .unwrap();
        assert!((tp.p - Vec3::new(1.1, 0.0, 0.0)).norm() < 1e-14);
        assert!(tp.d.abs() < 1e-14);
        assert!((tp.nu - Vec3::x()).norm() < 1e-14);
    }

    // Independent check: dense parametric sampling of the ellipsoid followed
    // by a local pattern search on the angles.
    #[test]
    fn ellipsoid_off_axis_matches_brute_force() {
        let s = [1.1, 1.2, 1.3];
        let x = Vec3::new(1.5, 0.3, -0.2);
        let param = |th: f64, ph: f64| {
            Vec3::new(
                s[0] * th.sin() * ph.cos(),
                s[1] * th.sin() * ph.sin(),
                s[2] * th.cos(),
            )
        };
        let n = 1000;
        let (mut best, mut bt, mut bp) = (f64::INFINITY, 0.0, 0.0);
        for i in 0..n {
            let th = std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            for j in 0..n {
                let ph = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                let dist = (param(th, ph) - x).norm();
                if dist < best {
                    (best, bt, bp) = (dist, th, ph);
                }
            }
        }
        let mut step = 1e-2;
        while step > 1e-12 {
            let mut improved = false;
            for (dt, dp) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let dist = (param(bt + dt, bp + dp) - x).norm();
                if dist < best {
                    (best, bt, bp) = (dist, bt + dt, bp + dp);
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let o = ellipsoid().with_tube_width(1.0);
        let tp = o.closest_point(&x).unwrap();
        assert!(
            (tp.p - param(bt, bp)).norm() < 1e-6,
            "{:?} vs {:?}",
            tp.p,
            param(bt, bp)
        );
        assert!((tp.d - best).abs() < 1e-6);
        assert!(tp.d > 0.0);
    }

    #[test]
    fn sphere_weingarten_closed_forms() {
        let o = SurfaceOracle::new(Surface::Sphere { radius: 1.0 });
        let h = o.weingarten(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((h - Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0))).norm() < 1e-15);
        let o = SurfaceOracle::new(Surface::Sphere { radius: 2.0 });
        let h = o.weingarten(&Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((h - Mat3::from_diagonal(&Vec3::new(0.5, 0.5, 0.0))).norm() < 1e-15);
    }

    fn fd_weingarten(o: &SurfaceOracle, x: &Vec3, step: f64) -> Mat3 {
        let nu = |y: Vec3| o.closest_point(&y).unwrap().nu;
        let mut h = Mat3::zeros();
        for j in 0..3 {
            let e = Vec3::ith(j, step);
            let col = (-nu(x + 2.0 * e) + 8.0 * nu(x + e) - 8.0 * nu(x - e) + nu(x - 2.0 * e))
                / (12.0 * step);
            h.set_column(j, &col);
        }
        h
    }

    #[test]
    fn ellipsoid_weingarten_matches_finite_differences() {
        let o = ellipsoid();
        for x in [
            Vec3::new(0.0, 0.0, 1.3),
            Vec3::new(0.5, -0.4, 1.0),
            Vec3::new(0.9, 0.5, 0.3) * 1.05,
        ] {
            let h = o.weingarten(&x).unwrap();
            let fd = fd_weingarten(&o, &x, 1e-3);
            assert!((h - fd).abs().max() < 1e-6, "{h} vs {fd}");
        }
    }

    #[test]
    fn extension_examples() {
        let o = SurfaceOracle::new(Surface::Sphere { radius: 1.0 }).with_tube_width(2.0);
        let x = Vec3::new(0.0, 0.0, 2.0);
        assert_eq!(o.evaluate_extension(|_| 3.5, &x).unwrap(), 3.5);
        assert!((o.evaluate_extension(|y| y[2], &x).unwrap() - 1.0).abs() < 1e-15);
        let e = ellipsoid();
        let x = Vec3::new(0.7, 0.6, 0.8);
        let p = e.closest_point(&x).unwrap().p;
        assert_eq!(
            e.evaluate_extension(|y| y[0] * y[1], &x).unwrap(),
            p[0] * p[1]
        );
    }

    #[test]
    fn outside_tube_is_rejected() {
        let o = ellipsoid();
        assert!(matches!(
            o.closest_point(&Vec3::new(3.0, 0.0, 0.0)),
            Err(Error::OutsideTube { .. })
        ));
    }

    fn tube_point() -> impl Strategy<Value = Vec3> {
        (
            0.0..std::f64::consts::PI,
            0.0..2.0 * std::f64::consts::PI,
            -0.25..0.25f64,
        )
            .prop_map(|(th, ph, off)| {
                let s = [1.1, 1.2, 1.3];
                let y = Vec3::new(
                    s[0] * th.sin() * ph.cos(),
                    s[1] * th.sin() * ph.sin(),
                    s[2] * th.cos(),
                );
                let n = Surface::Ellipsoid { axes: s }.level_set_normal(&y);
                y + off * n
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn tube_point_invariants(x in tube_point()) {
            let tp = ellipsoid().closest_point(&x).unwrap();
            prop_assert!((tp.nu.norm() - 1.0).abs() < 1e-12);
            prop_assert!((tp.h * tp.nu).norm() < 1e-8);
            prop_assert!((tp.h - tp.h.transpose()).abs().max() < 1e-12);
            prop_assert!((tp.pi * tp.pi - tp.pi).abs().max() < 1e-12);
            prop_assert!((tp.pi - tp.pi.transpose()).abs().max() < 1e-12);
            prop_assert!((tp.p + tp.d * tp.nu - x).norm() < 1e-10 * x.norm().max(1.0));
            let phi = Surface::Ellipsoid { axes: [1.1, 1.2, 1.3] }.level_set(&tp.p);
            prop_assert!(phi.abs() < 1e-13);
        }

        #[test]
        fn normal_line_identity(x in tube_point()) {
            let o = ellipsoid();
            let tp = o.closest_point(&x).unwrap();
            for s in [-0.05, 0.0, 0.05] {
                let y = tp.p + s * 1.1 * tp.nu;
                let q = o.closest_point(&y).unwrap();
                prop_assert!((q.p - tp.p).norm() < 1e-9);
                let f = |z: &Vec3| z[0] * z[1] + z[2].powi(3);
                prop_assert!((o.evaluate_extension(f, &y).unwrap() - f(&tp.p)).abs() < 1e-9);
            }
        }
    }
}
