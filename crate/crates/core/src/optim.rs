//! Box-clamped BFGS with backtracking line search.

use nalgebra::Matrix4;

use crate::error::Result;
use crate::model::Vec4;

const ARMIJO: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Bfgs {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec4,
        pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub boundary_hit: bool,
}

impl Bfgs {
    fn clamp(&self, x: &Vec4) -> (Vec4, bool) {
        let clamped = x.map(|v| v.clamp(self.lower, self.upper));
        let hit = clamped != *x;
        (clamped, hit)
    }

    /// Gradient with components zeroed where the box blocks descent.
    fn projected(&self, x: &Vec4, g: &Vec4) -> Vec4 {
        Vec4::from_fn(|i, _| {
            if (x[i] <= self.lower && g[i] > 0.0) || (x[i] >= self.upper && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
    }

    /// Minimizes `f`, which returns the value and gradient at a point. The
    /// value at `x0` must be finite.
    pub fn minimize<F>(&self, mut f: F, x0: &Vec4) -> Result<Outcome>
    where
        F: FnMut(&Vec4) -> Result<(f64, Vec4)>,
    {
        let (mut x, mut boundary_hit) = self.clamp(x0);
        let (mut fx, mut g) = f(&x)?;
        let mut h = Matrix4::<f64>::identity();
        let mut h_is_identity = true;
        let mut iterations = 0;

        loop {
            let pg = self.projected(&x, &g);
            let gnorm = pg.norm();
            if gnorm <= self.gradient_tolerance {
                return Ok(Outcome { x, gradient_norm: gnorm, iterations, converged: true, boundary_hit });
            }
            if iterations >= self.max_iterations || !fx.is_finite() || !gnorm.is_finite() {
                return Ok(Outcome { x, gradient_norm: gnorm, iterations, converged: false, boundary_hit });
            }
            iterations += 1;

            // variables held at the box stay fixed for this step
            let active = Vec4::from_fn(|i, _| if pg[i] == 0.0 && g[i] != 0.0 { 0.0 } else { 1.0 });
            let mut d = -(h * pg).component_mul(&active);
            if pg.dot(&d) >= 0.0 {
                h = Matrix4::identity();
                h_is_identity = true;
                d = -pg;
            }
            // keep the first unscaled steps modest in log space
            let mut alpha = if h_is_identity { (1.0 / d.norm()).min(1.0) } else { 1.0 };

            let slope = pg.dot(&d);
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let (trial, hit) = self.clamp(&(x + d * alpha));
                let (ft, gt) = f(&trial)?;
                if ft.is_finite() {
                    let sufficient = ft <= fx + ARMIJO * alpha * slope.min(0.0);
                    // near the optimum the decrease drops below rounding of f
                    let flat = ft <= fx + 8.0 * f64::EPSILON * fx.abs() && self.projected(&trial, &gt).norm() < gnorm;
                    if sufficient || flat {
                        accepted = Some((trial, ft, gt, hit));
                        break;
                    }
                }
                alpha *= SHRINK;
            }

            match accepted {
                Some((xn, fnew, gn, hit)) => {
                    boundary_hit |= hit;
                    let s = xn - x;
                    let y = gn - g;
                    let sy = s.dot(&y);
                    if sy > 1e-12 * s.norm() * y.norm() {
                        if h_is_identity {
                            h *= sy / y.dot(&y);
                        }
                        let rho = 1.0 / sy;
                        let i = Matrix4::<f64>::identity();
                        let left = i - s * y.transpose() * rho;
                        let right = i - y * s.transpose() * rho;
                        h = left * h * right + s * s.transpose() * rho;
                        h_is_identity = false;
                    }
                    x = xn;
                    fx = fnew;
                    g = gn;
                }
                None if !h_is_identity => {
                    h = Matrix4::identity();
                    h_is_identity = true;
                }
                None => {
                    return Ok(Outcome { x, gradient_norm: gnorm, iterations, converged: false, boundary_hit });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock_like_quartic() {
        let bfgs = Bfgs { max_iterations: 2000, gradient_tolerance: 1e-10, lower: -30.0, upper: 10.0 };
        let target = Vec4::new(1.0, -2.0, 0.5, 3.0);
        let f = |x: &Vec4| {
            let d = x - target;
            let v = d.dot(&d) + (x[0] - x[1]).powi(2) * 10.0 + d[2].powi(4);
            let mut g = d * 2.0;
            g[0] += 20.0 * (x[0] - x[1]);
            g[1] -= 20.0 * (x[0] - x[1]);
            g[2] += 4.0 * d[2].powi(3);
            Ok((v, g))
        };
        let out = bfgs.minimize(f, &Vec4::zeros()).unwrap();
        assert!(out.converged);
        assert!(out.gradient_norm <= 1e-10);
        // (x0 - x1) term pulls the first two together
        assert!((out.x[2] - 0.5).abs() < 1e-6 && (out.x[3] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn clamps_to_box_and_flags() {
        let bfgs = Bfgs { max_iterations: 500, gradient_tolerance: 1e-9, lower: -30.0, upper: 10.0 };
        // decreasing without bound in the first coordinate
        let f = |x: &Vec4| {
            let v = -x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3];
            Ok((v, Vec4::new(-1.0, 2.0 * x[1], 2.0 * x[2], 2.0 * x[3])))
        };
        let out = bfgs.minimize(f, &Vec4::repeat(0.3)).unwrap();
        assert!(out.boundary_hit);
        assert_eq!(out.x[0], 10.0);
        assert!(out.converged);
    }
}
