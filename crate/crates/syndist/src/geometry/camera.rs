//! Pinhole and polynomial fisheye camera models.
//!
//! Both kinds share one interface: `unproject(pixel, d) = d * ray(pixel)`,
//! where the ray is a unit direction for the fisheye model (so `d` is the
//! radial distance of the 3D point) and `(x_n, y_n, 1)` for the pinhole model
//! (so `d` is the z-depth). `distance_of` applies the matching semantics.
//!
//! The fisheye model maps incidence angle to pixel radius with the 4th-order
//! polynomial r(theta) = a1*theta + a2*theta^2 + a3*theta^3 + a4*theta^4,
//! inverted by Newton iteration seeded from a lookup table.

use nalgebra::{Matrix2x3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default maximum incidence angle for the fisheye model.
pub const DEFAULT_THETA_MAX: f64 = 0.55 * std::f64::consts::PI;

const LUT_SIZE: usize = 1024;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraKind {
    Pinhole,
    FisheyePolynomial,
}

/// Continuous projection result; `valid` is false when the precondition fails
/// or the pixel falls outside the sampleable image area.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub valid: bool,
}

#[derive(Clone, Debug)]
pub struct Camera {
    kind: CameraKind,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    poly: [f64; 4],
    width: usize,
    height: usize,
    theta_max: f64,
    /// r(theta) samples on a uniform theta grid, seeding the Newton inverse.
    lut: Vec<f64>,
}

/// On-disk intrinsics, readable from JSON or TOML.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraConfig {
    pub kind: CameraKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly: Option<[f64; 4]>,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_max: Option<f64>,
}

impl Camera {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pinhole focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        check_principal_point(cx, cy, width, height)?;
        Ok(Camera {
            kind: CameraKind::Pinhole,
            fx,
            fy,
            cx,
            cy,
            poly: [0.0; 4],
            width,
            height,
            theta_max: std::f64::consts::FRAC_PI_2,
            lut: Vec::new(),
        })
    }

    pub fn fisheye(
        poly: [f64; 4],
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        theta_max: Option<f64>,
    ) -> Result<Self> {
        check_principal_point(cx, cy, width, height)?;
        let theta_max = theta_max.unwrap_or(DEFAULT_THETA_MAX);
        if !(theta_max > 0.0 && theta_max < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "theta_max must lie in (0, pi), got {theta_max}"
            )));
        }
        // r(theta) must be strictly increasing on [0, theta_max]; checked by
        // sampling the same grid that seeds the inverse.
        let mut lut = Vec::with_capacity(LUT_SIZE);
        let mut prev = -f64::INFINITY;
        for i in 0..LUT_SIZE {
            let theta = theta_max * i as f64 / (LUT_SIZE - 1) as f64;
            let r = poly_eval(&poly, theta);
            if r <= prev {
                return Err(Error::InvalidArgument(format!(
                    "fisheye polynomial is not strictly increasing near theta={theta:.4}"
                )));
            }
            prev = r;
            lut.push(r);
        }
        Ok(Camera {
            kind: CameraKind::FisheyePolynomial,
            fx: 0.0,
            fy: 0.0,
            cx,
            cy,
            poly,
            width,
            height,
            theta_max,
            lut,
        })
    }

    pub fn from_config(cfg: &CameraConfig) -> Result<Self> {
        match cfg.kind {
            CameraKind::Pinhole => {
                let fx = cfg.fx.ok_or_else(|| Error::Config("pinhole camera needs fx".into()))?;
                let fy = cfg.fy.ok_or_else(|| Error::Config("pinhole camera needs fy".into()))?;
                Camera::pinhole(fx, fy, cfg.cx, cfg.cy, cfg.width, cfg.height)
            }
            CameraKind::FisheyePolynomial => {
                let poly = cfg
                    .poly
                    .ok_or_else(|| Error::Config("fisheye camera needs poly coefficients".into()))?;
                Camera::fisheye(poly, cfg.cx, cfg.cy, cfg.width, cfg.height, cfg.theta_max)
            }
        }
    }

    pub fn to_config(&self) -> CameraConfig {
        match self.kind {
            CameraKind::Pinhole => CameraConfig {
                kind: self.kind,
                fx: Some(self.fx),
                fy: Some(self.fy),
                cx: self.cx,
                cy: self.cy,
                poly: None,
                width: self.width,
                height: self.height,
                theta_max: None,
            },
            CameraKind::FisheyePolynomial => CameraConfig {
                kind: self.kind,
                fx: None,
                fy: None,
                cx: self.cx,
                cy: self.cy,
                poly: Some(self.poly),
                width: self.width,
                height: self.height,
                theta_max: Some(self.theta_max),
            },
        }
    }

    /// Load intrinsics from a `.json` or `.toml` file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: CameraConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        Camera::from_config(&cfg)
    }

    pub fn kind(&self) -> CameraKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// True when a continuous pixel coordinate can be bilinearly sampled.
    #[inline]
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Ray through a pixel: unit direction for fisheye, (x_n, y_n, 1) for
    /// pinhole, so that `d * ray` realizes the camera's distance semantics.
    pub fn ray(&self, u: f64, v: f64) -> Result<Vector3<f64>> {
        match self.kind {
            CameraKind::Pinhole => Ok(Vector3::new(
                (u - self.cx) / self.fx,
                (v - self.cy) / self.fy,
                1.0,
            )),
            CameraKind::FisheyePolynomial => {
                let du = u - self.cx;
                let dv = v - self.cy;
                let r = (du * du + dv * dv).sqrt();
                let theta = self.inverse_poly(r)?;
                if r < 1e-12 {
                    return Ok(Vector3::new(0.0, 0.0, 1.0));
                }
                let (st, ct) = (theta.sin(), theta.cos());
                Ok(Vector3::new(st * du / r, st * dv / r, ct))
            }
        }
    }

    /// Back-project a pixel at the given distance (radial for fisheye,
    /// z-depth for pinhole).
    pub fn unproject(&self, u: f64, v: f64, distance: f64) -> Result<Vector3<f64>> {
        if !(distance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "unproject needs a positive distance, got {distance}"
            )));
        }
        if !self.in_bounds(u, v) {
            return Err(Error::InvalidArgument(format!(
                "pixel ({u}, {v}) outside image bounds {}x{}",
                self.width, self.height
            )));
        }
        Ok(self.ray(u, v)? * distance)
    }

    /// Distance value of a camera-frame point under this camera's semantics.
    #[inline]
    pub fn distance_of(&self, p: &Vector3<f64>) -> f64 {
        match self.kind {
            CameraKind::Pinhole => p.z,
            CameraKind::FisheyePolynomial => p.norm(),
        }
    }

    /// Gradient of [`Camera::distance_of`] with respect to the point.
    #[inline]
    pub fn distance_jacobian(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self.kind {
            CameraKind::Pinhole => Vector3::new(0.0, 0.0, 1.0),
            CameraKind::FisheyePolynomial => {
                let n = p.norm();
                if n > 0.0 {
                    p / n
                } else {
                    Vector3::zeros()
                }
            }
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        self.project_impl(p).0
    }

    /// Projection plus the 2x3 Jacobian d(u,v)/d(x,y,z) (None when invalid).
    pub fn project_with_jacobian(&self, p: &Vector3<f64>) -> (Projection, Option<Matrix2x3<f64>>) {
        self.project_impl(p)
    }

    fn project_impl(&self, p: &Vector3<f64>) -> (Projection, Option<Matrix2x3<f64>>) {
        let invalid = (
            Projection {
                u: 0.0,
                v: 0.0,
                valid: false,
            },
            None,
        );
        let (x, y, z) = (p.x, p.y, p.z);
        match self.kind {
            CameraKind::Pinhole => {
                if z <= 1e-9 {
                    return invalid;
                }
                let u = self.cx + self.fx * x / z;
                let v = self.cy + self.fy * y / z;
                let jac = Matrix2x3::new(
                    self.fx / z,
                    0.0,
                    -self.fx * x / (z * z),
                    0.0,
                    self.fy / z,
                    -self.fy * y / (z * z),
                );
                (
                    Projection {
                        u,
                        v,
                        valid: self.in_bounds(u, v),
                    },
                    Some(jac),
                )
            }
            CameraKind::FisheyePolynomial => {
                let rho2 = x * x + y * y;
                let rho = rho2.sqrt();
                if rho < 1e-12 * z.abs().max(1.0) {
                    // On-axis limit: r(theta) ~ a1*theta, theta ~ rho/z.
                    if z <= 1e-12 {
                        return invalid;
                    }
                    let a1 = self.poly[0];
                    let u = self.cx + a1 * x / z;
                    let v = self.cy + a1 * y / z;
                    let jac = Matrix2x3::new(a1 / z, 0.0, 0.0, 0.0, a1 / z, 0.0);
                    return (
                        Projection {
                            u,
                            v,
                            valid: self.in_bounds(u, v),
                        },
                        Some(jac),
                    );
                }
                let theta = rho.atan2(z);
                if theta > self.theta_max {
                    return invalid;
                }
                let r = poly_eval(&self.poly, theta);
                let dr = poly_deriv(&self.poly, theta);
                let u = self.cx + r * x / rho;
                let v = self.cy + r * y / rho;

                let denom = rho2 + z * z;
                let theta_x = z * x / (rho * denom);
                let theta_y = z * y / (rho * denom);
                let theta_z = -rho / denom;
                let rho3 = rho2 * rho;
                let jac = Matrix2x3::new(
                    dr * theta_x * x / rho + r * y * y / rho3,
                    dr * theta_y * x / rho - r * x * y / rho3,
                    dr * theta_z * x / rho,
                    dr * theta_x * y / rho - r * x * y / rho3,
                    dr * theta_y * y / rho + r * x * x / rho3,
                    dr * theta_z * y / rho,
                );
                (
                    Projection {
                        u,
                        v,
                        valid: self.in_bounds(u, v),
                    },
                    Some(jac),
                )
            }
        }
    }

    /// Invert r(theta) by Newton iteration seeded from the lookup table.
    pub fn inverse_poly(&self, r: f64) -> Result<f64> {
        debug_assert_eq!(self.kind, CameraKind::FisheyePolynomial);
        if r < 0.0 || r > self.lut[LUT_SIZE - 1] + 1e-9 {
            return Err(Error::OutOfRange(format!(
                "pixel radius {r} outside invertible range [0, {:.4}]",
                self.lut[LUT_SIZE - 1]
            )));
        }
        if r == 0.0 {
            return Ok(0.0);
        }
        // lut is strictly increasing; binary search for the bracketing cell.
        let idx = self.lut.partition_point(|&lr| lr < r).clamp(1, LUT_SIZE - 1);
        let step = self.theta_max / (LUT_SIZE - 1) as f64;
        let (r0, r1) = (self.lut[idx - 1], self.lut[idx]);
        let t0 = step * (idx - 1) as f64;
        let mut theta = t0 + step * (r - r0) / (r1 - r0);
        for _ in 0..NEWTON_MAX_ITERS {
            let f = poly_eval(&self.poly, theta) - r;
            let df = poly_deriv(&self.poly, theta);
            let delta = f / df;
            theta -= delta;
            theta = theta.clamp(0.0, self.theta_max);
            if delta.abs() < NEWTON_TOL {
                break;
            }
        }
        Ok(theta)
    }
}

fn check_principal_point(cx: f64, cy: f64, width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("image size must be nonzero".into()));
    }
    if !(0.0 <= cx && cx < width as f64 && 0.0 <= cy && cy < height as f64) {
        return Err(Error::InvalidArgument(format!(
            "principal point ({cx}, {cy}) outside image {width}x{height}"
        )));
    }
    Ok(())
}

#[inline]
fn poly_eval(a: &[f64; 4], theta: f64) -> f64 {
    theta * (a[0] + theta * (a[1] + theta * (a[2] + theta * a[3])))
}

#[inline]
fn poly_deriv(a: &[f64; 4], theta: f64) -> f64 {
    a[0] + theta * (2.0 * a[1] + theta * (3.0 * a[2] + 4.0 * a[3] * theta))
}
