//! View synthesis: reconstruct the target frame by sampling a source frame at
//! locations computed from distance + pose + camera model.
//!
//! All warps are total functions: geometric failures (behind the camera,
//! outside the fisheye range, outside source bounds) land in the validity
//! mask instead of errors, and losses average only over valid pixels.
//!
//! [`WarpPlan`] holds the per-pixel projected coordinates and, on request,
//! the hand-derived Jacobians d(u,v)/d(distance) and d(u,v)/d(twist) that the
//! reverse-mode tape consumes.

use nalgebra::Vector3;

use crate::geometry::{Camera, Pose};
use crate::grid::{DistanceMap, Grid, Image, SegMask, ValidityMask};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Bilinear,
    Nearest,
}

/// Cross-frame distance pair for the consistency loss: `transformed` carries
/// the distances of target points expressed after the rigid transform,
/// `sampled` the other frame's estimate sampled at the projected pixels.
#[derive(Clone, Debug)]
pub struct WarpedDistancePair {
    pub transformed: DistanceMap,
    pub sampled: DistanceMap,
    pub valid: ValidityMask,
}

/// Per-pixel warp geometry for one (distance map, pose, camera) triple.
#[derive(Clone, Debug)]
pub struct WarpPlan {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
    /// Projected source coordinates per target pixel.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Distance of the transformed point under the camera's semantics.
    pub trans_dist: Vec<f64>,
    /// d(u,v)/d(distance at this pixel); empty unless jacobians requested.
    pub g_d: Vec<[f64; 2]>,
    /// d(u,v)/d(twist), row-major 2x6 ([w0..w2, t0..t2]).
    pub g_t: Vec<[f64; 12]>,
    /// d(trans_dist)/d(distance at this pixel).
    pub td_d: Vec<f64>,
    /// d(trans_dist)/d(twist).
    pub td_t: Vec<[f64; 6]>,
}

impl WarpPlan {
    pub fn validity(&self) -> ValidityMask {
        Grid::from_vec(self.width, self.height, self.valid.clone()).expect("plan shape")
    }
}

/// Project every target pixel through `distance` and `pose` into the source
/// view. `with_jacobians` additionally fills the derivative tables.
pub fn plan_warp(
    cam: &Camera,
    distance: &DistanceMap,
    pose: &Pose,
    with_jacobians: bool,
) -> Result<WarpPlan> {
    let (w, h) = (cam.width(), cam.height());
    if distance.width() != w || distance.height() != h {
        return Err(Error::ShapeMismatch(format!(
            "distance map {}x{} does not match camera {}x{}",
            distance.width(),
            distance.height(),
            w,
            h
        )));
    }
    let n = w * h;
    let mut plan = WarpPlan {
        width: w,
        height: h,
        valid: vec![false; n],
        u: vec![0.0; n],
        v: vec![0.0; n],
        trans_dist: vec![0.0; n],
        g_d: Vec::new(),
        g_t: Vec::new(),
        td_d: Vec::new(),
        td_t: Vec::new(),
    };
    if with_jacobians {
        plan.g_d = vec![[0.0; 2]; n];
        plan.g_t = vec![[0.0; 12]; n];
        plan.td_d = vec![0.0; n];
        plan.td_t = vec![[0.0; 6]; n];
    }

    let rot = *pose.rotation();
    for vy in 0..h {
        for ux in 0..w {
            let i = vy * w + ux;
            let d = distance.at(vy, ux);
            if !(d > 0.0) || !d.is_finite() {
                continue;
            }
            let ray = match cam.ray(ux as f64, vy as f64) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let p = ray * d;
            let q = pose.apply(&p);
            let (proj, jac) = cam.project_with_jacobian(&q);
            plan.u[i] = proj.u;
            plan.v[i] = proj.v;
            plan.trans_dist[i] = cam.distance_of(&q);
            plan.valid[i] = proj.valid;
            if !proj.valid {
                continue;
            }
            if with_jacobians {
                let jac = jac.expect("valid projection carries a jacobian");
                // q = R (d * ray) + t
                let dq_dd = rot * ray;
                let dq_dw = pose.rotate_point_jacobian(&p);
                let guv_d = jac * dq_dd;
                plan.g_d[i] = [guv_d.x, guv_d.y];
                let guv_w = jac * dq_dw;
                let mut gt = [0.0; 12];
                for col in 0..3 {
                    gt[col] = guv_w[(0, col)];
                    gt[6 + col] = guv_w[(1, col)];
                    // d q / d t = I, so the translation block is jac itself.
                    gt[3 + col] = jac[(0, col)];
                    gt[9 + col] = jac[(1, col)];
                }
                plan.g_t[i] = gt;
                let dd_dq = cam.distance_jacobian(&q);
                plan.td_d[i] = dd_dq.dot(&dq_dd);
                let mut tdt = [0.0; 6];
                for col in 0..3 {
                    tdt[col] = dd_dq.dot(&Vector3::new(
                        dq_dw[(0, col)],
                        dq_dw[(1, col)],
                        dq_dw[(2, col)],
                    ));
                    tdt[3 + col] = dd_dq[col];
                }
                plan.td_t[i] = tdt;
            }
        }
    }
    Ok(plan)
}

/// Bilinear corner indices and weights; caller guarantees (u, v) lie in
/// `[0, w-1] x [0, h-1]`. Corner order: (tl, tr, bl, br).
#[inline]
pub(crate) fn bilinear_weights(
    u: f64,
    v: f64,
    w: usize,
    h: usize,
) -> ([usize; 4], [f64; 4], f64, f64) {
    let u0 = (u.floor() as isize).clamp(0, w as isize - 1) as usize;
    let v0 = (v.floor() as isize).clamp(0, h as isize - 1) as usize;
    let u1 = (u0 + 1).min(w - 1);
    let v1 = (v0 + 1).min(h - 1);
    let fu = (u - u0 as f64).clamp(0.0, 1.0);
    let fv = (v - v0 as f64).clamp(0.0, 1.0);
    let idx = [v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1];
    let wts = [
        (1.0 - fu) * (1.0 - fv),
        fu * (1.0 - fv),
        (1.0 - fu) * fv,
        fu * fv,
    ];
    (idx, wts, fu, fv)
}

/// Derivative of the bilinear sample with respect to (u, v) given the four
/// corner values in (tl, tr, bl, br) order.
#[inline]
pub(crate) fn bilinear_derivative(corners: [f64; 4], fu: f64, fv: f64) -> (f64, f64) {
    let [a, b, c, d] = corners;
    let du = (1.0 - fv) * (b - a) + fv * (d - c);
    let dv = (1.0 - fu) * (c - a) + fu * (d - b);
    (du, dv)
}

#[inline]
pub(crate) fn in_sample_bounds(u: f64, v: f64, w: usize, h: usize) -> bool {
    u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64
}

#[inline]
pub(crate) fn sample_scalar(data: &[f64], w: usize, h: usize, u: f64, v: f64) -> f64 {
    let (idx, wts, _, _) = bilinear_weights(u, v, w, h);
    wts[0] * data[idx[0]] + wts[1] * data[idx[1]] + wts[2] * data[idx[2]] + wts[3] * data[idx[3]]
}

/// Sample an image at continuous coordinates: bilinear = weighted 4-neighbor
/// average, nearest = round half up. Out-of-bounds pixels get value 0 and
/// validity 0.
pub fn sample(img: &Image, coords: &Grid<[f64; 2]>, mode: SampleMode) -> (Image, ValidityMask) {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = Image::zeros(coords.width(), coords.height(), c);
    let mut valid = Grid::filled(coords.width(), coords.height(), false);
    for vy in 0..coords.height() {
        for ux in 0..coords.width() {
            let [u, v] = coords.at(vy, ux);
            if !u.is_finite() || !v.is_finite() || !in_sample_bounds(u, v, w, h) {
                continue;
            }
            valid.set(vy, ux, true);
            match mode {
                SampleMode::Bilinear => {
                    let (idx, wts, _, _) = bilinear_weights(u, v, w, h);
                    let d = img.data();
                    for ch in 0..c {
                        let val = wts[0] * d[idx[0] * c + ch]
                            + wts[1] * d[idx[1] * c + ch]
                            + wts[2] * d[idx[2] * c + ch]
                            + wts[3] * d[idx[3] * c + ch];
                        out.set(vy, ux, ch, val);
                    }
                }
                SampleMode::Nearest => {
                    let un = ((u + 0.5).floor() as usize).min(w - 1);
                    let vn = ((v + 0.5).floor() as usize).min(h - 1);
                    for ch in 0..c {
                        out.set(vy, ux, ch, img.at(vn, un, ch));
                    }
                }
            }
        }
    }
    (out, valid)
}

/// Reconstruct the target view from a source image: per pixel, unproject with
/// the distance map, transform by the pose, project into the source, sample.
pub fn synthesize_view(
    src: &Image,
    distance: &DistanceMap,
    pose: &Pose,
    cam: &Camera,
    mode: SampleMode,
) -> Result<(Image, ValidityMask)> {
    if src.width() != cam.width() || src.height() != cam.height() {
        return Err(Error::ShapeMismatch(
            "source image does not match camera size".into(),
        ));
    }
    let plan = plan_warp(cam, distance, pose, false)?;
    let coords = coords_of(&plan);
    let (img, sample_valid) = sample(src, &coords, mode);
    Ok((img, plan.validity().and(&sample_valid)))
}

/// Warp a segmentation mask with nearest-neighbor sampling; never invents a
/// label absent from the source. Invalid pixels keep label 0.
pub fn warp_segmentation(
    mask_src: &SegMask,
    distance: &DistanceMap,
    pose: &Pose,
    cam: &Camera,
) -> Result<(SegMask, ValidityMask)> {
    if mask_src.width() != cam.width() || mask_src.height() != cam.height() {
        return Err(Error::ShapeMismatch(
            "segmentation mask does not match camera size".into(),
        ));
    }
    let plan = plan_warp(cam, distance, pose, false)?;
    let (w, h) = (cam.width(), cam.height());
    let mut out = Grid::filled(w, h, 0u16);
    let mut valid = Grid::filled(w, h, false);
    for vy in 0..h {
        for ux in 0..w {
            let i = vy * w + ux;
            if !plan.valid[i] || !in_sample_bounds(plan.u[i], plan.v[i], w, h) {
                continue;
            }
            let un = ((plan.u[i] + 0.5).floor() as usize).min(w - 1);
            let vn = ((plan.v[i] + 0.5).floor() as usize).min(h - 1);
            out.set(vy, ux, mask_src.at(vn, un));
            valid.set(vy, ux, true);
        }
    }
    Ok((out, valid))
}

/// Both halves of the cross-frame distance comparison: the transformed
/// distances of this frame's points and the other frame's estimate sampled at
/// the projected pixels.
pub fn project_distances(
    d_t: &DistanceMap,
    d_other: &DistanceMap,
    pose: &Pose,
    cam: &Camera,
) -> Result<WarpedDistancePair> {
    if !d_t.same_shape(d_other) {
        return Err(Error::ShapeMismatch(
            "distance maps have different shapes".into(),
        ));
    }
    let plan = plan_warp(cam, d_t, pose, false)?;
    let (w, h) = (plan.width, plan.height);
    let mut transformed = Grid::zeros(w, h);
    let mut sampled = Grid::zeros(w, h);
    let mut valid = Grid::filled(w, h, false);
    for vy in 0..h {
        for ux in 0..w {
            let i = vy * w + ux;
            if !plan.valid[i] || !in_sample_bounds(plan.u[i], plan.v[i], w, h) {
                continue;
            }
            transformed.set(vy, ux, plan.trans_dist[i]);
            sampled.set(
                vy,
                ux,
                sample_scalar(d_other.data(), w, h, plan.u[i], plan.v[i]),
            );
            valid.set(vy, ux, true);
        }
    }
    Ok(WarpedDistancePair {
        transformed,
        sampled,
        valid,
    })
}

fn coords_of(plan: &WarpPlan) -> Grid<[f64; 2]> {
    Grid::from_fn(plan.width, plan.height, |v, u| {
        let i = v * plan.width + u;
        if plan.valid[i] {
            [plan.u[i], plan.v[i]]
        } else {
            [f64::NEG_INFINITY, f64::NEG_INFINITY]
        }
    })
}
