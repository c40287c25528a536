//! Every scalar objective of the distance-estimation stack.
//!
//! The differentiable losses are written once as tape builders (`*_graph`)
//! and the plain per-operation entry points are thin wrappers that evaluate
//! the same graphs on constant leaves, so values and gradients can never
//! drift apart. Gradients come from [`crate::autodiff::Tape::backward`] and
//! are held to central finite differences by the test suite.

mod robust;
mod ssim;

pub use robust::{
    alpha_from_raw, fit_alpha, log_partition, log_partition_grad, log_partition_op,
    partition_quadrature, raw_from_alpha, rho_map_op, robust_nll, robust_nll_grad, robust_rho,
    RobustParams,
};
pub use ssim::{ssim_graph, ssim_map, SSIM_C1, SSIM_C2};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::grid::{DistanceMap, Grid, Image, SegMask, ValidityMask};
use crate::warp::WarpedDistancePair;
use crate::{Error, Result};

/// Which per-pixel residual the reconstruction loss uses.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ResidualModel {
    /// Plain |xi|, the baseline reconstruction residual.
    L1,
    /// The generalized robust loss; adaptive alpha when the params say so.
    Robust(RobustParams),
}

/// Weights and switches of the total objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// SSIM mixing weight of the reconstruction term.
    pub omega: f64,
    /// Smoothness weight.
    pub beta: f64,
    /// Cross-frame distance-consistency weight.
    pub gamma: f64,
    /// Fraction of frames the dynamic-object mask applies to.
    pub epsilon: f64,
    pub ssim_window: usize,
    /// Class ids of potentially dynamic objects.
    pub dc_classes: Vec<u16>,
    /// Motion score above which a frame counts as moving.
    pub motion_threshold: f64,
    /// Optional upper clamp of the per-pixel loss at this percentile.
    pub clip_percentile: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            omega: 0.85,
            beta: 1e-3,
            gamma: 1e-2,
            epsilon: 0.4,
            ssim_window: 3,
            dc_classes: vec![3, 4, 5],
            motion_threshold: 0.25,
            clip_percentile: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!(
                "omega must be in [0,1], got {}",
                self.omega
            )));
        }
        if self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("beta and gamma must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon must be in [0,1], got {}",
                self.epsilon
            )));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(Error::Config("ssim window must be odd".into()));
        }
        if let Some(q) = self.clip_percentile {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config("clip percentile must be in [0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Residual term as tape nodes.
#[derive(Clone, Copy)]
pub enum ResidualGraph {
    L1,
    Robust { alpha: Var, c: Var },
}

impl ResidualGraph {
    /// Lift an eager residual model onto the tape as constants.
    pub fn constant(tape: &mut Tape, model: &ResidualModel) -> ResidualGraph {
        match model {
            ResidualModel::L1 => ResidualGraph::L1,
            ResidualModel::Robust(p) => ResidualGraph::Robust {
                alpha: tape.const_scalar(p.alpha),
                c: tape.const_scalar(p.c),
            },
        }
    }
}

/// Per-pixel photometric loss map (channel-averaged):
/// omega * (1 - SSIM)/2 + (1 - omega) * residual(I_t - I_hat).
pub fn photometric_graph(
    tape: &mut Tape,
    target_channels: &[Var],
    warped_channels: &[Var],
    omega: f64,
    ssim_window: usize,
    residual: ResidualGraph,
) -> Var {
    assert_eq!(target_channels.len(), warped_channels.len());
    let channels = target_channels.len();
    let mut ssim_acc: Option<Var> = None;
    let mut res_acc: Option<Var> = None;
    for (&t_c, &w_c) in target_channels.iter().zip(warped_channels) {
        let s = ssim_graph(tape, t_c, w_c, ssim_window);
        ssim_acc = Some(match ssim_acc {
            Some(prev) => tape.add(prev, s),
            None => s,
        });
        let diff = tape.sub(t_c, w_c);
        let r = match residual {
            ResidualGraph::L1 => tape.abs(diff),
            ResidualGraph::Robust { alpha, c } => rho_map_op(tape, diff, alpha, c),
        };
        res_acc = Some(match res_acc {
            Some(prev) => tape.add(prev, r),
            None => r,
        });
    }
    let inv = 1.0 / channels as f64;
    // omega/2 - omega/2 * SSIM, channel-averaged.
    let ssim_term = tape.affine(ssim_acc.unwrap(), -0.5 * omega * inv, 0.5 * omega);
    let res_term = tape.affine(res_acc.unwrap(), (1.0 - omega) * inv, 0.0);
    tape.add(ssim_term, res_term)
}

/// Eager photometric loss map; zero on invalid pixels.
pub fn photometric_loss(
    target: &Image,
    reconstructed: &Image,
    cfg: &LossConfig,
    residual: &ResidualModel,
    valid: &ValidityMask,
) -> Result<Grid<f64>> {
    if !target.same_shape(reconstructed) {
        return Err(Error::ShapeMismatch(
            "photometric loss inputs differ in shape".into(),
        ));
    }
    if target.width() != valid.width() || target.height() != valid.height() {
        return Err(Error::ShapeMismatch("validity mask shape mismatch".into()));
    }
    let mut tape = Tape::new();
    let t_ch: Vec<Var> = (0..target.channels())
        .map(|c| tape.const_map(target.channel(c)))
        .collect();
    let w_ch: Vec<Var> = (0..target.channels())
        .map(|c| tape.const_map(reconstructed.channel(c)))
        .collect();
    let res = ResidualGraph::constant(&mut tape, residual);
    let map = photometric_graph(&mut tape, &t_ch, &w_ch, cfg.omega, cfg.ssim_window, res);
    let masked = tape.mask_select(map, valid, 0.0);
    Ok(tape.map(masked).clone())
}

/// Element-wise minimum over per-source loss maps.
pub fn min_reprojection(maps: &[Grid<f64>]) -> Result<Grid<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("min_reprojection needs at least one map".into()))?;
    let mut out = first.clone();
    for m in &maps[1..] {
        if !m.same_shape(first) {
            return Err(Error::ShapeMismatch(
                "min_reprojection maps differ in shape".into(),
            ));
        }
        out = out.zip_map(m, f64::min);
    }
    Ok(out)
}

/// Static-pixel mask: keep a pixel only where warping beats the raw source.
pub fn auto_mask(
    loss_warped_min: &Grid<f64>,
    loss_unwarped_min: &Grid<f64>,
) -> Result<Grid<bool>> {
    if !loss_warped_min.same_shape(loss_unwarped_min) {
        return Err(Error::ShapeMismatch("auto_mask maps differ in shape".into()));
    }
    Ok(loss_warped_min.zip_map(loss_unwarped_min, |w, u| w < u))
}

/// Edge-aware smoothness of the mean-normalized inverse distance, as a graph.
pub fn smoothness_graph(tape: &mut Tape, distance: Var, image: &Image) -> Var {
    let d = tape.map(distance);
    let (w, h) = (d.width(), d.height());
    assert!(w == image.width() && h == image.height());
    let inv = tape.recip(distance);
    let mean_inv = tape.mean(inv);
    let dstar = tape.div(inv, mean_inv);

    let wu = Grid::from_fn(w - 1, h, |v, u| {
        let mut g = 0.0;
        for c in 0..image.channels() {
            g += (image.at(v, u + 1, c) - image.at(v, u, c)).abs();
        }
        (-(g / image.channels() as f64)).exp()
    });
    let du = tape.diff_u(dstar);
    let adu = tape.abs(du);
    let wu_v = tape.const_map(wu);
    let pu = tape.mul(adu, wu_v);
    let mut total = tape.mean(pu);
    if h >= 2 {
        let wv = Grid::from_fn(w, h - 1, |v, u| {
            let mut g = 0.0;
            for c in 0..image.channels() {
                g += (image.at(v + 1, u, c) - image.at(v, u, c)).abs();
            }
            (-(g / image.channels() as f64)).exp()
        });
        let dv = tape.diff_v(dstar);
        let adv = tape.abs(dv);
        let wv_v = tape.const_map(wv);
        let pv = tape.mul(adv, wv_v);
        let mv = tape.mean(pv);
        total = tape.add(total, mv);
    }
    total
}

/// Eager edge-aware smoothness loss; requires strictly positive distances.
pub fn smoothness_loss(distance: &DistanceMap, image: &Image) -> Result<f64> {
    if distance.width() != image.width() || distance.height() != image.height() {
        return Err(Error::ShapeMismatch(
            "smoothness inputs differ in shape".into(),
        ));
    }
    if distance.data().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(
            "smoothness loss needs strictly positive distances".into(),
        ));
    }
    let mut tape = Tape::new();
    let d = tape.const_map(distance.clone());
    let s = smoothness_graph(&mut tape, d, image);
    Ok(tape.scalar(s))
}

/// Cross-frame distance consistency: mean absolute disagreement between
/// transformed and sampled distances, summed over both warp directions.
pub fn csdcl(pair_fwd: &WarpedDistancePair, pair_bwd: &WarpedDistancePair) -> Result<f64> {
    let mut total = 0.0;
    for (name, pair) in [("forward", pair_fwd), ("backward", pair_bwd)] {
        let n = pair.valid.count();
        if n == 0 {
            return Err(Error::DegenerateInput(format!(
                "{name} consistency term has no valid pixels"
            )));
        }
        let mut acc = 0.0;
        for i in 0..pair.valid.len() {
            if pair.valid.data()[i] {
                acc += (pair.transformed.data()[i] - pair.sampled.data()[i]).abs();
            }
        }
        total += acc / n as f64;
    }
    Ok(total)
}

/// Per-pixel posterior over S classes.
#[derive(Clone, Debug)]
pub struct ProbMap {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * classes {
            return Err(Error::ShapeMismatch("probability map size mismatch".into()));
        }
        for px in 0..width * height {
            let mut sum = 0.0;
            for s in 0..classes {
                let p = data[px * classes + s];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!(
                        "posterior entry {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "posterior at pixel {px} sums to {sum}"
                )));
            }
        }
        Ok(ProbMap {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, classes: usize) -> Self {
        ProbMap {
            width,
            height,
            classes,
            data: vec![1.0 / classes as f64; width * height * classes],
        }
    }

    /// One-hot posterior from labels in `1..=classes`.
    pub fn one_hot(labels: &SegMask, classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (px, &l) in labels.data().iter().enumerate() {
            if l < 1 || l as usize > classes {
                return Err(Error::OutOfRange(format!(
                    "label {l} outside 1..={classes}"
                )));
            }
            data[px * classes + (l as usize - 1)] = 1.0;
        }
        Ok(ProbMap {
            width: labels.width(),
            height: labels.height(),
            classes,
            data,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn at(&self, v: usize, u: usize, class: usize) -> f64 {
        self.data[(v * self.width + u) * self.classes + class]
    }
}

/// Mean cross-entropy of the posterior against integer labels in `1..=S`;
/// pixels with the ignore label are skipped.
pub fn cross_entropy(y: &ProbMap, labels: &SegMask, ignore_id: Option<u16>) -> Result<f64> {
    if y.width != labels.width() || y.height != labels.height() {
        return Err(Error::ShapeMismatch("cross-entropy shapes differ".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (px, &l) in labels.data().iter().enumerate() {
        if Some(l) == ignore_id {
            continue;
        }
        if l < 1 || l as usize > y.classes {
            return Err(Error::OutOfRange(format!(
                "label {l} outside 1..={}",
                y.classes
            )));
        }
        let p = y.data[px * y.classes + (l as usize - 1)].max(1e-300);
        total -= p.ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateInput(
            "every pixel carries the ignore label".into(),
        ));
    }
    Ok(total / n as f64)
}

/// L_r + beta * L_s + gamma * L_dc.
pub fn total_distance_loss(
    reconstruction: f64,
    smoothness: f64,
    consistency: f64,
    cfg: &LossConfig,
) -> f64 {
    reconstruction + cfg.beta * smoothness + cfg.gamma * consistency
}

/// Learnable per-task noise scales; strictly positive by construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TaskUncertainty {
    sigma1: f64,
    sigma2: f64,
}

impl TaskUncertainty {
    pub fn new(sigma1: f64, sigma2: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "task uncertainties must be positive, got ({sigma1}, {sigma2})"
            )));
        }
        Ok(TaskUncertainty { sigma1, sigma2 })
    }

    /// Exponential reparameterization: sigma = exp(log_sigma) > 0 always.
    pub fn from_log(log_sigma1: f64, log_sigma2: f64) -> Self {
        TaskUncertainty {
            sigma1: log_sigma1.exp(),
            sigma2: log_sigma2.exp(),
        }
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Homoscedastic task weighting:
/// L_tot/(2 sigma1^2) + L_ce/(2 sigma2^2) + log(1 + sigma1) + log(1 + sigma2).
pub fn mtl_weighted_loss(l_tot: f64, l_ce: f64, u: &TaskUncertainty) -> f64 {
    l_tot / (2.0 * u.sigma1 * u.sigma1)
        + l_ce / (2.0 * u.sigma2 * u.sigma2)
        + (1.0 + u.sigma1).ln()
        + (1.0 + u.sigma2).ln()
}

/// Gradient of [`mtl_weighted_loss`] with respect to (sigma1, sigma2).
pub fn mtl_grad_sigma(l_tot: f64, l_ce: f64, u: &TaskUncertainty) -> (f64, f64) {
    (
        -l_tot / u.sigma1.powi(3) + 1.0 / (1.0 + u.sigma1),
        -l_ce / u.sigma2.powi(3) + 1.0 / (1.0 + u.sigma2),
    )
}

/// Task weights 1/(2 sigma^2) applied to each loss.
pub fn mtl_task_weights(u: &TaskUncertainty) -> (f64, f64) {
    (
        1.0 / (2.0 * u.sigma1 * u.sigma1),
        1.0 / (2.0 * u.sigma2 * u.sigma2),
    )
}

/// q-th percentile (0..=1) of a value slice, linear interpolation.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - t) + sorted[i + 1] * t
    } else {
        sorted[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noisy(w: usize, h: usize, seed: u64) -> Image {
        Image::from_fn(w, h, 1, |v, u, _| {
            crate::synth::texture_value(u as f64 * 0.29, v as f64 * 0.41, seed, 0)
        })
    }

    fn all_valid(w: usize, h: usize) -> ValidityMask {
        Grid::filled(w, h, true)
    }

    #[test]
    fn photometric_loss_of_identical_images_is_zero() {
        let img = noisy(10, 8, 7);
        let cfg = LossConfig::default();
        let map =
            photometric_loss(&img, &img, &cfg, &ResidualModel::L1, &all_valid(10, 8)).unwrap();
        for &x in map.data() {
            assert!(x.abs() < 1e-12);
        }
    }

    #[test]
    fn omega_endpoints_reduce_to_pure_terms() {
        let a = noisy(9, 7, 1);
        let b = noisy(9, 7, 2);
        let valid = all_valid(9, 7);
        let l1 = ResidualModel::L1;

        let mut cfg = LossConfig {
            omega: 0.0,
            ..LossConfig::default()
        };
        let map = photometric_loss(&a, &b, &cfg, &l1, &valid).unwrap();
        for v in 0..7 {
            for u in 0..9 {
                let expect = (a.at(v, u, 0) - b.at(v, u, 0)).abs();
                assert_relative_eq!(map.at(v, u), expect, epsilon = 1e-12);
            }
        }

        cfg.omega = 1.0;
        let map = photometric_loss(&a, &b, &cfg, &l1, &valid).unwrap();
        let ssim = ssim_map(&a, &b, cfg.ssim_window).unwrap();
        for i in 0..map.len() {
            assert_relative_eq!(map.data()[i], (1.0 - ssim.data()[i]) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_pixels_are_zeroed() {
        let a = noisy(6, 6, 3);
        let b = noisy(6, 6, 4);
        let valid = Grid::from_fn(6, 6, |v, u| u >= 3 && v >= 1);
        let map =
            photometric_loss(&a, &b, &LossConfig::default(), &ResidualModel::L1, &valid).unwrap();
        for v in 0..6 {
            for u in 0..6 {
                if !valid.at(v, u) {
                    assert_eq!(map.at(v, u), 0.0);
                } else {
                    assert!(map.at(v, u) > 0.0);
                }
            }
        }
    }

    #[test]
    fn min_reprojection_examples() {
        let a = Grid::from_vec(2, 1, vec![1.0, 5.0]).unwrap();
        let b = Grid::from_vec(2, 1, vec![3.0, 2.0]).unwrap();
        assert_eq!(min_reprojection(&[a.clone()]).unwrap(), a);
        assert_eq!(min_reprojection(&[a.clone(), a.clone()]).unwrap(), a);
        let m = min_reprojection(&[a.clone(), b]).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0]);
        assert!(min_reprojection(&[]).is_err());
        // The minimum never exceeds any input.
        for i in 0..m.len() {
            assert!(m.data()[i] <= a.data()[i]);
        }
    }

    #[test]
    fn auto_mask_keeps_pixels_where_warping_wins() {
        let warped = Grid::from_vec(3, 1, vec![0.1, 0.5, 0.2]).unwrap();
        let unwarped = Grid::from_vec(3, 1, vec![0.2, 0.5, 0.1]).unwrap();
        let mask = auto_mask(&warped, &unwarped).unwrap();
        assert_eq!(mask.data(), &[true, false, false]);

        // Identical static frames: the unwarped loss is 0, so nothing survives.
        let zero = Grid::zeros(3, 1);
        let imperfect = Grid::from_vec(3, 1, vec![0.01, 0.02, 0.0]).unwrap();
        let mask = auto_mask(&imperfect, &zero).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn smoothness_of_constant_distance_is_zero() {
        let d = Grid::filled(8, 6, 3.0);
        let img = noisy(8, 6, 5);
        assert!(smoothness_loss(&d, &img).unwrap().abs() < 1e-12);
    }

    #[test]
    fn smoothness_matches_hand_computation_on_a_row() {
        // Inverse distances [1, 2, 3], constant image:
        // normalized inverse = [0.5, 1.0, 1.5], loss = mean(0.5, 0.5) = 0.5.
        let d = Grid::from_vec(3, 1, vec![1.0, 0.5, 1.0 / 3.0]).unwrap();
        let img = Image::from_fn(3, 1, 1, |_, _, _| 0.4);
        assert_relative_eq!(smoothness_loss(&d, &img).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn image_edges_discount_distance_edges() {
        let d = Grid::from_fn(8, 2, |_, u| if u < 4 { 2.0 } else { 4.0 });
        let flat = Image::from_fn(8, 2, 1, |_, _, _| 0.5);
        let edged = Image::from_fn(8, 2, 1, |_, u, _| if u < 4 { 0.1 } else { 0.9 });
        let on_flat = smoothness_loss(&d, &flat).unwrap();
        let on_edge = smoothness_loss(&d, &edged).unwrap();
        assert!(
            on_edge < on_flat,
            "edge-aware weighting failed: {on_edge} vs {on_flat}"
        );
    }

    #[test]
    fn smoothness_rejects_non_positive_distances() {
        let d = Grid::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let img = Image::from_fn(2, 1, 1, |_, _, _| 0.5);
        assert!(smoothness_loss(&d, &img).is_err());
    }

    #[test]
    fn csdcl_examples() {
        let t = Grid::from_fn(4, 3, |v, u| 2.0 + (v + u) as f64 * 0.1);
        let valid = Grid::filled(4, 3, true);
        let equal = WarpedDistancePair {
            transformed: t.clone(),
            sampled: t.clone(),
            valid: valid.clone(),
        };
        assert_eq!(csdcl(&equal, &equal).unwrap(), 0.0);

        let offset = WarpedDistancePair {
            transformed: t.clone(),
            sampled: t.map(|x| x + 0.1),
            valid: valid.clone(),
        };
        assert_relative_eq!(csdcl(&offset, &offset).unwrap(), 0.2, epsilon = 1e-12);

        let empty = WarpedDistancePair {
            transformed: t.clone(),
            sampled: t,
            valid: Grid::filled(4, 3, false),
        };
        assert!(matches!(
            csdcl(&empty, &offset),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let labels = Grid::from_fn(4, 2, |v, u| 1 + ((v + u) % 4) as u16);
        let one_hot = ProbMap::one_hot(&labels, 4).unwrap();
        assert_eq!(cross_entropy(&one_hot, &labels, None).unwrap(), 0.0);

        let uniform = ProbMap::uniform(4, 2, 4);
        assert_relative_eq!(
            cross_entropy(&uniform, &labels, None).unwrap(),
            4.0f64.ln(),
            epsilon = 1e-12
        );

        let ignored = cross_entropy(&uniform, &Grid::filled(4, 2, 7u16), Some(7));
        assert!(matches!(ignored, Err(Error::DegenerateInput(_))));

        let bad = cross_entropy(&uniform, &Grid::filled(4, 2, 9u16), None);
        assert!(matches!(bad, Err(Error::OutOfRange(_))));
    }

    #[test]
    fn total_loss_is_the_weighted_sum() {
        let cfg = LossConfig {
            beta: 0.1,
            gamma: 0.05,
            ..LossConfig::default()
        };
        assert_relative_eq!(
            total_distance_loss(1.0, 2.0, 3.0, &cfg),
            1.35,
            epsilon = 1e-12
        );
        let zero_weights = LossConfig {
            beta: 0.0,
            gamma: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(total_distance_loss(1.0, 9.0, 9.0, &zero_weights), 1.0);
        assert_eq!(total_distance_loss(0.0, 0.0, 0.0, &cfg), 0.0);
    }

    #[test]
    fn mtl_weighting_matches_hand_evaluation() {
        let u = TaskUncertainty::new(1.0, 2.0).unwrap();
        let got = mtl_weighted_loss(2.0, 4.0, &u);
        // 2/2 + 4/8 + ln 2 + ln 3 = 1.5 + ln 6.
        assert_relative_eq!(got, 1.5 + 6.0f64.ln(), epsilon = 1e-12);
        assert!((got - 3.29176).abs() < 1e-5);

        // Swapping (L_tot, sigma1) with (L_ce, sigma2) leaves it unchanged.
        let swapped = TaskUncertainty::new(2.0, 1.0).unwrap();
        assert_relative_eq!(got, mtl_weighted_loss(4.0, 2.0, &swapped), epsilon = 1e-12);
    }

    #[test]
    fn task_weight_decreases_with_sigma() {
        let mut prev = f64::INFINITY;
        for k in 1..30 {
            let sigma = 0.2 * k as f64;
            let u = TaskUncertainty::new(sigma, 1.0).unwrap();
            let (w1, _) = mtl_task_weights(&u);
            assert!(w1 < prev);
            prev = w1;
        }
    }

    #[test]
    fn mtl_sigma_gradient_is_analytic_and_matches_finite_differences() {
        let u = TaskUncertainty::new(1.0, 2.0).unwrap();
        let (g1, g2) = mtl_grad_sigma(2.0, 4.0, &u);
        // -L_tot/sigma1^3 + 1/(1+sigma1) = -2 + 0.5.
        assert_relative_eq!(g1, -1.5, epsilon = 1e-12);
        let h = 1e-6;
        let up = TaskUncertainty::new(1.0, 2.0 + h).unwrap();
        let dn = TaskUncertainty::new(1.0, 2.0 - h).unwrap();
        let fd = (mtl_weighted_loss(2.0, 4.0, &up) - mtl_weighted_loss(2.0, 4.0, &dn)) / (2.0 * h);
        assert!((g2 - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn probmap_validates_rows() {
        assert!(ProbMap::new(1, 1, 2, vec![0.7, 0.4]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![0.7, 0.3]).is_ok());
        assert!(ProbMap::new(1, 1, 2, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let vals = [1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&vals, 0.0), 1.0);
        assert_eq!(percentile(&vals, 1.0), 4.0);
        assert_relative_eq!(percentile(&vals, 0.5), 2.5, epsilon = 1e-12);
    }
}
