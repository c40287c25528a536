//! Structural similarity over a box-filtered window.
//!
//! Local means, variances, and covariance come from a box filter with reflect
//! padding; stabilizers C1 = 0.01^2 and C2 = 0.03^2 assume intensities in
//! [0, 1]. Outputs lie in [-1, 1] with SSIM(x, x) = 1.

use crate::autodiff::{Tape, Var};
use crate::grid::{Grid, Image};
use crate::{Error, Result};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-pixel SSIM of two single-channel maps as a tape graph.
pub fn ssim_graph(tape: &mut Tape, x: Var, y: Var, window: usize) -> Var {
    let radius = window / 2;
    let mu_x = tape.box_filter(x, radius);
    let mu_y = tape.box_filter(y, radius);
    let xx = tape.mul(x, x);
    let yy = tape.mul(y, y);
    let xy = tape.mul(x, y);
    let e_xx = tape.box_filter(xx, radius);
    let e_yy = tape.box_filter(yy, radius);
    let e_xy = tape.box_filter(xy, radius);
    let mu_xx = tape.mul(mu_x, mu_x);
    let mu_yy = tape.mul(mu_y, mu_y);
    let mu_xy = tape.mul(mu_x, mu_y);
    let var_x = tape.sub(e_xx, mu_xx);
    let var_y = tape.sub(e_yy, mu_yy);
    let cov = tape.sub(e_xy, mu_xy);

    let l_num = {
        let t = tape.affine(mu_xy, 2.0, SSIM_C1);
        t
    };
    let c_num = tape.affine(cov, 2.0, SSIM_C2);
    let num = tape.mul(l_num, c_num);
    let sum_mu = tape.add(mu_xx, mu_yy);
    let l_den = tape.affine(sum_mu, 1.0, SSIM_C1);
    let sum_var = tape.add(var_x, var_y);
    let c_den = tape.affine(sum_var, 1.0, SSIM_C2);
    let den = tape.mul(l_den, c_den);
    tape.div(num, den)
}

/// Per-pixel SSIM map of two images, averaged over channels.
pub fn ssim_map(a: &Image, b: &Image, window: usize) -> Result<Grid<f64>> {
    if !a.same_shape(b) {
        return Err(Error::InvalidArgument(
            "ssim inputs must have identical shapes".into(),
        ));
    }
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidArgument(format!(
            "ssim window must be odd, got {window}"
        )));
    }
    let mut tape = Tape::new();
    let mut acc: Option<Var> = None;
    for c in 0..a.channels() {
        let x = tape.const_map(a.channel(c));
        let y = tape.const_map(b.channel(c));
        let s = ssim_graph(&mut tape, x, y, window);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, s),
            None => s,
        });
    }
    let total = acc.expect("images have at least one channel");
    let averaged = tape.affine(total, 1.0 / a.channels() as f64, 0.0);
    Ok(tape.map(averaged).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noisy(w: usize, h: usize, seed: u64) -> Image {
        Image::from_fn(w, h, 1, |v, u, _| {
            crate::synth::texture_value(u as f64 * 0.31, v as f64 * 0.47, seed, 0)
        })
    }

    #[test]
    fn self_similarity_is_one_everywhere() {
        let img = noisy(12, 9, 5);
        let s = ssim_map(&img, &img, 3).unwrap();
        for &v in s.data() {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = noisy(10, 8, 1);
        let b = noisy(10, 8, 2);
        let ab = ssim_map(&a, &b, 3).unwrap();
        let ba = ssim_map(&b, &a, 3).unwrap();
        for i in 0..ab.len() {
            assert_relative_eq!(ab.data()[i], ba.data()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_images_have_the_closed_form_value() {
        // Variance terms cancel: (2*0.2*0.4 + C1) / (0.2^2 + 0.4^2 + C1).
        let a = Image::from_fn(6, 6, 1, |_, _, _| 0.2);
        let b = Image::from_fn(6, 6, 1, |_, _, _| 0.4);
        let expected = (2.0 * 0.2 * 0.4 + SSIM_C1) / (0.2f64.powi(2) + 0.4f64.powi(2) + SSIM_C1);
        let s = ssim_map(&a, &b, 3).unwrap();
        for &v in s.data() {
            assert_relative_eq!(v, expected, epsilon = 1e-12);
        }
        // The spec's rounded value for the same case.
        assert!((expected - 0.8001).abs() < 1e-4);
    }

    #[test]
    fn outputs_stay_in_range() {
        for seed in 0..5 {
            let a = noisy(16, 12, seed);
            let b = noisy(16, 12, seed + 100);
            let s = ssim_map(&a, &b, 3).unwrap();
            for &v in s.data() {
                assert!((-1.0..=1.0).contains(&v), "ssim out of range: {v}");
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch_and_even_windows() {
        let a = noisy(8, 8, 1);
        let b = noisy(9, 8, 1);
        assert!(ssim_map(&a, &b, 3).is_err());
        assert!(ssim_map(&a, &a, 4).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let target = noisy(7, 6, 3);
        let at = noisy(7, 6, 9);
        let eval = |g: &Grid<f64>| -> (f64, Grid<f64>) {
            let mut t = Tape::new();
            let x = t.var_map(g.clone());
            let y = t.const_map(target.channel(0));
            let s = ssim_graph(&mut t, x, y, 3);
            let m = t.mean(s);
            t.backward(m);
            (t.scalar(m), t.grad_map(x))
        };
        let base = at.channel(0);
        let (_, analytic) = eval(&base);
        let h = 1e-6;
        let mut probe = base.clone();
        for i in 0..base.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = eval(&probe).0;
            probe.data_mut()[i] = orig - h;
            let minus = eval(&probe).0;
            probe.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (analytic.data()[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "ssim gradient mismatch at {i}"
            );
        }
    }
}
