//! Generalized robust loss with shape parameter alpha and scale c.
//!
//! rho(xi, alpha, c) = |alpha-2|/alpha * (((xi/c)^2/|alpha-2| + 1)^(alpha/2) - 1)
//!
//! Special cases: alpha = 2 is the scaled L2 loss, alpha = 1 the
//! Charbonnier/pseudo-Huber loss, alpha -> 0 the Cauchy/Lorentzian loss and
//! alpha = -2 Geman-McClure. The removable singularities at 0 and 2 get
//! explicit branches.
//!
//! For the adaptive variant, alpha becomes a free parameter and the loss is
//! completed to a negative log-likelihood rho + log c + log Z(alpha), where
//! Z(alpha) = integral of exp(-rho(x, alpha, 1)) dx is precomputed by
//! quadrature on a dense alpha grid and interpolated with a Catmull-Rom
//! spline (so the alpha gradient is smooth).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value, Var};
use crate::grid::Grid;
use crate::{Error, Result};

/// Shape/scale parameters of the robust loss.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RobustParams {
    pub alpha: f64,
    pub c: f64,
    pub adaptive: bool,
}

impl RobustParams {
    /// Default scale of the reconstruction residual.
    pub const DEFAULT_C: f64 = 0.01;

    pub fn fixed(alpha: f64, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("scale c must be > 0, got {c}")));
        }
        Ok(RobustParams {
            alpha,
            c,
            adaptive: false,
        })
    }

    /// Adaptive variant; alpha stays in (0, 2) via the sigmoid
    /// reparameterization used by the optimizer.
    pub fn adaptive(init_alpha: f64, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!("scale c must be > 0, got {c}")));
        }
        if !(init_alpha > 0.0 && init_alpha < 2.0) {
            return Err(Error::OutOfRange(format!(
                "adaptive alpha must start in (0, 2), got {init_alpha}"
            )));
        }
        Ok(RobustParams {
            alpha: init_alpha,
            c,
            adaptive: true,
        })
    }
}

/// alpha = 2 * sigmoid(raw), the smooth (0, 2) reparameterization.
pub fn alpha_from_raw(raw: f64) -> f64 {
    2.0 * crate::autodiff::sigmoid(raw)
}

/// Inverse of [`alpha_from_raw`].
pub fn raw_from_alpha(alpha: f64) -> f64 {
    let p = (alpha / 2.0).clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

const ALPHA_ZERO_EPS: f64 = 1e-12;
const ALPHA_TWO_EPS: f64 = 1e-5;

/// Evaluate the robust loss at a residual.
pub fn robust_rho(xi: f64, params: &RobustParams) -> f64 {
    rho(xi, params.alpha, params.c)
}

pub(crate) fn rho(xi: f64, alpha: f64, c: f64) -> f64 {
    let s = (xi / c) * (xi / c);
    if alpha.abs() < ALPHA_ZERO_EPS {
        return (0.5 * s).ln_1p();
    }
    if (alpha - 2.0).abs() < ALPHA_TWO_EPS {
        return 0.5 * s;
    }
    let b = (alpha - 2.0).abs();
    let g = s / b + 1.0;
    (b / alpha) * ((alpha / 2.0) * g.ln()).exp_m1()
}

/// d rho / d xi.
pub(crate) fn drho_dxi(xi: f64, alpha: f64, c: f64) -> f64 {
    let s = (xi / c) * (xi / c);
    if alpha.abs() < ALPHA_ZERO_EPS {
        return 2.0 * xi / (xi * xi + 2.0 * c * c);
    }
    if (alpha - 2.0).abs() < ALPHA_TWO_EPS {
        return xi / (c * c);
    }
    let b = (alpha - 2.0).abs();
    (xi / (c * c)) * (s / b + 1.0).powf(alpha / 2.0 - 1.0)
}

/// d rho / d c.
pub(crate) fn drho_dc(xi: f64, alpha: f64, c: f64) -> f64 {
    let s = (xi / c) * (xi / c);
    if alpha.abs() < ALPHA_ZERO_EPS {
        return -(s / c) / (0.5 * s + 1.0);
    }
    if (alpha - 2.0).abs() < ALPHA_TWO_EPS {
        return -s / c;
    }
    let b = (alpha - 2.0).abs();
    -(s / c) * (s / b + 1.0).powf(alpha / 2.0 - 1.0)
}

/// d rho / d alpha away from the removable singularities.
pub(crate) fn drho_dalpha(xi: f64, alpha: f64, c: f64) -> f64 {
    debug_assert!(alpha.abs() >= ALPHA_ZERO_EPS && (alpha - 2.0).abs() >= ALPHA_TWO_EPS);
    let s = (xi / c) * (xi / c);
    let db = if alpha < 2.0 { -1.0 } else { 1.0 };
    let b = (alpha - 2.0).abs();
    let g = s / b + 1.0;
    let ln_g = g.ln();
    let pow = ((alpha / 2.0) * ln_g).exp();
    let dg_da = -(s / (b * b)) * db;
    let d_prefactor = (db * alpha - b) / (alpha * alpha);
    d_prefactor * ((alpha / 2.0) * ln_g).exp_m1()
        + (b / alpha) * pow * (0.5 * ln_g + (alpha / 2.0) * dg_da / g)
}

// --- partition function -------------------------------------------------------

const LNZ_GRID: usize = 1024;
const LNZ_ALPHA_MIN: f64 = 0.004;
const LNZ_ALPHA_MAX: f64 = 2.0;

fn lnz_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..LNZ_GRID)
            .map(|i| {
                let alpha = LNZ_ALPHA_MIN
                    + (LNZ_ALPHA_MAX - LNZ_ALPHA_MIN) * i as f64 / (LNZ_GRID - 1) as f64;
                partition_quadrature(alpha).ln()
            })
            .collect()
    })
}

/// Z(alpha) by composite Simpson: [0, 8] directly plus [8, 8e6] in log space.
pub fn partition_quadrature(alpha: f64) -> f64 {
    let f = |x: f64| (-rho(x, alpha, 1.0)).exp();
    let near = simpson(&f, 0.0, 8.0, 2048);
    let g = |t: f64| {
        let x = 8.0 * t.exp();
        f(x) * x
    };
    let far = simpson(&g, 0.0, (1e6f64).ln(), 2048);
    2.0 * (near + far)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

fn check_alpha_range(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::OutOfRange(format!(
            "adaptive alpha must lie in (0, 2], got {alpha}"
        )));
    }
    Ok(())
}

/// log Z(alpha), Catmull-Rom interpolated from the precomputed grid.
pub fn log_partition(alpha: f64) -> Result<f64> {
    check_alpha_range(alpha)?;
    Ok(lnz_eval(alpha).0)
}

/// d log Z / d alpha of the interpolant (consistent with [`log_partition`]).
pub fn log_partition_grad(alpha: f64) -> Result<f64> {
    check_alpha_range(alpha)?;
    Ok(lnz_eval(alpha).1)
}

fn lnz_eval(alpha: f64) -> (f64, f64) {
    let table = lnz_table();
    let h = (LNZ_ALPHA_MAX - LNZ_ALPHA_MIN) / (LNZ_GRID - 1) as f64;
    let pos = ((alpha.clamp(LNZ_ALPHA_MIN, LNZ_ALPHA_MAX) - LNZ_ALPHA_MIN) / h)
        .clamp(0.0, (LNZ_GRID - 1) as f64);
    let i = (pos.floor() as usize).min(LNZ_GRID - 2);
    let t = pos - i as f64;
    let at = |j: isize| table[j.clamp(0, LNZ_GRID as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    // Catmull-Rom basis and its derivative in the cell parameter t.
    let value = 0.5
        * ((2.0 * p1)
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
    let dvalue_dt = 0.5
        * ((-p0 + p2)
            + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t
            + 3.0 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t);
    (value, dvalue_dt / h)
}

/// Negative log-likelihood of the adaptive robust loss:
/// rho(xi, alpha, c) + log c + log Z(alpha).
pub fn robust_nll(xi: f64, params: &RobustParams) -> Result<f64> {
    check_alpha_range(params.alpha)?;
    Ok(rho(xi, params.alpha, params.c) + params.c.ln() + log_partition(params.alpha)?)
}

/// Gradient of the NLL with respect to (xi, alpha, c).
pub fn robust_nll_grad(xi: f64, params: &RobustParams) -> Result<(f64, f64, f64)> {
    check_alpha_range(params.alpha)?;
    let (a, c) = (params.alpha, params.c);
    Ok((
        drho_dxi(xi, a, c),
        drho_dalpha(xi, a, c) + log_partition_grad(a)?,
        drho_dc(xi, a, c) + 1.0 / c,
    ))
}

/// Fit alpha by minimizing the mean NLL over residuals with golden-section
/// search on [0.05, 1.95]; c stays fixed.
pub fn fit_alpha(residuals: &[f64], c: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::DegenerateInput("no residuals to fit".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("scale c must be positive".into()));
    }
    let objective = |alpha: f64| -> f64 {
        let lnz = log_partition(alpha).expect("alpha inside fit range");
        let mean_rho: f64 =
            residuals.iter().map(|&x| rho(x, alpha, c)).sum::<f64>() / residuals.len() as f64;
        mean_rho + c.ln() + lnz
    };
    let (mut lo, mut hi) = (0.05f64, 1.95f64);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    Ok(0.5 * (lo + hi))
}

// --- tape ops ------------------------------------------------------------------

/// Elementwise robust loss of a residual map on the tape; alpha and c may be
/// variables (alpha gradients use the analytic formula, so keep alpha away
/// from the removable singularities when it is trainable).
pub fn rho_map_op(tape: &mut Tape, xi: Var, alpha: Var, c: Var) -> Var {
    let a = tape.scalar(alpha);
    let cv = tape.scalar(c);
    let value = Value::Map(tape.map(xi).map(|x| rho(x, a, cv)));
    tape.push_op(
        value,
        vec![xi, alpha, c],
        Box::new(move |gout, _, pv| {
            let m = pv[0].as_map();
            let a = pv[1].as_scalar();
            let cv = pv[2].as_scalar();
            let g = gout.as_map();
            let mut gxi = Grid::zeros(m.width(), m.height());
            let mut ga = 0.0;
            let mut gc = 0.0;
            let alpha_differentiable =
                a.abs() >= ALPHA_ZERO_EPS && (a - 2.0).abs() >= ALPHA_TWO_EPS;
            for i in 0..m.len() {
                let x = m.data()[i];
                let gi = g.data()[i];
                if gi == 0.0 {
                    continue;
                }
                gxi.data_mut()[i] = gi * drho_dxi(x, a, cv);
                if alpha_differentiable {
                    ga += gi * drho_dalpha(x, a, cv);
                }
                gc += gi * drho_dc(x, a, cv);
            }
            vec![Value::Map(gxi), Value::Scalar(ga), Value::Scalar(gc)]
        }),
    )
}

/// log Z(alpha) as a scalar tape node.
pub fn log_partition_op(tape: &mut Tape, alpha: Var) -> Result<Var> {
    let a = tape.scalar(alpha);
    let value = log_partition(a)?;
    Ok(tape.push_op(
        Value::Scalar(value),
        vec![alpha],
        Box::new(move |gout, _, pv| {
            let a = pv[0].as_scalar();
            let g = gout.as_scalar();
            vec![Value::Scalar(
                g * log_partition_grad(a).expect("alpha validated at forward time"),
            )]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_residual_costs_nothing_for_any_shape() {
        for alpha in [-5.0, -2.0, -1e-6, 0.0, 1e-6, 0.5, 1.0, 1.9, 2.0, 2.5] {
            for c in [0.01, 1.0, 3.0] {
                assert_eq!(rho(0.0, alpha, c), 0.0);
                assert_eq!(drho_dxi(0.0, alpha, c), 0.0);
            }
        }
    }

    #[test]
    fn charbonnier_point_value() {
        // alpha = 1, c = 1, xi = 1: sqrt(2) - 1.
        assert_relative_eq!(
            rho(1.0, 1.0, 1.0),
            std::f64::consts::SQRT_2 - 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn geman_mcclure_point_value() {
        // alpha = -2, c = 1, xi = 1 matches 2 xi^2 / (xi^2 + 4) = 0.4.
        assert_relative_eq!(rho(1.0, -2.0, 1.0), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn removable_singularities_are_continuous() {
        let mut xi = -10.0;
        while xi <= 10.0 {
            let s = xi * xi;
            for a in [2.0 - 1e-6, 2.0 + 1e-6] {
                assert!(
                    (rho(xi, a, 1.0) - 0.5 * s).abs() < 1e-5,
                    "quadratic limit violated at xi={xi}, alpha={a}"
                );
            }
            for a in [-1e-6, 1e-6] {
                assert!(
                    (rho(xi, a, 1.0) - (0.5 * s).ln_1p()).abs() < 1e-5,
                    "log limit violated at xi={xi}, alpha={a}"
                );
            }
            xi += 0.25;
        }
    }

    #[test]
    fn monotone_in_residual_magnitude_and_in_alpha() {
        for alpha in [-2.0, 0.0, 0.5, 1.0, 1.5, 2.0] {
            let mut prev = -1.0;
            for k in 0..200 {
                let xi = 0.05 * k as f64;
                let r = rho(xi, alpha, 1.0);
                assert!(r >= prev - 1e-12, "not monotone in |xi| at alpha={alpha}");
                prev = r;
            }
        }
        for k in 1..200 {
            let xi = 0.07 * k as f64;
            let mut prev = f64::NEG_INFINITY;
            for ak in 0..=40 {
                let alpha = -2.0 + 4.0 * ak as f64 / 40.0;
                let r = rho(xi, alpha, 1.0);
                assert!(
                    r >= prev - 1e-9,
                    "not monotone in alpha at xi={xi}, alpha={alpha}"
                );
                prev = r;
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for &alpha in &[-1.5, 0.3, 0.8, 1.2, 1.7, 1.94] {
            for &c in &[0.01, 0.5, 2.0] {
                for &xi in &[-2.0, -0.3, 0.01, 0.4, 1.7] {
                    let fd_xi = (rho(xi + h, alpha, c) - rho(xi - h, alpha, c)) / (2.0 * h);
                    assert!(
                        (drho_dxi(xi, alpha, c) - fd_xi).abs() < 1e-5 * (1.0 + fd_xi.abs()),
                        "drho/dxi at ({xi}, {alpha}, {c})"
                    );
                    let fd_c = (rho(xi, alpha, c + h * c) - rho(xi, alpha, c - h * c)) / (2.0 * h * c);
                    assert!(
                        (drho_dc(xi, alpha, c) - fd_c).abs() < 1e-4 * (1.0 + fd_c.abs()),
                        "drho/dc at ({xi}, {alpha}, {c})"
                    );
                    if alpha.abs() > 1e-3 && (alpha - 2.0).abs() > 1e-3 {
                        let fd_a = (rho(xi, alpha + h, c) - rho(xi, alpha - h, c)) / (2.0 * h);
                        assert!(
                            (drho_dalpha(xi, alpha, c) - fd_a).abs() < 1e-4 * (1.0 + fd_a.abs()),
                            "drho/dalpha at ({xi}, {alpha}, {c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_normalizer_at_alpha_two() {
        let z = partition_quadrature(2.0);
        assert_relative_eq!(z, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-8);
        let lnz = log_partition(2.0).unwrap();
        assert_relative_eq!(lnz, (2.0 * std::f64::consts::PI).sqrt().ln(), epsilon = 1e-6);

        let p = RobustParams::adaptive(1.0, 1.0).unwrap();
        let p = RobustParams { alpha: 2.0, ..p };
        assert_relative_eq!(
            robust_nll(0.0, &p).unwrap(),
            (2.0 * std::f64::consts::PI).sqrt().ln(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn interpolated_log_partition_matches_fresh_quadrature() {
        // Independent oracle: plain Simpson with different panel counts.
        let oracle = |alpha: f64| -> f64 {
            let f = |x: f64| (-rho(x, alpha, 1.0)).exp();
            let mut total = 0.0;
            // [0, 16] fine + [16, 4e6] in log space, both denser than the lib.
            let n1 = 6000;
            let h1 = 16.0 / n1 as f64;
            let mut acc = f(0.0) + f(16.0);
            for i in 1..n1 {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(h1 * i as f64);
            }
            total += acc * h1 / 3.0;
            let g = |t: f64| {
                let x = 16.0 * t.exp();
                f(x) * x
            };
            let t_max = (2.5e5f64).ln();
            let n2 = 6000;
            let h2 = t_max / n2 as f64;
            let mut acc = g(0.0) + g(t_max);
            for i in 1..n2 {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(h2 * i as f64);
            }
            total += acc * h2 / 3.0;
            (2.0 * total).ln()
        };
        let mut alpha = 0.05;
        while alpha <= 1.95 {
            let interp = log_partition(alpha).unwrap();
            let fresh = oracle(alpha);
            assert!(
                (interp - fresh).abs() < 1e-4 * fresh.abs().max(1.0),
                "lnZ mismatch at alpha={alpha}: {interp} vs {fresh}"
            );
            alpha += 0.11;
        }
    }

    #[test]
    fn log_partition_gradient_matches_interpolant_differences() {
        let h = 1e-7;
        let mut alpha = 0.06;
        while alpha < 1.94 {
            let g = log_partition_grad(alpha).unwrap();
            let fd =
                (log_partition(alpha + h).unwrap() - log_partition(alpha - h).unwrap()) / (2.0 * h);
            assert!(
                (g - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                "lnZ gradient mismatch at {alpha}: {g} vs {fd}"
            );
            alpha += 0.073;
        }
    }

    #[test]
    fn alpha_outside_range_is_rejected() {
        let p = RobustParams {
            alpha: 2.3,
            c: 1.0,
            adaptive: true,
        };
        assert!(matches!(robust_nll(0.1, &p), Err(Error::OutOfRange(_))));
        assert!(log_partition(-0.1).is_err());
    }

    #[test]
    fn gaussian_residuals_drive_alpha_towards_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..20_000)
            .map(|_| {
                let a: f64 = rng.random_range(1e-12..1.0);
                let b: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (-2.0 * a.ln()).sqrt() * b.cos()
            })
            .collect();
        let alpha = fit_alpha(&data, 1.0).unwrap();
        assert!(alpha > 1.9, "expected alpha near 2, got {alpha}");
    }

    #[test]
    fn cauchy_contamination_drives_alpha_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let data: Vec<f64> = (0..20_000)
            .map(|_| {
                let a: f64 = rng.random_range(1e-12..1.0);
                let b: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let gauss = (-2.0 * a.ln()).sqrt() * b.cos();
                if rng.random_range(0.0..1.0) < 0.2 {
                    // Standard Cauchy via the tangent transform.
                    let u: f64 = rng.random_range(0.0..1.0);
                    (std::f64::consts::PI * (u - 0.5)).tan()
                } else {
                    gauss
                }
            })
            .collect();
        let alpha = fit_alpha(&data, 1.0).unwrap();
        assert!(alpha < 1.0, "expected alpha below 1, got {alpha}");
    }

    #[test]
    fn sigmoid_reparameterization_roundtrips() {
        for alpha in [0.05, 0.3, 1.0, 1.7, 1.95] {
            assert_relative_eq!(alpha_from_raw(raw_from_alpha(alpha)), alpha, epsilon = 1e-9);
        }
    }

    #[test]
    fn rho_map_op_gradients_match_finite_differences() {
        let xi = Grid::from_fn(4, 3, |v, u| 0.3 * (v as f64) - 0.2 * (u as f64) + 0.05);
        let (alpha_at, c_at) = (1.3, 0.4);
        let eval = |m: &Grid<f64>, a: f64, c: f64| -> (f64, Grid<f64>, f64, f64) {
            let mut t = Tape::new();
            let x = t.var_map(m.clone());
            let av = t.var_scalar(a);
            let cv = t.var_scalar(c);
            let r = rho_map_op(&mut t, x, av, cv);
            let s = t.mean(r);
            t.backward(s);
            (t.scalar(s), t.grad_map(x), t.grad_scalar(av), t.grad_scalar(cv))
        };
        let (_, gx, ga, gc) = eval(&xi, alpha_at, c_at);
        let h = 1e-6;
        for i in 0..xi.len() {
            let mut p = xi.clone();
            p.data_mut()[i] += h;
            let plus = eval(&p, alpha_at, c_at).0;
            p.data_mut()[i] -= 2.0 * h;
            let minus = eval(&p, alpha_at, c_at).0;
            let fd = (plus - minus) / (2.0 * h);
            assert!((gx.data()[i] - fd).abs() < 1e-5 * (1.0 + fd.abs()));
        }
        let fd_a = (eval(&xi, alpha_at + h, c_at).0 - eval(&xi, alpha_at - h, c_at).0) / (2.0 * h);
        assert!((ga - fd_a).abs() < 1e-5 * (1.0 + fd_a.abs()));
        let fd_c = (eval(&xi, alpha_at, c_at + h).0 - eval(&xi, alpha_at, c_at - h).0) / (2.0 * h);
        assert!((gc - fd_c).abs() < 1e-5 * (1.0 + fd_c.abs()));
    }
}
