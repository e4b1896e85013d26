//! Estimation of non-validity indicators `theta_l = E[zbar_l u]` for suspect
//! instruments, their confidence bound and thresholded detection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_socp, ProgramBuilder, SocConstraint, SolveResult, Tolerances};
use crate::error::{Error, Result};
use crate::inference::{threshold_select, Selection, SUPPORT_FLOOR};
use crate::model::{rms, Dataset};
use crate::sensitivity::slack_factor;
use crate::stiv::SigmaWeight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityBound {
    /// Start from `|J(theta_hat)|` and refit it to the selected set, at most three rounds.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvConfig {
    pub c: f64,
    pub r1: f64,
    /// `l1` error budget of the pilot, `|D_X^-1 (beta_hat - beta)|_1 <= b_hat`.
    pub b_hat: f64,
    pub s1: SparsityBound,
    /// Weight convention for `sigma1` in `|theta|_1 + c w sigma1`, as in STIV.
    #[serde(default)]
    pub sigma_weight: SigmaWeight,
}

impl NvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::Config(format!("c = {} must lie in (0,1)", self.c)));
        }
        if !(self.r1 > 0.0 && self.r1.is_finite()) {
            return Err(Error::Config("r1 must be positive".into()));
        }
        if !(self.b_hat >= 0.0) || self.b_hat.is_infinite() {
            return Err(Error::Config("b_hat must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Mean and variance of `w_li = zbar_li (y_i - x_i' beta)` over `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualMoments {
    pub mean: f64,
    pub variance: f64,
}

impl ResidualMoments {
    /// `(1/n) sum_i (w_i - theta)^2 = variance + (mean - theta)^2`.
    pub fn q(&self, theta: f64) -> f64 {
        self.variance + (self.mean - theta).powi(2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NvFit {
    pub theta_hat: DVector<f64>,
    pub sigma1_hat: f64,
    pub moments: Vec<ResidualMoments>,
    pub zbar_star: f64,
    pub b_hat: f64,
    pub solve: SolveResult,
    /// `max(0, |m - theta|_inf - sigma1 r1 - b zbar_*)`.
    pub moment_residual: f64,
    /// `max(0, F(theta) - sigma1 - b zbar_*)`.
    pub spread_residual: f64,
}

/// Moments of the residual products, one per suspect instrument.
pub fn residual_moments(zbar: &DMatrix<f64>, resid: &DVector<f64>) -> Vec<ResidualMoments> {
    let n = resid.len() as f64;
    let per_column = |col: usize| {
        let w = zbar.column(col).component_mul(resid);
        let mean = w.sum() / n;
        // Centered second moment avoids cancellation when the mean dominates.
        let variance = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        ResidualMoments { mean, variance }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..zbar.ncols()).into_par_iter().map(per_column).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..zbar.ncols()).map(per_column).collect()
    }
}

/// `F(theta) = max_l sqrt(Q_l(theta_l))`.
pub fn spread(moments: &[ResidualMoments], theta: &DVector<f64>) -> f64 {
    moments.iter().zip(theta.iter()).map(|(m, &t)| m.q(t).sqrt()).fold(0.0, f64::max)
}

/// Minimizes `|theta|_1 + c w sigma1` subject to
/// `|m - theta|_inf <= sigma1 r1 + b zbar_*` and `sqrt(v_l + (theta_l - m_l)^2) <= sigma1 + b zbar_*` for every `l`.
///
/// Each spread constraint is the two-dimensional cone `|(sqrt(v_l), theta_l - m_l)|_2 <= sigma1 + b zbar_*`.
pub fn nv_fit(d: &Dataset, beta_hat: &DVector<f64>, cfg: &NvConfig, tol: &Tolerances) -> Result<NvFit> {
    cfg.validate()?;
    let zbar = d
        .zbar()
        .ok_or_else(|| Error::Config("suspect instruments are required for non-validity estimation".into()))?;
    if beta_hat.len() != d.k() {
        return Err(Error::Dimension("pilot length differs from K".into()));
    }
    let resid = d.y() - d.x() * beta_hat;
    let moments = residual_moments(zbar, &resid);
    let zbar_star = zbar.column_iter().map(|c| rms(c.iter().copied())).fold(0.0, f64::max);
    let l1 = moments.len();
    let offset = cfg.b_hat * zbar_star;
    // Variables: theta (l1), w (l1), sigma1.
    let sigma = 2 * l1;
    let nv = 2 * l1 + 1;
    let mut b = ProgramBuilder::new(nv);
    b.set_objective(sigma, cfg.c * cfg.sigma_weight.factor(d.n())).lower_bound(sigma, 0.0);
    for (l, m) in moments.iter().enumerate() {
        b.le(vec![(l, 1.0), (l1 + l, -1.0)], 0.0);
        b.le(vec![(l, -1.0), (l1 + l, -1.0)], 0.0);
        b.set_objective(l1 + l, 1.0);
        b.le(vec![(l, 1.0), (sigma, -cfg.r1)], m.mean + offset);
        b.le(vec![(l, -1.0), (sigma, -cfg.r1)], -m.mean + offset);
        let mut a = DMatrix::zeros(3, nv);
        a[(0, sigma)] = 1.0;
        a[(2, l)] = 1.0;
        b.cone(SocConstraint {
            a,
            b: DVector::from_vec(vec![offset, m.variance.sqrt(), -m.mean]),
        });
    }
    let res = solve_socp(&b.build(), tol);
    if !res.is_optimal() {
        return Err(Error::Solver {
            status: res.status,
            context: format!("non-validity program after {} iterations", res.iterations),
        });
    }
    let theta = DVector::from_iterator(l1, (0..l1).map(|l| res.x[l]));
    let sigma1 = res.x[sigma].max(0.0);
    let moment_gap = moments.iter().zip(theta.iter()).map(|(m, t)| (m.mean - t).abs()).fold(0.0, f64::max);
    Ok(NvFit {
        moment_residual: (moment_gap - sigma1 * cfg.r1 - offset).max(0.0),
        spread_residual: (spread(&moments, &theta) - sigma1 - offset).max(0.0),
        theta_hat: theta,
        sigma1_hat: sigma1,
        moments,
        zbar_star,
        b_hat: cfg.b_hat,
        solve: res,
    })
}

/// Sup-norm bound `V(sigma1, b, j)`; `inf` when `2 r1 j / (1-c) >= 1`.
pub fn nv_bound_v(sigma1: f64, b: f64, j: usize, r1: f64, c: f64, zbar_star: f64) -> f64 {
    let den = 1.0 - 2.0 * r1 * j as f64 / (1.0 - c);
    if den <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * (sigma1 * r1 + (1.0 + r1 / (1.0 - c)) * b * zbar_star) / den
}

/// Companion `l1` bound on `theta_hat - theta`; `inf` when `1 - c - 2 r1 j <= 0`.
pub fn nv_bound_l1(sigma1: f64, b: f64, j: usize, r1: f64, c: f64, zbar_star: f64) -> f64 {
    let jf = j as f64;
    let den = 1.0 - c - 2.0 * r1 * jf;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * (2.0 * jf * (sigma1 * r1 + (1.0 + r1) * b * zbar_star) + c * b * zbar_star) / den
}

/// Pilot budget `2 sigma r s / kappa_1(s) * slack` from certificate sensitivities at `s`.
pub fn nv_bhat_from_stiv(sigma_hat: f64, r: f64, s: usize, kappa1_s: f64, kappa_end_s: f64, kappa_exo_s: f64) -> f64 {
    let slack = slack_factor(r, kappa_end_s, kappa_exo_s);
    if slack.is_infinite() || kappa1_s <= 0.0 {
        return f64::INFINITY;
    }
    2.0 * sigma_hat * r * s as f64 / kappa1_s * slack
}

/// Flags `l` iff `|theta_l| > omega`.
pub fn nv_threshold_select(theta: &DVector<f64>, omega: f64) -> Selection {
    let omega = vec![omega; theta.len()];
    threshold_select(theta.as_slice(), &omega).expect("equal lengths")
}

#[derive(Debug, Clone, Serialize)]
pub struct NvDetection {
    #[serde(serialize_with = "crate::serde_real::real")]
    pub omega: f64,
    pub s1: usize,
    pub rounds: usize,
    pub selection: Selection,
}

/// Threshold `omega = V(sigma1_hat, b_hat, s1)` and the flagged set.
///
/// With [`SparsityBound::Auto`], `s1` starts at `|J(theta_hat)|` and is replaced by the size of the
/// flagged set until it stops changing, for at most three rounds or until `omega` is infinite.
pub fn nv_detect(fit: &NvFit, cfg: &NvConfig) -> NvDetection {
    let v = |s1: usize| nv_bound_v(fit.sigma1_hat, cfg.b_hat, s1, cfg.r1, cfg.c, fit.zbar_star);
    match cfg.s1 {
        SparsityBound::Fixed(s1) => {
            let omega = v(s1);
            NvDetection {
                omega,
                s1,
                rounds: 1,
                selection: nv_threshold_select(&fit.theta_hat, omega),
            }
        }
        SparsityBound::Auto => {
            let mut s1 = fit.theta_hat.iter().filter(|t| t.abs() > SUPPORT_FLOOR).count();
            let mut rounds = 0;
            loop {
                rounds += 1;
                let omega = v(s1);
                let selection = nv_threshold_select(&fit.theta_hat, omega);
                let next = selection.support.len();
                if rounds == 3 || omega.is_infinite() || next == s1 {
                    return NvDetection {
                        omega,
                        s1,
                        rounds,
                        selection,
                    };
                }
                s1 = next;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bound_v_values() {
        assert_abs_diff_eq!(nv_bound_v(0.5, 0.0, 0, 0.1, 0.1, 1.0), 0.1, epsilon = 1e-15);
        assert!(nv_bound_v(0.5, 0.0, 5, 0.1, 0.1, 1.0).is_infinite());
        let v = nv_bound_v(0.5, 0.1, 1, 0.1, 0.1, 1.0);
        assert_abs_diff_eq!(v, 2.0 * (0.05 + (1.0 + 1.0 / 9.0) * 0.1) / (1.0 - 2.0 / 9.0), epsilon = 1e-14);
        assert_abs_diff_eq!(v, 0.414286, epsilon = 1e-6);
    }

    #[test]
    fn bhat_values() {
        // slack factor 1.25 from r / kappa_end = 0.1 and r^2 / kappa_exo = 0.1.
        let b = nv_bhat_from_stiv(0.3, 0.1, 2, 0.09, 1.0, 0.1);
        assert_abs_diff_eq!(b, 2.0 * 0.3 * 0.1 * 2.0 / 0.09 * 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(b, 1.6667, epsilon = 1e-4);
        assert!(nv_bhat_from_stiv(0.3, 0.5, 2, 0.09, 0.4, 1.0).is_infinite());
    }

    #[test]
    fn moment_identity() {
        let zbar = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 0.5, 1.0, -1.5, 0.3, 2.0, 0.7]);
        let resid = DVector::from_vec(vec![0.3, -1.2, 0.8, 0.1]);
        let m = residual_moments(&zbar, &resid);
        for (l, mm) in m.iter().enumerate() {
            let w = zbar.column(l).component_mul(&resid);
            for theta in [-1.0, 0.0, 0.37, 2.5] {
                let direct = w.iter().map(|v| (v - theta).powi(2)).sum::<f64>() / 4.0;
                assert!((mm.q(theta) - direct).abs() <= 1e-10 * direct.max(1.0));
            }
            assert!(mm.variance >= 0.0);
        }
    }

    #[test]
    fn zero_residuals_give_zero_fit() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let zbar = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -1.0, 2.0]);
        let beta = DVector::from_element(1, 2.0);
        let y = &x * &beta;
        let d = Dataset::new(y, x.clone(), x, &[0], Some(zbar)).unwrap();
        let cfg = NvConfig {
            c: 0.1,
            r1: 0.3,
            b_hat: 0.0,
            s1: SparsityBound::Auto,
            sigma_weight: SigmaWeight::default(),
        };
        let fit = nv_fit(&d, &beta, &cfg, &Tolerances::default()).unwrap();
        assert!(fit.theta_hat.amax() < 1e-7);
        assert!(fit.sigma1_hat < 1e-7);
        let det = nv_detect(&fit, &cfg);
        assert!(det.selection.support.is_empty());
    }

    #[test]
    fn fixed_threshold_selection() {
        let sel = nv_threshold_select(&DVector::from_vec(vec![0.6, 0.01]), 0.3);
        assert_eq!(sel.support, vec![0]);
        assert_eq!(sel.signs, vec![1, 0]);
        assert!(nv_threshold_select(&DVector::from_vec(vec![5.0]), f64::INFINITY).support.is_empty());
    }
}
