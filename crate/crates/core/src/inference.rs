//! Confidence intervals, thresholded selection and the approximate-sparsity bound
//! built from a pivotal fit and sensitivity lower bounds.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::Tolerances;
use crate::error::{Error, Result};
use crate::model::ScaledDesign;
use crate::sensitivity::{kappa_block, kappa_block_cert, kappa_coord, kappa_coord_cert, slack_factor, ConeSpec};
use crate::stiv::StivFit;

/// Default magnitude below which an estimated coefficient counts as zero.
pub const SUPPORT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiSource {
    /// Plug-in support estimate `J_hat`.
    Direct(Vec<usize>),
    /// Sparsity certificate `s`.
    Certificate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackVariant {
    /// Block sensitivities of `J_end` and its complement.
    #[default]
    Standard,
    /// The second term uses the `l1` bound `kappa_1` instead of the complement block.
    SingleEndoRemark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub source: CiSource,
    pub r: f64,
    pub endogenous: Vec<usize>,
    /// Cone constant, normally the STIV `c`.
    pub c: f64,
    #[serde(default)]
    pub variant: SlackVariant,
}

impl CiSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        match &self.source {
            CiSource::Direct(j) if j.is_empty() => return Err(Error::Config("J_hat must be nonempty".into())),
            CiSource::Certificate(0) => return Err(Error::Config("sparsity bound s must be at least 1".into())),
            _ => {}
        }
        if !(self.r > 0.0) {
            return Err(Error::Config("r must be positive".into()));
        }
        if self.endogenous.iter().any(|&e| e >= k) {
            return Err(Error::Dimension("endogenous index out of range".into()));
        }
        Ok(())
    }
}

/// Lower bounds on the sensitivities entering the error bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sensitivities {
    /// `kappa*_{k,J_hat}` or `kappa*_k(s)` for every coordinate.
    #[serde(serialize_with = "crate::serde_real::reals")]
    pub coord: Vec<f64>,
    /// Block bound for the endogenous set; `inf` when it is empty.
    #[serde(serialize_with = "crate::serde_real::real")]
    pub endogenous: f64,
    /// Block bound for the exogenous set; `inf` when it is empty.
    #[serde(serialize_with = "crate::serde_real::real")]
    pub exogenous: f64,
    /// `kappa_1` lower bound, `(1-c)/(2|J|) min_k coord` (or with `s` in place of `|J|`).
    #[serde(serialize_with = "crate::serde_real::real")]
    pub kappa1: f64,
    pub notes: Vec<String>,
    pub lp_count: usize,
}

/// Computes every sensitivity the interval and threshold formulas need.
///
/// Block sensitivities whose sign enumeration exceeds the cap fall back to `kappa1`,
/// which lower-bounds every block sensitivity.
pub fn compute_sensitivities(psi: &DMatrix<f64>, spec: &CiSpec, tol: &Tolerances) -> Result<Sensitivities> {
    let k = psi.ncols();
    spec.validate(k)?;
    let cone = ConeSpec::new(spec.c);
    let mut lp_count = 0;
    let mut coord = Vec::with_capacity(k);
    for kk in 0..k {
        let rep = match &spec.source {
            CiSource::Direct(j) => kappa_coord(psi, kk, j, &cone, tol)?,
            CiSource::Certificate(s) => kappa_coord_cert(psi, kk, *s, &cone, tol)?,
        };
        lp_count += rep.lp_count;
        coord.push(rep.value);
    }
    let size = match &spec.source {
        CiSource::Direct(j) => j.len(),
        CiSource::Certificate(s) => *s,
    };
    let kappa1 = coord.iter().copied().fold(f64::INFINITY, f64::min) / (cone.mass() * size as f64);
    let mut endo = spec.endogenous.clone();
    endo.sort_unstable();
    endo.dedup();
    let exo: Vec<usize> = (0..k).filter(|i| !endo.contains(i)).collect();
    let mut notes = Vec::new();
    let mut block = |set: &[usize], name: &str, force_fallback: bool| -> Result<f64> {
        if set.is_empty() {
            return Ok(f64::INFINITY);
        }
        if set.len() == 1 {
            return Ok(coord[set[0]]);
        }
        if force_fallback {
            notes.push(format!("{name} block: kappa_1 lower bound used"));
            return Ok(kappa1);
        }
        let rep = match &spec.source {
            CiSource::Direct(j) => kappa_block(psi, set, j, &cone, tol),
            CiSource::Certificate(s) => kappa_block_cert(psi, set, *s, &cone, tol),
        };
        let rep = match rep {
            Err(Error::EnumerationCap { .. }) => {
                notes.push(format!("{name} block: enumeration cap reached, kappa_1 lower bound used"));
                return Ok(kappa1);
            }
            other => other?,
        };
        lp_count += rep.lp_count;
        Ok(rep.value)
    };
    let endogenous = block(&endo, "endogenous", false)?;
    let exogenous = block(&exo, "exogenous", spec.variant == SlackVariant::SingleEndoRemark)?;
    Ok(Sensitivities {
        coord,
        endogenous,
        exogenous,
        kappa1,
        notes,
        lp_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceReport {
    /// Per-coordinate half-widths; `inf` when the slack denominator is not positive.
    #[serde(serialize_with = "crate::serde_real::reals")]
    pub half_width: Vec<f64>,
    #[serde(serialize_with = "crate::serde_real::real")]
    pub slack: f64,
    pub finite: Vec<bool>,
    pub sensitivities: Sensitivities,
}

impl ConfidenceReport {
    pub fn covers(&self, beta_hat: &DVector<f64>, beta: &DVector<f64>) -> bool {
        self.half_width.iter().enumerate().all(|(k, &h)| (beta_hat[k] - beta[k]).abs() <= h)
    }
}

/// `2 sigma r / (x_k* kappa_k) * slack` for each coordinate.
pub fn half_widths(sigma: f64, r: f64, x_star: &DVector<f64>, sens: &Sensitivities) -> (Vec<f64>, f64) {
    let slack = slack_factor(r, sens.endogenous, sens.exogenous);
    let widths = sens
        .coord
        .iter()
        .zip(x_star.iter())
        .map(|(&kappa, &xs)| {
            if slack.is_infinite() || kappa <= 0.0 {
                f64::INFINITY
            } else {
                2.0 * sigma * r / (xs * kappa) * slack
            }
        })
        .collect();
    (widths, slack)
}

fn pivotal_sigma(fit: &StivFit) -> Result<f64> {
    fit.sigma_hat
        .ok_or_else(|| Error::Config("confidence bounds need a pivotal fit with sigma_hat".into()))
}

pub fn confidence_intervals(fit: &StivFit, sd: &ScaledDesign, spec: &CiSpec, tol: &Tolerances) -> Result<ConfidenceReport> {
    let sens = compute_sensitivities(&sd.psi, spec, tol)?;
    confidence_from(fit, sd, spec.r, sens)
}

/// Interval evaluation from precomputed sensitivities.
pub fn confidence_from(fit: &StivFit, sd: &ScaledDesign, r: f64, sens: Sensitivities) -> Result<ConfidenceReport> {
    let sigma = pivotal_sigma(fit)?;
    if sens.coord.len() != sd.k() {
        return Err(Error::Config("sensitivities missing for some coordinates".into()));
    }
    let (half_width, slack) = half_widths(sigma, r, &sd.x_star, &sens);
    Ok(ConfidenceReport {
        finite: half_width.iter().map(|h| h.is_finite()).collect(),
        half_width,
        slack,
        sensitivities: sens,
    })
}

/// Selection thresholds `omega_k(s)`; identical arithmetic to the certificate intervals.
pub fn thresholds(fit: &StivFit, sd: &ScaledDesign, sens: &Sensitivities, r: f64) -> Result<Vec<f64>> {
    let sigma = pivotal_sigma(fit)?;
    Ok(half_widths(sigma, r, &sd.x_star, sens).0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub support: Vec<usize>,
    pub signs: Vec<i8>,
}

/// Keeps coordinate `k` iff `|beta_k| > omega_k`.
pub fn threshold_select(beta_hat: &[f64], omega: &[f64]) -> Result<Selection> {
    if beta_hat.len() != omega.len() {
        return Err(Error::Dimension("estimate and thresholds differ in length".into()));
    }
    let mut support = Vec::new();
    let mut signs = vec![0i8; beta_hat.len()];
    for (k, (&b, &w)) in beta_hat.iter().zip(omega).enumerate() {
        if b.abs() > w {
            support.push(k);
            signs[k] = if b > 0.0 { 1 } else { -1 };
        }
    }
    Ok(Selection { support, signs })
}

/// Indices with `|beta_k| > floor`.
pub fn support(beta: &[f64], floor: f64) -> Vec<usize> {
    beta.iter().enumerate().filter(|(_, b)| b.abs() > floor).map(|(k, _)| k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxSparseBound {
    #[serde(serialize_with = "crate::serde_real::real")]
    pub value: f64,
    pub argmin: Vec<usize>,
    #[serde(serialize_with = "crate::serde_real::labelled_reals")]
    pub evaluated: Vec<(Vec<usize>, f64)>,
}

/// `min_J max(variance_J, 6 |(D_X^-1 beta_ref)_{J^c}|_1 / (1-c))` over the candidate sets,
/// with enlarged-cone sensitivities.
///
/// The variance term uses the interpolated lower bound on the enlarged `kappa_{p,J}`.
pub fn approx_sparse_bound(
    fit: &StivFit,
    sd: &ScaledDesign,
    candidates: &[Vec<usize>],
    p: f64,
    spec: &CiSpec,
    beta_ref: &DVector<f64>,
    tol: &Tolerances,
) -> Result<ApproxSparseBound> {
    let sigma = pivotal_sigma(fit)?;
    if candidates.is_empty() {
        return Err(Error::Config("no candidate sets supplied".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::Config(format!("p = {p} must lie in [1, inf]")));
    }
    let k = sd.k();
    if beta_ref.len() != k {
        return Err(Error::Dimension("reference vector length differs from K".into()));
    }
    let cone = ConeSpec::enlarged(spec.c);
    let mut evaluated = Vec::new();
    for j in candidates {
        let bias: f64 = (0..k).filter(|i| !j.contains(i)).map(|i| (beta_ref[i] * sd.x_star[i]).abs()).sum::<f64>() * 6.0 / (1.0 - spec.c);
        match variance_term(&sd.psi, j, p, sigma, spec, &cone, tol) {
            Ok(var) => evaluated.push((j.clone(), var.max(bias))),
            Err(e) => warn!("candidate {j:?} skipped: {e}"),
        }
    }
    let best = evaluated
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .ok_or_else(|| Error::Config("every candidate set was skipped".into()))?;
    Ok(ApproxSparseBound {
        value: best.1,
        argmin: best.0,
        evaluated,
    })
}

fn variance_term(psi: &DMatrix<f64>, j: &[usize], p: f64, sigma: f64, spec: &CiSpec, cone: &ConeSpec, tol: &Tolerances) -> Result<f64> {
    if j.is_empty() {
        return Ok(0.0);
    }
    let k = psi.ncols();
    let mut kappa_inf = f64::INFINITY;
    for kk in 0..k {
        kappa_inf = kappa_inf.min(kappa_coord(psi, kk, j, cone, tol)?.value);
    }
    let kappa_p = if p.is_infinite() { kappa_inf } else { (cone.mass() * j.len() as f64).powf(-1.0 / p) * kappa_inf };
    let kappa1 = kappa_inf / (cone.mass() * j.len() as f64);
    let endo: Vec<usize> = spec.endogenous.clone();
    let exo: Vec<usize> = (0..k).filter(|i| !endo.contains(i)).collect();
    let block = |set: &[usize]| -> Result<f64> {
        if set.is_empty() {
            return Ok(f64::INFINITY);
        }
        match kappa_block(psi, set, j, cone, tol) {
            Ok(r) => Ok(r.value),
            Err(Error::EnumerationCap { .. }) => Ok(kappa1),
            Err(e) => Err(e),
        }
    };
    let slack = slack_factor(spec.r, block(&endo)?, block(&exo)?);
    if kappa_p <= 0.0 || slack.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * sigma * spec.r / kappa_p * slack)
}
