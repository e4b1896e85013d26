//! Seeded data generation and Monte-Carlo orchestration.
//!
//! Each replication draws from `ChaCha8Rng::seed_from_u64(base_seed + index)`.
//! Normals come from `rand_distr::StandardNormal` (ziggurat). Within a row the
//! draw order is: `L` instrument values, two structural shocks, then the
//! suspect-instrument noise.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conic::Tolerances;
use crate::error::{Error, Result};
use crate::inference::{compute_sensitivities, confidence_from, threshold_select, CiSource, CiSpec, SlackVariant, SUPPORT_FLOOR};
use crate::model::{rate_r, scale_design_with, Dataset, Normalization, RateConfig, ScaledDesign};
use crate::nonvalid::{nv_bhat_from_stiv, nv_detect, nv_fit, NvConfig, SparsityBound};
use crate::stiv::{stiv_fit, stiv_nonpivotal, stiv_two_stage, SigmaWeight, SqrtLassoConfig, StivConfig, StivFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub sigma_struct: f64,
    pub sigma_end: f64,
    pub rho: f64,
    pub beta_star: DVector<f64>,
    /// Reduced-form coefficients of the endogenous regressor on `z_1..z_{L-K+1}`.
    pub zeta: DVector<f64>,
    /// Covariances `E[zbar_l u]` of the suspect instruments.
    pub theta_star: Option<DVector<f64>>,
    pub seed: u64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self::with_size(49)
    }
}

impl DgpParams {
    /// `L = 50`, `K = 25`, `beta* = (1,1,1,1,1,0,...)`, `zeta_l = 0.15`, all noise scales 0.3.
    pub fn with_size(n: usize) -> Self {
        let (k, l) = (25, 50);
        let mut beta = DVector::zeros(k);
        beta.rows_mut(0, 5).fill(1.0);
        Self {
            n,
            k,
            l,
            sigma_struct: 0.3,
            sigma_end: 0.3,
            rho: 0.3,
            beta_star: beta,
            zeta: DVector::from_element(l - k + 1, 0.15),
            theta_star: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l < self.k || self.n == 0 {
            return Err(Error::Config("need n >= 1, K >= 1 and L >= K".into()));
        }
        if self.beta_star.len() != self.k || self.zeta.len() != self.l - self.k + 1 {
            return Err(Error::Config("beta_star must have length K and zeta length L-K+1".into()));
        }
        if !(self.rho.abs() < 1.0) || self.sigma_struct < 0.0 || self.sigma_end < 0.0 {
            return Err(Error::Config("noise covariance is not positive semidefinite with |rho| < 1".into()));
        }
        if let Some(theta) = &self.theta_star {
            if theta.is_empty() {
                return Err(Error::Config("theta_star must be nonempty".into()));
            }
            if self.sigma_struct == 0.0 && theta.iter().any(|&t| t != 0.0) {
                return Err(Error::Config("nonzero theta_star needs sigma_struct > 0".into()));
            }
        }
        Ok(())
    }
}

/// Draws one dataset: `x_1` endogenous through the shared shock, `x_k = z_{L-K+k}` for `k >= 2`.
///
/// Suspect instruments are `zbar_l = xi_l + theta_l u / sigma_struct^2` with independent standard normal `xi_l`.
pub fn generate_dgp(p: &DgpParams) -> Result<Dataset> {
    p.validate()?;
    let (n, k, l) = (p.n, p.k, p.l);
    let l1 = p.theta_star.as_ref().map_or(0, |t| t.len());
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut z = DMatrix::zeros(n, l);
    let mut u = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut xi = DMatrix::zeros(n, l1);
    let tail = (1.0 - p.rho * p.rho).sqrt();
    for i in 0..n {
        for j in 0..l {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        u[i] = p.sigma_struct * e1;
        v[i] = p.sigma_end * (p.rho * e1 + tail * e2);
        for j in 0..l1 {
            xi[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut x = DMatrix::zeros(n, k);
    let first = z.columns(0, l - k + 1) * &p.zeta + &v;
    x.set_column(0, &first);
    for j in 1..k {
        x.set_column(j, &z.column(l - k + j));
    }
    let y = &x * &p.beta_star + &u;
    let zbar = p.theta_star.as_ref().map(|theta| {
        let s2 = p.sigma_struct * p.sigma_struct;
        let mut zb = xi;
        for (j, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                zb.column_mut(j).axpy(t / s2, &u, 1.0);
            }
        }
        zb
    });
    Dataset::new(y, x, z, &[0], zbar)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if sorted[lo] == sorted[hi] {
        // Also keeps infinite values from turning into NaN.
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 5th, 50th and 95th percentiles.
pub fn percentiles(values: &[f64]) -> [f64; 3] {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    [quantile_sorted(&v, 0.05), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.95)]
}

/// Runs `f(seed)` for `reps` consecutive seeds, in parallel when enabled; output is in seed order.
pub fn map_replications<T: Send>(reps: usize, base_seed: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..reps).into_par_iter().map(|i| f(base_seed.wrapping_add(i as u64))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..reps).map(|i| f(base_seed.wrapping_add(i as u64))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    Pivotal { c: f64, sigma_weight: SigmaWeight },
    NonPivotal { sigma_star: f64 },
    /// Square-root Lasso projection instruments, then pivotal STIV.
    TwoStage { c: f64, sigma_weight: SigmaWeight, sql: SqrtLassoConfig },
}

impl Estimator {
    /// Cone constant used by the interval and threshold formulas.
    pub fn cone_c(&self) -> f64 {
        match *self {
            Estimator::Pivotal { c, .. } | Estimator::TwoStage { c, .. } => c,
            Estimator::NonPivotal { .. } => 0.1,
        }
    }
}

/// Pilot estimate fed to the non-validity program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NvPilot {
    /// `beta_hat = beta*` with `b_hat = 0`.
    Exact,
    /// The replication's STIV fit with `b_hat` from certificate sensitivities at `s`.
    Stiv { s: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvExperiment {
    pub pilot: NvPilot,
    pub c: f64,
    pub alpha1: f64,
    pub s1: SparsityBound,
    #[serde(default)]
    pub sigma_weight: SigmaWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub estimator: Estimator,
    pub normalization: Normalization,
    pub rate: RateConfig,
    /// Sparsity certificate for thresholds and intervals; none skips inference.
    pub certificate: Option<usize>,
    pub nv: Option<NvExperiment>,
    pub tol: Tolerances,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Pivotal {
                c: 0.1,
                sigma_weight: SigmaWeight::default(),
            },
            normalization: Normalization::default(),
            rate: RateConfig::default(),
            certificate: None,
            nv: None,
            tol: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NvReplication {
    pub theta_hat: Vec<f64>,
    pub sigma1_hat: f64,
    #[serde(serialize_with = "crate::serde_real::real")]
    pub b_hat: f64,
    #[serde(serialize_with = "crate::serde_real::real")]
    pub omega: f64,
    pub flagged: Vec<usize>,
    pub recovered: bool,
    /// Largest gap between the direct `(1/n) sum_i (w_li - theta_l)^2` and the mean/variance form.
    pub identity_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub seed: u64,
    pub beta_hat: Vec<f64>,
    pub sigma_hat: Option<f64>,
    pub r: f64,
    #[serde(serialize_with = "crate::serde_real::opt_reals")]
    pub omega: Option<Vec<f64>>,
    pub selected: Option<Vec<usize>>,
    /// Selected set and signs equal those of `beta*`.
    pub recovered: Option<bool>,
    /// Every interval contains its `beta*_k`.
    pub covered: Option<bool>,
    pub nv: Option<NvReplication>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub reps: usize,
    pub completed: usize,
    pub failures: usize,
    pub failed_seeds: Vec<u64>,
    /// 5th, 50th and 95th percentile of each coordinate.
    pub beta_percentiles: Vec<[f64; 3]>,
    pub sigma_percentiles: Option<[f64; 3]>,
    pub support_recovery: Option<f64>,
    pub ci_coverage: Option<f64>,
    pub nv_recovery: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub replications: Vec<Replication>,
}

impl McSummary {
    /// Drops the per-replication records.
    pub fn without_replications(mut self) -> Self {
        self.replications.clear();
        self
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn exact_signs(signs: &[i8], truth: &[f64]) -> bool {
    signs.len() == truth.len() && signs.iter().zip(truth).all(|(&s, &t)| s == sign(t))
}

struct Fitted {
    fit: StivFit,
    data: Dataset,
    design: ScaledDesign,
    r: f64,
}

fn fit_once(d: Dataset, cfg: &McConfig) -> Result<Fitted> {
    match cfg.estimator {
        Estimator::Pivotal { c, sigma_weight } => {
            let design = scale_design_with(&d, cfg.normalization)?;
            let r = rate_r(d.n(), d.l(), &cfg.rate)?.r;
            let scfg = StivConfig {
                sigma_weight,
                ..StivConfig::pivotal(c, r)
            };
            let fit = stiv_fit(&d, &design, &scfg, &cfg.tol)?;
            Ok(Fitted { fit, data: d, design, r })
        }
        Estimator::NonPivotal { sigma_star } => {
            let design = scale_design_with(&d, cfg.normalization)?;
            let r = rate_r(d.n(), d.l(), &cfg.rate)?.r;
            let fit = stiv_nonpivotal(&d, &design, sigma_star, r, &cfg.tol)?;
            Ok(Fitted { fit, data: d, design, r })
        }
        Estimator::TwoStage { c, sigma_weight, sql } => {
            let scfg = StivConfig {
                sigma_weight,
                ..StivConfig::pivotal(c, 1.0)
            };
            let two = stiv_two_stage(&d, &scfg, &cfg.rate, &sql, cfg.normalization, &cfg.tol)?;
            // The non-validity step needs the original suspect instruments.
            let data = match d.zbar() {
                Some(zb) => two.projected.with_zbar(Some(zb.clone()))?,
                None => two.projected,
            };
            Ok(Fitted {
                fit: two.fit,
                data,
                design: two.design,
                r: two.rate.r,
            })
        }
    }
}

/// One replication of the configured pipeline on the dataset drawn with `seed`.
pub fn replicate(p: &DgpParams, cfg: &McConfig, seed: u64) -> Result<Replication> {
    let params = DgpParams { seed, ..p.clone() };
    let d = generate_dgp(&params)?;
    let Fitted { fit, data, design, r } = fit_once(d, cfg)?;
    let truth = params.beta_star.as_slice();
    let mut rep = Replication {
        seed,
        beta_hat: fit.beta_hat.iter().copied().collect(),
        sigma_hat: fit.sigma_hat,
        r,
        omega: None,
        selected: None,
        recovered: None,
        covered: None,
        nv: None,
    };
    let mut sens_for_nv = None;
    if let Some(s) = cfg.certificate {
        let spec = CiSpec {
            source: CiSource::Certificate(s),
            r,
            endogenous: data.endogenous().to_vec(),
            c: cfg.estimator.cone_c(),
            variant: SlackVariant::Standard,
        };
        let sens = compute_sensitivities(&design.psi, &spec, &cfg.tol)?;
        let report = confidence_from(&fit, &design, r, sens)?;
        // Solver noise on zero coordinates is not evidence of a nonzero coefficient.
        let cleaned: Vec<f64> = rep.beta_hat.iter().map(|&b| if b.abs() <= SUPPORT_FLOOR { 0.0 } else { b }).collect();
        let sel = threshold_select(&cleaned, &report.half_width)?;
        rep.recovered = Some(exact_signs(&sel.signs, truth));
        rep.covered = Some(report.covers(&fit.beta_hat, &params.beta_star));
        rep.selected = Some(sel.support);
        rep.omega = Some(report.half_width.clone());
        sens_for_nv = Some((s, report.sensitivities));
    }
    if let Some(nv) = &cfg.nv {
        rep.nv = Some(nv_replication(&params, nv, &data, &fit, r, sens_for_nv.as_ref(), &cfg.tol)?);
    }
    Ok(rep)
}

fn nv_replication(
    params: &DgpParams,
    nv: &NvExperiment,
    data: &Dataset,
    fit: &StivFit,
    r: f64,
    sens: Option<&(usize, crate::inference::Sensitivities)>,
    tol: &Tolerances,
) -> Result<NvReplication> {
    let theta_star = params
        .theta_star
        .as_ref()
        .ok_or_else(|| Error::Config("non-validity experiment needs theta_star".into()))?;
    let (pilot, b_hat) = match nv.pilot {
        NvPilot::Exact => (params.beta_star.clone(), 0.0),
        NvPilot::Stiv { s } => {
            let sigma = fit
                .sigma_hat
                .ok_or_else(|| Error::Config("a STIV pilot needs a pivotal fit".into()))?;
            let sens = sens
                .filter(|(cs, _)| *cs == s)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Config("a STIV pilot needs certificate sensitivities at the same s".into()))?;
            let b = nv_bhat_from_stiv(sigma, r, s, sens.kappa1, sens.endogenous, sens.exogenous);
            (fit.beta_hat.clone(), b)
        }
    };
    let zbar = data.zbar().ok_or_else(|| Error::Config("dataset has no suspect instruments".into()))?;
    let r1 = rate_r(data.n(), zbar.ncols().max(2), &RateConfig { alpha: nv.alpha1, ..RateConfig::default() })?.r;
    if !b_hat.is_finite() {
        return Ok(NvReplication {
            theta_hat: vec![f64::NAN; zbar.ncols()],
            sigma1_hat: f64::NAN,
            b_hat,
            omega: f64::INFINITY,
            flagged: Vec::new(),
            recovered: theta_star.iter().all(|&t| t == 0.0),
            identity_error: 0.0,
        });
    }
    let ncfg = NvConfig {
        c: nv.c,
        r1,
        b_hat,
        s1: nv.s1,
        sigma_weight: nv.sigma_weight,
    };
    let nfit = nv_fit(data, &pilot, &ncfg, tol)?;
    let det = nv_detect(&nfit, &ncfg);
    let resid = data.y() - data.x() * &pilot;
    let n = data.n() as f64;
    let identity_error = zbar
        .column_iter()
        .zip(&nfit.moments)
        .zip(nfit.theta_hat.iter())
        .map(|((col, m), &t)| {
            let direct = col.iter().zip(resid.iter()).map(|(z, e)| (z * e - t).powi(2)).sum::<f64>() / n;
            (direct - m.q(t)).abs()
        })
        .fold(0.0, f64::max);
    Ok(NvReplication {
        theta_hat: nfit.theta_hat.iter().copied().collect(),
        sigma1_hat: nfit.sigma1_hat,
        b_hat,
        omega: det.omega,
        recovered: exact_signs(&det.selection.signs, theta_star.as_slice()),
        flagged: det.selection.support,
        identity_error,
    })
}

fn frequency(values: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for v in values {
        let v = v?;
        total += 1;
        hit += usize::from(v);
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Runs `reps` replications with seeds `base_seed + i` and aggregates them.
///
/// Failed replications are logged and excluded; more than 1% failures is an error.
pub fn monte_carlo(p: &DgpParams, cfg: &McConfig, reps: usize, base_seed: u64) -> Result<McSummary> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    p.validate()?;
    let outcomes = map_replications(reps, base_seed, |seed| (seed, replicate(p, cfg, seed)));
    let mut replications = Vec::with_capacity(reps);
    let mut failed_seeds = Vec::new();
    for (seed, out) in outcomes {
        match out {
            Ok(r) => replications.push(r),
            Err(e) => {
                warn!("replication with seed {seed} failed: {e}");
                failed_seeds.push(seed);
            }
        }
    }
    if failed_seeds.len() * 100 > reps {
        return Err(Error::Solver {
            status: crate::conic::SolveStatus::NumericalFailure,
            context: format!("{} of {reps} replications failed", failed_seeds.len()),
        });
    }
    summarize(reps, replications, failed_seeds)
}

pub fn summarize(reps: usize, replications: Vec<Replication>, failed_seeds: Vec<u64>) -> Result<McSummary> {
    let first = replications
        .first()
        .ok_or_else(|| Error::Config("no replication completed".into()))?;
    let k = first.beta_hat.len();
    let beta_percentiles = (0..k)
        .map(|j| percentiles(&replications.iter().map(|r| r.beta_hat[j]).collect::<Vec<_>>()))
        .collect();
    let sigmas: Option<Vec<f64>> = replications.iter().map(|r| r.sigma_hat).collect();
    Ok(McSummary {
        reps,
        completed: replications.len(),
        failures: failed_seeds.len(),
        failed_seeds,
        beta_percentiles,
        sigma_percentiles: sigmas.map(|s| percentiles(&s)),
        support_recovery: frequency(replications.iter().map(|r| r.recovered)),
        ci_coverage: frequency(replications.iter().map(|r| r.covered)),
        nv_recovery: frequency(replications.iter().map(|r| r.nv.as_ref().map(|n| n.recovered))),
        replications,
    })
}

/// Named simulation setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Pivotal STIV at `n = 49`.
    Table3,
    /// Non-pivotal STIV at `n = 49` with `sigma* = 0.466`.
    Table4,
    /// Pivotal STIV at `n = 8000` with certificate `s = 5` thresholds and intervals.
    Table5,
    /// Two-stage STIV at `n = 8000` with certificate `s = 5`.
    Table7,
    /// `n = 2000`, ten suspect instruments, two with `theta* = 0.5`.
    NvPlanted,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Table3, Preset::Table4, Preset::Table5, Preset::Table7, Preset::NvPlanted];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table3 => "table3",
            Preset::Table4 => "table4",
            Preset::Table5 => "table5",
            Preset::Table7 => "table7",
            Preset::NvPlanted => "nv-planted",
        }
    }

    pub fn params(self) -> DgpParams {
        match self {
            Preset::Table3 | Preset::Table4 => DgpParams::with_size(49),
            Preset::Table5 | Preset::Table7 => DgpParams::with_size(8000),
            Preset::NvPlanted => {
                let mut theta = DVector::zeros(10);
                theta[0] = 0.5;
                theta[1] = 0.5;
                DgpParams {
                    theta_star: Some(theta),
                    ..DgpParams::with_size(2000)
                }
            }
        }
    }

    pub fn config(self) -> McConfig {
        let base = McConfig::default();
        let pivotal = base.estimator;
        match self {
            Preset::Table3 => base,
            Preset::Table4 => McConfig {
                estimator: Estimator::NonPivotal { sigma_star: 0.466 },
                ..base
            },
            Preset::Table5 => McConfig {
                certificate: Some(5),
                ..base
            },
            Preset::Table7 => McConfig {
                estimator: Estimator::TwoStage {
                    c: 0.1,
                    sigma_weight: SigmaWeight::default(),
                    sql: SqrtLassoConfig::default(),
                },
                certificate: Some(5),
                ..base
            },
            Preset::NvPlanted => McConfig {
                estimator: pivotal,
                nv: Some(NvExperiment {
                    pilot: NvPilot::Exact,
                    c: 0.1,
                    alpha1: 0.05,
                    s1: SparsityBound::Auto,
                    sigma_weight: SigmaWeight::default(),
                }),
                ..base
            },
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            Preset::Table3 | Preset::Table4 => 1000,
            Preset::Table5 | Preset::Table7 => 20,
            Preset::NvPlanted => 100,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}
