//! The STIV estimator, its non-pivotal variant and the two-stage variant with
//! estimated linear projection instruments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_socp, ProgramBuilder, SocConstraint, SolveResult, SolveStatus, Tolerances};
use crate::error::{Error, Result};
use crate::model::{normal_quantile, rate_r, scale_design_with, Dataset, Normalization, Rate, RateConfig, ScaledDesign};

/// How the `sigma` term enters the objective `|D_X^-1 beta|_1 + c w sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaWeight {
    /// `w = 1`.
    Unit,
    /// `w = n`, the weight obtained by writing the program with `t = sqrt(n) sigma`
    /// and penalizing `c sqrt(n) t`.
    #[default]
    SampleSize,
}

impl SigmaWeight {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            SigmaWeight::Unit => 1.0,
            SigmaWeight::SampleSize => n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Pivotal,
    NonPivotal { sigma_star: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StivConfig {
    pub c: f64,
    pub r: f64,
    pub variant: Variant,
    pub sigma_weight: SigmaWeight,
}

impl StivConfig {
    pub fn pivotal(c: f64, r: f64) -> Self {
        Self {
            c,
            r,
            variant: Variant::Pivotal,
            sigma_weight: SigmaWeight::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::Config(format!("c = {} must lie in (0,1)", self.c)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r = {} must be positive", self.r)));
        }
        if let Variant::NonPivotal { sigma_star } = self.variant {
            if !(sigma_star > 0.0 && sigma_star.is_finite()) {
                return Err(Error::Config("sigma_star must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StivFit {
    pub beta_hat: DVector<f64>,
    /// `None` for the non-pivotal variant.
    pub sigma_hat: Option<f64>,
    /// `sqrt(Q(beta_hat))`.
    pub q_hat: f64,
    pub objective: f64,
    pub solve: SolveResult,
    /// `max(0, |(1/n) D_Z Z'(Y - X beta)|_inf - sigma r)`.
    pub iv_residual: f64,
    /// `max(0, sqrt(Q) - sigma)`; zero for the non-pivotal variant.
    pub q_residual: f64,
}

/// `(1/n) D_Z Z' v`.
pub fn scaled_moments(d: &Dataset, sd: &ScaledDesign, v: &DVector<f64>) -> DVector<f64> {
    let n = d.n() as f64;
    let mut g = d.z().tr_mul(v);
    for (l, gl) in g.iter_mut().enumerate() {
        *gl /= n * sd.z_star[l];
    }
    g
}

pub fn residual(d: &Dataset, beta: &DVector<f64>) -> DVector<f64> {
    d.y() - d.x() * beta
}

/// `sqrt((1/n) |Y - X beta|^2)`.
pub fn root_mean_square_residual(d: &Dataset, beta: &DVector<f64>) -> f64 {
    (residual(d, beta).norm_squared() / d.n() as f64).sqrt()
}

/// `x -> (q_head, rho)` such that `|target - M x|^2 = |q_head - R x|^2 + rho^2`.
struct Compressed {
    r: DMatrix<f64>,
    q: DVector<f64>,
    rho: f64,
}

fn compress(m: &DMatrix<f64>, target: &DVector<f64>) -> Compressed {
    let (n, p) = m.shape();
    if n <= p {
        return Compressed {
            r: m.clone(),
            q: target.clone(),
            rho: 0.0,
        };
    }
    let qr = m.clone().qr();
    let q = qr.q();
    let qt_y = q.tr_mul(target);
    let rho2 = (target.norm_squared() - qt_y.norm_squared()).max(0.0);
    // Recompute the orthogonal remainder directly when cancellation is severe.
    let rho = if rho2 < 1e-8 * target.norm_squared() {
        (target - &q * &qt_y).norm()
    } else {
        rho2.sqrt()
    };
    Compressed {
        r: qr.r(),
        q: qt_y,
        rho,
    }
}

/// Adds `t_var >= (1/sqrt(n)) |target - M x|` with `x` at `x_offset`.
fn add_residual_cone(b: &mut ProgramBuilder, comp: &Compressed, n: usize, x_offset: usize, t_var: usize) {
    let p = comp.r.ncols();
    let rows = comp.r.nrows() + 1 + usize::from(comp.rho > 0.0);
    let nv = b.num_vars();
    let inv = 1.0 / (n as f64).sqrt();
    let mut a = DMatrix::zeros(rows, nv);
    let mut off = DVector::zeros(rows);
    a[(0, t_var)] = 1.0;
    for i in 0..comp.r.nrows() {
        for j in 0..p {
            a[(i + 1, x_offset + j)] = -comp.r[(i, j)] * inv;
        }
        off[i + 1] = comp.q[i] * inv;
    }
    if comp.rho > 0.0 {
        off[rows - 1] = comp.rho * inv;
    }
    b.cone(SocConstraint { a, b: off });
}

/// Adds `w_j >= |x_j|` rows for the block of `len` variables.
fn add_abs_rows(b: &mut ProgramBuilder, x_offset: usize, w_offset: usize, len: usize) {
    for j in 0..len {
        b.le(vec![(x_offset + j, 1.0), (w_offset + j, -1.0)], 0.0);
        b.le(vec![(x_offset + j, -1.0), (w_offset + j, -1.0)], 0.0);
        b.set_objective(w_offset + j, 1.0);
    }
}

fn solver_error(res: &SolveResult, what: &str) -> Error {
    let context = match res.status {
        SolveStatus::Infeasible => format!("{what}: reported infeasible, which indicates a solver defect"),
        _ => format!("{what}: after {} iterations", res.iterations),
    };
    Error::Solver {
        status: res.status,
        context,
    }
}

fn check_dims(d: &Dataset, sd: &ScaledDesign) -> Result<()> {
    if sd.k() != d.k() || sd.l() != d.l() {
        return Err(Error::Dimension("scaled design does not match dataset".into()));
    }
    Ok(())
}

/// Pivotal STIV: minimize `|D_X^-1 beta|_1 + c w sigma` over the IV-constraint set.
pub fn stiv_fit(d: &Dataset, sd: &ScaledDesign, cfg: &StivConfig, tol: &Tolerances) -> Result<StivFit> {
    cfg.validate()?;
    check_dims(d, sd)?;
    if let Variant::NonPivotal { sigma_star } = cfg.variant {
        return stiv_nonpivotal(d, sd, sigma_star, cfg.r, tol);
    }
    let (n, k) = (d.n(), d.k());
    let xs = scaled_regressors(d, sd);
    let g = scaled_moments(d, sd, d.y());
    // Variables: gamma (k), w (k), sigma.
    let sigma = 2 * k;
    let mut b = ProgramBuilder::new(2 * k + 1);
    add_abs_rows(&mut b, 0, k, k);
    b.set_objective(sigma, cfg.c * cfg.sigma_weight.factor(n));
    add_iv_rows(&mut b, &sd.psi, &g, Some((sigma, cfg.r)), 0.0);
    add_residual_cone(&mut b, &compress(&xs, d.y()), n, 0, sigma);
    let res = solve_socp(&b.build(), tol);
    if !res.is_optimal() {
        return Err(solver_error(&res, "pivotal STIV"));
    }
    let beta = DVector::from_iterator(k, (0..k).map(|j| res.x[j] / sd.x_star[j]));
    let sigma_hat = res.x[sigma].max(0.0);
    Ok(finish(d, sd, cfg, beta, Some(sigma_hat), res))
}

/// Non-pivotal variant: minimize `|D_X^-1 beta|_1` subject to `|(1/n) D_Z Z'(Y - X beta)|_inf <= sigma_star r`.
pub fn stiv_nonpivotal(d: &Dataset, sd: &ScaledDesign, sigma_star: f64, r: f64, tol: &Tolerances) -> Result<StivFit> {
    let cfg = StivConfig {
        c: 0.5,
        r,
        variant: Variant::NonPivotal { sigma_star },
        sigma_weight: SigmaWeight::Unit,
    };
    cfg.validate()?;
    check_dims(d, sd)?;
    let k = d.k();
    let g = scaled_moments(d, sd, d.y());
    let mut b = ProgramBuilder::new(2 * k);
    add_abs_rows(&mut b, 0, k, k);
    add_iv_rows(&mut b, &sd.psi, &g, None, sigma_star * r);
    let res = solve_socp(&b.build(), tol);
    if !res.is_optimal() {
        return Err(solver_error(&res, "non-pivotal STIV"));
    }
    let beta = DVector::from_iterator(k, (0..k).map(|j| res.x[j] / sd.x_star[j]));
    Ok(finish(d, sd, &cfg, beta, None, res))
}

fn scaled_regressors(d: &Dataset, sd: &ScaledDesign) -> DMatrix<f64> {
    let mut xs = d.x().clone();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        col /= sd.x_star[j];
    }
    xs
}

/// `|g - Psi gamma|_inf <= r sigma + fixed`; `sigma_col` is `None` for a fixed bound.
fn add_iv_rows(b: &mut ProgramBuilder, psi: &DMatrix<f64>, g: &DVector<f64>, sigma_col: Option<(usize, f64)>, fixed: f64) {
    let (l, k) = psi.shape();
    for row in 0..l {
        let mut pos: Vec<(usize, f64)> = (0..k).filter(|&j| psi[(row, j)] != 0.0).map(|j| (j, psi[(row, j)])).collect();
        let mut neg: Vec<(usize, f64)> = pos.iter().map(|&(j, v)| (j, -v)).collect();
        if let Some((s, r)) = sigma_col {
            pos.push((s, -r));
            neg.push((s, -r));
        }
        b.le(pos, g[row] + fixed);
        b.le(neg, -g[row] + fixed);
    }
}

fn finish(d: &Dataset, sd: &ScaledDesign, cfg: &StivConfig, beta: DVector<f64>, sigma_hat: Option<f64>, solve: SolveResult) -> StivFit {
    let n = d.n();
    let q_hat = root_mean_square_residual(d, &beta);
    let moments = scaled_moments(d, sd, &residual(d, &beta));
    let bound = match (cfg.variant, sigma_hat) {
        (Variant::NonPivotal { sigma_star }, _) => sigma_star * cfg.r,
        (_, Some(s)) => s * cfg.r,
        _ => 0.0,
    };
    let l1: f64 = beta.iter().zip(sd.x_star.iter()).map(|(b, x)| (b * x).abs()).sum();
    let objective = l1 + sigma_hat.map_or(0.0, |s| cfg.c * cfg.sigma_weight.factor(n) * s);
    StivFit {
        iv_residual: (moments.amax() - bound).max(0.0),
        q_residual: sigma_hat.map_or(0.0, |s| (q_hat - s).max(0.0)),
        beta_hat: beta,
        sigma_hat,
        q_hat,
        objective,
        solve,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtLassoConfig {
    pub alpha: f64,
    pub c_sql: f64,
}

impl Default for SqrtLassoConfig {
    fn default() -> Self {
        Self { alpha: 0.05, c_sql: 1.1 }
    }
}

/// Square-root Lasso: minimize `sqrt((1/n)|target - design zeta|^2) + (lambda/n) sum_l s_l |zeta_l|`
/// with `s_l` the column root-mean-square and `lambda = c_sql sqrt(n) Phi^-1(1 - alpha/(2L))`.
pub fn sqrt_lasso(target: &DVector<f64>, design: &DMatrix<f64>, cfg: &SqrtLassoConfig, tol: &Tolerances) -> Result<DVector<f64>> {
    let (n, l) = design.shape();
    if target.len() != n {
        return Err(Error::Dimension("target length differs from design rows".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || !(cfg.c_sql > 0.0) {
        return Err(Error::Config("square-root Lasso needs alpha in (0,1) and c_sql > 0".into()));
    }
    let scale: Vec<f64> = design.column_iter().map(|c| (c.norm_squared() / n as f64).sqrt()).collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0) {
        return Err(Error::DegenerateScaling { matrix: "first-stage design", column: j + 1 });
    }
    let mut zs = design.clone();
    for (j, mut col) in zs.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    let nf = n as f64;
    let lambda = cfg.c_sql * nf.sqrt() * normal_quantile(1.0 - cfg.alpha / (2.0 * l as f64));
    // Variables: xi (l), w (l), t.
    let t = 2 * l;
    let mut b = ProgramBuilder::new(2 * l + 1);
    add_abs_rows(&mut b, 0, l, l);
    for j in 0..l {
        b.set_objective(l + j, lambda / nf);
    }
    b.set_objective(t, 1.0);
    add_residual_cone(&mut b, &compress(&zs, target), n, 0, t);
    let res = solve_socp(&b.build(), tol);
    if !res.is_optimal() {
        return Err(solver_error(&res, "square-root Lasso"));
    }
    Ok(DVector::from_iterator(l, (0..l).map(|j| res.x[j] / scale[j])))
}

/// Replaces the instruments by one fitted column per endogenous regressor and
/// the exogenous regressors themselves, so the new instrument count equals `K`.
///
/// `first_stage[i]` belongs to the `i`-th endogenous index in ascending order.
pub fn projection_instruments(d: &Dataset, first_stage: &[DVector<f64>]) -> Result<Dataset> {
    let endo = d.endogenous();
    if first_stage.len() != endo.len() {
        return Err(Error::Dimension(format!(
            "{} first-stage vectors for {} endogenous regressors",
            first_stage.len(),
            endo.len()
        )));
    }
    let mut z = d.x().clone();
    for (zeta, &k) in first_stage.iter().zip(endo) {
        if zeta.len() != d.l() {
            return Err(Error::Dimension("first-stage vector length differs from L".into()));
        }
        let fitted = d.z() * zeta;
        if fitted.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateInstrument { endogenous: k + 1 });
        }
        z.set_column(k, &fitted);
    }
    d.with_instruments(z)
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoStageFit {
    pub first_stage: Vec<DVector<f64>>,
    pub projected: Dataset,
    pub design: ScaledDesign,
    pub rate: Rate,
    pub fit: StivFit,
}

/// Square-root Lasso first stage, projection instruments, then STIV with the rate recomputed for `L' = K`.
///
/// `cfg.r` is ignored; the rate comes from `rate_cfg`.
pub fn stiv_two_stage(
    d: &Dataset,
    cfg: &StivConfig,
    rate_cfg: &RateConfig,
    sql: &SqrtLassoConfig,
    normalization: Normalization,
    tol: &Tolerances,
) -> Result<TwoStageFit> {
    let mut first_stage = Vec::with_capacity(d.endogenous().len());
    for &k in d.endogenous() {
        let target = d.x().column(k).into_owned();
        first_stage.push(sqrt_lasso(&target, d.z(), sql, tol)?);
    }
    let projected = projection_instruments(d, &first_stage)?;
    let design = scale_design_with(&projected, normalization)?;
    let rate = rate_r(projected.n(), projected.l(), rate_cfg)?;
    let cfg2 = StivConfig { r: rate.r, ..*cfg };
    let fit = stiv_fit(&projected, &design, &cfg2, tol)?;
    Ok(TwoStageFit {
        first_stage,
        projected,
        design,
        rate,
        fit,
    })
}
