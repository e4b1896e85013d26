use std::path::Path;

use anyhow::Context;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use stiv_core::conic::Tolerances;
use stiv_core::inference::{
    compute_sensitivities, confidence_from, support, threshold_select, CiSource, CiSpec, SlackVariant, SUPPORT_FLOOR,
};
use stiv_core::model::{load_dataset, rate_r, scale_design_with, Dataset, Normalization, RateConfig, RateMode, ScaledDesign};
use stiv_core::nonvalid::{nv_bhat_from_stiv, nv_detect, nv_fit, NvConfig, SparsityBound};
use stiv_core::sensitivity::{
    coherence_bound, kappa_block, kappa_block_cert, kappa_coord, kappa_coord_cert, kappa_lp_norm_bounds, ConeSpec,
    NormSource, SensitivityKind,
};
use stiv_core::sim::{monte_carlo, McSummary, Preset};
use stiv_core::stiv::{stiv_fit, stiv_nonpivotal, stiv_two_stage, SigmaWeight, SqrtLassoConfig, StivConfig, StivFit};
use stiv_core::{serde_real, Error};

use crate::args::*;
use crate::output::RunManifest;

impl From<NormalizationArg> for Normalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::MaxAbs => Normalization::MaxAbs,
            NormalizationArg::Rms => Normalization::Rms,
        }
    }
}

impl From<SigmaWeightArg> for SigmaWeight {
    fn from(w: SigmaWeightArg) -> Self {
        match w {
            SigmaWeightArg::Unit => SigmaWeight::Unit,
            SigmaWeightArg::SampleSize => SigmaWeight::SampleSize,
        }
    }
}

/// Parses a 1-based comma list into 0-based indices below `bound`.
pub fn parse_indices(list: &str, bound: usize, flag: &str) -> Result<Vec<usize>, Error> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let i: usize = item
            .parse()
            .map_err(|_| Error::Validation(format!("{flag}: {item:?} is not a positive integer")))?;
        if i == 0 || i > bound {
            return Err(Error::Validation(format!("{flag}: index {i} outside 1..={bound}")));
        }
        if !out.contains(&(i - 1)) {
            out.push(i - 1);
        }
    }
    Ok(out)
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

fn parse_p(p: Option<&str>) -> Result<f64, Error> {
    match p.map(str::trim) {
        None => Ok(1.0),
        Some("inf") | Some("infinity") => Ok(f64::INFINITY),
        Some(s) => {
            let p: f64 = s.parse().map_err(|_| Error::Validation(format!("--p: {s:?} is not a number")))?;
            if !(p >= 1.0) {
                return Err(Error::Validation(format!("--p = {p} must be at least 1")));
            }
            Ok(p)
        }
    }
}

/// Loads the dataset, resolving `--endogenous` against the column count in the header.
pub fn load(path: &Path, endogenous: Option<&str>, manifest: &mut RunManifest) -> anyhow::Result<Dataset> {
    let spec = endogenous.ok_or_else(|| {
        Error::Validation("--endogenous is required: a 1-based list of endogenous regressors, `none` or `all`".into())
    })?;
    let bytes = manifest.read_input(path).with_context(|| format!("reading {}", path.display()))?;
    let k = count_regressors(&bytes)?;
    let endo = match spec.trim() {
        "none" => Vec::new(),
        "all" => (0..k).collect(),
        list => parse_indices(list, k, "--endogenous")?,
    };
    let data = manifest.timed("load", || load_dataset(&bytes[..], &endo))?;
    Ok(data)
}

fn count_regressors(bytes: &[u8]) -> Result<usize, Error> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers().map_err(|e| Error::Parse {
        row: 0,
        column: String::new(),
        message: e.to_string(),
    })?;
    Ok(headers.iter().filter(|h| is_regressor(h.trim())).count())
}

fn is_regressor(h: &str) -> bool {
    h.strip_prefix('x').is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

fn rate_config(a: &RateArgs) -> Result<RateConfig, Error> {
    let mode = match a.rate_mode {
        RateModeArg::Practical => RateMode::Practical,
        RateModeArg::Full => RateMode::Full {
            a: a.a,
            delta: a.delta,
            d_n_delta: a
                .d_n_delta
                .ok_or_else(|| Error::Config("--r-mode full needs --d-n-delta".into()))?,
            a0: a.a0.ok_or_else(|| Error::Config("--r-mode full needs --a0".into()))?,
        },
    };
    Ok(RateConfig { alpha: a.alpha, mode })
}

struct Fitted {
    fit: StivFit,
    /// The data the fit used: projected instruments for the two-stage variant.
    data: Dataset,
    design: ScaledDesign,
    r: f64,
    alpha: f64,
    side_condition_ok: bool,
    first_stage: Option<Vec<Vec<f64>>>,
}

fn fit(d: &Dataset, a: &FitArgs, normalization: Normalization, tol: &Tolerances) -> anyhow::Result<Fitted> {
    let rate_cfg = rate_config(&a.rate)?;
    let cfg = StivConfig {
        sigma_weight: a.sigma_weight.into(),
        ..StivConfig::pivotal(a.c, 1.0)
    };
    if let VariantArg::TwoStage = a.variant {
        let sql = SqrtLassoConfig {
            alpha: a.rate.alpha,
            c_sql: a.c_sql,
        };
        let two = stiv_two_stage(d, &cfg, &rate_cfg, &sql, normalization, tol)?;
        let data = match d.zbar() {
            Some(zb) => two.projected.with_zbar(Some(zb.clone()))?,
            None => two.projected,
        };
        return Ok(Fitted {
            fit: two.fit,
            data,
            design: two.design,
            r: two.rate.r,
            alpha: two.rate.alpha,
            side_condition_ok: two.rate.side_condition_ok,
            first_stage: Some(two.first_stage.iter().map(|v| v.iter().copied().collect()).collect()),
        });
    }
    let design = scale_design_with(d, normalization)?;
    let rate = rate_r(d.n(), d.l(), &rate_cfg)?;
    let fit = match a.variant {
        VariantArg::Nonpivotal => {
            let sigma_star = a
                .sigma_star
                .ok_or_else(|| Error::Config("--variant nonpivotal needs --sigma-star".into()))?;
            stiv_nonpivotal(d, &design, sigma_star, rate.r, tol)?
        }
        _ => stiv_fit(d, &design, &StivConfig { r: rate.r, ..cfg }, tol)?,
    };
    Ok(Fitted {
        fit,
        data: d.clone(),
        design,
        r: rate.r,
        alpha: rate.alpha,
        side_condition_ok: rate.side_condition_ok,
        first_stage: None,
    })
}

#[derive(Debug, Serialize)]
pub struct MappingEntry {
    pub regressor: usize,
    pub instrument: usize,
}

#[derive(Debug, Serialize)]
pub struct InspectResult {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub suspect_instruments: usize,
    pub endogenous: Vec<usize>,
    pub exogenous_map: Vec<MappingEntry>,
    pub normalization: Normalization,
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub zbar_star: Option<f64>,
    pub r: f64,
    pub alpha: f64,
}

pub fn inspect(a: &InspectArgs, m: &mut RunManifest) -> anyhow::Result<InspectResult> {
    let d = load(&a.data.data, a.data.endogenous.as_deref(), m)?;
    let sd = scale_design_with(&d, a.data.normalization.into())?;
    let rate = rate_r(d.n(), d.l(), &RateConfig { alpha: a.alpha, ..RateConfig::default() })?;
    Ok(InspectResult {
        n: d.n(),
        k: d.k(),
        l: d.l(),
        suspect_instruments: d.zbar().map_or(0, |z| z.ncols()),
        endogenous: one_based(d.endogenous()),
        exogenous_map: d
            .exogenous_map()
            .iter()
            .map(|&(k, l)| MappingEntry {
                regressor: k + 1,
                instrument: l + 1,
            })
            .collect(),
        normalization: sd.normalization,
        x_star: sd.x_star.iter().copied().collect(),
        z_star: sd.z_star.iter().copied().collect(),
        zbar_star: sd.zbar_star,
        r: rate.r,
        alpha: rate.alpha,
    })
}

#[derive(Debug, Serialize)]
pub struct Residuals {
    pub iv: f64,
    pub q: f64,
}

#[derive(Debug, Serialize)]
pub struct EstimateResult {
    pub variant: VariantArg,
    pub beta: Vec<f64>,
    pub sigma: Option<f64>,
    pub qhat: f64,
    pub objective: f64,
    pub residuals: Residuals,
    pub r: f64,
    pub alpha: f64,
    pub side_condition_ok: bool,
    pub reduced_accuracy: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<Vec<Vec<f64>>>,
}

pub fn estimate(a: &EstimateArgs, m: &mut RunManifest, tol: &Tolerances) -> anyhow::Result<EstimateResult> {
    m.seed = a.fit.seed;
    let d = load(&a.data.data, a.data.endogenous.as_deref(), m)?;
    let f = m.timed("fit", || fit(&d, &a.fit, a.data.normalization.into(), tol))?;
    Ok(EstimateResult {
        variant: a.fit.variant,
        beta: f.fit.beta_hat.iter().copied().collect(),
        sigma: f.fit.sigma_hat,
        qhat: f.fit.q_hat,
        objective: f.fit.objective,
        residuals: Residuals {
            iv: f.fit.iv_residual,
            q: f.fit.q_residual,
        },
        r: f.r,
        alpha: f.alpha,
        side_condition_ok: f.side_condition_ok,
        reduced_accuracy: f.fit.solve.reduced_accuracy,
        iterations: f.fit.solve.iterations,
        first_stage: f.first_stage,
    })
}

/// The quantity that was bounded, with 1-based indices.
#[derive(Debug, Serialize)]
pub struct Query {
    pub quantity: &'static str,
    pub k: Option<usize>,
    #[serde(rename = "J")]
    pub j: Option<Vec<usize>>,
    #[serde(rename = "J0")]
    pub j0: Option<Vec<usize>>,
    pub s: Option<usize>,
    #[serde(serialize_with = "serde_real::opt_real")]
    pub p: Option<f64>,
}

impl Query {
    fn from_kind(kind: &SensitivityKind) -> Self {
        let empty = Query {
            quantity: "",
            k: None,
            j: None,
            j0: None,
            s: None,
            p: None,
        };
        match kind {
            SensitivityKind::Coord { k, j } => Query {
                quantity: "coordinate",
                k: Some(k + 1),
                j: Some(one_based(j)),
                ..empty
            },
            SensitivityKind::CoordCert { k, s } => Query {
                quantity: "coordinate",
                k: Some(k + 1),
                s: Some(*s),
                ..empty
            },
            SensitivityKind::Block { j0, j } => Query {
                quantity: "block",
                j0: Some(one_based(j0)),
                j: Some(one_based(j)),
                ..empty
            },
            SensitivityKind::BlockCert { j0, s } => Query {
                quantity: "block",
                j0: Some(one_based(j0)),
                s: Some(*s),
                ..empty
            },
            SensitivityKind::LpNorm { p, source } => {
                let (j, s) = match source {
                    NormSource::Direct(j) => (Some(one_based(j)), None),
                    NormSource::Certificate(s) => (None, Some(*s)),
                };
                Query {
                    quantity: "lp-norm",
                    j,
                    s,
                    p: Some(*p),
                    ..empty
                }
            }
            SensitivityKind::Kappa1Cert { s } => Query {
                quantity: "lp-norm",
                s: Some(*s),
                p: Some(1.0),
                ..empty
            },
            SensitivityKind::Coherence { j, p } => Query {
                quantity: "coherence",
                j: Some(one_based(j)),
                p: Some(*p),
                ..empty
            },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SensitivityResult {
    pub method: MethodArg,
    pub query: Query,
    #[serde(serialize_with = "serde_real::real")]
    pub value: f64,
    pub lp_count: usize,
    pub provenance: String,
    /// `(coordinate, instrument)` pairs of the coherence bound, 1-based.
    pub witnesses: Vec<(usize, usize)>,
}

fn read_psi(path: &Path, m: &mut RunManifest) -> anyhow::Result<DMatrix<f64>> {
    let bytes = m.read_input(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(&bytes[..]);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    row: i + 1,
                    column: (j + 1).to_string(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("--psi must be a nonempty rectangular matrix".into()).into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn sensitivity(a: &SensitivityArgs, m: &mut RunManifest, tol: &Tolerances) -> anyhow::Result<SensitivityResult> {
    let psi = match (&a.psi, &a.data) {
        (Some(path), _) => read_psi(path, m)?,
        (None, Some(path)) => {
            // The normalized matrix does not depend on which regressors are endogenous.
            let d = load(path, Some(a.endogenous.as_deref().unwrap_or("all")), m)?;
            scale_design_with(&d, a.normalization.into())?.psi
        }
        (None, None) => return Err(Error::Validation("give a dataset or --psi".into()).into()),
    };
    let k = psi.ncols();
    let cone = if a.enlarged { ConeSpec::enlarged(a.c) } else { ConeSpec::new(a.c) };
    let coord = a.k.map(|i| parse_indices(&i.to_string(), k, "--k").map(|v| v[0])).transpose()?;
    let j = a.j.as_deref().map(|s| parse_indices(s, k, "--J")).transpose()?;
    let j0 = a.j0.as_deref().map(|s| parse_indices(s, k, "--J0")).transpose()?;
    let p = parse_p(a.p.as_deref())?;
    let need_j = || j.clone().ok_or_else(|| Error::Validation(format!("--method {:?} needs --J", a.method)));
    let need_s = || a.s.ok_or_else(|| Error::Validation("--method certificate needs --s".into()));
    m.timed("sensitivity", || -> anyhow::Result<SensitivityResult> {
        let report = match a.method {
            MethodArg::Coherence => {
                let b = coherence_bound(&psi, &need_j()?, p, &cone)?;
                return Ok(SensitivityResult {
                    method: a.method,
                    query: Query::from_kind(&SensitivityKind::Coherence { j: need_j()?, p }),
                    value: b.value,
                    lp_count: 0,
                    provenance: "coherence".into(),
                    witnesses: b.witness.iter().map(|&(k, l)| (k + 1, l + 1)).collect(),
                });
            }
            MethodArg::Direct => match (coord, &j0) {
                (Some(kk), _) => kappa_coord(&psi, kk, &need_j()?, &cone, tol)?,
                (None, Some(j0)) => kappa_block(&psi, j0, &need_j()?, &cone, tol)?,
                (None, None) => kappa_lp_norm_bounds(&psi, p, &NormSource::Direct(need_j()?), &cone, tol)?,
            },
            MethodArg::Certificate => match (coord, &j0) {
                (Some(kk), _) => kappa_coord_cert(&psi, kk, need_s()?, &cone, tol)?,
                (None, Some(j0)) => kappa_block_cert(&psi, j0, need_s()?, &cone, tol)?,
                (None, None) => kappa_lp_norm_bounds(&psi, p, &NormSource::Certificate(need_s()?), &cone, tol)?,
            },
        };
        Ok(SensitivityResult {
            method: a.method,
            query: Query::from_kind(&report.kind),
            value: report.value,
            lp_count: report.lp_count,
            provenance: report.provenance,
            witnesses: Vec::new(),
        })
    })
}

#[derive(Debug, Serialize)]
pub struct Coordinate {
    pub index: usize,
    pub beta: f64,
    #[serde(serialize_with = "serde_real::real")]
    pub half_width: f64,
    #[serde(serialize_with = "serde_real::real")]
    pub lower: f64,
    #[serde(serialize_with = "serde_real::real")]
    pub upper: f64,
    #[serde(serialize_with = "serde_real::real")]
    pub omega: f64,
    pub selected: bool,
    pub sign: i8,
}

#[derive(Debug, Serialize)]
pub struct CiResult {
    pub source: CiSource,
    pub sigma: Option<f64>,
    pub r: f64,
    #[serde(serialize_with = "serde_real::real")]
    pub slack: f64,
    pub coordinates: Vec<Coordinate>,
    /// Selected coordinates, 1-based.
    pub support: Vec<usize>,
    pub sensitivities: stiv_core::inference::Sensitivities,
}

pub fn ci(a: &CiArgs, m: &mut RunManifest, tol: &Tolerances) -> anyhow::Result<CiResult> {
    m.seed = a.fit.seed;
    let d = load(&a.data.data, a.data.endogenous.as_deref(), m)?;
    let f = m.timed("fit", || fit(&d, &a.fit, a.data.normalization.into(), tol))?;
    let beta: Vec<f64> = f.fit.beta_hat.iter().copied().collect();
    let source = match a.s {
        Some(s) => CiSource::Certificate(s),
        None if a.jhat.trim() == "auto" => {
            let j = support(&beta, SUPPORT_FLOOR);
            if j.is_empty() {
                return Err(Error::Validation("--Jhat auto: the fit has no nonzero coefficient; pass --s".into()).into());
            }
            CiSource::Direct(j)
        }
        None => CiSource::Direct(parse_indices(&a.jhat, d.k(), "--Jhat")?),
    };
    let spec = CiSpec {
        source: source.clone(),
        r: f.r,
        endogenous: f.data.endogenous().to_vec(),
        c: a.fit.c,
        variant: match a.slack {
            SlackArg::Standard => SlackVariant::Standard,
            SlackArg::SingleEndoRemark => SlackVariant::SingleEndoRemark,
        },
    };
    let sens = m.timed("sensitivity", || compute_sensitivities(&f.design.psi, &spec, tol))?;
    let report = confidence_from(&f.fit, &f.design, f.r, sens)?;
    let cleaned: Vec<f64> = beta.iter().map(|&b| if b.abs() <= SUPPORT_FLOOR { 0.0 } else { b }).collect();
    let sel = threshold_select(&cleaned, &report.half_width)?;
    let coordinates = beta
        .iter()
        .zip(&report.half_width)
        .enumerate()
        .map(|(k, (&b, &h))| Coordinate {
            index: k + 1,
            beta: b,
            half_width: h,
            lower: b - h,
            upper: b + h,
            omega: h,
            selected: sel.signs[k] != 0,
            sign: sel.signs[k],
        })
        .collect();
    Ok(CiResult {
        source,
        sigma: f.fit.sigma_hat,
        r: f.r,
        slack: report.slack,
        coordinates,
        support: one_based(&sel.support),
        sensitivities: report.sensitivities,
    })
}

#[derive(Debug, Deserialize)]
struct PilotFile {
    beta: Vec<f64>,
    b_hat: f64,
}

#[derive(Debug, Serialize)]
pub struct NvResult {
    pub pilot: PilotArg,
    pub theta: Option<Vec<f64>>,
    pub sigma1: Option<f64>,
    #[serde(serialize_with = "serde_real::real")]
    pub bhat: f64,
    #[serde(serialize_with = "serde_real::real")]
    pub omega: f64,
    pub r1: f64,
    pub s1: Option<usize>,
    /// Flagged suspect instruments, 1-based.
    pub flagged_instruments: Vec<usize>,
    pub signs: Vec<i8>,
    pub notes: Vec<String>,
}

fn parse_s1(s: &str) -> Result<SparsityBound, Error> {
    match s.trim() {
        "auto" => Ok(SparsityBound::Auto),
        v => v
            .parse()
            .map(SparsityBound::Fixed)
            .map_err(|_| Error::Validation(format!("--s1: {v:?} is neither `auto` nor an integer"))),
    }
}

pub fn nv(a: &NvArgs, m: &mut RunManifest, tol: &Tolerances) -> anyhow::Result<NvResult> {
    m.seed = a.fit.seed;
    let s1 = parse_s1(&a.s1)?;
    let d = load(&a.data.data, a.data.endogenous.as_deref(), m)?;
    let l1 = d
        .zbar()
        .map(|z| z.ncols())
        .ok_or_else(|| Error::Validation("the dataset has no zbar columns to test".into()))?;
    let (pilot, b_hat) = match a.pilot {
        PilotArg::File => {
            let path = a
                .pilot_file
                .as_deref()
                .ok_or_else(|| Error::Validation("--pilot file needs --pilot-file".into()))?;
            let bytes = m.read_input(path).with_context(|| format!("reading {}", path.display()))?;
            let pf: PilotFile = serde_json::from_slice(&bytes).context("parsing the pilot file")?;
            if pf.beta.len() != d.k() {
                return Err(Error::Dimension(format!("pilot beta has {} entries, expected {}", pf.beta.len(), d.k())).into());
            }
            (DVector::from_vec(pf.beta), pf.b_hat)
        }
        PilotArg::Stiv => {
            let f = m.timed("fit", || fit(&d, &a.fit, a.data.normalization.into(), tol))?;
            let sigma = f
                .fit
                .sigma_hat
                .ok_or_else(|| Error::Config("a STIV pilot needs a pivotal variant".into()))?;
            let spec = CiSpec {
                source: CiSource::Certificate(a.s),
                r: f.r,
                endogenous: f.data.endogenous().to_vec(),
                c: a.fit.c,
                variant: SlackVariant::Standard,
            };
            let sens = m.timed("sensitivity", || compute_sensitivities(&f.design.psi, &spec, tol))?;
            let b = nv_bhat_from_stiv(sigma, f.r, a.s, sens.kappa1, sens.endogenous, sens.exogenous);
            (f.fit.beta_hat, b)
        }
    };
    let r1 = rate_r(d.n(), l1.max(2), &RateConfig { alpha: a.alpha1, ..RateConfig::default() })?.r;
    if b_hat.is_infinite() {
        return Ok(NvResult {
            pilot: a.pilot,
            theta: None,
            sigma1: None,
            bhat: b_hat,
            omega: f64::INFINITY,
            r1,
            s1: None,
            flagged_instruments: Vec::new(),
            signs: vec![0; l1],
            notes: vec!["the pilot error bound is infinite, so no instrument can be flagged".into()],
        });
    }
    let cfg = NvConfig {
        c: a.fit.c,
        r1,
        b_hat,
        s1,
        sigma_weight: a.fit.sigma_weight.into(),
    };
    let nfit = m.timed("nv", || nv_fit(&d, &pilot, &cfg, tol))?;
    let det = nv_detect(&nfit, &cfg);
    Ok(NvResult {
        pilot: a.pilot,
        theta: Some(nfit.theta_hat.iter().copied().collect()),
        sigma1: Some(nfit.sigma1_hat),
        bhat: b_hat,
        omega: det.omega,
        r1,
        s1: Some(det.s1),
        flagged_instruments: one_based(&det.selection.support),
        signs: det.selection.signs,
        notes: Vec::new(),
    })
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Table3 => Preset::Table3,
            PresetArg::Table4 => Preset::Table4,
            PresetArg::Table5 => Preset::Table5,
            PresetArg::Table7 => Preset::Table7,
            PresetArg::NvPlanted => Preset::NvPlanted,
        }
    }
}

pub fn simulate(a: &SimulateArgs, m: &mut RunManifest) -> anyhow::Result<McSummary> {
    m.seed = Some(a.seed);
    let preset = Preset::from(a.preset);
    let mut cfg = preset.config();
    cfg.normalization = a.normalization.into();
    let reps = a.reps.unwrap_or_else(|| preset.default_reps());
    let summary = m.timed("simulate", || monte_carlo(&preset.params(), &cfg, reps, a.seed))?;
    Ok(if a.keep_replications {
        summary
    } else {
        summary.without_replications()
    })
}

/// One `metric,coordinate,value` row per summary statistic.
pub fn summary_csv(s: &McSummary) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "coordinate", "value"])?;
    let mut row = |metric: &str, coord: Option<usize>, v: f64| {
        w.write_record([metric.to_string(), coord.map_or(String::new(), |c| c.to_string()), v.to_string()])
    };
    row("reps", None, s.reps as f64)?;
    row("completed", None, s.completed as f64)?;
    row("failures", None, s.failures as f64)?;
    for (k, q) in s.beta_percentiles.iter().enumerate() {
        for (name, v) in ["beta_p05", "beta_p50", "beta_p95"].iter().zip(q) {
            row(name, Some(k + 1), *v)?;
        }
    }
    if let Some(q) = s.sigma_percentiles {
        for (name, v) in ["sigma_p05", "sigma_p50", "sigma_p95"].iter().zip(q) {
            row(name, None, v)?;
        }
    }
    for (name, v) in [
        ("support_recovery", s.support_recovery),
        ("ci_coverage", s.ci_coverage),
        ("nv_recovery", s.nv_recovery),
    ] {
        if let Some(v) = v {
            row(name, None, v)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
