//! Sensitivity characteristics of the normalized design `Psi` over cones of
//! dominant coordinates, computed by enumerating sign patterns and solving one
//! linear program per pattern.
//!
//! Indices are 0-based. A value of `f64::INFINITY` is the sentinel for an empty
//! normalization set or an empty cone.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_lp, ProgramBuilder, SolveStatus, Tolerances};
use crate::error::{Error, Result};

/// Largest number of sign-enumerated indices accepted by the exact routes.
pub const ENUMERATION_CAP: usize = 12;

/// `C_J = {|D_{J^c}|_1 <= ratio |D_J|_1}` with `ratio = (1+c)/(1-c)`, or `(2+c)/(1-c)` when enlarged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub c: f64,
    pub enlarged: bool,
}

impl ConeSpec {
    pub fn new(c: f64) -> Self {
        Self { c, enlarged: false }
    }

    pub fn enlarged(c: f64) -> Self {
        Self { c, enlarged: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.c) {
            return Err(Error::Config(format!("cone constant c = {} must lie in [0,1)", self.c)));
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        if self.enlarged {
            (2.0 + self.c) / (1.0 - self.c)
        } else {
            (1.0 + self.c) / (1.0 - self.c)
        }
    }

    /// `1 + ratio`, so that `|D|_1 <= mass |D_J|_1` on the cone.
    pub fn mass(&self) -> f64 {
        1.0 + self.ratio()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SensitivityKind {
    Coord { k: usize, j: Vec<usize> },
    CoordCert { k: usize, s: usize },
    Block { j0: Vec<usize>, j: Vec<usize> },
    BlockCert { j0: Vec<usize>, s: usize },
    LpNorm {
        #[serde(serialize_with = "crate::serde_real::real")]
        p: f64,
        source: NormSource,
    },
    Kappa1Cert { s: usize },
    Coherence {
        j: Vec<usize>,
        #[serde(serialize_with = "crate::serde_real::real")]
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormSource {
    Direct(Vec<usize>),
    Certificate(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub kind: SensitivityKind,
    /// Certified lower bound (exact for the direct routes); 0 means no positive certificate.
    #[serde(serialize_with = "crate::serde_real::real")]
    pub value: f64,
    pub provenance: String,
    pub lp_count: usize,
}

/// One sign-pattern LP: `min v` s.t. `|Psi D|_inf <= v`, `sum_{i in norm} eps_i D_i = 1`,
/// `eps_i D_i >= 0` on `signed`, and `sum_{i not in signed} |D_i| + sum_{i in signed} weight_i eps_i D_i <= 0`
/// (dropped when `weights` is `None`).
struct PatternLp<'a> {
    psi: &'a DMatrix<f64>,
    signed: &'a [usize],
    norm: &'a [usize],
    weights: Option<&'a [f64]>,
}

impl PatternLp<'_> {
    /// Returns `None` when the pattern is infeasible.
    fn solve(&self, signs: &[f64], tol: &Tolerances) -> Result<Option<f64>> {
        let (l, k) = self.psi.shape();
        let free: Vec<usize> = (0..k).filter(|i| !self.signed.contains(i)).collect();
        let with_mass = self.weights.is_some();
        // Variables: D (k), w for free coordinates when the mass row is present, v.
        let nw = if with_mass { free.len() } else { 0 };
        let v = k + nw;
        let mut b = ProgramBuilder::new(k + nw + 1);
        b.set_objective(v, 1.0).lower_bound(v, 0.0);
        for row in 0..l {
            let mut pos: Vec<(usize, f64)> = (0..k).filter(|&j| self.psi[(row, j)] != 0.0).map(|j| (j, self.psi[(row, j)])).collect();
            let mut neg: Vec<(usize, f64)> = pos.iter().map(|&(j, x)| (j, -x)).collect();
            pos.push((v, -1.0));
            neg.push((v, -1.0));
            b.le(pos, 0.0).le(neg, 0.0);
        }
        for (&i, &e) in self.signed.iter().zip(signs) {
            if e > 0.0 {
                b.lower_bound(i, 0.0);
            } else {
                b.upper_bound(i, 0.0);
            }
        }
        let sign_of = |i: usize| signs[self.signed.iter().position(|&x| x == i).expect("normalization index is signed")];
        b.eq(self.norm.iter().map(|&i| (i, sign_of(i))).collect(), 1.0);
        if let Some(weights) = self.weights {
            let mut row = Vec::with_capacity(k);
            for (t, &i) in free.iter().enumerate() {
                b.le(vec![(i, 1.0), (k + t, -1.0)], 0.0);
                b.le(vec![(i, -1.0), (k + t, -1.0)], 0.0);
                row.push((k + t, 1.0));
            }
            for ((&i, &e), &wt) in self.signed.iter().zip(signs).zip(weights) {
                if wt != 0.0 {
                    row.push((i, wt * e));
                }
            }
            b.le(row, 0.0);
        }
        let res = solve_lp(&b.build_lp(), tol);
        match res.status {
            SolveStatus::Optimal => Ok(Some(res.objective.max(0.0))),
            SolveStatus::Infeasible => Ok(None),
            status => Err(Error::Solver {
                status,
                context: format!("sensitivity LP after {} iterations", res.iterations),
            }),
        }
    }
}

/// All sign vectors over `len` indices with the first sign fixed to `+1`.
fn sign_patterns(len: usize) -> Vec<Vec<f64>> {
    let free = len.saturating_sub(1);
    (0..1usize << free)
        .map(|mask| {
            let mut s = Vec::with_capacity(len);
            if len > 0 {
                s.push(1.0);
            }
            s.extend((0..free).map(|b| if mask >> b & 1 == 1 { -1.0 } else { 1.0 }));
            s
        })
        .collect()
}

/// Evaluates `f` on every item, in parallel when enabled, and reduces by `min` in input order.
fn min_over<T: Sync>(items: &[T], f: impl Fn(&T) -> Result<Option<f64>> + Sync + Send) -> Result<f64> {
    #[cfg(feature = "parallel")]
    let values: Vec<Result<Option<f64>>> = {
        use rayon::prelude::*;
        items.par_iter().map(&f).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let values: Vec<Result<Option<f64>>> = items.iter().map(&f).collect();
    let mut best = f64::INFINITY;
    for v in values {
        if let Some(v) = v? {
            best = best.min(v);
        }
    }
    Ok(best)
}

fn normalized_set(set: &[usize], k: usize, what: &str) -> Result<Vec<usize>> {
    let mut out = set.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&i| i >= k) {
        return Err(Error::Dimension(format!("{what} index {} out of range 1..={k}", bad + 1)));
    }
    Ok(out)
}

fn check_psi(psi: &DMatrix<f64>) -> Result<()> {
    if psi.ncols() == 0 || psi.nrows() == 0 {
        return Err(Error::Dimension("empty design matrix".into()));
    }
    Ok(())
}

/// Exact `inf { |Psi D|_inf : |D_{J0}|_1 = 1, D in C_J }` and the number of LPs solved.
fn block_value(psi: &DMatrix<f64>, j0: &[usize], j: &[usize], cone: &ConeSpec, tol: &Tolerances) -> Result<(f64, usize)> {
    let k = psi.ncols();
    if j0.is_empty() || j.is_empty() {
        return Ok((f64::INFINITY, 0));
    }
    // With J covering every coordinate the cone is the whole space and only J0 needs signs.
    let cone_active = j.len() < k;
    let mut signed: Vec<usize> = j0.to_vec();
    if cone_active {
        signed.extend(j.iter().filter(|i| !j0.contains(i)));
    }
    let enumerated = if j0.len() == 1 && !cone_active { 0 } else { signed.len() };
    if enumerated > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            size: enumerated,
            cap: ENUMERATION_CAP,
        });
    }
    let q = cone.ratio();
    let weights: Vec<f64> = signed.iter().map(|i| if j.contains(i) { -q } else { 1.0 }).collect();
    let lp = PatternLp {
        psi,
        signed: &signed,
        norm: j0,
        weights: cone_active.then_some(weights.as_slice()),
    };
    let patterns = sign_patterns(signed.len());
    let value = min_over(&patterns, |s| lp.solve(s, tol))?;
    Ok((value, patterns.len()))
}

/// Sparsity-certificate value `min_j min { |Psi D|_inf : |D_{J0}|_1 = 1, |D|_1 <= a |D_j| }`, `a = mass * s`.
fn block_cert_value(psi: &DMatrix<f64>, j0: &[usize], s: usize, cone: &ConeSpec, tol: &Tolerances) -> Result<(f64, usize)> {
    let k = psi.ncols();
    if j0.is_empty() {
        return Ok((f64::INFINITY, 0));
    }
    if j0.len() > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            size: j0.len(),
            cap: ENUMERATION_CAP,
        });
    }
    let a = cone.mass() * s as f64;
    let mut jobs: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = Vec::new();
    for jj in 0..k {
        let mut signed = j0.to_vec();
        if !j0.contains(&jj) {
            signed.push(jj);
        }
        let weights: Vec<f64> = signed.iter().map(|&i| if i == jj { 1.0 - a } else { 1.0 }).collect();
        for p in sign_patterns(signed.len()) {
            jobs.push((signed.clone(), weights.clone(), p));
        }
    }
    let value = min_over(&jobs, |(signed, weights, signs)| {
        PatternLp {
            psi,
            signed,
            norm: j0,
            weights: Some(weights),
        }
        .solve(signs, tol)
    })?;
    Ok((value, jobs.len()))
}

/// Coordinate-wise sensitivity `kappa*_{k,J}`.
pub fn kappa_coord(psi: &DMatrix<f64>, k: usize, j: &[usize], cone: &ConeSpec, tol: &Tolerances) -> Result<SensitivityReport> {
    check_psi(psi)?;
    cone.validate()?;
    let kk = normalized_set(&[k], psi.ncols(), "k")?;
    let j = normalized_set(j, psi.ncols(), "J")?;
    let (value, lp_count) = block_value(psi, &kk, &j, cone, tol)?;
    Ok(SensitivityReport {
        kind: SensitivityKind::Coord { k, j },
        value,
        provenance: "exact: sign enumeration over J".into(),
        lp_count,
    })
}

/// Certificate bound `kappa*_k(s) <= kappa*_{k,J}` for every `|J| <= s`.
pub fn kappa_coord_cert(psi: &DMatrix<f64>, k: usize, s: usize, cone: &ConeSpec, tol: &Tolerances) -> Result<SensitivityReport> {
    check_psi(psi)?;
    cone.validate()?;
    check_s(s)?;
    let kk = normalized_set(&[k], psi.ncols(), "k")?;
    let (value, lp_count) = block_cert_value(psi, &kk, s, cone, tol)?;
    Ok(SensitivityReport {
        kind: SensitivityKind::CoordCert { k, s },
        value,
        provenance: format!("sparsity certificate s = {s}"),
        lp_count,
    })
}

/// Block sensitivity `kappa*_{J0,J}`; `+inf` for empty `J0`.
pub fn kappa_block(psi: &DMatrix<f64>, j0: &[usize], j: &[usize], cone: &ConeSpec, tol: &Tolerances) -> Result<SensitivityReport> {
    check_psi(psi)?;
    cone.validate()?;
    let j0 = normalized_set(j0, psi.ncols(), "J0")?;
    let j = normalized_set(j, psi.ncols(), "J")?;
    let (value, lp_count) = block_value(psi, &j0, &j, cone, tol)?;
    let provenance = if j0.is_empty() {
        "convention: empty block".into()
    } else {
        "exact: sign enumeration over J and J0".into()
    };
    Ok(SensitivityReport {
        kind: SensitivityKind::Block { j0, j },
        value,
        provenance,
        lp_count,
    })
}

/// Certificate bound `kappa*_{J0}(s)`.
pub fn kappa_block_cert(psi: &DMatrix<f64>, j0: &[usize], s: usize, cone: &ConeSpec, tol: &Tolerances) -> Result<SensitivityReport> {
    check_psi(psi)?;
    cone.validate()?;
    check_s(s)?;
    let j0 = normalized_set(j0, psi.ncols(), "J0")?;
    let (value, lp_count) = block_cert_value(psi, &j0, s, cone, tol)?;
    Ok(SensitivityReport {
        kind: SensitivityKind::BlockCert { j0, s },
        value,
        provenance: format!("sparsity certificate s = {s}"),
        lp_count,
    })
}

fn check_s(s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::Config("sparsity bound s must be at least 1".into()));
    }
    Ok(())
}

/// Lower bound on `kappa_{p,J}`: `(mass |J|)^(-1/p) min_k kappa*_{k,J}`, with the
/// certificate route replacing `|J|` by `s` and `kappa*_{k,J}` by `kappa*_k(s)`.
///
/// For `p = 1` and a certificate this is `kappa_1(s)`.
pub fn kappa_lp_norm_bounds(psi: &DMatrix<f64>, p: f64, source: &NormSource, cone: &ConeSpec, tol: &Tolerances) -> Result<SensitivityReport> {
    check_psi(psi)?;
    cone.validate()?;
    if !(p >= 1.0) {
        return Err(Error::Config(format!("p = {p} must lie in [1, inf]")));
    }
    let k = psi.ncols();
    let (coords, size, lp_count, what) = match source {
        NormSource::Direct(j) => {
            let j = normalized_set(j, k, "J")?;
            if j.is_empty() {
                return Ok(SensitivityReport {
                    kind: SensitivityKind::LpNorm { p, source: source.clone() },
                    value: f64::INFINITY,
                    provenance: "convention: empty cone".into(),
                    lp_count: 0,
                });
            }
            let mut count = 0;
            let mut vals = Vec::with_capacity(k);
            for kk in 0..k {
                let (v, c) = block_value(psi, &[kk], &j, cone, tol)?;
                count += c;
                vals.push(v);
            }
            (vals, j.len(), count, "coordinate sensitivities on J")
        }
        NormSource::Certificate(s) => {
            check_s(*s)?;
            let mut count = 0;
            let mut vals = Vec::with_capacity(k);
            for kk in 0..k {
                let (v, c) = block_cert_value(psi, &[kk], *s, cone, tol)?;
                count += c;
                vals.push(v);
            }
            (vals, *s, count, "certificate sensitivities")
        }
    };
    let kappa_inf = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let factor = if p.is_infinite() { 1.0 } else { (cone.mass() * size as f64).powf(-1.0 / p) };
    let kind = match (source, p == 1.0) {
        (NormSource::Certificate(s), true) => SensitivityKind::Kappa1Cert { s: *s },
        _ => SensitivityKind::LpNorm { p, source: source.clone() },
    };
    Ok(SensitivityReport {
        kind,
        value: factor * kappa_inf,
        provenance: format!("interpolation from the sup-norm bound over {what}"),
        lp_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceBound {
    pub value: f64,
    /// `(k, l(k))` for every `k` in `J`; empty when some `k` has no qualifying row.
    pub witness: Vec<(usize, usize)>,
}

/// Row-wise bound from one dominant instrument per coordinate in `J`.
///
/// For `k` in `J` and row `l`, `(|Psi_lk| - mass |J| max_{k' != k} |Psi_lk'|) / (mass |J|)` lower-bounds
/// `|Psi D|_inf` for every cone vector with `|D|_1 = 1` whose largest `J`-coordinate is `k`.
/// The minimum over `k` of the best row therefore bounds `kappa_{1,J}`, hence `kappa_{p,J}` for every `p`.
pub fn coherence_bound(psi: &DMatrix<f64>, j: &[usize], p: f64, cone: &ConeSpec) -> Result<CoherenceBound> {
    check_psi(psi)?;
    cone.validate()?;
    if !(p >= 1.0) {
        return Err(Error::Config(format!("p = {p} must lie in [1, inf]")));
    }
    let j = normalized_set(j, psi.ncols(), "J")?;
    if j.is_empty() {
        return Err(Error::Config("coherence bound needs a nonempty J".into()));
    }
    let scale = cone.mass() * j.len() as f64;
    let mut value = f64::INFINITY;
    let mut witness = Vec::with_capacity(j.len());
    for &k in &j {
        let mut best: Option<(f64, usize)> = None;
        for (l, row) in psi.row_iter().enumerate() {
            let diag = row[k].abs();
            let off = row.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v.abs()).fold(0.0, f64::max);
            let candidate = (diag - scale * off) / scale;
            if candidate > 0.0 && best.map_or(true, |(b, _)| candidate > b) {
                best = Some((candidate, l));
            }
        }
        match best {
            Some((v, l)) => {
                value = value.min(v);
                witness.push((k, l));
            }
            None => {
                return Ok(CoherenceBound {
                    value: 0.0,
                    witness: Vec::new(),
                })
            }
        }
    }
    Ok(CoherenceBound { value, witness })
}

/// `(1 - r/kappa_a - r^2/kappa_b)_+^-1` with `1/inf = 0` and `a/0 = inf`.
pub fn slack_factor(r: f64, kappa_end: f64, kappa_exo: f64) -> f64 {
    let term = |num: f64, den: f64| if den.is_infinite() { 0.0 } else if den <= 0.0 { f64::INFINITY } else { num / den };
    let d = 1.0 - term(r, kappa_end) - term(r * r, kappa_exo);
    if d > 0.0 {
        1.0 / d
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn identity_coordinate() {
        let psi = DMatrix::identity(3, 3);
        let cone = ConeSpec::new(0.1);
        let r = kappa_coord(&psi, 0, &[0], &cone, &tol()).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-7);
        let half = psi * 0.5;
        assert_abs_diff_eq!(kappa_coord(&half, 0, &[0], &cone, &tol()).unwrap().value, 0.5, epsilon = 1e-7);
    }

    #[test]
    fn identity_certificate_is_one() {
        let psi = DMatrix::identity(4, 4);
        for s in 1..=3 {
            let r = kappa_coord_cert(&psi, 2, s, &ConeSpec::new(0.1), &tol()).unwrap();
            assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn kappa1_certificate_identity() {
        let psi = DMatrix::identity(6, 6);
        let r = kappa_lp_norm_bounds(&psi, 1.0, &NormSource::Certificate(5), &ConeSpec::new(0.1), &tol()).unwrap();
        assert_abs_diff_eq!(r.value, 0.09, epsilon = 1e-7);
        assert!(matches!(r.kind, SensitivityKind::Kappa1Cert { s: 5 }));
        let r = kappa_lp_norm_bounds(&psi, f64::INFINITY, &NormSource::Direct(vec![0]), &ConeSpec::new(0.1), &tol()).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn empty_block_is_infinite() {
        let psi = DMatrix::identity(2, 2);
        let r = kappa_block(&psi, &[], &[0], &ConeSpec::new(0.1), &tol()).unwrap();
        assert!(r.value.is_infinite());
        assert_eq!(r.lp_count, 0);
    }

    #[test]
    fn singleton_block_equals_coordinate() {
        let psi = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, -0.1, 0.3, 0.5, 0.4, -0.2, 0.1, 0.7]);
        let cone = ConeSpec::new(0.1);
        let a = kappa_coord(&psi, 1, &[0, 2], &cone, &tol()).unwrap().value;
        let b = kappa_block(&psi, &[1], &[0, 2], &cone, &tol()).unwrap().value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }

    #[test]
    fn full_support_uses_single_lp() {
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let r = kappa_coord(&psi, 0, &[0, 1], &ConeSpec::new(0.1), &tol()).unwrap();
        assert_eq!(r.lp_count, 1);
        // D = (1, d): max(|1 + d/2|, |1/2 + d|) is smallest at d = -1.
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 1e-7);
    }

    #[test]
    fn enumeration_cap() {
        let psi = DMatrix::identity(14, 14);
        let j: Vec<usize> = (0..13).collect();
        assert!(matches!(
            kappa_coord(&psi, 0, &j, &ConeSpec::new(0.1), &tol()),
            Err(Error::EnumerationCap { size: 13, .. })
        ));
    }

    #[test]
    fn coherence_identity_and_bad_rows() {
        let psi = DMatrix::identity(3, 3);
        let b = coherence_bound(&psi, &[0], 1.0, &ConeSpec::new(0.1)).unwrap();
        assert_abs_diff_eq!(b.value, 0.45, epsilon = 1e-12);
        assert_eq!(b.witness, vec![(0, 0)]);
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        let b = coherence_bound(&bad, &[0], 1.0, &ConeSpec::new(0.1)).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(b.witness.is_empty());
    }

    #[test]
    fn slack_conventions() {
        assert_abs_diff_eq!(slack_factor(0.1, 1.0, 0.1), 1.0 / 0.8, epsilon = 1e-12);
        assert!(slack_factor(0.5, 0.4, 1.0).is_infinite());
        assert_eq!(slack_factor(0.3, f64::INFINITY, f64::INFINITY), 1.0);
    }

    #[test]
    fn sign_patterns_fix_first() {
        let p = sign_patterns(3);
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|s| s[0] == 1.0));
        assert_eq!(sign_patterns(0), vec![Vec::<f64>::new()]);
    }
}
