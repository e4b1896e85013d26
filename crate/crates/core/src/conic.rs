//! Linear and second-order cone programming.
//!
//! Primal-dual interior-point method on the homogeneous self-dual embedding of
//!
//! ```text
//! minimize c'x  subject to  A x = b,  G x + s = h,  s in K
//! ```
//!
//! where `K` is a product of a nonnegative orthant and second-order cones.
//! Nesterov-Todd scaling, Mehrotra predictor-corrector. Infeasibility and
//! unboundedness are read off the embedding certificates, so no phase-1 or
//! big-M is needed. Sized for dense problems with up to a few thousand rows.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Scaled primal/dual residual tolerance.
    pub feas: f64,
    /// Relative duality gap tolerance.
    pub gap: f64,
    pub max_iter: usize,
    /// Factor on `feas` and `gap` for accepting the best iterate when progress stalls.
    #[serde(default = "default_reduced")]
    pub reduced: f64,
}

fn default_reduced() -> f64 {
    100.0
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas: 1e-8,
            gap: 1e-8,
            max_iter: 100,
            reduced: default_reduced(),
        }
    }
}

impl Tolerances {
    pub fn tight() -> Self {
        Self {
            feas: 1e-10,
            gap: 1e-10,
            max_iter: 120,
            reduced: default_reduced(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Max violation of all constraints at `x`, recomputed on the unscaled program.
    pub primal_residual: f64,
    /// Relative duality gap at termination.
    pub gap: f64,
    pub iterations: usize,
    /// Optimal only within `reduced` times the requested tolerances.
    pub reduced_accuracy: bool,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// `minimize objective'x` subject to `a_eq x = b_eq`, `g x <= h`, `lower <= x <= upper`.
///
/// Bounds may be infinite.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// `a x + b` lies in the second-order cone `{(t, v) : t >= |v|_2}`; row 0 is `t`.
#[derive(Debug, Clone)]
pub struct SocConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl SocConstraint {
    /// `x[t] >= |x[v]|_2`.
    pub fn on_variables(num_vars: usize, t: usize, v: &[usize]) -> Self {
        let mut a = DMatrix::zeros(v.len() + 1, num_vars);
        a[(0, t)] = 1.0;
        for (row, &j) in v.iter().enumerate() {
            a[(row + 1, j)] = 1.0;
        }
        Self {
            a,
            b: DVector::zeros(v.len() + 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub lp: LinearProgram,
    pub cones: Vec<SocConstraint>,
}

/// Row-wise builder for programs with mostly sparse constraint rows.
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    n: usize,
    objective: Vec<f64>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    ineq: Vec<(Vec<(usize, f64)>, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cones: Vec<SocConstraint>,
}

impl ProgramBuilder {
    pub fn new(num_vars: usize) -> Self {
        Self {
            n: num_vars,
            objective: vec![0.0; num_vars],
            eq: Vec::new(),
            ineq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            cones: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_objective(&mut self, j: usize, v: f64) -> &mut Self {
        self.objective[j] = v;
        self
    }

    pub fn lower_bound(&mut self, j: usize, v: f64) -> &mut Self {
        self.lower[j] = v;
        self
    }

    pub fn upper_bound(&mut self, j: usize, v: f64) -> &mut Self {
        self.upper[j] = v;
        self
    }

    /// `sum coef * x[idx] = rhs`.
    pub fn eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.eq.push((row, rhs));
        self
    }

    /// `sum coef * x[idx] <= rhs`.
    pub fn le(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.ineq.push((row, rhs));
        self
    }

    pub fn cone(&mut self, c: SocConstraint) -> &mut Self {
        self.cones.push(c);
        self
    }

    fn dense(rows: &[(Vec<(usize, f64)>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut m = DMatrix::zeros(rows.len(), n);
        let mut rhs = DVector::zeros(rows.len());
        for (i, (row, r)) in rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
            rhs[i] = *r;
        }
        (m, rhs)
    }

    pub fn build_lp(&self) -> LinearProgram {
        let (a_eq, b_eq) = Self::dense(&self.eq, self.n);
        let (g, h) = Self::dense(&self.ineq, self.n);
        LinearProgram {
            objective: DVector::from_column_slice(&self.objective),
            a_eq,
            b_eq,
            g,
            h,
            lower: DVector::from_column_slice(&self.lower),
            upper: DVector::from_column_slice(&self.upper),
        }
    }

    pub fn build(&self) -> ConicProgram {
        ConicProgram {
            lp: self.build_lp(),
            cones: self.cones.clone(),
        }
    }
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn check(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.a_eq.ncols() != n && self.a_eq.nrows() > 0
            || self.g.ncols() != n && self.g.nrows() > 0
            || self.a_eq.nrows() != self.b_eq.len()
            || self.g.nrows() != self.h.len()
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err("inconsistent dimensions".into());
        }
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite coefficient".into());
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err("invalid variable bound".into());
        }
        Ok(())
    }

    /// Plain-text dump in CPLEX LP style for cross-checking with external solvers.
    pub fn to_lp_format(&self) -> String {
        let term = |out: &mut String, first: &mut bool, v: f64, j: usize| {
            if v == 0.0 {
                return;
            }
            let sign = if v < 0.0 { "-" } else if *first { "" } else { "+" };
            if sign.is_empty() {
                let _ = write!(out, " {} x{}", v.abs(), j + 1);
            } else {
                let _ = write!(out, " {sign} {} x{}", v.abs(), j + 1);
            }
            *first = false;
        };
        let mut out = String::from("Minimize\n obj:");
        let mut first = true;
        for (j, &v) in self.objective.iter().enumerate() {
            term(&mut out, &mut first, v, j);
        }
        if first {
            out.push_str(" 0 x1");
        }
        out.push_str("\nSubject To\n");
        let rows = |out: &mut String, m: &DMatrix<f64>, rhs: &DVector<f64>, op: &str, tag: &str| {
            for i in 0..m.nrows() {
                let _ = write!(out, " {tag}{}:", i + 1);
                let mut first = true;
                for j in 0..m.ncols() {
                    term(out, &mut first, m[(i, j)], j);
                }
                if first {
                    out.push_str(" 0 x1");
                }
                let _ = writeln!(out, " {op} {}", rhs[i]);
            }
        };
        rows(&mut out, &self.a_eq, &self.b_eq, "=", "e");
        rows(&mut out, &self.g, &self.h, "<=", "c");
        out.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (false, false) => {
                    let _ = writeln!(out, " x{} free", j + 1);
                }
                (true, false) => {
                    let _ = writeln!(out, " x{} >= {lo}", j + 1);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= x{} <= {hi}", j + 1);
                }
                (true, true) => {
                    let _ = writeln!(out, " {lo} <= x{} <= {hi}", j + 1);
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

/// Max constraint violation of `x`: equalities, inequalities, bounds and cones.
pub fn constraint_violation(p: &ConicProgram, x: &DVector<f64>) -> f64 {
    let lp = &p.lp;
    let mut worst: f64 = 0.0;
    if lp.a_eq.nrows() > 0 {
        worst = worst.max((&lp.a_eq * x - &lp.b_eq).amax());
    }
    if lp.g.nrows() > 0 {
        let r = &lp.g * x - &lp.h;
        worst = worst.max(r.max().max(0.0));
    }
    for j in 0..x.len() {
        worst = worst.max(lp.lower[j] - x[j]).max(x[j] - lp.upper[j]);
    }
    for c in &p.cones {
        let u = &c.a * x + &c.b;
        let tail = u.rows(1, u.len() - 1).norm();
        worst = worst.max(tail - u[0]);
    }
    worst
}

pub fn solve_lp(p: &LinearProgram, tol: &Tolerances) -> SolveResult {
    solve_socp(
        &ConicProgram {
            lp: p.clone(),
            cones: Vec::new(),
        },
        tol,
    )
}

pub fn solve_socp(p: &ConicProgram, tol: &Tolerances) -> SolveResult {
    let n = p.lp.num_vars();
    let fail = |iterations| SolveResult {
        status: SolveStatus::NumericalFailure,
        x: DVector::zeros(n),
        objective: f64::NAN,
        primal_residual: f64::INFINITY,
        gap: f64::INFINITY,
        iterations,
        reduced_accuracy: false,
    };
    if let Err(msg) = p.lp.check() {
        log::error!("malformed program: {msg}");
        return fail(0);
    }
    if p.cones.iter().any(|c| c.a.ncols() != n || c.a.nrows() != c.b.len() || c.b.is_empty()) {
        log::error!("malformed cone constraint");
        return fail(0);
    }
    let canon = Canonical::from_program(p);
    let mut res = canon.solve(tol);
    if res.status == SolveStatus::Optimal || res.status == SolveStatus::NumericalFailure {
        res.objective = p.lp.objective.dot(&res.x);
        res.primal_residual = constraint_violation(p, &res.x);
    }
    res
}

/// Internal canonical form with row equilibration applied.
struct Canonical {
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    /// Nonzero pattern of the orthant rows of `g`.
    lp_nz: Vec<Vec<usize>>,
    cones: ConeLayout,
}

#[derive(Clone)]
struct ConeLayout {
    lp: usize,
    soc: Vec<(usize, usize)>,
}

impl ConeLayout {
    fn dim(&self) -> usize {
        self.lp + self.soc.iter().map(|&(_, len)| len).sum::<usize>()
    }

    fn degree(&self) -> usize {
        self.lp + self.soc.len()
    }

    fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim());
        e.rows_mut(0, self.lp).fill(1.0);
        for &(start, _) in &self.soc {
            e[start] = 1.0;
        }
        e
    }

    /// Smallest `a` such that `u + a e` is in the closed cone, i.e. max violation.
    fn violation(&self, u: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.lp {
            worst = worst.max(-u[i]);
        }
        for &(start, len) in &self.soc {
            let tail = u.rows(start + 1, len - 1).norm();
            worst = worst.max(tail - u[start]);
        }
        worst
    }

    fn jordan_prod(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for i in 0..self.lp {
            out[i] = u[i] * v[i];
        }
        for &(s, len) in &self.soc {
            let uu = u.rows(s, len);
            let vv = v.rows(s, len);
            out[s] = uu.dot(&vv);
            for i in 1..len {
                out[s + i] = uu[0] * vv[i] + vv[0] * uu[i];
            }
        }
        out
    }

    /// Solves `lambda o x = r` for `x`.
    fn jordan_div(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(r.len());
        for i in 0..self.lp {
            out[i] = r[i] / lambda[i];
        }
        for &(s, len) in &self.soc {
            let l = lambda.rows(s, len);
            let rr = r.rows(s, len);
            let l1 = l.rows(1, len - 1);
            let r1 = rr.rows(1, len - 1);
            let det = l[0] * l[0] - l1.norm_squared();
            let x0 = (l[0] * rr[0] - l1.dot(&r1)) / det;
            out[s] = x0;
            for i in 1..len {
                out[s + i] = (rr[i] - l[i] * x0) / l[0];
            }
        }
        out
    }

    /// Largest step keeping `u + a d` in the cone; `u` assumed interior.
    fn max_step(&self, u: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.lp {
            if d[i] < 0.0 {
                alpha = alpha.min(-u[i] / d[i]);
            }
        }
        for &(s, len) in &self.soc {
            let uu = u.rows(s, len);
            let dd = d.rows(s, len);
            let u1 = uu.rows(1, len - 1);
            let d1 = dd.rows(1, len - 1);
            let qa = dd[0] * dd[0] - d1.norm_squared();
            let qb = 2.0 * (uu[0] * dd[0] - u1.dot(&d1));
            let qc = (uu[0] * uu[0] - u1.norm_squared()).max(0.0);
            alpha = alpha.min(smallest_positive_root(qa, qb, qc, uu[0], dd[0]));
        }
        alpha
    }
}

/// First `a > 0` where `qa a^2 + qb a + qc` hits zero or `t0 + a dt0` turns negative.
fn smallest_positive_root(qa: f64, qb: f64, qc: f64, t0: f64, dt0: f64) -> f64 {
    let mut best = if dt0 < 0.0 { -t0 / dt0 } else { f64::INFINITY };
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    if scale == 0.0 {
        return best;
    }
    if qa.abs() <= 1e-14 * scale {
        if qb < 0.0 {
            best = best.min(-qc / qb);
        }
        return best;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return best;
    }
    let q = -0.5 * (qb + qb.signum() * disc.sqrt());
    for root in [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }] {
        if root > 0.0 {
            best = best.min(root);
        }
    }
    best
}

/// Nesterov-Todd scaling at a primal-dual pair.
struct Scaling {
    /// Orthant part: `W = diag(d)`.
    d: Vec<f64>,
    /// Per cone: `(eta, wbar)`.
    soc: Vec<(f64, DVector<f64>)>,
    lambda: DVector<f64>,
}

impl Scaling {
    fn identity(layout: &ConeLayout) -> Self {
        Self {
            d: vec![1.0; layout.lp],
            soc: layout
                .soc
                .iter()
                .map(|&(_, len)| {
                    let mut w = DVector::zeros(len);
                    w[0] = 1.0;
                    (1.0, w)
                })
                .collect(),
            lambda: layout.identity(),
        }
    }

    fn new(layout: &ConeLayout, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut d = Vec::with_capacity(layout.lp);
        for i in 0..layout.lp {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            d.push((s[i] / z[i]).sqrt());
        }
        let mut soc = Vec::with_capacity(layout.soc.len());
        for &(start, len) in &layout.soc {
            let ss = s.rows(start, len);
            let zz = z.rows(start, len);
            let sres = ss[0] * ss[0] - ss.rows(1, len - 1).norm_squared();
            let zres = zz[0] * zz[0] - zz.rows(1, len - 1).norm_squared();
            if sres <= 0.0 || zres <= 0.0 || ss[0] <= 0.0 || zz[0] <= 0.0 {
                return None;
            }
            let sn = sres.sqrt();
            let zn = zres.sqrt();
            let sbar = ss / sn;
            let zbar = zz / zn;
            let gamma = ((1.0 + sbar.dot(&zbar)) / 2.0).sqrt();
            let mut w = DVector::zeros(len);
            w[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for i in 1..len {
                w[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
            }
            // Restore w0^2 - |w1|^2 = 1 against rounding.
            w[0] = (1.0 + w.rows(1, len - 1).norm_squared()).sqrt();
            soc.push(((sn / zn).sqrt(), w));
        }
        let mut sc = Self {
            d,
            soc,
            lambda: DVector::zeros(0),
        };
        sc.lambda = sc.apply(layout, z, false);
        Some(sc)
    }

    /// `W u` or `W^{-1} u`.
    fn apply(&self, layout: &ConeLayout, u: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for i in 0..layout.lp {
            out[i] = if inverse { u[i] / self.d[i] } else { u[i] * self.d[i] };
        }
        for (&(start, len), (eta, w)) in layout.soc.iter().zip(&self.soc) {
            let uu = u.rows(start, len);
            let w1 = w.rows(1, len - 1);
            let u1 = uu.rows(1, len - 1);
            let t = w1.dot(&u1);
            if inverse {
                out[start] = (w[0] * uu[0] - t) / eta;
                let coef = -uu[0] + t / (1.0 + w[0]);
                for i in 1..len {
                    out[start + i] = (uu[i] + coef * w[i]) / eta;
                }
            } else {
                out[start] = eta * (w[0] * uu[0] + t);
                let coef = uu[0] + t / (1.0 + w[0]);
                for i in 1..len {
                    out[start + i] = eta * (uu[i] + coef * w[i]);
                }
            }
        }
        out
    }

    fn apply2(&self, layout: &ConeLayout, u: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let once = self.apply(layout, u, inverse);
        self.apply(layout, &once, inverse)
    }
}

/// Factorized Newton system `[[0, A', G'], [A, 0, 0], [G, 0, -W^2]]`.
struct Kkt<'a> {
    prob: &'a Canonical,
    scaling: &'a Scaling,
    factor: KktFactor,
}

enum KktFactor {
    Chol(nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<'a> Kkt<'a> {
    fn new(prob: &'a Canonical, scaling: &'a Scaling) -> Option<Self> {
        let nx = prob.c.len();
        let ny = prob.b.len();
        let layout = &prob.cones;
        let mut m = DMatrix::<f64>::zeros(nx, nx);
        for (i, nz) in prob.lp_nz.iter().enumerate() {
            let wt = 1.0 / (scaling.d[i] * scaling.d[i]);
            for (a, &p) in nz.iter().enumerate() {
                let gp = prob.g[(i, p)] * wt;
                for &q in &nz[a..] {
                    m[(p, q)] += gp * prob.g[(i, q)];
                }
            }
        }
        for p in 0..nx {
            for q in 0..p {
                m[(p, q)] = m[(q, p)];
            }
        }
        for (ci, &(start, len)) in layout.soc.iter().enumerate() {
            let (eta, w) = &scaling.soc[ci];
            let block = prob.g.rows(start, len);
            let mut hmat = DMatrix::zeros(len, nx);
            let w1 = w.rows(1, len - 1);
            for j in 0..nx {
                let col = block.column(j);
                let t = w1.dot(&col.rows(1, len - 1));
                hmat[(0, j)] = (w[0] * col[0] - t) / eta;
                let coef = -col[0] + t / (1.0 + w[0]);
                for i in 1..len {
                    hmat[(i, j)] = (col[i] + coef * w[i]) / eta;
                }
            }
            m += hmat.tr_mul(&hmat);
        }
        let diag_max = (0..nx).map(|i| m[(i, i)]).fold(1.0, f64::max);
        let reg = 1e-13 * diag_max;
        for i in 0..nx {
            m[(i, i)] += reg;
        }
        let factor = if ny == 0 {
            KktFactor::Chol(m.cholesky()?)
        } else {
            let mut full = DMatrix::zeros(nx + ny, nx + ny);
            full.view_mut((0, 0), (nx, nx)).copy_from(&m);
            full.view_mut((nx, 0), (ny, nx)).copy_from(&prob.a);
            full.view_mut((0, nx), (nx, ny)).copy_from(&prob.a.transpose());
            for i in 0..ny {
                full[(nx + i, nx + i)] = -reg;
            }
            let lu = full.lu();
            if !lu.is_invertible() {
                return None;
            }
            KktFactor::Lu(lu)
        };
        Some(Self {
            prob,
            scaling,
            factor,
        })
    }

    fn solve_once(
        &self,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let layout = &self.prob.cones;
        let nx = rx.len();
        let w2inv_rz = self.scaling.apply2(layout, rz, true);
        let top = rx + self.prob.g.tr_mul(&w2inv_rz);
        let (dx, dy) = match &self.factor {
            KktFactor::Chol(ch) => (ch.solve(&top), DVector::zeros(0)),
            KktFactor::Lu(lu) => {
                let mut rhs = DVector::zeros(nx + ry.len());
                rhs.rows_mut(0, nx).copy_from(&top);
                rhs.rows_mut(nx, ry.len()).copy_from(ry);
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN));
                (sol.rows(0, nx).into_owned(), sol.rows(nx, ry.len()).into_owned())
            }
        };
        let gdx = &self.prob.g * &dx;
        let dz = self.scaling.apply2(layout, &(gdx - rz), true);
        (dx, dy, dz)
    }

    /// Solve with two rounds of iterative refinement on the unregularized system.
    fn solve(
        &self,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
        rz: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let layout = &self.prob.cones;
        let (mut dx, mut dy, mut dz) = self.solve_once(rx, ry, rz);
        for _ in 0..2 {
            let ex = rx - self.prob.a.tr_mul(&dy) - self.prob.g.tr_mul(&dz);
            let ey = ry - &self.prob.a * &dx;
            let ez = rz - (&self.prob.g * &dx - self.scaling.apply2(layout, &dz, false));
            let (cx, cy, cz) = self.solve_once(&ex, &ey, &ez);
            dx += cx;
            dy += cy;
            dz += cz;
        }
        (dx, dy, dz)
    }
}

struct Direction {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

impl Canonical {
    fn from_program(p: &ConicProgram) -> Self {
        let lp = &p.lp;
        let n = lp.num_vars();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..lp.g.nrows() {
            rows.push((lp.g.row(i).iter().copied().collect(), lp.h[i]));
        }
        for j in 0..n {
            if lp.upper[j].is_finite() {
                let mut r = vec![0.0; n];
                r[j] = 1.0;
                rows.push((r, lp.upper[j]));
            }
            if lp.lower[j].is_finite() {
                let mut r = vec![0.0; n];
                r[j] = -1.0;
                rows.push((r, -lp.lower[j]));
            }
        }
        let nlp = rows.len();
        let ncone: usize = p.cones.iter().map(|c| c.b.len()).sum();
        let m = nlp + ncone;
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        let mut lp_nz = Vec::with_capacity(nlp);
        for (i, (r, rhs)) in rows.iter().enumerate() {
            let scale = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let mut nz = Vec::new();
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    g[(i, j)] = v / scale;
                    nz.push(j);
                }
            }
            h[i] = rhs / scale;
            lp_nz.push(nz);
        }
        let mut soc = Vec::with_capacity(p.cones.len());
        let mut start = nlp;
        for c in &p.cones {
            let len = c.b.len();
            let scale = c.a.amax();
            let scale = if scale > 0.0 { scale } else { 1.0 };
            for i in 0..len {
                for j in 0..n {
                    g[(start + i, j)] = -c.a[(i, j)] / scale;
                }
                h[start + i] = c.b[i] / scale;
            }
            soc.push((start, len));
            start += len;
        }
        let mut a = lp.a_eq.clone();
        let mut b = lp.b_eq.clone();
        if a.nrows() == 0 {
            a = DMatrix::zeros(0, n);
        }
        for i in 0..a.nrows() {
            let scale = a.row(i).amax();
            if scale > 0.0 {
                a.row_mut(i).scale_mut(1.0 / scale);
                b[i] /= scale;
            }
        }
        Self {
            c: lp.objective.clone(),
            a,
            b,
            g,
            h,
            lp_nz,
            cones: ConeLayout { lp: nlp, soc },
        }
    }

    fn shift_into_cone(&self, u: &mut DVector<f64>) {
        let viol = self.cones.violation(u);
        if viol >= -1e-8 * u.amax().max(1.0) {
            *u += self.cones.identity() * (1.0 + viol.max(0.0));
        }
    }

    fn solve(&self, tol: &Tolerances) -> SolveResult {
        let nx = self.c.len();
        let layout = &self.cones;
        let nu = layout.degree() as f64;
        let fail = |x: DVector<f64>, it| SolveResult {
            status: SolveStatus::NumericalFailure,
            x,
            objective: f64::NAN,
            primal_residual: f64::INFINITY,
            gap: f64::INFINITY,
            iterations: it,
            reduced_accuracy: false,
        };

        let id = Scaling::identity(layout);
        let Some(kkt0) = Kkt::new(self, &id) else {
            return fail(DVector::zeros(nx), 0);
        };
        let (mut x, _, zneg) = kkt0.solve(&DVector::zeros(nx), &self.b, &self.h);
        let mut s = -zneg;
        let (_, mut y, mut z) = kkt0.solve(&(-&self.c), &DVector::zeros(self.b.len()), &DVector::zeros(layout.dim()));
        self.shift_into_cone(&mut s);
        self.shift_into_cone(&mut z);
        let mut tau = 1.0;
        let mut kappa = 1.0;

        let norm_c = self.c.amax().max(1.0);
        let norm_bh = self.b.amax().max(self.h.amax()).max(1.0);
        // Best iterate so far, scored in units of the requested tolerances.
        let mut best: Option<(f64, DVector<f64>, f64, f64, f64, usize)> = None;
        let mut since_best = 0;
        let mut last_it = 0;

        for it in 0..tol.max_iter {
            last_it = it;
            let rx = self.a.tr_mul(&y) + self.g.tr_mul(&z) + &self.c * tau;
            let ry = &self.a * &x - &self.b * tau;
            let rz = &self.g * &x + &s - &self.h * tau;
            let cx = self.c.dot(&x);
            let by_hz = self.b.dot(&y) + self.h.dot(&z);
            let rt = kappa + cx + by_hz;
            let sz = s.dot(&z);
            let mu = (sz + tau * kappa) / (nu + 1.0);

            let pres = ry.amax().max(rz.amax()) / tau / norm_bh;
            let dres = rx.amax() / tau / norm_c;
            let pcost = cx / tau;
            let dcost = -by_hz / tau;
            let rel_gap = (sz / (tau * tau)).max((pcost - dcost).abs()) / pcost.abs().max(1.0);
            log::trace!("it {it}: pcost {pcost:.6e} dcost {dcost:.6e} pres {pres:.2e} dres {dres:.2e} gap {rel_gap:.2e} tau {tau:.2e} kappa {kappa:.2e}");
            if pres <= tol.feas && dres <= tol.feas && rel_gap <= tol.gap {
                return SolveResult {
                    status: SolveStatus::Optimal,
                    x: &x / tau,
                    objective: pcost,
                    primal_residual: pres,
                    gap: rel_gap,
                    iterations: it,
                    reduced_accuracy: false,
                };
            }
            let score = (pres / tol.feas).max(dres / tol.feas).max(rel_gap / tol.gap);
            if score.is_finite() && best.as_ref().is_none_or(|b| score < 0.5 * b.0) {
                best = Some((score, &x / tau, pcost, pres, rel_gap, it));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= 10 && best.as_ref().is_some_and(|b| b.0 <= tol.reduced) {
                    break;
                }
            }
            if tau < kappa {
                let cert_res = (self.a.tr_mul(&y) + self.g.tr_mul(&z)).amax();
                if by_hz < 0.0 && cert_res <= tol.feas * (-by_hz) {
                    return SolveResult {
                        status: SolveStatus::Infeasible,
                        x: DVector::zeros(nx),
                        objective: f64::INFINITY,
                        primal_residual: f64::INFINITY,
                        gap: f64::NAN,
                        iterations: it,
                        reduced_accuracy: false,
                    };
                }
                let ray_res = (&self.a * &x).amax().max((&self.g * &x + &s).amax());
                if cx < 0.0 && ray_res <= tol.feas * (-cx) {
                    return SolveResult {
                        status: SolveStatus::Unbounded,
                        x: &x / (-cx),
                        objective: f64::NEG_INFINITY,
                        primal_residual: f64::NAN,
                        gap: f64::NAN,
                        iterations: it,
                        reduced_accuracy: false,
                    };
                }
            }

            let Some(scaling) = Scaling::new(layout, &s, &z) else {
                break;
            };
            let Some(kkt) = Kkt::new(self, &scaling) else {
                break;
            };
            let (x1, y1, z1) = kkt.solve(&(-&self.c), &self.b, &self.h);
            let denom = self.c.dot(&x1) + self.b.dot(&y1) + self.h.dot(&z1) - kappa / tau;

            let newton = |sigma: f64, rs: &DVector<f64>, rk: f64| -> Direction {
                let f = -(1.0 - sigma);
                let lam_rs = layout.jordan_div(&scaling.lambda, rs);
                let w_lam_rs = scaling.apply(layout, &lam_rs, false);
                let (x2, y2, z2) = kkt.solve(&(&rx * f), &(&ry * f), &(&rz * f - &w_lam_rs));
                let num = rt * f - rk / tau - self.c.dot(&x2) - self.b.dot(&y2) - self.h.dot(&z2);
                let dtau = num / denom;
                let dx = x2 + &x1 * dtau;
                let dy = y2 + &y1 * dtau;
                let dz = z2 + &z1 * dtau;
                let wdz = scaling.apply(layout, &dz, false);
                let ds = scaling.apply(layout, &(lam_rs - wdz), false);
                let dkappa = (rk - kappa * dtau) / tau;
                Direction {
                    x: dx,
                    y: dy,
                    z: dz,
                    s: ds,
                    tau: dtau,
                    kappa: dkappa,
                }
            };
            let step = |d: &Direction| -> f64 {
                let ds_t = scaling.apply(layout, &d.s, true);
                let dz_t = scaling.apply(layout, &d.z, false);
                let mut a = layout
                    .max_step(&scaling.lambda, &ds_t)
                    .min(layout.max_step(&scaling.lambda, &dz_t));
                if d.tau < 0.0 {
                    a = a.min(-tau / d.tau);
                }
                if d.kappa < 0.0 {
                    a = a.min(-kappa / d.kappa);
                }
                a
            };

            let lam_sq = layout.jordan_prod(&scaling.lambda, &scaling.lambda);
            let aff = newton(0.0, &(-&lam_sq), -tau * kappa);
            let alpha_aff = step(&aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            let ds_t = scaling.apply(layout, &aff.s, true);
            let dz_t = scaling.apply(layout, &aff.z, false);
            let corr = layout.jordan_prod(&ds_t, &dz_t);
            let rs = -lam_sq - corr + layout.identity() * (sigma * mu);
            let rk = -tau * kappa - aff.tau * aff.kappa + sigma * mu;
            let dir = newton(sigma, &rs, rk);
            let alpha = (0.99 * step(&dir)).min(1.0);
            if !alpha.is_finite() || alpha <= 0.0 || dir.x.iter().any(|v| !v.is_finite()) {
                break;
            }

            x += &dir.x * alpha;
            y += &dir.y * alpha;
            z += &dir.z * alpha;
            s += &dir.s * alpha;
            tau += dir.tau * alpha;
            kappa += dir.kappa * alpha;
            if tau <= 0.0 || kappa < 0.0 {
                break;
            }
        }
        match best {
            Some((score, xb, pcost, pres, gap, it)) if score <= tol.reduced => {
                log::debug!("stalled after {last_it} iterations; best iterate {it} within {score:.1}x of tolerance");
                SolveResult {
                    status: SolveStatus::Optimal,
                    x: xb,
                    objective: pcost,
                    primal_residual: pres,
                    gap,
                    iterations: last_it + 1,
                    reduced_accuracy: true,
                }
            }
            _ => {
                log::debug!("interior-point method stopped without convergence after {last_it} iterations");
                fail(&x / tau.abs().max(1e-300), last_it + 1)
            }
        }
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
    fn single_bound() {
        let mut b = ProgramBuilder::new(1);
        b.set_objective(0, 1.0).lower_bound(0, 3.0);
        let r = solve_lp(&b.build_lp(), &tol());
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.x[0], 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.objective, 3.0, epsilon = 1e-7);
    }

    #[test]
    fn degenerate_optimum() {
        let mut b = ProgramBuilder::new(2);
        b.set_objective(0, 1.0)
            .set_objective(1, 1.0)
            .le(vec![(0, -1.0), (1, -1.0)], -1.0)
            .lower_bound(0, 0.0)
            .lower_bound(1, 0.0);
        let r = solve_lp(&b.build_lp(), &tol());
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut b = ProgramBuilder::new(1);
        b.set_objective(0, 1.0).lower_bound(0, 2.0).upper_bound(0, 1.0);
        assert_eq!(solve_lp(&b.build_lp(), &tol()).status, SolveStatus::Infeasible);

        let mut b = ProgramBuilder::new(2);
        b.set_objective(0, -1.0).le(vec![(1, 1.0)], 1.0).lower_bound(0, 0.0);
        assert_eq!(solve_lp(&b.build_lp(), &tol()).status, SolveStatus::Unbounded);
    }

    #[test]
    fn equality_constrained() {
        // min x0 + 2 x1 s.t. x0 + x1 = 1, x >= 0.
        let mut b = ProgramBuilder::new(2);
        b.set_objective(0, 1.0)
            .set_objective(1, 2.0)
            .eq(vec![(0, 1.0), (1, 1.0)], 1.0)
            .lower_bound(0, 0.0)
            .lower_bound(1, 0.0);
        let r = solve_lp(&b.build_lp(), &tol());
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn fixed_vector_cone() {
        // min t s.t. t >= |(3,4)|.
        let mut b = ProgramBuilder::new(1);
        b.set_objective(0, 1.0);
        let mut a = DMatrix::zeros(3, 1);
        a[(0, 0)] = 1.0;
        b.cone(SocConstraint {
            a,
            b: DVector::from_vec(vec![0.0, 3.0, 4.0]),
        });
        let r = solve_socp(&b.build(), &tol());
        assert!(r.is_optimal(), "{:?}", r.status);
        assert_abs_diff_eq!(r.objective, 5.0, epsilon = 1e-7);
    }

    #[test]
    fn cone_on_variables_pinned_to_zero() {
        let mut b = ProgramBuilder::new(3);
        b.set_objective(0, 1.0)
            .eq(vec![(1, 1.0)], 0.0)
            .eq(vec![(2, 1.0)], 0.0)
            .cone(SocConstraint::on_variables(3, 0, &[1, 2]));
        let r = solve_socp(&b.build(), &tol());
        assert!(r.is_optimal());
        assert_abs_diff_eq!(r.objective, 0.0, epsilon = 1e-7);
    }

    #[test]
    fn least_absolute_plus_norm_matches_grid() {
        // min t + |b| s.t. t >= |y - x b|_2 on a one-regressor instance.
        let xs = [1.0, 2.0, -1.0, 0.5];
        let ys = [2.0, 3.5, -2.5, 1.0];
        let mut b = ProgramBuilder::new(3);
        b.set_objective(0, 1.0)
            .set_objective(2, 1.0)
            .le(vec![(1, 1.0), (2, -1.0)], 0.0)
            .le(vec![(1, -1.0), (2, -1.0)], 0.0);
        let mut a = DMatrix::zeros(5, 3);
        let mut off = DVector::zeros(5);
        a[(0, 0)] = 1.0;
        for i in 0..4 {
            a[(i + 1, 1)] = -xs[i];
            off[i + 1] = ys[i];
        }
        b.cone(SocConstraint { a, b: off });
        let r = solve_socp(&b.build(), &tol());
        assert!(r.is_optimal());
        let f = |beta: f64| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| (y - x * beta).powi(2))
                .sum::<f64>()
                .sqrt()
                + beta.abs()
        };
        let mut best = f64::INFINITY;
        let mut beta = -5.0;
        while beta <= 5.0 {
            best = best.min(f(beta));
            beta += 1e-5;
        }
        assert_abs_diff_eq!(r.objective, best, epsilon = 1e-5);
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_lambda() {
        let layout = ConeLayout {
            lp: 2,
            soc: vec![(2, 3)],
        };
        let s = DVector::from_vec(vec![0.5, 2.0, 3.0, 1.0, -0.5]);
        let z = DVector::from_vec(vec![1.5, 0.1, 2.0, -1.2, 0.3]);
        let sc = Scaling::new(&layout, &s, &z).unwrap();
        let winv_s = sc.apply(&layout, &s, true);
        for i in 0..5 {
            assert_abs_diff_eq!(winv_s[i], sc.lambda[i], epsilon = 1e-12);
        }
        let back = sc.apply(&layout, &winv_s, false);
        for i in 0..5 {
            assert_abs_diff_eq!(back[i], s[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let layout = ConeLayout {
            lp: 1,
            soc: vec![(1, 3)],
        };
        let lam = DVector::from_vec(vec![2.0, 3.0, 1.0, 0.5]);
        let r = DVector::from_vec(vec![1.0, -2.0, 0.3, 4.0]);
        let x = layout.jordan_div(&lam, &r);
        let back = layout.jordan_prod(&lam, &x);
        for i in 0..4 {
            assert_abs_diff_eq!(back[i], r[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let mut b = ProgramBuilder::new(3);
        b.set_objective(0, 1.0)
            .set_objective(1, -0.5)
            .le(vec![(0, -1.0), (1, 1.0), (2, 0.3)], 2.0)
            .le(vec![(1, 1.0), (2, 1.0)], 1.0)
            .lower_bound(0, 0.0)
            .lower_bound(1, 0.0)
            .lower_bound(2, 0.0);
        let p = b.build_lp();
        let r1 = solve_lp(&p, &tol());
        let r2 = solve_lp(&p, &tol());
        assert_eq!(r1.status, r2.status);
        assert_eq!(r1.objective.to_bits(), r2.objective.to_bits());
    }

    #[test]
    fn lp_dump_mentions_every_row() {
        let mut b = ProgramBuilder::new(2);
        b.set_objective(0, 1.0)
            .le(vec![(0, 1.0), (1, -2.0)], 3.0)
            .eq(vec![(1, 1.0)], 1.0)
            .lower_bound(0, 0.0);
        let txt = b.build_lp().to_lp_format();
        assert!(txt.contains("e1:"));
        assert!(txt.contains("c1: 1 x1 - 2 x2 <= 3"));
        assert!(txt.contains("x1 >= 0"));
        assert!(txt.contains("x2 free"));
    }
}
