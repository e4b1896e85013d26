#![allow(dead_code)]

pub mod grid;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use stiv_core::conic::{LinearProgram, ProgramBuilder};

/// Rows `a x <= b` of an LP, bounds included.
fn all_rows(lp: &LinearProgram) -> (Vec<DVector<f64>>, Vec<f64>) {
    let n = lp.num_vars();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..lp.g.nrows() {
        rows.push(lp.g.row(i).transpose());
        rhs.push(lp.h[i]);
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut r = DVector::zeros(n);
            r[j] = 1.0;
            rows.push(r);
            rhs.push(lp.upper[j]);
        }
        if lp.lower[j].is_finite() {
            let mut r = DVector::zeros(n);
            r[j] = -1.0;
            rows.push(r);
            rhs.push(-lp.lower[j]);
        }
    }
    (rows, rhs)
}

fn combinations(m: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, f);
            cur.pop();
        }
    }
    rec(0, m, k, &mut Vec::new(), f);
}

/// Minimum of a bounded inequality-only LP by enumerating every basic solution.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    assert_eq!(lp.a_eq.nrows(), 0);
    let n = lp.num_vars();
    let (rows, rhs) = all_rows(lp);
    let mut best: Option<f64> = None;
    combinations(rows.len(), n, &mut |idx| {
        let a = DMatrix::from_fn(n, n, |i, j| rows[idx[i]][j]);
        let b = DVector::from_iterator(n, idx.iter().map(|&i| rhs[i]));
        let lu = a.lu();
        if lu.determinant().abs() < 1e-10 {
            return;
        }
        let Some(x) = lu.solve(&b) else { return };
        let feasible = rows
            .iter()
            .zip(&rhs)
            .all(|(r, &h)| r.dot(&x) <= h + 1e-9 * (1.0 + h.abs()));
        if feasible {
            let v = lp.objective.dot(&x);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    });
    best
}

/// Random bounded LP in a box, containing the origin strictly.
pub fn random_bounded_lp(rng: &mut impl Rng, max_vars: usize) -> LinearProgram {
    let n = rng.gen_range(1..=max_vars);
    let m = rng.gen_range(0..=2 * n);
    let mut b = ProgramBuilder::new(n);
    for j in 0..n {
        b.set_objective(j, rng.gen_range(-2.0..2.0));
        b.lower_bound(j, -rng.gen_range(0.5..3.0));
        b.upper_bound(j, rng.gen_range(0.5..3.0));
    }
    for _ in 0..m {
        let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-2.0..2.0))).collect();
        b.le(row, rng.gen_range(0.1..2.0));
    }
    b.build_lp()
}
