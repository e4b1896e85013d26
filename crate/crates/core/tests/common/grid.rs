//! Brute-force oracle for sensitivities on small designs.
//!
//! Every quantity is a ratio `|Psi D|_inf / denom(D)` that is invariant under
//! `D -> t D`, so it suffices to search the surface `|D|_inf = 1`, and by the
//! `D -> -D` symmetry only the faces `D_i = +1`. Each face is gridded with step
//! 1/200 (1/40 when K >= 4), keeping cone-feasible points; the best points are then
//! refined on local grids down to step 1/25000. Grid values are feasible points, so
//! they bound the infimum from above.

use nalgebra::DMatrix;

pub struct Cone {
    pub j: Vec<usize>,
    pub ratio: f64,
}

impl Cone {
    pub fn plain(j: &[usize], c: f64) -> Self {
        Self {
            j: j.to_vec(),
            ratio: (1.0 + c) / (1.0 - c),
        }
    }

    pub fn contains(&self, d: &[f64]) -> bool {
        let (mut on, mut off) = (0.0, 0.0);
        for (i, v) in d.iter().enumerate() {
            if self.j.contains(&i) {
                on += v.abs();
            } else {
                off += v.abs();
            }
        }
        off <= self.ratio * on + 1e-12
    }
}

fn sup_norm_image(psi: &DMatrix<f64>, d: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for row in psi.row_iter() {
        let v: f64 = row.iter().zip(d).map(|(a, b)| a * b).sum();
        best = best.max(v.abs());
    }
    best
}

fn objective(psi: &DMatrix<f64>, cone: &Cone, denom: &dyn Fn(&[f64]) -> f64, d: &[f64]) -> f64 {
    if !cone.contains(d) {
        return f64::INFINITY;
    }
    let den = denom(d);
    if den <= 1e-12 {
        return f64::INFINITY;
    }
    sup_norm_image(psi, d) / den
}

/// Visits every point of the grid `center_j + step * m`, `|m| <= half`, clipped to `[-1, 1]`,
/// on the face `D_face = 1`.
fn visit(k: usize, face: usize, center: &[f64], step: f64, half: i64, f: &mut dyn FnMut(&[f64])) {
    let free: Vec<usize> = (0..k).filter(|&i| i != face).collect();
    let mut idx = vec![-half; free.len()];
    let mut d = center.to_vec();
    d[face] = 1.0;
    loop {
        let mut inside = true;
        for (t, &i) in free.iter().enumerate() {
            let v = center[i] + step * idx[t] as f64;
            if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                inside = false;
            }
            d[i] = v.clamp(-1.0, 1.0);
        }
        if inside {
            f(&d);
        }
        let mut t = 0;
        loop {
            if t == free.len() {
                return;
            }
            idx[t] += 1;
            if idx[t] <= half {
                break;
            }
            idx[t] = -half;
            t += 1;
        }
    }
}

/// Grid infimum of `|Psi D|_inf / denom(D)` over `D` in `cone`.
pub fn grid_inf(psi: &DMatrix<f64>, cone: &Cone, denom: &dyn Fn(&[f64]) -> f64) -> f64 {
    let k = psi.ncols();
    let coarse = if k >= 4 { 40 } else { 200 };
    let keep = 40;
    let mut best: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    let push = |best: &mut Vec<(f64, usize, Vec<f64>)>, v: f64, face: usize, d: &[f64]| {
        if !v.is_finite() {
            return;
        }
        if best.len() < keep || v < best[best.len() - 1].0 {
            best.push((v, face, d.to_vec()));
            best.sort_by(|a, b| a.0.total_cmp(&b.0));
            best.truncate(keep);
        }
    };
    let zero = vec![0.0; k];
    for face in 0..k {
        let step = 1.0 / coarse as f64;
        visit(k, face, &zero, step, coarse, &mut |d| {
            let v = objective(psi, cone, denom, d);
            push(&mut best, v, face, d);
        });
    }
    let mut step = 1.0 / coarse as f64;
    while step > 1.0 / 25000.0 + 1e-15 {
        let fine = step / 5.0;
        let seeds = best.clone();
        for (_, face, center) in &seeds {
            visit(k, *face, center, fine, 10, &mut |d| {
                let v = objective(psi, cone, denom, d);
                push(&mut best, v, *face, d);
            });
        }
        step = fine;
    }
    best.first().map_or(f64::INFINITY, |b| b.0)
}

/// `kappa*_{J0,J}`.
pub fn block(psi: &DMatrix<f64>, j0: &[usize], cone: &Cone) -> f64 {
    let j0 = j0.to_vec();
    grid_inf(psi, cone, &|d| j0.iter().map(|&i| d[i].abs()).sum())
}

/// `kappa_{p,J}`.
pub fn lp_norm(psi: &DMatrix<f64>, p: f64, cone: &Cone) -> f64 {
    grid_inf(psi, cone, &|d| {
        if p.is_infinite() {
            d.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
        } else {
            d.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
        }
    })
}
