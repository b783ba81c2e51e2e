//! Dense dual active-set QP (Goldfarb–Idnani).
//!
//! Solves `min ½xᵀGx + aᵀx  s.t.  cᵢᵀx ≥ bᵢ` for positive-definite `G`. The
//! method starts from the unconstrained minimiser and adds the most violated
//! constraint each iteration, keeping `J = L⁻ᵀQ` and the triangular factor `R`
//! of the active normals up to date with Givens rotations.

use nalgebra::{DMatrix, DVector};

/// One inequality `Σ coeffs·x ≥ bound`, stored sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<(usize, f64)>, bound: f64) -> Self {
        Self { coeffs, bound }
    }

    /// `x[index] ≥ bound`.
    pub fn lower(index: usize, bound: f64) -> Self {
        Self::new(vec![(index, 1.0)], bound)
    }

    /// `x[index] ≤ bound`, stored as `−x[index] ≥ −bound`.
    pub fn upper(index: usize, bound: f64) -> Self {
        Self::new(vec![(index, -1.0)], -bound)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.eval(x) - self.bound
    }

    fn norm(&self) -> f64 {
        self.coeffs.iter().map(|&(_, c)| c * c).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// Iteration cap reached; the iterate is dual feasible but may violate
    /// some constraints.
    MaxIterations,
    Infeasible,
    /// Hessian is not positive definite.
    NotConvex,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Indices into the constraint list.
    pub active: Vec<usize>,
    /// Multipliers of `active`, all ≥ 0.
    pub multipliers: Vec<f64>,
    /// Largest remaining violation `max(0, bᵢ − cᵢᵀx)`.
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: Vec<LinearConstraint>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Violation (after row normalisation) below which a constraint counts
    /// as satisfied.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 2000,
        }
    }
}

struct Factor {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    q: usize,
}

impl Factor {
    /// `d = Jᵀ·c` for a sparse `c`.
    fn project(&self, c: &[(usize, f64)], scale: f64, d: &mut [f64]) {
        d.iter_mut().for_each(|v| *v = 0.0);
        for (col, dv) in d.iter_mut().enumerate() {
            let jc = self.j.column(col);
            let mut s = 0.0;
            for &(i, ci) in c {
                s += jc[i] * ci;
            }
            *dv = s * scale;
        }
    }

    /// Primal direction `z = J₂·d₂`.
    fn primal_direction(&self, d: &[f64], z: &mut DVector<f64>) {
        z.fill(0.0);
        for col in self.q..self.n {
            if d[col] != 0.0 {
                z.axpy(d[col], &self.j.column(col), 1.0);
            }
        }
    }

    /// Dual direction `r = R⁻¹·d₁`.
    fn dual_direction(&self, d: &[f64], r: &mut [f64]) {
        for i in (0..self.q).rev() {
            let mut s = d[i];
            for k in i + 1..self.q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
    }

    /// Append a constraint whose projection is `d`. Returns false when the
    /// new normal is linearly dependent on the active ones.
    fn add(&mut self, d: &mut [f64]) -> bool {
        let n = self.n;
        for col in (self.q + 1..n).rev() {
            let (mut cc, mut ss) = (d[col - 1], d[col]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[col] = 0.0;
            cc /= h;
            ss /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[col - 1] = -h;
            } else {
                d[col - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, col - 1)];
                let t2 = self.j[(k, col)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, col - 1)] = a;
                self.j[(k, col)] = xny * (t1 + a) - t2;
            }
        }
        self.q += 1;
        for i in 0..self.q {
            self.r[(i, self.q - 1)] = d[i];
        }
        let diag = d[self.q - 1].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    /// Remove active column `pos` and restore triangularity.
    fn remove(&mut self, pos: usize) {
        let n = self.n;
        for col in pos..self.q - 1 {
            for i in 0..n {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..n {
            self.r[(i, self.q - 1)] = 0.0;
        }
        self.q -= 1;
        for row in pos..self.q {
            let (mut cc, mut ss) = (self.r[(row, row)], self.r[(row + 1, row)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(row + 1, row)] = 0.0;
            if cc < 0.0 {
                self.r[(row, row)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(row, row)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in row + 1..self.q {
                let t1 = self.r[(row, k)];
                let t2 = self.r[(row + 1, k)];
                let a = t1 * cc + t2 * ss;
                self.r[(row, k)] = a;
                self.r[(row + 1, k)] = xny * (t1 + a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, row)];
                let t2 = self.j[(k, row + 1)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, row)] = a;
                self.j[(k, row + 1)] = xny * (a + t1) - t2;
            }
        }
    }
}

/// Lower Cholesky factor of a symmetric matrix (left-looking, column-major).
fn cholesky_lower(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = h.nrows();
    let mut l = h.clone();
    let data = l.as_mut_slice();
    for j in 0..n {
        let (prev, rest) = data.split_at_mut(j * n);
        let col = &mut rest[..n];
        for k in 0..j {
            let ck = &prev[k * n..(k + 1) * n];
            let f = ck[j];
            if f != 0.0 {
                for (c, &v) in col[j..].iter_mut().zip(&ck[j..]) {
                    *c -= f * v;
                }
            }
        }
        let d = col[j];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        col[..j].iter_mut().for_each(|c| *c = 0.0);
        col[j..].iter_mut().for_each(|c| *c /= d);
    }
    Some(l)
}

/// `L⁻ᵀ` for lower-triangular `L`. Column k of the (upper-triangular) result
/// is row k of `L⁻¹`, built from the earlier columns.
fn inverse_lower_transposed(l: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = l.nrows();
    let mut u = DMatrix::zeros(n, n);
    let data = u.as_mut_slice();
    for k in 0..n {
        let lkk = l[(k, k)];
        if !(lkk.abs() > 0.0) {
            return None;
        }
        let (prev, rest) = data.split_at_mut(k * n);
        let col = &mut rest[..n];
        for i in 0..k {
            let lki = l[(k, i)];
            if lki != 0.0 {
                for (c, &v) in col[..=i].iter_mut().zip(&prev[i * n..=i * n + i]) {
                    *c -= lki * v;
                }
            }
        }
        col[k] = 1.0;
        col[..=k].iter_mut().for_each(|c| *c /= lkk);
    }
    Some(u)
}

/// Solve `problem`. Constraint rows are normalised internally so
/// `settings.tolerance` is a distance in `x`-space.
pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = problem.gradient.len();
    let m = problem.constraints.len();
    let fail = |status| QpSolution {
        x: DVector::zeros(n),
        objective: f64::NAN,
        status,
        iterations: 0,
        active: Vec::new(),
        multipliers: Vec::new(),
        max_violation: f64::INFINITY,
    };
    let Some(l) = cholesky_lower(&problem.hessian) else {
        return fail(QpStatus::NotConvex);
    };
    let Some(j) = inverse_lower_transposed(&l) else {
        return fail(QpStatus::NotConvex);
    };
    let mut fac = Factor {
        n,
        j,
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
        q: 0,
    };

    let scale: Vec<f64> = problem
        .constraints
        .iter()
        .map(|c| {
            let nrm = c.norm();
            if nrm > 0.0 { 1.0 / nrm } else { 0.0 }
        })
        .collect();
    let slack = |i: usize, x: &DVector<f64>| problem.constraints[i].slack(x) * scale[i];

    let mut x = -(&fac.j * fac.j.tr_mul(&problem.gradient));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let mut excluded = vec![false; m];
    let mut d = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = DVector::zeros(n);
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Pick the most violated inactive constraint.
        let mut worst = -settings.tolerance;
        let mut p = None;
        for i in 0..m {
            if is_active[i] || excluded[i] || scale[i] == 0.0 {
                if scale[i] == 0.0 && problem.constraints[i].bound > settings.tolerance {
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
                continue;
            }
            let s = slack(i, &x);
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let np = &problem.constraints[p].coeffs;
        let sp = scale[p];
        let mut u_new = 0.0;

        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                status = QpStatus::MaxIterations;
                break 'outer;
            }
            fac.project(np, sp, &mut d);
            fac.primal_direction(&d, &mut z);
            fac.dual_direction(&d, &mut r);

            // Largest dual step keeping active multipliers non-negative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..fac.q {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let zn: f64 = np.iter().map(|&(i, c)| z[i] * c).sum::<f64>() * sp;
            let t2 = if z.amax() > f64::EPSILON * 1e3 && zn > 0.0 {
                let t = -slack(p, &x) / zn;
                if t < 0.0 { f64::INFINITY } else { t }
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }
            if !t2.is_finite() {
                // Dual-only step then drop the blocking constraint.
                for k in 0..fac.q {
                    u[k] -= t * r[k];
                }
                u_new += t;
                let k = drop.expect("finite t1");
                deactivate(&mut fac, &mut active, &mut u, &mut is_active, k);
                continue;
            }
            x.axpy(t, &z, 1.0);
            for k in 0..fac.q {
                u[k] -= t * r[k];
            }
            u_new += t;
            if t == t2 {
                if fac.add(&mut d) {
                    active.push(p);
                    u.push(u_new);
                    is_active[p] = true;
                } else {
                    // Dependent normal: back out and never retry it.
                    fac.remove(fac.q - 1);
                    excluded[p] = true;
                }
                break;
            }
            let k = drop.expect("t1 was the minimum");
            deactivate(&mut fac, &mut active, &mut u, &mut is_active, k);
            if slack(p, &x) >= -settings.tolerance {
                break;
            }
        }
    }

    let mut max_violation = 0.0f64;
    for c in &problem.constraints {
        max_violation = max_violation.max(-c.slack(&x));
    }
    let objective = 0.5 * x.dot(&(&problem.hessian * &x)) + problem.gradient.dot(&x);
    let multipliers = active.iter().zip(&u).map(|(&i, &ui)| ui * scale[i]).collect();
    QpSolution {
        x,
        objective,
        status,
        iterations,
        active,
        multipliers,
        max_violation,
    }
}

fn deactivate(fac: &mut Factor, active: &mut Vec<usize>, u: &mut Vec<f64>, is_active: &mut [bool], k: usize) {
    is_active[active[k]] = false;
    active.remove(k);
    u.remove(k);
    fac.remove(k);
}
