use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Lower bound of an LP variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    NonNegative,
    Free,
}

/// `minimize cost^T x  subject to  eq_matrix x = eq_rhs`, with per-variable
/// lower bounds of zero or minus infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem<T: Real> {
    pub cost: DVector<T>,
    pub eq_matrix: DMatrix<T>,
    pub eq_rhs: DVector<T>,
    pub bounds: Vec<Bound>,
}

impl<T: Real> LpProblem<T> {
    pub fn new(cost: DVector<T>, eq_matrix: DMatrix<T>, eq_rhs: DVector<T>, bounds: Vec<Bound>) -> crate::Result<Self> {
        if eq_matrix.nrows() != eq_rhs.len() || eq_matrix.ncols() != cost.len() || bounds.len() != cost.len() {
            return Err(crate::Error::DimensionMismatch(format!(
                "LP with {} costs, {}x{} constraints, {} right-hand sides, {} bounds",
                cost.len(),
                eq_matrix.nrows(),
                eq_matrix.ncols(),
                eq_rhs.len(),
                bounds.len()
            )));
        }
        Ok(Self {
            cost,
            eq_matrix,
            eq_rhs,
            bounds,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.eq_rhs.len()
    }

    /// Plain-text dump for cross-checking against other solvers.
    ///
    /// ```text
    /// vars <n> rows <m>
    /// cost c_1 ... c_n
    /// free j ...
    /// row a_1 ... a_n = b
    /// ```
    pub fn to_text(&self) -> String {
        let fmt = |v: &T| format!("{:e}", v.as_f64());
        let mut out = format!("vars {} rows {}\n", self.num_vars(), self.num_constraints());
        out.push_str("cost");
        for c in self.cost.iter() {
            out.push(' ');
            out.push_str(&fmt(c));
        }
        out.push('\n');
        let free: Vec<String> = self
            .bounds
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == Bound::Free)
            .map(|(j, _)| j.to_string())
            .collect();
        if !free.is_empty() {
            out.push_str("free ");
            out.push_str(&free.join(" "));
            out.push('\n');
        }
        for i in 0..self.num_constraints() {
            out.push_str("row");
            for a in self.eq_matrix.row(i).iter() {
                out.push(' ');
                out.push_str(&fmt(a));
            }
            out.push_str(" = ");
            out.push_str(&fmt(&self.eq_rhs[i]));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T: Real> {
    pub x: DVector<T>,
    pub objective: T,
    pub status: LpStatus,
    pub iterations: usize,
    /// Every nonbasic reduced cost is strictly positive at the final basis, which
    /// certifies a unique minimizer. `false` means uniqueness is not certified.
    pub unique: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub pivot_tol: f64,
    pub max_iters: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            pivot_tol: 1e-9,
            max_iters: 0,
            bland_after: 20,
        }
    }
}

/// Dense two-phase primal simplex on a full tableau.
///
/// Pricing is Dantzig's largest-coefficient rule with a Harris ratio test;
/// after a run of degenerate pivots the solver falls back to Bland's rule
/// until progress resumes. A crash basis is taken from unit columns so
/// problems such as l1 regression skip phase one entirely.
#[derive(Debug, Clone)]
pub struct SimplexSolver<T: Real> {
    opts: SimplexOptions,
    tab: Vec<T>,
}

struct Layout {
    rows: usize,
    /// Structural columns after splitting free variables.
    cols: usize,
    width: usize,
    /// `origin[k] = (j, sign)`: column k carries `sign * x_j`.
    origin: Vec<(usize, bool)>,
}

impl Layout {
    fn art(&self, i: usize) -> usize {
        self.cols + i
    }
    fn rhs(&self) -> usize {
        self.cols + self.rows
    }
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl<T: Real> Default for SimplexSolver<T> {
    fn default() -> Self {
        Self::new(SimplexOptions::default())
    }
}

impl<T: Real> SimplexSolver<T> {
    pub fn new(opts: SimplexOptions) -> Self {
        Self { opts, tab: Vec::new() }
    }

    pub fn options(&self) -> &SimplexOptions {
        &self.opts
    }

    pub fn solve(&mut self, problem: &LpProblem<T>) -> LpSolution<T> {
        let m = problem.num_constraints();
        let nvar = problem.num_vars();

        let mut origin = Vec::with_capacity(2 * nvar);
        for (j, b) in problem.bounds.iter().enumerate() {
            origin.push((j, true));
            if *b == Bound::Free {
                origin.push((j, false));
            }
        }
        let cols = origin.len();
        let lay = Layout {
            rows: m,
            cols,
            width: cols + m + 1,
            origin,
        };
        let w = lay.width;

        let b_scale = problem.eq_rhs.amax().max(T::zero());
        let c_scale = problem.cost.amax().max(T::zero());
        let feas = T::tol(self.opts.feas_tol) * (T::one() + b_scale);
        let opt = T::tol(self.opts.opt_tol) * (T::one() + c_scale);
        let piv = T::tol(self.opts.pivot_tol);
        let max_iters = if self.opts.max_iters == 0 {
            50 * (m + cols + 10)
        } else {
            self.opts.max_iters
        };

        // Standardized constraint matrix, rows flipped so the rhs is nonnegative.
        let mut flip = vec![false; m];
        let mut std_a = DMatrix::<T>::zeros(m, cols);
        let mut std_b = DVector::<T>::zeros(m);
        for i in 0..m {
            flip[i] = problem.eq_rhs[i] < T::zero();
            let s = if flip[i] { -T::one() } else { T::one() };
            std_b[i] = s * problem.eq_rhs[i];
            for (k, &(j, pos)) in lay.origin.iter().enumerate() {
                let a = problem.eq_matrix[(i, j)];
                std_a[(i, k)] = if pos { s * a } else { -s * a };
            }
        }
        let std_c: Vec<T> = lay
            .origin
            .iter()
            .map(|&(j, pos)| if pos { problem.cost[j] } else { -problem.cost[j] })
            .collect();

        self.tab.clear();
        self.tab.resize((m + 1) * w, T::zero());
        for i in 0..m {
            for k in 0..cols {
                self.tab[i * w + k] = std_a[(i, k)];
            }
            self.tab[i * w + lay.art(i)] = T::one();
            self.tab[i * w + lay.rhs()] = std_b[i];
        }

        // Crash basis: a structural column whose only nonzero is positive and
        // sits in row i can replace that row's artificial.
        let mut basis: Vec<usize> = (0..m).map(|i| lay.art(i)).collect();
        let mut taken = vec![false; cols];
        for k in 0..cols {
            let mut row = None;
            let mut unit = true;
            for i in 0..m {
                let a = std_a[(i, k)];
                if a != T::zero() {
                    if row.is_some() || a < T::zero() {
                        unit = false;
                        break;
                    }
                    row = Some(i);
                }
            }
            if let (true, Some(i)) = (unit, row) {
                if basis[i] == lay.art(i) && !taken[k] {
                    let a = std_a[(i, k)];
                    for c in 0..w {
                        self.tab[i * w + c] /= a;
                    }
                    basis[i] = k;
                    taken[k] = true;
                }
            }
        }

        let mut iterations = 0;
        let needs_phase1 = (0..m).any(|i| basis[i] == lay.art(i));
        if needs_phase1 {
            let mut c1 = vec![T::zero(); cols + m];
            for i in 0..m {
                c1[lay.art(i)] = T::one();
            }
            self.load_objective(&lay, &basis, &c1);
            let outcome = self.iterate(&lay, &mut basis, true, feas, opt, piv, max_iters, &mut iterations);
            if let Outcome::IterationLimit = outcome {
                return self.finish(
                    problem,
                    &lay,
                    &basis,
                    &std_a,
                    &std_b,
                    &std_c,
                    LpStatus::IterationLimit,
                    iterations,
                    opt,
                    &flip,
                );
            }
            let infeas: T = (0..m)
                .filter(|&i| basis[i] >= cols)
                .fold(T::zero(), |acc, i| acc + self.tab[i * w + lay.rhs()].abs());
            if infeas > feas {
                return self.finish(
                    problem,
                    &lay,
                    &basis,
                    &std_a,
                    &std_b,
                    &std_c,
                    LpStatus::Infeasible,
                    iterations,
                    opt,
                    &flip,
                );
            }
            self.drive_out_artificials(&lay, &mut basis, piv);
        }

        let mut c2 = std_c.clone();
        c2.extend(std::iter::repeat_n(T::zero(), m));
        self.load_objective(&lay, &basis, &c2);
        let outcome = self.iterate(&lay, &mut basis, false, feas, opt, piv, max_iters, &mut iterations);
        let status = match outcome {
            Outcome::Optimal => LpStatus::Optimal,
            Outcome::Unbounded => LpStatus::Unbounded,
            Outcome::IterationLimit => LpStatus::IterationLimit,
        };
        self.finish(
            problem, &lay, &basis, &std_a, &std_b, &std_c, status, iterations, opt, &flip,
        )
    }

    fn load_objective(&mut self, lay: &Layout, basis: &[usize], cost: &[T]) {
        let w = lay.width;
        let m = lay.rows;
        let obj = m * w;
        for k in 0..lay.cols + m {
            self.tab[obj + k] = cost[k];
        }
        self.tab[obj + lay.rhs()] = T::zero();
        for i in 0..m {
            let cb = cost[basis[i]];
            if cb != T::zero() {
                for k in 0..w {
                    let v = self.tab[i * w + k];
                    self.tab[obj + k] -= cb * v;
                }
            }
        }
    }

    fn pivot(&mut self, lay: &Layout, r: usize, s: usize) {
        let w = lay.width;
        let p = self.tab[r * w + s];
        for k in 0..w {
            self.tab[r * w + k] /= p;
        }
        self.tab[r * w + s] = T::one();
        for i in 0..=lay.rows {
            if i == r {
                continue;
            }
            let f = self.tab[i * w + s];
            if f == T::zero() {
                continue;
            }
            for k in 0..w {
                let v = self.tab[r * w + k];
                if v != T::zero() {
                    self.tab[i * w + k] -= f * v;
                }
            }
            self.tab[i * w + s] = T::zero();
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn iterate(
        &mut self,
        lay: &Layout,
        basis: &mut [usize],
        phase1: bool,
        feas: T,
        opt: T,
        piv: T,
        max_iters: usize,
        iterations: &mut usize,
    ) -> Outcome {
        let w = lay.width;
        let m = lay.rows;
        let obj = m * w;
        let rhs = lay.rhs();
        let allowed = if phase1 { lay.cols + m } else { lay.cols };
        let mut in_basis = vec![false; lay.cols + m];
        for &b in basis.iter() {
            in_basis[b] = true;
        }
        let mut degenerate_run = 0usize;
        loop {
            if *iterations >= max_iters {
                return Outcome::IterationLimit;
            }
            let bland = degenerate_run >= self.opts.bland_after;
            let mut entering = None;
            let mut best = -opt;
            for k in 0..allowed {
                if in_basis[k] {
                    continue;
                }
                let d = self.tab[obj + k];
                if d < best {
                    entering = Some(k);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(s) = entering else {
                return Outcome::Optimal;
            };

            let mut leave = None;
            if bland {
                let mut best_ratio = T::zero();
                for i in 0..m {
                    let a = self.tab[i * w + s];
                    if a > piv {
                        let ratio = self.tab[i * w + rhs].max(T::zero()) / a;
                        let better = match leave {
                            None => true,
                            Some(l) => ratio < best_ratio || (ratio == best_ratio && basis[i] < basis[l]),
                        };
                        if better {
                            leave = Some(i);
                            best_ratio = ratio;
                        }
                    }
                }
            } else {
                let mut bound: Option<T> = None;
                for i in 0..m {
                    let a = self.tab[i * w + s];
                    if a > piv {
                        let r = (self.tab[i * w + rhs].max(T::zero()) + feas) / a;
                        bound = Some(bound.map_or(r, |b: T| b.min(r)));
                    }
                }
                if let Some(theta) = bound {
                    let mut best_a = T::zero();
                    for i in 0..m {
                        let a = self.tab[i * w + s];
                        if a > piv && self.tab[i * w + rhs].max(T::zero()) / a <= theta && a > best_a {
                            best_a = a;
                            leave = Some(i);
                        }
                    }
                }
            }
            let Some(r) = leave else {
                return Outcome::Unbounded;
            };
            let step = self.tab[r * w + rhs].max(T::zero()) / self.tab[r * w + s];
            if step <= feas {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            in_basis[basis[r]] = false;
            in_basis[s] = true;
            basis[r] = s;
            self.pivot(lay, r, s);
            for i in 0..m {
                let v = self.tab[i * w + rhs];
                if v < T::zero() && v > -feas {
                    self.tab[i * w + rhs] = T::zero();
                }
            }
            *iterations += 1;
        }
    }

    fn drive_out_artificials(&mut self, lay: &Layout, basis: &mut [usize], piv: T) {
        let w = lay.width;
        for i in 0..lay.rows {
            if basis[i] < lay.cols {
                continue;
            }
            let mut best = None;
            let mut best_a = piv;
            for k in 0..lay.cols {
                if basis.contains(&k) {
                    continue;
                }
                let a = self.tab[i * w + k].abs();
                if a > best_a {
                    best_a = a;
                    best = Some(k);
                }
            }
            if let Some(k) = best {
                basis[i] = k;
                self.pivot(lay, i, k);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        problem: &LpProblem<T>,
        lay: &Layout,
        basis: &[usize],
        std_a: &DMatrix<T>,
        std_b: &DVector<T>,
        std_c: &[T],
        status: LpStatus,
        iterations: usize,
        opt: T,
        _flip: &[bool],
    ) -> LpSolution<T> {
        let w = lay.width;
        let m = lay.rows;
        let mut xb: Vec<T> = (0..m).map(|i| self.tab[i * w + lay.rhs()]).collect();

        if status == LpStatus::Optimal && m > 0 {
            let bmat = DMatrix::from_fn(m, m, |i, r| {
                let k = basis[r];
                if k < lay.cols {
                    std_a[(i, k)]
                } else if k - lay.cols == i {
                    T::one()
                } else {
                    T::zero()
                }
            });
            if let Some(sol) = bmat.clone().lu().solve(std_b) {
                let resid_old = residual(&bmat, &DVector::from_vec(xb.clone()), std_b);
                let resid_new = residual(&bmat, &sol, std_b);
                if resid_new <= resid_old && sol.iter().all(|v| v.is_finite()) {
                    xb = sol.iter().copied().collect();
                }
            }
        }

        let mut xs = vec![T::zero(); lay.cols];
        for i in 0..m {
            if basis[i] < lay.cols {
                xs[basis[i]] = xb[i];
            }
        }
        let mut x = DVector::<T>::zeros(problem.num_vars());
        for (k, &(j, pos)) in lay.origin.iter().enumerate() {
            if pos {
                x[j] += xs[k];
            } else {
                x[j] -= xs[k];
            }
        }
        let objective = std_c.iter().zip(&xs).fold(T::zero(), |acc, (c, v)| acc + *c * *v);

        let mut unique = false;
        if status == LpStatus::Optimal {
            let obj = m * w;
            let mut in_basis = vec![false; lay.cols];
            for &b in basis {
                if b < lay.cols {
                    in_basis[b] = true;
                }
            }
            // The mirror column of a basic free variable has a zero reduced cost by
            // construction and says nothing about uniqueness.
            let mirror_basic = |k: usize| {
                let (j, _) = lay.origin[k];
                lay.origin
                    .iter()
                    .enumerate()
                    .any(|(k2, &(j2, _))| k2 != k && j2 == j && in_basis[k2])
            };
            unique = (0..lay.cols)
                .filter(|&k| !in_basis[k] && !mirror_basic(k))
                .all(|k| self.tab[obj + k] > opt);
        }
        LpSolution {
            x,
            objective,
            status,
            iterations,
            unique,
        }
    }
}

fn residual<T: Real>(a: &DMatrix<T>, x: &DVector<T>, b: &DVector<T>) -> T {
    (a * x - b).amax()
}

/// Solves `problem` with default pivoting rules.
pub fn solve_lp<T: Real>(problem: &LpProblem<T>, feas_tol: f64, max_iters: usize) -> LpSolution<T> {
    SimplexSolver::new(SimplexOptions {
        feas_tol,
        max_iters,
        ..SimplexOptions::default()
    })
    .solve(problem)
}
