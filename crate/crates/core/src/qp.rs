//! Equality-constrained quadratic programs.
//!
//! Minimizes `0.5 y'Hy + g'y` subject to `Ay = b` by factoring the KKT matrix
//!
//! ```text
//! [ H  A' ] [ y      ]   [ -g ]
//! [ A  0  ] [ lambda ] = [  b ]
//! ```
//!
//! with a symmetric-indefinite LDL' factorization (Bunch-Kaufman pivoting).
//! Problems whose constraints only pin a leading block of variables and whose
//! Hessian is banded can instead use [`PinnedBandSolver`], which eliminates
//! the pinned block and runs a banded Cholesky on the rest.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Pivots smaller than this fraction of the matrix infinity-norm are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("constraint matrix is rank deficient")]
    RankDeficient,
    #[error("factorization broke down: pivot {pivot:e} below threshold {threshold:e}")]
    NumericalFailure { pivot: f64, threshold: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    RankDeficient,
    NumericalFailure,
}

impl QpError {
    pub fn status(&self) -> QpStatus {
        match self {
            QpError::RankDeficient => QpStatus::RankDeficient,
            _ => QpStatus::NumericalFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl EqQp {
    pub fn new(
        hessian: DMatrix<f64>,
        gradient: DVector<f64>,
        constraints: DMatrix<f64>,
        rhs: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = hessian.nrows();
        if hessian.ncols() != n || gradient.len() != n {
            return Err(QpError::Dimension(format!(
                "hessian {}x{}, gradient {}",
                hessian.nrows(),
                hessian.ncols(),
                gradient.len()
            )));
        }
        let m = constraints.nrows();
        if (m > 0 && constraints.ncols() != n) || rhs.len() != m || m > n {
            return Err(QpError::Dimension(format!(
                "constraints {}x{}, rhs {}, n {}",
                m,
                constraints.ncols(),
                rhs.len(),
                n
            )));
        }
        let asym = max_asymmetry(&hessian);
        if asym > SYMMETRY_TOLERANCE * hessian.amax().max(1.0) {
            return Err(QpError::Asymmetric(asym));
        }
        Ok(Self { hessian, gradient, constraints, rhs })
    }

    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Result<Self, QpError> {
        let n = hessian.nrows();
        Self::new(hessian, gradient, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.hessian * y)) + self.gradient.dot(y)
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn infinity_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub multipliers: DVector<f64>,
}

impl QpSolution {
    /// `max |Ay - b|`.
    pub fn feasibility_residual(&self, problem: &EqQp) -> f64 {
        if problem.num_constraints() == 0 {
            return 0.0;
        }
        (&problem.constraints * &self.primal - &problem.rhs).amax()
    }

    /// `max |Hy + g + A' lambda|`.
    pub fn stationarity_residual(&self, problem: &EqQp) -> f64 {
        let mut r = &problem.hessian * &self.primal + &problem.gradient;
        if problem.num_constraints() > 0 {
            r += problem.constraints.transpose() * &self.multipliers;
        }
        r.amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One(f64),
    /// Symmetric 2x2 block `[[a, b], [b, c]]`.
    Two(f64, f64, f64),
}

impl Pivot {
    fn size(&self) -> usize {
        match self {
            Pivot::One(_) => 1,
            Pivot::Two(..) => 2,
        }
    }
}

/// `P K P' = L D L'` with unit lower-triangular `L` and 1x1/2x2 blocks in `D`.
#[derive(Debug, Clone)]
pub struct SymmetricIndefinite {
    n: usize,
    /// Row-major; strictly-lower entries hold `L` (block-diagonal entries excluded).
    factors: Vec<f64>,
    pivots: Vec<Pivot>,
    perm: Vec<usize>,
}

impl SymmetricIndefinite {
    pub fn factor(matrix: &DMatrix<f64>) -> Result<Self, QpError> {
        let n = matrix.nrows();
        let threshold = PIVOT_TOLERANCE * infinity_norm(matrix).max(f64::MIN_POSITIVE);
        let alpha = (1.0 + 17f64.sqrt()) / 8.0;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = matrix[(i, j)];
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::new();
        let mut col = vec![0.0; n];
        let mut col2 = vec![0.0; n];

        let swap = |a: &mut [f64], perm: &mut [usize], i: usize, j: usize| {
            if i == j {
                return;
            }
            for c in 0..n {
                a.swap(i * n + c, j * n + c);
            }
            for r in 0..n {
                a.swap(r * n + i, r * n + j);
            }
            perm.swap(i, j);
        };

        let mut k = 0;
        while k < n {
            let akk = a[k * n + k].abs();
            let (mut lambda, mut r) = (0.0, k);
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > lambda {
                    lambda = v;
                    r = i;
                }
            }
            if akk.max(lambda) <= threshold {
                return Err(QpError::NumericalFailure { pivot: akk.max(lambda), threshold });
            }

            let mut two_by_two = false;
            if akk < alpha * lambda {
                let sigma = (k..n).filter(|&j| j != r).map(|j| a[j * n + r].abs()).fold(0.0, f64::max);
                if akk * sigma >= alpha * lambda * lambda {
                    // keep k as a 1x1 pivot
                } else if a[r * n + r].abs() >= alpha * sigma {
                    swap(&mut a, &mut perm, k, r);
                } else {
                    swap(&mut a, &mut perm, k + 1, r);
                    two_by_two = true;
                }
            }

            if !two_by_two {
                let d = a[k * n + k];
                if d.abs() <= threshold {
                    return Err(QpError::NumericalFailure { pivot: d.abs(), threshold });
                }
                for i in k + 1..n {
                    col[i] = a[i * n + k];
                }
                for i in k + 1..n {
                    let li = col[i] / d;
                    if li != 0.0 {
                        for j in k + 1..n {
                            a[i * n + j] -= li * col[j];
                        }
                    }
                    a[i * n + k] = li;
                }
                pivots.push(Pivot::One(d));
                k += 1;
            } else {
                let (d11, d21, d22) = (a[k * n + k], a[(k + 1) * n + k], a[(k + 1) * n + k + 1]);
                let det = d11 * d22 - d21 * d21;
                let scale = d11.abs().max(d21.abs()).max(d22.abs());
                if det.abs() <= threshold * scale {
                    return Err(QpError::NumericalFailure { pivot: det.abs() / scale, threshold });
                }
                for i in k + 2..n {
                    col[i] = a[i * n + k];
                    col2[i] = a[i * n + k + 1];
                }
                for i in k + 2..n {
                    let l1 = (col[i] * d22 - col2[i] * d21) / det;
                    let l2 = (col2[i] * d11 - col[i] * d21) / det;
                    for j in k + 2..n {
                        a[i * n + j] -= l1 * col[j] + l2 * col2[j];
                    }
                    a[i * n + k] = l1;
                    a[i * n + k + 1] = l2;
                }
                pivots.push(Pivot::Two(d11, d21, d22));
                k += 2;
            }
        }
        Ok(Self { n, factors: a, pivots, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let a = &self.factors;
        let mut w: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();

        let mut k = 0;
        for piv in &self.pivots {
            let s = piv.size();
            for c in k..k + s {
                let wc = w[c];
                if wc != 0.0 {
                    for i in k + s..n {
                        w[i] -= a[i * n + c] * wc;
                    }
                }
            }
            k += s;
        }

        let mut k = 0;
        for piv in &self.pivots {
            match *piv {
                Pivot::One(d) => w[k] /= d,
                Pivot::Two(d11, d21, d22) => {
                    let det = d11 * d22 - d21 * d21;
                    let (w1, w2) = (w[k], w[k + 1]);
                    w[k] = (d22 * w1 - d21 * w2) / det;
                    w[k + 1] = (d11 * w2 - d21 * w1) / det;
                }
            }
            k += piv.size();
        }

        for piv in self.pivots.iter().rev() {
            let s = piv.size();
            k -= s;
            for c in k..k + s {
                let mut acc = w[c];
                for i in k + s..n {
                    acc -= a[i * n + c] * w[i];
                }
                w[c] = acc;
            }
        }

        let mut x = DVector::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
        x
    }
}

/// Row-rank test via singular values.
fn has_full_row_rank(a: &DMatrix<f64>) -> bool {
    let m = a.nrows();
    if m == 0 {
        return true;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    sv.len() == m && max > 0.0 && min > PIVOT_TOLERANCE * max
}

/// Factored KKT system, reusable across right-hand sides with the same `H`, `A`.
#[derive(Debug, Clone)]
pub struct KktFactorization {
    kkt: DMatrix<f64>,
    ldl: SymmetricIndefinite,
    n: usize,
    m: usize,
    /// Constraint rows are multiplied by this to balance them against `H`.
    row_scale: f64,
}

impl KktFactorization {
    pub fn new(hessian: &DMatrix<f64>, constraints: &DMatrix<f64>) -> Result<Self, QpError> {
        let n = hessian.nrows();
        let m = constraints.nrows();
        if m > 0 && constraints.ncols() != n {
            return Err(QpError::Dimension(format!("constraints have {} columns, expected {n}", constraints.ncols())));
        }
        if !has_full_row_rank(constraints) {
            return Err(QpError::RankDeficient);
        }
        let row_scale = if m > 0 {
            let (h, a) = (infinity_norm(hessian), infinity_norm(constraints));
            if h > 0.0 && a > 0.0 {
                // power of two keeps the scaling exact
                (h / a).log2().round().exp2()
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(hessian);
        if m > 0 {
            let scaled = constraints * row_scale;
            kkt.view_mut((n, 0), (m, n)).copy_from(&scaled);
            kkt.view_mut((0, n), (n, m)).copy_from(&scaled.transpose());
        }
        let ldl = SymmetricIndefinite::factor(&kkt)?;
        Ok(Self { kkt, ldl, n, m, row_scale })
    }

    pub fn from_problem(problem: &EqQp) -> Result<Self, QpError> {
        Self::new(&problem.hessian, &problem.constraints)
    }

    pub fn solve(&self, gradient: &DVector<f64>, rhs: &DVector<f64>) -> Result<QpSolution, QpError> {
        if gradient.len() != self.n || rhs.len() != self.m {
            return Err(QpError::Dimension(format!(
                "gradient {} / rhs {} for a {}+{} system",
                gradient.len(),
                rhs.len(),
                self.n,
                self.m
            )));
        }
        let mut b = DVector::zeros(self.n + self.m);
        b.rows_mut(0, self.n).copy_from(&(-gradient));
        b.rows_mut(self.n, self.m).copy_from(&(rhs * self.row_scale));
        let mut x = self.ldl.solve(&b);
        // one step of iterative refinement
        let residual = &b - &self.kkt * &x;
        x += self.ldl.solve(&residual);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NumericalFailure { pivot: f64::NAN, threshold: PIVOT_TOLERANCE });
        }
        Ok(QpSolution { primal: x.rows(0, self.n).into_owned(), multipliers: x.rows(self.n, self.m) * self.row_scale })
    }
}

pub fn solve_eq_qp(problem: &EqQp) -> Result<QpSolution, QpError> {
    KktFactorization::from_problem(problem)?.solve(&problem.gradient, &problem.rhs)
}

/// Cholesky factor of a symmetric positive-definite banded matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bandwidth: usize,
    /// `lower[i * (bw + 1) + d] = L[i][i - d]`.
    lower: Vec<f64>,
}

impl BandCholesky {
    /// Factors the band `|i - j| <= bandwidth` of `matrix`; entries outside it are ignored.
    pub fn factor(matrix: &DMatrix<f64>, bandwidth: usize) -> Result<Self, QpError> {
        let n = matrix.nrows();
        let w = bandwidth + 1;
        let threshold = PIVOT_TOLERANCE * infinity_norm(matrix).max(f64::MIN_POSITIVE);
        let mut lower = vec![0.0; n * w];
        for j in 0..n {
            let last = (j + bandwidth).min(n - 1);
            for i in j..=last {
                let mut s = matrix[(i, j)];
                let start = i.saturating_sub(bandwidth);
                for k in start..j {
                    s -= lower[i * w + (i - k)] * lower[j * w + (j - k)];
                }
                if i == j {
                    if s <= threshold {
                        return Err(QpError::NumericalFailure { pivot: s, threshold });
                    }
                    lower[j * w] = s.sqrt();
                } else {
                    lower[i * w + (i - j)] = s / lower[j * w];
                }
            }
        }
        Ok(Self { n, bandwidth, lower })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let (n, bw, w) = (self.n, self.bandwidth, self.bandwidth + 1);
        let mut x = rhs.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.lower[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.lower[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.lower[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.lower[i * w];
        }
        x
    }
}

/// Half-bandwidth of a square matrix (largest `|i - j|` with a nonzero entry).
pub fn bandwidth(m: &DMatrix<f64>) -> usize {
    let mut bw = 0;
    for j in 0..m.ncols() {
        for i in j + bw + 1..m.nrows() {
            if m[(i, j)] != 0.0 || m[(j, i)] != 0.0 {
                bw = i - j;
            }
        }
    }
    bw
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, al * bl - (((p - ah * bh) - al * bh) - ah * bl))
}

/// `sum(a_i * b_i)` evaluated in twice the working precision, then rounded.
fn compensated_dot(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut err) = (0.0, 0.0);
    for (a, b) in terms {
        let (p, pe) = two_product(a, b);
        let (s, se) = two_sum(sum, p);
        sum = s;
        err += pe + se;
    }
    sum + err
}

/// Refinement passes applied after the banded solve.
const REFINEMENT_STEPS: usize = 2;

/// Solver for `min 0.5 y'Hy + g'y  s.t.  y[0..p] = values`, with banded `H`.
///
/// The constraint matrix is `[I_p 0]`, so multipliers are
/// `lambda = -(Hy + g)[0..p]`, matching the KKT sign convention above.
/// Residuals for iterative refinement are accumulated in double-double
/// arithmetic, so the result is accurate to working precision for the
/// stored `H` even when it is poorly conditioned.
#[derive(Debug, Clone)]
pub struct PinnedBandSolver {
    n: usize,
    pinned: usize,
    bandwidth: usize,
    /// `rows[i * (2 bw + 1) + (j + bw - i)] = H[i][j]`.
    rows: Vec<f64>,
    free: BandCholesky,
}

impl PinnedBandSolver {
    pub fn new(hessian: &DMatrix<f64>, pinned: usize) -> Result<Self, QpError> {
        let n = hessian.nrows();
        if hessian.ncols() != n || pinned > n {
            return Err(QpError::Dimension(format!("hessian {}x{}, pinned {pinned}", n, hessian.ncols())));
        }
        let asym = max_asymmetry(hessian);
        if asym > SYMMETRY_TOLERANCE * hessian.amax().max(1.0) {
            return Err(QpError::Asymmetric(asym));
        }
        let f = n - pinned;
        let free_block = hessian.view((pinned, pinned), (f, f)).into_owned();
        let free = BandCholesky::factor(&free_block, bandwidth(&free_block))?;
        let bw = bandwidth(hessian);
        let width = 2 * bw + 1;
        let mut rows = vec![0.0; n * width];
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                rows[i * width + (j + bw - i)] = hessian[(i, j)];
            }
        }
        Ok(Self { n, pinned, bandwidth: bw, rows, free })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pinned(&self) -> usize {
        self.pinned
    }

    /// `-(H y + g)[i]` in extended precision.
    fn negative_gradient(&self, i: usize, y: &DVector<f64>, gradient: &DVector<f64>) -> f64 {
        let bw = self.bandwidth;
        let width = 2 * bw + 1;
        let lo = i.saturating_sub(bw);
        let hi = (i + bw + 1).min(self.n);
        let row = &self.rows[i * width..(i + 1) * width];
        let terms = (lo..hi).map(|j| (-row[j + bw - i], y[j])).chain(std::iter::once((-1.0, gradient[i])));
        compensated_dot(terms)
    }

    pub fn solve(&self, gradient: &DVector<f64>, values: &DVector<f64>) -> Result<QpSolution, QpError> {
        if gradient.len() != self.n || values.len() != self.pinned {
            return Err(QpError::Dimension(format!(
                "gradient {} / pinned values {} for n = {}, p = {}",
                gradient.len(),
                values.len(),
                self.n,
                self.pinned
            )));
        }
        let (n, p) = (self.n, self.pinned);
        let mut primal = DVector::zeros(n);
        primal.rows_mut(0, p).copy_from(values);
        for pass in 0..=REFINEMENT_STEPS {
            let residual = DVector::from_iterator(n - p, (p..n).map(|i| self.negative_gradient(i, &primal, gradient)));
            let correction = self.free.solve(&residual);
            if pass > 0 && correction.iter().all(|c| *c == 0.0) {
                break;
            }
            let mut free = primal.rows_mut(p, n - p);
            free += correction;
        }
        if primal.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NumericalFailure { pivot: f64::NAN, threshold: PIVOT_TOLERANCE });
        }
        let multipliers = DVector::from_iterator(p, (0..p).map(|i| self.negative_gradient(i, &primal, gradient)));
        Ok(QpSolution { primal, multipliers })
    }

    /// The equivalent general problem, for cross-checking against the KKT path.
    pub fn as_problem(hessian: &DMatrix<f64>, gradient: &DVector<f64>, values: &DVector<f64>) -> Result<EqQp, QpError> {
        let n = hessian.nrows();
        let p = values.len();
        let mut a = DMatrix::zeros(p, n);
        for i in 0..p {
            a[(i, i)] = 1.0;
        }
        EqQp::new(hessian.clone(), gradient.clone(), a, values.clone())
    }
}
