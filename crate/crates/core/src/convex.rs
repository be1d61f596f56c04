//! Convex subproblem contracts and their interior-point backend.
//!
//! Two problem classes are exposed: a QCQP with convex quadratic
//! inequalities, and an SDP over Hermitian matrices extended with scalar
//! variables and convex quadratic constraints on affine forms. Both are lowered
//! to the conic form `min q^T x  s.t.  b - A x in K` of the Clarabel solver:
//! quadratic constraints become rotated second-order cones and every N x N
//! Hermitian variable is embedded as a 2N x 2N real symmetric one.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// `x^T H x + linear^T x + constant <= 0` with H positive semidefinite.
#[derive(Debug, Clone)]
pub struct QuadraticConstraint {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct QcqpProblem {
    /// Minimize `objective^T x`.
    pub objective: DVector<f64>,
    pub constraints: Vec<QuadraticConstraint>,
    /// Adds `x >= 0`.
    pub nonnegative: bool,
    /// `eq_matrix x = eq_rhs`; zero rows for none.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl QcqpProblem {
    pub fn new(objective: DVector<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            nonnegative: false,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: u32,
}

/// Affine function `sum_k tr(C_k R_k) + sum_i a_i s_i + constant` of the
/// matrix variables R_k and scalar variables s_i of an [`SdpProblem`].
/// Each C_k must be Hermitian.
#[derive(Debug, Clone, Default)]
pub struct AffineForm {
    pub matrices: Vec<(usize, CMatrix)>,
    pub scalars: Vec<(usize, f64)>,
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub enum SdpConstraint {
    /// form = 0.
    Equal(AffineForm),
    /// form <= 0.
    LessEqual(AffineForm),
    /// `y^T H y + linear <= 0` where `y_i = terms[i]` and H is PSD.
    Quadratic { terms: Vec<AffineForm>, hessian: DMatrix<f64>, linear: AffineForm },
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    /// Side length of each Hermitian matrix variable.
    pub dims: Vec<usize>,
    /// Constrain R_k to be PSD.
    pub psd: Vec<bool>,
    /// Constrain diag(R_k) = 1.
    pub unit_diagonal: Vec<bool>,
    pub num_scalars: usize,
    /// Minimized.
    pub objective: AffineForm,
    pub constraints: Vec<SdpConstraint>,
}

impl SdpProblem {
    pub fn new(dims: Vec<usize>, num_scalars: usize) -> Self {
        let k = dims.len();
        Self {
            dims,
            psd: vec![true; k],
            unit_diagonal: vec![false; k],
            num_scalars,
            objective: AffineForm::default(),
            constraints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub matrices: Vec<CMatrix>,
    pub scalars: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: u32,
}

/// Length of the packed upper triangle of an n x n symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed upper triangle, column-major, off-diagonals scaled by sqrt(2), so
/// that `svec(A) . svec(B) = tr(A B)` for symmetric A, B.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            out.push(if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * m[(i, j)] });
        }
    }
    out
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            let x = if i == j { v[idx] } else { v[idx] / std::f64::consts::SQRT_2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    m
}

/// Real symmetric embedding [[X, -Y], [Y, X]] of a Hermitian X + jY.
pub fn hermitian_to_real(h: &CMatrix) -> DMatrix<f64> {
    let n = h.nrows();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            r[(i, j)] = z.re;
            r[(i + n, j + n)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
        }
    }
    r
}

/// Inverse of [`hermitian_to_real`], averaging the redundant blocks.
pub fn real_to_hermitian(r: &DMatrix<f64>) -> CMatrix {
    let n = r.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let x = 0.5 * (r[(i, j)] + r[(i + n, j + n)]);
        let y = 0.5 * (r[(i + n, j)] - r[(i, j + n)]);
        Complex64::new(x, y)
    })
}

/// Factor L with H = L L^T for a PSD H, dropping null directions.
fn psd_factor(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    debug_assert!(
        eig.eigenvalues.iter().all(|&v| v >= -1e-9 * top.max(1.0)),
        "constraint Hessian is not PSD: {:?}",
        eig.eigenvalues
    );
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-13 * top).collect();
    let mut l = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        l.set_column(c, &(eig.eigenvectors.column(i) * s));
    }
    l
}

type SparseRow = Vec<(usize, f64)>;

/// Accumulates `b - A x in K` row blocks, one cone at a time.
struct ConicBuilder {
    n: usize,
    cost: Vec<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl ConicBuilder {
    fn new(n: usize) -> Self {
        Self { n, cost: vec![0.0; n], rows: vec![], cols: vec![], vals: vec![], b: vec![], cones: vec![] }
    }

    fn push_row(&mut self, row: &[(usize, f64)], b: f64) {
        let r = self.b.len();
        for &(c, v) in row {
            if v != 0.0 {
                self.rows.push(r);
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.b.push(b);
    }

    /// `row . x = rhs` for each row.
    fn equalities(&mut self, rows: &[(SparseRow, f64)]) {
        if rows.is_empty() {
            return;
        }
        for (row, rhs) in rows {
            self.push_row(row, *rhs);
        }
        self.cones.push(SupportedConeT::ZeroConeT(rows.len()));
    }

    /// `row . x <= rhs` for each row.
    fn inequalities(&mut self, rows: &[(SparseRow, f64)]) {
        if rows.is_empty() {
            return;
        }
        for (row, rhs) in rows {
            self.push_row(row, *rhs);
        }
        self.cones.push(SupportedConeT::NonnegativeConeT(rows.len()));
    }

    /// `sum_ij H_ij t_i t_j + lin . x + constant <= 0` with `t_i = terms[i].0 . x + terms[i].1`.
    fn quadratic(&mut self, terms: &[(SparseRow, f64)], hessian: &DMatrix<f64>, lin: &SparseRow, constant: f64) {
        let l = psd_factor(hessian);
        if l.ncols() == 0 {
            self.inequalities(&[(lin.clone(), -constant)]);
            return;
        }
        // ||L^T t||^2 <= w with w = -(lin . x) - constant, as the cone
        // (w + 1, w - 1, 2 L^T t).
        self.push_row(lin, 1.0 - constant);
        self.push_row(lin, -1.0 - constant);
        for j in 0..l.ncols() {
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut offset = 0.0;
            for (i, (t, c)) in terms.iter().enumerate() {
                let coef = l[(i, j)];
                if coef == 0.0 {
                    continue;
                }
                row.extend(t.iter().map(|&(col, v)| (col, -2.0 * coef * v)));
                offset += 2.0 * coef * c;
            }
            self.push_row(&merge(row), offset);
        }
        self.cones.push(SupportedConeT::SecondOrderConeT(l.ncols() + 2));
    }

    fn psd_triangle(&mut self, first_col: usize, dim: usize) {
        for i in 0..svec_len(dim) {
            self.push_row(&[(first_col + i, -1.0)], 0.0);
        }
        self.cones.push(SupportedConeT::PSDTriangleConeT(dim));
    }

    fn solve(self) -> (Vec<f64>, f64, SolveStatus, u32) {
        let m = self.b.len();
        let a = CscMatrix::new_from_triplets(m, self.n, self.rows, self.cols, self.vals);
        let p = CscMatrix::zeros((self.n, self.n));
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(300)
            .direct_solve_method("faer".into())
            .build()
            .expect("static solver settings are valid");
        let mut solver = match DefaultSolver::new(&p, &self.cost, &a, &self.b, &self.cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("conic backend rejected problem: {e}");
                return (vec![0.0; self.n], f64::NAN, SolveStatus::NumericalFailure, 0);
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        };
        (sol.x.clone(), sol.obj_val, status, sol.iterations)
    }
}

/// Sums duplicate column entries.
fn merge(mut row: SparseRow) -> SparseRow {
    row.sort_by_key(|e| e.0);
    let mut out: SparseRow = Vec::with_capacity(row.len());
    for (c, v) in row {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out
}

fn dense_row(v: &DVector<f64>) -> SparseRow {
    v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (i, *x)).collect()
}

pub fn solve_qcqp(problem: &QcqpProblem) -> QcqpSolution {
    let n = problem.objective.len();
    let mut cb = ConicBuilder::new(n);
    cb.cost.copy_from_slice(problem.objective.as_slice());
    let eqs: Vec<_> = (0..problem.eq_matrix.nrows())
        .map(|r| (dense_row(&problem.eq_matrix.row(r).transpose()), problem.eq_rhs[r]))
        .collect();
    cb.equalities(&eqs);
    if problem.nonnegative {
        let rows: Vec<_> = (0..n).map(|i| (vec![(i, -1.0)], 0.0)).collect();
        cb.inequalities(&rows);
    }
    let identity: Vec<(SparseRow, f64)> = (0..n).map(|i| (vec![(i, 1.0)], 0.0)).collect();
    for c in &problem.constraints {
        cb.quadratic(&identity, &c.hessian, &dense_row(&c.linear), c.constant);
    }
    let (x, objective, status, iterations) = cb.solve();
    QcqpSolution { x: DVector::from_vec(x), objective, status, iterations }
}

/// Column offsets of each matrix variable's packed embedding, then the scalars.
fn sdp_layout(problem: &SdpProblem) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(problem.dims.len());
    let mut n = 0;
    for &d in &problem.dims {
        offsets.push(n);
        n += svec_len(2 * d);
    }
    (offsets, n)
}

fn lower_form(form: &AffineForm, offsets: &[usize], dims: &[usize], scalar_base: usize) -> (SparseRow, f64) {
    let mut row = Vec::new();
    for (k, c) in &form.matrices {
        // tr(C R) = 1/2 <svec C~, svec R~>.
        let packed = svec(&hermitian_to_real(c));
        debug_assert_eq!(packed.len(), svec_len(2 * dims[*k]));
        row.extend(packed.into_iter().enumerate().map(|(i, v)| (offsets[*k] + i, 0.5 * v)));
    }
    row.extend(form.scalars.iter().map(|&(i, v)| (scalar_base + i, v)));
    (merge(row), form.constant)
}

/// Clips negative eigenvalues and, if requested, rescales back to unit diagonal.
fn repair(r: &CMatrix, unit_diagonal: bool) -> CMatrix {
    let eig = r.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut out = v * CMatrix::from_diagonal(&clipped.map(Complex64::from)) * v.adjoint();
    if unit_diagonal {
        let d: Vec<f64> = (0..out.nrows()).map(|i| out[(i, i)].re.max(1e-300).sqrt()).collect();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] /= d[i] * d[j];
            }
        }
    }
    // Exact Hermitian symmetry.
    (&out + out.adjoint()) * Complex64::from(0.5)
}

pub fn solve_sdp(problem: &SdpProblem) -> SdpSolution {
    let (offsets, nmat) = sdp_layout(problem);
    // Each quadratic term gets an auxiliary scalar tied to its trace form by
    // an equality, so the cone rows stay short and the KKT factor sparse.
    let aux_count: usize = problem
        .constraints
        .iter()
        .map(|c| match c {
            SdpConstraint::Quadratic { terms, .. } => terms.len() + 1,
            _ => 0,
        })
        .sum();
    let aux_base = nmat + problem.num_scalars;
    let n = aux_base + aux_count;
    let dims = &problem.dims;
    let mut cb = ConicBuilder::new(n);

    let (obj, _) = lower_form(&problem.objective, &offsets, dims, nmat);
    for (c, v) in obj {
        cb.cost[c] += v;
    }

    let mut eqs = Vec::new();
    for (k, &d) in dims.iter().enumerate() {
        if problem.unit_diagonal[k] {
            // Both diagonal blocks of the embedding.
            for i in 0..2 * d {
                let idx = offsets[k] + svec_len(i + 1) - 1;
                eqs.push((vec![(idx, 1.0)], 1.0));
            }
        }
    }
    let mut ineqs = Vec::new();
    let mut cones = Vec::new();
    let mut next_aux = aux_base;
    let mut tie = |form: &AffineForm, eqs: &mut Vec<(SparseRow, f64)>| {
        let (row, k0) = lower_form(form, &offsets, dims, nmat);
        let y = next_aux;
        next_aux += 1;
        let mut tied: SparseRow = row.into_iter().map(|(c, v)| (c, -v)).collect();
        tied.push((y, 1.0));
        eqs.push((tied, k0));
        y
    };
    for c in &problem.constraints {
        match c {
            SdpConstraint::Equal(f) => {
                let (row, k0) = lower_form(f, &offsets, dims, nmat);
                eqs.push((row, -k0));
            }
            SdpConstraint::LessEqual(f) => {
                let (row, k0) = lower_form(f, &offsets, dims, nmat);
                ineqs.push((row, -k0));
            }
            SdpConstraint::Quadratic { terms, hessian, linear } => {
                let ys: Vec<(SparseRow, f64)> = terms.iter().map(|t| (vec![(tie(t, &mut eqs), 1.0)], 0.0)).collect();
                let yl = tie(linear, &mut eqs);
                cones.push((ys, hessian, yl));
            }
        }
    }
    cb.equalities(&eqs);
    cb.inequalities(&ineqs);
    for (ys, hessian, yl) in cones {
        cb.quadratic(&ys, hessian, &vec![(yl, 1.0)], 0.0);
    }
    for (k, &d) in dims.iter().enumerate() {
        if problem.psd[k] {
            cb.psd_triangle(offsets[k], 2 * d);
        }
    }

    let (x, obj_val, status, iterations) = cb.solve();
    let matrices = dims
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let packed = &x[offsets[k]..offsets[k] + svec_len(2 * d)];
            let r = real_to_hermitian(&smat(packed, 2 * d));
            if problem.psd[k] {
                repair(&r, problem.unit_diagonal[k])
            } else {
                r
            }
        })
        .collect();
    SdpSolution {
        matrices,
        scalars: x[nmat..aux_base].to_vec(),
        objective: obj_val + problem.objective.constant,
        status,
        iterations,
    }
}
