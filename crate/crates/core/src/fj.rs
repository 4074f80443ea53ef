//! Faddeev-Jackiw reduction of first-order Lagrangians.
//!
//! A first-order Lagrangian `L = a_i(xi) xi'^i - H(xi) - eta_k phi^k(xi)` is
//! described by its kinetic two-form `F_ij = d_i a_j - d_j a_i`, so the
//! equations of motion read `F xi' = grad (H + eta_k phi^k)`. The canonical
//! form is `F = omega = [[0, I], [-I, 0]]` with `xi = (p, q)`.
//!
//! [`fj_reduce`] strips zero modes of `F` round by round: it changes to
//! coordinates `(zeta, z)` with `z` along the kernel, uses `dH/dz = 0` to
//! solve for `z` where possible, turns `z`-free equations into constraints
//! on `zeta`, drops directions along which `H` does not change at all, and
//! finishes with a linear Darboux transform once `F` is invertible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Polynomial, RationalFunction};

/// Relative singular-value threshold for zero modes.
pub const ZERO_MODE_TOL: f64 = 1e-10;
/// Absolute tolerance on `F + F^T` at sampled points.
pub const ANTISYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FjError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("kinetic matrix is not antisymmetric: |F[{i}][{j}] + F[{j}][{i}]| = {defect:e}")]
    NotAntisymmetric { i: usize, j: usize, defect: f64 },
    #[error(
        "cannot solve the constraint for {variable} in closed form ({reason}); \
         add it as a multiplier term and let fj_reduce handle it instead"
    )]
    NotSolvable { variable: String, reason: String },
    #[error("kinetic matrix is singular (rank {rank} of {dim}); strip its zero modes before a Darboux transform")]
    Singular { rank: usize, dim: usize },
    #[error("kinetic matrix depends on the coordinates; Darboux transforms need a constant matrix")]
    NotConstant,
}

/// `phi(xi) = 0` enforced through a multiplier variable.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierTerm {
    pub constraint: RationalFunction,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstOrderLagrangian {
    labels: Vec<String>,
    kinetic: Vec<Vec<RationalFunction>>,
    potential: RationalFunction,
    multipliers: Vec<MultiplierTerm>,
}

impl FirstOrderLagrangian {
    pub fn new(
        labels: Vec<String>,
        kinetic: Vec<Vec<RationalFunction>>,
        potential: RationalFunction,
        multipliers: Vec<MultiplierTerm>,
    ) -> Result<Self, FjError> {
        let m = labels.len();
        if kinetic.len() != m || kinetic.iter().any(|row| row.len() != m) {
            return Err(FjError::Dimension(format!("kinetic matrix must be {m}x{m}")));
        }
        let bad_arity = kinetic.iter().flatten().any(|e| e.nvars() != m)
            || potential.nvars() != m
            || multipliers.iter().any(|t| t.constraint.nvars() != m);
        if bad_arity {
            return Err(FjError::Dimension(format!("all fields must be functions of {m} variables")));
        }
        for i in 0..m {
            for j in i..m {
                let sum = &kinetic[i][j] + &kinetic[j][i];
                if !sum.is_zero() {
                    let x = sample_point(m, 0);
                    return Err(FjError::NotAntisymmetric { i, j, defect: sum.eval(&x).abs() });
                }
            }
        }
        Ok(FirstOrderLagrangian { labels, kinetic, potential, multipliers })
    }

    /// Constant kinetic matrix given numerically.
    pub fn with_constant_kinetic(
        labels: Vec<String>,
        kinetic: &DMatrix<f64>,
        potential: RationalFunction,
        multipliers: Vec<MultiplierTerm>,
    ) -> Result<Self, FjError> {
        let m = labels.len();
        if kinetic.nrows() != m || kinetic.ncols() != m {
            return Err(FjError::Dimension(format!("kinetic matrix must be {m}x{m}")));
        }
        for i in 0..m {
            for j in 0..m {
                let d = (kinetic[(i, j)] + kinetic[(j, i)]).abs();
                if d > 1e-14 * kinetic.amax().max(1.0) {
                    return Err(FjError::NotAntisymmetric { i, j, defect: d });
                }
            }
        }
        let k = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let v = if i == j { 0.0 } else { 0.5 * (kinetic[(i, j)] - kinetic[(j, i)]) };
                        RationalFunction::constant(m, v)
                    })
                    .collect()
            })
            .collect();
        Self::new(labels, k, potential, multipliers)
    }

    /// `L = p q' - H` in the ordering `xi = (p_1..p_N, q_1..q_N)`.
    pub fn canonical(
        q_labels: &[&str],
        potential: RationalFunction,
        multipliers: Vec<MultiplierTerm>,
    ) -> Result<Self, FjError> {
        let n = q_labels.len();
        let mut labels: Vec<String> = q_labels.iter().map(|q| format!("p_{q}")).collect();
        labels.extend(q_labels.iter().map(|q| q.to_string()));
        Self::with_constant_kinetic(labels, &canonical_omega(n), potential, multipliers)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kinetic(&self) -> &[Vec<RationalFunction>] {
        &self.kinetic
    }

    pub fn potential(&self) -> &RationalFunction {
        &self.potential
    }

    pub fn multipliers(&self) -> &[MultiplierTerm] {
        &self.multipliers
    }

    pub fn is_constant_kinetic(&self) -> bool {
        self.kinetic.iter().flatten().all(|e| e.as_constant().is_some())
    }

    pub fn kinetic_at(&self, xi: &[f64]) -> DMatrix<f64> {
        eval_matrix(&self.kinetic, xi)
    }

    /// Solves `F(xi) xi' = grad (H + eta_k phi^k)` for `xi'`.
    pub fn velocity(&self, xi: &[f64], eta: &[f64]) -> Result<Vec<f64>, FjError> {
        let m = self.dim();
        let mut g = DVector::from_iterator(m, self.potential.gradient().iter().map(|d| d.eval(xi)));
        for (t, e) in self.multipliers.iter().zip(eta) {
            for (i, d) in t.constraint.gradient().iter().enumerate() {
                g[i] += e * d.eval(xi);
            }
        }
        let f = self.kinetic_at(xi);
        let rank = numerical_rank(&f, ZERO_MODE_TOL);
        if rank < m {
            return Err(FjError::Singular { rank, dim: m });
        }
        let v = f.lu().solve(&g).ok_or(FjError::Singular { rank, dim: m })?;
        Ok(v.iter().copied().collect())
    }
}

/// `[[0, I], [-I, 0]]` of size `2n`.
pub fn canonical_omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        w[(k, n + k)] = 1.0;
        w[(n + k, k)] = -1.0;
    }
    w
}

/// Direct sum of `n` blocks `[[0, 1], [-1, 0]]`.
pub fn block_omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

fn sample_point(m: usize, k: usize) -> Vec<f64> {
    (0..m).map(|i| 0.3 + 0.1 * i as f64 + 0.37 * k as f64).collect()
}

fn eval_matrix(k: &[Vec<RationalFunction>], xi: &[f64]) -> DMatrix<f64> {
    let m = k.len();
    DMatrix::from_fn(m, m, |i, j| k[i][j].eval(xi))
}

fn numerical_rank(f: &DMatrix<f64>, tol: f64) -> usize {
    if f.is_empty() {
        return 0;
    }
    let sv = f.clone().singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > tol * smax && s > 0.0).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroModeBasis {
    /// Orthonormal kernel vectors.
    pub modes: Vec<Vec<f64>>,
    pub tol: f64,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

impl ZeroModeBasis {
    pub fn count(&self) -> usize {
        self.modes.len()
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len() - self.modes.len()
    }
}

/// Kernel of an antisymmetric matrix by SVD; a singular value counts as
/// zero when it is at most `tol` times the largest one. Coordinate axes that
/// lie in the kernel are returned as themselves, ahead of the remaining
/// modes.
pub fn zero_modes(f: &DMatrix<f64>, tol: f64) -> ZeroModeBasis {
    let m = f.nrows();
    if m == 0 {
        return ZeroModeBasis { modes: vec![], tol, singular_values: vec![] };
    }
    let svd = f.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    let null_rows: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| !(s > tol * smax && s > 0.0))
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    let r = null_rows.len();

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
    let thresh = tol * smax.max(f64::MIN_POSITIVE);
    for k in 0..m {
        if basis.len() == r {
            break;
        }
        if f.column(k).norm() <= thresh {
            let mut e = DVector::zeros(m);
            e[k] = 1.0;
            basis.push(e);
        }
    }
    for v in null_rows {
        if basis.len() == r {
            break;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                w -= b * b.dot(&w);
            }
        }
        let n = w.norm();
        if n > 1e-8 {
            basis.push(w / n);
        }
    }
    ZeroModeBasis { modes: basis.iter().map(|v| v.iter().copied().collect()).collect(), tol, singular_values: sv }
}

/// Column ordering of a Darboux transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DarbouxLayout {
    /// `T^T F T = [[0, I], [-I, 0]]`.
    #[default]
    Split,
    /// `T^T F T` is a direct sum of `[[0, 1], [-1, 0]]` blocks.
    Blocks,
}

/// Real `T` with `T^T F T` canonical for a constant, invertible,
/// antisymmetric `F`, built by symplectic Gram-Schmidt on the coordinate
/// axes (lowest index first among near-maximal pairings).
pub fn darboux(f: &DMatrix<f64>, layout: DarbouxLayout) -> Result<DMatrix<f64>, FjError> {
    let m = f.nrows();
    let rank = numerical_rank(f, ZERO_MODE_TOL);
    if m % 2 == 1 || rank < m {
        return Err(FjError::Singular { rank, dim: m });
    }
    let pairing = |a: &DVector<f64>, b: &DVector<f64>| a.dot(&(f * b));
    let mut cands: Vec<DVector<f64>> = (0..m)
        .map(|k| {
            let mut e = DVector::zeros(m);
            e[k] = 1.0;
            e
        })
        .collect();
    let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(m / 2);
    while !cands.is_empty() {
        let k = cands.len();
        let mut best = vec![(0usize, 0.0f64); k];
        let mut gmax = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let v = pairing(&cands[a], &cands[b]).abs();
                if v > best[a].1 {
                    best[a] = (b, v);
                }
            }
            gmax = gmax.max(best[a].1);
        }
        if gmax <= 1e-12 * f.amax() {
            return Err(FjError::Singular { rank: 2 * pairs.len(), dim: m });
        }
        let a = (0..k).find(|&a| best[a].1 >= 1e-2 * gmax).expect("maximum exists");
        let b = best[a].0;
        let (u, v) = normalize_pair(f, cands[a].clone(), cands[b].clone());
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        cands.remove(hi);
        cands.remove(lo);
        for x in cands.iter_mut() {
            *x = project_out(f, x, &u, &v);
        }
        pairs.push((u, v));
    }
    // Second pass against accumulated rounding.
    let mut clean: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(pairs.len());
    for (u, v) in pairs {
        let (mut u, mut v) = (u, v);
        for (pu, pv) in &clean {
            u = project_out(f, &u, pu, pv);
            v = project_out(f, &v, pu, pv);
        }
        clean.push(normalize_pair(f, u, v));
    }
    let n = m / 2;
    let mut t = DMatrix::zeros(m, m);
    for (k, (u, v)) in clean.iter().enumerate() {
        let (cu, cv) = match layout {
            DarbouxLayout::Split => (k, n + k),
            DarbouxLayout::Blocks => (2 * k, 2 * k + 1),
        };
        t.set_column(cu, u);
        t.set_column(cv, v);
    }
    Ok(t)
}

fn normalize_pair(f: &DMatrix<f64>, u: DVector<f64>, v: DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let s = u.dot(&(f * &v));
    let v = if s < 0.0 { -v } else { v };
    let r = s.abs().sqrt();
    (u / r, v / r)
}

/// Removes the components of `x` that pair with the canonical pair `(u, v)`.
fn project_out(f: &DMatrix<f64>, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let fx = f * x;
    x + u * v.dot(&fx) - v * u.dot(&fx)
}

fn var(m: usize, i: usize) -> RationalFunction {
    Polynomial::var(m, i).into()
}

/// `xi_c = sum_d A_cd x_d` as rational functions of `x`.
fn linear_map(a: &DMatrix<f64>) -> Vec<RationalFunction> {
    let m = a.ncols();
    (0..a.nrows())
        .map(|c| {
            let coeffs: Vec<f64> = (0..m).map(|d| a[(c, d)]).collect();
            Polynomial::linear(&coeffs, 0.0).into()
        })
        .collect()
}

/// `F'_ab = sum_cd (d psi_c / dx_a) F_cd(psi) (d psi_d / dx_b)`.
fn pullback(k: &[Vec<RationalFunction>], psi: &[RationalFunction]) -> Vec<Vec<RationalFunction>> {
    let m_old = k.len();
    let m_new = psi.first().map(RationalFunction::nvars).unwrap_or(0);
    let jac: Vec<Vec<RationalFunction>> = psi.iter().map(RationalFunction::gradient).collect();
    let composed: Vec<Vec<RationalFunction>> =
        k.iter().map(|row| row.iter().map(|e| e.compose(psi)).collect()).collect();
    let mut out = vec![vec![RationalFunction::zero(m_new); m_new]; m_new];
    for a in 0..m_new {
        for b in (a + 1)..m_new {
            let mut acc = RationalFunction::zero(m_new);
            for c in 0..m_old {
                if jac[c][a].is_zero() {
                    continue;
                }
                for d in 0..m_old {
                    if composed[c][d].is_zero() || jac[d][b].is_zero() {
                        continue;
                    }
                    acc = &acc + &(&(&jac[c][a] * &composed[c][d]) * &jac[d][b]);
                }
            }
            out[b][a] = acc.scale(-1.0);
            out[a][b] = acc;
        }
    }
    out
}

/// Sets numerically negligible constant entries to exact zero.
fn clean_kinetic(k: &mut [Vec<RationalFunction>]) {
    let m = k.len();
    let scale = k.iter().flatten().filter_map(RationalFunction::as_constant).fold(0.0f64, |s, c| s.max(c.abs()));
    for row in k.iter_mut() {
        for e in row.iter_mut() {
            if let Some(c) = e.as_constant() {
                if c != 0.0 && c.abs() <= 1e-12 * scale.max(1.0) {
                    *e = RationalFunction::zero(m);
                }
            }
        }
    }
}

/// Solves `num(phi) = 0` for `x_var` when the numerator is affine in it.
fn solve_affine(phi: &RationalFunction, var: usize, constant_only: bool) -> Option<RationalFunction> {
    if phi.denominator().contains_var(var) {
        return None;
    }
    let (c1, c0) = phi.numerator().split_affine(var)?;
    if c1.is_zero() {
        return None;
    }
    match c1.as_constant() {
        Some(c) => Some(RationalFunction::from(c0.scale(-1.0 / c))),
        None if constant_only => None,
        None => Some(RationalFunction::new(c0.scale(-1.0), c1)),
    }
}

/// The current coordinates of a reduction, tied back to the original ones.
#[derive(Clone, Debug)]
struct Chart {
    labels: Vec<String>,
    kinetic: Vec<Vec<RationalFunction>>,
    h: RationalFunction,
    /// Current coordinates as linear functions of the original ones.
    projection: DMatrix<f64>,
    /// Original coordinates as functions of the current ones.
    embedding: Vec<RationalFunction>,
    reference: Vec<f64>,
}

impl Chart {
    fn dim(&self) -> usize {
        self.labels.len()
    }

    fn index_of(&self, label: &str) -> usize {
        self.labels.iter().position(|l| l == label).expect("label present")
    }

    /// `xi_old = A xi_new`.
    fn change(&mut self, a: &DMatrix<f64>, labels: Vec<String>) {
        let psi = linear_map(a);
        self.kinetic = pullback(&self.kinetic, &psi);
        clean_kinetic(&mut self.kinetic);
        self.h = self.h.compose(&psi);
        self.embedding = self.embedding.iter().map(|e| e.compose(&psi)).collect();
        let inv = a.clone().try_inverse().expect("coordinate change is invertible");
        self.projection = &inv * &self.projection;
        self.reference = (&inv * DVector::from_column_slice(&self.reference)).iter().copied().collect();
        self.labels = labels;
    }

    /// Substitutes `x_var = value` (free of `x_var`) and drops the slot.
    fn eliminate(&mut self, var: usize, value: &RationalFunction) {
        let m = self.dim();
        let psi: Vec<RationalFunction> = (0..m).map(|i| if i == var { value.clone() } else { self::var(m, i) }).collect();
        let k = pullback(&self.kinetic, &psi);
        self.kinetic = k
            .into_iter()
            .enumerate()
            .filter(|(i, _)| *i != var)
            .map(|(_, row)| {
                row.into_iter().enumerate().filter(|(j, _)| *j != var).map(|(_, e)| e.remove_var(var)).collect()
            })
            .collect();
        clean_kinetic(&mut self.kinetic);
        self.h = self.h.substitute(var, value).remove_var(var);
        self.embedding = self.embedding.iter().map(|e| e.substitute(var, value).remove_var(var)).collect();
        self.projection = self.projection.clone().remove_row(var);
        self.reference.remove(var);
        self.labels.remove(var);
    }

    fn is_constant(&self) -> bool {
        self.kinetic.iter().flatten().all(|e| e.as_constant().is_some())
    }

    fn kinetic_at_reference(&self) -> DMatrix<f64> {
        eval_matrix(&self.kinetic, &self.reference)
    }

    fn check_antisymmetry(&self) -> Result<(), FjError> {
        let m = self.dim();
        let mut points = vec![self.reference.clone()];
        points.extend((1..3).map(|k| sample_point(m, k)));
        for x in points {
            let f = eval_matrix(&self.kinetic, &x);
            for i in 0..m {
                for j in i..m {
                    let d = (f[(i, j)] + f[(j, i)]).abs();
                    if d.is_finite() && d > ANTISYMMETRY_TOL * f.amax().max(1.0) {
                        return Err(FjError::NotAntisymmetric { i, j, defect: d });
                    }
                }
            }
        }
        Ok(())
    }

    /// A field of the current coordinates rewritten in the original ones.
    fn to_original(&self, phi: &RationalFunction) -> RationalFunction {
        phi.compose(&linear_map(&self.projection))
    }
}

/// One auditable step of a reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum EliminationStep {
    ZeroModes { round: usize, labels: Vec<String>, count: usize, singular_values: Vec<f64>, local: bool },
    /// `old = matrix * new`.
    CoordinateChange { round: usize, kind: String, from: Vec<String>, to: Vec<String>, matrix: Vec<Vec<f64>> },
    SolvedZeroMode { round: usize, variable: String, equation: String, solution: String },
    Constraint { round: usize, constraint: String, eliminated: String, solution: String },
    MultiplierDropped { round: usize, variable: String },
    GaugeDirection { round: usize, variable: String, fixed_value: f64 },
    Stuck { round: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReductionStatus {
    /// Every round had a constant kinetic matrix.
    Complete,
    /// Some round froze a coordinate-dependent kinetic matrix at the
    /// reference point; the result holds near that point.
    LocalOnly,
    Stuck { reason: String },
    MaxRounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoundConstraint {
    pub round: usize,
    /// The constraint as a field of the original coordinates (multipliers
    /// included, in declaration order after the Lagrangian's variables).
    pub field: RationalFunction,
}

#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub labels: Vec<String>,
    /// Rank of the final kinetic matrix.
    pub canonical_dim: usize,
    /// Final kinetic matrix; canonical `omega` unless the reduction stalled.
    pub kinetic: DMatrix<f64>,
    pub constraints: Vec<FoundConstraint>,
    pub reduced_hamiltonian: RationalFunction,
    pub elimination_log: Vec<EliminationStep>,
    pub status: ReductionStatus,
    /// `zeta = projection * (xi, eta)` on the constraint surface.
    pub projection: DMatrix<f64>,
    /// `(xi, eta)` as functions of `zeta`.
    pub embedding: Vec<RationalFunction>,
    pub original_labels: Vec<String>,
    pub rounds: usize,
}

impl ReducedSystem {
    pub fn is_canonical(&self) -> bool {
        matches!(self.status, ReductionStatus::Complete | ReductionStatus::LocalOnly)
    }

    /// `zeta'` from `F zeta' = grad H''`.
    pub fn velocity(&self, zeta: &[f64]) -> Result<Vec<f64>, FjError> {
        let m = self.labels.len();
        let g = DVector::from_iterator(m, self.reduced_hamiltonian.gradient().iter().map(|d| d.eval(zeta)));
        let rank = numerical_rank(&self.kinetic, ZERO_MODE_TOL);
        if rank < m {
            return Err(FjError::Singular { rank, dim: m });
        }
        let v = self.kinetic.clone().lu().solve(&g).ok_or(FjError::Singular { rank, dim: m })?;
        Ok(v.iter().copied().collect())
    }

    pub fn project(&self, original: &[f64]) -> Vec<f64> {
        (&self.projection * DVector::from_column_slice(original)).iter().copied().collect()
    }

    pub fn embed(&self, zeta: &[f64]) -> Vec<f64> {
        self.embedding.iter().map(|e| e.eval(zeta)).collect()
    }

    /// The reduced system as a multiplier-free Lagrangian.
    pub fn to_lagrangian(&self) -> Result<FirstOrderLagrangian, FjError> {
        FirstOrderLagrangian::with_constant_kinetic(
            self.labels.clone(),
            &self.kinetic,
            self.reduced_hamiltonian.clone(),
            vec![],
        )
    }

    pub fn elimination_log_json(&self) -> String {
        serde_json::to_string_pretty(&self.elimination_log).expect("log serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOptions {
    pub max_rounds: usize,
    pub zero_mode_tol: f64,
    /// Point (original coordinates followed by multipliers) at which
    /// coordinate-dependent kinetic matrices are frozen.
    pub reference_point: Option<Vec<f64>>,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions { max_rounds: 16, zero_mode_tol: ZERO_MODE_TOL, reference_point: None }
    }
}

/// Substitutes `xi_index` from `constraint = 0` (affine in that variable)
/// and returns the Lagrangian on the remaining coordinates, with the kinetic
/// matrix pulled back and the potential and multiplier constraints rewritten.
pub fn eliminate_coordinate(
    l: &FirstOrderLagrangian,
    index: usize,
    constraint: &RationalFunction,
) -> Result<FirstOrderLagrangian, FjError> {
    let m = l.dim();
    if index >= m || constraint.nvars() != m {
        return Err(FjError::Dimension(format!("index {index} or constraint arity does not match dimension {m}")));
    }
    let name = l.labels[index].clone();
    let degree = constraint.numerator().degree_in(index);
    let value = solve_affine(constraint, index, false).ok_or_else(|| FjError::NotSolvable {
        variable: name.clone(),
        reason: if constraint.denominator().contains_var(index) {
            "it appears in the denominator".into()
        } else if degree == 0 {
            "the constraint does not involve it".into()
        } else {
            format!("degree {degree}, only affine dependence is solved")
        },
    })?;
    let psi: Vec<RationalFunction> = (0..m).map(|i| if i == index { value.clone() } else { var(m, i) }).collect();
    let k = pullback(&l.kinetic, &psi);
    let kinetic = k
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != index)
        .map(|(_, row)| {
            row.into_iter().enumerate().filter(|(j, _)| *j != index).map(|(_, e)| e.remove_var(index)).collect()
        })
        .collect();
    let potential = l.potential.substitute(index, &value).remove_var(index);
    let multipliers = l
        .multipliers
        .iter()
        .map(|t| MultiplierTerm {
            constraint: t.constraint.substitute(index, &value).remove_var(index),
            label: t.label.clone(),
        })
        .collect();
    let mut labels = l.labels.clone();
    labels.remove(index);
    FirstOrderLagrangian::new(labels, kinetic, potential, multipliers)
}

/// Runs the zero-mode elimination loop until the kinetic matrix is
/// invertible, then brings it to canonical form.
///
/// Multipliers join the coordinates as velocity-free variables, so they show
/// up as zero modes in the first round.
pub fn fj_reduce(l: &FirstOrderLagrangian, opts: &ReduceOptions) -> Result<ReducedSystem, FjError> {
    let n = l.dim();
    let k = l.multipliers.len();
    let m = n + k;
    let original_labels: Vec<String> =
        l.labels.iter().cloned().chain(l.multipliers.iter().map(|t| t.label.clone())).collect();
    let mut kinetic = vec![vec![RationalFunction::zero(m); m]; m];
    for i in 0..n {
        for j in 0..n {
            kinetic[i][j] = l.kinetic[i][j].extend_vars(k);
        }
    }
    let mut h = l.potential.extend_vars(k);
    for (r, t) in l.multipliers.iter().enumerate() {
        h = &h + &(&t.constraint.extend_vars(k) * &var(m, n + r));
    }
    let reference = match &opts.reference_point {
        Some(p) if p.len() == m => p.clone(),
        Some(p) => return Err(FjError::Dimension(format!("reference point has {} entries, expected {m}", p.len()))),
        None => sample_point(m, 0),
    };
    let mut chart = Chart {
        labels: original_labels.clone(),
        kinetic,
        h,
        projection: DMatrix::identity(m, m),
        embedding: (0..m).map(|i| var(m, i)).collect(),
        reference,
    };
    let mut log = Vec::new();
    let mut constraints = Vec::new();
    let mut local = false;
    let mut status = ReductionStatus::MaxRounds;
    let mut rounds = 0;

    'rounds: for round in 1..=opts.max_rounds {
        rounds = round;
        chart.check_antisymmetry()?;
        let round_local = !chart.is_constant();
        local |= round_local;
        let f = chart.kinetic_at_reference();
        let zm = zero_modes(&f, opts.zero_mode_tol);
        log.push(EliminationStep::ZeroModes {
            round,
            labels: chart.labels.clone(),
            count: zm.count(),
            singular_values: zm.singular_values.clone(),
            local: round_local,
        });

        if zm.count() == 0 {
            let dim = chart.dim();
            let t = darboux(&f, DarbouxLayout::Split)?;
            if (&t - DMatrix::<f64>::identity(dim, dim)).amax() > 1e-14 {
                let to: Vec<String> = (1..=dim).map(|i| format!("zeta{i}")).collect();
                log.push(EliminationStep::CoordinateChange {
                    round,
                    kind: "darboux".into(),
                    from: chart.labels.clone(),
                    to: to.clone(),
                    matrix: rows(&t),
                });
                chart.change(&t, to);
            }
            if round_local {
                let omega = canonical_omega(dim / 2);
                chart.kinetic = (0..dim)
                    .map(|i| (0..dim).map(|j| RationalFunction::constant(dim, omega[(i, j)])).collect())
                    .collect();
            }
            status = if local { ReductionStatus::LocalOnly } else { ReductionStatus::Complete };
            break;
        }

        let (a, new_labels, z_labels) = split_coordinates(&chart.labels, &zm, round);
        if (&a - DMatrix::<f64>::identity(a.nrows(), a.ncols())).amax() > 0.0 || new_labels != chart.labels {
            log.push(EliminationStep::CoordinateChange {
                round,
                kind: "zero_mode_split".into(),
                from: chart.labels.clone(),
                to: new_labels.clone(),
                matrix: rows(&a),
            });
            chart.change(&a, new_labels);
        }

        let mut pending = z_labels;
        while !pending.is_empty() {
            let mut acted = false;
            for zl in pending.clone() {
                let zi = chart.index_of(&zl);
                let eq = chart.h.derivative(zi);
                let grad_scale = 1.0 + chart.h.gradient().iter().map(|d| d.eval(&chart.reference).abs()).sum::<f64>();
                let negligible = if round_local {
                    eq.eval(&chart.reference).abs() <= 1e-8 * grad_scale
                } else {
                    eq.numerator().max_abs_coeff() <= 1e-12 * (1.0 + chart.h.numerator().max_abs_coeff())
                };
                if negligible {
                    let value = chart.reference[zi];
                    log.push(EliminationStep::GaugeDirection { round, variable: zl.clone(), fixed_value: value });
                    chart.eliminate(zi, &RationalFunction::constant(chart.dim(), value));
                    pending.retain(|p| p != &zl);
                    acted = true;
                    break;
                }
                if round_local {
                    continue;
                }
                let z_in_eq: Vec<String> = pending.iter().filter(|p| eq.contains_var(chart.index_of(p))).cloned().collect();
                if !z_in_eq.is_empty() {
                    let solved = z_in_eq.iter().find_map(|s| {
                        let si = chart.index_of(s);
                        solve_affine(&eq, si, true).map(|v| (s.clone(), si, v))
                    });
                    if let Some((s, si, v)) = solved {
                        log.push(EliminationStep::SolvedZeroMode {
                            round,
                            variable: s.clone(),
                            equation: eq.render(&chart.labels),
                            solution: v.render(&chart.labels),
                        });
                        chart.eliminate(si, &v);
                        pending.retain(|p| p != &s);
                        acted = true;
                        break;
                    }
                    continue;
                }
                // No zero-mode variable left in the equation: it constrains zeta.
                let candidates: Vec<usize> =
                    (0..chart.dim()).filter(|&j| !pending.contains(&chart.labels[j]) && eq.contains_var(j)).collect();
                let choice = candidates
                    .iter()
                    .find_map(|&j| solve_affine(&eq, j, true).map(|v| (j, v)))
                    .or_else(|| candidates.iter().find_map(|&j| solve_affine(&eq, j, false).map(|v| (j, v))));
                let Some((j, v)) = choice else {
                    let reason = format!("constraint {} is not affine in any coordinate", eq.render(&chart.labels));
                    log.push(EliminationStep::Stuck { round, reason: reason.clone() });
                    status = ReductionStatus::Stuck { reason };
                    break 'rounds;
                };
                constraints.push(FoundConstraint { round, field: chart.to_original(&eq) });
                log.push(EliminationStep::Constraint {
                    round,
                    constraint: eq.render(&chart.labels),
                    eliminated: chart.labels[j].clone(),
                    solution: v.render(&chart.labels),
                });
                chart.eliminate(j, &v);
                let zi = chart.index_of(&zl);
                log.push(EliminationStep::MultiplierDropped { round, variable: zl.clone() });
                let value = chart.reference[zi];
                chart.eliminate(zi, &RationalFunction::constant(chart.dim(), value));
                pending.retain(|p| p != &zl);
                acted = true;
                break;
            }
            if !acted {
                let reason = format!(
                    "zero-mode equations for {} are neither solvable nor constraints in the supported class",
                    pending.join(", ")
                );
                log.push(EliminationStep::Stuck { round, reason: reason.clone() });
                status = ReductionStatus::Stuck { reason };
                break 'rounds;
            }
        }
    }

    let kinetic = chart.kinetic_at_reference();
    let canonical_dim = numerical_rank(&kinetic, opts.zero_mode_tol);
    Ok(ReducedSystem {
        labels: chart.labels,
        canonical_dim,
        kinetic,
        constraints,
        reduced_hamiltonian: chart.h,
        elimination_log: log,
        status,
        projection: chart.projection,
        embedding: chart.embedding,
        original_labels,
        rounds,
    })
}

fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

/// Coordinates `(zeta, z)` with `xi = A (zeta, z)`: `zeta` runs along
/// coordinate axes chosen lowest index first, `z` along the zero modes.
fn split_coordinates(labels: &[String], zm: &ZeroModeBasis, round: usize) -> (DMatrix<f64>, Vec<String>, Vec<String>) {
    let m = labels.len();
    let r = zm.count();
    let zcols: Vec<DVector<f64>> = zm.modes.iter().map(|v| DVector::from_column_slice(v)).collect();
    let mut q: Vec<DVector<f64>> = zcols.clone();
    let mut selected = Vec::with_capacity(m - r);
    for k in 0..m {
        if selected.len() == m - r {
            break;
        }
        let mut e = DVector::zeros(m);
        e[k] = 1.0;
        let mut w = e;
        for _ in 0..2 {
            for b in &q {
                w -= b * b.dot(&w);
            }
        }
        let nrm = w.norm();
        if nrm > 1e-8 {
            q.push(w / nrm);
            selected.push(k);
        }
    }
    let mut a = DMatrix::zeros(m, m);
    let mut new_labels = Vec::with_capacity(m);
    for (c, &k) in selected.iter().enumerate() {
        a[(k, c)] = 1.0;
        let touched = zcols.iter().any(|z| z[k].abs() > 1e-14);
        new_labels.push(if touched { format!("{}'", labels[k]) } else { labels[k].clone() });
    }
    let mut z_labels = Vec::with_capacity(r);
    for (s, z) in zcols.iter().enumerate() {
        a.set_column(m - r + s, z);
        let axis = (0..m).find(|&k| (z[k].abs() - 1.0).abs() < 1e-14);
        let label = match axis {
            Some(k) if z.iter().enumerate().all(|(i, v)| i == k || *v == 0.0) => {
                if z[k] < 0.0 {
                    a.set_column(m - r + s, &(-z));
                }
                labels[k].clone()
            }
            _ => format!("z{round}_{}", s + 1),
        };
        z_labels.push(label.clone());
        new_labels.push(label);
    }
    (a, new_labels, z_labels)
}
