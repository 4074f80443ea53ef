//! Finite deterministic universes.
//!
//! An automaton is a total next-state map on `{0..n}`. Its evolution matrix
//! is unitary exactly when the map is a permutation. States whose forward
//! orbits merge are collected into equivalence classes, and the quotient
//! automaton on those classes evolves unitarily; its eigenphases give the
//! emergent Hamiltonian spectrum.
//!
//! States are 0-based internally. The text format and all displayed labels
//! are 1-based, matching the `|1), |2), ...` convention.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the entries of `U^dagger U - I`.
pub const UNITARITY_TOL: f64 = 1e-12;
/// Commutator norm below which two be-able candidates are treated as commuting.
pub const BEABLE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscreteError {
    #[error("automaton needs at least one state")]
    Empty,
    #[error("state {state} maps to {target}, outside 1..={n}")]
    TargetOutOfRange { state: usize, target: usize, n: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("state {0} has no successor")]
    MissingSuccessor(usize),
    #[error("state {state} has two successors ({first} and {second})")]
    DuplicateSuccessor { state: usize, first: usize, second: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("partition is not stable: class {class} is sent into classes {targets:?}")]
    UnstablePartition { class: usize, targets: Vec<usize> },
    #[error("quotient map is not injective (classes {0} and {1} share an image); partition is too fine, use equivalence_classes")]
    QuotientNotInjective(usize, usize),
    #[error("evolution matrix is not unitary (max |U^dag U - I| = {defect:e}); quotient by the equivalence classes first")]
    NotUnitary { defect: f64 },
    #[error("operator {index} has shape {rows}x{cols}, expected {n}x{n}")]
    OperatorShape { index: usize, rows: usize, cols: usize, n: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicAutomaton {
    next: Vec<usize>,
}

impl DeterministicAutomaton {
    pub fn new(next: Vec<usize>) -> Result<Self, DiscreteError> {
        let n = next.len();
        if n == 0 {
            return Err(DiscreteError::Empty);
        }
        if let Some((s, &t)) = next.iter().enumerate().find(|(_, &t)| t >= n) {
            return Err(DiscreteError::TargetOutOfRange { state: s + 1, target: t + 1, n });
        }
        Ok(DeterministicAutomaton { next })
    }

    /// The cycle `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn cycle(n: usize) -> Self {
        assert!(n > 0);
        DeterministicAutomaton { next: (0..n).map(|s| (s + 1) % n).collect() }
    }

    /// The four-state universe in which states 1 and 4 both lead to state 2.
    pub fn four_state_infoloss() -> Self {
        DeterministicAutomaton { next: vec![1, 2, 0, 1] }
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn next(&self, s: usize) -> usize {
        self.next[s]
    }

    pub fn next_map(&self) -> &[usize] {
        &self.next
    }

    /// `next` applied `k` times.
    pub fn iterate(&self, mut s: usize, k: usize) -> usize {
        for _ in 0..k {
            s = self.next[s];
        }
        s
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.n_states()];
        self.next.iter().all(|&t| !std::mem::replace(&mut seen[t], true))
    }

    /// Sorted cycle lengths, for permutation automata only.
    pub fn cycle_type(&self) -> Option<Vec<usize>> {
        if !self.is_injective() {
            return None;
        }
        let mut visited = vec![false; self.n_states()];
        let mut lengths = Vec::new();
        for s in 0..self.n_states() {
            if visited[s] {
                continue;
            }
            let mut len = 0;
            let mut c = s;
            while !visited[c] {
                visited[c] = true;
                c = self.next[c];
                len += 1;
            }
            lengths.push(len);
        }
        lengths.sort_unstable();
        Some(lengths)
    }

    /// Two permutation automata are isomorphic iff their cycle types agree.
    pub fn is_isomorphic_permutation(&self, other: &Self) -> bool {
        matches!((self.cycle_type(), other.cycle_type()), (Some(a), Some(b)) if a == b)
    }

    /// Parses `states: n` followed by `s -> t` lines (1-based). `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, DiscreteError> {
        let mut n: Option<usize> = None;
        let mut next: Vec<Option<usize>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| DiscreteError::Parse { line: line_no, msg };
            if let Some(rest) = line.strip_prefix("states:") {
                if n.is_some() {
                    return Err(perr("duplicate `states:` line".into()));
                }
                let v: usize = rest.trim().parse().map_err(|_| perr(format!("bad state count `{}`", rest.trim())))?;
                if v == 0 {
                    return Err(DiscreteError::Empty);
                }
                n = Some(v);
                next = vec![None; v];
                continue;
            }
            let Some(count) = n else {
                return Err(perr("transition before `states:` line".into()));
            };
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| perr(format!("expected `s -> t`, got `{line}`")))?;
            let s: usize = lhs.trim().parse().map_err(|_| perr(format!("bad state `{}`", lhs.trim())))?;
            let t: usize = rhs.trim().parse().map_err(|_| perr(format!("bad state `{}`", rhs.trim())))?;
            for v in [s, t] {
                if v == 0 || v > count {
                    return Err(perr(format!("state {v} outside 1..={count}")));
                }
            }
            if let Some(prev) = next[s - 1] {
                return Err(DiscreteError::DuplicateSuccessor { state: s, first: prev + 1, second: t });
            }
            next[s - 1] = Some(t - 1);
        }
        if n.is_none() {
            return Err(DiscreteError::Parse { line: 0, msg: "missing `states:` line".into() });
        }
        let next = next
            .into_iter()
            .enumerate()
            .map(|(s, t)| t.ok_or(DiscreteError::MissingSuccessor(s + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        DeterministicAutomaton::new(next)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("states: {}\n", self.n_states());
        for (a, &b) in self.next.iter().enumerate() {
            s.push_str(&format!("{} -> {}\n", a + 1, b + 1));
        }
        s
    }
}

/// Column-stochastic 0/1 matrix: column `j` has its single 1 in row `next(j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionMatrix {
    pub entries: DMatrix<Complex64>,
    pub dt: f64,
}

impl EvolutionMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `max |(U^dagger U - I)_ij|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        let g = self.entries.adjoint() * &self.entries - DMatrix::<Complex64>::identity(n, n);
        g.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_defect() <= UNITARITY_TOL
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries.row(i).iter().map(|z| z.re).sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.entries.column(j).iter().map(|z| z.re).sum()).collect()
    }

    /// Real parts as nested rows, for reports.
    pub fn real_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.entries.row(i).iter().map(|z| z.re).collect()).collect()
    }
}

/// Builds `U` with `U[i][j] = 1` iff `next(j) = i`.
///
/// # Panics
/// If `dt` is not a positive finite number.
pub fn transition_matrix(a: &DeterministicAutomaton, dt: f64) -> EvolutionMatrix {
    assert!(dt.is_finite() && dt > 0.0, "time step must be positive, got {dt}");
    let n = a.n_states();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        m[(a.next(j), j)] = Complex64::new(1.0, 0.0);
    }
    EvolutionMatrix { entries: m, dt }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePartition {
    classes: Vec<Vec<usize>>,
    class_of: Vec<usize>,
}

impl StatePartition {
    /// Validates that `classes` are non-empty, disjoint and cover `0..n`.
    /// Classes are re-ordered by smallest member and each class is sorted.
    pub fn new(mut classes: Vec<Vec<usize>>, n: usize) -> Result<Self, DiscreteError> {
        let mut class_of = vec![usize::MAX; n];
        for c in classes.iter_mut() {
            if c.is_empty() {
                return Err(DiscreteError::InvalidPartition("empty class".into()));
            }
            c.sort_unstable();
        }
        classes.sort();
        for (k, c) in classes.iter().enumerate() {
            for &s in c {
                if s >= n {
                    return Err(DiscreteError::InvalidPartition(format!("state {} out of range", s + 1)));
                }
                if class_of[s] != usize::MAX {
                    return Err(DiscreteError::InvalidPartition(format!("state {} in two classes", s + 1)));
                }
                class_of[s] = k;
            }
        }
        if let Some(s) = class_of.iter().position(|&c| c == usize::MAX) {
            return Err(DiscreteError::InvalidPartition(format!("state {} not covered", s + 1)));
        }
        Ok(StatePartition { classes, class_of })
    }

    pub fn singletons(n: usize) -> Self {
        StatePartition { classes: (0..n).map(|s| vec![s]).collect(), class_of: (0..n).collect() }
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn class_of(&self, s: usize) -> usize {
        self.class_of[s]
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_all_singletons(&self) -> bool {
        self.classes.iter().all(|c| c.len() == 1)
    }

    /// Classes with 1-based labels.
    pub fn labels_one_based(&self) -> Vec<Vec<usize>> {
        self.classes.iter().map(|c| c.iter().map(|s| s + 1).collect()).collect()
    }

    /// Checks that each class is mapped into a single class.
    pub fn check_stable(&self, a: &DeterministicAutomaton) -> Result<(), DiscreteError> {
        for (k, c) in self.classes.iter().enumerate() {
            let mut targets: Vec<usize> = c.iter().map(|&s| self.class_of[a.next(s)]).collect();
            targets.sort_unstable();
            targets.dedup();
            if targets.len() > 1 {
                return Err(DiscreteError::UnstablePartition { class: k, targets });
            }
        }
        Ok(())
    }
}

impl fmt::Display for StatePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .labels_one_based()
            .iter()
            .map(|c| format!("{{{}}}", c.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")))
            .collect();
        write!(f, "{}", parts.join(", "))
    }
}

/// Groups states whose forward orbits have merged after `n` steps.
///
/// In a finite functional graph two orbits that ever meet have met within
/// `n` steps, and stay together afterwards, so grouping by `next^n(s)` is
/// exact.
pub fn equivalence_classes(a: &DeterministicAutomaton) -> StatePartition {
    let n = a.n_states();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in 0..n {
        groups.entry(a.iterate(s, n)).or_default().push(s);
    }
    StatePartition::new(groups.into_values().collect(), n).expect("grouping is a partition")
}

/// The automaton induced on classes. Rejects unstable partitions and
/// partitions on which the induced map is not a permutation.
pub fn quotient(a: &DeterministicAutomaton, p: &StatePartition) -> Result<DeterministicAutomaton, DiscreteError> {
    if p.class_of.len() != a.n_states() {
        return Err(DiscreteError::InvalidPartition(format!(
            "partition covers {} states, automaton has {}",
            p.class_of.len(),
            a.n_states()
        )));
    }
    p.check_stable(a)?;
    let next: Vec<usize> = p.classes.iter().map(|c| p.class_of[a.next(c[0])]).collect();
    let mut preimage = vec![usize::MAX; next.len()];
    for (k, &t) in next.iter().enumerate() {
        if preimage[t] != usize::MAX {
            return Err(DiscreteError::QuotientNotInjective(preimage[t], k));
        }
        preimage[t] = k;
    }
    DeterministicAutomaton::new(next)
}

/// How eigenphases of `U` are turned into energies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// `U = exp(-i H dt)`, so `E = -phase / dt`.
    #[default]
    Physics,
    /// `E = phase / dt`.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSpectrum {
    /// Arguments of the eigenvalues on the principal branch `(-pi, pi]`, ascending.
    pub eigenphases: Vec<f64>,
    /// One energy per eigenphase, in the same order.
    pub hamiltonian_eigenvalues: Vec<f64>,
    pub dt: f64,
    pub convention: PhaseConvention,
}

impl DiscreteSpectrum {
    /// CSV with header `index,eigenphase,energy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenphase,energy\n");
        for (k, (p, e)) in self.eigenphases.iter().zip(&self.hamiltonian_eigenvalues).enumerate() {
            s.push_str(&format!("{k},{p},{e}\n"));
        }
        s
    }
}

/// Maps an angle to `(-pi, pi]`, sending values within `1e-12` of `-pi` to `pi`.
pub fn principal_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI + 1e-12 {
        p = PI;
    }
    p
}

/// Eigenvalues of a normal matrix via its Hermitian and anti-Hermitian parts.
///
/// Francis QR stalls on cyclic permutation matrices, whose spectra are
/// symmetric. Instead the Hermitian part `(U + U^dag)/2` is diagonalised;
/// within each of its (possibly degenerate) eigenspaces the Hermitian
/// matrix `(U - U^dag)/2i` is diagonalised, which separates `e^{i phi}`
/// from `e^{-i phi}`. Each eigenvalue is then the Rayleigh quotient of its
/// eigenvector.
pub fn unitary_eigenvalues(u: &DMatrix<Complex64>) -> Vec<Complex64> {
    let n = u.nrows();
    let ud = u.adjoint();
    let re_part = (u + &ud).map(|z| z * 0.5);
    let im_part = (u - &ud).map(|z| z * Complex64::new(0.0, -0.5));
    let eig = re_part.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] < 1e-8 {
            end += 1;
        }
        let cols: Vec<_> = order[start..end].iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
        let basis = DMatrix::from_columns(&cols);
        let local = basis.adjoint() * &im_part * &basis;
        let local = (&local + local.adjoint()).map(|z| z * 0.5);
        let sub = local.symmetric_eigen();
        for k in 0..sub.eigenvalues.len() {
            let x = &basis * sub.eigenvectors.column(k);
            let lambda = (x.adjoint() * u * &x)[(0, 0)] / x.norm_squared();
            out.push(lambda);
        }
        start = end;
    }
    out
}

/// Eigenphases of a unitary evolution matrix.
pub fn spectrum(u: &EvolutionMatrix, convention: PhaseConvention) -> Result<DiscreteSpectrum, DiscreteError> {
    let defect = u.unitarity_defect();
    if defect > UNITARITY_TOL {
        return Err(DiscreteError::NotUnitary { defect });
    }
    let mut phases: Vec<f64> = unitary_eigenvalues(&u.entries).iter().map(|z| principal_phase(z.arg())).collect();
    phases.sort_by(|a, b| a.total_cmp(b));
    let energies = phases
        .iter()
        .map(|p| match convention {
            PhaseConvention::Physics => -p / u.dt + 0.0,
            PhaseConvention::Direct => p / u.dt + 0.0,
        })
        .collect();
    Ok(DiscreteSpectrum { eigenphases: phases, hamiltonian_eigenvalues: energies, dt: u.dt, convention })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeableReport {
    pub commuting: bool,
    /// Largest spectral norm of `[O_i(t), O_j(t')]` over all pairs and times.
    pub max_violation: f64,
}

/// Checks `[O_i(t), O_j(t')] = 0` for `t, t'` in `0..=t_max` with
/// `O(t) = U^{-t} O U^t`.
pub fn beable_check(
    u: &EvolutionMatrix,
    ops: &[DMatrix<Complex64>],
    t_max: usize,
) -> Result<BeableReport, DiscreteError> {
    let defect = u.unitarity_defect();
    if defect > UNITARITY_TOL {
        return Err(DiscreteError::NotUnitary { defect });
    }
    let n = u.dim();
    for (index, o) in ops.iter().enumerate() {
        if o.nrows() != n || o.ncols() != n {
            return Err(DiscreteError::OperatorShape { index, rows: o.nrows(), cols: o.ncols(), n });
        }
    }
    let mut powers = vec![DMatrix::<Complex64>::identity(n, n)];
    for t in 1..=t_max {
        powers.push(&powers[t - 1] * &u.entries);
    }
    let evolved: Vec<DMatrix<Complex64>> = ops
        .iter()
        .flat_map(|o| powers.iter().map(move |p| p.adjoint() * o * p))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..evolved.len() {
        for j in (i + 1)..evolved.len() {
            let c = &evolved[i] * &evolved[j] - &evolved[j] * &evolved[i];
            worst = worst.max(spectral_norm(&c));
        }
    }
    Ok(BeableReport { commuting: worst < BEABLE_TOL, max_violation: worst })
}

fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.iter().all(|z| z.norm() == 0.0) {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn three_cycle_matrix() {
        let u = transition_matrix(&DeterministicAutomaton::cycle(3), 1.0);
        assert_eq!(u.real_rows(), vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert!(u.is_unitary());
    }

    #[test]
    fn identity_map() {
        let a = DeterministicAutomaton::new(vec![0, 1]).unwrap();
        let u = transition_matrix(&a, 1.0);
        assert_eq!(u.real_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = spectrum(&u, PhaseConvention::Physics).unwrap();
        assert_eq!(s.eigenphases, vec![0.0, 0.0]);
    }

    #[test]
    fn four_state_matrix_is_not_unitary() {
        let u = transition_matrix(&DeterministicAutomaton::four_state_infoloss(), 1.0);
        assert_eq!(
            u.real_rows(),
            vec![
                vec![0.0, 0.0, 1.0, 0.0],
                vec![1.0, 0.0, 0.0, 1.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0]
            ]
        );
        assert!(!u.is_unitary());
        assert!(matches!(spectrum(&u, PhaseConvention::Physics), Err(DiscreteError::NotUnitary { .. })));
    }

    #[test]
    fn classes_of_edge_cases() {
        let p = equivalence_classes(&DeterministicAutomaton::four_state_infoloss());
        assert_eq!(p.labels_one_based(), vec![vec![1, 4], vec![2], vec![3]]);
        assert_eq!(p.to_string(), "{1,4}, {2}, {3}");

        let perm = DeterministicAutomaton::new(vec![2, 0, 1, 4, 3]).unwrap();
        assert!(equivalence_classes(&perm).is_all_singletons());

        let constant = DeterministicAutomaton::new(vec![0; 5]).unwrap();
        assert_eq!(equivalence_classes(&constant).n_classes(), 1);
    }

    #[test]
    fn quotient_of_four_state_universe_is_the_clock() {
        let a = DeterministicAutomaton::four_state_infoloss();
        let q = quotient(&a, &equivalence_classes(&a)).unwrap();
        assert_eq!(q, DeterministicAutomaton::cycle(3));
        assert!(transition_matrix(&q, 1.0).is_unitary());
    }

    #[test]
    fn quotient_rejections() {
        let a = DeterministicAutomaton::four_state_infoloss();
        // {1,2},{3},{4}: 1->2 and 2->3 land in different classes.
        let bad = StatePartition::new(vec![vec![0, 1], vec![2], vec![3]], 4).unwrap();
        assert!(matches!(quotient(&a, &bad), Err(DiscreteError::UnstablePartition { .. })));
        let fine = StatePartition::singletons(4);
        assert!(matches!(quotient(&a, &fine), Err(DiscreteError::QuotientNotInjective(..))));
    }

    #[test]
    fn permutation_quotient_is_isomorphic() {
        let perm = DeterministicAutomaton::new(vec![1, 2, 0, 4, 3]).unwrap();
        let q = quotient(&perm, &StatePartition::singletons(5)).unwrap();
        assert!(q.is_isomorphic_permutation(&perm));
        assert_eq!(q.cycle_type(), Some(vec![2, 3]));
    }

    #[test]
    fn clock_spectrum_and_conventions() {
        let u = transition_matrix(&DeterministicAutomaton::cycle(3), 1.0);
        let s = spectrum(&u, PhaseConvention::Physics).unwrap();
        let want = [-2.0 * PI / 3.0, 0.0, 2.0 * PI / 3.0];
        for (a, b) in s.eigenphases.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // U = exp(-iH): energies are minus the phases.
        assert!((s.hamiltonian_eigenvalues[0] - 2.0 * PI / 3.0).abs() < 1e-12);
        let d = spectrum(&u, PhaseConvention::Direct).unwrap();
        assert!((d.hamiltonian_eigenvalues[0] + 2.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn four_cycle_spectrum_against_fourier_vectors() {
        let u = transition_matrix(&DeterministicAutomaton::cycle(4), 1.0);
        // Oracle: v_k = (w^{-0 k}, w^{-1 k}, ...) with w = i satisfies U v_k = w^k v_k.
        for k in 0..4 {
            let lambda = Complex64::from_polar(1.0, PI / 2.0 * k as f64);
            let v = nalgebra::DVector::from_iterator(4, (0..4).map(|s| lambda.powu(s as u32).inv()));
            let r = &u.entries * &v - v.map(|z| z * lambda);
            assert!(r.norm() < 1e-14);
        }
        let s = spectrum(&u, PhaseConvention::Physics).unwrap();
        let want = [-PI / 2.0, 0.0, PI / 2.0, PI];
        for (a, b) in s.eigenphases.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn principal_branch_folds_minus_pi() {
        assert_eq!(principal_phase(-PI), PI);
        assert!((principal_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((principal_phase(-0.5) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn beables_of_the_clock() {
        let u = transition_matrix(&DeterministicAutomaton::cycle(3), 1.0);
        let projectors: Vec<DMatrix<Complex64>> = (0..3)
            .map(|k| {
                let mut m = DMatrix::zeros(3, 3);
                m[(k, k)] = c(1.0, 0.0);
                m
            })
            .collect();
        let r = beable_check(&u, &projectors, 5).unwrap();
        assert!(r.commuting);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn single_operator_at_one_time_commutes() {
        let u = transition_matrix(&DeterministicAutomaton::cycle(2), 1.0);
        let sx = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        assert!(beable_check(&u, &[sx], 0).unwrap().commuting);
    }

    #[test]
    fn pauli_pair_violates_by_two() {
        let u = transition_matrix(&DeterministicAutomaton::cycle(2), 1.0);
        let sx = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        let sz = DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
        let r = beable_check(&u, &[sx, sz], 1).unwrap();
        assert!(!r.commuting);
        assert!((r.max_violation - 2.0).abs() < 1e-12);
    }

    #[test]
    fn text_format_roundtrip_and_errors() {
        let a = DeterministicAutomaton::parse("# fig 2\nstates: 4\n1 -> 2\n2 -> 3\n3 -> 1\n4 -> 2\n").unwrap();
        assert_eq!(a, DeterministicAutomaton::four_state_infoloss());
        assert_eq!(DeterministicAutomaton::parse(&a.to_text()).unwrap(), a);
        assert_eq!(
            DeterministicAutomaton::parse("states: 2\n1 -> 2\n"),
            Err(DiscreteError::MissingSuccessor(2))
        );
        assert!(matches!(
            DeterministicAutomaton::parse("states: 2\n1 -> 3\n2 -> 1\n"),
            Err(DiscreteError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            DeterministicAutomaton::parse("states: 2\n1 -> 2\n1 -> 1\n2 -> 1"),
            Err(DiscreteError::DuplicateSuccessor { state: 1, .. })
        ));
    }

    fn functional_graph(max_n: usize) -> impl Strategy<Value = DeterministicAutomaton> {
        (1..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(0..n, n).prop_map(|next| DeterministicAutomaton::new(next).unwrap())
        })
    }

    /// Brute force: s ~ s' iff next^k(s) = next^k(s') for some k <= n.
    fn brute_equivalent(a: &DeterministicAutomaton, s: usize, t: usize) -> bool {
        (0..=a.n_states()).any(|k| a.iterate(s, k) == a.iterate(t, k))
    }

    proptest! {
        #[test]
        fn one_entry_per_column_and_unitarity_iff_injective(a in functional_graph(64)) {
            let u = transition_matrix(&a, 1.0);
            prop_assert!(u.column_sums().iter().all(|&c| c == 1.0));
            prop_assert_eq!(u.is_unitary(), a.is_injective());
        }

        #[test]
        fn classes_match_brute_force(a in functional_graph(12)) {
            let p = equivalence_classes(&a);
            for s in 0..a.n_states() {
                for t in 0..a.n_states() {
                    prop_assert_eq!(p.class_of(s) == p.class_of(t), brute_equivalent(&a, s, t));
                }
            }
        }

        #[test]
        fn quotient_is_bijective_and_idempotent(a in functional_graph(16)) {
            let p = equivalence_classes(&a);
            let q = quotient(&a, &p).unwrap();
            // Brute-force enumeration of class images.
            let mut hit = vec![0usize; p.n_classes()];
            for c in p.classes() {
                let images: std::collections::BTreeSet<usize> = c.iter().map(|&s| p.class_of(a.next(s))).collect();
                prop_assert_eq!(images.len(), 1);
                hit[*images.iter().next().unwrap()] += 1;
            }
            prop_assert!(hit.iter().all(|&h| h == 1));
            prop_assert!(q.is_injective());
            prop_assert!(transition_matrix(&q, 1.0).is_unitary());
            prop_assert!(equivalence_classes(&q).is_all_singletons());
        }

        #[test]
        fn quotient_matrix_is_the_class_summed_matrix(a in functional_graph(16)) {
            let p = equivalence_classes(&a);
            let q = transition_matrix(&quotient(&a, &p).unwrap(), 1.0);
            let u = transition_matrix(&a, 1.0);
            let m = p.n_classes();
            for ci in 0..m {
                for cj in 0..m {
                    let block: f64 = p.classes()[ci].iter()
                        .flat_map(|&i| p.classes()[cj].iter().map(move |&j| (i, j)))
                        .map(|(i, j)| u.entries[(i, j)].re)
                        .sum();
                    // Every member of a class is sent to the same class, so the block
                    // sum is the class size or zero; duplicates collapse to one.
                    let collapsed = if block > 0.0 { 1.0 } else { 0.0 };
                    prop_assert_eq!(q.entries[(ci, cj)].re, collapsed);
                }
            }
        }

        #[test]
        fn cycle_spectrum_is_roots_of_unity(n in 1usize..24) {
            let u = transition_matrix(&DeterministicAutomaton::cycle(n), 1.0);
            let s = spectrum(&u, PhaseConvention::Physics).unwrap();
            let mut want: Vec<f64> = (0..n).map(|k| principal_phase(2.0 * PI * k as f64 / n as f64)).collect();
            want.sort_by(|a, b| a.total_cmp(b));
            for (a, b) in s.eigenphases.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-12, "n={} {} vs {}", n, a, b);
            }
        }
    }
}
