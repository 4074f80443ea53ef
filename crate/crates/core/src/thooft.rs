//! Continuous-time systems with Hamiltonian `H = p_a f^a(q)`.
//!
//! The configuration variables obey `q' = f(q)` on their own, so they are
//! be-ables; the momenta follow `p_b' = -p_a df^a/dq^b`. Conserved,
//! momentum-independent charges `C^i(q)` give a positive function
//! `rho = a_i C^i` that splits `H = H+ - H-` into non-negative parts.
//! Imposing `H- = 0` on a closed orbit of period `T` selects
//! `rho T = 2 pi n`, and the orbit carries the ladder `E_n = 2 pi n / T`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{self, OdeError, OdeOptions, OdeStats};
use crate::poly::Polynomial;

/// Default relative tolerance of the integrator.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default closed-orbit detection tolerance on `|q(T) - q(0)|`.
pub const DEFAULT_RETURN_DELTA: f64 = 1e-8;
/// Largest admissible `|{C, H}|` for a registered charge on the sample grid.
pub const CHARGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThooftError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("charge {index} is not conserved: |{{C, H}}| = {violation:e} at q = {at:?}")]
    ChargeNotConserved { index: usize, violation: f64, at: Vec<f64> },
    #[error("rho = {rho:e} <= 0 at q = {at:?}; the splitting is singular there")]
    NonPositiveRho { rho: f64, at: Vec<f64> },
    #[error("splitting identity violated: {0}")]
    SplitIdentity(String),
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("no closed orbit: {0}")]
    Aperiodic(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A vector field `q -> f(q)` on `R^N`.
pub trait Flow: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, q: &[f64], out: &mut [f64]);
    /// `out[(a, b)] = df^a / dq^b`. Defaults to central differences.
    fn jacobian(&self, q: &[f64], out: &mut DMatrix<f64>) {
        let n = self.dim();
        let mut x = q.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for b in 0..n {
            let h = 1e-6 * (1.0 + q[b].abs());
            x[b] = q[b] + h;
            self.eval(&x, &mut fp);
            x[b] = q[b] - h;
            self.eval(&x, &mut fm);
            x[b] = q[b];
            for a in 0..n {
                out[(a, b)] = (fp[a] - fm[a]) / (2.0 * h);
            }
        }
    }
}

/// The built-in flow families plus an escape hatch for arbitrary flows.
#[derive(Clone, Debug)]
pub enum FlowField {
    Zero { dim: usize },
    /// `f(q) = A q`.
    Linear { matrix: DMatrix<f64> },
    /// `f(q) = omega (q2, -q1)`.
    Rotation { omega: f64 },
    Polynomial { components: Vec<Polynomial>, jacobian: Vec<Vec<Polynomial>> },
    Custom(Arc<dyn Flow>),
}

impl FlowField {
    pub fn polynomial(components: Vec<Polynomial>) -> Result<Self, ThooftError> {
        let n = components.len();
        if n == 0 || components.iter().any(|c| c.nvars() != n) {
            return Err(ThooftError::Dimension(format!(
                "polynomial flow needs {n} components in {n} variables"
            )));
        }
        let jacobian = components.iter().map(|c| c.gradient()).collect();
        Ok(FlowField::Polynomial { components, jacobian })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Result<Self, ThooftError> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(ThooftError::Dimension("linear flow matrix must be square and non-empty".into()));
        }
        Ok(FlowField::Linear { matrix })
    }

    /// Trace of the Jacobian.
    pub fn divergence(&self, q: &[f64]) -> f64 {
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        self.jacobian(q, &mut j);
        j.trace()
    }
}

impl Flow for FlowField {
    fn dim(&self) -> usize {
        match self {
            FlowField::Zero { dim } => *dim,
            FlowField::Linear { matrix } => matrix.nrows(),
            FlowField::Rotation { .. } => 2,
            FlowField::Polynomial { components, .. } => components.len(),
            FlowField::Custom(f) => f.dim(),
        }
    }

    fn eval(&self, q: &[f64], out: &mut [f64]) {
        match self {
            FlowField::Zero { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            FlowField::Linear { matrix } => {
                for (a, o) in out.iter_mut().enumerate() {
                    *o = (0..q.len()).map(|b| matrix[(a, b)] * q[b]).sum();
                }
            }
            FlowField::Rotation { omega } => {
                out[0] = omega * q[1];
                out[1] = -omega * q[0];
            }
            FlowField::Polynomial { components, .. } => {
                for (o, c) in out.iter_mut().zip(components) {
                    *o = c.eval(q);
                }
            }
            FlowField::Custom(f) => f.eval(q, out),
        }
    }

    fn jacobian(&self, q: &[f64], out: &mut DMatrix<f64>) {
        match self {
            FlowField::Zero { .. } => out.fill(0.0),
            FlowField::Linear { matrix } => out.copy_from(matrix),
            FlowField::Rotation { omega } => {
                out[(0, 0)] = 0.0;
                out[(0, 1)] = *omega;
                out[(1, 0)] = -omega;
                out[(1, 1)] = 0.0;
            }
            FlowField::Polynomial { jacobian, .. } => {
                for (a, row) in jacobian.iter().enumerate() {
                    for (b, d) in row.iter().enumerate() {
                        out[(a, b)] = d.eval(q);
                    }
                }
            }
            FlowField::Custom(f) => f.jacobian(q, out),
        }
    }
}

/// Axis-aligned sampling box in phase space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBox {
    pub q: Vec<(f64, f64)>,
    pub p: Vec<(f64, f64)>,
}

impl PhaseBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        PhaseBox { q: vec![(-half_width, half_width); dim], p: vec![(-half_width, half_width); dim] }
    }

    /// Cell-centred grid with `per_dim_q` points per q axis and `per_dim_p`
    /// per p axis.
    pub fn grid(&self, per_dim_q: usize, per_dim_p: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let qs = cell_centres(&self.q, per_dim_q);
        let ps = cell_centres(&self.p, per_dim_p);
        let mut out = Vec::with_capacity(qs.len() * ps.len());
        for q in &qs {
            for p in &ps {
                out.push((q.clone(), p.clone()));
            }
        }
        out
    }

    /// Cell-centred grid of configuration points only.
    pub fn q_grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        cell_centres(&self.q, per_dim)
    }
}

fn cell_centres(bounds: &[(f64, f64)], k: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for &(lo, hi) in bounds {
        let h = (hi - lo) / k as f64;
        let mut next = Vec::with_capacity(pts.len() * k);
        for p in &pts {
            for i in 0..k {
                let mut v = p.clone();
                v.push(lo + (i as f64 + 0.5) * h);
                next.push(v);
            }
        }
        pts = next;
    }
    pts
}

/// A 't Hooft system: flow, conserved charges, and the box on which the
/// charges were verified.
#[derive(Clone, Debug)]
pub struct THooftSystem {
    pub name: String,
    flow: FlowField,
    charges: Vec<Polynomial>,
    charge_gradients: Vec<Vec<Polynomial>>,
    domain: PhaseBox,
}

impl THooftSystem {
    /// Builds a system and verifies `|{C^i, H}| < CHARGE_TOL` on a grid over
    /// `domain`.
    pub fn new(
        name: impl Into<String>,
        flow: FlowField,
        charges: Vec<Polynomial>,
        domain: PhaseBox,
    ) -> Result<Self, ThooftError> {
        let n = flow.dim();
        if let Some((i, c)) = charges.iter().enumerate().find(|(_, c)| c.nvars() != n) {
            return Err(ThooftError::Dimension(format!(
                "charge {i} has {} variables, flow has dimension {n}",
                c.nvars()
            )));
        }
        if domain.q.len() != n || domain.p.len() != n {
            return Err(ThooftError::Dimension(format!("domain box must have {n} q and {n} p ranges")));
        }
        let charge_gradients = charges.iter().map(|c| c.gradient()).collect();
        let sys = THooftSystem { name: name.into(), flow, charges, charge_gradients, domain };
        sys.verify_charges()?;
        Ok(sys)
    }

    pub fn zero(dim: usize) -> Self {
        THooftSystem::new("zero", FlowField::Zero { dim }, vec![], PhaseBox::cube(dim, 1.0))
            .expect("zero flow")
    }

    /// `f = omega (q2, -q1)` with charge `q1^2 + q2^2`.
    pub fn rotation(omega: f64) -> Self {
        THooftSystem::new(
            format!("rotation(omega={omega})"),
            FlowField::Rotation { omega },
            vec![radius_squared(2)],
            PhaseBox::cube(2, 1.5),
        )
        .expect("rotation conserves the radius")
    }

    /// `f = (1 + q1^2 + q2^2) (q2, -q1)`: a rotation whose angular velocity
    /// grows with the radius, so the period depends on the orbit.
    pub fn twisted_rotation() -> Self {
        let n = 2;
        let r2 = radius_squared(2);
        let speed = &Polynomial::constant(n, 1.0) + &r2;
        let f1 = &speed * &Polynomial::var(n, 1);
        let f2 = &(&speed * &Polynomial::var(n, 0)).scale(-1.0) + &Polynomial::zero(n);
        THooftSystem::new(
            "twisted_rotation",
            FlowField::polynomial(vec![f1, f2]).expect("two components"),
            vec![r2],
            PhaseBox::cube(2, 1.5),
        )
        .expect("twisted rotation conserves the radius")
    }

    /// Rotation about the third axis in three dimensions, with charges
    /// `q1^2 + q2^2` and `q3^2`.
    pub fn axial_rotation_3d(omega: f64) -> Self {
        let n = 3;
        let f1 = Polynomial::var(n, 1).scale(omega);
        let f2 = Polynomial::var(n, 0).scale(-omega);
        let f3 = Polynomial::zero(n);
        let c1 = &Polynomial::var(n, 0).powi(2) + &Polynomial::var(n, 1).powi(2);
        let c2 = Polynomial::var(n, 2).powi(2);
        THooftSystem::new(
            format!("axial_rotation_3d(omega={omega})"),
            FlowField::polynomial(vec![f1, f2, f3]).expect("three components"),
            vec![c1, c2],
            PhaseBox::cube(3, 1.5),
        )
        .expect("axial rotation conserves both charges")
    }

    /// `f(q) = A q` with no registered charges.
    pub fn linear(matrix: DMatrix<f64>) -> Result<Self, ThooftError> {
        let n = matrix.nrows();
        THooftSystem::new("linear", FlowField::linear(matrix)?, vec![], PhaseBox::cube(n, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn flow(&self) -> &FlowField {
        &self.flow
    }

    pub fn charges(&self) -> &[Polynomial] {
        &self.charges
    }

    pub fn domain(&self) -> &PhaseBox {
        &self.domain
    }

    /// Allocation-free `f(q)`.
    pub fn flow_eval(&self, q: &[f64], out: &mut [f64]) {
        self.flow.eval(q, out);
    }

    pub fn f(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.flow.eval(q, &mut out);
        out
    }

    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        self.flow.jacobian(q, &mut j);
        j
    }

    /// `H = p . f(q)`.
    pub fn hamiltonian(&self, q: &[f64], p: &[f64]) -> f64 {
        self.f(q).iter().zip(p).map(|(a, b)| a * b).sum()
    }

    /// `(dH/dq, dH/dp)`.
    pub fn hamiltonian_gradient(&self, q: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let j = self.jacobian(q);
        let n = self.dim();
        let dq = (0..n).map(|b| (0..n).map(|a| p[a] * j[(a, b)]).sum()).collect();
        (dq, self.f(q))
    }

    pub fn charge(&self, i: usize, q: &[f64]) -> f64 {
        self.charges[i].eval(q)
    }

    pub fn charge_gradient(&self, i: usize, q: &[f64]) -> Vec<f64> {
        self.charge_gradients[i].iter().map(|d| d.eval(q)).collect()
    }

    /// `{C^i, H} = grad C^i . f` for a momentum-independent charge.
    pub fn charge_bracket(&self, i: usize, q: &[f64]) -> f64 {
        self.charge_gradient(i, q).iter().zip(self.f(q)).map(|(a, b)| a * b).sum()
    }

    fn verify_charges(&self) -> Result<(), ThooftError> {
        for q in self.domain.q_grid(6) {
            for i in 0..self.charges.len() {
                let v = self.charge_bracket(i, &q);
                if v.abs() >= CHARGE_TOL {
                    return Err(ThooftError::ChargeNotConserved { index: i, violation: v.abs(), at: q });
                }
            }
        }
        Ok(())
    }
}

fn radius_squared(n: usize) -> Polynomial {
    (0..n).fold(Polynomial::zero(n), |acc, i| &acc + &Polynomial::var(n, i).powi(2))
}

/// Time-stamped phase-space samples with the linearised flow attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    /// `dq(t_final) / dq(0)`, row `a` column `b`.
    pub monodromy: Vec<Vec<f64>>,
    pub tol: f64,
    pub stats: OdeStats,
}

impl Trajectory {
    pub fn t_final(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn q_final(&self) -> &[f64] {
        self.q.last().expect("trajectory has at least one sample")
    }

    pub fn p_final(&self) -> &[f64] {
        self.p.last().expect("trajectory has at least one sample")
    }

    pub fn monodromy_matrix(&self) -> DMatrix<f64> {
        let n = self.monodromy.len();
        DMatrix::from_fn(n, n, |a, b| self.monodromy[a][b])
    }

    /// CSV with header `t,q1..qN,p1..pN`.
    pub fn to_csv(&self) -> String {
        let n = self.q.first().map(Vec::len).unwrap_or(0);
        let mut s = String::from("t");
        for a in 1..=n {
            s.push_str(&format!(",q{a}"));
        }
        for a in 1..=n {
            s.push_str(&format!(",p{a}"));
        }
        s.push('\n');
        for ((t, q), p) in self.times.iter().zip(&self.q).zip(&self.p) {
            s.push_str(&t.to_string());
            for v in q.iter().chain(p) {
                s.push(',');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }
}

fn coupled_rhs(sys: &THooftSystem) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
    let n = sys.dim();
    let mut j = DMatrix::zeros(n, n);
    move |_, y, dy| {
        let (q, rest) = y.split_at(n);
        let (p, phi) = rest.split_at(n);
        sys.flow.eval(q, &mut dy[..n]);
        sys.flow.jacobian(q, &mut j);
        for b in 0..n {
            dy[n + b] = -(0..n).map(|a| p[a] * j[(a, b)]).sum::<f64>();
        }
        for a in 0..n {
            for b in 0..n {
                dy[2 * n + a * n + b] = (0..n).map(|c| j[(a, c)] * phi[c * n + b]).sum();
            }
        }
    }
}

fn initial_state(sys: &THooftSystem, q0: &[f64], p0: &[f64]) -> Result<Vec<f64>, ThooftError> {
    let n = sys.dim();
    if q0.len() != n || p0.len() != n {
        return Err(ThooftError::Dimension(format!("initial point must have {n} q and {n} p components")));
    }
    let mut y = Vec::with_capacity(2 * n + n * n);
    y.extend_from_slice(q0);
    y.extend_from_slice(p0);
    for a in 0..n {
        for b in 0..n {
            y.push(if a == b { 1.0 } else { 0.0 });
        }
    }
    Ok(y)
}

fn split_state(n: usize, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (y[..n].to_vec(), y[n..2 * n].to_vec())
}

fn unpack_monodromy(n: usize, y: &[f64]) -> Vec<Vec<f64>> {
    (0..n).map(|a| y[2 * n + a * n..2 * n + (a + 1) * n].to_vec()).collect()
}

fn check_tol(tol: f64) -> Result<(), ThooftError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(ThooftError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Integrates `q' = f(q)`, `p_b' = -p_a df^a/dq^b` together with the
/// variational equation `Phi' = (df/dq) Phi`, recording every accepted step.
pub fn integrate(
    sys: &THooftSystem,
    q0: &[f64],
    p0: &[f64],
    t_final: f64,
    tol: f64,
) -> Result<Trajectory, ThooftError> {
    check_tol(tol)?;
    let n = sys.dim();
    let y0 = initial_state(sys, q0, p0)?;
    let mut times = Vec::new();
    let mut qs = Vec::new();
    let mut ps = Vec::new();
    let (end, stats) = ode::integrate(coupled_rhs(sys), 0.0, &y0, &[t_final], &OdeOptions::with_tol(tol), |t, y| {
        times.push(t);
        let (q, p) = split_state(n, y);
        qs.push(q);
        ps.push(p);
    })?;
    let yf = end.last().cloned().unwrap_or(y0);
    Ok(Trajectory { times, q: qs, p: ps, monodromy: unpack_monodromy(n, &yf), tol, stats })
}

/// Like [`integrate`] but records samples only at the requested times
/// (increasing, starting after 0). The initial point is always included.
pub fn integrate_at(
    sys: &THooftSystem,
    q0: &[f64],
    p0: &[f64],
    times: &[f64],
    tol: f64,
) -> Result<Trajectory, ThooftError> {
    check_tol(tol)?;
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t <= 0.0) {
        return Err(ThooftError::InvalidArgument("sample times must be positive and increasing".into()));
    }
    let n = sys.dim();
    let y0 = initial_state(sys, q0, p0)?;
    let (ys, stats) = ode::integrate(coupled_rhs(sys), 0.0, &y0, times, &OdeOptions::with_tol(tol), |_, _| {})?;
    let mut out_t = vec![0.0];
    let mut qs = vec![q0.to_vec()];
    let mut ps = vec![p0.to_vec()];
    for (t, y) in times.iter().zip(&ys) {
        out_t.push(*t);
        let (q, p) = split_state(n, y);
        qs.push(q);
        ps.push(p);
    }
    let yf = ys.last().cloned().unwrap_or(y0);
    Ok(Trajectory { times: out_t, q: qs, p: ps, monodromy: unpack_monodromy(n, &yf), tol, stats })
}

/// Configuration-space flow map `q(0) -> q(t)`; `t` may be negative.
pub fn flow_map(sys: &THooftSystem, q0: &[f64], t: f64, tol: f64) -> Result<Vec<f64>, ThooftError> {
    if t == 0.0 {
        return Ok(q0.to_vec());
    }
    let (ys, _) = ode::integrate(
        |_, y, dy| sys.flow.eval(y, dy),
        0.0,
        q0,
        &[t],
        &OdeOptions::with_tol(tol),
        |_, _| {},
    )?;
    Ok(ys.into_iter().next().expect("one target"))
}

/// Configuration-space flow map together with `det(dq(t)/dq(0))`.
pub fn flow_map_with_jacobian_det(
    sys: &THooftSystem,
    q0: &[f64],
    t: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64), ThooftError> {
    let n = sys.dim();
    if t == 0.0 {
        return Ok((q0.to_vec(), 1.0));
    }
    let mut y0 = q0.to_vec();
    for a in 0..n {
        for b in 0..n {
            y0.push(if a == b { 1.0 } else { 0.0 });
        }
    }
    let mut j = DMatrix::zeros(n, n);
    let (ys, _) = ode::integrate(
        |_, y, dy| {
            sys.flow.eval(&y[..n], &mut dy[..n]);
            sys.flow.jacobian(&y[..n], &mut j);
            for a in 0..n {
                for b in 0..n {
                    dy[n + a * n + b] = (0..n).map(|c| j[(a, c)] * y[n + c * n + b]).sum();
                }
            }
        },
        0.0,
        &y0,
        &[t],
        &OdeOptions::with_tol(tol),
        |_, _| {},
    )?;
    let y = &ys[0];
    let phi = DMatrix::from_fn(n, n, |a, b| y[n + a * n + b]);
    Ok((y[..n].to_vec(), phi.determinant()))
}

/// A scalar function on phase space, optionally with exact gradients.
pub trait PhaseFunction: Sync {
    fn value(&self, q: &[f64], p: &[f64]) -> f64;
    /// `(dF/dq, dF/dp)` when known in closed form.
    fn gradient(&self, _q: &[f64], _p: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

/// Wraps a closure `(q, p) -> value` as a [`PhaseFunction`].
pub struct FnPhase<F>(pub F);

impl<F: Fn(&[f64], &[f64]) -> f64 + Sync> PhaseFunction for FnPhase<F> {
    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        (self.0)(q, p)
    }
}

/// `H = p . f(q)` of a system, with its exact gradient.
pub struct HamiltonianFn<'a>(pub &'a THooftSystem);

impl PhaseFunction for HamiltonianFn<'_> {
    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        self.0.hamiltonian(q, p)
    }
    fn gradient(&self, q: &[f64], p: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        Some(self.0.hamiltonian_gradient(q, p))
    }
}

/// How finite-difference steps are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// `h = scale * (1 + |x|)` per coordinate.
    Relative(f64),
    Absolute(f64),
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Relative(1e-5)
    }
}

impl StepRule {
    fn step(self, x: f64) -> f64 {
        match self {
            StepRule::Relative(s) => s * (1.0 + x.abs()),
            StepRule::Absolute(h) => h,
        }
    }

    fn doubled(self) -> Self {
        match self {
            StepRule::Relative(s) => StepRule::Relative(2.0 * s),
            StepRule::Absolute(h) => StepRule::Absolute(2.0 * h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketEstimate {
    pub value: f64,
    /// Richardson estimate `|B(h) - B(2h)| / 3` of the error in `B(h)`; zero
    /// for exact gradients. `value` is already extrapolated.
    pub truncation_error: f64,
}

fn fd_gradient(f: &dyn PhaseFunction, q: &[f64], p: &[f64], rule: StepRule) -> (Vec<f64>, Vec<f64>) {
    let mut qq = q.to_vec();
    let mut pp = p.to_vec();
    let mut dq = vec![0.0; q.len()];
    let mut dp = vec![0.0; p.len()];
    for i in 0..q.len() {
        let h = rule.step(q[i]);
        qq[i] = q[i] + h;
        let fp = f.value(&qq, &pp);
        qq[i] = q[i] - h;
        let fm = f.value(&qq, &pp);
        qq[i] = q[i];
        dq[i] = (fp - fm) / (2.0 * h);
    }
    for i in 0..p.len() {
        let h = rule.step(p[i]);
        pp[i] = p[i] + h;
        let fp = f.value(&qq, &pp);
        pp[i] = p[i] - h;
        let fm = f.value(&qq, &pp);
        pp[i] = p[i];
        dp[i] = (fp - fm) / (2.0 * h);
    }
    (dq, dp)
}

fn bracket_from(fg: &(Vec<f64>, Vec<f64>), gg: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (fq, fp) = fg;
    let (gq, gp) = gg;
    (0..fq.len()).map(|a| fq[a] * gp[a] - fp[a] * gq[a]).sum()
}

/// `{F, G} = sum_a (dF/dq^a dG/dp_a - dF/dp_a dG/dq^a)`.
///
/// Uses exact gradients where available and otherwise central differences,
/// Richardson-extrapolated from steps `h` and `2h`.
pub fn poisson_bracket(
    f: &dyn PhaseFunction,
    g: &dyn PhaseFunction,
    q: &[f64],
    p: &[f64],
    rule: StepRule,
) -> BracketEstimate {
    let exact_f = f.gradient(q, p);
    let exact_g = g.gradient(q, p);
    let grads = |rule: StepRule| {
        let gf = exact_f.clone().unwrap_or_else(|| fd_gradient(f, q, p, rule));
        let gg = exact_g.clone().unwrap_or_else(|| fd_gradient(g, q, p, rule));
        bracket_from(&gf, &gg)
    };
    let value = grads(rule);
    if exact_f.is_some() && exact_g.is_some() {
        return BracketEstimate { value, truncation_error: 0.0 };
    }
    let coarse = grads(rule.doubled());
    BracketEstimate { value: (4.0 * value - coarse) / 3.0, truncation_error: (value - coarse).abs() / 3.0 }
}

/// Central-difference bracket that ignores any exact gradients.
pub fn poisson_bracket_fd(
    f: &dyn PhaseFunction,
    g: &dyn PhaseFunction,
    q: &[f64],
    p: &[f64],
    rule: StepRule,
) -> BracketEstimate {
    let b = |rule| bracket_from(&fd_gradient(f, q, p, rule), &fd_gradient(g, q, p, rule));
    let value = b(rule);
    let coarse = b(rule.doubled());
    BracketEstimate { value: (4.0 * value - coarse) / 3.0, truncation_error: (value - coarse).abs() / 3.0 }
}

/// `H = H+ - H-` with `H± = (H ± rho)^2 / (4 rho)` and `rho = a_i C^i`.
#[derive(Clone, Debug)]
pub struct SplitHamiltonian {
    system: THooftSystem,
    coefficients: Vec<f64>,
}

impl SplitHamiltonian {
    pub fn system(&self) -> &THooftSystem {
        &self.system
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn rho(&self, q: &[f64]) -> f64 {
        self.coefficients.iter().enumerate().map(|(i, a)| a * self.system.charge(i, q)).sum()
    }

    pub fn rho_gradient(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.system.dim()];
        for (i, a) in self.coefficients.iter().enumerate() {
            for (gi, c) in g.iter_mut().zip(self.system.charge_gradient(i, q)) {
                *gi += a * c;
            }
        }
        g
    }

    pub fn h(&self, q: &[f64], p: &[f64]) -> f64 {
        self.system.hamiltonian(q, p)
    }

    pub fn h_plus(&self, q: &[f64], p: &[f64]) -> f64 {
        let rho = self.rho(q);
        let s = self.h(q, p) + rho;
        s * s / (4.0 * rho)
    }

    pub fn h_minus(&self, q: &[f64], p: &[f64]) -> f64 {
        let rho = self.rho(q);
        let d = self.h(q, p) - rho;
        d * d / (4.0 * rho)
    }

    /// Exact gradient of `H+` (`sign = 1`) or `H-` (`sign = -1`).
    fn part_gradient(&self, q: &[f64], p: &[f64], sign: f64) -> (Vec<f64>, Vec<f64>) {
        let rho = self.rho(q);
        let h = self.h(q, p);
        let (hq, hp) = self.system.hamiltonian_gradient(q, p);
        let rq = self.rho_gradient(q);
        let s = h + sign * rho;
        // d/dx [s^2 / (4 rho)] = s ds / (2 rho) - s^2 drho / (4 rho^2)
        let dq = hq
            .iter()
            .zip(&rq)
            .map(|(dh, dr)| s * (dh + sign * dr) / (2.0 * rho) - s * s * dr / (4.0 * rho * rho))
            .collect();
        let dp = hp.iter().map(|dh| s * dh / (2.0 * rho)).collect();
        (dq, dp)
    }

    pub fn plus(&self) -> SplitPart<'_> {
        SplitPart { split: self, sign: 1.0 }
    }

    pub fn minus(&self) -> SplitPart<'_> {
        SplitPart { split: self, sign: -1.0 }
    }
}

/// `H+` or `H-` as a [`PhaseFunction`].
pub struct SplitPart<'a> {
    split: &'a SplitHamiltonian,
    sign: f64,
}

impl PhaseFunction for SplitPart<'_> {
    fn value(&self, q: &[f64], p: &[f64]) -> f64 {
        if self.sign > 0.0 {
            self.split.h_plus(q, p)
        } else {
            self.split.h_minus(q, p)
        }
    }
    fn gradient(&self, q: &[f64], p: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        Some(self.split.part_gradient(q, p, self.sign))
    }
}

/// Builds the splitting for `rho = a_i C^i` and checks, on a grid over the
/// system's domain, that `rho > 0`, `H+ - H- = H`, both parts are
/// non-negative and `{H+, H-}` vanishes.
pub fn split(sys: &THooftSystem, a: &[f64]) -> Result<SplitHamiltonian, ThooftError> {
    if a.len() != sys.charges.len() {
        return Err(ThooftError::Dimension(format!(
            "{} coefficients for {} charges",
            a.len(),
            sys.charges.len()
        )));
    }
    let s = SplitHamiltonian { system: sys.clone(), coefficients: a.to_vec() };
    for (q, p) in sys.domain.grid(6, 3) {
        let rho = s.rho(&q);
        if !(rho > 0.0) {
            return Err(ThooftError::NonPositiveRho { rho, at: q });
        }
        let h = s.h(&q, &p);
        let hp = s.h_plus(&q, &p);
        let hm = s.h_minus(&q, &p);
        let scale = 1.0 + h.abs() + hp.abs();
        if (hp - hm - h).abs() > 1e-12 * scale {
            return Err(ThooftError::SplitIdentity(format!("H+ - H- - H = {:e} at q={q:?} p={p:?}", hp - hm - h)));
        }
        if hp < 0.0 || hm < 0.0 {
            return Err(ThooftError::SplitIdentity(format!("negative part at q={q:?} p={p:?}")));
        }
        let b = poisson_bracket(&s.plus(), &s.minus(), &q, &p, StepRule::default()).value;
        if b.abs() > 1e-8 * scale * scale {
            return Err(ThooftError::SplitIdentity(format!("{{H+, H-}} = {b:e} at q={q:?} p={p:?}")));
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitOptions {
    /// Largest accepted `|q(T) - q(0)|`.
    pub delta: f64,
    /// Tolerance on `rho T / 2 pi` being an integer.
    pub quantization_tol: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions { delta: DEFAULT_RETURN_DELTA, quantization_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpectrum {
    pub q0: Vec<f64>,
    pub period: f64,
    pub return_distance: f64,
    pub rho_value: f64,
    /// `E_n = 2 pi n / T` for `n = 0..=n_max`.
    pub levels: Vec<f64>,
    /// `rho T / 2 pi`.
    pub winding_ratio: f64,
    /// `Some(n)` when `rho T = 2 pi n` with `n >= 0` within tolerance.
    pub quantum_number: Option<u64>,
}

impl OrbitSpectrum {
    pub fn is_selected(&self) -> bool {
        self.quantum_number.is_some()
    }

    /// CSV with header `n,E_n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,E_n\n");
        for (n, e) in self.levels.iter().enumerate() {
            s.push_str(&format!("{n},{e}\n"));
        }
        s
    }
}

/// Period and level ladder of the closed orbit through the trajectory's
/// starting point.
///
/// The first return is bracketed on the samples by a sign change of
/// `g(t) = (q(t) - q0) . f(q(t))` from negative to positive, seeded with a
/// quadratic fit of `|q - q0|^2`, and then refined by re-integrating from
/// the nearest sample and solving `g(T) = 0`.
pub fn orbit_spectrum(
    sys: &THooftSystem,
    traj: &Trajectory,
    split: &SplitHamiltonian,
    n_max: usize,
    opts: &OrbitOptions,
) -> Result<OrbitSpectrum, ThooftError> {
    let q0 = traj.q.first().ok_or_else(|| ThooftError::Aperiodic("empty trajectory".into()))?.clone();
    let f0 = sys.f(&q0);
    let speed = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if speed < 1e-14 {
        return Err(ThooftError::Aperiodic(format!("flow vanishes at q0 = {q0:?}")));
    }
    let g = |q: &[f64]| -> f64 { sys.f(q).iter().zip(q).zip(&q0).map(|((fa, qa), qa0)| fa * (qa - qa0)).sum() };
    let dist2 = |q: &[f64]| -> f64 { q.iter().zip(&q0).map(|(a, b)| (a - b) * (a - b)).sum() };
    let gs: Vec<f64> = traj.q.iter().map(|q| g(q)).collect();

    let tol = traj.tol;
    let mut closest = f64::INFINITY;
    for k in 1..traj.q.len().saturating_sub(1) {
        if !(gs[k] < 0.0 && gs[k + 1] >= 0.0) {
            continue;
        }
        let (ta, tb) = (traj.times[k], traj.times[k + 1]);
        let base = traj.q[k].clone();
        let eval = |t: f64| -> Result<(f64, Vec<f64>), ThooftError> {
            let q = flow_map(sys, &base, t - ta, tol * 1e-2)?;
            Ok((g(&q), q))
        };
        let guess = quadratic_min(
            [traj.times[k - 1], ta, tb],
            [dist2(&traj.q[k - 1]), dist2(&traj.q[k]), dist2(&traj.q[k + 1])],
        )
        .filter(|t| *t > ta && *t < tb);
        let (t_ret, q_ret) = refine_root(eval, ta, gs[k], tb, gs[k + 1], guess)?;
        let d = dist2(&q_ret).sqrt();
        closest = closest.min(d);
        if d <= opts.delta {
            let rho = split.rho(&q0);
            let levels = (0..=n_max).map(|n| 2.0 * PI * n as f64 / t_ret).collect();
            let ratio = rho * t_ret / (2.0 * PI);
            let nearest = ratio.round();
            let quantum_number = ((ratio - nearest).abs() <= opts.quantization_tol * ratio.abs().max(1.0)
                && nearest >= 0.0)
                .then_some(nearest as u64);
            return Ok(OrbitSpectrum {
                q0,
                period: t_ret,
                return_distance: d,
                rho_value: rho,
                levels,
                winding_ratio: ratio,
                quantum_number,
            });
        }
    }
    Err(ThooftError::Aperiodic(if closest.is_finite() {
        format!("closest approach {closest:e} exceeds delta {:e}", opts.delta)
    } else {
        format!("no return to q0 within t = {}", traj.t_final())
    }))
}

fn quadratic_min(t: [f64; 3], y: [f64; 3]) -> Option<f64> {
    let d1 = (y[1] - y[0]) / (t[1] - t[0]);
    let d2 = (y[2] - y[1]) / (t[2] - t[1]);
    let curv = (d2 - d1) / (t[2] - t[0]);
    if curv <= 0.0 {
        return None;
    }
    // y = y0 + d1 (t - t0) + curv (t - t0)(t - t1)
    Some(0.5 * (t[0] + t[1]) - d1 / (2.0 * curv))
}

/// Illinois-modified regula falsi on a sign-changing bracket.
fn refine_root<F>(
    mut eval: F,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    guess: Option<f64>,
) -> Result<(f64, Vec<f64>), ThooftError>
where
    F: FnMut(f64) -> Result<(f64, Vec<f64>), ThooftError>,
{
    let mut side = 0i8;
    let mut best = None;
    let mut next = guess;
    for _ in 0..200 {
        let c = next.take().unwrap_or_else(|| (a * fb - b * fa) / (fb - fa));
        let c = if c > a && c < b { c } else { 0.5 * (a + b) };
        let (fc, qc) = eval(c)?;
        best = Some((c, qc));
        if fc == 0.0 || (b - a) < 1e-14 * b.abs().max(1.0) {
            break;
        }
        if (fc < 0.0) == (fa < 0.0) {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if (b - a) < 1e-14 * b.abs().max(1.0) {
            break;
        }
    }
    best.ok_or_else(|| ThooftError::Aperiodic("root refinement failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_flow_is_constant() {
        let sys = THooftSystem::zero(2);
        let tr = integrate(&sys, &[0.3, -0.2], &[1.0, 2.0], 5.0, DEFAULT_TOL).unwrap();
        assert_eq!(tr.q_final(), &[0.3, -0.2]);
        assert_eq!(tr.p_final(), &[1.0, 2.0]);
        assert_eq!(tr.monodromy, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn rotation_quarter_turn() {
        let sys = THooftSystem::rotation(1.0);
        let tr = integrate(&sys, &[1.0, 0.0], &[0.0, 0.0], PI / 2.0, DEFAULT_TOL).unwrap();
        let q = tr.q_final();
        assert!(q[0].abs() < 1e-9 && (q[1] + 1.0).abs() < 1e-9, "{q:?}");
        // Rotation by -pi/2: [[cos, sin], [-sin, cos]] at t = pi/2.
        let m = &tr.monodromy;
        let want = [[0.0, 1.0], [-1.0, 0.0]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((m[a][b] - want[a][b]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_growth_and_momentum_decay() {
        let sys = THooftSystem::linear(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let tr = integrate(&sys, &[1.0], &[2.0], 1.0, DEFAULT_TOL).unwrap();
        assert!((tr.q_final()[0] - 1f64.exp()).abs() < 1e-9);
        assert!((tr.p_final()[0] - 2.0 * (-1f64).exp()).abs() < 1e-9);
        assert!((tr.monodromy[0][0] - 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn ode_residual_and_conservation_along_twisted_orbit() {
        let sys = THooftSystem::twisted_rotation();
        let tol = 1e-10;
        let tr = integrate(&sys, &[0.8, 0.1], &[0.4, -0.3], 4.0, tol).unwrap();
        let h0 = sys.hamiltonian(&tr.q[0], &tr.p[0]);
        let c0 = sys.charge(0, &tr.q[0]);
        for (q, p) in tr.q.iter().zip(&tr.p) {
            assert!((sys.hamiltonian(q, p) - h0).abs() < 10.0 * tol * (1.0 + h0.abs()) * 10.0);
            assert!((sys.charge(0, q) - c0).abs() < 10.0 * tol * (1.0 + c0));
        }
        // Residual |q' - f(q)| at interior samples via centred differences of
        // a dense re-sampling.
        let dt = 1e-3;
        let ts: Vec<f64> = (1..=3000).map(|k| k as f64 * dt).collect();
        let dense = integrate_at(&sys, &tr.q[0], &tr.p[0], &ts, 1e-12).unwrap();
        for k in 1..dense.q.len() - 1 {
            let f = sys.f(&dense.q[k]);
            for a in 0..2 {
                let qdot = (dense.q[k + 1][a] - dense.q[k - 1][a]) / (2.0 * dt);
                assert!((qdot - f[a]).abs() < 1e-4 * (1.0 + f[a].abs()));
            }
        }
    }

    #[test]
    fn monodromy_matches_forward_differences() {
        let sys = THooftSystem::twisted_rotation();
        let q0 = [0.7, -0.2];
        let t = 1.3;
        let tr = integrate(&sys, &q0, &[0.0, 0.0], t, 1e-12).unwrap();
        let h = 1e-6;
        for b in 0..2 {
            let mut qb = q0;
            qb[b] += h;
            let qt = flow_map(&sys, &qb, t, 1e-12).unwrap();
            for a in 0..2 {
                let fd = (qt[a] - tr.q_final()[a]) / h;
                assert!((fd - tr.monodromy[a][b]).abs() < 1e-4, "a={a} b={b}: {fd} vs {}", tr.monodromy[a][b]);
            }
        }
    }

    #[test]
    fn canonical_pair_and_antisymmetry() {
        let q1 = FnPhase(|q: &[f64], _: &[f64]| q[0]);
        let p1 = FnPhase(|_: &[f64], p: &[f64]| p[0]);
        let b = poisson_bracket(&q1, &p1, &[0.3, 2.0], &[-1.0, 4.0], StepRule::default());
        assert!((b.value - 1.0).abs() < 1e-10);

        let sys = THooftSystem::rotation(1.0);
        let h = FnPhase(|q: &[f64], p: &[f64]| sys.hamiltonian(q, p));
        let hh = poisson_bracket(&h, &h, &[0.3, 0.4], &[1.0, -2.0], StepRule::default());
        assert!(hh.value.abs() < 1e-12);
    }

    #[test]
    fn radius_commutes_with_rotation_hamiltonian() {
        // C = q1^2 + q2^2, H = p1 q2 - p2 q1: {C, H} = 2 q1 q2 - 2 q2 q1 = 0.
        let c = FnPhase(|q: &[f64], _: &[f64]| q[0] * q[0] + q[1] * q[1]);
        let h = FnPhase(|q: &[f64], p: &[f64]| p[0] * q[1] - p[1] * q[0]);
        let b = poisson_bracket(&c, &h, &[0.7, -1.1], &[0.3, 0.9], StepRule::default());
        assert!(b.value.abs() < 1e-9, "{b:?}");
        assert!(b.truncation_error < 1e-9);
    }

    #[test]
    fn bracket_reports_truncation_error() {
        let f = FnPhase(|q: &[f64], _: &[f64]| q[0].sin() * 3.0);
        let g = FnPhase(|_: &[f64], p: &[f64]| p[0].powi(3));
        let b = poisson_bracket(&f, &g, &[0.4], &[1.3], StepRule::Absolute(1e-3));
        let exact = 3.0 * 0.4f64.cos() * 3.0 * 1.3f64.powi(2);
        assert!((b.value - exact).abs() < 1e-5);
        assert!(b.truncation_error > 0.0 && b.truncation_error < 1e-4);
    }

    #[test]
    fn split_examples() {
        let sys = THooftSystem::rotation(1.0);
        let s = split(&sys, &[1.0]).unwrap();
        // q = (1, 0), p = (0, -1): H = p1 q2 - p2 q1 = 1 = rho.
        let (q, p) = ([1.0, 0.0], [0.0, -1.0]);
        assert_eq!(s.h(&q, &p), 1.0);
        assert_eq!(s.rho(&q), 1.0);
        assert_eq!(s.h_minus(&q, &p), 0.0);
        assert_eq!(s.h_plus(&q, &p), 1.0);
    }

    #[test]
    fn split_rejects_non_positive_rho() {
        let sys = THooftSystem::rotation(1.0);
        assert!(matches!(split(&sys, &[-1.0]), Err(ThooftError::NonPositiveRho { .. })));
        // Coefficients of mixed sign make rho vanish inside the box.
        let sys3 = THooftSystem::axial_rotation_3d(1.0);
        assert!(matches!(split(&sys3, &[1.0, -1.0]), Err(ThooftError::NonPositiveRho { .. })));
        assert!(split(&sys3, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn unconserved_charge_is_rejected() {
        let err = THooftSystem::new(
            "bad",
            FlowField::Rotation { omega: 1.0 },
            vec![Polynomial::var(2, 0)],
            PhaseBox::cube(2, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, ThooftError::ChargeNotConserved { index: 0, .. }));
    }

    fn spectrum_for(sys: &THooftSystem, q0: [f64; 2], t_final: f64) -> Result<OrbitSpectrum, ThooftError> {
        let tr = integrate(sys, &q0, &[0.0, 0.0], t_final, 1e-12)?;
        let s = split(sys, &[1.0])?;
        orbit_spectrum(sys, &tr, &s, 10, &OrbitOptions::default())
    }

    #[test]
    fn rotation_orbit_ladder() {
        let sys = THooftSystem::rotation(1.0);
        let o = spectrum_for(&sys, [0.6, 0.8], 8.0).unwrap();
        assert!((o.period - 2.0 * PI).abs() < 1e-9, "{}", o.period);
        for (n, e) in o.levels.iter().enumerate() {
            assert!((e - n as f64).abs() <= 1e-9 * (n as f64).max(1.0));
        }
        // rho = 1 on the unit circle, so rho T = 2 pi: selected with n = 1.
        assert_eq!(o.quantum_number, Some(1));
        for w in o.levels.windows(2) {
            assert!((w[1] - w[0] - 2.0 * PI / o.period).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_rotation_orbit_ladder() {
        let sys = THooftSystem::rotation(3.0);
        let o = spectrum_for(&sys, [0.5, 0.0], 3.0).unwrap();
        assert!((o.period - 2.0 * PI / 3.0).abs() < 1e-9);
        for (n, e) in o.levels.iter().enumerate() {
            assert!((e - 3.0 * n as f64).abs() <= 1e-9 * (3.0 * n as f64).max(1.0));
        }
        // rho = 0.25, T = 2 pi / 3: rho T / 2 pi = 1/12, not an integer.
        assert_eq!(o.quantum_number, None);
    }

    #[test]
    fn twisted_rotation_period_depends_on_radius() {
        let sys = THooftSystem::twisted_rotation();
        let o = spectrum_for(&sys, [1.0, 0.0], 5.0).unwrap();
        assert!((o.period - PI).abs() < 1e-9, "{}", o.period);
    }

    #[test]
    fn zero_flow_is_aperiodic() {
        let sys = THooftSystem::zero(2);
        let tr = integrate(&sys, &[1.0, 0.0], &[0.0, 0.0], 10.0, 1e-10).unwrap();
        let s = split(&THooftSystem::rotation(1.0), &[1.0]).unwrap();
        assert!(matches!(
            orbit_spectrum(&sys, &tr, &s, 5, &OrbitOptions::default()),
            Err(ThooftError::Aperiodic(_))
        ));
    }

    #[test]
    fn short_trajectory_is_aperiodic() {
        let sys = THooftSystem::rotation(1.0);
        assert!(matches!(spectrum_for(&sys, [1.0, 0.0], 3.0), Err(ThooftError::Aperiodic(_))));
    }

    #[test]
    fn csv_headers() {
        let sys = THooftSystem::rotation(1.0);
        let tr = integrate_at(&sys, &[1.0, 0.0], &[0.5, 0.5], &[1.0], 1e-10).unwrap();
        assert!(tr.to_csv().starts_with("t,q1,q2,p1,p2\n0,1,0,0.5,0.5\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn split_identities_at_random_points(
            q1 in 0.3f64..1.4, q2 in -1.4f64..1.4, p1 in -1.5f64..1.5, p2 in -1.5f64..1.5, a in 0.2f64..3.0
        ) {
            let sys = THooftSystem::twisted_rotation();
            let s = split(&sys, &[a]).unwrap();
            let (q, p) = ([q1, q2], [p1, p2]);
            let h = s.h(&q, &p);
            prop_assert!((s.h_plus(&q, &p) - s.h_minus(&q, &p) - h).abs() < 1e-12 * (1.0 + h.abs() + s.h_plus(&q, &p)));
            let exact = poisson_bracket(&s.plus(), &s.minus(), &q, &p, StepRule::default());
            prop_assert!(exact.value.abs() < 1e-10);
        }

        #[test]
        fn energy_conserved_along_rotation(q1 in -1.0f64..1.0, q2 in -1.0f64..1.0, p1 in -1.0f64..1.0, p2 in -1.0f64..1.0) {
            let sys = THooftSystem::rotation(2.0);
            let tol = 1e-10;
            let tr = integrate(&sys, &[q1, q2], &[p1, p2], 3.0, tol).unwrap();
            let h0 = sys.hamiltonian(&[q1, q2], &[p1, p2]);
            for (q, p) in tr.q.iter().zip(&tr.p) {
                prop_assert!((sys.hamiltonian(q, p) - h0).abs() < 10.0 * tol * 10.0);
            }
        }
    }
}
