//! Discretized first-order path integrals.
//!
//! Integrating out the momenta of `p (q' - f(q))` leaves a delta functional
//! `delta[q' - f(q)]`. Each slice's delta is smoothed into a Gaussian of
//! width `sigma`, so a broken-line path `q_0..q_n` carries the weight
//!
//! `exp(-sum_j |q_{j+1} - q_j - f(qbar_j) dt|^2 / (2 sigma^2 dt))`
//!
//! with the midpoint `qbar_j`. As `sigma -> 0` the ensemble collapses onto
//! the classical trajectory. The Jacobian of `q -> q' - f(q)` and the
//! determinant that cancels it (the ghost sector) are compared as
//! finite-dimensional determinants.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::thooft::{self, THooftSystem, ThooftError, Trajectory};

/// Smallest accepted smoothing width.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Samples per independently seeded chunk.
pub const CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sigma = {sigma:e} is below the numerical floor {floor:e}")]
    SigmaBelowFloor { sigma: f64, floor: f64 },
    #[error("no classical path joins the endpoints: the flow from q_start lands {distance:e} away from q_end")]
    NoClassicalPath { distance: f64 },
    #[error("the monodromy determinant changes sign near t = {t}; the interval reaches a focal point")]
    FocalPoint { t: f64 },
    #[error(transparent)]
    Flow(#[from] ThooftError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub q_start: Vec<f64>,
    pub q_end: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    pub n_slices: usize,
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Largest accepted `|q_cl(t_end) - q_end|`.
    #[serde(default = "default_endpoint_tol")]
    pub endpoint_tol: f64,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
}

fn default_endpoint_tol() -> f64 {
    1e-6
}

fn default_ode_tol() -> f64 {
    1e-10
}

impl PathConfig {
    fn validate(&self, dim: usize) -> Result<(), PathError> {
        let bad = |m: String| Err(PathError::InvalidConfig(m));
        if self.q_start.len() != dim || self.q_end.len() != dim {
            return bad(format!("endpoints must have {dim} components"));
        }
        if !(self.t_end > self.t_start) {
            return bad("t_end must exceed t_start".into());
        }
        if self.n_slices < 2 {
            return bad("need at least 2 slices".into());
        }
        if self.n_samples == 0 {
            return bad("need at least one sample".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.sigma < SIGMA_FLOOR {
            return Err(PathError::SigmaBelowFloor { sigma: self.sigma, floor: SIGMA_FLOOR });
        }
        Ok(())
    }
}

/// Importance-sampled broken-line paths with fixed endpoints.
///
/// Proposals are Brownian bridges of diffusion `sigma^2` around the
/// classical path; the importance weights correct them to the smoothed
/// delta-functional weight. Chunk `c` of [`CHUNK`] samples draws from
/// ChaCha8 seeded with `seed` on stream `c`, so results do not depend on
/// the thread count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub config: PathConfig,
    pub dim: usize,
    pub times: Vec<f64>,
    /// Classical path at the slice times, nudged linearly onto `q_end`.
    pub classical: Vec<Vec<f64>>,
    /// Sample `k` stores `q_j[a]` at `paths[k][j * dim + a]`.
    pub paths: Vec<Vec<f64>>,
    pub log_weights: Vec<f64>,
    /// Normalized to unit sum.
    pub weights: Vec<f64>,
    pub proposal: String,
}

pub fn sample_paths(sys: &THooftSystem, cfg: &PathConfig, exec: Execution) -> Result<PathEnsemble, PathError> {
    let dim = sys.dim();
    cfg.validate(dim)?;
    let n = cfg.n_slices;
    let span = cfg.t_end - cfg.t_start;
    let dt = span / n as f64;
    let times: Vec<f64> = (0..=n).map(|j| cfg.t_start + j as f64 * dt).collect();
    let offsets: Vec<f64> = (1..=n).map(|j| j as f64 * dt).collect();
    let tr = thooft::integrate_at(sys, &cfg.q_start, &vec![0.0; dim], &offsets, cfg.ode_tol)?;
    check_focal(sys, &cfg.q_start, &offsets, cfg.ode_tol)?;
    let q_cl_end = tr.q_final();
    let miss: Vec<f64> = cfg.q_end.iter().zip(q_cl_end).map(|(a, b)| a - b).collect();
    let distance = miss.iter().map(|v| v * v).sum::<f64>().sqrt();
    if distance > cfg.endpoint_tol * (1.0 + cfg.q_end.iter().map(|v| v * v).sum::<f64>().sqrt()) {
        return Err(PathError::NoClassicalPath { distance });
    }
    let classical: Vec<Vec<f64>> = (0..=n)
        .map(|j| {
            let s = j as f64 / n as f64;
            tr.q[j].iter().zip(&miss).map(|(q, m)| q + s * m).collect()
        })
        .collect();

    let sigma = cfg.sigma;
    let inv_var = 1.0 / (sigma * sigma * dt);
    let n_chunks = cfg.n_samples.div_ceil(CHUNK);
    let chunks = par::map_indexed(exec, n_chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(c as u64);
        let count = CHUNK.min(cfg.n_samples - c * CHUNK);
        let mut out = Vec::with_capacity(count);
        let mut f = vec![0.0; dim];
        let mut mid = vec![0.0; dim];
        for _ in 0..count {
            let mut d = vec![0.0; (n + 1) * dim];
            let mut log_q = 0.0;
            for j in 1..n {
                let remain_prev = span - (j - 1) as f64 * dt;
                let remain = span - j as f64 * dt;
                let shrink = remain / remain_prev;
                let sd = sigma * (dt * shrink).sqrt();
                for a in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    d[j * dim + a] = d[(j - 1) * dim + a] * shrink + sd * z;
                }
            }
            let mut path = vec![0.0; (n + 1) * dim];
            for j in 0..=n {
                for a in 0..dim {
                    path[j * dim + a] = classical[j][a] + d[j * dim + a];
                }
            }
            let mut action = 0.0;
            for j in 0..n {
                for a in 0..dim {
                    mid[a] = 0.5 * (path[j * dim + a] + path[(j + 1) * dim + a]);
                    let dd = d[(j + 1) * dim + a] - d[j * dim + a];
                    log_q += dd * dd;
                }
                sys.flow_eval(&mid, &mut f);
                for a in 0..dim {
                    let r = path[(j + 1) * dim + a] - path[j * dim + a] - f[a] * dt;
                    action += r * r;
                }
            }
            let lw = -0.5 * inv_var * (action - log_q);
            out.push((path, lw));
        }
        out
    });

    let mut paths = Vec::with_capacity(cfg.n_samples);
    let mut log_weights = Vec::with_capacity(cfg.n_samples);
    for chunk in chunks {
        for (p, lw) in chunk {
            paths.push(p);
            log_weights.push(lw);
        }
    }
    let weights = normalize_log_weights(&log_weights);
    Ok(PathEnsemble {
        config: cfg.clone(),
        dim,
        times,
        classical,
        paths,
        log_weights,
        weights,
        proposal: format!("brownian bridge of width {sigma} around the classical path, ChaCha8 streams of {CHUNK}"),
    })
}

fn check_focal(sys: &THooftSystem, q0: &[f64], offsets: &[f64], tol: f64) -> Result<(), PathError> {
    let mut prev = 1.0f64;
    let mut t_prev = 0.0;
    for &t in offsets {
        let (_, det) = thooft::flow_map_with_jacobian_det(sys, q0, t, tol)?;
        if det.signum() != prev.signum() || det == 0.0 {
            return Err(PathError::FocalPoint { t: 0.5 * (t + t_prev) });
        }
        prev = det;
        t_prev = t;
    }
    Ok(())
}

/// `exp(l_k - max) / sum`, summed in index order.
fn normalize_log_weights(lw: &[f64]) -> Vec<f64> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

impl PathEnsemble {
    pub fn n_slices(&self) -> usize {
        self.times.len() - 1
    }

    fn at(&self, k: usize, j: usize) -> &[f64] {
        &self.paths[k][j * self.dim..(j + 1) * self.dim]
    }

    /// Weighted `<q(t_j)>`.
    pub fn mean_path(&self) -> Vec<Vec<f64>> {
        (0..=self.n_slices())
            .map(|j| {
                let mut m = vec![0.0; self.dim];
                for (k, w) in self.weights.iter().enumerate() {
                    for (a, v) in self.at(k, j).iter().enumerate() {
                        m[a] += w * v;
                    }
                }
                m
            })
            .collect()
    }

    /// Weighted `<q(t_i) . q(t_j)>`.
    pub fn two_point(&self, i: usize, j: usize) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * self.at(k, i).iter().zip(self.at(k, j)).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    /// Weighted mean over interior slices of `|q_j - q_cl(t_j)|^2`.
    pub fn mean_square_deviation(&self) -> f64 {
        let n = self.n_slices();
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let s: f64 = (1..n)
                    .map(|j| {
                        self.at(k, j).iter().zip(&self.classical[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    })
                    .sum();
                w * s / (n - 1) as f64
            })
            .sum()
    }

    /// `max_j |<q(t_j)> - q_cl(t_j)|`.
    pub fn mean_deviation(&self) -> f64 {
        self.mean_path()
            .iter()
            .zip(&self.classical)
            .map(|(m, c)| m.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Kish effective sample size `1 / sum w^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// CSV with header `t,q_mean,q_classical,deviation` (one column per
    /// component when `dim > 1`).
    pub fn to_csv(&self) -> String {
        let mean = self.mean_path();
        let mut s = String::from("t");
        if self.dim == 1 {
            s.push_str(",q_mean,q_classical");
        } else {
            for a in 1..=self.dim {
                s.push_str(&format!(",q_mean{a}"));
            }
            for a in 1..=self.dim {
                s.push_str(&format!(",q_classical{a}"));
            }
        }
        s.push_str(",deviation\n");
        for (j, t) in self.times.iter().enumerate() {
            s.push_str(&t.to_string());
            for v in mean[j].iter().chain(&self.classical[j]) {
                s.push_str(&format!(",{v}"));
            }
            let dev = mean[j].iter().zip(&self.classical[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            s.push_str(&format!(",{dev}\n"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub sigma: f64,
    pub mean_deviation: f64,
    pub mean_square_deviation: f64,
    pub effective_sample_size: f64,
    /// `<q(t) . q(t)>` at the middle slice.
    pub two_point_mid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// Ordered by decreasing sigma.
    pub rows: Vec<MomentRow>,
    /// Least-squares slope of `ln msd` against `ln sigma`.
    pub fitted_exponent: f64,
    pub monotone_msd: bool,
    pub monotone_mean_deviation: bool,
    pub seed: u64,
}

impl MomentRow {
    pub fn from_ensemble(e: &PathEnsemble) -> Self {
        let mid = e.n_slices() / 2;
        MomentRow {
            sigma: e.config.sigma,
            mean_deviation: e.mean_deviation(),
            mean_square_deviation: e.mean_square_deviation(),
            effective_sample_size: e.effective_sample_size(),
            two_point_mid: e.two_point(mid, mid),
        }
    }
}

/// Runs [`sample_paths`] for every width in the ladder (same seed) and fits
/// the concentration exponent.
pub fn moment_ladder(
    sys: &THooftSystem,
    base: &PathConfig,
    sigmas: &[f64],
    exec: Execution,
) -> Result<MomentReport, PathError> {
    if sigmas.len() < 2 {
        return Err(PathError::InvalidConfig("a sigma ladder needs at least two widths".into()));
    }
    let mut ladder = sigmas.to_vec();
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut rows = Vec::with_capacity(ladder.len());
    for s in ladder {
        let cfg = PathConfig { sigma: s, ..base.clone() };
        rows.push(MomentRow::from_ensemble(&sample_paths(sys, &cfg, exec)?));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.sigma.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_square_deviation.ln()).collect();
    let fitted_exponent = least_squares_slope(&xs, &ys);
    let monotone_msd = rows.windows(2).all(|w| w[1].mean_square_deviation <= w[0].mean_square_deviation);
    let monotone_mean_deviation = rows.windows(2).all(|w| w[1].mean_deviation <= w[0].mean_deviation);
    Ok(MomentReport { rows, fitted_exponent, monotone_msd, monotone_mean_deviation, seed: base.seed })
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `ln |det|` and sign from an LU factorization.
pub fn log_det(m: DMatrix<f64>) -> (f64, f64) {
    let lu = m.lu();
    let mut sign: f64 = lu.p().determinant();
    let mut acc = 0.0;
    for d in lu.u().diagonal().iter() {
        if *d == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        sign *= d.signum();
        acc += d.abs().ln();
    }
    (acc, sign)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationDeterminant {
    pub n_slices: usize,
    /// `ln |det|` of the discretized `d/dt - df/dq`: the final-value
    /// operator relative to the initial-value one.
    pub log_det_delta_route: f64,
    pub sign_delta_route: f64,
    /// `ln |det Phi(T)|` from the variational equation.
    pub log_det_monodromy_route: f64,
    pub sign_monodromy_route: f64,
    /// Trapezoid estimate of `int tr(df/dq) dt` on the trajectory samples.
    pub abel_trace_integral: f64,
}

impl FluctuationDeterminant {
    pub fn route_difference(&self) -> f64 {
        (self.log_det_delta_route - self.log_det_monodromy_route).abs()
    }
}

/// Midpoints of `n` equal slices of the trajectory's time span and the
/// slice transfer matrices `exp(dt J(qbar_j))`.
fn slice_transfers(sys: &THooftSystem, traj: &Trajectory, n: usize) -> Result<(f64, Vec<DMatrix<f64>>), PathError> {
    if n == 0 {
        return Err(PathError::InvalidConfig("need at least one slice".into()));
    }
    let t = traj.t_final();
    if !(t > 0.0) {
        return Err(PathError::InvalidConfig("trajectory must span positive time".into()));
    }
    let dt = t / n as f64;
    let times: Vec<f64> = (0..=2 * n).skip(1).map(|k| 0.5 * k as f64 * dt).collect();
    let fine = thooft::integrate_at(sys, &traj.q[0], &traj.p[0], &times, traj.tol)?;
    let mids: Vec<&Vec<f64>> = (0..n).map(|j| &fine.q[2 * j + 1]).collect();
    let transfers = mids.iter().map(|q| (sys.jacobian(q) * dt).exp()).collect();
    Ok((dt, transfers))
}

/// Block-bidiagonal discretizations of `d/dt - J` on `n` slices with
/// `(q_{j+1} - E_j q_j) / dt`: the initial-value operator acts on
/// `q_1..q_n`, the final-value one on `q_0..q_{n-1}`.
fn banded_operators(dt: f64, e: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = e.len();
    let d = e[0].nrows();
    let size = n * d;
    let mut initial = DMatrix::zeros(size, size);
    let mut final_ = DMatrix::zeros(size, size);
    for j in 0..n {
        // Row block j: (q_{j+1} - E_j q_j) / dt.
        for a in 0..d {
            // Initial-value unknowns are q_1..q_n at block index j' = j.
            initial[(j * d + a, j * d + a)] = 1.0 / dt;
            if j > 0 {
                for b in 0..d {
                    initial[(j * d + a, (j - 1) * d + b)] = -e[j][(a, b)] / dt;
                }
            }
            // Final-value unknowns are q_0..q_{n-1} at block index j' = j.
            for b in 0..d {
                final_[(j * d + a, j * d + b)] = -e[j][(a, b)] / dt;
            }
            if j + 1 < n {
                final_[(j * d + a, (j + 1) * d + a)] = 1.0 / dt;
            }
        }
    }
    (initial, final_)
}

pub fn fluctuation_determinant(
    sys: &THooftSystem,
    traj: &Trajectory,
    n_slices: usize,
) -> Result<FluctuationDeterminant, PathError> {
    let (dt, e) = slice_transfers(sys, traj, n_slices)?;
    let (initial, final_) = banded_operators(dt, &e);
    let (li, si) = log_det(initial);
    let (lf, sf) = log_det(final_);
    // det(final) carries (-1)^{nN} from the -E_j diagonal blocks.
    let parity = if (n_slices * sys.dim()).is_multiple_of(2) { 1.0 } else { -1.0 };
    let (lm, sm) = log_det(traj.monodromy_matrix());
    let mut abel = 0.0;
    for k in 1..traj.times.len() {
        let h = traj.times[k] - traj.times[k - 1];
        abel += 0.5 * h * (sys.jacobian(&traj.q[k]).trace() + sys.jacobian(&traj.q[k - 1]).trace());
    }
    Ok(FluctuationDeterminant {
        n_slices,
        log_det_delta_route: lf - li,
        sign_delta_route: sf * si * parity,
        log_det_monodromy_route: lm,
        sign_monodromy_route: sm,
        abel_trace_integral: abel,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhostReport {
    pub n_slices: usize,
    /// `ln |det|` of the Jacobian of `q -> q' - f(q)` (banded LU route).
    pub log_jacobian: f64,
    /// `ln |det M|` from multiplying the slice transfer matrices.
    pub log_det_m: f64,
    /// `|Jacobian / det M - 1|`.
    pub residual: f64,
}

/// Checks that the Jacobian of the discretized delta functional is cancelled
/// by the determinant of the linearized slice-to-slice map.
pub fn ghost_cancellation_check(
    sys: &THooftSystem,
    traj: &Trajectory,
    n_slices: usize,
) -> Result<GhostReport, PathError> {
    let (dt, e) = slice_transfers(sys, traj, n_slices)?;
    let (initial, final_) = banded_operators(dt, &e);
    let log_jacobian = log_det(final_).0 - log_det(initial).0;
    let d = sys.dim();
    let mut m = DMatrix::<f64>::identity(d, d);
    let mut log_scale = 0.0;
    for ej in &e {
        m = ej * m;
        // Renormalize to keep long products finite.
        let s = m.amax();
        if s > 0.0 && !(1e-100..=1e100).contains(&s) {
            m /= s;
            log_scale += d as f64 * s.ln();
        }
    }
    let log_det_m = log_det(m).0 + log_scale;
    let residual = ((log_jacobian - log_det_m).exp() - 1.0).abs();
    Ok(GhostReport { n_slices, log_jacobian, log_det_m, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use crate::thooft::{FlowField, PhaseBox};
    use std::f64::consts::PI;

    fn cfg(q0: Vec<f64>, q1: Vec<f64>, t: f64, sigma: f64, samples: usize) -> PathConfig {
        PathConfig {
            q_start: q0,
            q_end: q1,
            t_start: 0.0,
            t_end: t,
            n_slices: 32,
            sigma,
            n_samples: samples,
            seed: 11,
            endpoint_tol: 1e-6,
            ode_tol: 1e-10,
        }
    }

    fn exp_flow() -> THooftSystem {
        THooftSystem::linear(DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    fn cubic_flow() -> THooftSystem {
        // f = q - q^3: divergence 1 - 3 q^2 varies along the path.
        let q = Polynomial::var(1, 0);
        let f = &q - &q.powi(3);
        THooftSystem::new(
            "cubic",
            FlowField::polynomial(vec![f]).unwrap(),
            vec![],
            PhaseBox { q: vec![(-1.0, 1.0)], p: vec![(-1.0, 1.0)] },
        )
        .unwrap()
    }

    #[test]
    fn zero_flow_weights_are_uniform_and_concentrate() {
        let sys = THooftSystem::zero(1);
        let mut prev = f64::INFINITY;
        for s in [0.1, 0.01, 0.001] {
            let e = sample_paths(&sys, &cfg(vec![0.5], vec![0.5], 1.0, s, 500), Execution::Parallel).unwrap();
            assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(e.log_weights.iter().all(|l| l.abs() < 1e-9));
            let msd = e.mean_square_deviation();
            assert!(msd < prev);
            prev = msd;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn rotation_mean_tracks_closed_form() {
        let sys = THooftSystem::rotation(1.0);
        let t = PI / 2.0;
        let s = 0.02;
        let e = sample_paths(&sys, &cfg(vec![1.0, 0.0], vec![0.0, -1.0], t, s, 2000), Execution::Parallel).unwrap();
        let mean = e.mean_path();
        for (j, tj) in e.times.iter().enumerate() {
            let want = [tj.cos(), -tj.sin()];
            for a in 0..2 {
                assert!((mean[j][a] - want[a]).abs() < 3.0 * s, "t={tj}");
                assert!((e.classical[j][a] - want[a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mean_deviation_shrinks_with_sigma() {
        let sys = THooftSystem::rotation(1.0);
        let base = cfg(vec![1.0, 0.0], vec![0.0, -1.0], PI / 2.0, 0.1, 2000);
        let r = moment_ladder(&sys, &base, &[0.1, 0.03, 0.01], Execution::Parallel).unwrap();
        assert!(r.monotone_msd && r.monotone_mean_deviation, "{r:?}");
        assert!((r.fitted_exponent - 2.0).abs() < 0.2, "{}", r.fitted_exponent);
        let ratio = r.rows[0].mean_deviation / r.rows[2].mean_deviation;
        assert!(ratio > 3.0 && ratio < 30.0, "ratio {ratio}");
    }

    #[test]
    fn sampling_is_reproducible_and_thread_independent() {
        let sys = THooftSystem::rotation(1.0);
        let c = cfg(vec![1.0, 0.0], vec![0.0, -1.0], PI / 2.0, 0.05, 600);
        let a = sample_paths(&sys, &c, Execution::Parallel).unwrap();
        let b = sample_paths(&sys, &c, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let ra = serde_json::to_string(&MomentRow::from_ensemble(&a)).unwrap();
        let rb = serde_json::to_string(&MomentRow::from_ensemble(&b)).unwrap();
        assert_eq!(ra, rb);
        let other = sample_paths(&sys, &PathConfig { seed: 12, ..c }, Execution::Parallel).unwrap();
        assert_ne!(a.paths, other.paths);
    }

    #[test]
    fn mismatched_endpoints_have_no_classical_path() {
        let sys = THooftSystem::rotation(1.0);
        let err = sample_paths(&sys, &cfg(vec![1.0, 0.0], vec![1.0, 0.0], 1.0, 0.1, 10), Execution::Sequential);
        assert!(matches!(err, Err(PathError::NoClassicalPath { .. })));
    }

    #[test]
    fn sigma_validation() {
        let sys = THooftSystem::zero(1);
        let e = sample_paths(&sys, &cfg(vec![0.0], vec![0.0], 1.0, 1e-12, 10), Execution::Sequential);
        assert!(matches!(e, Err(PathError::SigmaBelowFloor { .. })));
        let e = sample_paths(&sys, &cfg(vec![0.0], vec![0.0], 1.0, -0.1, 10), Execution::Sequential);
        assert!(matches!(e, Err(PathError::InvalidConfig(_))));
    }

    #[test]
    fn csv_header() {
        let sys = THooftSystem::zero(1);
        let e = sample_paths(&sys, &cfg(vec![0.0], vec![0.0], 1.0, 0.1, 10), Execution::Sequential).unwrap();
        assert!(e.to_csv().starts_with("t,q_mean,q_classical,deviation\n"));
    }

    fn traj(sys: &THooftSystem, q0: &[f64], t: f64) -> Trajectory {
        thooft::integrate(sys, q0, &vec![0.0; q0.len()], t, 1e-12).unwrap()
    }

    #[test]
    fn determinant_of_zero_flow_is_one() {
        let sys = THooftSystem::zero(2);
        let d = fluctuation_determinant(&sys, &traj(&sys, &[0.1, 0.2], 1.0), 16).unwrap();
        assert!(d.log_det_delta_route.abs() < 1e-12);
        assert!(d.log_det_monodromy_route.abs() < 1e-12);
        let g = ghost_cancellation_check(&sys, &traj(&sys, &[0.1, 0.2], 1.0), 16).unwrap();
        assert!(g.residual < 1e-14);
    }

    #[test]
    fn determinant_of_rotation_is_one() {
        let sys = THooftSystem::rotation(1.0);
        let d = fluctuation_determinant(&sys, &traj(&sys, &[1.0, 0.0], 2.0), 64).unwrap();
        assert!(d.log_det_delta_route.abs() < 1e-10);
        assert!(d.log_det_monodromy_route.abs() < 1e-10);
        assert!(d.abel_trace_integral.abs() < 1e-14);
        assert_eq!(d.sign_delta_route, 1.0);
    }

    #[test]
    fn determinant_of_exponential_flow() {
        let sys = exp_flow();
        let t = 0.7;
        let d = fluctuation_determinant(&sys, &traj(&sys, &[0.3], t), 256).unwrap();
        assert!((d.log_det_delta_route - t).abs() < 1e-10);
        assert!((d.log_det_monodromy_route - t).abs() < 1e-9);
        assert!(d.route_difference() < 1e-6);
        let g = ghost_cancellation_check(&sys, &traj(&sys, &[0.3], t), 256).unwrap();
        assert!((g.log_jacobian - t).abs() < 1e-10 && (g.log_det_m - t).abs() < 1e-10);
        assert!(g.residual < 1e-8);
    }

    #[test]
    fn polynomial_routes_agree_and_converge() {
        let sys = cubic_flow();
        let tr = traj(&sys, &[0.2], 1.0);
        let exact = fluctuation_determinant(&sys, &tr, 256).unwrap().log_det_monodromy_route;
        let errs: Vec<f64> = [32, 64, 128, 256]
            .iter()
            .map(|&n| (fluctuation_determinant(&sys, &tr, n).unwrap().log_det_delta_route - exact).abs())
            .collect();
        assert!(errs[3] < 1e-4, "{errs:?}");
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.0, "{errs:?}");
        }
        let g = ghost_cancellation_check(&sys, &tr, 256).unwrap();
        assert!(g.residual < 1e-8);
    }

    #[test]
    fn log_det_matches_direct_determinant() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, -1.0, 3.0, 1.0, 0.5, 0.0, -2.0]);
        let (l, s) = log_det(m.clone());
        let d = m.determinant();
        assert!((s * l.exp() - d).abs() < 1e-12 * d.abs());
    }
}
