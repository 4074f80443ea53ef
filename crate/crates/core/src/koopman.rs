//! Liouville transport of configuration-space densities, and the Koopman
//! point spectrum of a closed orbit.
//!
//! Because `q' = f(q)` closes on itself, a density over the be-ables evolves
//! by `rho_t(x) = rho_0(X_{-t}(x)) det(dX_{-t}/dx)`, independent of the
//! momenta. [`propagate`] applies this semi-Lagrangian pullback on a
//! cell-centred grid with multilinear interpolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{self, OdeOptions};
use crate::par::{self, Execution};
use crate::thooft::{self, OrbitSpectrum, THooftSystem, ThooftError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KoopmanError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{fraction:.3e} of the characteristics leave the non-periodic box")]
    ExitsDomain { fraction: f64 },
    #[error("orbit is not periodic: {0}")]
    Aperiodic(String),
    #[error(transparent)]
    Flow(#[from] ThooftError),
    #[error("malformed density file: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub periodic: Vec<bool>,
}

impl GridSpec {
    /// `n^2` cells on `[-half, half]^2`.
    pub fn square(half: f64, n: usize) -> Self {
        GridSpec { lo: vec![-half; 2], hi: vec![half; 2], shape: vec![n; 2], periodic: vec![false; 2] }
    }

    fn validate(&self) -> Result<(), KoopmanError> {
        let d = self.shape.len();
        if d == 0 || self.lo.len() != d || self.hi.len() != d {
            return Err(KoopmanError::InvalidGrid("lo, hi and shape must have the same non-zero length".into()));
        }
        if !self.periodic.is_empty() && self.periodic.len() != d {
            return Err(KoopmanError::InvalidGrid("periodic flags must match the dimension".into()));
        }
        if self.shape.iter().any(|&n| n < 2) {
            return Err(KoopmanError::InvalidGrid("need at least 2 cells per axis".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(h > l)) {
            return Err(KoopmanError::InvalidGrid("hi must exceed lo on every axis".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.shape[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    fn is_periodic(&self, axis: usize) -> bool {
        self.periodic.get(axis).copied().unwrap_or(false)
    }

    /// Centre of the cell with flat index `k` (last axis fastest).
    pub fn point(&self, mut k: usize) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        for a in (0..d).rev() {
            let i = k % self.shape[a];
            k /= self.shape[a];
            x[a] = self.lo[a] + (i as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self, KoopmanError> {
        grid.validate()?;
        let values = (0..grid.len()).map(|k| f(&grid.point(k)).max(0.0)).collect();
        Ok(GridDensity { grid, values })
    }

    /// Normalized isotropic Gaussian blob.
    pub fn gaussian(grid: GridSpec, centre: &[f64], width: f64) -> Result<Self, KoopmanError> {
        let d = centre.len();
        let norm = (2.0 * std::f64::consts::PI * width * width).powf(-(d as f64) / 2.0);
        Self::from_fn(grid, |x| {
            let r2: f64 = x.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
            norm * (-r2 / (2.0 * width * width)).exp()
        })
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `int |a - b| dx`.
    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.cell_volume()
    }

    /// `<q> = int q rho / int rho`.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut m = vec![0.0; d];
        let mut total = 0.0;
        for (k, v) in self.values.iter().enumerate() {
            let x = self.grid.point(k);
            for a in 0..d {
                m[a] += v * x[a];
            }
            total += v;
        }
        m.iter().map(|v| v / total).collect()
    }

    /// Multilinear interpolation between cell centres; constant beyond the
    /// outermost centres. `None` outside a non-periodic box.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let g = &self.grid;
        let d = g.dim();
        let mut base = vec![0usize; d];
        let mut upper = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let n = g.shape[a];
            let h = g.spacing(a);
            let mut s = (x[a] - g.lo[a]) / h - 0.5;
            if g.is_periodic(a) {
                s = s.rem_euclid(n as f64);
                let i = (s.floor() as usize).min(n - 1);
                base[a] = i;
                upper[a] = (i + 1) % n;
                frac[a] = s - i as f64;
            } else {
                if x[a] < g.lo[a] || x[a] > g.hi[a] {
                    return None;
                }
                let s = s.clamp(0.0, (n - 1) as f64);
                let i = (s.floor() as usize).min(n - 2);
                base[a] = i;
                upper[a] = i + 1;
                frac[a] = s - i as f64;
            }
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    idx[a] = upper[a];
                    w *= frac[a];
                } else {
                    idx[a] = base[a];
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[g.flat(&idx)];
            }
        }
        Some(acc)
    }

    /// Flat CSV preceded by a `# {json}` header line holding the grid.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\n", serde_json::to_string(&self.grid).expect("grid serializes"));
        let d = self.grid.dim();
        let cols: Vec<String> = (1..=d).map(|a| format!("q{a}")).collect();
        s.push_str(&format!("{},value\n", cols.join(",")));
        for (k, v) in self.values.iter().enumerate() {
            for x in self.grid.point(k) {
                s.push_str(&format!("{x},"));
            }
            s.push_str(&format!("{v}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, KoopmanError> {
        let mut lines = text.lines();
        let header = lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| KoopmanError::Parse("missing header".into()))?;
        let grid: GridSpec = serde_json::from_str(header).map_err(|e| KoopmanError::Parse(e.to_string()))?;
        grid.validate()?;
        lines.next();
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.rsplit(',')
                    .next()
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| KoopmanError::Parse(format!("bad row {l:?}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != grid.len() {
            return Err(KoopmanError::Parse(format!("{} values for {} cells", values.len(), grid.len())));
        }
        Ok(GridDensity { grid, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagateOptions {
    /// The interval is split into this many pullbacks, each interpolating.
    pub steps: usize,
    pub tol: f64,
    /// Treat departure points outside the box as zero density instead of
    /// failing.
    pub allow_exit: bool,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions { steps: 1, tol: 1e-8, allow_exit: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub mass_initial: f64,
    pub mass_final: f64,
    pub relative_mass_drift: f64,
    pub l2_initial: f64,
    pub l2_final: f64,
    /// Largest fraction of departure points outside the box in any step.
    pub exit_fraction: f64,
}

/// Semi-Lagrangian transport of `rho` for time `t` (negative runs the flow
/// backwards).
pub fn propagate(
    rho: &GridDensity,
    sys: &THooftSystem,
    t: f64,
    opts: &PropagateOptions,
    exec: Execution,
) -> Result<(GridDensity, PropagationReport), KoopmanError> {
    rho.grid.validate()?;
    if sys.dim() != rho.grid.dim() {
        return Err(KoopmanError::InvalidGrid(format!(
            "grid has dimension {}, flow has {}",
            rho.grid.dim(),
            sys.dim()
        )));
    }
    if opts.steps == 0 {
        return Err(KoopmanError::InvalidGrid("steps must be positive".into()));
    }
    let dt = t / opts.steps as f64;
    // Departure points and Jacobians depend only on the grid, so one set
    // serves every step.
    let departures = par::try_map_indexed(exec, rho.grid.len(), |k| {
        let x = rho.grid.point(k);
        thooft::flow_map_with_jacobian_det(sys, &x, -dt, opts.tol)
    })?;
    let mut cur = rho.clone();
    let mut exit_fraction = 0.0f64;
    for _ in 0..opts.steps {
        let src = &cur;
        let pulled: Vec<Option<f64>> =
            par::map_indexed(exec, src.grid.len(), |k| {
                let (x, det) = &departures[k];
                src.interpolate(x).map(|v| (v * det).max(0.0))
            });
        let exits = pulled.iter().filter(|v| v.is_none()).count();
        let frac = exits as f64 / pulled.len() as f64;
        exit_fraction = exit_fraction.max(frac);
        if exits > 0 && !opts.allow_exit {
            return Err(KoopmanError::ExitsDomain { fraction: frac });
        }
        cur = GridDensity { grid: src.grid.clone(), values: pulled.into_iter().map(|v| v.unwrap_or(0.0)).collect() };
    }
    let mass_initial = rho.mass();
    let mass_final = cur.mass();
    let report = PropagationReport {
        mass_initial,
        mass_final,
        relative_mass_drift: (mass_final - mass_initial).abs() / mass_initial.abs().max(f64::MIN_POSITIVE),
        l2_initial: rho.l2_norm(),
        l2_final: cur.l2_norm(),
        exit_fraction,
    };
    Ok((cur, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptions {
    /// Full turns of the tangent to count.
    pub windings: usize,
    pub tol: f64,
    /// Give up when the turns have not accumulated by this time.
    pub max_time: f64,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions { windings: 4, tol: 1e-12, max_time: 1e4 }
    }
}

/// Koopman eigenphases `n * w` (`n = 0..=n_max`, matching the orbit's level
/// count) on the orbit through `orbit.q0`.
///
/// The angular frequency `w` does not come from the orbit's period: it is
/// obtained by counting turns of the velocity vector `f(q(t))` in the plane
/// of its two most active components. A simple closed orbit turns its
/// tangent once per period, so the time `t_K` of `K` full turns gives
/// `w = 2 pi K / t_K`, and the Fourier modes `e^{i n theta}` of the angle
/// variable have frequencies `n w`.
pub fn koopman_orbit_phases(
    sys: &THooftSystem,
    orbit: &OrbitSpectrum,
    opts: &PhaseOptions,
) -> Result<Vec<f64>, KoopmanError> {
    let w = tangent_frequency(sys, &orbit.q0, opts)?;
    let n_max = orbit.levels.len().saturating_sub(1);
    Ok((0..=n_max).map(|n| n as f64 * w).collect())
}

/// Angular frequency from tangent turning; see [`koopman_orbit_phases`].
pub fn tangent_frequency(sys: &THooftSystem, q0: &[f64], opts: &PhaseOptions) -> Result<f64, KoopmanError> {
    let d = sys.dim();
    if d < 2 {
        return Err(KoopmanError::Aperiodic("tangent turning needs at least two dimensions".into()));
    }
    let f0 = sys.f(q0);
    let speed = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if speed < 1e-14 {
        return Err(KoopmanError::Aperiodic(format!("flow vanishes at {q0:?}")));
    }
    let (a, b) = {
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&i, &j| f0[j].abs().partial_cmp(&f0[i].abs()).unwrap_or(std::cmp::Ordering::Equal));
        // The tangent must have a component off its initial direction at
        // some point, so also weigh in how the flow turns.
        let jf = &sys.jacobian(q0) * nalgebra::DVector::from_column_slice(&f0);
        let mut best = (idx[0], idx[1.min(d - 1)], 0.0);
        for i in 0..d {
            for j in (i + 1)..d {
                let s = (f0[i] * f0[i] + f0[j] * f0[j]).sqrt() * (jf[i] * jf[i] + jf[j] * jf[j]).sqrt();
                if s > best.2 {
                    best = (i, j, s);
                }
            }
        }
        if best.2 <= 1e-14 {
            return Err(KoopmanError::Aperiodic("the tangent does not turn".into()));
        }
        (best.0, best.1)
    };
    // State (q, theta) with theta' = (f_a (Jf)_b - f_b (Jf)_a) / (f_a^2 + f_b^2).
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
        let q = &y[..d];
        let f = sys.f(q);
        let jf = &sys.jacobian(q) * nalgebra::DVector::from_column_slice(&f);
        dy[..d].copy_from_slice(&f);
        let den = f[a] * f[a] + f[b] * f[b];
        dy[d] = if den > 0.0 { (f[a] * jf[b] - f[b] * jf[a]) / den } else { 0.0 };
    };
    let target = 2.0 * std::f64::consts::PI * opts.windings as f64;
    let ode_opts = OdeOptions::with_tol(opts.tol);
    let mut y = q0.to_vec();
    y.push(0.0);
    let mut t = 0.0;
    let mut chunk = 1.0 / speed.max(1e-300);
    let mut crossing = None;
    while t < opts.max_time {
        let t_next = (t + chunk).min(opts.max_time);
        let mut last = (t, y.clone());
        let mut found = None;
        let (ys, _) = ode::integrate(rhs, t, &y, &[t_next], &ode_opts, |tt, yy| {
            if found.is_none() {
                if yy[d].abs() >= target {
                    found = Some((last.clone(), (tt, yy.to_vec())));
                } else {
                    last = (tt, yy.to_vec());
                }
            }
        })
        .map_err(ThooftError::from)?;
        if let Some(f) = found {
            crossing = Some(f);
            break;
        }
        y = ys.into_iter().next().expect("one target");
        t = t_next;
        chunk *= 2.0;
    }
    let Some(((ta, ya), (tb, yb))) = crossing else {
        return Err(KoopmanError::Aperiodic(format!(
            "tangent turned less than {} times by t = {}",
            opts.windings, opts.max_time
        )));
    };
    let sign = yb[d].signum();
    let g = |y: &[f64]| sign * y[d] - target;
    let (mut lo, mut glo) = (ta, g(&ya));
    let (mut hi, mut ghi) = (tb, g(&yb));
    let mut side = 0i8;
    let mut t_root = hi;
    for _ in 0..200 {
        if (hi - lo) <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        let mut c = (lo * ghi - hi * glo) / (ghi - glo);
        if !(c > lo && c < hi) {
            c = 0.5 * (lo + hi);
        }
        let (ys, _) = ode::integrate(rhs, ta, &ya, &[c], &OdeOptions::with_tol(opts.tol * 1e-2), |_, _| {})
            .map_err(ThooftError::from)?;
        let gc = g(&ys[0]);
        t_root = c;
        if gc == 0.0 {
            break;
        }
        if (gc < 0.0) == (glo < 0.0) {
            lo = c;
            glo = gc;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = c;
            ghi = gc;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(target / t_root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thooft::{integrate, orbit_spectrum, split, OrbitOptions};
    use std::f64::consts::PI;

    fn blob(n: usize, centre: &[f64]) -> GridDensity {
        GridDensity::gaussian(GridSpec::square(2.0, n), centre, 0.25).unwrap()
    }

    #[test]
    fn zero_flow_leaves_density_unchanged() {
        let rho = blob(32, &[0.5, 0.0]);
        let (out, rep) = propagate(&rho, &THooftSystem::zero(2), 1.3, &PropagateOptions::default(), Execution::Parallel)
            .unwrap();
        assert_eq!(out.values, rho.values);
        assert_eq!(rep.relative_mass_drift, 0.0);
    }

    #[test]
    fn blob_rotates_a_quarter_turn() {
        let rho = blob(128, &[1.0, 0.0]);
        let sys = THooftSystem::rotation(1.0);
        let (out, rep) =
            propagate(&rho, &sys, PI / 2.0, &PropagateOptions::default(), Execution::Parallel).unwrap();
        let m = out.mean();
        let h = rho.grid.spacing(0);
        assert!((m[0] - 0.0).abs() < h && (m[1] + 1.0).abs() < h, "{m:?}");
        assert!(rep.relative_mass_drift < 1e-3);
        assert!((rep.l2_final - rep.l2_initial).abs() < 1e-3 * rep.l2_initial);
    }

    #[test]
    fn mean_tracks_classical_path_within_a_cell() {
        let rho = blob(96, &[1.0, 0.0]);
        let sys = THooftSystem::rotation(1.0);
        let h = rho.grid.spacing(0);
        for t in [0.3, 1.1, 2.5] {
            let (out, _) = propagate(&rho, &sys, t, &PropagateOptions { steps: 4, allow_exit: true, ..Default::default() }, Execution::Parallel)
                .unwrap();
            let m = out.mean();
            assert!((m[0] - t.cos()).abs() < h && (m[1] + t.sin()).abs() < h, "t={t} {m:?}");
        }
    }

    #[test]
    fn full_period_error_shrinks_with_resolution() {
        let sys = THooftSystem::rotation(1.0);
        let opts = PropagateOptions { steps: 8, allow_exit: true, ..Default::default() };
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| {
                let rho = blob(n, &[0.8, 0.0]);
                let (out, _) = propagate(&rho, &sys, 2.0 * PI, &opts, Execution::Parallel).unwrap();
                out.l1_distance(&rho) / rho.mass()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn exit_is_reported() {
        let rho = blob(16, &[0.0, 0.0]);
        let sys = THooftSystem::linear(nalgebra::DMatrix::identity(2, 2)).unwrap();
        let err = propagate(&rho, &sys, -2.0, &PropagateOptions::default(), Execution::Sequential).unwrap_err();
        match err {
            KoopmanError::ExitsDomain { fraction } => assert!(fraction > 0.5),
            other => panic!("{other:?}"),
        }
        let (_, rep) = propagate(
            &rho,
            &sys,
            -2.0,
            &PropagateOptions { allow_exit: true, ..Default::default() },
            Execution::Sequential,
        )
        .unwrap();
        assert!(rep.exit_fraction > 0.5);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let rho = blob(24, &[0.7, 0.2]);
        let sys = THooftSystem::twisted_rotation();
        let opts = PropagateOptions { allow_exit: true, ..Default::default() };
        let a = propagate(&rho, &sys, 0.4, &opts, Execution::Parallel).unwrap();
        let b = propagate(&rho, &sys, 0.4, &opts, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = GridSpec { lo: vec![0.0, -1.0], hi: vec![1.0, 1.0], shape: vec![5, 7], periodic: vec![] };
        let rho = GridDensity::from_fn(g, |x| 1.0 + 2.0 * x[0] + 0.5 * x[1]).unwrap();
        for x in [[0.3, 0.2], [0.51, -0.7], [0.8, 0.0]] {
            let v = rho.interpolate(&x).unwrap();
            assert!((v - (1.0 + 2.0 * x[0] + 0.5 * x[1])).abs() < 1e-12);
        }
        assert_eq!(rho.interpolate(&[1.5, 0.0]), None);
    }

    #[test]
    fn periodic_axis_wraps() {
        let g = GridSpec { lo: vec![0.0], hi: vec![1.0], shape: vec![4], periodic: vec![true] };
        let rho = GridDensity { grid: g, values: vec![1.0, 2.0, 3.0, 4.0] };
        // Between the last centre (0.875) and the first one wrapped (1.125).
        assert!((rho.interpolate(&[1.0]).unwrap() - 2.5).abs() < 1e-12);
        assert!((rho.interpolate(&[-0.875]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let rho = blob(8, &[0.0, 0.3]);
        let back = GridDensity::from_csv(&rho.to_csv()).unwrap();
        assert_eq!(back.grid, rho.grid);
        for (a, b) in back.values.iter().zip(&rho.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    fn orbit(sys: &THooftSystem, q0: [f64; 2], t: f64) -> OrbitSpectrum {
        let tr = integrate(sys, &q0, &[0.0, 0.0], t, 1e-12).unwrap();
        let s = split(sys, &[1.0]).unwrap();
        orbit_spectrum(sys, &tr, &s, 10, &OrbitOptions::default()).unwrap()
    }

    #[test]
    fn phases_of_rotations() {
        for omega in [1.0, 3.0] {
            let sys = THooftSystem::rotation(omega);
            let o = orbit(&sys, [0.9, 0.1], 2.5 * 2.0 * PI / omega);
            let ph = koopman_orbit_phases(&sys, &o, &PhaseOptions::default()).unwrap();
            assert_eq!(ph.len(), 11);
            for (n, p) in ph.iter().enumerate() {
                assert!((p - omega * n as f64).abs() <= 1e-9 * (omega * n as f64).max(1.0));
                assert!((p - o.levels[n]).abs() <= 1e-9 * p.abs().max(1.0));
            }
        }
    }

    #[test]
    fn phases_of_twisted_rotation_depend_on_radius() {
        let sys = THooftSystem::twisted_rotation();
        let w = tangent_frequency(&sys, &[1.0, 0.0], &PhaseOptions::default()).unwrap();
        assert!((w - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_flow_has_no_phases() {
        let sys = THooftSystem::zero(2);
        let o = orbit(&THooftSystem::rotation(1.0), [1.0, 0.0], 8.0);
        assert!(matches!(
            koopman_orbit_phases(&sys, &o, &PhaseOptions::default()),
            Err(KoopmanError::Aperiodic(_))
        ));
    }
}
