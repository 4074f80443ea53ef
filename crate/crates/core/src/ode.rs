//! Adaptive Dormand-Prince 5(4) integrator.
//!
//! One controller drives the whole state vector, so callers that append a
//! variational equation to the flow get both integrated with the same steps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t_last_good} (h = {h:e}); flow is stiff or singular here")]
    StepUnderflow { t_last_good: f64, h: f64 },
    #[error("non-finite state encountered after t = {t_last_good}")]
    NonFinite { t_last_good: f64 },
    #[error("exceeded {max_steps} steps before reaching t = {t_target} (last good t = {t_last_good})")]
    MaxSteps { max_steps: usize, t_target: f64, t_last_good: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest allowed |h|; `None` means the full interval.
    pub max_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-12, max_step: None, max_steps: 1_000_000 }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol * 1e-2, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand-Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = rhs(t, y)` from `t0` through each time in `targets`
/// (monotone, all on the same side of `t0`). The state at every target is
/// returned; `observer` additionally sees every accepted step, including
/// the initial point.
pub fn integrate<F, O>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    targets: &[f64],
    opts: &OdeOptions,
    mut observer: O,
) -> Result<(Vec<Vec<f64>>, OdeStats), OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]),
{
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(targets.len());
    let mut t = t0;
    let mut y = y0.to_vec();
    observer(t, &y);
    let Some(&t_last) = targets.last() else {
        return Ok((out, stats));
    };
    let dir = if t_last >= t0 { 1.0 } else { -1.0 };
    let span = (t_last - t0).abs();
    let max_step = opts.max_step.unwrap_or(span).min(span).max(f64::MIN_POSITIVE);

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    rhs(t, &y, &mut k1);
    stats.evaluations += 1;
    let mut h = initial_step(&mut rhs, t, &y, &k1, dir, opts, max_step, &mut stats);

    for &target in targets {
        debug_assert!((target - t) * dir >= 0.0, "targets must be monotone");
        while (target - t) * dir > 0.0 {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(OdeError::MaxSteps { max_steps: opts.max_steps, t_target: target, t_last_good: t });
            }
            let remaining = (target - t).abs();
            let mut hh = h.abs().min(max_step);
            let last = hh >= remaining * (1.0 - 1e-12);
            if last {
                hh = remaining;
            }
            let hs = hh * dir;
            if hh <= 1e-14 * t.abs().max(1.0) && !last {
                return Err(OdeError::StepUnderflow { t_last_good: t, h: hh });
            }

            for i in 0..n {
                ytmp[i] = y[i] + hs * A21 * k1[i];
            }
            rhs(t + C2 * hs, &ytmp, &mut k2);
            for i in 0..n {
                ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(t + C3 * hs, &ytmp, &mut k3);
            for i in 0..n {
                ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + C4 * hs, &ytmp, &mut k4);
            for i in 0..n {
                ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + C5 * hs, &ytmp, &mut k5);
            for i in 0..n {
                ytmp[i] = y[i]
                    + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + hs, &ytmp, &mut k6);
            for i in 0..n {
                ynew[i] = y[i] + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            let t_new = if last { target } else { t + hs };
            rhs(t_new, &ynew, &mut k7);
            stats.evaluations += 6;

            let mut err: f64 = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((e / sc).abs());
                finite &= ynew[i].is_finite();
            }
            if !finite || !err.is_finite() {
                stats.rejected += 1;
                if hh <= 1e-14 * t.abs().max(1.0) {
                    return Err(OdeError::NonFinite { t_last_good: t });
                }
                h = hh * 0.1;
                continue;
            }
            if err <= 1.0 {
                stats.accepted += 1;
                t = t_new;
                std::mem::swap(&mut y, &mut ynew);
                std::mem::swap(&mut k1, &mut k7);
                observer(t, &y);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // A clamped final step says nothing about the natural step size.
                h = if last { h.abs().max(hh) } else { hh * fac };
            } else {
                stats.rejected += 1;
                h = hh * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    opts: &OdeOptions,
    max_step: f64,
    stats: &mut OdeStats,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        if n == 0 {
            return 0.0;
        }
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(max_step);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + dir * h0 * b).collect();
    let mut f1 = vec![0.0; n];
    rhs(t + dir * h0, &y1, &mut f1);
    stats.evaluations += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(max_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let (ys, stats) = integrate(
            |_, y, dy| dy[0] = y[0],
            0.0,
            &[1.0],
            &[0.5, 1.0],
            &OdeOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((ys[0][0] - 0.5f64.exp()).abs() < 1e-9);
        assert!((ys[1][0] - 1f64.exp()).abs() < 1e-9);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn backward_in_time() {
        let (ys, _) = integrate(
            |_, y, dy| dy[0] = y[0],
            1.0,
            &[1f64.exp()],
            &[0.0],
            &OdeOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((ys[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_phase_accuracy() {
        let tau = 2.0 * std::f64::consts::PI;
        let opts = OdeOptions { rtol: 1e-12, atol: 1e-14, ..Default::default() };
        let (ys, _) = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            &[tau],
            &opts,
            |_, _| {},
        )
        .unwrap();
        assert!((ys[0][0] - 1.0).abs() < 1e-10);
        assert!(ys[0][1].abs() < 1e-10);
    }

    #[test]
    fn blow_up_reports_last_good_time() {
        // y' = y^2, y(0) = 1 blows up at t = 1.
        let err = integrate(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], &[2.0], &OdeOptions::default(), |_, _| {})
            .unwrap_err();
        match err {
            OdeError::StepUnderflow { t_last_good, .. } | OdeError::NonFinite { t_last_good } => {
                assert!(t_last_good < 1.0 && t_last_good > 0.99)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
