//! Executes a scenario into an in-memory set of artifacts, then writes them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use detlab::discrete::{self, DeterministicAutomaton};
use detlab::fj::{self, FirstOrderLagrangian, MultiplierTerm, ReduceOptions};
use detlab::koopman::{self, GridDensity, GridSpec, PhaseOptions, PropagateOptions};
use detlab::nalgebra::DMatrix;
use detlab::ode::{self, OdeOptions};
use detlab::par::Execution;
use detlab::pathint::{self, PathConfig};
use detlab::poly::{Monomial, Polynomial, RationalFunction};
use detlab::thooft::{self, FlowField, HamiltonianFn, OrbitOptions, PhaseBox, StepRule, THooftSystem};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::{Experiment, Scenario, Source, SystemSpec, Term};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) | RunError::Io { .. } => 3,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

/// File name to contents; `summary.json` is always present.
pub type Artifacts = BTreeMap<String, String>;

fn poly_from_terms(terms: &[Term], names: &[String]) -> Result<Polynomial, RunError> {
    let ms: Vec<Monomial> = terms
        .iter()
        .map(|t| {
            let mut exponents = vec![0u32; names.len()];
            for (var, &k) in &t.powers {
                let i = names
                    .iter()
                    .position(|n| n == var)
                    .ok_or_else(|| RunError::Validation(format!("unknown variable {var:?}")))?;
                exponents[i] += k;
            }
            Ok(Monomial { coeff: t.coeff, exponents })
        })
        .collect::<Result<_, RunError>>()?;
    Polynomial::from_monomials(names.len(), &ms).map_err(|e| RunError::Validation(e.to_string()))
}

pub fn build_system(spec: &SystemSpec) -> Result<THooftSystem, RunError> {
    let invalid = |e: thooft::ThooftError| RunError::Validation(e.to_string());
    Ok(match spec {
        SystemSpec::Zero { dim } => THooftSystem::zero(*dim),
        SystemSpec::Rotation { omega } => THooftSystem::rotation(*omega),
        SystemSpec::TwistedRotation => THooftSystem::twisted_rotation(),
        SystemSpec::AxialRotation3d { omega } => THooftSystem::axial_rotation_3d(*omega),
        SystemSpec::Linear { matrix } => {
            let n = matrix.len();
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            THooftSystem::linear(DMatrix::from_row_slice(n, n, &flat)).map_err(invalid)?
        }
        SystemSpec::Polynomial { flow, charges, half_width } => {
            let n = flow.len();
            let names: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
            let comps = flow.iter().map(|t| poly_from_terms(t, &names)).collect::<Result<Vec<_>, _>>()?;
            let charges = charges.iter().map(|t| poly_from_terms(t, &names)).collect::<Result<Vec<_>, _>>()?;
            let f = FlowField::polynomial(comps).map_err(invalid)?;
            THooftSystem::new("polynomial", f, charges, PhaseBox::cube(n, *half_width)).map_err(invalid)?
        }
    })
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Runs the experiment; nothing touches the filesystem.
pub fn execute(s: &Scenario, exec: Execution) -> Result<Artifacts, RunError> {
    let mut files = Artifacts::new();
    let summary = match &s.experiment {
        Experiment::Discrete { next, dt, convention } => {
            let a = DeterministicAutomaton::new(next.iter().map(|k| k - 1).collect())
                .map_err(|e| RunError::Validation(e.to_string()))?;
            let u = discrete::transition_matrix(&a, *dt);
            let partition = discrete::equivalence_classes(&a);
            let q = discrete::quotient(&a, &partition).map_err(numerical)?;
            let uq = discrete::transition_matrix(&q, *dt);
            let spec = discrete::spectrum(&uq, *convention).map_err(numerical)?;
            let mut tm = String::from("row");
            for j in 1..=u.dim() {
                write!(tm, ",c{j}").unwrap();
            }
            tm.push('\n');
            for (i, row) in u.real_rows().iter().enumerate() {
                write!(tm, "{}", i + 1).unwrap();
                for x in row {
                    write!(tm, ",{x}").unwrap();
                }
                tm.push('\n');
            }
            files.insert("transition.csv".into(), tm);
            files.insert("spectrum.csv".into(), spec.to_csv());
            json!({
                "n_states": a.n_states(),
                "injective": a.is_injective(),
                "unitarity_defect": u.unitarity_defect(),
                "classes": partition.labels_one_based(),
                "quotient_next": q.next_map().iter().map(|k| k + 1).collect::<Vec<_>>(),
                "quotient_cycle_type": q.cycle_type(),
                "quotient_unitarity_defect": uq.unitarity_defect(),
                "eigenphases": spec.eigenphases,
                "energies": spec.hamiltonian_eigenvalues,
            })
        }
        Experiment::Flow { system, q0, p0, t_final, samples } => {
            let sys = build_system(system)?;
            let times: Vec<f64> = (1..=*samples).map(|k| t_final * k as f64 / *samples as f64).collect();
            let tr = thooft::integrate_at(&sys, q0, p0, &times, s.tol).map_err(numerical)?;
            let mut drift: Vec<f64> = vec![0.0; sys.charges().len()];
            for q in &tr.q {
                for (i, d) in drift.iter_mut().enumerate() {
                    *d = d.max((sys.charge(i, q) - sys.charge(i, q0)).abs());
                }
            }
            let (ln_det, sign) = pathint::log_det(tr.monodromy_matrix());
            let h0 = sys.hamiltonian(q0, p0);
            let h_drift = tr.q.iter().zip(&tr.p).map(|(q, p)| (sys.hamiltonian(q, p) - h0).abs()).fold(0.0, f64::max);
            files.insert("trajectory.csv".into(), tr.to_csv());
            json!({
                "system": sys.name,
                "q_final": tr.q_final(),
                "p_final": tr.p_final(),
                "monodromy": tr.monodromy,
                "ln_abs_det_monodromy": ln_det,
                "sign_det_monodromy": sign,
                "max_charge_drift": drift,
                "max_hamiltonian_drift": h_drift,
                "ode_stats": tr.stats,
            })
        }
        Experiment::SplitSpectrum { system, coefficients, q0, p0, t_final, n_max, return_delta } => {
            let sys = build_system(system)?;
            let sp = thooft::split(&sys, coefficients).map_err(|e| RunError::Validation(e.to_string()))?;
            let tr = thooft::integrate(&sys, q0, p0, *t_final, s.tol).map_err(numerical)?;
            let opts = OrbitOptions { delta: *return_delta, ..OrbitOptions::default() };
            let orbit = thooft::orbit_spectrum(&sys, &tr, &sp, *n_max, &opts).map_err(numerical)?;
            let mut identity: f64 = 0.0;
            let mut bracket: f64 = 0.0;
            let mut h_bracket: f64 = 0.0;
            for (q, p) in tr.q.iter().zip(&tr.p) {
                identity = identity.max((sp.h_plus(q, p) - sp.h_minus(q, p) - sp.h(q, p)).abs());
                let b = thooft::poisson_bracket(&sp.plus(), &sp.minus(), q, p, StepRule::default());
                bracket = bracket.max(b.value.abs());
                let bh = thooft::poisson_bracket(&sp.plus(), &HamiltonianFn(&sys), q, p, StepRule::default());
                h_bracket = h_bracket.max(bh.value.abs());
            }
            files.insert("levels.csv".into(), orbit.to_csv());
            files.insert("trajectory.csv".into(), tr.to_csv());
            json!({
                "system": sys.name,
                "coefficients": coefficients,
                "period": orbit.period,
                "return_distance": orbit.return_distance,
                "rho": orbit.rho_value,
                "winding_ratio": orbit.winding_ratio,
                "quantum_number": orbit.quantum_number,
                "levels": orbit.levels,
                "max_split_identity_defect": identity,
                "max_bracket_plus_minus": bracket,
                "max_bracket_plus_h": h_bracket,
            })
        }
        Experiment::Reduce { coordinates, hamiltonian, constraints, xi0, t_final, samples } => {
            let mut names: Vec<String> = coordinates.iter().map(|q| format!("p_{q}")).collect();
            names.extend(coordinates.iter().cloned());
            let h: RationalFunction = poly_from_terms(hamiltonian, &names)?.into();
            let mults = constraints
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    Ok(MultiplierTerm { constraint: poly_from_terms(c, &names)?.into(), label: format!("eta{}", i + 1) })
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            let labels: Vec<&str> = coordinates.iter().map(String::as_str).collect();
            let l = FirstOrderLagrangian::canonical(&labels, h, mults.clone())
                .map_err(|e| RunError::Validation(e.to_string()))?;
            let r = fj::fj_reduce(&l, &ReduceOptions::default()).map_err(numerical)?;
            files.insert("reduction_log.json".into(), format!("{}\n", r.elimination_log_json()));
            let mut kin = String::from("row,col,value\n");
            for i in 0..r.kinetic.nrows() {
                for j in 0..r.kinetic.ncols() {
                    writeln!(kin, "{},{},{}", r.labels[i], r.labels[j], r.kinetic[(i, j)]).unwrap();
                }
            }
            files.insert("kinetic.csv".into(), kin);
            let mut all_labels = names.clone();
            all_labels.extend(mults.iter().map(|m| m.label.clone()));
            let mut flow_gap = Value::Null;
            if let Some(xi0) = xi0 {
                if r.canonical_dim == r.labels.len() {
                    let times: Vec<f64> = (1..=*samples).map(|k| t_final * k as f64 / *samples as f64).collect();
                    let opts = OdeOptions::with_tol(s.tol);
                    let zeros = vec![0.0; mults.len()];
                    let (orig, _) = ode::integrate(
                        |_, y: &[f64], dy: &mut [f64]| match l.velocity(y, &zeros) {
                            Ok(v) => dy.copy_from_slice(&v),
                            Err(_) => dy.fill(f64::NAN),
                        },
                        0.0,
                        xi0,
                        &times,
                        &opts,
                        |_, _| {},
                    )
                    .map_err(numerical)?;
                    let with_eta = |x: &[f64]| {
                        let mut v = x.to_vec();
                        v.extend(&zeros);
                        v
                    };
                    let z0 = r.project(&with_eta(xi0));
                    let (red, _) = ode::integrate(
                        |_, z: &[f64], dz: &mut [f64]| match r.velocity(z) {
                            Ok(v) => dz.copy_from_slice(&v),
                            Err(_) => dz.fill(f64::NAN),
                        },
                        0.0,
                        &z0,
                        &times,
                        &opts,
                        |_, _| {},
                    )
                    .map_err(numerical)?;
                    let mut csv = String::from("t");
                    for lab in &r.labels {
                        write!(csv, ",{lab},{lab}_projected").unwrap();
                    }
                    csv.push('\n');
                    let mut gap: f64 = 0.0;
                    write!(csv, "0").unwrap();
                    for z in &z0 {
                        write!(csv, ",{z},{z}").unwrap();
                    }
                    csv.push('\n');
                    for ((t, x), z) in times.iter().zip(&orig).zip(&red) {
                        let pz = r.project(&with_eta(x));
                        write!(csv, "{t}").unwrap();
                        for (a, b) in z.iter().zip(&pz) {
                            gap = gap.max((a - b).abs());
                            write!(csv, ",{a},{b}").unwrap();
                        }
                        csv.push('\n');
                    }
                    if !gap.is_finite() {
                        return Err(RunError::Numerical("flow comparison produced non-finite values".into()));
                    }
                    files.insert("reduced_flow.csv".into(), csv);
                    flow_gap = json!(gap);
                }
            }
            json!({
                "status": r.status,
                "canonical_dim": r.canonical_dim,
                "canonical_pairs": r.canonical_dim / 2,
                "labels": r.labels,
                "reduced_hamiltonian": r.reduced_hamiltonian.render(&r.labels),
                "constraints": r.constraints.iter().map(|c| c.field.render(&all_labels)).collect::<Vec<_>>(),
                "rounds": r.rounds,
                "max_flow_gap": flow_gap,
            })
        }
        Experiment::SamplePaths {
            system,
            q_start,
            q_end,
            t_start,
            t_end,
            n_slices,
            n_samples,
            sigma,
            sigmas,
            endpoint_tol,
            determinant_slices,
        } => {
            let sys = build_system(system)?;
            let cfg = PathConfig {
                q_start: q_start.clone(),
                q_end: q_end.clone(),
                t_start: *t_start,
                t_end: *t_end,
                n_slices: *n_slices,
                sigma: *sigma,
                n_samples: *n_samples,
                seed: s.seed,
                endpoint_tol: *endpoint_tol,
                ode_tol: s.tol,
            };
            let path_err = |e: pathint::PathError| match e {
                pathint::PathError::InvalidConfig(_) | pathint::PathError::SigmaBelowFloor { .. } => {
                    RunError::Validation(e.to_string())
                }
                other => numerical(other),
            };
            let ens = pathint::sample_paths(&sys, &cfg, exec).map_err(path_err)?;
            files.insert("paths.csv".into(), ens.to_csv());
            let row = pathint::MomentRow::from_ensemble(&ens);
            let mut ladder = Value::Null;
            if !sigmas.is_empty() {
                let rep = pathint::moment_ladder(&sys, &cfg, sigmas, exec).map_err(path_err)?;
                let mut csv = String::from("sigma,mean_deviation,mean_square_deviation,effective_sample_size,two_point_mid\n");
                for r in &rep.rows {
                    writeln!(
                        csv,
                        "{},{},{},{},{}",
                        r.sigma, r.mean_deviation, r.mean_square_deviation, r.effective_sample_size, r.two_point_mid
                    )
                    .unwrap();
                }
                files.insert("moments.csv".into(), csv);
                ladder = json!({
                    "fitted_exponent": rep.fitted_exponent,
                    "monotone_msd": rep.monotone_msd,
                    "monotone_mean_deviation": rep.monotone_mean_deviation,
                });
            }
            let mut det = Value::Null;
            if *determinant_slices > 0 {
                let p0 = vec![0.0; sys.dim()];
                let tr = thooft::integrate(&sys, q_start, &p0, t_end - t_start, s.tol).map_err(numerical)?;
                let fd = pathint::fluctuation_determinant(&sys, &tr, *determinant_slices).map_err(path_err)?;
                let g = pathint::ghost_cancellation_check(&sys, &tr, *determinant_slices).map_err(path_err)?;
                det = json!({
                    "n_slices": fd.n_slices,
                    "log_det_delta_route": fd.log_det_delta_route,
                    "log_det_monodromy_route": fd.log_det_monodromy_route,
                    "route_difference": fd.route_difference(),
                    "abel_trace_integral": fd.abel_trace_integral,
                    "ghost_log_jacobian": g.log_jacobian,
                    "ghost_log_det_m": g.log_det_m,
                    "ghost_residual": g.residual,
                });
            }
            json!({
                "system": sys.name,
                "seed": s.seed,
                "proposal": ens.proposal,
                "moments": row,
                "ladder": ladder,
                "determinants": det,
            })
        }
        Experiment::Koopman {
            system,
            grid,
            half_width,
            centre,
            width,
            t,
            steps,
            allow_exit,
            orbit_time,
            n_max,
        } => {
            let sys = build_system(system)?;
            let d = sys.dim();
            let spec = GridSpec { lo: vec![-half_width; d], hi: vec![*half_width; d], shape: vec![*grid; d], periodic: vec![] };
            let rho0 = GridDensity::gaussian(spec, centre, *width).map_err(|e| RunError::Validation(e.to_string()))?;
            let opts = PropagateOptions { steps: *steps, tol: s.tol, allow_exit: *allow_exit };
            let (rho, rep) = koopman::propagate(&rho0, &sys, *t, &opts, exec).map_err(numerical)?;
            let l1 = rho.l1_distance(&rho0) / rho0.mass();
            files.insert("density_initial.csv".into(), rho0.to_csv());
            files.insert("density_final.csv".into(), rho.to_csv());
            let mut phases = Value::Null;
            if let Some(ot) = orbit_time {
                let coeffs = vec![1.0; sys.charges().len()];
                let sp = thooft::split(&sys, &coeffs).map_err(numerical)?;
                let tr = thooft::integrate(&sys, centre, &vec![0.0; d], *ot, s.tol).map_err(numerical)?;
                let orbit = thooft::orbit_spectrum(&sys, &tr, &sp, *n_max, &OrbitOptions::default()).map_err(numerical)?;
                let ph = koopman::koopman_orbit_phases(&sys, &orbit, &PhaseOptions { tol: s.tol, ..Default::default() })
                    .map_err(numerical)?;
                let mut csv = String::from("n,koopman_phase,orbit_level\n");
                let mut gap: f64 = 0.0;
                for (n, (a, b)) in ph.iter().zip(&orbit.levels).enumerate() {
                    writeln!(csv, "{n},{a},{b}").unwrap();
                    gap = gap.max((a - b).abs() / b.abs().max(1.0));
                }
                files.insert("phases.csv".into(), csv);
                phases = json!({ "period": orbit.period, "max_relative_gap": gap });
            }
            json!({
                "system": sys.name,
                "grid": grid,
                "steps": steps,
                "report": rep,
                "relative_l1_change": l1,
                "mean_initial": rho0.mean(),
                "mean_final": rho.mean(),
                "phases": phases,
            })
        }
    };
    let summary = json!({ "scenario": s.name, "kind": s.experiment.kind(), "results": summary });
    files.insert("summary.json".into(), json_text(&summary));
    Ok(files)
}

pub struct RunInfo<'a> {
    pub source: &'a Source,
    pub started: SystemTime,
    pub wall: f64,
}

fn manifest(s: &Scenario, files: &Artifacts, info: &RunInfo) -> String {
    let mut m = String::new();
    writeln!(m, "scenario: {}", s.name).unwrap();
    writeln!(m, "kind: {}", s.experiment.kind()).unwrap();
    writeln!(m, "source: {}", info.source).unwrap();
    writeln!(m, "seed: {}", s.seed).unwrap();
    writeln!(m, "tol: {:e}", s.tol).unwrap();
    writeln!(m, "detlab: {}", detlab::VERSION).unwrap();
    writeln!(m, "detlab-cli: {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(m, "parallel: {}", Execution::Parallel.is_parallel()).unwrap();
    let started = info.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    writeln!(m, "started_unix: {started}").unwrap();
    writeln!(m, "wall_time_s: {:.3}", info.wall).unwrap();
    writeln!(m, "files:").unwrap();
    for (name, body) in files {
        let digest = Sha256::digest(body.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        writeln!(m, "  {name} {} bytes sha256={hex}", body.len()).unwrap();
    }
    writeln!(m, "config:").unwrap();
    for line in s.to_toml().lines() {
        writeln!(m, "  {line}").unwrap();
    }
    m
}

/// Executes and writes `<out>/<name>/`; returns the directory.
pub fn run_to_dir(s: &Scenario, source: &Source, out: &Path, exec: Execution) -> Result<PathBuf, RunError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let files = execute(s, exec)?;
    let wall = clock.elapsed().as_secs_f64();
    let dir = out.join(&s.name);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    for (name, body) in &files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(io(&p))?;
    }
    let p = dir.join("manifest.txt");
    std::fs::write(&p, manifest(s, &files, &RunInfo { source, started, wall })).map_err(io(&p))?;
    Ok(dir)
}
