//! Fixed-point coordination of area subproblems.
//!
//! Each macro-iteration solves every area with the boundary vector from the
//! previous iteration, gathers the exported interface values, damps them
//! with `Y = (Y_new + α Y_prev) / (1 + α)` and stops once the largest
//! component change is within `eps_tol`.

use std::time::{Duration, Instant};

use dopf_nlp::{solve_in, NlpOptions, NlpSolution, Status, Workspace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Power, RadialNetwork};
use crate::opf::{
    build_central, build_subproblem, evaluate_objective, AreaBoundary, AreaExport, Objective,
    OpfError, OpfProblem, OpfSettings,
};
use crate::partition::{interface_schedule, Partition, QuantityKind};
use crate::pfsweep::{self, Dispatch, NetworkState, SweepError};

/// Environment variable overriding the number of worker threads.
pub const THREADS_ENV: &str = "DOPF_THREADS";

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("boundary vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("area {area} subproblem failed at macro-iteration {iteration}: {status:?}, violation {violation:.3e}")]
    SubproblemFailure { area: usize, iteration: usize, status: Status, violation: f64 },
    #[error("no consensus after {} macro-iterations (last residual {:.3e})", .record.macro_iterations, .record.final_residual())]
    NoConsensus { record: Box<RunRecord> },
    #[error("central solve exceeded its time budget ({elapsed:.1?} > {budget:.1?})")]
    TimeBudgetExceeded { elapsed: Duration, budget: Duration },
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error("solver error: {0}")]
    Nlp(#[from] dopf_nlp::NlpError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Boundary vector `Y` laid out by [`interface_schedule`]: per interface, the
/// parent-side squared voltage then the flow `(P, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub y_current: Vec<f64>,
    pub y_previous: Vec<f64>,
}

/// Offset of interface `i` in the boundary vector.
fn slot(i: usize) -> usize {
    i * (QuantityKind::VoltageDown.slots() + QuantityKind::FlowUp.slots())
}

/// Flat voltages and lossless downstream demand on every interface.
pub fn initialize_boundary(network: &RadialNetwork, partition: &Partition) -> BoundaryState {
    let agg = network.downstream_loads();
    let mut y = vec![0.0; slot(partition.interfaces.len())];
    for (i, itf) in partition.interfaces.iter().enumerate() {
        y[slot(i)] = network.v0();
        y[slot(i) + 1] = agg[itf.bus].p;
        y[slot(i) + 2] = agg[itf.bus].q;
    }
    BoundaryState { y_previous: y.clone(), y_current: y }
}

/// Damped update `(y_new + α y_prev) / (1 + α)`, evaluated as
/// `y_prev + (y_new - y_prev) / (1 + α)` so fixed points are kept exactly.
pub fn fpi_update(y_new: &[f64], y_prev: &[f64], alpha: f64) -> Result<Vec<f64>, CoordinatorError> {
    if y_new.len() != y_prev.len() {
        return Err(CoordinatorError::LengthMismatch(y_new.len(), y_prev.len()));
    }
    if alpha == 0.0 {
        return Ok(y_new.to_vec());
    }
    Ok(y_new.iter().zip(y_prev).map(|(a, b)| b + (a - b) / (1.0 + alpha)).collect())
}

/// Largest absolute componentwise difference; zero for empty vectors.
pub fn residual(y_current: &[f64], y_previous: &[f64]) -> Result<f64, CoordinatorError> {
    if y_current.len() != y_previous.len() {
        return Err(CoordinatorError::LengthMismatch(y_current.len(), y_previous.len()));
    }
    Ok(y_current.iter().zip(y_previous).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpiConfig {
    pub alpha: f64,
    pub eps_tol: f64,
    /// Optional separate tolerance on the voltage slots of the residual;
    /// when set, convergence also requires their largest change to be
    /// within it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_tol: Option<f64>,
    pub max_macro_iters: usize,
    /// Worker threads; `None` uses `DOPF_THREADS` or the hardware default.
    pub threads: Option<usize>,
    pub kkt_tol: f64,
    pub max_nlp_iters: usize,
    /// Barrier parameter used when a subproblem is warm started.
    pub warm_mu: f64,
    /// Largest constraint violation accepted from an area whose elastic
    /// retry could not reach exact feasibility. Such areas are recorded as
    /// [`AreaStatus::Relaxed`]; anything worse aborts the run.
    #[serde(default = "default_relaxed_tol")]
    pub relaxed_tol: f64,
    /// Order in which area solves are submitted; results never depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution_order: Option<Vec<usize>>,
    /// Keep the boundary vector of every macro-iteration in the record.
    #[serde(default)]
    pub record_trajectory: bool,
}

fn default_relaxed_tol() -> f64 {
    1e-4
}

impl Default for FpiConfig {
    fn default() -> Self {
        FpiConfig {
            alpha: 0.0,
            eps_tol: 1e-3,
            voltage_tol: None,
            max_macro_iters: 500,
            threads: None,
            kkt_tol: 1e-8,
            max_nlp_iters: 300,
            warm_mu: 1e-4,
            relaxed_tol: default_relaxed_tol(),
            execution_order: None,
            record_trajectory: false,
        }
    }
}

impl FpiConfig {
    /// Defaults with the damping used for `objective`.
    pub fn for_objective(objective: Objective) -> Self {
        FpiConfig { alpha: objective.default_alpha(), ..FpiConfig::default() }
    }

    fn cold_options(&self) -> NlpOptions {
        NlpOptions { kkt_tol: self.kkt_tol, max_iter: self.max_nlp_iters, ..NlpOptions::default() }
    }

    fn warm_options(&self) -> NlpOptions {
        NlpOptions { mu_init: self.warm_mu, bound_push: 1e-8, ..self.cold_options() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AreaStatus {
    Optimal,
    MaxIterations,
    /// Elastic solution with a violation within `relaxed_tol`.
    Relaxed,
    Infeasible,
}

impl From<Status> for AreaStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Optimal => AreaStatus::Optimal,
            Status::MaxIterations => AreaStatus::MaxIterations,
            Status::Infeasible => AreaStatus::Infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub residual: f64,
    /// Objective reassembled from the area solutions, in reporting units.
    pub objective: f64,
    pub area_status: Vec<AreaStatus>,
    pub area_time_s: Vec<f64>,
    pub max_area_time_s: f64,
    /// Time spent outside the area solves (exchange, update, bookkeeping).
    pub coordinator_time_s: f64,
    pub nlp_iterations: usize,
}

/// Re-simulation of an assembled dispatch with the sweep solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// Largest `| |V|_opt - |V|_sweep |` in per-unit.
    pub max_voltage_mismatch: f64,
    pub max_flow_mismatch: f64,
    pub sweep_objective: f64,
    pub sweeps: usize,
    pub limit_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    Central,
    Distributed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: RunMode,
    pub objective_kind: Objective,
    pub objective_unit: String,
    pub num_buses: usize,
    pub num_areas: usize,
    pub config: FpiConfig,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub macro_iterations: usize,
    /// Final objective in reporting units.
    pub objective: f64,
    pub state: NetworkState,
    pub dispatch: Dispatch,
    pub verification: Option<Verification>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn final_residual(&self) -> f64 {
        self.iterations.last().map_or(0.0, |i| i.residual)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    /// Highest squared voltage of the assembled state.
    pub fn max_v(&self) -> f64 {
        self.state.v.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CoordinatorError> {
    let n = threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CoordinatorError::Pool(e.to_string()))
}

/// Compares an assembled state against a sweep of the same dispatch.
pub fn verify(
    network: &RadialNetwork,
    objective: Objective,
    state: &NetworkState,
    dispatch: &Dispatch,
) -> Result<Verification, SweepError> {
    let sweep = pfsweep::solve_power_flow(
        network,
        dispatch,
        pfsweep::DEFAULT_TOL,
        pfsweep::DEFAULT_MAX_SWEEPS,
    )?;
    let s = &sweep.state;
    let max_voltage_mismatch =
        state.v.iter().zip(&s.v).fold(0.0f64, |m, (a, b)| m.max((a.sqrt() - b.sqrt()).abs()));
    let max_flow_mismatch = (0..s.p.len())
        .fold(0.0f64, |m, k| m.max((state.p[k] - s.p[k]).abs()).max((state.q[k] - s.q[k]).abs()));
    let report = pfsweep::check_limits(s, network);
    Ok(Verification {
        max_voltage_mismatch,
        max_flow_mismatch,
        sweep_objective: evaluate_objective(objective, network, s, dispatch),
        sweeps: sweep.sweeps,
        limit_violations: report.undervoltage.len()
            + report.overvoltage.len()
            + report.overcurrent.len(),
    })
}

struct AreaWorker {
    problem: OpfProblem,
    x: Vec<f64>,
    warm: bool,
    ws: Workspace,
    result: Option<AreaResult>,
}

struct AreaResult {
    status: Status,
    violation: f64,
    iterations: usize,
    time_s: f64,
    objective: f64,
    export: AreaExport,
}

fn boundary_for(partition: &Partition, area: usize, y: &[f64]) -> AreaBoundary {
    let a = &partition.areas[area];
    let idx = |bus: usize| {
        partition.interfaces.binary_search_by_key(&bus, |i| i.bus).expect("interface exists")
    };
    AreaBoundary {
        v_parent: a.root_interface.map(|k| y[slot(idx(k))]),
        child_flows: a
            .child_interfaces
            .iter()
            .map(|&k| {
                let s = slot(idx(k));
                Power::new(y[s + 1], y[s + 2])
            })
            .collect(),
    }
}

fn solve_worker(w: &mut AreaWorker, partition: &Partition, cold: &NlpOptions, warm: &NlpOptions) {
    let started = Instant::now();
    let opts = if w.warm { warm } else { cold };
    let sol: Result<NlpSolution, _> = solve_in(&w.problem, &w.x, opts, &mut w.ws);
    let time_s = started.elapsed().as_secs_f64();
    let area = &partition.areas[w.problem.area().expect("area problem")];
    w.result = Some(match sol {
        Ok(sol) => {
            w.x.copy_from_slice(&sol.x);
            w.warm = true;
            AreaResult {
                status: sol.status,
                violation: sol.constraint_violation,
                iterations: sol.iterations,
                time_s,
                objective: sol.objective,
                export: w.problem.extract_boundary(&sol.x, area),
            }
        }
        Err(e) => {
            log::warn!("area {}: solver error {e}", area.id);
            AreaResult {
                status: Status::Infeasible,
                violation: f64::INFINITY,
                iterations: 0,
                time_s,
                objective: f64::NAN,
                export: AreaExport::default(),
            }
        }
    });
}

/// Runs the fixed-point iteration over `partition`.
pub fn run_distributed(
    network: &RadialNetwork,
    partition: &Partition,
    objective: Objective,
    config: &FpiConfig,
) -> Result<RunRecord, CoordinatorError> {
    let started = Instant::now();
    let settings = OpfSettings::for_network(network, objective);
    let agg = network.downstream_loads();
    let mut state = initialize_boundary(network, partition);
    let schedule_len = interface_schedule(partition).len();
    debug_assert_eq!(schedule_len, 2 * partition.interfaces.len());

    let mut workers: Vec<AreaWorker> = Vec::with_capacity(partition.num_areas());
    for a in &partition.areas {
        let problem = build_subproblem(
            a,
            network,
            settings,
            &boundary_for(partition, a.id, &state.y_current),
        )?;
        let x = problem.flat_start(&agg);
        workers.push(AreaWorker { problem, x, warm: false, ws: Workspace::new(), result: None });
    }
    let order: Vec<usize> = match &config.execution_order {
        Some(o) => {
            let mut check = o.clone();
            check.sort_unstable();
            assert!(
                check == (0..workers.len()).collect::<Vec<_>>(),
                "execution order must be a permutation of the area ids"
            );
            o.clone()
        }
        None => (0..workers.len()).collect(),
    };
    let pool = thread_pool(config.threads)?;
    let cold = config.cold_options();
    let warm = config.warm_options();

    let mut iterations = Vec::new();
    let mut trajectory = Vec::new();
    let mut converged = false;
    for n in 1..=config.max_macro_iters {
        let t_coord = Instant::now();
        for (w, a) in workers.iter_mut().zip(&partition.areas) {
            let b = boundary_for(partition, a.id, &state.y_previous);
            w.problem.set_boundary(&b);
        }
        let mut slots: Vec<Option<&mut AreaWorker>> = workers.iter_mut().map(Some).collect();
        let mut queue: Vec<&mut AreaWorker> =
            order.iter().map(|&i| slots[i].take().expect("each area once")).collect();
        let coord_before = t_coord.elapsed().as_secs_f64();
        pool.install(|| {
            queue.par_iter_mut().for_each(|w| solve_worker(w, partition, &cold, &warm));
        });
        drop(queue);
        let t_after = Instant::now();

        let mut record = IterationRecord {
            n,
            residual: 0.0,
            objective: 0.0,
            area_status: Vec::with_capacity(workers.len()),
            area_time_s: Vec::with_capacity(workers.len()),
            max_area_time_s: 0.0,
            coordinator_time_s: 0.0,
            nlp_iterations: 0,
        };
        let mut raw_objective = 0.0;
        for (id, w) in workers.iter().enumerate() {
            let r = w.result.as_ref().expect("area solved");
            let relaxed = r.status == Status::Infeasible && r.violation <= config.relaxed_tol;
            if r.status == Status::Infeasible && !relaxed {
                return Err(CoordinatorError::SubproblemFailure {
                    area: id,
                    iteration: n,
                    status: r.status,
                    violation: r.violation,
                });
            }
            if r.status != Status::Optimal {
                log::warn!(
                    "macro-iteration {n}: area {id} stopped with {:?} (violation {:.2e})",
                    r.status,
                    r.violation
                );
            }
            raw_objective += r.objective;
            record.area_status.push(if relaxed { AreaStatus::Relaxed } else { r.status.into() });
            record.area_time_s.push(r.time_s);
            record.max_area_time_s = record.max_area_time_s.max(r.time_s);
            record.nlp_iterations += r.iterations;
        }
        record.objective = objective.report(raw_objective, network.base_kva());

        let mut y_new = state.y_previous.clone();
        for (i, itf) in partition.interfaces.iter().enumerate() {
            let parent = &partition.areas[itf.parent_area];
            let pos = parent
                .child_interfaces
                .binary_search(&itf.bus)
                .expect("interface listed by its parent");
            let pe = &workers[itf.parent_area].result.as_ref().expect("solved").export;
            let ce = &workers[itf.child_area].result.as_ref().expect("solved").export;
            let f = ce.flow_up.expect("child area exports its top flow");
            y_new[slot(i)] = pe.voltage_down[pos];
            y_new[slot(i) + 1] = f.p;
            y_new[slot(i) + 2] = f.q;
        }
        state.y_current = fpi_update(&y_new, &state.y_previous, config.alpha)?;
        let e = residual(&state.y_current, &state.y_previous)?;
        let e_v = (0..partition.interfaces.len()).fold(0.0f64, |m, i| {
            m.max((state.y_current[slot(i)] - state.y_previous[slot(i)]).abs())
        });
        state.y_previous.clone_from(&state.y_current);
        record.residual = e;
        record.coordinator_time_s = coord_before + t_after.elapsed().as_secs_f64();
        log::info!(
            "macro-iteration {n}: residual {e:.3e}, objective {:.6} {}, max area time {:.3}s",
            record.objective,
            objective.unit(),
            record.max_area_time_s
        );
        if config.record_trajectory {
            trajectory.push(state.y_current.clone());
        }
        iterations.push(record);
        if e <= config.eps_tol && config.voltage_tol.is_none_or(|t| e_v <= t) {
            converged = true;
            break;
        }
    }

    let mut full = NetworkState::flat(network);
    let mut dispatch = Dispatch::nominal(network);
    for w in &workers {
        w.problem.write_state(&w.x, &mut full, &mut dispatch);
    }
    let verification = match verify(network, objective, &full, &dispatch) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("verification sweep failed: {e}");
            None
        }
    };
    let record = RunRecord {
        mode: RunMode::Distributed,
        objective_kind: objective,
        objective_unit: objective.unit().to_string(),
        num_buses: network.num_buses(),
        num_areas: partition.num_areas(),
        config: config.clone(),
        macro_iterations: iterations.len(),
        objective: evaluate_objective(objective, network, &full, &dispatch),
        iterations,
        converged,
        state: full,
        dispatch,
        verification,
        wall_time_s: started.elapsed().as_secs_f64(),
        trajectory,
    };
    if converged {
        Ok(record)
    } else {
        Err(CoordinatorError::NoConsensus { record: Box::new(record) })
    }
}

/// Solves the whole network as one problem within `time_budget`.
pub fn run_central(
    network: &RadialNetwork,
    objective: Objective,
    kkt_tol: f64,
    time_budget: Duration,
) -> Result<RunRecord, CoordinatorError> {
    let started = Instant::now();
    let settings = OpfSettings::for_network(network, objective);
    let problem = build_central(network, settings);
    let x0 = problem.flat_start(&network.downstream_loads());
    let opts = NlpOptions { kkt_tol, time_limit: Some(time_budget), ..NlpOptions::default() };
    let sol = solve_in(&problem, &x0, &opts, &mut Workspace::new())?;
    let elapsed = started.elapsed();
    if !sol.is_optimal() {
        if elapsed > time_budget {
            return Err(CoordinatorError::TimeBudgetExceeded { elapsed, budget: time_budget });
        }
        return Err(CoordinatorError::SubproblemFailure {
            area: 0,
            iteration: 1,
            status: sol.status,
            violation: sol.constraint_violation,
        });
    }
    let mut state = NetworkState::flat(network);
    let mut dispatch = Dispatch::nominal(network);
    problem.write_state(&sol.x, &mut state, &mut dispatch);
    let verification = verify(network, objective, &state, &dispatch).ok();
    let time_s = elapsed.as_secs_f64();
    let config = FpiConfig { kkt_tol, ..FpiConfig::default() };
    Ok(RunRecord {
        mode: RunMode::Central,
        objective_kind: objective,
        objective_unit: objective.unit().to_string(),
        num_buses: network.num_buses(),
        num_areas: 1,
        config,
        iterations: vec![IterationRecord {
            n: 1,
            residual: 0.0,
            objective: objective.report(sol.objective, network.base_kva()),
            area_status: vec![sol.status.into()],
            area_time_s: vec![time_s],
            max_area_time_s: time_s,
            coordinator_time_s: 0.0,
            nlp_iterations: sol.iterations,
        }],
        converged: true,
        macro_iterations: 1,
        objective: evaluate_objective(objective, network, &state, &dispatch),
        state,
        dispatch,
        verification,
        wall_time_s: started.elapsed().as_secs_f64(),
        trajectory: Vec::new(),
    })
}
