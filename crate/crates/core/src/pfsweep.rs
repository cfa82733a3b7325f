//! Forward/backward sweep power flow on the branch-flow equations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{DerMode, RadialNetwork};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 200;

/// Squared voltage below which the sweep is abandoned.
const COLLAPSE_V: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("sweep did not converge in {sweeps} sweeps (last change {change:.3e})")]
    NoConvergence { sweeps: usize, change: f64 },
    #[error("squared voltage at bus {bus} fell to {v:.4}")]
    NegativeVoltage { bus: usize, v: f64 },
    #[error("dispatch has {got} entries, network has {expected} buses")]
    DispatchLength { expected: usize, got: usize },
}

/// DER injections per bus (zero where there is no DER).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Dispatch {
    pub fn zeros(n: usize) -> Self {
        Dispatch { p: vec![0.0; n], q: vec![0.0; n] }
    }

    /// Measured outputs for reactive-dispatch devices, zero otherwise.
    pub fn nominal(network: &RadialNetwork) -> Self {
        let mut d = Self::zeros(network.num_buses());
        for b in network.buses() {
            if let Some(der) = &b.der {
                if der.mode == DerMode::ReactiveDispatch {
                    d.p[b.id] = der.p_measured;
                }
            }
        }
        d
    }
}

/// Bus voltages and branch flows. Branch vectors are indexed like
/// [`RadialNetwork::branches`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
}

impl NetworkState {
    pub fn flat(network: &RadialNetwork) -> Self {
        let nb = network.branches().len();
        NetworkState {
            v: vec![network.v0(); network.num_buses()],
            p: vec![0.0; nb],
            q: vec![0.0; nb],
            l: vec![0.0; nb],
        }
    }
}

/// Converged sweep result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSolution {
    pub state: NetworkState,
    pub sweeps: usize,
}

/// Solves the branch-flow equations with the DER dispatch held fixed.
///
/// Backward sweeps accumulate branch flows from the leaves using the current
/// current estimates; forward sweeps propagate squared voltages from the
/// substation and refresh `l = (P² + Q²) / v_from`.
pub fn solve_power_flow(
    network: &RadialNetwork,
    dispatch: &Dispatch,
    tol: f64,
    max_sweeps: usize,
) -> Result<SweepSolution, SweepError> {
    let n = network.num_buses();
    if dispatch.p.len() != n || dispatch.q.len() != n {
        return Err(SweepError::DispatchLength { expected: n, got: dispatch.p.len() });
    }
    let branches = network.branches();
    let order = network.order();
    let mut st = NetworkState::flat(network);
    let mut acc_p = vec![0.0; n];
    let mut acc_q = vec![0.0; n];
    let mut change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        change = 0.0f64;
        for b in network.buses() {
            acc_p[b.id] = b.p_load - dispatch.p[b.id];
            acc_q[b.id] = b.q_load - dispatch.q[b.id];
        }
        for &u in order.iter().rev() {
            let Some(k) = network.parent_branch(u) else { continue };
            let br = &branches[k];
            let p = acc_p[u] + br.r * st.l[k];
            let q = acc_q[u] + br.x * st.l[k];
            change = change.max((p - st.p[k]).abs()).max((q - st.q[k]).abs());
            st.p[k] = p;
            st.q[k] = q;
            acc_p[br.from] += p;
            acc_q[br.from] += q;
        }
        for &u in order {
            let Some(k) = network.parent_branch(u) else { continue };
            let br = &branches[k];
            let vi = st.v[br.from];
            let v = vi - 2.0 * (br.r * st.p[k] + br.x * st.q[k])
                + (br.r * br.r + br.x * br.x) * st.l[k];
            if !(v >= COLLAPSE_V) {
                return Err(SweepError::NegativeVoltage { bus: u, v });
            }
            let l = (st.p[k] * st.p[k] + st.q[k] * st.q[k]) / vi;
            change = change.max((v - st.v[u]).abs()).max((l - st.l[k]).abs());
            st.v[u] = v;
            st.l[k] = l;
        }
        if change < tol {
            return Ok(SweepSolution { state: st, sweeps: sweep });
        }
    }
    Err(SweepError::NoConvergence { sweeps: max_sweeps, change })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageViolation {
    pub bus: usize,
    /// Distance outside the band in squared per-unit.
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentViolation {
    pub branch: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub undervoltage: Vec<VoltageViolation>,
    pub overvoltage: Vec<VoltageViolation>,
    pub overcurrent: Vec<CurrentViolation>,
}

impl LimitReport {
    pub fn is_empty(&self) -> bool {
        self.undervoltage.is_empty() && self.overvoltage.is_empty() && self.overcurrent.is_empty()
    }
}

/// Lists buses outside the voltage band and branches above their ampacity.
/// Bounds are closed.
pub fn check_limits(state: &NetworkState, network: &RadialNetwork) -> LimitReport {
    let lim = network.limits();
    let mut report = LimitReport::default();
    for (bus, &v) in state.v.iter().enumerate() {
        if v < lim.v_min_sq {
            report.undervoltage.push(VoltageViolation { bus, amount: lim.v_min_sq - v });
        } else if v > lim.v_max_sq {
            report.overvoltage.push(VoltageViolation { bus, amount: v - lim.v_max_sq });
        }
    }
    for (branch, (br, &l)) in network.branches().iter().zip(&state.l).enumerate() {
        if l > br.i_rated_sq {
            report.overcurrent.push(CurrentViolation { branch, amount: l - br.i_rated_sq });
        }
    }
    report
}

/// Active losses `Σ r l`.
pub fn total_loss(state: &NetworkState, network: &RadialNetwork) -> f64 {
    network.branches().iter().zip(&state.l).map(|(br, l)| br.r * l).sum()
}

/// Active and reactive power drawn from the substation.
pub fn substation_injection(state: &NetworkState, network: &RadialNetwork) -> (f64, f64) {
    network
        .branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| br.from == network.substation())
        .fold((0.0, 0.0), |(p, q), (k, _)| (p + state.p[k], q + state.q[k]))
}
