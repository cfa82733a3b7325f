//! Branch-flow OPF problems for a whole network or one area.
//!
//! Variables are grouped per bus. A bus with an incoming branch `j -> k`
//! contributes `[P_jk, Q_jk, l_jk, v_k]` followed by its dispatch slot when
//! it hosts a DER; the substation contributes `v_0` only. Every bus with an
//! incoming branch carries four equality rows:
//!
//! ```txt
//! (a) P_jk - r l_jk - p_Lk + p_Dk - Σ_c P_kc = 0
//! (b) Q_jk - x l_jk - q_Lk + q_Dk - Σ_c Q_kc = 0
//! (c) v_k - v_j + 2 (r P_jk + x Q_jk) - (r² + x²) l_jk = 0
//! (d) v_j l_jk - P_jk² - Q_jk² = 0
//! ```
//!
//! and the substation carries the pin `v_0 - v0 = 0`. In an area, `v_j` of
//! the top bus's parent and the flows `(P_kc, Q_kc)` into child areas are
//! constants taken from the boundary state.
//!
//! Voltage slots hold the scaled deviation `u = (v - v0) / σ` rather than
//! `v` itself, and rows (c) and the pin are divided by `σ`. On feeders with
//! very small branch impedances the voltage differences between buses are
//! far below any practical solver tolerance in raw units; choosing `σ` as
//! the nominal feeder voltage drop brings them to order one.

use std::collections::HashMap;

use dopf_nlp::{NlpProblem, Sense};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Power, RadialNetwork};
use crate::partition::Area;
use crate::pfsweep::{Dispatch, NetworkState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Minimize `Σ r l`; DERs dispatch reactive power.
    LossMin,
    /// Maximize `Σ p_D`; DERs dispatch active power with no reactive output.
    DerMax,
    /// Minimize `Σ (v - v_ref)²`; DERs dispatch reactive power.
    DeltaVMin,
}

impl Objective {
    pub fn dispatches_active(self) -> bool {
        self == Objective::DerMax
    }

    /// Substation squared voltage used for this objective's studies.
    pub fn default_v0(self) -> f64 {
        match self {
            Objective::DerMax => 1.05 * 1.05,
            Objective::LossMin | Objective::DeltaVMin => 1.0,
        }
    }

    /// Constant FPI damping used with this objective.
    pub fn default_alpha(self) -> f64 {
        match self {
            Objective::DerMax => 2.33,
            Objective::LossMin | Objective::DeltaVMin => 0.0,
        }
    }

    /// Converts a summed per-unit objective into its reporting unit: kW for
    /// losses and generation, per-unit norm for voltage deviation.
    pub fn report(self, raw: f64, base_kva: f64) -> f64 {
        match self {
            Objective::LossMin | Objective::DerMax => raw * base_kva,
            Objective::DeltaVMin => raw.max(0.0).sqrt(),
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Objective::LossMin | Objective::DerMax => "kW",
            Objective::DeltaVMin => "pu",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpfError {
    #[error("area {area}: missing boundary value for interface bus {bus}")]
    DanglingInterface { area: usize, bus: usize },
}

/// Objective choice and solver-side scaling shared by every problem built
/// for one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpfSettings {
    pub objective: Objective,
    /// Multiplier applied to the objective inside the NLP solver.
    pub scale: f64,
    /// Offset of the scaled voltage variables (the substation voltage).
    pub v_base: f64,
    /// Divisor of the scaled voltage variables.
    pub v_scale: f64,
}

impl OpfSettings {
    /// Scales voltages by the nominal lossless feeder drop and picks an
    /// objective scale that brings gradients to order one: the inverse
    /// largest resistance for losses and, for voltage deviation, the inverse
    /// of twice the nominal worst deviation in scaled voltage units.
    pub fn for_network(network: &RadialNetwork, objective: Objective) -> Self {
        let drop = nominal_drop(network);
        let v_scale = if drop > 0.0 { drop.clamp(1e-6, 1.0) } else { 1.0 };
        let scale = match objective {
            Objective::LossMin => {
                let r_max = network.branches().iter().fold(0.0f64, |m, b| m.max(b.r));
                if r_max > 0.0 {
                    1.0 / r_max
                } else {
                    1.0
                }
            }
            Objective::DerMax => 1.0,
            Objective::DeltaVMin => {
                let dev = nominal_deviation(network);
                1.0 / (2.0 * dev * v_scale).max(1e-12)
            }
        };
        OpfSettings { objective, scale, v_base: network.v0(), v_scale }
    }
}

/// Largest lossless linearized squared-voltage drop under nominal loads.
fn nominal_drop(network: &RadialNetwork) -> f64 {
    let agg = network.downstream_loads();
    let mut v = vec![0.0; network.num_buses()];
    let mut worst = 0.0f64;
    for &u in network.order() {
        if let Some(k) = network.parent_branch(u) {
            let b = &network.branches()[k];
            v[u] = v[b.from] - 2.0 * (b.r * agg[u].p + b.x * agg[u].q);
            worst = worst.max(v[u].abs());
        }
    }
    worst
}

/// Largest lossless linearized squared-voltage deviation under nominal
/// injections, plus the substation's own offset from the reference.
fn nominal_deviation(network: &RadialNetwork) -> f64 {
    let agg = network.downstream_loads();
    let mut v = vec![network.v0(); network.num_buses()];
    let mut worst = 0.0f64;
    for &u in network.order() {
        if let Some(k) = network.parent_branch(u) {
            let b = &network.branches()[k];
            v[u] = v[b.from] - 2.0 * (b.r * agg[u].p + b.x * agg[u].q);
            worst = worst.max((v[u] - network.v0()).abs());
        }
    }
    worst + (network.v0() - network.limits().v_ref_sq).abs()
}

/// Boundary constants of one area.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AreaBoundary {
    /// Squared voltage of the parent-side bus of the area's top branch.
    pub v_parent: Option<f64>,
    /// Flow into each child area, aligned with `Area::child_interfaces`.
    pub child_flows: Vec<Power>,
}

/// Values an area exports after a solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AreaExport {
    /// Flow on the area's top branch, sent to the parent area.
    pub flow_up: Option<Power>,
    /// Squared voltage at the parent-side bus of each child interface,
    /// aligned with `Area::child_interfaces`.
    pub voltage_down: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Upstream {
    Substation(f64),
    Local(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DerVar {
    /// Active output is the variable; no reactive output.
    Active,
    /// Reactive output is the variable; active output fixed.
    Reactive { p: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    bus: usize,
    off: usize,
    row: usize,
    upstream: Upstream,
    r: f64,
    x: f64,
    load: Power,
    der: Option<DerVar>,
    local_children: Vec<usize>,
    /// Sum of child-area flows at this bus.
    fixed_children: Power,
}

/// Index map from buses and branches to variable slots.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    /// Global bus ids in local order.
    pub buses: Vec<usize>,
    /// Global index of the branch entering each local bus.
    pub branches: Vec<Option<usize>>,
    offsets: Vec<usize>,
    der: Vec<Option<usize>>,
    local: HashMap<usize, usize>,
    n_vars: usize,
}

impl VariableLayout {
    pub fn num_vars(&self) -> usize {
        self.n_vars
    }

    pub fn local_index(&self, bus: usize) -> Option<usize> {
        self.local.get(&bus).copied()
    }

    fn branch_slot(&self, t: usize, k: usize) -> Option<usize> {
        self.branches[t].map(|_| self.offsets[t] + k)
    }

    pub fn p(&self, t: usize) -> Option<usize> {
        self.branch_slot(t, 0)
    }

    pub fn q(&self, t: usize) -> Option<usize> {
        self.branch_slot(t, 1)
    }

    pub fn l(&self, t: usize) -> Option<usize> {
        self.branch_slot(t, 2)
    }

    pub fn v(&self, t: usize) -> usize {
        self.offsets[t] + if self.branches[t].is_some() { 3 } else { 0 }
    }

    pub fn der(&self, t: usize) -> Option<usize> {
        self.der[t]
    }
}

/// One branch-flow OPF instance.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    settings: OpfSettings,
    layout: VariableLayout,
    nodes: Vec<Node>,
    child_slots: Vec<(usize, usize)>,
    n_eq: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    v_ref: f64,
    area: Option<usize>,
}

/// Builds the OPF over the whole network.
pub fn build_central(network: &RadialNetwork, settings: OpfSettings) -> OpfProblem {
    OpfProblem::assemble(network, settings, network.order(), None, &AreaBoundary::default(), &[])
}

/// Builds the OPF restricted to `area` with its boundary constants.
pub fn build_subproblem(
    area: &Area,
    network: &RadialNetwork,
    settings: OpfSettings,
    boundary: &AreaBoundary,
) -> Result<OpfProblem, OpfError> {
    if !area.is_root() && boundary.v_parent.is_none() {
        return Err(OpfError::DanglingInterface { area: area.id, bus: area.top() });
    }
    if boundary.child_flows.len() < area.child_interfaces.len() {
        let bus = area.child_interfaces[boundary.child_flows.len()];
        return Err(OpfError::DanglingInterface { area: area.id, bus });
    }
    Ok(OpfProblem::assemble(
        network,
        settings,
        &area.buses,
        Some(area.id),
        boundary,
        &area.child_interfaces,
    ))
}

impl OpfProblem {
    fn assemble(
        network: &RadialNetwork,
        settings: OpfSettings,
        buses: &[usize],
        area: Option<usize>,
        boundary: &AreaBoundary,
        child_interfaces: &[usize],
    ) -> OpfProblem {
        let local: HashMap<usize, usize> = buses.iter().enumerate().map(|(t, &b)| (b, t)).collect();
        let active = settings.objective.dispatches_active();
        let limits = network.limits();
        let mut nodes = Vec::with_capacity(buses.len());
        let mut offsets = Vec::with_capacity(buses.len());
        let mut branches = Vec::with_capacity(buses.len());
        let mut der_slots = Vec::with_capacity(buses.len());
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut row = 0;
        for &bus in buses {
            let off = lo.len();
            offsets.push(off);
            let b = &network.buses()[bus];
            let kb = network.parent_branch(bus);
            branches.push(kb);
            let (upstream, r, x) = match kb {
                None => (Upstream::Substation(network.v0()), 0.0, 0.0),
                Some(k) => {
                    let br = &network.branches()[k];
                    let up = match local.get(&br.from) {
                        Some(&t) => Upstream::Local(t),
                        None => Upstream::Fixed(boundary.v_parent.unwrap_or(network.v0())),
                    };
                    lo.extend([f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]);
                    hi.extend([f64::INFINITY, f64::INFINITY, br.i_rated_sq]);
                    (up, br.r, br.x)
                }
            };
            if kb.is_some() {
                lo.push((limits.v_min_sq - settings.v_base) / settings.v_scale);
                hi.push((limits.v_max_sq - settings.v_base) / settings.v_scale);
            } else {
                lo.push(f64::NEG_INFINITY);
                hi.push(f64::INFINITY);
            }
            let der = b.der.and_then(|d| {
                let (dl, dh, var) = if active {
                    (0.0, d.rating, DerVar::Active)
                } else {
                    let qm = d.q_max();
                    (-qm, qm, DerVar::Reactive { p: d.p_measured })
                };
                if dh > dl {
                    lo.push(dl);
                    hi.push(dh);
                    Some(var)
                } else {
                    None
                }
            });
            der_slots.push(der.map(|_| lo.len() - 1));
            let mut local_children = Vec::new();
            for &c in network.children_of(bus) {
                if let Some(&t) = local.get(&c) {
                    local_children.push(t);
                }
            }
            nodes.push(Node {
                bus,
                off,
                row,
                upstream,
                r,
                x,
                load: b.load(),
                der,
                local_children,
                fixed_children: Power::ZERO,
            });
            row += if kb.is_some() { 4 } else { 1 };
        }
        // Child-area flows enter the balance at the parent-side bus.
        let mut child_slots = Vec::with_capacity(child_interfaces.len());
        for (i, &k) in child_interfaces.iter().enumerate() {
            let j = network.parent(k).expect("interface bus has a parent");
            let t = local[&j];
            child_slots.push((i, t));
            let f = boundary.child_flows.get(i).copied().unwrap_or_default();
            nodes[t].fixed_children += f;
        }
        let n_vars = lo.len();
        OpfProblem {
            settings,
            layout: VariableLayout {
                buses: buses.to_vec(),
                branches,
                offsets,
                der: der_slots,
                local,
                n_vars,
            },
            nodes,
            child_slots,
            n_eq: row,
            lo,
            hi,
            v_ref: limits.v_ref_sq,
            area,
        }
    }

    pub fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    pub fn settings(&self) -> OpfSettings {
        self.settings
    }

    pub fn area(&self) -> Option<usize> {
        self.area
    }

    /// Replaces the boundary constants without touching the structure.
    pub fn set_boundary(&mut self, boundary: &AreaBoundary) {
        for n in self.nodes.iter_mut() {
            n.fixed_children = Power::ZERO;
            if let (Upstream::Fixed(v), Some(vp)) = (&mut n.upstream, boundary.v_parent) {
                *v = vp;
            }
        }
        for &(i, t) in &self.child_slots {
            let f = boundary.child_flows.get(i).copied().unwrap_or_default();
            self.nodes[t].fixed_children += f;
        }
    }

    /// Squared voltage from a scaled voltage variable.
    fn v_of(&self, u: f64) -> f64 {
        self.settings.v_base + self.settings.v_scale * u
    }

    /// Scaled voltage variable from a squared voltage.
    fn u_of(&self, v: f64) -> f64 {
        (v - self.settings.v_base) / self.settings.v_scale
    }

    /// Squared voltage of local bus `t`.
    fn bus_v(&self, t: usize, x: &[f64]) -> f64 {
        self.v_of(x[self.layout.v(t)])
    }

    fn upstream_u(&self, n: &Node, x: &[f64]) -> f64 {
        match n.upstream {
            Upstream::Substation(v) | Upstream::Fixed(v) => self.u_of(v),
            Upstream::Local(t) => x[self.layout.v(t)],
        }
    }

    fn upstream_v(&self, n: &Node, x: &[f64]) -> f64 {
        match n.upstream {
            Upstream::Substation(v) | Upstream::Fixed(v) => v,
            Upstream::Local(t) => self.bus_v(t, x),
        }
    }

    /// Flat start: upstream voltage everywhere, lossless downstream flows,
    /// consistent currents and zero dispatch.
    pub fn flat_start(&self, aggregates: &[Power]) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.n_vars];
        let v_start = self
            .nodes
            .iter()
            .find_map(|n| match n.upstream {
                Upstream::Substation(v) | Upstream::Fixed(v) => Some(v),
                Upstream::Local(_) => None,
            })
            .unwrap_or(1.0);
        for (t, n) in self.nodes.iter().enumerate() {
            let vi = self.layout.v(t);
            x[vi] = self.u_of(v_start).clamp(self.lo[vi], self.hi[vi]);
            if self.layout.branches[t].is_some() {
                let s = aggregates[n.bus];
                x[n.off] = s.p;
                x[n.off + 1] = s.q;
                x[n.off + 2] = (s.p * s.p + s.q * s.q) / v_start;
            }
        }
        x
    }

    /// Objective in per-unit, unscaled, in the problem's own sense.
    pub fn raw_objective(&self, x: &[f64]) -> f64 {
        self.objective(x)
    }

    /// Values this area exports to its neighbors.
    pub fn extract_boundary(&self, x: &[f64], area: &Area) -> AreaExport {
        let flow_up =
            area.root_interface.map(|_| Power::new(x[self.nodes[0].off], x[self.nodes[0].off + 1]));
        let voltage_down = self.child_slots.iter().map(|&(_, t)| self.bus_v(t, x)).collect();
        AreaExport { flow_up, voltage_down }
    }

    /// Writes the variables owned by this problem into global arrays.
    pub fn write_state(&self, x: &[f64], state: &mut NetworkState, dispatch: &mut Dispatch) {
        for (t, n) in self.nodes.iter().enumerate() {
            state.v[n.bus] = self.bus_v(t, x);
            if let Some(k) = self.layout.branches[t] {
                state.p[k] = x[n.off];
                state.q[k] = x[n.off + 1];
                state.l[k] = x[n.off + 2];
            }
            match n.der {
                Some(DerVar::Active) => {
                    dispatch.p[n.bus] = x[self.layout.der[t].unwrap()];
                    dispatch.q[n.bus] = 0.0;
                }
                Some(DerVar::Reactive { p }) => {
                    dispatch.p[n.bus] = p;
                    dispatch.q[n.bus] = x[self.layout.der[t].unwrap()];
                }
                None => {}
            }
        }
    }

    fn injection(&self, t: usize, x: &[f64]) -> Power {
        match self.nodes[t].der {
            Some(DerVar::Active) => Power::new(x[self.layout.der[t].unwrap()], 0.0),
            Some(DerVar::Reactive { p }) => Power::new(p, x[self.layout.der[t].unwrap()]),
            None => Power::ZERO,
        }
    }

    /// Visits Jacobian entries in a fixed order as `(row, col, value)`.
    fn visit_jacobian(&self, x: Option<&[f64]>, mut f: impl FnMut(usize, usize, f64)) {
        let val = |i: usize| x.map_or(0.0, |x| x[i]);
        for (t, n) in self.nodes.iter().enumerate() {
            let vt = self.layout.v(t);
            if self.layout.branches[t].is_none() {
                f(n.row, vt, 1.0);
                continue;
            }
            let (p, q, l) = (n.off, n.off + 1, n.off + 2);
            let d = self.layout.der[t];
            f(n.row, p, 1.0);
            f(n.row, l, -n.r);
            if let (Some(DerVar::Active), Some(d)) = (n.der, d) {
                f(n.row, d, 1.0);
            }
            for &c in &n.local_children {
                f(n.row, self.nodes[c].off, -1.0);
            }
            f(n.row + 1, q, 1.0);
            f(n.row + 1, l, -n.x);
            if let (Some(DerVar::Reactive { .. }), Some(d)) = (n.der, d) {
                f(n.row + 1, d, 1.0);
            }
            for &c in &n.local_children {
                f(n.row + 1, self.nodes[c].off + 1, -1.0);
            }
            f(n.row + 2, vt, 1.0);
            if let Upstream::Local(u) = n.upstream {
                f(n.row + 2, self.layout.v(u), -1.0);
            }
            let sv = self.settings.v_scale;
            f(n.row + 2, p, 2.0 * n.r / sv);
            f(n.row + 2, q, 2.0 * n.x / sv);
            f(n.row + 2, l, -(n.r * n.r + n.x * n.x) / sv);
            let vj = match (x, n.upstream) {
                (Some(x), _) => self.upstream_v(n, x),
                (None, _) => 0.0,
            };
            if let Upstream::Local(u) = n.upstream {
                f(n.row + 3, self.layout.v(u), sv * val(l));
            }
            f(n.row + 3, l, vj);
            f(n.row + 3, p, -2.0 * val(p));
            f(n.row + 3, q, -2.0 * val(q));
        }
    }
}

impl NlpProblem for OpfProblem {
    fn num_vars(&self) -> usize {
        self.layout.n_vars
    }

    fn bounds(&self, lo: &mut [f64], hi: &mut [f64]) {
        lo.copy_from_slice(&self.lo);
        hi.copy_from_slice(&self.hi);
    }

    fn sense(&self) -> Sense {
        match self.settings.objective {
            Objective::DerMax => Sense::Maximize,
            Objective::LossMin | Objective::DeltaVMin => Sense::Minimize,
        }
    }

    fn objective_scaling(&self) -> f64 {
        self.settings.scale
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match self.settings.objective {
            Objective::LossMin => self
                .nodes
                .iter()
                .filter(|n| !matches!(n.upstream, Upstream::Substation(_)))
                .map(|n| n.r * x[n.off + 2])
                .sum(),
            Objective::DerMax => self.layout.der.iter().flatten().map(|&d| x[d]).sum(),
            Objective::DeltaVMin => (0..self.nodes.len())
                .map(|t| {
                    let e = self.bus_v(t, x) - self.v_ref;
                    e * e
                })
                .sum(),
        }
    }

    fn objective_grad(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        match self.settings.objective {
            Objective::LossMin => {
                for n in &self.nodes {
                    if !matches!(n.upstream, Upstream::Substation(_)) {
                        grad[n.off + 2] = n.r;
                    }
                }
            }
            Objective::DerMax => {
                for &d in self.layout.der.iter().flatten() {
                    grad[d] = 1.0;
                }
            }
            Objective::DeltaVMin => {
                for t in 0..self.nodes.len() {
                    let v = self.layout.v(t);
                    grad[v] = 2.0 * (self.v_of(x[v]) - self.v_ref) * self.settings.v_scale;
                }
            }
        }
    }

    fn num_eq(&self) -> usize {
        self.n_eq
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        for (t, n) in self.nodes.iter().enumerate() {
            let vt = x[self.layout.v(t)];
            let Upstream::Substation(v0) = n.upstream else {
                let (p, q, l) = (x[n.off], x[n.off + 1], x[n.off + 2]);
                let inj = self.injection(t, x);
                let mut cp = n.fixed_children.p;
                let mut cq = n.fixed_children.q;
                for &ch in &n.local_children {
                    cp += x[self.nodes[ch].off];
                    cq += x[self.nodes[ch].off + 1];
                }
                let vj = self.upstream_v(n, x);
                let drop = 2.0 * (n.r * p + n.x * q) - (n.r * n.r + n.x * n.x) * l;
                c[n.row] = p - n.r * l - n.load.p + inj.p - cp;
                c[n.row + 1] = q - n.x * l - n.load.q + inj.q - cq;
                c[n.row + 2] = vt - self.upstream_u(n, x) + drop / self.settings.v_scale;
                c[n.row + 3] = vj * l - p * p - q * q;
                continue;
            };
            c[n.row] = vt - self.u_of(v0);
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::new();
        self.visit_jacobian(None, |r, c, _| s.push((r, c)));
        s
    }

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        let mut k = 0;
        self.visit_jacobian(Some(x), |_, _, v| {
            vals[k] = v;
            k += 1;
        });
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut s = Vec::new();
        for (t, n) in self.nodes.iter().enumerate() {
            if self.layout.branches[t].is_some() {
                let l = n.off + 2;
                if let Upstream::Local(u) = n.upstream {
                    let vj = self.layout.v(u);
                    s.push((vj.max(l), vj.min(l)));
                }
                s.push((n.off, n.off));
                s.push((n.off + 1, n.off + 1));
            }
            if self.settings.objective == Objective::DeltaVMin {
                let v = self.layout.v(t);
                s.push((v, v));
            }
        }
        s
    }

    fn hessian_values(&self, _x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]) {
        let mut k = 0;
        for (t, n) in self.nodes.iter().enumerate() {
            if self.layout.branches[t].is_some() {
                let mu = lambda[n.row + 3];
                if let Upstream::Local(_) = n.upstream {
                    vals[k] = self.settings.v_scale * mu;
                    k += 1;
                }
                vals[k] = -2.0 * mu;
                vals[k + 1] = -2.0 * mu;
                k += 2;
            }
            if self.settings.objective == Objective::DeltaVMin {
                vals[k] = 2.0 * obj_factor * self.settings.v_scale * self.settings.v_scale;
                k += 1;
            }
        }
    }

    fn pivot_pairs(&self) -> Option<Vec<(usize, usize)>> {
        let mut pairs = Vec::with_capacity(self.n_eq);
        for (t, n) in self.nodes.iter().enumerate() {
            if self.layout.branches[t].is_some() {
                pairs.push((n.row, n.off));
                pairs.push((n.row + 1, n.off + 1));
                pairs.push((n.row + 2, self.layout.v(t)));
                pairs.push((n.row + 3, n.off + 2));
            } else {
                pairs.push((n.row, self.layout.v(t)));
            }
        }
        Some(pairs)
    }
}

/// Objective of a full network state in reporting units.
pub fn evaluate_objective(
    objective: Objective,
    network: &RadialNetwork,
    state: &NetworkState,
    dispatch: &Dispatch,
) -> f64 {
    let raw = match objective {
        Objective::LossMin => crate::pfsweep::total_loss(state, network),
        Objective::DerMax => {
            network.buses().iter().filter(|b| b.der.is_some()).map(|b| dispatch.p[b.id]).sum()
        }
        Objective::DeltaVMin => {
            let vr = network.limits().v_ref_sq;
            state.v.iter().map(|v| (v - vr) * (v - vr)).sum()
        }
    };
    objective.report(raw, network.base_kva())
}
