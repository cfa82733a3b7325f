//! Radial network data model and tree queries.
//!
//! All electrical quantities are per-unit on the network base. Voltages are
//! stored squared (`v = |V|²`) and branch currents as `l = |I|²`. Bus ids are
//! dense `0..N` with the substation at 0.

use std::collections::VecDeque;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Id of the substation bus.
pub const SUBSTATION: usize = 0;

/// Squared ampacity used when a branch has no thermal limit.
pub const UNBOUNDED_AMPACITY_SQ: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("branch set is not a tree: {buses} buses, {branches} branches")]
    NotATree { buses: usize, branches: usize },
    #[error("bus {0} is not reachable from the substation")]
    Disconnected(usize),
    #[error("branch {branch} ({from} -> {to}) points toward the substation")]
    BadOrientation { branch: usize, from: usize, to: usize },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("invalid network data: {0}")]
    InvalidData(String),
    #[error("network file: {0}")]
    Io(String),
}

/// Complex power in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Power {
    pub p: f64,
    pub q: f64,
}

impl Power {
    pub const ZERO: Power = Power { p: 0.0, q: 0.0 };

    pub fn new(p: f64, q: f64) -> Self {
        Power { p, q }
    }
}

impl Add for Power {
    type Output = Power;
    fn add(self, o: Power) -> Power {
        Power { p: self.p + o.p, q: self.q + o.q }
    }
}

impl AddAssign for Power {
    fn add_assign(&mut self, o: Power) {
        self.p += o.p;
        self.q += o.q;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerMode {
    /// Active output fixed at `p_measured`; reactive output is dispatched.
    ReactiveDispatch,
    /// Active output is dispatched in `[0, rating]`; no reactive output.
    ActiveDispatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerDevice {
    pub rating: f64,
    pub p_measured: f64,
    pub mode: DerMode,
}

impl DerDevice {
    /// Reactive capability `sqrt(rating² - p_measured²)`.
    pub fn q_max(&self) -> f64 {
        (self.rating * self.rating - self.p_measured * self.p_measured).max(0.0).sqrt()
    }

    /// Injection assumed before any optimization.
    pub fn nominal(&self) -> Power {
        match self.mode {
            DerMode::ReactiveDispatch => Power::new(self.p_measured, 0.0),
            DerMode::ActiveDispatch => Power::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    #[serde(rename = "p_L")]
    pub p_load: f64,
    #[serde(rename = "q_L")]
    pub q_load: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub der: Option<DerDevice>,
}

impl Bus {
    pub fn load(&self) -> Power {
        Power::new(self.p_load, self.q_load)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default = "default_ampacity")]
    pub i_rated_sq: f64,
}

fn default_ampacity() -> f64 {
    UNBOUNDED_AMPACITY_SQ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageLimits {
    pub v_min_sq: f64,
    pub v_max_sq: f64,
    pub v_ref_sq: f64,
}

impl Default for VoltageLimits {
    fn default() -> Self {
        VoltageLimits { v_min_sq: 0.95 * 0.95, v_max_sq: 1.05 * 1.05, v_ref_sq: 1.0 }
    }
}

/// Raw network description, as stored in the interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkData {
    pub base_kv: f64,
    pub base_kva: f64,
    pub v0: f64,
    #[serde(default)]
    pub limits: VoltageLimits,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

/// Validated, immutable radial network.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    data: NetworkData,
    parent_branch: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    depth: Vec<usize>,
}

/// Checks that `data` describes a spanning tree rooted at the substation with
/// every branch directed away from it.
pub fn validate_radial(data: &NetworkData) -> Result<(), NetworkError> {
    index_tree(data).map(|_| ())
}

struct TreeIndex {
    parent_branch: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    depth: Vec<usize>,
}

fn index_tree(data: &NetworkData) -> Result<TreeIndex, NetworkError> {
    let n = data.buses.len();
    if n == 0 {
        return Err(NetworkError::InvalidData("network has no buses".into()));
    }
    for (i, b) in data.buses.iter().enumerate() {
        if b.id != i {
            return Err(NetworkError::InvalidData(format!(
                "bus ids must be dense and sorted; found id {} at position {i}",
                b.id
            )));
        }
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, br) in data.branches.iter().enumerate() {
        for end in [br.from, br.to] {
            if end >= n {
                return Err(NetworkError::UnknownBus(end));
            }
        }
        adj[br.from].push((br.to, k));
        adj[br.to].push((br.from, k));
    }
    let mut depth = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([SUBSTATION]);
    depth[SUBSTATION] = 0;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(w, _) in &adj[u] {
            if depth[w] == usize::MAX {
                depth[w] = depth[u] + 1;
                queue.push_back(w);
            }
        }
    }
    if let Some(bus) = depth.iter().position(|&d| d == usize::MAX) {
        return Err(NetworkError::Disconnected(bus));
    }
    if data.branches.len() != n - 1 {
        return Err(NetworkError::NotATree { buses: n, branches: data.branches.len() });
    }
    let mut parent_branch = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for (k, br) in data.branches.iter().enumerate() {
        if depth[br.to] != depth[br.from] + 1 {
            return Err(NetworkError::BadOrientation { branch: k, from: br.from, to: br.to });
        }
        parent_branch[br.to] = Some(k);
        children[br.from].push(br.to);
    }
    for c in children.iter_mut() {
        c.sort_unstable();
    }
    check_values(data)?;
    Ok(TreeIndex { parent_branch, children, order, depth })
}

fn check_values(data: &NetworkData) -> Result<(), NetworkError> {
    let bad = |msg: String| Err(NetworkError::InvalidData(msg));
    let l = &data.limits;
    if !(0.0 < l.v_min_sq && l.v_min_sq < l.v_ref_sq && l.v_ref_sq < l.v_max_sq) {
        return bad(format!("voltage limits out of order: {l:?}"));
    }
    if !(data.v0 > 0.0 && data.v0.is_finite()) {
        return bad(format!("substation voltage {} must be positive", data.v0));
    }
    if !(data.base_kva > 0.0 && data.base_kv > 0.0) {
        return bad("base quantities must be positive".into());
    }
    let sub = &data.buses[SUBSTATION];
    if sub.der.is_some() || sub.p_load != 0.0 || sub.q_load != 0.0 {
        return bad("the substation carries no load and no DER".into());
    }
    for b in &data.buses {
        if !(b.p_load >= 0.0) || !b.q_load.is_finite() || !b.p_load.is_finite() {
            return bad(format!("bus {} has invalid load ({}, {})", b.id, b.p_load, b.q_load));
        }
        if let Some(d) = &b.der {
            if !(0.0 <= d.p_measured && d.p_measured <= d.rating && d.rating.is_finite()) {
                return bad(format!("bus {} DER needs 0 <= p_measured <= rating", b.id));
            }
        }
    }
    for (k, br) in data.branches.iter().enumerate() {
        if !(br.r >= 0.0 && br.x >= 0.0) || (br.r == 0.0 && br.x == 0.0) || !br.r.is_finite() {
            return bad(format!("branch {k} has invalid impedance ({}, {})", br.r, br.x));
        }
        if !(br.i_rated_sq > 0.0) {
            return bad(format!("branch {k} has non-positive ampacity"));
        }
    }
    Ok(())
}

impl RadialNetwork {
    pub fn new(data: NetworkData) -> Result<Self, NetworkError> {
        let idx = index_tree(&data)?;
        Ok(RadialNetwork {
            data,
            parent_branch: idx.parent_branch,
            children: idx.children,
            order: idx.order,
            depth: idx.depth,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let data: NetworkData =
            serde_json::from_str(text).map_err(|e| NetworkError::Io(e.to_string()))?;
        Self::new(data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.data).expect("network data serializes")
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))
    }

    pub fn data(&self) -> &NetworkData {
        &self.data
    }

    pub fn into_data(self) -> NetworkData {
        self.data
    }

    pub fn buses(&self) -> &[Bus] {
        &self.data.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.data.branches
    }

    pub fn num_buses(&self) -> usize {
        self.data.buses.len()
    }

    pub fn substation(&self) -> usize {
        SUBSTATION
    }

    pub fn v0(&self) -> f64 {
        self.data.v0
    }

    pub fn limits(&self) -> &VoltageLimits {
        &self.data.limits
    }

    pub fn base_kva(&self) -> f64 {
        self.data.base_kva
    }

    pub fn base_kv(&self) -> f64 {
        self.data.base_kv
    }

    /// Same network with a different substation voltage.
    pub fn with_v0(&self, v0: f64) -> Result<Self, NetworkError> {
        let mut data = self.data.clone();
        data.v0 = v0;
        Self::new(data)
    }

    /// Index of the branch entering `bus` (none for the substation).
    pub fn parent_branch(&self, bus: usize) -> Option<usize> {
        self.parent_branch[bus]
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent_branch[bus].map(|k| self.data.branches[k].from)
    }

    /// Children of `bus` in ascending id order.
    pub fn children(&self, bus: usize) -> Result<&[usize], NetworkError> {
        self.children.get(bus).map(Vec::as_slice).ok_or(NetworkError::UnknownBus(bus))
    }

    pub(crate) fn children_of(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Buses in breadth-first order from the substation; every bus appears
    /// after its parent.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn depth(&self, bus: usize) -> usize {
        self.depth[bus]
    }

    pub fn num_ders(&self) -> usize {
        self.data.buses.iter().filter(|b| b.der.is_some()).count()
    }

    /// Net nominal demand `load - DER nominal injection` at one bus.
    pub fn net_demand(&self, bus: usize) -> Power {
        let b = &self.data.buses[bus];
        let d = b.der.map(|d| d.nominal()).unwrap_or_default();
        Power::new(b.p_load - d.p, b.q_load - d.q)
    }

    /// Lossless net demand of every subtree, indexed by its top bus.
    pub fn downstream_loads(&self) -> Vec<Power> {
        let mut acc: Vec<Power> = (0..self.num_buses()).map(|b| self.net_demand(b)).collect();
        for &u in self.order.iter().rev() {
            if let Some(p) = self.parent(u) {
                let s = acc[u];
                acc[p] += s;
            }
        }
        acc
    }

    /// Lossless net demand of the subtree rooted at `bus`.
    pub fn aggregate_downstream_load(&self, bus: usize) -> Result<Power, NetworkError> {
        if bus >= self.num_buses() {
            return Err(NetworkError::UnknownBus(bus));
        }
        let mut total = Power::ZERO;
        let mut stack = vec![bus];
        while let Some(u) = stack.pop() {
            total += self.net_demand(u);
            stack.extend_from_slice(&self.children[u]);
        }
        Ok(total)
    }
}
