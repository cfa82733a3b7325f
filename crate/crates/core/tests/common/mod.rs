#![allow(dead_code)]

use dopf_core::network::{
    Branch, Bus, DerDevice, DerMode, NetworkData, VoltageLimits, UNBOUNDED_AMPACITY_SQ,
};
use dopf_core::RadialNetwork;

pub fn bus(id: usize, p: f64, q: f64) -> Bus {
    Bus { id, p_load: p, q_load: q, der: None }
}

pub fn branch(from: usize, to: usize, r: f64, x: f64) -> Branch {
    Branch { from, to, r, x, i_rated_sq: UNBOUNDED_AMPACITY_SQ }
}

pub fn data(buses: Vec<Bus>, branches: Vec<Branch>) -> NetworkData {
    NetworkData {
        base_kv: 12.47,
        base_kva: 1000.0,
        v0: 1.0,
        limits: VoltageLimits::default(),
        buses,
        branches,
    }
}

/// Substation followed by `n - 1` buses in a chain, all with the same load
/// and impedance.
pub fn chain(n: usize, load: (f64, f64), z: (f64, f64)) -> RadialNetwork {
    let mut buses = vec![bus(0, 0.0, 0.0)];
    let mut branches = Vec::new();
    for i in 1..n {
        buses.push(bus(i, load.0, load.1));
        branches.push(branch(i - 1, i, z.0, z.1));
    }
    RadialNetwork::new(data(buses, branches)).unwrap()
}

/// Tree from a parent list (`parents[i]` is the parent of bus `i + 1`).
pub fn tree(parents: &[usize], load: (f64, f64), z: (f64, f64)) -> RadialNetwork {
    let mut buses = vec![bus(0, 0.0, 0.0)];
    let mut branches = Vec::new();
    for (i, &p) in parents.iter().enumerate() {
        buses.push(bus(i + 1, load.0, load.1));
        branches.push(branch(p, i + 1, z.0, z.1));
    }
    RadialNetwork::new(data(buses, branches)).unwrap()
}

/// Puts a DER on every listed bus.
pub fn with_ders(net: &RadialNetwork, ids: &[usize], der: DerDevice) -> RadialNetwork {
    let mut d = net.data().clone();
    for &i in ids {
        d.buses[i].der = Some(der);
    }
    RadialNetwork::new(d).unwrap()
}

pub fn reactive(rating: f64, p: f64) -> DerDevice {
    DerDevice { rating, p_measured: p, mode: DerMode::ReactiveDispatch }
}

pub fn active(rating: f64) -> DerDevice {
    DerDevice { rating, p_measured: 0.0, mode: DerMode::ActiveDispatch }
}
