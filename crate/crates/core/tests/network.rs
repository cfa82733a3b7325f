mod common;

use common::{branch, bus, chain, data, reactive, tree, with_ders};
use dopf_core::network::{DerDevice, DerMode, NetworkError, SUBSTATION};
use dopf_core::{validate_radial, Power, RadialNetwork};
use proptest::prelude::*;

#[test]
fn three_bus_chain_is_radial() {
    let d = data(
        vec![bus(0, 0.0, 0.0), bus(1, 0.1, 0.01), bus(2, 0.1, 0.01)],
        vec![branch(0, 1, 0.07, 0.01), branch(1, 2, 0.07, 0.01)],
    );
    assert_eq!(validate_radial(&d), Ok(()));
}

#[test]
fn cycle_is_not_a_tree() {
    let d = data(
        vec![bus(0, 0.0, 0.0), bus(1, 0.1, 0.01), bus(2, 0.1, 0.01)],
        vec![branch(0, 1, 0.07, 0.01), branch(1, 2, 0.07, 0.01), branch(2, 0, 0.07, 0.01)],
    );
    assert!(matches!(validate_radial(&d), Err(NetworkError::NotATree { .. })));
}

#[test]
fn missing_branches_leave_buses_unreachable() {
    let d = data(
        (0..4).map(|i| bus(i, 0.0, 0.0)).collect(),
        vec![branch(0, 1, 0.07, 0.01), branch(1, 2, 0.07, 0.01)],
    );
    assert!(matches!(validate_radial(&d), Err(NetworkError::Disconnected(3))));
}

#[test]
fn branch_pointing_upstream_is_rejected() {
    let d = data(
        vec![bus(0, 0.0, 0.0), bus(1, 0.1, 0.0), bus(2, 0.1, 0.0)],
        vec![branch(0, 1, 0.07, 0.01), branch(2, 1, 0.07, 0.01)],
    );
    assert!(matches!(validate_radial(&d), Err(NetworkError::BadOrientation { .. })));
}

#[test]
fn substation_with_load_or_der_is_rejected() {
    let d = data(vec![bus(0, 0.1, 0.0), bus(1, 0.1, 0.0)], vec![branch(0, 1, 0.07, 0.01)]);
    assert!(matches!(validate_radial(&d), Err(NetworkError::InvalidData(_))));
    let mut d = data(vec![bus(0, 0.0, 0.0), bus(1, 0.1, 0.0)], vec![branch(0, 1, 0.07, 0.01)]);
    d.buses[0].der = Some(reactive(0.01, 0.005));
    assert!(matches!(validate_radial(&d), Err(NetworkError::InvalidData(_))));
}

#[test]
fn negative_load_and_bad_der_are_rejected() {
    let d = data(vec![bus(0, 0.0, 0.0), bus(1, -0.1, 0.0)], vec![branch(0, 1, 0.07, 0.01)]);
    assert!(validate_radial(&d).is_err());
    let mut d = data(vec![bus(0, 0.0, 0.0), bus(1, 0.1, 0.0)], vec![branch(0, 1, 0.07, 0.01)]);
    d.buses[1].der =
        Some(DerDevice { rating: 0.01, p_measured: 0.02, mode: DerMode::ReactiveDispatch });
    assert!(validate_radial(&d).is_err());
}

#[test]
fn zero_impedance_branch_is_rejected() {
    let d = data(vec![bus(0, 0.0, 0.0), bus(1, 0.1, 0.0)], vec![branch(0, 1, 0.0, 0.0)]);
    assert!(validate_radial(&d).is_err());
}

#[test]
fn children_on_chain_and_star() {
    let net = chain(3, (0.1, 0.01), (0.07, 0.01));
    assert_eq!(net.children(1).unwrap(), &[2]);
    assert!(net.children(2).unwrap().is_empty());
    let star = tree(&[0, 0, 0], (0.1, 0.01), (0.07, 0.01));
    assert_eq!(star.children(SUBSTATION).unwrap(), &[1, 2, 3]);
    assert_eq!(star.children(9), Err(NetworkError::UnknownBus(9)));
}

#[test]
fn aggregate_load_examples() {
    let leaf = chain(2, (0.1, 0.01), (0.07, 0.01));
    assert_eq!(leaf.aggregate_downstream_load(1).unwrap(), Power::new(0.1, 0.01));
    let net = chain(4, (0.1, 0.01), (0.07, 0.01));
    let top = net.aggregate_downstream_load(1).unwrap();
    assert!((top.p - 0.3).abs() < 1e-15 && (top.q - 0.03).abs() < 1e-15);
    let empty = chain(4, (0.0, 0.0), (0.07, 0.01));
    assert_eq!(empty.aggregate_downstream_load(0).unwrap(), Power::ZERO);
    assert_eq!(net.aggregate_downstream_load(7), Err(NetworkError::UnknownBus(7)));
}

#[test]
fn aggregate_load_subtracts_nominal_der_output() {
    let net = chain(3, (0.1, 0.01), (0.07, 0.01));
    let net = with_ders(&net, &[2], reactive(0.05, 0.04));
    let agg = net.aggregate_downstream_load(1).unwrap();
    assert!((agg.p - 0.16).abs() < 1e-15);
    let net = with_ders(&net, &[2], common::active(0.05));
    assert!((net.aggregate_downstream_load(1).unwrap().p - 0.2).abs() < 1e-15);
}

#[test]
fn json_round_trip_is_exact() {
    let net = chain(4, (0.1, 0.01), (0.07, 0.01));
    let net = with_ders(&net, &[1, 3], reactive(0.0084, 0.007));
    let back = RadialNetwork::from_json(&net.to_json()).unwrap();
    assert_eq!(back, net);
}

#[test]
fn json_uses_interchange_field_names() {
    let net = chain(2, (0.1, 0.01), (0.07, 0.01));
    let v: serde_json::Value = serde_json::from_str(&net.to_json()).unwrap();
    for key in ["base_kv", "base_kva", "v0", "buses", "branches"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["buses"][1].get("p_L").is_some());
    assert!(v["branches"][0].get("i_rated_sq").is_some());
}

fn parents() -> impl Strategy<Value = Vec<usize>> {
    (1usize..40).prop_flat_map(|n| (0..n).map(|i| (0..=i).boxed()).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn every_non_substation_bus_has_one_parent_branch(ps in parents()) {
        let net = tree(&ps, (0.1, 0.01), (0.07, 0.01));
        prop_assert_eq!(net.branches().len(), net.num_buses() - 1);
        let mut seen = vec![0usize; net.num_buses()];
        for b in net.branches() {
            seen[b.to] += 1;
        }
        prop_assert_eq!(seen[0], 0);
        prop_assert!(seen[1..].iter().all(|&c| c == 1));
    }

    #[test]
    fn children_partition_the_non_substation_buses(ps in parents()) {
        let net = tree(&ps, (0.1, 0.01), (0.07, 0.01));
        let mut all: Vec<usize> =
            (0..net.num_buses()).flat_map(|b| net.children(b).unwrap().to_vec()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (1..net.num_buses()).collect::<Vec<_>>());
    }

    #[test]
    fn substation_aggregate_is_total_net_demand(
        ps in parents(),
        loads in proptest::collection::vec((0.0f64..0.2, -0.05f64..0.05), 40),
    ) {
        let mut d = tree(&ps, (0.0, 0.0), (0.07, 0.01)).into_data();
        for (b, l) in d.buses.iter_mut().skip(1).zip(&loads) {
            b.p_load = l.0;
            b.q_load = l.1;
        }
        let net = RadialNetwork::new(d).unwrap();
        let agg = net.aggregate_downstream_load(SUBSTATION).unwrap();
        let p: f64 = net.buses().iter().map(|b| b.p_load).sum();
        let q: f64 = net.buses().iter().map(|b| b.q_load).sum();
        prop_assert!((agg.p - p).abs() < 1e-12 && (agg.q - q).abs() < 1e-12);
        let all = net.downstream_loads()[SUBSTATION];
        prop_assert!((all.p - agg.p).abs() < 1e-12 && (all.q - agg.q).abs() < 1e-12);
    }
}
