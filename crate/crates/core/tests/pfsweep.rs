mod common;

use approx::assert_abs_diff_eq;
use common::{chain, reactive, tree, with_ders};
use dopf_core::pfsweep::{
    check_limits, solve_power_flow, substation_injection, total_loss, Dispatch, NetworkState,
    SweepError, DEFAULT_MAX_SWEEPS, DEFAULT_TOL,
};
use dopf_core::RadialNetwork;
use proptest::prelude::*;

/// Golden values of the two-bus case (v0 = 1, z = 0.07 + 0.01j, load
/// 0.1 + 0.01j), frozen from the scalar recurrence below.
const GOLDEN_L: f64 = 0.010246018365248213;
const GOLDEN_V: f64 = 0.9857487699081738;

fn sweep(net: &RadialNetwork, d: &Dispatch) -> NetworkState {
    solve_power_flow(net, d, DEFAULT_TOL, DEFAULT_MAX_SWEEPS).unwrap().state
}

/// Fixed point of `l = (P² + Q²) / v0` with `P = p + r l`, `Q = q + x l`.
fn two_bus_oracle(v0: f64, r: f64, x: f64, p: f64, q: f64) -> (f64, f64) {
    let mut l = 0.0f64;
    loop {
        let (pp, qq) = (p + r * l, q + x * l);
        let next = (pp * pp + qq * qq) / v0;
        if (next - l).abs() < 1e-15 {
            l = next;
            break;
        }
        l = next;
    }
    let (pp, qq) = (p + r * l, q + x * l);
    (l, v0 - 2.0 * (r * pp + x * qq) + (r * r + x * x) * l)
}

#[test]
fn no_load_network_is_flat() {
    let net = chain(5, (0.0, 0.0), (0.07, 0.01));
    let st = sweep(&net, &Dispatch::zeros(5));
    assert!(st.v.iter().all(|&v| v == 1.0));
    assert!(st.p.iter().chain(&st.q).chain(&st.l).all(|&x| x == 0.0));
    assert!(check_limits(&st, &net).is_empty());
    assert_eq!(total_loss(&st, &net), 0.0);
}

#[test]
fn two_bus_matches_scalar_recurrence() {
    let (l, v) = two_bus_oracle(1.0, 0.07, 0.01, 0.1, 0.01);
    assert_abs_diff_eq!(l, GOLDEN_L, epsilon = 1e-14);
    assert_abs_diff_eq!(v, GOLDEN_V, epsilon = 1e-14);
    let net = chain(2, (0.1, 0.01), (0.07, 0.01));
    let st = sweep(&net, &Dispatch::zeros(2));
    assert_abs_diff_eq!(st.l[0], GOLDEN_L, epsilon = 1e-10);
    assert_abs_diff_eq!(st.v[1], GOLDEN_V, epsilon = 1e-10);
    assert_abs_diff_eq!(total_loss(&st, &net), 0.07 * GOLDEN_L, epsilon = 1e-11);
}

#[test]
fn undervoltage_is_reported_with_its_deficit() {
    let net = chain(3, (0.0, 0.0), (0.07, 0.01));
    let mut st = NetworkState::flat(&net);
    st.v[2] = 0.9 * 0.9;
    let rep = check_limits(&st, &net);
    assert_eq!(rep.undervoltage.len(), 1);
    assert_eq!(rep.undervoltage[0].bus, 2);
    assert_abs_diff_eq!(rep.undervoltage[0].amount, 0.95 * 0.95 - 0.81, epsilon = 1e-15);
    assert!(rep.overvoltage.is_empty() && rep.overcurrent.is_empty());
}

#[test]
fn current_at_ampacity_is_not_a_violation() {
    let mut d = chain(2, (0.0, 0.0), (0.07, 0.01)).into_data();
    d.branches[0].i_rated_sq = 0.04;
    let net = RadialNetwork::new(d).unwrap();
    let mut st = NetworkState::flat(&net);
    st.l[0] = 0.04;
    assert!(check_limits(&st, &net).is_empty());
    st.l[0] = 0.0400001;
    assert_eq!(check_limits(&st, &net).overcurrent.len(), 1);
}

#[test]
fn twin_laterals_double_the_loss() {
    let one = tree(&[0, 1, 2], (0.05, 0.01), (0.07, 0.01));
    let two = tree(&[0, 1, 2, 0, 4, 5], (0.05, 0.01), (0.07, 0.01));
    // The substation is an ideal source, so the laterals do not interact.
    let a = total_loss(&sweep(&one, &Dispatch::zeros(4)), &one);
    let b = total_loss(&sweep(&two, &Dispatch::zeros(7)), &two);
    assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-13);
}

#[test]
fn overload_is_detected_as_collapse() {
    let net = chain(3, (5.0, 1.0), (0.07, 0.01));
    let err = solve_power_flow(&net, &Dispatch::zeros(3), DEFAULT_TOL, DEFAULT_MAX_SWEEPS);
    assert!(matches!(
        err,
        Err(SweepError::NegativeVoltage { .. } | SweepError::NoConvergence { .. })
    ));
}

#[test]
fn dispatch_length_is_checked() {
    let net = chain(3, (0.1, 0.01), (0.07, 0.01));
    assert!(matches!(
        solve_power_flow(&net, &Dispatch::zeros(2), DEFAULT_TOL, DEFAULT_MAX_SWEEPS),
        Err(SweepError::DispatchLength { .. })
    ));
}

#[test]
fn nominal_dispatch_reduces_loss() {
    let net = chain(6, (0.05, 0.01), (0.07, 0.01));
    let with = with_ders(&net, &[3, 5], reactive(0.05, 0.04));
    let a = total_loss(&sweep(&net, &Dispatch::zeros(6)), &net);
    let b = total_loss(&sweep(&with, &Dispatch::nominal(&with)), &with);
    assert!(b < a);
}

type RandomTree = (Vec<usize>, Vec<(f64, f64)>, Vec<(f64, f64)>);

fn random_tree() -> impl Strategy<Value = RandomTree> {
    (2usize..25).prop_flat_map(|n| {
        (
            (0..n).map(|i| (0..=i).boxed()).collect::<Vec<_>>(),
            proptest::collection::vec((0.0f64..0.05, -0.01f64..0.02), n),
            proptest::collection::vec((-0.03f64..0.03, -0.03f64..0.03), n),
        )
    })
}

fn build(ps: &[usize], loads: &[(f64, f64)]) -> RadialNetwork {
    let mut d = tree(ps, (0.0, 0.0), (0.02, 0.01)).into_data();
    for (b, l) in d.buses.iter_mut().skip(1).zip(loads) {
        b.p_load = l.0;
        b.q_load = l.1;
    }
    RadialNetwork::new(d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_state_conserves_power((ps, loads, inj) in random_tree()) {
        let net = build(&ps, &loads);
        let n = net.num_buses();
        let mut d = Dispatch::zeros(n);
        for i in 1..n {
            d.p[i] = inj[i - 1].0;
            d.q[i] = inj[i - 1].1;
        }
        let st = sweep(&net, &d);
        let (p0, q0) = substation_injection(&st, &net);
        let lp: f64 = net.buses().iter().map(|b| b.p_load).sum::<f64>() - d.p.iter().sum::<f64>();
        let lq: f64 = net.buses().iter().map(|b| b.q_load).sum::<f64>() - d.q.iter().sum::<f64>();
        let xl: f64 = net.branches().iter().zip(&st.l).map(|(b, l)| b.x * l).sum();
        prop_assert!((p0 - lp - total_loss(&st, &net)).abs() < 10.0 * DEFAULT_TOL * n as f64);
        prop_assert!((q0 - lq - xl).abs() < 10.0 * DEFAULT_TOL * n as f64);
        for (k, b) in net.branches().iter().enumerate() {
            let res = st.v[b.from] * st.l[k] - st.p[k] * st.p[k] - st.q[k] * st.q[k];
            prop_assert!(res.abs() < 10.0 * DEFAULT_TOL);
        }
    }

    #[test]
    fn voltage_never_rises_without_ders((ps, _loads, _inj) in random_tree(), p in 0.0f64..0.05) {
        let net = build(&ps, &vec![(p, 0.1 * p); ps.len()]);
        let st = sweep(&net, &Dispatch::zeros(net.num_buses()));
        for b in net.branches() {
            prop_assert!(st.v[b.to] <= st.v[b.from]);
        }
    }
}
