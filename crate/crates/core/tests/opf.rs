mod common;

use approx::assert_abs_diff_eq;
use common::{active, chain, reactive, tree, with_ders};
use dopf_core::opf::{AreaBoundary, OpfProblem};
use dopf_core::pfsweep::{self, Dispatch, NetworkState};
use dopf_core::{
    build_central, build_subproblem, decompose, Objective, OpfSettings, Power, RadialNetwork,
};
use dopf_nlp::{check_derivatives, solve, NlpProblem, Sense};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OBJECTIVES: [Objective; 3] = [Objective::LossMin, Objective::DerMax, Objective::DeltaVMin];

fn central(net: &RadialNetwork, objective: Objective) -> OpfProblem {
    build_central(net, OpfSettings::for_network(net, objective))
}

/// Mixed tree with DERs of the kind the objective dispatches.
fn test_network(objective: Objective) -> RadialNetwork {
    let net = tree(&[0, 1, 2, 1, 4, 4, 6, 0, 8], (0.03, 0.01), (0.02, 0.008));
    let der = if objective.dispatches_active() { active(0.04) } else { reactive(0.05, 0.03) };
    let net = with_ders(&net, &[2, 5, 7, 9], der);
    net.with_v0(objective.default_v0()).unwrap()
}

/// Random point strictly inside the bounds.
fn interior_point(p: &dyn NlpProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = p.num_vars();
    let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
    p.bounds(&mut lo, &mut hi);
    (0..n)
        .map(|i| {
            if lo[i].is_finite() && hi[i].is_finite() && hi[i] - lo[i] < 10.0 {
                lo[i] + rng.gen_range(0.1..0.9) * (hi[i] - lo[i])
            } else {
                let lo = if lo[i].is_finite() { lo[i] } else { -0.5 };
                let hi = if hi[i].is_finite() { hi[i].min(lo + 1.0) } else { lo + 1.0 };
                lo + rng.gen_range(0.1..0.9) * (hi - lo)
            }
        })
        .collect()
}

fn assert_derivatives(p: &dyn NlpProblem, label: &str, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let x = interior_point(p, &mut rng);
        let r = check_derivatives(p, &x, 1e-6);
        assert!(r.passes(1e-5), "{label}: {r:?}");
    }
}

#[test]
fn central_derivatives_pass_for_every_objective() {
    for (i, obj) in OBJECTIVES.into_iter().enumerate() {
        let net = test_network(obj);
        assert_derivatives(&central(&net, obj), &format!("central {obj:?}"), i as u64);
    }
}

#[test]
fn area_derivatives_pass_for_every_objective() {
    for (i, obj) in OBJECTIVES.into_iter().enumerate() {
        let net = test_network(obj);
        let part = decompose(&net, 3);
        let settings = OpfSettings::for_network(&net, obj);
        for a in &part.areas {
            let b = AreaBoundary {
                v_parent: a.parent_area.map(|_| 0.98),
                child_flows: a.child_interfaces.iter().map(|_| Power::new(0.05, 0.01)).collect(),
            };
            let p = build_subproblem(a, &net, settings, &b).unwrap();
            assert_derivatives(&p, &format!("area {} {obj:?}", a.id), 100 + i as u64);
        }
    }
}

#[test]
fn variable_count_is_five_per_bus_at_full_penetration() {
    let net = test_network(Objective::LossMin);
    let p = central(&net, Objective::LossMin);
    let n = net.num_buses();
    assert_eq!(p.num_vars(), 3 * (n - 1) + n + net.num_ders());
    let mut d = with_ders(&net, &(1..n).collect::<Vec<_>>(), reactive(0.05, 0.03)).into_data();
    d.v0 = 1.0;
    let full = RadialNetwork::new(d).unwrap();
    assert_eq!(central(&full, Objective::LossMin).num_vars(), 5 * (n - 1) + 1);
}

#[test]
fn zero_der_loss_equals_sweep_loss() {
    let net = chain(6, (0.02, 0.005), (0.07, 0.01));
    let p = central(&net, Objective::LossMin);
    let sol = solve(&p, &p.flat_start(&net.downstream_loads()), 1e-10, 200).unwrap();
    assert!(sol.is_optimal());
    let sw = pfsweep::solve_power_flow(&net, &Dispatch::zeros(6), 1e-12, 200).unwrap();
    assert_abs_diff_eq!(sol.objective, pfsweep::total_loss(&sw.state, &net), epsilon = 1e-6);
}

#[test]
fn voltage_deviation_vanishes_without_load() {
    let net = chain(5, (0.0, 0.0), (0.07, 0.01));
    let p = central(&net, Objective::DeltaVMin);
    let sol = solve(&p, &p.flat_start(&net.downstream_loads()), 1e-10, 200).unwrap();
    assert!(sol.is_optimal());
    assert!(sol.objective.abs() < 1e-12);
    let mut st = NetworkState::flat(&net);
    p.write_state(&sol.x, &mut st, &mut Dispatch::zeros(5));
    assert!(st.v.iter().all(|v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn nodal_area_has_five_variables() {
    let net = with_ders(&chain(4, (0.02, 0.005), (0.07, 0.01)), &[2], reactive(0.05, 0.03));
    let part = decompose(&net, 1);
    let a = &part.areas[part.area_of[2]];
    let b = AreaBoundary { v_parent: Some(1.0), child_flows: vec![Power::new(0.02, 0.005)] };
    let p =
        build_subproblem(a, &net, OpfSettings::for_network(&net, Objective::LossMin), &b).unwrap();
    assert_eq!(p.num_vars(), 5);
    assert_eq!(p.num_eq(), 4);
    let x = [0.05, 0.01, 0.003, 0.0, 0.01];
    let e = p.extract_boundary(&x, a);
    assert_eq!(e.flow_up, Some(Power::new(0.05, 0.01)));
    assert_eq!(e.voltage_down.len(), 1);
}

#[test]
fn leaf_and_root_areas() {
    let net = chain(6, (0.02, 0.005), (0.07, 0.01));
    let part = decompose(&net, 3);
    let settings = OpfSettings::for_network(&net, Objective::LossMin);
    let leaf = part.areas.iter().find(|a| a.child_areas.is_empty()).unwrap();
    let b = AreaBoundary { v_parent: Some(0.99), child_flows: vec![] };
    let p = build_subproblem(leaf, &net, settings, &b).unwrap();
    assert_eq!(p.num_eq(), 4 * leaf.buses.len());
    let root = &part.areas[part.area_of[0]];
    assert!(root.is_root());
    let b = AreaBoundary { v_parent: None, child_flows: vec![Power::new(0.05, 0.01)] };
    let p = build_subproblem(root, &net, settings, &b).unwrap();
    assert_eq!(p.num_eq(), 4 * (root.buses.len() - 1) + 1);
    let x = p.flat_start(&net.downstream_loads());
    let e = p.extract_boundary(&x, root);
    assert!(e.flow_up.is_none());
    assert_eq!(e.voltage_down.len(), 1);
}

#[test]
fn missing_boundary_values_are_reported() {
    let net = chain(6, (0.02, 0.005), (0.07, 0.01));
    let part = decompose(&net, 2);
    let settings = OpfSettings::for_network(&net, Objective::LossMin);
    let mid = part.areas.iter().find(|a| !a.is_root() && !a.child_areas.is_empty()).unwrap();
    assert!(build_subproblem(mid, &net, settings, &AreaBoundary::default()).is_err());
    let b = AreaBoundary { v_parent: Some(1.0), child_flows: vec![] };
    assert!(build_subproblem(mid, &net, settings, &b).is_err());
}

#[test]
fn child_area_exports_its_own_top_flow() {
    let net = chain(4, (0.02, 0.005), (0.07, 0.01));
    let part = decompose(&net, 2);
    let child = &part.areas[1];
    let settings = OpfSettings::for_network(&net, Objective::LossMin);
    let b = AreaBoundary { v_parent: Some(0.995), child_flows: vec![] };
    let p = build_subproblem(child, &net, settings, &b).unwrap();
    let sol = solve(&p, &p.flat_start(&net.downstream_loads()), 1e-10, 100).unwrap();
    let top = p.layout().p(0).unwrap();
    let e = p.extract_boundary(&sol.x, child);
    assert_eq!(e.flow_up, Some(Power::new(sol.x[top], sol.x[top + 1])));
}

#[test]
fn single_area_problem_is_the_central_problem() {
    for obj in OBJECTIVES {
        let net = test_network(obj);
        let part = decompose(&net, net.num_buses());
        let settings = OpfSettings::for_network(&net, obj);
        let a = build_subproblem(&part.areas[0], &net, settings, &AreaBoundary::default()).unwrap();
        let c = build_central(&net, settings);
        assert_eq!(a.layout(), c.layout());
        assert_eq!(a.num_eq(), c.num_eq());
        assert_eq!(a.jacobian_structure(), c.jacobian_structure());
        assert_eq!(a.hessian_structure(), c.hessian_structure());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = interior_point(&c, &mut rng);
        let (mut ca, mut cc) = (vec![0.0; c.num_eq()], vec![0.0; c.num_eq()]);
        a.constraints(&x, &mut ca);
        c.constraints(&x, &mut cc);
        assert_eq!(ca, cc);
        assert_eq!(a.objective(&x).to_bits(), c.objective(&x).to_bits());
    }
}

/// The squared-deviation objective replaced by its square root.
struct RootDeviation<'a> {
    inner: &'a OpfProblem,
    v_slots: Vec<usize>,
}

impl RootDeviation<'_> {
    fn new(inner: &OpfProblem) -> RootDeviation<'_> {
        let v_slots = (0..inner.layout().buses.len()).map(|t| inner.layout().v(t)).collect();
        RootDeviation { inner, v_slots }
    }
}

impl NlpProblem for RootDeviation<'_> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }
    fn bounds(&self, lo: &mut [f64], hi: &mut [f64]) {
        self.inner.bounds(lo, hi)
    }
    fn sense(&self) -> Sense {
        Sense::Minimize
    }
    fn objective_scaling(&self) -> f64 {
        100.0
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.inner.objective(x).sqrt()
    }
    fn objective_grad(&self, x: &[f64], g: &mut [f64]) {
        self.inner.objective_grad(x, g);
        let s = self.objective(x);
        g.iter_mut().for_each(|v| *v /= 2.0 * s);
    }
    fn num_eq(&self) -> usize {
        self.inner.num_eq()
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        self.inner.constraints(x, c)
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.inner.jacobian_structure()
    }
    fn jacobian_values(&self, x: &[f64], v: &mut [f64]) {
        self.inner.jacobian_values(x, v)
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut s = self.inner.hessian_structure();
        for (i, &a) in self.v_slots.iter().enumerate() {
            for &b in &self.v_slots[..i] {
                s.push((a.max(b), a.min(b)));
            }
        }
        s
    }
    fn hessian_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]) {
        let inner = self.inner.hessian_structure();
        self.inner.hessian_values(x, 0.0, lambda, &mut vals[..inner.len()]);
        let f = self.inner.objective(x);
        let s = f.sqrt();
        let mut g = vec![0.0; x.len()];
        self.inner.objective_grad(x, &mut g);
        let mut hf = vec![0.0; inner.len()];
        self.inner.hessian_values(x, 1.0, &vec![0.0; lambda.len()], &mut hf);
        for (k, &(i, j)) in inner.iter().enumerate() {
            vals[k] += obj_factor * (hf[k] / (2.0 * s) - g[i] * g[j] / (4.0 * s * f));
        }
        for (k, &(i, j)) in self.hessian_structure()[inner.len()..].iter().enumerate() {
            vals[inner.len() + k] = -obj_factor * g[i] * g[j] / (4.0 * s * f);
        }
    }
}

#[test]
fn root_and_squared_deviation_have_the_same_minimizer() {
    let net = with_ders(&chain(5, (0.05, 0.01), (0.02, 0.01)), &[2, 4], reactive(0.05, 0.02));
    let p = central(&net, Objective::DeltaVMin);
    let x0 = p.flat_start(&net.downstream_loads());
    let sq = solve(&p, &x0, 1e-10, 200).unwrap();
    let root = RootDeviation::new(&p);
    assert!(check_derivatives(&root, &sq.x, 1e-6).passes(1e-5));
    // The root is not differentiable at zero deviation, so start below it.
    let mut xr = x0.clone();
    for t in 1..5 {
        xr[p.layout().v(t)] -= 0.5;
    }
    let rt = solve(&root, &xr, 1e-10, 200).unwrap();
    assert!(sq.is_optimal() && rt.is_optimal());
    assert!(sq.objective > 1e-8, "deviation should not vanish");
    let (mut a, mut b) = (NetworkState::flat(&net), NetworkState::flat(&net));
    let (mut da, mut db) = (Dispatch::zeros(5), Dispatch::zeros(5));
    p.write_state(&sq.x, &mut a, &mut da);
    p.write_state(&rt.x, &mut b, &mut db);
    for i in 0..5 {
        assert_abs_diff_eq!(a.v[i], b.v[i], epsilon = 1e-5);
        assert_abs_diff_eq!(da.q[i], db.q[i], epsilon = 1e-5);
    }
}

/// Two-bus feeder with one reactive DER at the load bus.
fn two_bus() -> RadialNetwork {
    with_ders(&chain(2, (0.1, 0.01), (0.07, 0.01)), &[1], reactive(0.05, 0.007))
}

#[test]
fn two_bus_dispatch_matches_grid_search() {
    let net = two_bus();
    let der = net.buses()[1].der.unwrap();
    let qm = der.q_max();
    let mut best = (f64::INFINITY, 0.0);
    let steps = (2.0 * qm / 1e-4).floor() as usize;
    for i in 0..=steps {
        let q = -qm + i as f64 * 1e-4;
        let mut d = Dispatch::zeros(2);
        d.p[1] = der.p_measured;
        d.q[1] = q;
        let st = pfsweep::solve_power_flow(&net, &d, 1e-13, 500).unwrap().state;
        let loss = pfsweep::total_loss(&st, &net);
        if loss < best.0 {
            best = (loss, q);
        }
    }
    let p = central(&net, Objective::LossMin);
    let sol = solve(&p, &p.flat_start(&net.downstream_loads()), 1e-10, 100).unwrap();
    assert!(sol.is_optimal());
    let q = sol.x[p.layout().der(1).unwrap()];
    assert!((q - best.1).abs() <= 1e-4, "NLP q {q}, grid q {}", best.1);
    assert!(sol.objective <= best.0 + 1e-12);
    assert_abs_diff_eq!(sol.objective, best.0, epsilon = 1e-6);
}

fn parents() -> impl Strategy<Value = Vec<usize>> {
    (1usize..30).prop_flat_map(|n| (0..n).map(|i| (0..=i).boxed()).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn equality_count_is_four_per_branch_plus_pin(ps in parents(), max_nodes in 1usize..12) {
        let net = tree(&ps, (0.02, 0.005), (0.02, 0.01));
        let b = net.branches().len();
        let settings = OpfSettings::for_network(&net, Objective::LossMin);
        prop_assert_eq!(build_central(&net, settings).num_eq(), 4 * b + 1);
        let part = decompose(&net, max_nodes);
        let mut total = 0;
        for a in &part.areas {
            let bd = AreaBoundary {
                v_parent: Some(1.0),
                child_flows: vec![Power::ZERO; a.child_interfaces.len()],
            };
            total += build_subproblem(a, &net, settings, &bd).unwrap().num_eq();
        }
        prop_assert_eq!(total, 4 * b + 1);
    }
}
