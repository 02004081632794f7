use nalgebra::DVector;
use oass_signal::mpc::MpcConfig;
use oass_signal::oracle;
use oass_signal::sfm::{condense, GreenLimits, Junction, Link, TrafficNetwork};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LIM: GreenLimits = GreenLimits {
    min: 5.0,
    max: 55.0,
};

fn link(id: &str, s: f64) -> Link {
    Link {
        id: id.into(),
        capacity: 1e6,
        saturation_flow: s,
        upstream: None,
        downstream: None,
        demand: 0.0,
        exit_flow: 0.0,
        source_share: 0.0,
        initial_queue: 0.0,
    }
}

/// Three links in a ring, each the single phase of a two-phase junction
/// whose other phase serves a dead-end link; every turning rate is 1.
fn ring() -> TrafficNetwork {
    let ids = ["a", "b", "c"];
    let mut links: Vec<Link> = ids.iter().map(|id| link(id, 0.5)).collect();
    links.extend(ids.iter().map(|id| link(&format!("{id}_side"), 0.3)));
    let junctions = ids
        .iter()
        .map(|id| Junction {
            id: format!("J{id}"),
            phases: vec![vec![id.to_string()], vec![format!("{id}_side")]],
            lost_time: 0.0,
        })
        .collect();
    let turning = vec![
        ("a".into(), "b".into(), 1.0),
        ("b".into(), "c".into(), 1.0),
        ("c".into(), "a".into(), 1.0),
        ("a_side".into(), "b".into(), 1.0),
        ("b_side".into(), "c".into(), 1.0),
        ("c_side".into(), "a".into(), 1.0),
    ];
    TrafficNetwork::new(links, junctions, turning, 60.0).unwrap()
}

fn plan(split: &[f64]) -> Vec<f64> {
    split.iter().flat_map(|&a| [a, 60.0 - a]).collect()
}

proptest! {
    #[test]
    fn flows_only_move_vehicles(
        x in prop::collection::vec(0.0..500.0f64, 6),
        split in prop::collection::vec(5.0..55.0f64, 3),
    ) {
        let net = ring();
        let x = DVector::from_vec(x);
        let u = plan(&split);
        let next = net.step_unclamped(&x, &u, None);
        prop_assert!((next.sum() - x.sum()).abs() <= 1e-9 * (1.0 + x.sum()));
    }

    #[test]
    fn linear_model_matches_plant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = oracle::random_mpc_instance(&mut rng, 4, 3).unwrap();
        let ss = inst.net.linearize();
        let u = oass_signal::mpc::fallback_plan(&inst.net, &inst.cfg);
        let plant = inst.net.step_unclamped(&inst.x0, u.as_slice(), None);
        prop_assert!((ss.step(&inst.x0, &u) - &plant).amax() <= 1e-12 * (1.0 + plant.amax()));
    }

    #[test]
    fn condensed_prediction_matches_rollout(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = oracle::random_mpc_instance(&mut rng, 4, 3).unwrap();
        let ss = inst.net.linearize();
        let model = condense(&ss, &inst.cfg).unwrap();
        let m = ss.n_inputs();
        let hz = inst.cfg.horizon;
        let u = DVector::from_fn(m * hz, |i, _| 5.0 + (i as f64 * 7.3) % 20.0);
        let stacked = model.predict(&inst.x0, &u);
        let mut x = inst.x0.clone();
        for k in 0..hz {
            x = ss.step(&x, &u.rows(k * m, m).into_owned());
            let row = stacked.rows(k * ss.n_state(), ss.n_state());
            prop_assert!((&x - row).amax() <= 1e-9 * (1.0 + x.amax()));
        }
    }

    #[test]
    fn condensed_optimum_matches_joint_problem(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = oracle::random_mpc_instance(&mut rng, 4, 3).unwrap();
        let ss = inst.net.linearize();
        let model = condense(&ss, &inst.cfg).unwrap();
        let (sol, _) = model.qp.cold_start(&inst.x0).unwrap();
        let reference = oracle::solve_sparse_mpc(&ss, &inst.cfg, &inst.x0).expect("reference solves");
        prop_assert!((&sol.primal - &reference.inputs).amax() <= 1e-7);
        let cost = model.cost(&inst.x0, &sol.primal);
        prop_assert!((cost - reference.cost).abs() <= 1e-7 * (1.0 + reference.cost.abs()));
    }
}

#[test]
fn plant_clamps_and_respects_plan() {
    let net = ring();
    let x = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let next = net
        .step_dynamics(&x, &plan(&[30.0, 30.0, 30.0]), LIM, None)
        .unwrap();
    assert!(next.iter().all(|&v| v >= 0.0));
    assert!(net
        .step_dynamics(&x, &plan(&[2.0, 30.0, 30.0]), LIM, None)
        .is_err());
}

#[test]
fn weights_are_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let inst = oracle::random_mpc_instance(&mut rng, 4, 3).unwrap();
        let w = &inst.cfg.weights;
        assert!(w.q.clone().symmetric_eigenvalues().min() >= 0.0);
        assert!(w.p.clone().symmetric_eigenvalues().min() >= 0.0);
        assert!(w.r.clone().symmetric_eigenvalues().min() > 0.0);
    }
    let net = ring();
    let cfg = MpcConfig::for_network(&net, 3).unwrap();
    assert_eq!(cfg.weights.p, cfg.weights.q);
    assert!(cfg.weights.r.clone().symmetric_eigenvalues().min() > 0.0);
}
