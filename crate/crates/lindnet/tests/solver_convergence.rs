//! End-to-end training runs on small dissipative chains.

use lindnet::lindblad::LindbladModel;
use lindnet::network::{Connectivity, NetworkTopology, Tying};
use lindnet::oracle;
use lindnet::pauli::Observable;
use lindnet::solver::{run, Mode, SolverConfig};

#[test]
fn steady_state_of_dark_chain_is_all_down() {
    // h = 0: the all-down product state is an exact dark state, so the
    // trained network must reach avg_z = -1.
    let topo = NetworkTopology::new(vec![2, 2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
        .expect("valid topology");
    let m = LindbladModel::ising_1d(3, 1.0, 0.0, 1.0, true).expect("valid model");
    let obs = vec![Observable::parse("avg_z", 3).unwrap()];
    let mut cfg = SolverConfig::steady_state(3000, 1);
    cfg.convergence_tol = 1e-3;
    let out = run(&cfg, &m, &topo, &obs).expect("run succeeds");
    assert!(out.converged, "no convergence within {} steps", cfg.max_steps);
    let last = out.records.last().unwrap();
    assert!(
        (last.observables[0] + 1.0).abs() < 1e-2,
        "avg_z = {}",
        last.observables[0]
    );
    assert!(!last.pinv_fallback && !last.non_finite_abort);
}

#[test]
fn steady_state_observables_match_exact_diagonalization() {
    let topo = NetworkTopology::new(vec![2, 2, 3], Connectivity::LocalModulo, Tying::TiedPerLayer)
        .expect("valid topology");
    let m = LindbladModel::ising_1d(3, 1.0, 0.6, 1.0, true).expect("valid model");
    let names = ["avg_x", "avg_z", "xx(0,1)"];
    let obs: Vec<Observable> = names.iter().map(|s| Observable::parse(s, 3).unwrap()).collect();
    let ss = oracle::steady_state(&m).expect("oracle steady state");
    let mut cfg = SolverConfig::steady_state(3000, 1);
    cfg.convergence_tol = 1e-3;
    let out = run(&cfg, &m, &topo, &obs).expect("run succeeds");
    let last = out.records.last().unwrap();
    for (i, name) in names.iter().enumerate() {
        let exact = obs[i].expectation(ss.rho.mat());
        let rel = (last.observables[i] - exact).abs() / exact.abs();
        assert!(rel < 1e-2, "{name}: network {} vs exact {exact}", last.observables[i]);
    }
}

#[test]
fn dynamics_tracks_integrated_master_equation() {
    // Single decaying site with a transverse field; the variational time
    // evolution must follow the integrated master equation started from
    // the network's own initial state.
    let topo = NetworkTopology::new(vec![2, 1], Connectivity::LocalModulo, Tying::TiedPerLayer)
        .expect("valid topology");
    let m = LindbladModel::single_site(0.3, 1.0).expect("valid model");
    let obs = vec![Observable::parse("z(0)", 1).unwrap()];
    let dt = 5e-3;
    let steps = 200;
    let mut cfg = SolverConfig::dynamics(dt, steps, 11);
    cfg.mode = Mode::Dynamics;
    let out = run(&cfg, &m, &topo, &obs).expect("run succeeds");
    assert_eq!(out.records.len(), steps);

    let params0 = lindnet::solver::initial_params(&topo, 11);
    let rho0 = lindnet::network::feedforward(&topo, &params0).unwrap();
    let reference = oracle::evolve_rk4(&m, &rho0, dt, steps - 1, 1).expect("rk4");
    for (rec, (t_ref, rho_ref)) in out.records.iter().zip(&reference) {
        let t = rec.time.expect("dynamics record has time");
        assert!((t - t_ref).abs() < 1e-12);
        let exact = obs[0].expectation(rho_ref.mat());
        let err = (rec.observables[0] - exact).abs();
        assert!(err < 0.05, "t = {t}: network {} vs exact {exact}", rec.observables[0]);
    }
}
