//! Tangent-hyperplane invariants on the Heisenberg group.

use nalgebra::{DMatrix, DVector};
use srball::flow::{endpoint, endpoint_jacobian, orthocomplement_image, perturbation_map, ControlGrid, FlowOptions};
use srball::geodesic::{hamiltonian_flow, normalize_energy, recover_control, Covector};
use srball::linalg::distance_to_span;
use srball::metric::{ball_membership, CovectorSampler, MembershipOptions, ShootingOptions};
use srball::structure::DEFAULT_RANK_TOL;
use srball::tangent::{candidate_hyperplane, probe_test, CandidateOptions, CoorientedHyperplane, HyperplaneCandidate, ProbeOptions, TangentVerdict};
use srball::Structure;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

/// Unit-speed normal minimizer of `example(1)` with the given initial covector.
fn minimizer(s: &Structure, xi: &[f64], t: f64, m: usize) -> ControlGrid {
    let lam = normalize_energy(s, &Covector::new(v(&[0.0; 3]), v(xi)).unwrap()).unwrap();
    let u = recover_control(s, &hamiltonian_flow(s, &lam, t, m).unwrap()).unwrap();
    u.scaled((t / u.l2_norm_sq()).sqrt())
}

/// Random control orthogonal to `u` with the given L2 norm.
fn orthogonal(rng: &mut CovectorSampler, u: &ControlGrid, norm: f64) -> ControlGrid {
    let g = DMatrix::from_fn(u.k(), u.m(), |_, _| rng.uniform(-1.0, 1.0));
    let g = ControlGrid::new(u.t_final(), g).unwrap();
    let g = g.add_scaled(-g.l2_inner(u) / u.l2_norm_sq(), u).unwrap();
    g.scaled(norm / g.l2_norm_sq().sqrt())
}

#[test]
fn at_most_one_hyperplane_is_confirmed() {
    let s = Structure::example(1).unwrap();
    let q = v(&[1.0, 0.0, 0.0]);
    let u = ControlGrid::constant(&[1.0, 0.0], 1.0, 100).unwrap();
    let HyperplaneCandidate::Hyperplane { plane, .. } = candidate_hyperplane(&s, s.q0(), &u, 1.0, &CandidateOptions::default()).unwrap() else {
        panic!("expected a hyperplane candidate");
    };
    let tilt = 0.2_f64;
    let mut normals = vec![plane.normal.clone(), -plane.normal.clone()];
    for axis in [1, 2] {
        for sign in [1.0, -1.0] {
            let mut nu = plane.normal.clone() * tilt.cos();
            nu[axis] += sign * tilt.sin();
            normals.push(nu);
        }
    }
    let opts = ProbeOptions::default();
    let confirmed: Vec<DVector<f64>> = normals
        .iter()
        .filter(|nu| {
            let h = CoorientedHyperplane::new(q.clone(), nu).unwrap();
            probe_test(&s, s.q0(), 1.0, &q, &h, &opts).unwrap().verdict == TangentVerdict::TangentConfirmed
        })
        .cloned()
        .collect();
    assert_eq!(confirmed.len(), 1, "confirmed normals: {confirmed:?}");
    for a in &confirmed {
        for b in &confirmed {
            assert!(a.angle(b) < 1e-2);
        }
    }
}

#[test]
fn curves_in_the_control_sphere_leave_along_the_candidate_plane() {
    let s = Structure::example(1).unwrap();
    let t = 1.0;
    let u = minimizer(&s, &[0.6, 0.8, 1.2], t, 100);
    let opts = FlowOptions::default();
    let jac = endpoint_jacobian(&s, s.q0(), &u, &opts).unwrap();
    let e = orthocomplement_image(&jac, &u, DEFAULT_RANK_TOL).unwrap().with_min_codimension(1);
    let mut rng = CovectorSampler::new(41);
    let h = 1e-4;
    for _ in 0..5 {
        let w = orthogonal(&mut rng, &u, u.l2_norm_sq().sqrt());
        let curve = |a: f64| endpoint(&s, s.q0(), &u.scaled(a.cos()).add_scaled(a.sin(), &w).unwrap(), &opts).unwrap();
        let velocity = (curve(h) - curve(-h)) / (2.0 * h);
        let off = distance_to_span(&velocity, &e.basis) / velocity.norm();
        assert!(off < 1e-3, "relative distance to the plane {off}");
    }
}

#[test]
fn perturbed_endpoints_stay_in_the_ball() {
    let s = Structure::example(1).unwrap();
    let t = 0.9;
    let u = minimizer(&s, &[-0.3, 1.0, -0.8], t, 60);
    let membership = MembershipOptions {
        shooting: ShootingOptions { seed: 43, ..Default::default() },
        ..Default::default()
    };
    let mut rng = CovectorSampler::new(43);
    for i in 0..10 {
        let norm = rng.uniform(0.2, 1.0);
        let w = orthogonal(&mut rng, &u, norm);
        let eps = rng.uniform(0.1, 1.0);
        let s_eval = if i % 2 == 0 { t } else { t / 2.0 };
        let q = perturbation_map(&s, s.q0(), &u, &w, eps, s_eval, &FlowOptions::default()).unwrap();
        let m = ball_membership(&s, s.q0(), t, &q, 1e-4, &membership).unwrap();
        assert!(m.verdict.in_closed_ball(), "sample {i}: {m:?}");
    }
}
