//! Metric invariants of the distance solvers on the example family.

use std::f64::consts::PI;

use nalgebra::DVector;
use srball::flow::{endpoint_at, FlowOptions};
use srball::geodesic::Covector;
use srball::metric::{
    ball_membership, cut_time_scan, distance_shooting, distance_transcription, CovectorSampler, CutScan, MembershipOptions, ShootingOptions,
    TranscriptionOptions, Verdict,
};
use srball::Structure;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

fn targets(seed: u64, count: usize) -> Vec<DVector<f64>> {
    let mut rng = CovectorSampler::new(seed);
    (0..count)
        .map(|_| {
            let dir = rng.gaussian(3).normalize();
            dir * rng.uniform(0.2, 1.0)
        })
        .collect()
}

fn shooting(seed: u64) -> ShootingOptions {
    ShootingOptions { seed, ..Default::default() }
}

#[test]
fn distance_is_invariant_under_the_reflection() {
    for p in [1u32, 2] {
        let s = Structure::example(p).unwrap();
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        for q in targets(5 + p as u64, 5) {
            let mirror = v(&[-q[0], q[1], sign * q[2]]);
            let a = distance_shooting(&s, s.q0(), &q, &shooting(1)).unwrap().value;
            let b = distance_shooting(&s, s.q0(), &mirror, &shooting(2)).unwrap().value;
            assert!((a - b).abs() < 1e-4, "p = {p}, q = {q:?}: {a} vs {b}");
        }
    }
}

#[test]
fn triangle_inequality() {
    let s = Structure::example(1).unwrap();
    let pts = targets(17, 6);
    for pair in pts.chunks(2) {
        let (q1, q2) = (&pair[0], &pair[1]);
        let d02 = distance_shooting(&s, s.q0(), q2, &shooting(3)).unwrap().value;
        let d01 = distance_shooting(&s, s.q0(), q1, &shooting(3)).unwrap().value;
        let from_q1 = s.with_base_point(q1.clone()).unwrap();
        let d12 = distance_shooting(&from_q1, q1, q2, &shooting(3)).unwrap().value;
        assert!(d02 <= d01 + d12 + 1e-6, "{d02} > {d01} + {d12}");
    }
}

#[test]
fn membership_is_monotone_in_the_radius() {
    let s = Structure::example(1).unwrap();
    let opts = MembershipOptions {
        shooting: shooting(4),
        ..Default::default()
    };
    let radii = [0.3, 0.6, 0.9, 1.2, 1.5, 2.0];
    for q in targets(23, 4) {
        let mut inside = false;
        for t in radii {
            let m = ball_membership(&s, s.q0(), t, &q, 1e-6, &opts).unwrap();
            if inside {
                assert_eq!(m.verdict, Verdict::Inside, "q = {q:?}, t = {t}");
            }
            inside |= m.verdict == Verdict::Inside;
        }
    }
}

#[test]
fn segments_of_minimizers_are_minimizing() {
    let s = Structure::example(1).unwrap();
    for q in targets(29, 3) {
        let d = distance_shooting(&s, s.q0(), &q, &shooting(5)).unwrap();
        let u = &d.minimizers[0].control;
        for frac in [0.25, 0.5, 0.75] {
            let tau = frac * u.t_final();
            let mid = endpoint_at(&s, s.q0(), u, tau, &FlowOptions::default()).unwrap();
            let dm = distance_shooting(&s, s.q0(), &mid, &shooting(6)).unwrap().value;
            assert!((dm - tau).abs() < 5e-3, "q = {q:?}, s = {tau}: distance {dm}");
        }
    }
}

#[test]
fn minimizers_satisfy_the_energy_identity() {
    let s = Structure::example(2).unwrap();
    for q in targets(31, 3) {
        let a = distance_shooting(&s, s.q0(), &q, &shooting(7)).unwrap();
        let b = distance_transcription(&s, s.q0(), &q, &TranscriptionOptions { seed: 7, ..Default::default() }).unwrap();
        for d in [&a, &b] {
            for m in &d.minimizers {
                let u = &m.control;
                let gap = (d.value * d.value - u.t_final() * u.l2_norm_sq()).abs();
                assert!(gap < 1e-6, "{:?}: gap {gap}", d.method);
            }
        }
    }
}

#[test]
fn cut_time_of_heisenberg_geodesics() {
    let s = Structure::example(1).unwrap();
    let opts = ShootingOptions { starts: 16, ..shooting(8) };
    let c = 2.5;
    let lam = Covector::new(v(&[0.0; 3]), v(&[1.0, 0.0, c])).unwrap();
    let expected = 2.0 * PI / c;
    let mut estimates = Vec::new();
    for points in [12, 17] {
        let scan = CutScan {
            t_min: 0.5,
            t_max: 4.0,
            points,
            refine: 10,
        };
        let t = cut_time_scan(&s, s.q0(), &lam, &scan, &opts).unwrap().expect("a cut time below 4");
        assert!((t - expected).abs() < 0.05 * expected, "{points} points: {t} vs {expected}");
        estimates.push(t);
    }
    assert!((estimates[0] - estimates[1]).abs() < 0.05 * expected);
    let straight = Covector::new(v(&[0.0; 3]), v(&[1.0, 0.0, 0.0])).unwrap();
    let scan = CutScan {
        t_min: 0.5,
        t_max: 3.0,
        points: 6,
        refine: 4,
    };
    assert_eq!(cut_time_scan(&s, s.q0(), &straight, &scan, &opts).unwrap(), None);
}
