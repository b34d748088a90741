use liegal_core::galerkin;
use liegal_core::liealg::{self, Family, XiTable};
use liegal_core::linalg::{self, CMat, CVec};
use liegal_core::models::{self, QuantumModel};
use liegal_core::planner::GeneratorSchedule;
use liegal_core::propagate::{self, PropagateOptions, Start};
use liegal_core::synth::{self, PhysicalControl, SynthOptions};
use liegal_core::C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(rotor: bool) -> QuantumModel {
    if rotor {
        models::rotor_model(1.0).unwrap()
    } else {
        models::well_model(1.0).unwrap()
    }
}

fn random_skew(n: usize, seed: u64) -> CMat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = CMat::<f64>::from_fn(n, n, |_, _| C64::new(linalg::gauss(&mut rng), linalg::gauss(&mut rng)));
    linalg::skew_part(&m)
}

fn random_state(n: usize, seed: u64) -> CVec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = CVec::<f64>::from_fn(n, |_, _| C64::new(linalg::gauss(&mut rng), linalg::gauss(&mut rng)));
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

fn control(p: usize, pieces: &[(f64, Vec<f64>)]) -> PhysicalControl {
    let mut bp = vec![0.0];
    let mut l1 = vec![0.0; p];
    for (dt, u) in pieces {
        bp.push(bp.last().unwrap() + dt);
        for j in 0..p {
            l1[j] += u[j].abs() * dt;
        }
    }
    let t = *bp.last().unwrap();
    PhysicalControl { breakpoints: bp, u: pieces.iter().map(|x| x.1.clone()).collect(), total_time: t, t_schedule: t, l1_norms: l1 }
}

fn pieces(p: usize) -> impl Strategy<Value = Vec<(f64, Vec<f64>)>> {
    prop::collection::vec((0.01f64..0.5, prop::collection::vec(-1.0f64..1.0, p)), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn excitations_partition_unity(n in 2usize..10, rotor in any::<bool>(), seed in any::<u64>()) {
        let m = model(rotor);
        let sys = galerkin::truncate::<f64>(&m, n).unwrap();
        let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
        let x = random_skew(n, seed);
        let mut sum = CMat::<f64>::zeros(n, n);
        for id in 0..gaps.len() {
            sum += galerkin::excite(&x, id, &gaps).unwrap();
        }
        prop_assert!(linalg::max_abs(&(sum - &x)) < 1e-12);
    }

    #[test]
    fn j_rotation_spans_real_and_imaginary_parts(n in 2usize..10, rotor in any::<bool>(), seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU) {
        let m = model(rotor);
        let sys = galerkin::truncate::<f64>(&m, n).unwrap();
        let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
        let x = random_skew(n, seed);
        let xi = C64::from_polar(1.0, theta);
        for id in 1..gaps.len() {
            let e = galerkin::excite(&x, id, &gaps).unwrap();
            let jx = galerkin::j_rotate_sys(&e, xi, &sys, &gaps).unwrap();
            let j1 = galerkin::j_rotate_sys(&e, C64::new(1.0, 0.0), &sys, &gaps).unwrap();
            let ji = galerkin::j_rotate_sys(&e, C64::new(0.0, 1.0), &sys, &gaps).unwrap();
            let span = &j1 * C64::new(xi.re, 0.0) + &ji * C64::new(xi.im, 0.0);
            prop_assert!(linalg::max_abs(&(jx.clone() - span)) < 1e-12);
            prop_assert!(linalg::skew_defect(&jx) < 1e-12);
        }
    }

    #[test]
    fn propagation_is_unitary_and_reversible(rotor in any::<bool>(), seed in any::<u64>(), ps in pieces(3)) {
        let m = model(rotor);
        let big_n = if rotor { 12 } else { 6 };
        let ps: Vec<_> = ps.into_iter().map(|(dt, u)| (dt, u[..m.p].to_vec())).collect();
        let c = control(m.p, &ps);
        let psi = random_state(big_n, seed);
        let rec = propagate::propagate_physical(&m, big_n, &c, &Start::State(psi.clone()), &PropagateOptions::default()).unwrap();
        prop_assert!(rec.states.iter().all(|s| (s.norm() - 1.0).abs() < 1e-10));
        let back = propagate::propagate_physical_inverse(&m, big_n, &c, rec.final_state()).unwrap();
        prop_assert!(linalg::vec_dist(&back, &psi) < 1e-9);
    }

    #[test]
    fn modulus_distance_ignores_phases(n in 2usize..10, seed in any::<u64>(), phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 10)) {
        let a = random_state(n, seed);
        let b = random_state(n, seed.wrapping_add(1));
        let rot = CVec::<f64>::from_fn(n, |k, _| a[k] * C64::from_polar(1.0, phases[k]));
        prop_assert!(propagate::modulus_distance(&a, &rot) < 1e-14);
        let d = propagate::modulus_distance(&a, &b);
        prop_assert!((propagate::modulus_distance(&rot, &b) - d).abs() < 1e-14);
        prop_assert!(d <= linalg::vec_dist(&a, &b) + 1e-14);
    }

    #[test]
    fn s_norm_grows_with_s(n in 2usize..12, rotor in any::<bool>(), seed in any::<u64>(), s in 0.0f64..2.0, ds in 0.0f64..1.0) {
        let m = model(rotor);
        // |lambda| >= 1 except at the rotor ground level, which is shifted away.
        let lambda: Vec<f64> = m.eigenvalues(n).iter().map(|l| l.abs().max(1.0)).collect();
        let psi = random_state(n, seed);
        prop_assert!((propagate::s_norm(&psi, 0.0, &lambda) - 1.0).abs() < 1e-12);
        prop_assert!(propagate::s_norm(&psi, s, &lambda) <= propagate::s_norm(&psi, s + ds, &lambda) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthesized_schedules_are_valid(seed in any::<u64>(), picks in prop::collection::vec((0usize..64, 0.05f64..1.5, any::<bool>()), 1..4)) {
        let m = model(false);
        let xi = XiTable::build(&m, 2, 8).unwrap();
        let gens = liealg::assemble(&m, 2, 2, Family::WV, &xi).unwrap();
        let mut plan = GeneratorSchedule::from_generators(2, &gens);
        for (g, d, rev) in picks {
            let g = g % gens.len();
            let sym = gens[g].label.control().map_or(true, |j| m.bounds[j].is_symmetric());
            plan.push(g, d, rev && sym);
        }
        let sc = synth::synthesize(&plan, &m, 4, &SynthOptions { seed, ..Default::default() }).unwrap();
        prop_assert!(sc.interaction.validate(&m).is_ok());
        prop_assert!(sc.physical.validate(&m).is_ok());
        prop_assert!(sc.physical.l1_within_bounds(&m));
        prop_assert!((sc.interaction.duration() - sc.physical.t_schedule).abs() <= 1e-9 * sc.physical.t_schedule.max(1.0));
        prop_assert!(sc.physical.total_time >= sc.physical.t_schedule * (1.0 - 1e-12));
    }
}
