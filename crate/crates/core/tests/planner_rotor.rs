use liegal_core::liealg::{assemble, Family, XiTable};
use liegal_core::linalg;
use liegal_core::models;
use liegal_core::planner::{steer_su, track_su, SteerOptions, TrackOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[test]
fn rotor_random_su8_within_budget() {
    let model = models::rotor_model(1.0).unwrap();
    let xi = XiTable::build(&model, 8, 24).unwrap();
    let gens = assemble(&model, 8, 8, Family::W, &xi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = linalg::random_special_unitary(8, &mut rng);
    let t = Instant::now();
    let opts = SteerOptions { tol: 1e-3, budget: 400, drift_period: model.drift_period(), ..Default::default() };
    let r = steer_su(&g, &gens, &opts).unwrap();
    eprintln!("rotor SU(8): error {:.3e}, {} segments, word {}, restarts {}, {:?}", r.error, r.schedule.segments.len(), r.word_length, r.restarts_used, t.elapsed());
    assert!(r.met);
    assert!(r.schedule.segments.len() <= 400);
    assert!(linalg::phase_distance(&r.schedule.flow(), &g) < 1e-3);
}

#[test]
fn rotor_tracks_one_parameter_curve() {
    let model = models::rotor_model(1.0).unwrap();
    let xi = XiTable::build(&model, 8, 24).unwrap();
    let gens = assemble(&model, 8, 8, Family::WV, &xi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = linalg::random_su(8, &mut rng) * num_complex::Complex64::new(0.5, 0.0);
    let times: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
    let curve: Vec<_> = times.iter().map(|&t| linalg::expm(&(&x * num_complex::Complex64::new(t, 0.0)))).collect();
    let t = Instant::now();
    let plan = track_su(&curve, &times, &gens, &TrackOptions { eps: 0.05, ..Default::default() }).unwrap();
    eprintln!("rotor tracking: max error {:.3e}, T = {:.2}, {} segments, {:?}", plan.errors.iter().fold(0.0f64, |a, &b| a.max(b)), plan.schedule.total_time, plan.schedule.segments.len(), t.elapsed());
    assert!(plan.errors.iter().all(|&e| e < 0.05));
    let replayed = liegal_core::pipeline::replay_tracking_errors(&plan, &curve);
    for (a, b) in replayed.iter().zip(&plan.errors) {
        assert!((a - b).abs() < 1e-10, "replay {a} vs plan {b}");
    }
}
