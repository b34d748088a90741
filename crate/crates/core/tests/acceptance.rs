//! One PASS/FAIL line per acceptance criterion. Every tolerance is pinned here.

use std::time::{Duration, Instant};

use liegal_core::galerkin::{self, TruncatedSystem};
use liegal_core::liealg::{self, CheckOptions, ConditionKind, Family, GenLabel, XiTable};
use liegal_core::linalg;
use liegal_core::models::{self, QuantumModel};
use liegal_core::pipeline::{self, Curve, TrackConfig, TransferConfig, TransferOutcome};
use liegal_core::planner::GeneratorSchedule;
use liegal_core::propagate::{self, PropagateOptions, Start};
use liegal_core::synth::{self, SynthOptions};
use liegal_core::{CMatrix, CVector, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// mpmath product of cos(pi / 2k), k >= 2, at 50 digits.
const VARPI_ORACLE: f64 = 0.429_780_216_437_991_7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn basis(n: usize, k: usize) -> CVector {
    CVector::from_fn(n, |i, _| C64::new(if i == k { 1.0 } else { 0.0 }, 0.0))
}

fn gaps_of(sys: &TruncatedSystem<f64>) -> galerkin::GapSet {
    galerkin::spectral_gaps(sys, galerkin::default_gap_tol(&sys.a_diag))
}

fn criterion_1() -> Outcome {
    const TOLS: [f64; 3] = [1e-10, 1e-8, 1e-6];
    const MAX_SECONDS: f64 = 30.0;
    let well = models::well_model(1.0).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    let mut slowest = Duration::ZERO;
    for n in 2..=6 {
        let gens = liealg::adjacent_gap_activations(&well, n, 0, true).unwrap();
        let plain = liealg::adjacent_gap_activations(&well, n, 0, false).unwrap();
        for tol in TOLS {
            let t = Instant::now();
            let dim = liealg::lie_closure(&gens, tol, 4 * n).unwrap().dim;
            slowest = slowest.max(t.elapsed());
            ok &= dim == n * n - 1;
            if tol == 1e-8 {
                let d0 = liealg::lie_closure(&plain, tol, 4 * n).unwrap().dim;
                notes.push(format!("well n={n}: {dim} (unrotated {d0})"));
            }
        }
    }
    for (n, anchor, want) in [(8usize, 1usize, 63usize), (12, 2, 143)] {
        let rotor = models::rotor_model_anchored(1.0, anchor).unwrap();
        for tol in TOLS {
            let t = Instant::now();
            let r = liealg::check_condition(&rotor, n, ConditionKind::Lgsc, &CheckOptions { rank_tol: tol, ..Default::default() }).unwrap();
            slowest = slowest.max(t.elapsed());
            ok &= r.closure.dim == want && r.holds;
            if tol == 1e-8 {
                notes.push(format!("rotor V{n}: {}", r.closure.dim));
            }
        }
    }
    ok &= slowest.as_secs_f64() < MAX_SECONDS;
    outcome(ok, format!("{}; rank_tol in {TOLS:?}; slowest {:.2?}", notes.join(", "), slowest))
}

fn criterion_2() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut worst_unity = 0.0f64;
    let mut worst_bracket = 0.0f64;
    let mut literal = 0.0f64;
    let mut worst_rotor = 0.0f64;
    let mut worst_parity = 0.0f64;
    let well = models::well_model(1.0).unwrap();
    let rotor = models::rotor_model(1.0).unwrap();
    for model in [&well, &rotor] {
        for n in 2..=12 {
            let sys = galerkin::truncate::<f64>(model, n).unwrap();
            let gaps = gaps_of(&sys);
            let a = sys.a_matrix();
            for b in &sys.b {
                let mut sum = CMatrix::zeros(n, n);
                for id in 0..gaps.len() {
                    let e = galerkin::excite(b, id, &gaps).unwrap();
                    sum += &e;
                    let sigma = gaps.gaps[id];
                    let lhs = linalg::commutator(&a, &e);
                    let ji = galerkin::j_rotate_sys(&e, C64::new(0.0, 1.0), &sys, &gaps).unwrap();
                    let scale = linalg::max_abs(&lhs).max(1.0);
                    worst_bracket = worst_bracket.max(linalg::max_abs(&(&lhs + &ji * C64::new(sigma, 0.0))) / scale);
                    literal = literal.max(linalg::max_abs(&(&lhs - &ji * C64::new(sigma, 0.0))) / scale);
                }
                worst_unity = worst_unity.max(linalg::max_abs(&(sum - b)));
            }
        }
    }
    let anchor = rotor.rotor_anchor().unwrap();
    for j in 0..3 {
        for l in 0..12 {
            for k in 0..12 {
                let (a, b) = (models::rotor_state(anchor, l), models::rotor_state(anchor, k));
                if a.l == b.l {
                    worst_rotor = worst_rotor.max(rotor.coupling(j, l, k).norm());
                }
            }
        }
    }
    for l in 0..12 {
        for k in 0..12 {
            if (l + k) % 2 == 0 {
                // 0-based indices of equal parity are 1-based levels with even sum.
                worst_parity = worst_parity.max(well.coupling(0, l, k).norm());
            }
        }
    }
    let ok = worst_unity <= TOL && worst_bracket <= TOL && worst_rotor <= TOL && worst_parity <= TOL;
    outcome(
        ok,
        format!(
            "partition {worst_unity:.1e}, [A,E_s] = -s J_i(E_s) {worst_bracket:.1e} (with +s as printed: {literal:.1e}), rotor intra-level {worst_rotor:.1e}, well parity {worst_parity:.1e}; n <= 12, tol {TOL:.0e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    const TOL: f64 = 1e-3;
    let v = synth::varpi(TOL);
    let mut ok = (v - VARPI_ORACLE).abs() < TOL;
    let mut ks = Vec::new();
    let mut k = 4;
    while k <= 1 << 16 {
        let b = synth::varpi_bracket(k);
        // 4e-16 absorbs rounding of the closed-form lower bound.
        ok &= b.lower <= VARPI_ORACLE + 4e-16 && VARPI_ORACLE <= b.upper && b.upper <= b.partial;
        ks.push(k);
        k *= 4;
    }
    outcome(ok, format!("varpi = {v:.6} vs oracle {VARPI_ORACLE:.6} (tol {TOL:.0e}); brackets hold for K* in {ks:?}"))
}

fn criterion_4() -> Outcome {
    const TOL: f64 = 0.02;
    const REEVAL: f64 = 1e-12;
    const MAX_SECONDS: f64 = 60.0;
    const SPACING: f64 = 1.0;
    let t = Instant::now();
    let pi2 = std::f64::consts::PI.powi(2);
    let mut sets: Vec<(Vec<f64>, C64)> = vec![(vec![1.5 * pi2, 4.0 * pi2, 2.5 * pi2], C64::new(1.0, 0.0))];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    while sets.len() < 21 {
        let kappa = rng.gen_range(1..=6);
        let mut g: Vec<f64> = Vec::new();
        while g.len() < kappa {
            let x: f64 = rng.gen_range(1.0..50.0);
            if g.iter().all(|y| (y.abs() - x).abs() > 0.25) {
                g.push(if rng.gen_bool(0.5) { x } else { -x });
            }
        }
        let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        sets.push((g, C64::from_polar(1.0, th)));
    }
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut worst_re = 0.0f64;
    for (g, xi) in &sets {
        let train = synth::convexify_pulses(g, *xi, 0.0, SPACING, TOL).unwrap();
        ok &= train.met && train.error() < TOL;
        worst = worst.max(train.error());
        let back: synth::PulseTrain = serde_json::from_str(&serde_json::to_string(&train).unwrap()).unwrap();
        let (a, s) = back.evaluate();
        let d = (a.re - train.achieved_active[0]).abs().max((a.im - train.achieved_active[1]).abs()).max((s - train.achieved_suppressed).abs());
        worst_re = worst_re.max(d);
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= worst_re <= REEVAL && secs < MAX_SECONDS;
    outcome(ok, format!("{} sets, worst error {worst:.2e} (tol {TOL}), re-evaluation {worst_re:.1e} (<= {REEVAL:.0e}), {secs:.1} s (< {MAX_SECONDS} s)", sets.len()))
}

fn single_segment_distances(model: &QuantumModel, n: usize, big_n: usize, d: f64) -> Vec<f64> {
    let xi = XiTable::build(model, n, 4 * n).unwrap();
    let gens = liealg::assemble(model, n, n, Family::WV, &xi).unwrap();
    let idx = gens.iter().position(|g| matches!(g.label, GenLabel::Activated { .. })).unwrap();
    let mut plan = GeneratorSchedule::from_generators(n, &gens);
    plan.push(idx, d, false);
    let target = synth::segment_target(&plan, 0, model, big_n).unwrap();
    let ideal = linalg::expm(&(target * C64::new(d, 0.0)));
    [1, 2, 4, 8]
        .iter()
        .map(|&h| {
            let sc = synth::synthesize(&plan, model, big_n, &SynthOptions { h, ..Default::default() }).unwrap();
            let rec = propagate::propagate_interaction(model, big_n, &sc.interaction, &Start::Identity, &PropagateOptions { stride: usize::MAX, ..Default::default() }).unwrap();
            let u = rec.propagators.unwrap().pop().unwrap();
            linalg::op_norm(&(u - &ideal))
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let well = single_segment_distances(&models::well_model(1.0).unwrap(), 2, 6, 10.0);
    let rotor = single_segment_distances(&models::rotor_model(1.0).unwrap(), 8, 16, 5.0);
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" > ");
    outcome(dec(&well) && dec(&rotor), format!("distance to exp at h = 1,2,4,8: well {}, rotor {}", fmt(&well), fmt(&rotor)))
}

fn well_transfer(seed: u64) -> TransferOutcome {
    let model = models::well_model(1.0).unwrap();
    let mut cfg = TransferConfig::new(4, 8);
    cfg.steer.tol = 1e-4;
    cfg.steer.seed = seed;
    cfg.synth.seed = seed;
    cfg.replay_n = Some(16);
    pipeline::synthesize_transfer(&model, &[basis(4, 0)], &[basis(4, 1)], &cfg).unwrap()
}

fn criterion_6(out: &TransferOutcome) -> Outcome {
    const MIN_POP: f64 = 0.9;
    const MAX_LEAK: f64 = 0.05;
    let p2 = out.fidelities[0];
    let leak = out.leakage.as_ref().unwrap()[0];
    let l1 = out.l1_norms[0];
    let ok = p2 >= MIN_POP && leak < MAX_LEAK && l1 <= out.t_schedule && out.l1_within_bounds;
    outcome(
        ok,
        format!("p2 = {p2:.4} (>= {MIN_POP}), leakage at N=16 {leak:.2e} (< {MAX_LEAK}), L1 {l1:.1} <= T_schedule {:.1}; T = {:.1}", out.t_schedule, out.total_time),
    )
}

fn criterion_7() -> (Outcome, f64) {
    const MIN_FID: f64 = 0.8;
    const MAX_LEAK: f64 = 0.1;
    let t = Instant::now();
    let model = models::rotor_model(1.0).unwrap();
    let a = model.rotor_anchor().unwrap();
    let i0 = models::rotor_linear(a, models::RotorIndex { l: 0, m: 0 });
    let i1 = models::rotor_linear(a, models::RotorIndex { l: 1, m: 0 });
    let mut cfg = TransferConfig::new(8, 24);
    cfg.steer.tol = 1e-4;
    cfg.synth.h = 2;
    cfg.replay_n = Some(48);
    let out = pipeline::synthesize_transfer(&model, &[basis(i0 + 1, i0)], &[basis(i0 + 1, i1)], &cfg).unwrap();
    let fid = out.fidelities[0];
    let leak = out.leakage.as_ref().unwrap()[0];
    let used = out.l1_norms.iter().filter(|&&x| x > 0.0).count();
    let ok = fid >= MIN_FID && leak < MAX_LEAK && used == 3 && out.l1_within_bounds;
    (
        outcome(
            ok,
            format!(
                "n = {} (Y00 enters at level 9), N = 24, h = 2: fidelity {fid:.4} (>= {MIN_FID}), leakage at N=48 {leak:.2e} (< {MAX_LEAK}), controls used {used}/3, {:.1?}",
                out.n,
                t.elapsed()
            ),
        ),
        out.max_unitarity_defect,
    )
}

fn criterion_8() -> (Outcome, f64) {
    const EPS: f64 = 0.1;
    let model = models::well_model(1.0).unwrap();
    let mut cfg = TrackConfig::new(2, 8);
    cfg.track.eps = EPS;
    let curve = pipeline::population_ramp(2, 0, 1, 10);
    let times: Vec<f64> = (0..=10).map(f64::from).collect();
    let out = pipeline::track_curve(&model, &Curve::Moduli(curve), &times, None, &cfg).unwrap();
    (outcome(out.max_distance < EPS, format!("max modulus distance {:.4} over {} samples (< {EPS})", out.max_distance, times.len())), out.max_unitarity_defect)
}

fn criterion_9() -> (Outcome, f64) {
    const EPS: f64 = 0.1;
    let model = models::well_model(1.0).unwrap();
    let cfg = TransferConfig::new(2, 8);
    let out = pipeline::synthesize_transfer(&model, &[basis(2, 0)], &[basis(2, 1)], &cfg).unwrap();
    let d = propagate::crop_comparison(&out.control.plan, &out.control.interaction, &model, 8, 1).unwrap();
    let rec = propagate::propagate_interaction(&model, 8, &out.control.interaction, &Start::Identity, &PropagateOptions::default()).unwrap();
    (outcome(d < EPS, format!("max_t ||flow - Crop_2(Psi_t)|| = {d:.4} over {} breakpoints (< {EPS})", rec.times.len())), rec.max_unitarity_defect())
}

fn criterion_10(well: &TransferOutcome, defects: &[f64]) -> Outcome {
    const UNITARITY: f64 = 1e-9;
    const MODULI: f64 = 1e-8;
    let model = models::well_model(1.0).unwrap();
    let psi = basis(8, 0);
    let opts = PropagateOptions::default();
    let phys = propagate::propagate_physical(&model, 8, &well.control.physical, &Start::State(psi.clone()), &opts).unwrap();
    let inter = propagate::propagate_interaction(&model, 8, &well.control.interaction, &Start::State(psi), &opts).unwrap();
    let mut moduli = 0.0f64;
    for (a, b) in phys.states.iter().zip(&inter.states) {
        for (x, y) in a.iter().zip(b.iter()) {
            moduli = moduli.max((x.norm() - y.norm()).abs());
        }
    }
    let same_len = phys.states.len() == inter.states.len();
    let unit = defects.iter().chain([phys.max_unitarity_defect(), inter.max_unitarity_defect(), well.max_unitarity_defect].iter()).fold(0.0f64, |m, &x| m.max(x));
    let again = well_transfer(7);
    let first = well_transfer(7);
    let b1 = serde_json::to_vec(&first.control).unwrap();
    let b2 = serde_json::to_vec(&again.control).unwrap();
    let det = b1 == b2 && serde_json::to_vec(&first.fidelities).unwrap() == serde_json::to_vec(&again.fidelities).unwrap();
    outcome(
        unit < UNITARITY && same_len && moduli < MODULI && det,
        format!("unitarity {unit:.1e} (< {UNITARITY:.0e}), moduli equivalence {moduli:.1e} over {} breakpoints (< {MODULI:.0e}), seeded reruns byte-identical: {det}", phys.states.len()),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |k: usize, o: Outcome| {
        println!("{} criterion {k}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };
    run(1, criterion_1());
    run(2, criterion_2());
    run(3, criterion_3());
    run(4, criterion_4());
    run(5, criterion_5());
    let well = well_transfer(0);
    run(6, criterion_6(&well));
    let (o7, d7) = criterion_7();
    run(7, o7);
    let (o8, d8) = criterion_8();
    run(8, o8);
    let (o9, d9) = criterion_9();
    run(9, o9);
    run(10, criterion_10(&well, &[d7, d8, d9]));
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
