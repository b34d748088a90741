//! End-to-end runs: certify, lift, steer, synthesize and validate by propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liealg::{self, CheckOptions, ConditionKind, ConditionReport, Family, XiTable};
use crate::linalg::{self, CMat, CVec};
use crate::models::QuantumModel;
use crate::planner::{self, PhaseAlignOptions, PhaseAlignResult, SteerOptions, TrackOptions};
use crate::propagate::{self, PropagateOptions, Start};
use crate::synth::{self, SynthOptions, SynthesizedControl};
use crate::C64;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Smallest truncation for the plan; raised when the states need more levels.
    pub n: usize,
    pub big_n: usize,
    /// Norm fraction `1 - eps^2` kept by the lift.
    pub lift_eps: f64,
    pub check: CheckOptions,
    pub steer: SteerOptions,
    pub synth: SynthOptions,
    pub align: PhaseAlignOptions,
    /// Truncation of a leakage replay, if any.
    pub replay_n: Option<usize>,
}

impl TransferConfig {
    pub fn new(n: usize, big_n: usize) -> Self {
        TransferConfig {
            n,
            big_n,
            lift_eps: 1e-6,
            check: CheckOptions::default(),
            steer: SteerOptions::default(),
            synth: SynthOptions::default(),
            align: PhaseAlignOptions::default(),
            replay_n: None,
        }
    }
}

/// Outcome of `synthesize_transfer`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub report: ConditionReport,
    pub n: usize,
    #[serde(with = "linalg::cmat_serde")]
    pub target_unitary: CMat<f64>,
    pub steer_error: f64,
    pub steer_met: bool,
    pub control: SynthesizedControl,
    pub alignment: Option<PhaseAlignResult>,
    /// `|<target, flow psi0>|^2` of the plan at `n`.
    pub predicted_fidelities: Vec<f64>,
    /// `|<target, psi(T)>|^2` of the physical run at `N`.
    pub fidelities: Vec<f64>,
    pub max_unitarity_defect: f64,
    /// Population above level `N` in the replay at `replay_n`, per state.
    pub leakage: Option<Vec<f64>>,
    pub t_schedule: f64,
    pub total_time: f64,
    pub l1_norms: Vec<f64>,
    pub l1_within_bounds: bool,
    /// All budgets met and every check passed.
    pub conforming: bool,
    #[serde(skip)]
    pub final_states: Vec<CVec<f64>>,
}

fn pad(v: &CVec<f64>, n: usize) -> Result<CVec<f64>> {
    if v.len() > n && v.rows(n, v.len() - n).norm() > 0.0 {
        return Err(Error::Dimension(format!("state has weight beyond level {n}")));
    }
    Ok(CVec::<f64>::from_fn(n, |k, _| if k < v.len() { v[k] } else { C64::new(0.0, 0.0) }))
}

fn fidelity(target: &CVec<f64>, psi: &CVec<f64>) -> f64 {
    let n = target.len().min(psi.len());
    let mut ov = C64::new(0.0, 0.0);
    for k in 0..n {
        ov += target[k].conj() * psi[k];
    }
    ov.norm_sqr()
}

fn certify(model: &QuantumModel, n: usize, kind: ConditionKind, opts: &CheckOptions) -> Result<(ConditionReport, XiTable)> {
    let report = liealg::check_condition(model, n, kind, opts)?;
    if !report.holds {
        return Err(Error::Precondition(format!(
            "{:?} fails at n = {n}: closure dimension {} < {}",
            kind, report.closure.dim, report.target_dim
        )));
    }
    let xi = report.xi.clone();
    Ok((report, xi))
}

/// Moves `initial[i]` to `targets[i]` (up to a common phase) with an admissible control.
pub fn synthesize_transfer(model: &QuantumModel, initial: &[CVec<f64>], targets: &[CVec<f64>], cfg: &TransferConfig) -> Result<TransferOutcome> {
    let len = initial.iter().chain(targets).map(|v| v.len()).max().unwrap_or(0).max(cfg.n);
    let ini: Vec<CVec<f64>> = initial.iter().map(|v| pad(v, len)).collect::<Result<_>>()?;
    let tar: Vec<CVec<f64>> = targets.iter().map(|v| pad(v, len)).collect::<Result<_>>()?;
    let (n, g) = planner::lift_target(&ini, &tar, cfg.n, cfg.lift_eps)?;
    if n > cfg.big_n {
        return Err(Error::InvalidArgument(format!("states need n = {n} > N = {}", cfg.big_n)));
    }
    synthesize_unitary(model, &g, initial, targets, cfg)
}

/// Same as `synthesize_transfer` for an explicit `g` in SU(n).
pub fn synthesize_unitary(model: &QuantumModel, g: &CMat<f64>, initial: &[CVec<f64>], targets: &[CVec<f64>], cfg: &TransferConfig) -> Result<TransferOutcome> {
    let n = g.nrows();
    let big_n = cfg.big_n;
    let (report, xi) = certify(model, n, ConditionKind::Lgcc, &cfg.check)?;
    let gens = liealg::assemble(model, n, n, Family::W, &xi)?;
    let mut sopts = cfg.steer.clone();
    if sopts.drift_period.is_none() {
        sopts.drift_period = model.drift_period();
    }
    let steer = planner::steer_su(g, &gens, &sopts)?;
    let mut control = synth::synthesize(&steer.schedule, model, big_n, &cfg.synth)?;

    let flow = steer.schedule.flow();
    let init_n: Vec<CVec<f64>> = initial.iter().map(|v| pad(v, n)).collect::<Result<_>>()?;
    let targ_n: Vec<CVec<f64>> = targets.iter().map(|v| pad(v, n)).collect::<Result<_>>()?;
    let planned: Vec<CVec<f64>> = init_n.iter().map(|v| &flow * v).collect();
    let predicted_fidelities = planned.iter().zip(&targ_n).map(|(p, t)| fidelity(t, p)).collect();

    // The physical state is exp(omega A) y; a final free drift restores the relative phases.
    let lambda = model.eigenvalues(n);
    let mut alignment = None;
    let needs_phase = targ_n.len() > 1 || targ_n.iter().any(|t| t.iter().filter(|z| z.norm() > 1e-12).count() > 1);
    if needs_phase && !targ_n.is_empty() {
        let w = control.interaction.omega_end();
        let current: Vec<CVec<f64>> = planned
            .iter()
            .map(|p| CVec::<f64>::from_fn(n, |k, _| p[k] * C64::from_polar(1.0, lambda[k] * w)))
            .collect();
        let res = planner::phase_align(&current, &targ_n, &lambda, &cfg.align)?;
        if res.t > 0.0 {
            control.interaction.push_free(res.t);
            control.physical = synth::to_physical(&control.interaction);
        }
        alignment = Some(res);
    }
    control.physical.validate(model)?;

    let popts = PropagateOptions { stride: usize::MAX, ..Default::default() };
    let mut fidelities = Vec::new();
    let mut final_states = Vec::new();
    let mut max_defect = 0.0f64;
    let starts: Vec<CVec<f64>> = initial.iter().map(|v| pad(v, big_n)).collect::<Result<_>>()?;
    let recs = propagate::propagate_many(model, big_n, &control.physical, &starts, &popts)?;
    for (rec, t) in recs.iter().zip(targets) {
        let fin = rec.final_state().clone();
        fidelities.push(fidelity(t, &fin));
        max_defect = max_defect.max(rec.max_unitarity_defect());
        final_states.push(fin);
    }
    let leakage = match cfg.replay_n {
        Some(n2) if n2 > big_n => {
            let mut out = Vec::new();
            for v in initial {
                let r = propagate::galerkin_consistency(model, &control.physical, &pad(v, big_n)?, big_n, n2, usize::MAX)?;
                out.push(r.leaked_final);
            }
            Some(out)
        }
        _ => None,
    };
    let l1_ok = control.physical.l1_within_bounds(model);
    let align_ok = alignment.as_ref().map_or(true, |a| a.mismatch <= cfg.align.eta);
    Ok(TransferOutcome {
        report,
        n,
        target_unitary: g.clone(),
        steer_error: steer.error,
        steer_met: steer.met,
        predicted_fidelities,
        fidelities,
        max_unitarity_defect: max_defect,
        leakage,
        t_schedule: control.physical.t_schedule,
        total_time: control.physical.total_time,
        l1_norms: control.physical.l1_norms.clone(),
        l1_within_bounds: l1_ok,
        conforming: steer.met && l1_ok && align_ok,
        control,
        alignment,
        final_states,
    })
}

/// Target of a tracking run: moduli or unitaries sampled at increasing times.
#[derive(Clone, Debug)]
pub enum Curve {
    Moduli(Vec<Vec<f64>>),
    Unitary(Vec<CMat<f64>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackConfig {
    pub n: usize,
    pub big_n: usize,
    pub check: CheckOptions,
    pub track: TrackOptions,
    pub synth: SynthOptions,
}

impl TrackConfig {
    pub fn new(n: usize, big_n: usize) -> Self {
        TrackConfig { n, big_n, check: CheckOptions::default(), track: TrackOptions::default(), synth: SynthOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackOutcome {
    pub report: ConditionReport,
    pub times: Vec<f64>,
    /// Schedule time reached at each sample.
    pub tau: Vec<f64>,
    /// Physical time of each sample.
    pub physical_times: Vec<f64>,
    /// Planner error of the SU(n) flow at each sample.
    pub plan_errors: Vec<f64>,
    /// Modulus distance of the physical state to the target moduli at each sample.
    pub distances: Vec<f64>,
    pub max_distance: f64,
    /// Populations of the physical state at each sample.
    pub populations: Vec<Vec<f64>>,
    pub max_unitarity_defect: f64,
    pub control: SynthesizedControl,
}

/// Tracks a curve starting from `psi0` (default: the first moduli as a real vector).
pub fn track_curve(model: &QuantumModel, curve: &Curve, times: &[f64], psi0: Option<&CVec<f64>>, cfg: &TrackConfig) -> Result<TrackOutcome> {
    let n = cfg.n;
    let (unitaries, moduli, psi0) = match curve {
        Curve::Moduli(m) => {
            if m.is_empty() || m.iter().any(|v| v.len() != n) {
                return Err(Error::InvalidArgument(format!("every modulus vector must have {n} entries")));
            }
            let p0 = match psi0 {
                Some(p) => pad(p, n)?,
                None => CVec::<f64>::from_iterator(n, m[0].iter().map(|&x| C64::new(x, 0.0))),
            };
            (planner::lift_modulus_curve(m, Some(&p0))?, m.clone(), p0)
        }
        Curve::Unitary(us) => {
            if us.is_empty() {
                return Err(Error::InvalidArgument("empty curve".into()));
            }
            let p0 = match psi0 {
                Some(p) => pad(p, n)?,
                None => CVec::<f64>::from_fn(n, |k, _| C64::new(if k == 0 { 1.0 } else { 0.0 }, 0.0)),
            };
            let m = us.iter().map(|u| propagate::moduli(&(u * &p0))).collect();
            (us.clone(), m, p0)
        }
    };
    if unitaries.len() != times.len() {
        return Err(Error::InvalidArgument("curve and times differ in length".into()));
    }
    let (report, xi) = certify(model, n, ConditionKind::Lgsc, &cfg.check)?;
    let gens = liealg::assemble(model, n, n, Family::WV, &xi)?;
    let mut topts = cfg.track.clone();
    if topts.steer.drift_period.is_none() {
        topts.steer.drift_period = model.drift_period();
    }
    let plan = planner::track_su(&unitaries, times, &gens, &topts)?;
    let control = synth::synthesize(&plan.schedule, model, cfg.big_n, &cfg.synth)?;
    let rec = propagate::propagate_physical(model, cfg.big_n, &control.physical, &Start::State(pad(&psi0, cfg.big_n)?), &PropagateOptions::default())?;
    let ends = &control.interaction.segment_ends;
    let mut distances = Vec::new();
    let mut physical_times = Vec::new();
    let mut populations = Vec::new();
    for (i, &seg) in plan.sample_segments.iter().enumerate() {
        let idx = if seg == 0 { 0 } else { ends[seg - 1] };
        let psi = &rec.states[idx];
        distances.push(propagate::modulus_distance_to(psi, &moduli[i]));
        physical_times.push(rec.times[idx]);
        populations.push(rec.populations[idx].clone());
    }
    Ok(TrackOutcome {
        report,
        times: times.to_vec(),
        tau: plan.tau.clone(),
        physical_times,
        plan_errors: plan.errors.clone(),
        max_distance: distances.iter().copied().fold(0.0, f64::max),
        distances,
        populations,
        max_unitarity_defect: rec.max_unitarity_defect(),
        control,
    })
}

/// Linear population transfer between levels `a` and `b` of an `n`-level state, over `samples + 1` points.
pub fn population_ramp(n: usize, a: usize, b: usize, samples: usize) -> Vec<Vec<f64>> {
    (0..=samples)
        .map(|i| {
            let s = i as f64 / samples as f64;
            let mut m = vec![0.0; n];
            m[a] = (1.0 - s).sqrt();
            m[b] = s.sqrt();
            m
        })
        .collect()
}

/// Distance of each sampled flow to the identity-anchored target, as replayed independently.
pub fn replay_tracking_errors(plan: &planner::TrackingPlan, curve: &[CMat<f64>]) -> Vec<f64> {
    propagate::replay_schedule(&plan.schedule, &plan.tau)
        .iter()
        .zip(curve)
        .map(|(u, g)| linalg::phase_distance(u, g))
        .collect()
}
