use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use liegal_core::liealg::{self, CheckOptions, ConditionKind, ConditionReport};
use liegal_core::linalg;
use liegal_core::models::{self, BoundKind, QuantumModel};
use liegal_core::pipeline::{self, Curve, TrackConfig, TransferConfig};
use liegal_core::planner;
use liegal_core::propagate::{self, PropagateOptions, Start};
use liegal_core::synth::{PhysicalControl, SynthesizedControl};
use liegal_core::{CMatrix, CVector, C64};
use serde::{Deserialize, Serialize};

use crate::config::{self, GlobalArgs, RunConfig};
use crate::output;
use crate::Kind;

/// Exit code of a failed command: 1 for failed conditions and budgets, 2 for configuration errors.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<liegal_core::Error>() {
        Some(liegal_core::Error::Precondition(_)) => 1,
        _ => 2,
    }
}

fn default_n(g: &GlobalArgs) -> usize {
    match (g.model_file.is_some(), g.model) {
        (false, config::BuiltIn::Rotor) => 8,
        _ => 4,
    }
}

fn check_options(cfg: &RunConfig) -> CheckOptions {
    CheckOptions { rank_tol: cfg.rank_tol, ..CheckOptions::default() }
}

fn cvec_pairs(v: &CVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn pad(v: &CVector, n: usize) -> Result<CVector> {
    if v.len() > n {
        bail!("state needs {} levels, truncation is {n}", v.len());
    }
    Ok(CVector::from_fn(n, |k, _| if k < v.len() { v[k] } else { C64::new(0.0, 0.0) }))
}

fn print_report(g: &GlobalArgs, human: &str, value: &impl Serialize) -> Result<()> {
    if g.json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        println!("{human}");
    }
    Ok(())
}

pub fn check(g: &GlobalArgs, kind: Kind) -> Result<u8> {
    let n = default_n(g);
    let (model, cfg) = config::resolve(g, n, |n| n)?;
    let kind = match kind {
        Kind::Lgcc => ConditionKind::Lgcc,
        Kind::Lgsc => ConditionKind::Lgsc,
    };
    let report = liealg::check_condition(&model, cfg.n, kind, &check_options(&cfg))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.holds { 0 } else { 1 })
}

fn refuse(report: &ConditionReport) -> Result<u8> {
    eprintln!(
        "{:?} fails at n = {}: closure dimension {} of {}",
        report.kind, report.n, report.closure.dim, report.target_dim
    );
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(1)
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    command: &'static str,
    config: &'a RunConfig,
    h: u32,
    initial: Vec<Vec<[f64; 2]>>,
    targets: Vec<Vec<[f64; 2]>>,
    n: usize,
    closure_dim: usize,
    caveats: &'a [String],
    steer_error: f64,
    steer_met: bool,
    segments: usize,
    max_segment_defect: f64,
    alignment: &'a Option<planner::PhaseAlignResult>,
    predicted_fidelities: &'a [f64],
    fidelities: &'a [f64],
    max_unitarity_defect: f64,
    leakage: &'a Option<Vec<f64>>,
    t_schedule: f64,
    total_time: f64,
    l1_norms: &'a [f64],
    l1_within_bounds: bool,
    conforming: bool,
    files: Vec<&'static str>,
}

fn write_control_files(dir: &Path, control: &SynthesizedControl) -> Result<()> {
    config::ensure_dir(dir)?;
    output::write_json(&dir.join("schedule.json"), control)?;
    output::write_json(&dir.join("control.json"), &control.physical)?;
    output::write_control_csv(&dir.join("control.csv"), &control.physical)
}

#[derive(Deserialize)]
struct MatrixFile {
    #[serde(with = "linalg::cmat_serde")]
    matrix: CMatrix,
}

fn read_unitary(path: &Path) -> Result<CMatrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let wrapped = format!("{{\"matrix\": {text}}}");
    let m: MatrixFile = serde_json::from_str(&wrapped).with_context(|| format!("parsing {}", path.display()))?;
    Ok(m.matrix)
}

pub fn synthesize(g: &GlobalArgs, from: &[String], to: &[String], unitary: Option<&Path>, h: u32, replay_n: Option<usize>) -> Result<u8> {
    let n0 = default_n(g);
    let (model, cfg) = config::resolve(g, n0, |n| 2 * n)?;
    let mut tc = TransferConfig::new(cfg.n, cfg.big_n);
    tc.check = check_options(&cfg);
    tc.steer.tol = cfg.steering_tol;
    tc.steer.budget = cfg.budget_segments;
    tc.steer.seed = cfg.seed;
    tc.synth.h = h.max(1);
    tc.synth.seed = cfg.seed;
    tc.synth.max_pulses = cfg.budget_pulses;
    tc.align.horizon = cfg.horizon;
    tc.lift_eps = 1e-6;
    if let Some(r) = replay_n {
        if r <= cfg.big_n {
            bail!("--replay-N = {r} must exceed --N = {}", cfg.big_n);
        }
        if matches!(model.n_max(), Some(m) if r > m) {
            bail!("--replay-N = {r} exceeds the model's n_max");
        }
    }
    tc.replay_n = replay_n;

    let (g_mat, initial, targets) = match unitary {
        Some(p) => {
            let u = read_unitary(p)?;
            if u.nrows() != u.ncols() || u.nrows() < 2 {
                bail!("unitary must be square of size at least 2");
            }
            let n = u.nrows();
            let ini: Vec<CVector> = (0..n).map(|k| CVector::from_fn(n, |i, _| C64::new(if i == k { 1.0 } else { 0.0 }, 0.0))).collect();
            let tar: Vec<CVector> = ini.iter().map(|v| &u * v).collect();
            (u, ini, tar)
        }
        None => {
            if from.len() != to.len() {
                bail!("{} initial and {} target states", from.len(), to.len());
            }
            let ini: Vec<CVector> = from.iter().map(|s| config::parse_state(s, &model)).collect::<Result<_>>()?;
            let tar: Vec<CVector> = to.iter().map(|s| config::parse_state(s, &model)).collect::<Result<_>>()?;
            let len = ini.iter().chain(&tar).map(|v| v.len()).max().unwrap_or(0).max(cfg.n);
            let ini: Vec<CVector> = ini.iter().map(|v| pad(v, len)).collect::<Result<_>>()?;
            let tar: Vec<CVector> = tar.iter().map(|v| pad(v, len)).collect::<Result<_>>()?;
            let (_, u) = planner::lift_target(&ini, &tar, cfg.n, tc.lift_eps)?;
            (u, ini, tar)
        }
    };
    let n = g_mat.nrows();
    if n > cfg.big_n {
        bail!("the states need n = {n} > N = {}", cfg.big_n);
    }
    let report = liealg::check_condition(&model, n, ConditionKind::Lgcc, &tc.check)?;
    if !report.holds {
        return refuse(&report);
    }
    let out = pipeline::synthesize_unitary(&model, &g_mat, &initial, &targets, &tc)?;
    write_control_files(&g.out, &out.control)?;
    let manifest = SynthManifest {
        command: "synthesize",
        config: &cfg,
        h: tc.synth.h,
        initial: initial.iter().map(cvec_pairs).collect(),
        targets: targets.iter().map(cvec_pairs).collect(),
        n: out.n,
        closure_dim: out.report.closure.dim,
        caveats: &out.report.caveats,
        steer_error: out.steer_error,
        steer_met: out.steer_met,
        segments: out.control.plan.segments.len(),
        max_segment_defect: out.control.defects.iter().copied().fold(0.0, f64::max),
        alignment: &out.alignment,
        predicted_fidelities: &out.predicted_fidelities,
        fidelities: &out.fidelities,
        max_unitarity_defect: out.max_unitarity_defect,
        leakage: &out.leakage,
        t_schedule: out.t_schedule,
        total_time: out.total_time,
        l1_norms: &out.l1_norms,
        l1_within_bounds: out.l1_within_bounds,
        conforming: out.conforming,
        files: vec!["schedule.json", "control.json", "control.csv", "manifest.json"],
    };
    output::write_json(&g.out.join("manifest.json"), &manifest)?;
    let human = format!(
        "n = {}, N = {}: fidelities {:?} (planned {:?}), T = {:.6}, L1 {:?}, conforming = {}; files in {}",
        out.n,
        cfg.big_n,
        out.fidelities,
        out.predicted_fidelities,
        out.total_time,
        out.l1_norms,
        out.conforming,
        g.out.display()
    );
    print_report(g, &human, &manifest)?;
    Ok(if out.conforming { 0 } else { 1 })
}

fn read_control(path: &Path) -> Result<PhysicalControl> {
    if path.extension().is_some_and(|e| e == "csv") {
        return output::read_control_csv(path);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(c) = serde_json::from_str::<PhysicalControl>(&text) {
        return Ok(c);
    }
    let s: SynthesizedControl = serde_json::from_str(&text).with_context(|| format!("{} is neither a control nor a schedule", path.display()))?;
    Ok(s.physical)
}

#[derive(Serialize)]
struct SimSummary<'a> {
    command: &'static str,
    config: &'a RunConfig,
    control: String,
    psi0: Vec<[f64; 2]>,
    samples: usize,
    total_time: f64,
    final_populations: &'a [f64],
    fidelity: Option<f64>,
    max_unitarity_defect: f64,
    max_population_defect: f64,
    final_s_norms: Vec<(f64, f64)>,
    consistency: Option<propagate::ConsistencyReport>,
    files: Vec<&'static str>,
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(g: &GlobalArgs, control: &PathBuf, psi0: &str, target: Option<&str>, consistency: bool, sub_grid: usize, stride: usize, s: &[f64]) -> Result<u8> {
    let n0 = default_n(g);
    let (model, cfg) = config::resolve(g, n0, |n| 2 * n)?;
    let c = read_control(control)?;
    if c.l1_norms.len() != model.p {
        bail!("control has {} channels, model has {}", c.l1_norms.len(), model.p);
    }
    if s.iter().any(|&x| !(x >= 0.0)) {
        bail!("s-norm exponents must be nonnegative");
    }
    let psi = pad(&config::parse_state(psi0, &model)?, cfg.big_n)?;
    let opts = PropagateOptions { stride: stride.max(1), sub_grid, s_values: s.to_vec() };
    let rec = propagate::propagate_physical(&model, cfg.big_n, &c, &Start::State(psi.clone()), &opts)?;
    let fidelity = match target {
        Some(t) => {
            let t = pad(&config::parse_state(t, &model)?, cfg.big_n)?;
            Some(t.dotc(rec.final_state()).norm_sqr())
        }
        None => None,
    };
    let consistency = if consistency {
        let n2 = match model.n_max() {
            Some(m) => (2 * cfg.big_n).min(m),
            None => 2 * cfg.big_n,
        };
        if n2 <= cfg.big_n {
            bail!("no room above N = {} for a consistency replay", cfg.big_n);
        }
        Some(propagate::galerkin_consistency(&model, &c, &psi, cfg.big_n, n2, opts.stride)?)
    } else {
        None
    };
    config::ensure_dir(&g.out)?;
    output::write_trajectory_csv(&g.out.join("trajectory.csv"), &rec)?;
    let summary = SimSummary {
        command: "simulate",
        config: &cfg,
        control: control.display().to_string(),
        psi0: cvec_pairs(&psi),
        samples: rec.times.len(),
        total_time: c.total_time,
        final_populations: rec.populations.last().map(|p| p.as_slice()).unwrap_or(&[]),
        fidelity,
        max_unitarity_defect: rec.max_unitarity_defect(),
        max_population_defect: rec.max_population_defect(),
        final_s_norms: rec.s_norms.iter().map(|(s, v)| (*s, v.last().copied().unwrap_or(0.0))).collect(),
        consistency,
        files: vec!["trajectory.csv", "summary.json"],
    };
    output::write_json(&g.out.join("summary.json"), &summary)?;
    let human = format!(
        "{} samples over T = {:.6}; fidelity {:?}; unitarity defect {:.3e}; files in {}",
        summary.samples,
        c.total_time,
        fidelity,
        summary.max_unitarity_defect,
        g.out.display()
    );
    print_report(g, &human, &summary)?;
    Ok(0)
}

#[derive(Deserialize)]
struct CurvePoint {
    t: f64,
    moduli: Option<Vec<f64>>,
    unitary: Option<Vec<[f64; 2]>>,
}

fn read_curve(path: &Path) -> Result<(Vec<f64>, Curve)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let pts: Vec<CurvePoint> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if pts.is_empty() {
        bail!("empty curve");
    }
    let times = pts.iter().map(|p| p.t).collect();
    if pts.iter().all(|p| p.moduli.is_some()) {
        let m: Vec<Vec<f64>> = pts.into_iter().map(|p| p.moduli.unwrap()).collect();
        for (i, v) in m.iter().enumerate() {
            if v.iter().any(|&x| !(x >= 0.0)) {
                bail!("sample {i}: moduli must be nonnegative");
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-9 {
                bail!("sample {i}: moduli have norm {norm} > 1");
            }
        }
        return Ok((times, Curve::Moduli(m)));
    }
    if pts.iter().all(|p| p.unitary.is_some()) {
        let mut us = Vec::new();
        for (i, p) in pts.into_iter().enumerate() {
            let d = p.unitary.unwrap();
            let n = (d.len() as f64).sqrt().round() as usize;
            if n * n != d.len() || n < 2 {
                bail!("sample {i}: unitary has {} entries, not n^2", d.len());
            }
            let u = CMatrix::from_fn(n, n, |r, c| C64::new(d[r * n + c][0], d[r * n + c][1]));
            if linalg::unitarity_defect(&u) > 1e-8 {
                bail!("sample {i}: matrix is not unitary");
            }
            us.push(u);
        }
        return Ok((times, Curve::Unitary(us)));
    }
    Err(anyhow!("every curve point needs `moduli` or every point needs `unitary`"))
}

#[derive(Serialize)]
struct TrackReport<'a> {
    command: &'static str,
    config: &'a RunConfig,
    h: u32,
    n: usize,
    closure_dim: usize,
    samples: usize,
    eps: f64,
    max_distance: f64,
    within_eps: bool,
    max_population_per_level: Vec<f64>,
    max_unitarity_defect: f64,
    total_time: f64,
    t_schedule: f64,
    l1_norms: &'a [f64],
    files: Vec<&'static str>,
}

pub fn track(g: &GlobalArgs, curve: &Path, psi0: Option<&str>, h: u32) -> Result<u8> {
    let (times, curve) = read_curve(curve)?;
    let n = match &curve {
        Curve::Moduli(m) => m[0].len(),
        Curve::Unitary(u) => u[0].nrows(),
    };
    if matches!(g.n, Some(k) if k != n) {
        bail!("--n = {} does not match the curve dimension {n}", g.n.unwrap());
    }
    let (model, mut cfg) = config::resolve(g, n, |n| 4 * n)?;
    cfg.n = n;
    let psi0 = match psi0 {
        Some(s) => Some(pad(&config::parse_state(s, &model)?, n)?),
        None => None,
    };
    let report = liealg::check_condition(&model, n, ConditionKind::Lgsc, &check_options(&cfg))?;
    if !report.holds {
        return refuse(&report);
    }
    let mut tc = TrackConfig::new(n, cfg.big_n);
    tc.check = check_options(&cfg);
    tc.track.eps = cfg.eps;
    tc.track.steer.budget = cfg.budget_segments;
    tc.track.steer.seed = cfg.seed;
    tc.synth.h = h.max(1);
    tc.synth.seed = cfg.seed;
    tc.synth.max_pulses = cfg.budget_pulses;
    let out = pipeline::track_curve(&model, &curve, &times, psi0.as_ref(), &tc)?;
    write_control_files(&g.out, &out.control)?;
    let path = g.out.join("tracking.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["t".to_string(), "tau".into(), "s".into(), "distance".into(), "plan_error".into()];
    header.extend((1..=cfg.big_n).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for i in 0..out.times.len() {
        let mut row = vec![
            out.times[i].to_string(),
            out.tau[i].to_string(),
            out.physical_times[i].to_string(),
            out.distances[i].to_string(),
            out.plan_errors[i].to_string(),
        ];
        row.extend(out.populations[i].iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut max_pop = vec![0.0f64; cfg.big_n];
    for p in &out.populations {
        for (m, x) in max_pop.iter_mut().zip(p) {
            *m = m.max(*x);
        }
    }
    let rep = TrackReport {
        command: "track",
        config: &cfg,
        h: tc.synth.h,
        n,
        closure_dim: out.report.closure.dim,
        samples: out.times.len(),
        eps: cfg.eps,
        max_distance: out.max_distance,
        within_eps: out.max_distance < cfg.eps,
        max_population_per_level: max_pop,
        max_unitarity_defect: out.max_unitarity_defect,
        total_time: out.control.physical.total_time,
        t_schedule: out.control.physical.t_schedule,
        l1_norms: &out.control.physical.l1_norms,
        files: vec!["schedule.json", "control.json", "control.csv", "tracking.csv", "report.json"],
    };
    output::write_json(&g.out.join("report.json"), &rep)?;
    let human = format!(
        "{} samples: max modulus distance {:.4e} (eps {}), T = {:.6}; files in {}",
        rep.samples,
        rep.max_distance,
        rep.eps,
        rep.total_time,
        g.out.display()
    );
    print_report(g, &human, &rep)?;
    Ok(if rep.within_eps { 0 } else { 1 })
}

#[derive(Serialize)]
struct ModelSummary {
    name: String,
    p: usize,
    bounds: Vec<(String, f64)>,
    n_max: Option<usize>,
    drift_period: Option<f64>,
    rotor_anchor: Option<usize>,
    eigenvalues: Vec<f64>,
    guarantees: models::Guarantees,
}

fn summarize(model: &QuantumModel, k: usize) -> ModelSummary {
    let k = model.n_max().map_or(k, |m| m.min(k));
    ModelSummary {
        name: model.name.clone(),
        p: model.p,
        bounds: model
            .bounds
            .iter()
            .map(|b| {
                let kind = match b.kind {
                    BoundKind::SymmetricInterval => "symmetric",
                    BoundKind::HalfInterval => "half",
                };
                (kind.to_string(), b.delta)
            })
            .collect(),
        n_max: model.n_max(),
        drift_period: model.drift_period(),
        rotor_anchor: model.rotor_anchor(),
        eigenvalues: model.eigenvalues(k),
        guarantees: model.guarantees.clone(),
    }
}

pub fn models(g: &GlobalArgs, export: Option<usize>) -> Result<u8> {
    let list: Vec<ModelSummary> = if g.model_file.is_some() {
        vec![summarize(&config::load_model(g, default_n(g))?, 8)]
    } else {
        vec![
            summarize(&models::well_model(g.delta)?, 8),
            summarize(&config::load_model(&GlobalArgs { model: config::BuiltIn::Rotor, ..g.clone() }, g.n.unwrap_or(8))?, 8),
        ]
    };
    if let Some(k) = export {
        let model = config::load_model(g, g.n.unwrap_or(default_n(g)))?;
        if matches!(model.n_max(), Some(m) if k > m) {
            bail!("cannot export {k} levels, the model has {}", model.n_max().unwrap());
        }
        config::ensure_dir(&g.out)?;
        let path = g.out.join("model.json");
        output::write_json(&path, &models::export_model(&model, k))?;
        eprintln!("wrote {}", path.display());
    }
    if g.json {
        println!("{}", serde_json::to_string_pretty(&list)?);
    } else {
        for m in &list {
            println!(
                "{}: p = {}, bounds {:?}, n_max {:?}, drift period {:?}, first eigenvalues {:?}",
                m.name, m.p, m.bounds, m.n_max, m.drift_period, m.eigenvalues
            );
        }
    }
    Ok(0)
}
