//! Propagation of truncated physical and interaction-frame dynamics, and the
//! diagnostics built on it.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{self, TruncatedSystem};
use crate::linalg::{self, CMat, CVec, SkewExp};
use crate::models::QuantumModel;
use crate::planner::GeneratorSchedule;
use crate::synth::{InteractionSchedule, PhysicalControl};
use crate::C64;

/// Initial condition of a propagation.
#[derive(Clone, Debug)]
pub enum Start {
    State(CVec<f64>),
    /// Propagates the full propagator.
    Identity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropagateOptions {
    /// Keep every `stride`-th breakpoint; the final time is always kept.
    pub stride: usize,
    /// Extra equispaced samples inside each interval (physical frame only).
    pub sub_grid: usize,
    /// Exponents `s` of the recorded `||.||_s` norms.
    pub s_values: Vec<f64>,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions { stride: 1, sub_grid: 0, s_values: Vec::new() }
    }
}

/// Sampled trajectory. With `Start::Identity`, `states` holds the first
/// column of each propagator sample.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Breakpoint index of each sample (the interval count completed).
    pub indices: Vec<usize>,
    pub states: Vec<CVec<f64>>,
    pub propagators: Option<Vec<CMat<f64>>>,
    pub populations: Vec<Vec<f64>>,
    /// `||U*U - I||_F` for propagators, `| ||psi|| - 1 |` for states.
    pub unitarity_defects: Vec<f64>,
    pub s_norms: Vec<(f64, Vec<f64>)>,
}

impl TrajectoryRecord {
    fn new(s_values: &[f64]) -> Self {
        TrajectoryRecord {
            times: Vec::new(),
            indices: Vec::new(),
            states: Vec::new(),
            propagators: None,
            populations: Vec::new(),
            unitarity_defects: Vec::new(),
            s_norms: s_values.iter().map(|&s| (s, Vec::new())).collect(),
        }
    }

    fn record(&mut self, t: f64, idx: usize, x: &State, lambda: &[f64]) {
        let psi = match x {
            State::Vec(v) => v.clone(),
            State::Mat(m) => m.column(0).into_owned(),
        };
        self.times.push(t);
        self.indices.push(idx);
        self.populations.push(psi.iter().map(|z| z.norm_sqr()).collect());
        for (s, vals) in &mut self.s_norms {
            vals.push(s_norm(&psi, *s, lambda));
        }
        match x {
            State::Vec(v) => self.unitarity_defects.push((v.norm() - 1.0).abs()),
            State::Mat(m) => {
                self.unitarity_defects.push(linalg::unitarity_defect(m));
                self.propagators.get_or_insert_with(Vec::new).push(m.clone());
            }
        }
        self.states.push(psi);
    }

    pub fn final_state(&self) -> &CVec<f64> {
        self.states.last().expect("nonempty record")
    }

    pub fn max_unitarity_defect(&self) -> f64 {
        self.unitarity_defects.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Largest deviation of the populations from summing to 1.
    pub fn max_population_defect(&self) -> f64 {
        self.populations.iter().map(|p| (p.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

enum State {
    Vec(CVec<f64>),
    Mat(CMat<f64>),
}

impl State {
    fn apply(&mut self, m: &CMat<f64>) {
        match self {
            State::Vec(v) => *v = m * &*v,
            State::Mat(u) => *u = m * &*u,
        }
    }

    fn scale_rows(&mut self, d: &[C64]) {
        match self {
            State::Vec(v) => {
                for (k, z) in v.iter_mut().enumerate() {
                    *z *= d[k];
                }
            }
            State::Mat(u) => {
                for r in 0..u.nrows() {
                    for c in 0..u.ncols() {
                        u[(r, c)] *= d[r];
                    }
                }
            }
        }
    }
}

fn start_state(start: &Start, n: usize) -> Result<State> {
    Ok(match start {
        Start::Identity => State::Mat(linalg::eye(n)),
        Start::State(v) => {
            if v.len() != n {
                return Err(Error::Dimension(format!("initial state of length {} for N = {n}", v.len())));
            }
            if (v.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("initial state has norm {}", v.norm())));
            }
            State::Vec(v.clone())
        }
    })
}

fn diag_phase(lambda: &[f64], t: f64) -> Vec<C64> {
    lambda.iter().map(|&l| C64::from_polar(1.0, l * t)).collect()
}

/// `A + sum_j u_j B_j` at truncation `sys`.
fn hamiltonian(sys: &TruncatedSystem<f64>, u: &[f64], a_scale: f64) -> CMat<f64> {
    let mut h = CMat::<f64>::from_diagonal(&CVec::<f64>::from_iterator(
        sys.n,
        sys.a_diag.iter().map(|&l| C64::new(0.0, l * a_scale)),
    ));
    for (j, &x) in u.iter().enumerate() {
        if x != 0.0 {
            h += &sys.b[j] * C64::new(x, 0.0);
        }
    }
    h
}

/// Cache of `SkewExp` factorizations keyed by the exact control values.
struct ExpCache {
    map: HashMap<Vec<u64>, SkewExp<f64>>,
}

impl ExpCache {
    fn new() -> Self {
        ExpCache { map: HashMap::new() }
    }

    fn get(&mut self, sys: &TruncatedSystem<f64>, u: &[f64], a_scale: f64) -> &SkewExp<f64> {
        let mut key: Vec<u64> = u.iter().map(|x| x.to_bits()).collect();
        key.push(a_scale.to_bits());
        if self.map.len() > 4096 && !self.map.contains_key(&key) {
            self.map.clear();
        }
        self.map.entry(key).or_insert_with(|| SkewExp::new(&hamiltonian(sys, u, a_scale)))
    }
}

fn keep(i: usize, m: usize, stride: usize) -> bool {
    i == m || i % stride.max(1) == 0
}

/// Exact piecewise-constant integration of `psi' = (A + sum u_j B_j) psi` at truncation `big_n`.
pub fn propagate_physical(model: &QuantumModel, big_n: usize, control: &PhysicalControl, start: &Start, opts: &PropagateOptions) -> Result<TrajectoryRecord> {
    control.validate(model)?;
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let mut x = start_state(start, big_n)?;
    let mut rec = TrajectoryRecord::new(&opts.s_values);
    let m = control.len();
    rec.record(control.breakpoints[0], 0, &x, &sys.a_diag);
    let mut cache = ExpCache::new();
    for i in 0..m {
        let (s0, s1) = (control.breakpoints[i], control.breakpoints[i + 1]);
        let dt = s1 - s0;
        let u = &control.u[i];
        let zero = u.iter().all(|&v| v == 0.0);
        if opts.sub_grid > 0 {
            let h = dt / (opts.sub_grid + 1) as f64;
            for k in 0..=opts.sub_grid {
                let step = if k == opts.sub_grid { s1 - (s0 + k as f64 * h) } else { h };
                if zero {
                    x.scale_rows(&diag_phase(&sys.a_diag, step));
                } else {
                    let e = cache.get(&sys, u, 1.0).exp(step);
                    x.apply(&e);
                }
                if k < opts.sub_grid {
                    rec.record(s0 + (k + 1) as f64 * h, i, &x, &sys.a_diag);
                }
            }
        } else if zero {
            x.scale_rows(&diag_phase(&sys.a_diag, dt));
        } else {
            let e = cache.get(&sys, u, 1.0).exp(dt);
            x.apply(&e);
        }
        if keep(i + 1, m, opts.stride) {
            rec.record(s1, i + 1, &x, &sys.a_diag);
        }
    }
    Ok(rec)
}

/// Applies the inverse flow of `control`, last interval first.
pub fn propagate_physical_inverse(model: &QuantumModel, big_n: usize, control: &PhysicalControl, psi: &CVec<f64>) -> Result<CVec<f64>> {
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let mut x = State::Vec(psi.clone());
    let mut cache = ExpCache::new();
    for i in (0..control.len()).rev() {
        let dt = control.breakpoints[i + 1] - control.breakpoints[i];
        let e = cache.get(&sys, &control.u[i], 1.0).exp(-dt);
        x.apply(&e);
    }
    match x {
        State::Vec(v) => Ok(v),
        State::Mat(_) => unreachable!(),
    }
}

/// Integration of `y' = (alpha A + Theta(omega, v)) y`.
///
/// With `omega` affine of slope `c` on an interval, the substitution
/// `psi = exp(omega A) y` turns it into a constant generator, so each step is
/// `exp(-omega_1 A) exp(dt((c + alpha) A + sum v_j B_j)) exp(omega_0 A)` and is exact.
pub fn propagate_interaction(model: &QuantumModel, big_n: usize, sched: &InteractionSchedule, start: &Start, opts: &PropagateOptions) -> Result<TrajectoryRecord> {
    sched.validate(model)?;
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let mut x = start_state(start, big_n)?;
    let mut rec = TrajectoryRecord::new(&opts.s_values);
    let m = sched.len();
    rec.record(sched.breakpoints[0], 0, &x, &sys.a_diag);
    let mut cache = ExpCache::new();
    for i in 0..m {
        let dt = sched.dt(i);
        let alpha = sched.alpha[i] as f64;
        let v = &sched.v[i];
        if v.iter().all(|&x| x == 0.0) {
            if alpha != 0.0 {
                x.scale_rows(&diag_phase(&sys.a_diag, alpha * dt));
            }
        } else {
            let (w0, w1) = (sched.omega[i], sched.omega[i + 1]);
            let scale = (w1 - w0) / dt + alpha;
            x.scale_rows(&diag_phase(&sys.a_diag, w0));
            let e = cache.get(&sys, v, scale).exp(dt);
            x.apply(&e);
            x.scale_rows(&diag_phase(&sys.a_diag, -w1));
        }
        if keep(i + 1, m, opts.stride) {
            rec.record(sched.breakpoints[i + 1], i + 1, &x, &sys.a_diag);
        }
    }
    Ok(rec)
}

/// `alpha A + Theta(omega, v)` with `Theta_jk = exp(i(lambda_k - lambda_j) omega) sum_l v_l (B_l)_jk`.
pub fn interaction_generator(sys: &TruncatedSystem<f64>, alpha: f64, omega: f64, v: &[f64]) -> CMat<f64> {
    let n = sys.n;
    let mut g = CMat::<f64>::zeros(n, n);
    for (j, &x) in v.iter().enumerate() {
        if x != 0.0 {
            g += &sys.b[j] * C64::new(x, 0.0);
        }
    }
    for r in 0..n {
        for c in 0..n {
            if g[(r, c)] != C64::new(0.0, 0.0) {
                g[(r, c)] *= C64::from_polar(1.0, (sys.a_diag[c] - sys.a_diag[r]) * omega);
            }
        }
        g[(r, r)] += C64::new(0.0, alpha * sys.a_diag[r]);
    }
    g
}

/// Result of the sub-stepped integration.
#[derive(Clone, Debug)]
pub struct SubstepResult {
    pub propagator: CMat<f64>,
    /// Sub-step used on the finest pass, relative to the base rule.
    pub refinements: u32,
    /// Change of the final propagator under the last halving (Frobenius).
    pub last_change: f64,
}

/// Midpoint-exponential integration with frozen `Theta` on sub-steps of length
/// at most `min(0.1 / (max gap * slope), dt) / 4`, halved until the final
/// propagator changes by less than `tol`. Independent of `propagate_interaction`.
pub fn propagate_interaction_substep(model: &QuantumModel, big_n: usize, sched: &InteractionSchedule, tol: f64, max_halvings: u32) -> Result<SubstepResult> {
    sched.validate(model)?;
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let lmax = sys.a_diag.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let lmin = sys.a_diag.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let gap = (lmax - lmin).max(1e-12);
    let run = |refine: u32| -> CMat<f64> {
        let mut u = linalg::eye::<f64>(big_n);
        for i in 0..sched.len() {
            let dt = sched.dt(i);
            let c = sched.slope(i);
            let hmax = (0.1 / (gap * c)).min(dt) / 4.0 / 2f64.powi(refine as i32);
            let k = (dt / hmax).ceil().max(1.0) as usize;
            let h = dt / k as f64;
            let alpha = sched.alpha[i] as f64;
            let v = &sched.v[i];
            let zero = v.iter().all(|&x| x == 0.0);
            if zero {
                let e = linalg::expm_diag(&sys.a_diag, alpha * dt);
                for r in 0..big_n {
                    for col in 0..big_n {
                        u[(r, col)] *= e[r];
                    }
                }
                continue;
            }
            for s in 0..k {
                let w = sched.omega[i] + c * (s as f64 + 0.5) * h;
                let g = interaction_generator(&sys, alpha, w, v);
                u = linalg::expm(&(g * C64::new(h, 0.0))) * u;
            }
        }
        u
    };
    let mut prev = run(0);
    let mut change = f64::INFINITY;
    let mut r = 0;
    while r < max_halvings {
        r += 1;
        let next = run(r);
        change = linalg::frobenius(&(&next - &prev));
        prev = next;
        if change < tol {
            break;
        }
    }
    Ok(SubstepResult { propagator: prev, refinements: r, last_change: change })
}

/// `(sum |lambda_k|^(2s) |psi_k|^2)^(1/2)`.
pub fn s_norm(psi: &CVec<f64>, s: f64, lambda: &[f64]) -> f64 {
    psi.iter().zip(lambda).map(|(z, l)| l.abs().powf(2.0 * s) * z.norm_sqr()).sum::<f64>().sqrt()
}

/// Componentwise moduli.
pub fn moduli(psi: &CVec<f64>) -> Vec<f64> {
    psi.iter().map(|z| z.norm()).collect()
}

/// `l2` distance of the moduli vectors, zero-padding the shorter one.
pub fn modulus_distance(a: &CVec<f64>, b: &CVec<f64>) -> f64 {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| {
            let x = if k < a.len() { a[k].norm() } else { 0.0 };
            let y = if k < b.len() { b[k].norm() } else { 0.0 };
            (x - y).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Same as `modulus_distance` against a plain moduli vector.
pub fn modulus_distance_to(a: &CVec<f64>, m: &[f64]) -> f64 {
    let n = a.len().max(m.len());
    (0..n)
        .map(|k| {
            let x = if k < a.len() { a[k].norm() } else { 0.0 };
            let y = m.get(k).copied().unwrap_or(0.0);
            (x - y).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Comparison of two truncations driven by the same control.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n1: usize,
    pub n2: usize,
    /// `max_t ||psi_N1(t) - Crop_N1 psi_N2(t)||`.
    pub max_deviation: f64,
    /// `sum_{k >= N1} |psi_N2,k(T)|^2`.
    pub leaked_final: f64,
    pub leaked_max: f64,
    pub caveat: Option<String>,
}

/// Runs the control at `n1` and `n2 > n1` and compares the trajectories at the breakpoints.
pub fn galerkin_consistency(model: &QuantumModel, control: &PhysicalControl, psi0: &CVec<f64>, n1: usize, n2: usize, stride: usize) -> Result<ConsistencyReport> {
    if n2 <= n1 {
        return Err(Error::InvalidArgument(format!("need N2 > N1, got {n2} <= {n1}")));
    }
    let pad = |n: usize| -> CVec<f64> { CVec::<f64>::from_fn(n, |k, _| if k < psi0.len() { psi0[k] } else { C64::new(0.0, 0.0) }) };
    if psi0.len() > n1 {
        return Err(Error::Dimension(format!("initial state longer than N1 = {n1}")));
    }
    let opts = PropagateOptions { stride, ..Default::default() };
    let (r1, r2) = rayon::join(
        || propagate_physical(model, n1, control, &Start::State(pad(n1)), &opts),
        || propagate_physical(model, n2, control, &Start::State(pad(n2)), &opts),
    );
    let (r1, r2) = (r1?, r2?);
    let mut dev = 0.0f64;
    let mut leak_max = 0.0f64;
    for (a, b) in r1.states.iter().zip(&r2.states) {
        dev = dev.max((a - b.rows(0, n1)).norm());
        leak_max = leak_max.max(b.rows(n1, n2 - n1).norm_squared());
    }
    let fin = r2.final_state();
    let caveat = match model.n_max() {
        Some(m) if n2 >= m => Some(format!("N2 = {n2} reaches the tabulated range {m}; coupling tails beyond it are unknown")),
        _ => None,
    };
    Ok(ConsistencyReport { n1, n2, max_deviation: dev, leaked_final: fin.rows(n1, n2 - n1).norm_squared(), leaked_max: leak_max, caveat })
}

/// Plan segment and elapsed plan time at each interaction breakpoint.
/// Connecting free intervals advance the interaction clock only.
fn plan_clock(plan: &GeneratorSchedule, sched: &InteractionSchedule) -> Result<Vec<(usize, f64)>> {
    let ns = plan.segments.len();
    if sched.segment_ends.len() != ns || sched.segment_starts.len() != ns {
        return Err(Error::InvalidArgument("schedule does not match the plan's segments".into()));
    }
    let mut out = vec![(0usize, 0.0f64); sched.len() + 1];
    let mut prev_end = 0usize;
    for s in 0..ns {
        let (start, end) = (sched.segment_starts[s], sched.segment_ends[s]);
        for i in prev_end..start {
            out[i + 1] = (s, 0.0);
        }
        let dur = plan.segments[s].duration;
        let t0 = sched.breakpoints[start];
        for i in start..end {
            out[i + 1] = (s, (sched.breakpoints[i + 1] - t0).min(dur));
        }
        prev_end = end;
    }
    // Trailing free intervals (phase alignment) keep the final flow.
    if ns > 0 {
        for i in prev_end..sched.len() {
            out[i + 1] = (ns - 1, plan.segments[ns - 1].duration);
        }
    }
    Ok(out)
}

/// Largest operator-norm distance between the planned flow and the cropped
/// interaction propagator, over the breakpoints kept by `stride`.
pub fn crop_comparison(plan: &GeneratorSchedule, sched: &InteractionSchedule, model: &QuantumModel, big_n: usize, stride: usize) -> Result<f64> {
    let n = plan.n;
    let rec = propagate_interaction(model, big_n, sched, &Start::Identity, &PropagateOptions { stride, ..Default::default() })?;
    let clock = plan_clock(plan, sched)?;
    let props = rec.propagators.as_ref().expect("identity start");
    let exps: Vec<SkewExp<f64>> = (0..plan.segments.len()).map(|i| SkewExp::new(&plan.segment_matrix(i))).collect();
    let mut before = vec![linalg::eye::<f64>(n)];
    for (i, e) in exps.iter().enumerate() {
        let next = e.exp(plan.segments[i].duration) * &before[i];
        before.push(next);
    }
    let results: Vec<f64> = rec
        .indices
        .par_iter()
        .zip(props.par_iter())
        .map(|(&idx, u)| {
            let flow = if idx == 0 || plan.segments.is_empty() {
                linalg::eye::<f64>(n)
            } else {
                let (s, t) = clock[idx];
                exps[s].exp(t) * &before[s]
            };
            let cropped = galerkin::crop(u, n).expect("N >= n");
            linalg::op_norm(&(flow - cropped))
        })
        .collect();
    Ok(results.into_iter().fold(0.0, f64::max))
}

/// Replays a schedule with Pade exponentials and returns the flow at schedule times `taus`.
pub fn replay_schedule(plan: &GeneratorSchedule, taus: &[f64]) -> Vec<CMat<f64>> {
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut u = linalg::eye::<f64>(plan.n);
        let mut elapsed = 0.0;
        for (i, s) in plan.segments.iter().enumerate() {
            if elapsed >= tau {
                break;
            }
            let d = s.duration.min(tau - elapsed);
            elapsed += s.duration;
            u = linalg::expm(&(plan.segment_matrix(i) * C64::new(d, 0.0))) * u;
        }
        out.push(u);
    }
    out
}

/// Propagates several initial states in parallel.
pub fn propagate_many(model: &QuantumModel, big_n: usize, control: &PhysicalControl, states: &[CVec<f64>], opts: &PropagateOptions) -> Result<Vec<TrajectoryRecord>> {
    states.par_iter().map(|s| propagate_physical(model, big_n, control, &Start::State(s.clone()), opts)).collect()
}
