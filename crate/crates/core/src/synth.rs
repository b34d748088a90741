//! Pulse synthesis: convexification trains, interaction-frame schedules and
//! physical controls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{self, GapSet, TruncatedSystem};
use crate::liealg::{self, GenLabel};
use crate::linalg::{self, CMat};
use crate::models::QuantumModel;
use crate::planner::GeneratorSchedule;
use crate::C64;

const TAU: f64 = std::f64::consts::TAU;

/// `prod_{k >= 2} cos(pi / 2k)`.
pub const VARPI: f64 = 0.429_780_216_437_991_7;

/// Partial product through `k` with rigorous bounds on the infinite product.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VarpiBracket {
    pub k: usize,
    pub partial: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Brackets the constant after `k` factors.
///
/// With `x = pi/2m`, `-ln cos x <= -(pi^2/8) ln(1 - 1/m^2)` and
/// `-ln cos x >= x^2/2`; the tails telescope to `(k/(k+1))^(pi^2/8)` and are
/// bounded through `sum_{m>k} 1/m^2 >= 1/(k+1)`.
pub fn varpi_bracket(k: usize) -> VarpiBracket {
    let k = k.max(1);
    let mut s = 0.0f64;
    let mut comp = 0.0f64;
    for m in 2..=k {
        let x = std::f64::consts::PI / (2.0 * m as f64);
        let h = (0.5 * x).sin();
        let term = (-2.0 * h * h).ln_1p();
        let t = s + term;
        comp += if s.abs() >= term.abs() { (s - t) + term } else { (term - t) + s };
        s = t;
    }
    let partial = (s + comp).exp();
    let c = std::f64::consts::PI.powi(2) / 8.0;
    let kf = k as f64;
    VarpiBracket { k, partial, lower: partial * (kf / (kf + 1.0)).powf(c), upper: partial * (-c / (kf + 1.0)).exp() }
}

/// Midpoint of a bracket of half-width at most `tol` (floored at `1e-12`).
pub fn varpi(tol: f64) -> f64 {
    let tol = tol.abs().max(1e-12);
    let mut k = 16;
    loop {
        let b = varpi_bracket(k);
        if 0.5 * (b.upper - b.lower) <= tol || k >= 1 << 26 {
            return 0.5 * (b.upper + b.lower);
        }
        k *= 2;
    }
}

/// Pulse times whose averaged phases realize `varpi * xi` on `gamma[0]` and
/// vanish on the other frequencies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PulseTrain {
    pub taus: Vec<f64>,
    pub k: usize,
    pub gamma: Vec<f64>,
    pub xi: [f64; 2],
    pub tau0: f64,
    pub spacing: f64,
    pub tol: f64,
    /// Average of `exp(i gamma_1 tau_k)`.
    pub achieved_active: [f64; 2],
    /// Largest `|average of exp(i gamma_j tau_k)|` over `j >= 2`.
    pub achieved_suppressed: f64,
    pub met: bool,
}

impl PulseTrain {
    /// Averages `K^-1 sum_k exp(i gamma_j tau_k)` recomputed from `taus`.
    pub fn averages(&self) -> Vec<C64> {
        point_averages(&self.gamma, &self.taus)
    }

    /// `(active average, max suppressed modulus)` recomputed from `taus`.
    pub fn evaluate(&self) -> (C64, f64) {
        let a = self.averages();
        (a[0], a[1..].iter().fold(0.0f64, |m, z| m.max(z.norm())))
    }

    pub fn error(&self) -> f64 {
        let (a, s) = self.evaluate();
        let xi = C64::new(self.xi[0], self.xi[1]);
        (a - xi * VARPI).norm().max(s)
    }
}

fn point_averages(gamma: &[f64], taus: &[f64]) -> Vec<C64> {
    let k = taus.len().max(1) as f64;
    gamma
        .iter()
        .map(|&g| {
            let mut s = C64::new(0.0, 0.0);
            for &t in taus {
                s += C64::from_polar(1.0, g * t);
            }
            s / k
        })
        .collect()
}

/// Greedy herding of pulse times.
///
/// Pulse `k` is placed in `[tau_{k-1} + R, tau_{k-1} + R + W]` at the grid
/// point bringing the running sums closest to `k * target`. The window `W`
/// spans four periods of the slowest frequency.
pub fn convexify_pulses(gamma: &[f64], xi: C64, tau0: f64, spacing: f64, tol: f64) -> Result<PulseTrain> {
    if gamma.is_empty() || gamma[0] == 0.0 || !gamma.iter().all(|g| g.is_finite()) {
        return Err(Error::InvalidArgument("gamma_1 must be a nonzero finite frequency".into()));
    }
    if (xi.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("|xi| = {} != 1", xi.norm())));
    }
    if !(tol > 0.0) || !(spacing >= 0.0) || !tau0.is_finite() {
        return Err(Error::InvalidArgument("tol must be positive and the spacing nonnegative".into()));
    }
    let g1 = gamma[0].abs();
    for (j, g) in gamma.iter().enumerate().skip(1) {
        if (g.abs() - g1).abs() <= 1e-12 * g1 {
            return Err(Error::InvalidArgument(format!("frequency collision |gamma_1| = |gamma_{}|", j + 1)));
        }
    }
    let nonzero: Vec<f64> = gamma.iter().map(|g| g.abs()).filter(|&g| g > 0.0).collect();
    let fmin = nonzero.iter().fold(f64::INFINITY, |m, &g| m.min(g));
    let fmax = nonzero.iter().fold(0.0f64, |m, &g| m.max(g));
    let window = 4.0 * TAU / fmin;
    let mut step = TAU / (16.0 * fmax);
    if window / step > 20_000.0 {
        step = window / 20_000.0;
    }
    let m = (window / step).ceil() as usize;
    let offsets: Vec<f64> = (0..=m).map(|i| i as f64 * step).collect();
    let target: Vec<C64> = (0..gamma.len()).map(|j| if j == 0 { xi * VARPI } else { C64::new(0.0, 0.0) }).collect();
    let table: Vec<Vec<C64>> = offsets.iter().map(|&o| gamma.iter().map(|&g| C64::from_polar(1.0, g * o)).collect()).collect();
    let gap = spacing * (1.0 + 1e-12) + 1e-12;
    let mut sums = vec![C64::new(0.0, 0.0); gamma.len()];
    let mut taus: Vec<f64> = Vec::new();
    let cap = 1usize << 20;
    let min_k = 16;
    let mut best_k = 0;
    let mut best_err = f64::INFINITY;
    let mut prev: Option<f64> = None;
    while taus.len() < cap {
        let k = taus.len() + 1;
        let start = prev.map_or(tau0, |p| p + gap);
        let rot: Vec<C64> = gamma.iter().map(|&g| C64::from_polar(1.0, g * start)).collect();
        let a: Vec<C64> = (0..gamma.len()).map(|j| (sums[j] - target[j] * k as f64).conj() * rot[j]).collect();
        let mut bi = 0;
        let mut bv = f64::INFINITY;
        for (i, row) in table.iter().enumerate() {
            let mut v = 0.0;
            for j in 0..gamma.len() {
                v += (a[j] * row[j]).re;
            }
            if v < bv {
                bv = v;
                bi = i;
            }
        }
        let tau = start + offsets[bi];
        for j in 0..gamma.len() {
            sums[j] += C64::from_polar(1.0, gamma[j] * tau);
        }
        taus.push(tau);
        prev = Some(tau);
        let err = (0..gamma.len()).fold(0.0f64, |e, j| e.max((sums[j] / k as f64 - target[j]).norm()));
        if err < best_err {
            best_err = err;
            best_k = k;
        }
        if k >= min_k && err < 0.5 * tol {
            break;
        }
    }
    taus.truncate(best_k);
    let mut train = PulseTrain {
        k: taus.len(),
        taus,
        gamma: gamma.to_vec(),
        xi: [xi.re, xi.im],
        tau0,
        spacing,
        tol,
        achieved_active: [0.0, 0.0],
        achieved_suppressed: 0.0,
        met: false,
    };
    let (a, s) = train.evaluate();
    train.achieved_active = [a.re, a.im];
    train.achieved_suppressed = s;
    train.met = train.error() < tol;
    Ok(train)
}

/// Tuning of the segment synthesis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Accuracy index: `K >= h K_base` and the entrywise defect is driven below `1/h`.
    pub h: u32,
    /// Ramp length over plateau length.
    pub ramp_ratio: f64,
    /// Bound on `sigma L` for the active frequencies.
    pub phase_per_slot: f64,
    /// Bound on `delta ||B_j|| l` per slot of length `l`.
    pub angle_per_slot: f64,
    pub max_pulses: usize,
    /// Grid points per period of the fastest frequency.
    pub grid_density: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            h: 1,
            ramp_ratio: 0.1,
            phase_per_slot: 0.9,
            angle_per_slot: 0.1,
            max_pulses: 1 << 20,
            grid_density: 8.0,
            seed: 0,
        }
    }
}

/// One frequency channel of a pulse segment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Feature {
    /// `lambda_b - lambda_a > 0` for the entries `(a, b)` it drives, or 0.
    pub frequency: f64,
    /// `delta * max |B_ab|` over those entries.
    pub weight: f64,
    /// Required time average of `exp(i f omega) v / delta`.
    pub target: [f64; 2],
}

/// Pulse train realizing one plan segment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentTrain {
    pub segment: usize,
    pub label: GenLabel,
    pub reversed: bool,
    pub duration: f64,
    pub control: usize,
    pub k: usize,
    pub plateau: f64,
    pub ramp: f64,
    pub amplitude: f64,
    pub ramp_carries_control: bool,
    pub omega_start: f64,
    pub taus: Vec<f64>,
    pub signs: Vec<i8>,
    pub features: Vec<Feature>,
    /// Realized time averages, one per feature.
    pub achieved: Vec<[f64; 2]>,
    /// `max_f weight_f |integral_f - duration * target_f|`.
    pub defect: f64,
}

/// Integral of `exp(i f omega) v / delta` over a ramp `omega_prev -> tau` of length `eps`
/// and the following plateau `tau -> tau + l`.
fn slot_feature(f: f64, omega_prev: f64, tau: f64, l: f64, eps: f64, carry: bool) -> C64 {
    if f == 0.0 {
        return C64::new(if carry { l + eps } else { l }, 0.0);
    }
    let i = C64::new(0.0, 1.0);
    let e_tau = C64::from_polar(1.0, f * tau);
    let plateau = e_tau * (C64::from_polar(1.0, f * l) - 1.0) / (i * f);
    if !carry {
        return plateau;
    }
    let d = tau - omega_prev;
    let ramp = if d > 0.0 {
        (e_tau - C64::from_polar(1.0, f * omega_prev)) * eps / (i * f * d)
    } else {
        C64::from_polar(1.0, f * tau) * eps
    };
    ramp + plateau
}

impl SegmentTrain {
    /// Feature integrals recomputed from `taus` and `signs`.
    pub fn integrals(&self) -> Vec<C64> {
        let mut sums = vec![C64::new(0.0, 0.0); self.features.len()];
        let mut prev = self.omega_start;
        for (a, &tau) in self.taus.iter().enumerate() {
            let s = self.signs[a] as f64;
            for (i, ft) in self.features.iter().enumerate() {
                sums[i] += slot_feature(ft.frequency, prev, tau, self.plateau, self.ramp, self.ramp_carries_control) * s;
            }
            prev = tau + self.plateau;
        }
        sums
    }

    fn evaluate(&mut self) {
        let sums = self.integrals();
        self.achieved = sums.iter().map(|z| [z.re / self.duration, z.im / self.duration]).collect();
        self.defect = self
            .features
            .iter()
            .zip(&sums)
            .map(|(f, s)| f.weight * (*s - C64::new(f.target[0], f.target[1]) * self.duration).norm())
            .fold(0.0, f64::max);
    }

    /// `omega` after the last plateau.
    pub fn omega_end(&self) -> f64 {
        self.taus.last().map_or(self.omega_start, |t| t + self.plateau)
    }

    fn shift(&mut self, by: f64) {
        self.omega_start += by;
        for t in &mut self.taus {
            *t += by;
        }
    }
}

struct SegmentSpec {
    j: usize,
    delta: f64,
    duration: f64,
    features: Vec<Feature>,
    signs: Vec<i8>,
    carry: bool,
    slot_max: f64,
    window: f64,
    step: f64,
}

fn segment_spec(
    label: &GenLabel,
    reversed: bool,
    duration: f64,
    model: &QuantumModel,
    sys: &TruncatedSystem<f64>,
    gaps: &GapSet,
    opts: &SynthOptions,
) -> Result<SegmentSpec> {
    let j = label.control().ok_or_else(|| Error::InvalidArgument(format!("label {label} is not a pulse generator")))?;
    if j >= model.p {
        return Err(Error::InvalidArgument(format!("label {label} references control {} of {}", j + 1, model.p)));
    }
    let mut m = liealg::scaled_label_matrix(label, model, sys, gaps)?;
    if reversed {
        m = -m;
    }
    let b = &sys.b[j];
    let bound = model.bounds[j];
    let delta = bound.delta;
    let n = sys.n;
    let bmax = linalg::max_abs(b).max(1e-300);
    struct Group {
        id: usize,
        f: f64,
        w: f64,
        c: C64,
        cmax: f64,
    }
    let mut groups: Vec<Group> = Vec::new();
    for a in 0..n {
        for k in 0..n {
            let bab = b[(a, k)];
            if bab.norm() <= 1e-14 * bmax {
                if m[(a, k)].norm() > 1e-12 * bmax * delta {
                    return Err(Error::InvalidArgument(format!("{label} has an entry where B_{} vanishes", j + 1)));
                }
                continue;
            }
            let id = gaps.id(a, k);
            let f = if id == 0 {
                0.0
            } else if sys.a_diag[a] < sys.a_diag[k] {
                sys.a_diag[k] - sys.a_diag[a]
            } else {
                continue;
            };
            let c = m[(a, k)] / (bab * delta);
            let w = delta * bab.norm();
            let tol = 1e-12 * f.abs().max(1.0);
            match groups.iter_mut().find(|g| g.id == id && (g.f - f).abs() <= tol) {
                Some(g) => {
                    if (g.c - c).norm() > 1e-9 * (1.0 + g.cmax) {
                        return Err(Error::InvalidArgument(format!(
                            "{label} needs different averages on entries of one frequency"
                        )));
                    }
                    if w > g.w {
                        g.w = w;
                        g.c = c;
                    }
                    g.cmax = g.cmax.max(c.norm());
                }
                None => groups.push(Group { id, f, w, c, cmax: c.norm() }),
            }
        }
    }
    groups.sort_by(|x, y| x.f.total_cmp(&y.f));
    let zero = groups.iter().find(|g| g.f == 0.0).map(|g| g.c);
    let signs: Vec<i8> = match zero {
        None => vec![1],
        Some(c0) => {
            if c0.im.abs() > 1e-9 || c0.re.abs() > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!("{label}: diagonal average {c0} is not realizable")));
            }
            if bound.is_symmetric() {
                vec![1, -1]
            } else if (c0.re - 1.0).abs() <= 1e-9 {
                vec![1]
            } else {
                return Err(Error::InvalidArgument(format!(
                    "{label} needs negative amplitudes but control {} has a half-interval bound",
                    j + 1
                )));
            }
        }
    };
    let features: Vec<Feature> = groups.iter().map(|g| Feature { frequency: g.f, weight: g.w, target: [g.c.re, g.c.im] }).collect();
    let active = features.iter().filter(|f| f.frequency > 0.0 && (f.target[0] != 0.0 || f.target[1] != 0.0)).fold(0.0f64, |m, f| m.max(f.frequency));
    let fmax = features.iter().fold(0.0f64, |m, f| m.max(f.frequency));
    let fmin = features.iter().filter(|f| f.frequency > 0.0).fold(f64::INFINITY, |m, f| m.min(f.frequency));
    let rho = opts.ramp_ratio;
    let bnorm = linalg::op_norm(b) * delta;
    let mut slot_max = opts.angle_per_slot / bnorm.max(1e-300);
    if active > 0.0 {
        slot_max = slot_max.min(opts.phase_per_slot * (1.0 + rho) / active);
    }
    let window = match model.drift_period() {
        Some(p) => p,
        None if fmin.is_finite() => 2.0 * TAU / fmin,
        None => 1.0,
    };
    let mut step = if fmax > 0.0 { TAU / (opts.grid_density * fmax) } else { window };
    if window / step > 20_000.0 {
        step = window / 20_000.0;
    }
    Ok(SegmentSpec { j, delta, duration, features, signs, carry: zero.is_some(), slot_max, window, step })
}

fn herd(spec: &SegmentSpec, k: usize, omega_start: f64, rho: f64) -> (Vec<f64>, Vec<i8>, f64, f64) {
    let slot = spec.duration / k as f64;
    let l = slot / (1.0 + rho);
    let eps = rho * l;
    let nf = spec.features.len();
    let mc = (spec.window / spec.step).ceil() as usize + 1;
    let deltas: Vec<f64> = (0..mc).map(|m| eps + m as f64 * spec.step).collect();
    // Slot features relative to omega_prev, up to the factor exp(i f omega_prev).
    let q: Vec<C64> = deltas
        .iter()
        .flat_map(|&d| spec.features.iter().map(move |ft| slot_feature(ft.frequency, 0.0, d, l, eps, spec.carry)))
        .collect();
    let w2: Vec<f64> = spec.features.iter().map(|f| f.weight * f.weight).collect();
    let nrm: Vec<f64> = (0..mc).map(|m| (0..nf).map(|i| w2[i] * q[m * nf + i].norm_sqr()).sum()).collect();
    let targets: Vec<C64> = spec.features.iter().map(|f| C64::new(f.target[0], f.target[1])).collect();
    let mut sums = vec![C64::new(0.0, 0.0); nf];
    let mut taus = Vec::with_capacity(k);
    let mut signs = Vec::with_capacity(k);
    let mut prev = omega_start;
    let mut a = vec![C64::new(0.0, 0.0); nf];
    for alpha in 1..=k {
        for i in 0..nf {
            let rot = C64::from_polar(1.0, spec.features[i].frequency * prev);
            a[i] = (sums[i] - targets[i] * (alpha as f64 * slot)).conj() * rot * w2[i];
        }
        let mut best = (0usize, 1i8, f64::INFINITY);
        for m in 0..mc {
            let row = &q[m * nf..(m + 1) * nf];
            let mut lin = 0.0;
            for i in 0..nf {
                lin += (a[i] * row[i]).re;
            }
            for &s in &spec.signs {
                let v = 2.0 * s as f64 * lin + nrm[m];
                if v < best.2 {
                    best = (m, s, v);
                }
            }
        }
        let tau = prev + deltas[best.0];
        for i in 0..nf {
            sums[i] += slot_feature(spec.features[i].frequency, prev, tau, l, eps, spec.carry) * best.1 as f64;
        }
        taus.push(tau);
        signs.push(best.1);
        prev = tau + l;
    }
    (taus, signs, l, eps)
}

fn synthesize_segment(segment: usize, label: &GenLabel, reversed: bool, spec: &SegmentSpec, omega_start: f64, opts: &SynthOptions) -> SegmentTrain {
    let h = opts.h.max(1) as usize;
    let base = (spec.duration / spec.slot_max).ceil().max(1.0) as usize;
    let mut k = (base * h).min(opts.max_pulses.max(1));
    loop {
        let (taus, signs, l, eps) = herd(spec, k, omega_start, opts.ramp_ratio);
        let mut train = SegmentTrain {
            segment,
            label: label.clone(),
            reversed,
            duration: spec.duration,
            control: spec.j,
            k,
            plateau: l,
            ramp: eps,
            amplitude: spec.delta,
            ramp_carries_control: spec.carry,
            omega_start,
            taus,
            signs,
            features: spec.features.clone(),
            achieved: Vec::new(),
            defect: 0.0,
        };
        train.evaluate();
        if train.defect < 1.0 / h as f64 || 2 * k > opts.max_pulses {
            return train;
        }
        k *= 2;
    }
}

/// Interaction-frame schedule `(alpha, v, omega)` on breakpoints `t_0 < ... < t_m`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionSchedule {
    pub p: usize,
    pub breakpoints: Vec<f64>,
    pub alpha: Vec<u8>,
    pub v: Vec<Vec<f64>>,
    /// Values of the continuous piecewise-affine `omega` at the breakpoints.
    pub omega: Vec<f64>,
    /// First interval of each plan segment, after any connecting free interval.
    pub segment_starts: Vec<usize>,
    /// Interval index one past the end of each plan segment.
    pub segment_ends: Vec<usize>,
}

impl InteractionSchedule {
    pub fn new(p: usize, omega0: f64) -> Self {
        InteractionSchedule { p, breakpoints: vec![0.0], alpha: Vec::new(), v: Vec::new(), omega: vec![omega0], segment_starts: Vec::new(), segment_ends: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1] - self.breakpoints[0]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.breakpoints[i + 1] - self.breakpoints[i]
    }

    pub fn slope(&self, i: usize) -> f64 {
        (self.omega[i + 1] - self.omega[i]) / self.dt(i)
    }

    pub fn omega_end(&self) -> f64 {
        self.omega[self.omega.len() - 1]
    }

    pub fn push(&mut self, dt: f64, alpha: u8, v: Vec<f64>, omega_end: f64) {
        if dt <= 0.0 {
            return;
        }
        let t = self.breakpoints[self.breakpoints.len() - 1];
        self.breakpoints.push(t + dt);
        self.alpha.push(alpha);
        self.v.push(v);
        self.omega.push(omega_end);
    }

    /// Free evolution (`alpha = 0`, `v = 0`, slope 1), which is pure drift in the physical frame.
    pub fn push_free(&mut self, dt: f64) {
        let w = self.omega_end() + dt;
        self.push(dt, 0, vec![0.0; self.p], w);
    }

    /// Drift segment of the plan (`alpha = 1`, `v = 0`, slope 1).
    pub fn push_drift(&mut self, dt: f64) {
        let w = self.omega_end() + dt;
        self.push(dt, 1, vec![0.0; self.p], w);
    }

    pub fn min_slope(&self) -> f64 {
        (0..self.len()).map(|i| self.slope(i)).fold(f64::INFINITY, f64::min)
    }

    /// Checks slopes, the `alpha`/`v` pattern and the control bounds.
    pub fn validate(&self, model: &QuantumModel) -> Result<()> {
        if self.p != model.p {
            return Err(Error::Dimension(format!("schedule has {} controls, model {}", self.p, model.p)));
        }
        for i in 0..self.len() {
            if !(self.dt(i) > 0.0) {
                return Err(Error::InvalidArgument(format!("interval {i} has nonpositive length")));
            }
            // Breakpoint rounding perturbs the slope by a few ulps of |omega| / dt.
            let scale = self.omega[i].abs().max(self.omega[i + 1].abs()) + self.breakpoints[i + 1].abs();
            if self.slope(i) < 1.0 - 1e-12 - 8.0 * f64::EPSILON * scale / self.dt(i) {
                return Err(Error::InvalidArgument(format!("omega slope {} < 1 on interval {i}", self.slope(i))));
            }
            let active = self.v[i].iter().filter(|x| **x != 0.0).count();
            if self.alpha[i] > 1 || (self.alpha[i] == 1 && active > 0) || active > 1 {
                return Err(Error::InvalidArgument(format!("interval {i} mixes drift and controls")));
            }
            for (j, &x) in self.v[i].iter().enumerate() {
                if !model.bounds[j].contains(x) {
                    return Err(Error::InvalidArgument(format!("v_{} = {x} outside its bound on interval {i}", j + 1)));
                }
            }
        }
        Ok(())
    }

    fn push_train(&mut self, train: &SegmentTrain) {
        debug_assert!(self.omega_end() == train.omega_start);
        let j = train.control;
        for (a, &tau) in train.taus.iter().enumerate() {
            let amp = train.signs[a] as f64 * train.amplitude;
            let mut v = vec![0.0; self.p];
            if train.ramp_carries_control {
                v[j] = amp;
            }
            self.push(train.ramp, 0, v, tau);
            let mut v = vec![0.0; self.p];
            v[j] = amp;
            self.push(train.plateau, 0, v, tau + train.plateau);
        }
    }
}

/// Builds the interaction schedule of a plan at truncation `big_n >= plan.n`.
///
/// Drift segments become `alpha = 1` intervals. Every pulse segment is
/// realized by `K` slots, each a ramp of length `eps` followed by a plateau of
/// length `L` with slope 1 and `|v_j| = delta_j`; the plateau starts are herded
/// so that the feature integrals match the segment's generator entrywise. With
/// a periodic drift, segments are synthesized in parallel from `omega = 0` and
/// placed at the next multiple of the period.
pub fn schedule_from_generators(
    plan: &GeneratorSchedule,
    model: &QuantumModel,
    big_n: usize,
    opts: &SynthOptions,
) -> Result<(InteractionSchedule, Vec<SegmentTrain>)> {
    plan.validate()?;
    if big_n < plan.n {
        return Err(Error::InvalidArgument(format!("N = {big_n} smaller than n = {}", plan.n)));
    }
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
    let mut specs: Vec<Option<SegmentSpec>> = Vec::with_capacity(plan.segments.len());
    for (i, s) in plan.segments.iter().enumerate() {
        let gm = &plan.generator_set[s.generator].matrix;
        if s.label == GenLabel::Drift {
            specs.push(None);
            continue;
        }
        if let GenLabel::Custom(_) = s.label {
            return Err(Error::InvalidArgument(format!("segment {i}: custom label {} has no control realization", s.label)));
        }
        let m = liealg::scaled_label_matrix(&s.label, model, &sys, &gaps)?;
        let small = galerkin::crop(&m, plan.n)?;
        if linalg::max_abs(&(small - gm)) > 1e-9 * linalg::max_abs(gm).max(1.0) {
            return Err(Error::InvalidArgument(format!("segment {i}: {} does not match its model generator", s.label)));
        }
        specs.push(Some(segment_spec(&s.label, s.reversed, s.duration, model, &sys, &gaps, opts)?));
    }
    let period = model.drift_period();
    let mut sched = InteractionSchedule::new(model.p, 0.0);
    let mut trains = Vec::new();
    if let Some(p) = period {
        let mut rel: Vec<Option<SegmentTrain>> = specs
            .par_iter()
            .enumerate()
            .map(|(i, sp)| {
                sp.as_ref().map(|sp| {
                    let s = &plan.segments[i];
                    synthesize_segment(i, &s.label, s.reversed, sp, 0.0, opts)
                })
            })
            .collect();
        for (i, s) in plan.segments.iter().enumerate() {
            match rel[i].take() {
                None => {
                    sched.segment_starts.push(sched.len());
                    sched.push_drift(s.duration)
                }
                Some(mut t) => {
                    let w = sched.omega_end();
                    let start = (w / p).ceil() * p;
                    if start > w {
                        sched.push_free(start - w);
                    }
                    let start = sched.omega_end();
                    sched.segment_starts.push(sched.len());
                    t.shift(start);
                    t.evaluate();
                    sched.push_train(&t);
                    trains.push(t);
                }
            }
            sched.segment_ends.push(sched.len());
        }
    } else {
        for (i, s) in plan.segments.iter().enumerate() {
            sched.segment_starts.push(sched.len());
            match &specs[i] {
                None => sched.push_drift(s.duration),
                Some(sp) => {
                    let t = synthesize_segment(i, &s.label, s.reversed, sp, sched.omega_end(), opts);
                    sched.push_train(&t);
                    trains.push(t);
                }
            }
            sched.segment_ends.push(sched.len());
        }
    }
    Ok((sched, trains))
}

/// Piecewise-constant physical control on `s_0 < ... < s_q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhysicalControl {
    pub breakpoints: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub total_time: f64,
    /// Duration of the interaction schedule it was built from.
    pub t_schedule: f64,
    /// `int |u_j(s)| ds` per control.
    pub l1_norms: Vec<f64>,
}

impl PhysicalControl {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Zero control of duration `t`.
    pub fn zero(p: usize, t: f64) -> Self {
        let (bp, u) = if t > 0.0 { (vec![0.0, t], vec![vec![0.0; p]]) } else { (vec![0.0], Vec::new()) };
        PhysicalControl { breakpoints: bp, u, total_time: t.max(0.0), t_schedule: t.max(0.0), l1_norms: vec![0.0; p] }
    }

    /// `||u_j||_L1 <= delta_j T_schedule` for every control; the bound reads
    /// `<= T_schedule` after the rescaling `B_j -> delta_j B_j`.
    pub fn l1_within_bounds(&self, model: &QuantumModel) -> bool {
        self.l1_norms.iter().zip(&model.bounds).all(|(l, b)| *l <= b.delta * self.t_schedule * (1.0 + 1e-12) + 1e-12)
    }

    /// Checks `u_j(s) in U_j` on every interval.
    pub fn validate(&self, model: &QuantumModel) -> Result<()> {
        for (i, u) in self.u.iter().enumerate() {
            if u.len() != model.p {
                return Err(Error::Dimension(format!("interval {i} has {} controls", u.len())));
            }
            for (j, &x) in u.iter().enumerate() {
                if !model.bounds[j].contains(x) {
                    return Err(Error::InvalidArgument(format!("u_{} = {x} outside its bound on interval {i}", j + 1)));
                }
            }
            if !(self.breakpoints[i + 1] > self.breakpoints[i]) {
                return Err(Error::InvalidArgument(format!("interval {i} has nonpositive length")));
            }
        }
        Ok(())
    }

    /// Value of the control at time `s` (right-continuous, zero outside).
    pub fn at(&self, s: f64) -> Vec<f64> {
        let p = self.l1_norms.len();
        if self.u.is_empty() || s < self.breakpoints[0] || s >= self.total_time {
            return vec![0.0; p];
        }
        let i = self.breakpoints.partition_point(|&b| b <= s).saturating_sub(1).min(self.u.len() - 1);
        self.u[i].clone()
    }

    /// Samples on a uniform grid of step `ds`.
    pub fn sample_uniform(&self, ds: f64) -> Vec<(f64, Vec<f64>)> {
        let m = (self.total_time / ds).ceil() as usize;
        (0..=m).map(|i| {
            let s = (i as f64 * ds).min(self.total_time);
            (s, self.at(s))
        }).collect()
    }
}

/// Undoes the time reparametrization: on each interval `z = slope + alpha >= 1`,
/// `u = v / z` and the physical length is `z dt`.
pub fn to_physical(sched: &InteractionSchedule) -> PhysicalControl {
    let mut bp = vec![0.0];
    let mut u = Vec::with_capacity(sched.len());
    let mut l1 = vec![0.0; sched.p];
    let mut s = 0.0;
    for i in 0..sched.len() {
        let dt = sched.dt(i);
        // Slopes are >= 1 by construction; the clamp absorbs rounding in omega.
        let z = (sched.slope(i) + sched.alpha[i] as f64).max(1.0);
        let ui: Vec<f64> = sched.v[i].iter().map(|v| v / z).collect();
        for (j, x) in ui.iter().enumerate() {
            l1[j] += x.abs() * z * dt;
        }
        s += z * dt;
        bp.push(s);
        u.push(ui);
    }
    PhysicalControl { breakpoints: bp, u, total_time: s, t_schedule: sched.duration(), l1_norms: l1 }
}

/// Plan, pulse trains, interaction schedule and physical control of one synthesis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesizedControl {
    pub seed: u64,
    pub h: u32,
    pub n: usize,
    pub big_n: usize,
    pub plan: GeneratorSchedule,
    pub pulse_trains: Vec<SegmentTrain>,
    pub interaction: InteractionSchedule,
    pub physical: PhysicalControl,
    /// Entrywise defect of every pulse segment.
    pub defects: Vec<f64>,
}

/// Synthesizes the controls of a plan at truncation `big_n`.
pub fn synthesize(plan: &GeneratorSchedule, model: &QuantumModel, big_n: usize, opts: &SynthOptions) -> Result<SynthesizedControl> {
    let (interaction, trains) = schedule_from_generators(plan, model, big_n, opts)?;
    let physical = to_physical(&interaction);
    Ok(SynthesizedControl {
        seed: opts.seed,
        h: opts.h,
        n: plan.n,
        big_n,
        plan: plan.clone(),
        defects: trains.iter().map(|t| t.defect).collect(),
        pulse_trains: trains,
        interaction,
        physical,
    })
}

/// Matrix `sum_segment duration * M` restricted to one plan segment, at truncation `big_n`.
pub fn segment_target(plan: &GeneratorSchedule, segment: usize, model: &QuantumModel, big_n: usize) -> Result<CMat<f64>> {
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
    let s = &plan.segments[segment];
    let m = liealg::scaled_label_matrix(&s.label, model, &sys, &gaps)?;
    let sign = if s.reversed { -1.0 } else { 1.0 };
    Ok(m * C64::new(sign, 0.0))
}
