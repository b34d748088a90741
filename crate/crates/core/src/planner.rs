//! Motion planning in SU(n): generator schedules reaching a target unitary,
//! curve tracking, target lifting from state maps, and free-drift phase alignment.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liealg::{self, GenLabel, Generator};
use crate::linalg::{self, CMat, CVec, SkewExp};
use crate::C64;

const TAU: f64 = std::f64::consts::TAU;

/// Labeled generator matrix stored in a schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub label: GenLabel,
    #[serde(with = "linalg::cmat_serde")]
    pub matrix: CMat<f64>,
}

/// One constant piece `exp(duration * M)` of a schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: GenLabel,
    /// Index into `generator_set`.
    pub generator: usize,
    pub duration: f64,
    /// Flow of `-M` instead of `M`; only for generators with symmetric control bounds.
    #[serde(default)]
    pub reversed: bool,
}

/// Piecewise-constant generator schedule `M(t)` and its chronological flow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSchedule {
    pub n: usize,
    pub segments: Vec<Segment>,
    pub generator_set: Vec<LabeledMatrix>,
    pub total_time: f64,
}

impl GeneratorSchedule {
    pub fn new(n: usize, generator_set: Vec<LabeledMatrix>) -> Self {
        GeneratorSchedule { n, segments: Vec::new(), generator_set, total_time: 0.0 }
    }

    pub fn from_generators(n: usize, gens: &[Generator]) -> Self {
        let set = gens.iter().map(|g| LabeledMatrix { label: g.label.clone(), matrix: g.matrix.clone() }).collect();
        Self::new(n, set)
    }

    /// Signed generator of segment `i`.
    pub fn segment_matrix(&self, i: usize) -> CMat<f64> {
        let s = &self.segments[i];
        let m = &self.generator_set[s.generator].matrix;
        if s.reversed {
            -m
        } else {
            m.clone()
        }
    }

    /// Appends a segment, merging it into the last one when the generator repeats.
    pub fn push(&mut self, generator: usize, duration: f64, reversed: bool) {
        if duration == 0.0 {
            return;
        }
        self.total_time += duration;
        if let Some(last) = self.segments.last_mut() {
            if last.generator == generator && last.reversed == reversed {
                last.duration += duration;
                return;
            }
        }
        let label = self.generator_set[generator].label.clone();
        self.segments.push(Segment { label, generator, duration, reversed });
    }

    /// Index of a generator in the set, adding it when absent.
    pub fn intern(&mut self, label: &GenLabel, matrix: &CMat<f64>) -> usize {
        if let Some(i) = self
            .generator_set
            .iter()
            .position(|g| &g.label == label && g.matrix.shape() == matrix.shape() && linalg::max_abs(&(&g.matrix - matrix)) == 0.0)
        {
            return i;
        }
        self.generator_set.push(LabeledMatrix { label: label.clone(), matrix: matrix.clone() });
        self.generator_set.len() - 1
    }

    /// Appends all segments of `other`, which runs after `self`. The junction
    /// stays a segment boundary, so segment counts taken before remain valid.
    pub fn extend(&mut self, other: &GeneratorSchedule) {
        for (k, s) in other.segments.iter().enumerate() {
            let g = &other.generator_set[s.generator];
            let i = self.intern(&g.label, &g.matrix);
            if k == 0 && s.duration != 0.0 {
                self.total_time += s.duration;
                self.segments.push(Segment { label: g.label.clone(), generator: i, duration: s.duration, reversed: s.reversed });
            } else {
                self.push(i, s.duration, s.reversed);
            }
        }
    }

    /// Chronological product `exp(d_m M_m) ... exp(d_1 M_1)`.
    pub fn flow(&self) -> CMat<f64> {
        self.flow_at(f64::INFINITY)
    }

    /// Flow up to schedule time `t`.
    pub fn flow_at(&self, t: f64) -> CMat<f64> {
        let mut u = linalg::eye::<f64>(self.n);
        let mut cache: Vec<Option<SkewExp<f64>>> = vec![None; self.generator_set.len()];
        let mut elapsed = 0.0;
        for s in &self.segments {
            if elapsed >= t {
                break;
            }
            let d = s.duration.min(t - elapsed);
            elapsed += s.duration;
            let e = cache[s.generator].get_or_insert_with(|| SkewExp::new(&self.generator_set[s.generator].matrix));
            let step = e.exp(if s.reversed { -d } else { d });
            u = step * u;
        }
        u
    }

    /// Checks durations, indices and labels.
    pub fn validate(&self) -> Result<()> {
        let mut total = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration >= 0.0) || !s.duration.is_finite() {
                return Err(Error::InvalidArgument(format!("segment {i} has duration {}", s.duration)));
            }
            let g = self
                .generator_set
                .get(s.generator)
                .ok_or_else(|| Error::InvalidArgument(format!("segment {i} references generator {}", s.generator)))?;
            if g.label != s.label {
                return Err(Error::InvalidArgument(format!("segment {i} label {} does not resolve", s.label)));
            }
            if g.matrix.nrows() != self.n {
                return Err(Error::Dimension(format!("generator {} has order {}", s.generator, g.matrix.nrows())));
            }
            total += s.duration;
        }
        if (total - self.total_time).abs() > 1e-9 * total.max(1.0) {
            return Err(Error::InvalidArgument(format!("total time {} != sum of durations {total}", self.total_time)));
        }
        Ok(())
    }
}

/// Initialization of the duration vector in `steer_su`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// Palindromic word (flow = I) when every generator is reversible and the
    /// target is near the identity, random durations otherwise.
    Auto,
    Random,
    Palindrome,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteerOptions {
    /// Phase-invariant Frobenius tolerance.
    pub tol: f64,
    /// Maximal number of segments in the word.
    pub budget: usize,
    pub seed: u64,
    /// Restarts per word length.
    pub restarts: usize,
    /// Coordinate-descent sweeps before the Levenberg-Marquardt polish.
    pub sweeps: usize,
    pub lm_iters: usize,
    /// Period of the drift flow, used to reduce drift durations.
    pub drift_period: Option<f64>,
    pub check_closure: bool,
    pub init: Init,
}

impl Default for SteerOptions {
    fn default() -> Self {
        SteerOptions {
            tol: 1e-6,
            budget: 400,
            seed: 0,
            restarts: 8,
            sweeps: 4,
            lm_iters: 300,
            drift_period: None,
            check_closure: true,
            init: Init::Auto,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteerResult {
    pub schedule: GeneratorSchedule,
    /// Achieved phase-invariant distance of the flow to the target.
    pub error: f64,
    pub met: bool,
    pub restarts_used: usize,
    pub word_length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Domain {
    Free,
    Nonneg,
}

struct Problem<'a> {
    n: usize,
    g: &'a CMat<f64>,
    gens: &'a [Generator],
    exps: Vec<SkewExp<f64>>,
    domain: Vec<Domain>,
    /// Line-search window half-width and grid step.
    window: Vec<(f64, f64)>,
    period: Option<f64>,
}

fn line_window(mu: &[f64], period: Option<f64>, is_drift: bool) -> (f64, f64) {
    let mut diffs: Vec<f64> = Vec::new();
    for a in mu {
        for b in mu {
            let d = (a - b).abs();
            if d > 0.0 {
                diffs.push(d);
            }
        }
    }
    let scale = mu.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    diffs.retain(|&d| d > 1e-9 * scale);
    if diffs.is_empty() {
        return (0.0, 0.0);
    }
    let max = diffs.iter().fold(0.0f64, |m, &x| m.max(x));
    let min = diffs.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let step = TAU / (16.0 * max);
    let mut w = (TAU / min).min(64.0 * TAU / max);
    if is_drift {
        if let Some(p) = period {
            w = p;
        }
    }
    (w, step)
}

/// `|sum_k c_k exp(-i d mu_k)|^2` with first and second derivatives in `d`.
fn line_value(c: &[C64], mu: &[f64], d: f64) -> (f64, f64, f64) {
    let mut s = C64::new(0.0, 0.0);
    let mut s1 = C64::new(0.0, 0.0);
    let mut s2 = C64::new(0.0, 0.0);
    for (ck, &m) in c.iter().zip(mu) {
        let e = *ck * C64::from_polar(1.0, -d * m);
        s += e;
        s1 += e * C64::new(0.0, -m);
        s2 += e * (-m * m);
    }
    let f = s.norm_sqr();
    let f1 = 2.0 * (s.conj() * s1).re;
    let f2 = 2.0 * (s1.norm_sqr() + (s.conj() * s2).re);
    (f, f1, f2)
}

/// Maximizes `|sum_k c_k exp(-i d mu_k)|` on `[lo, hi]` by grid search, golden
/// section and Newton polishing. `current` is kept unless beaten.
fn line_max(c: &[C64], mu: &[f64], lo: f64, hi: f64, step: f64, current: Option<f64>) -> (f64, f64) {
    let f = |d: f64| line_value(c, mu, d).0;
    let mut best = current.map(|d| (d, f(d))).unwrap_or((lo, f(lo)));
    if step > 0.0 && hi > lo {
        let m = ((hi - lo) / step).ceil() as usize;
        let total: f64 = c.iter().map(|z| z.norm()).sum::<f64>().powi(2);
        for i in 0..=m {
            let d = (lo + i as f64 * step).min(hi);
            let v = f(d);
            // Near-ties go to the shortest duration.
            let tie = (v - best.1).abs() <= 1e-9 * total && d.abs() < best.0.abs();
            if v > best.1 + 1e-9 * total || tie {
                best = (d, v);
            }
        }
        let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - gr * (b - a);
        let mut x2 = a + gr * (b - a);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..60 {
            if f1 > f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = f(x2);
            }
        }
        let x = 0.5 * (a + b);
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let mut d = best.0;
    for _ in 0..8 {
        let (_, d1, d2) = line_value(c, mu, d);
        if d2 >= 0.0 {
            break;
        }
        let nd = (d - d1 / d2).clamp(lo.min(d), hi.max(d));
        if f(nd) >= best.1 {
            best = (nd, f(nd));
            d = nd;
        } else {
            break;
        }
    }
    (best.0, best.1.sqrt())
}

fn real_vec(m: &CMat<f64>, out: &mut [f64]) {
    let n = m.nrows();
    for r in 0..n {
        for c in 0..n {
            out[2 * (r * n + c)] = m[(r, c)].re;
            out[2 * (r * n + c) + 1] = m[(r, c)].im;
        }
    }
}

impl<'a> Problem<'a> {
    fn new(g: &'a CMat<f64>, gens: &'a [Generator], period: Option<f64>) -> Self {
        let exps: Vec<SkewExp<f64>> = gens.iter().map(|x| SkewExp::new(&x.matrix)).collect();
        let domain = gens.iter().map(|x| if x.reversible { Domain::Free } else { Domain::Nonneg }).collect();
        let window = gens
            .iter()
            .zip(&exps)
            .map(|(x, e)| line_window(&e.mu, period, x.label == GenLabel::Drift))
            .collect();
        Problem { n: g.nrows(), g, gens, exps, domain, window, period }
    }

    fn factors(&self, word: &[usize], d: &[f64]) -> Vec<CMat<f64>> {
        word.iter().zip(d).map(|(&i, &t)| self.exps[i].exp(t)).collect()
    }

    fn product(&self, f: &[CMat<f64>]) -> CMat<f64> {
        let mut u = linalg::eye::<f64>(self.n);
        for e in f {
            u = e * u;
        }
        u
    }

    fn distance(&self, word: &[usize], d: &[f64]) -> f64 {
        linalg::phase_distance(&self.product(&self.factors(word, d)), self.g)
    }

    /// Suffix products `L_i = E_m ... E_{i+1}`.
    fn suffixes(&self, f: &[CMat<f64>]) -> Vec<CMat<f64>> {
        let m = f.len();
        let mut out = vec![linalg::eye::<f64>(self.n); m];
        for i in (0..m.saturating_sub(1)).rev() {
            out[i] = &out[i + 1] * &f[i + 1];
        }
        out
    }

    fn line_bounds(&self, gi: usize) -> (f64, f64, f64) {
        let (w, step) = self.window[gi];
        let is_periodic_drift = self.gens[gi].label == GenLabel::Drift && self.period.is_some();
        match self.domain[gi] {
            _ if is_periodic_drift => (0.0, w, step),
            Domain::Free => (-w, w, step),
            Domain::Nonneg => (0.0, w, step),
        }
    }

    fn sweep(&self, word: &[usize], d: &mut [f64]) {
        let mut f = self.factors(word, d);
        let suf = self.suffixes(&f);
        let gd = self.g.adjoint();
        let mut right = linalg::eye::<f64>(self.n);
        for i in 0..word.len() {
            let gi = word[i];
            let (lo, hi, step) = self.line_bounds(gi);
            if step > 0.0 {
                let e = &self.exps[gi];
                let m = &right * &gd * &suf[i];
                let mv = e.v.adjoint() * m * &e.v;
                let c: Vec<C64> = (0..self.n).map(|k| mv[(k, k)]).collect();
                let (nd, _) = line_max(&c, &e.mu, lo, hi, step, Some(d[i]));
                d[i] = nd;
                f[i] = e.exp(nd);
            }
            right = &f[i] * right;
        }
    }

    /// Phase-quotiented residual `skew(U g* / phase)` and the Jacobian columns.
    fn residual(&self, word: &[usize], d: &[f64], jac: bool) -> (Vec<f64>, Option<DMatrix<f64>>) {
        let n = self.n;
        let f = self.factors(word, d);
        let u = self.product(&f);
        let delta = &u * self.g.adjoint();
        let tr = linalg::trace(&delta);
        let ph = if tr.norm() > 0.0 { tr.conj() / tr.norm() } else { C64::new(1.0, 0.0) };
        let dp = delta * ph;
        let mut r = vec![0.0; 2 * n * n];
        real_vec(&linalg::skew_part(&dp), &mut r);
        if !jac {
            return (r, None);
        }
        let suf = self.suffixes(&f);
        let mut j = DMatrix::<f64>::zeros(2 * n * n, word.len());
        let mut col = vec![0.0; 2 * n * n];
        for (i, &gi) in word.iter().enumerate() {
            let x = &suf[i] * &self.gens[gi].matrix * suf[i].adjoint();
            let dx = linalg::traceless(&linalg::skew_part(&(x * &dp)));
            real_vec(&dx, &mut col);
            j.column_mut(i).copy_from_slice(&col);
        }
        (r, Some(j))
    }

    fn project(&self, word: &[usize], d: &mut [f64]) {
        for (i, &gi) in word.iter().enumerate() {
            if self.domain[gi] == Domain::Nonneg && d[i] < 0.0 {
                d[i] = 0.0;
            }
        }
    }

    fn levenberg_marquardt(&self, word: &[usize], d: &mut Vec<f64>, iters: usize, tol: f64) {
        let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
        let (mut r, _) = self.residual(word, d, false);
        let mut c = cost(&r);
        let mut mu = 1e-3;
        let m = word.len();
        for _ in 0..iters {
            if c.sqrt() < 0.05 * tol {
                break;
            }
            let (_, j) = self.residual(word, d, true);
            let j = j.expect("jacobian requested");
            let jt = j.transpose();
            let a = &jt * &j;
            let b = &jt * DVector::from_column_slice(&r);
            let scale = (0..m).fold(0.0f64, |s, i| s.max(a[(i, i)])).max(1e-12);
            let mut accepted = false;
            for _ in 0..12 {
                let mut h = a.clone();
                for i in 0..m {
                    h[(i, i)] += mu * (a[(i, i)] + 1e-6 * scale);
                }
                let step = match h.cholesky() {
                    Some(ch) => ch.solve(&(-&b)),
                    None => {
                        mu *= 4.0;
                        continue;
                    }
                };
                let mut nd: Vec<f64> = d.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
                self.project(word, &mut nd);
                let (nr, _) = self.residual(word, &nd, false);
                let nc = cost(&nr);
                if nc < c {
                    *d = nd;
                    r = nr;
                    let rel = (c - nc) / c.max(1e-300);
                    c = nc;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    if rel < 1e-14 {
                        return;
                    }
                    break;
                }
                mu *= 4.0;
            }
            if !accepted {
                break;
            }
        }
    }

    fn init(&self, word: &[usize], rng: &mut ChaCha8Rng, palindrome: bool) -> Vec<f64> {
        let scale = |gi: usize| -> f64 {
            let nrm = self.exps[gi].mu.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
            if palindrome {
                0.3 / nrm
            } else {
                std::f64::consts::PI / nrm
            }
        };
        let m = word.len();
        let mut d = vec![0.0; m];
        if palindrome {
            let h = m / 2;
            for i in 0..h {
                d[i] = rng.gen_range(-1.0..1.0) * scale(word[i]);
            }
            for i in 0..h {
                d[m - 1 - i] = -d[i];
            }
        } else {
            for i in 0..m {
                let gi = word[i];
                let is_periodic_drift = self.gens[gi].label == GenLabel::Drift && self.period.is_some();
                d[i] = if is_periodic_drift {
                    rng.gen_range(0.0..self.period.unwrap())
                } else {
                    match self.domain[gi] {
                        Domain::Free => rng.gen_range(-1.0..1.0) * scale(gi),
                        Domain::Nonneg => rng.gen_range(0.0..1.0) * scale(gi),
                    }
                };
            }
        }
        d
    }

    fn run(&self, word: &[usize], seed: u64, opts: &SteerOptions, palindrome: bool) -> (Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = self.init(word, &mut rng, palindrome);
        if !palindrome {
            for _ in 0..opts.sweeps {
                self.sweep(word, &mut d);
            }
        }
        self.levenberg_marquardt(word, &mut d, opts.lm_iters, opts.tol);
        let err = self.distance(word, &d);
        (d, err)
    }
}

/// Turns a signed word into a schedule with nonnegative durations: drift
/// durations are reduced modulo the period, negative activated flows flip `xi`,
/// other negative flows are marked reversed.
fn realize(n: usize, gens: &[Generator], word: &[usize], d: &[f64], period: Option<f64>) -> GeneratorSchedule {
    let mut s = GeneratorSchedule::from_generators(n, gens);
    for (&gi, &t) in word.iter().zip(d) {
        let g = &gens[gi];
        if t >= 0.0 {
            s.push(gi, t, false);
            continue;
        }
        match (&g.label, period) {
            (GenLabel::Drift, Some(p)) => {
                let r = t.rem_euclid(p);
                s.push(gi, if r >= p { 0.0 } else { r }, false);
            }
            (GenLabel::Activated { sigma, j, xi }, _) => {
                let label = GenLabel::Activated { sigma: *sigma, j: *j, xi: [-xi[0], -xi[1]] };
                let m = -&g.matrix;
                let k = s.intern(&label, &m);
                s.push(k, -t, false);
            }
            _ => s.push(gi, -t, true),
        }
    }
    s
}

fn closure_check(n: usize, gens: &[Generator]) -> Result<()> {
    let tl: Vec<CMat<f64>> = gens.iter().map(|g| linalg::traceless(&g.matrix)).filter(|m| linalg::max_abs(m) > 0.0).collect();
    if tl.is_empty() {
        return Err(Error::Precondition("generators have no traceless part".into()));
    }
    let res = liealg::lie_closure(&tl, 1e-8, 64)?;
    if !res.contains_su(n, 1e-8) {
        return Err(Error::Precondition(format!("Lie closure of the generators has dimension {} < {}", res.dim, n * n - 1)));
    }
    Ok(())
}

/// Finds a schedule over `generators` whose flow equals `g` up to a global phase.
pub fn steer_su(g: &CMat<f64>, generators: &[Generator], opts: &SteerOptions) -> Result<SteerResult> {
    let n = g.nrows();
    if g.ncols() != n || n < 2 {
        return Err(Error::Dimension(format!("target of shape {:?}", g.shape())));
    }
    if linalg::unitarity_defect(g) > 1e-8 {
        return Err(Error::InvalidArgument("target is not unitary".into()));
    }
    if generators.is_empty() {
        return Err(Error::InvalidArgument("empty generator set".into()));
    }
    for (i, x) in generators.iter().enumerate() {
        if x.matrix.shape() != (n, n) {
            return Err(Error::Dimension(format!("generator {i} has shape {:?}", x.matrix.shape())));
        }
        let d = linalg::skew_defect(&x.matrix);
        if d > 1e-10 * linalg::max_abs(&x.matrix).max(1.0) {
            return Err(Error::NotSkew(i, d));
        }
    }
    if opts.check_closure {
        closure_check(n, generators)?;
    }
    let id = linalg::eye::<f64>(n);
    let base = linalg::phase_distance(&id, g);
    if base <= opts.tol {
        return Ok(SteerResult {
            schedule: GeneratorSchedule::from_generators(n, generators),
            error: base,
            met: true,
            restarts_used: 0,
            word_length: 0,
        });
    }
    let prob = Problem::new(g, generators, opts.drift_period);
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    for (gi, e) in prob.exps.iter().enumerate() {
        let (lo, hi, step) = prob.line_bounds(gi);
        if step == 0.0 {
            continue;
        }
        let gd = g.adjoint();
        let mv = e.v.adjoint() * gd * &e.v;
        let c: Vec<C64> = (0..n).map(|k| mv[(k, k)]).collect();
        let (d, _) = line_max(&c, &e.mu, lo, hi, step, None);
        let err = prob.distance(&[gi], &[d]);
        if best.as_ref().map_or(true, |b| err < b.2) {
            best = Some((vec![gi], vec![d], err));
        }
    }
    if let Some((w, d, err)) = &best {
        if *err <= opts.tol {
            return Ok(SteerResult {
                schedule: realize(n, generators, w, d, opts.drift_period),
                error: *err,
                met: true,
                restarts_used: 0,
                word_length: 1,
            });
        }
    }
    let k = generators.len();
    let all_reversible = generators.iter().all(|x| x.reversible);
    let palindrome = match opts.init {
        Init::Palindrome => all_reversible,
        Init::Random => false,
        Init::Auto => all_reversible && base < 0.5,
    };
    let dim = n * n - 1;
    let mut rounds = (dim + k).div_ceil(k).max(1);
    if palindrome {
        rounds = rounds.max(2);
        rounds += rounds % 2;
    }
    let mut used = 0usize;
    let mut word_length;
    loop {
        let m = (rounds * k).min(opts.budget.max(1));
        let word: Vec<usize> = (0..m).map(|i| i % k).collect();
        let word = if palindrome {
            let h = m / 2;
            let mut w: Vec<usize> = word[..h].to_vec();
            let rev: Vec<usize> = w.iter().rev().copied().collect();
            w.extend(rev);
            w
        } else {
            word
        };
        word_length = word.len();
        let runs: Vec<(Vec<f64>, f64)> = (0..opts.restarts.max(1))
            .into_par_iter()
            .map(|r| prob.run(&word, opts.seed.wrapping_add((used + r) as u64), opts, palindrome))
            .collect();
        used += runs.len();
        for (d, err) in runs {
            if err <= opts.tol {
                let schedule = realize(n, generators, &word, &d, opts.drift_period);
                let err = linalg::phase_distance(&schedule.flow(), g);
                return Ok(SteerResult { schedule, error: err, met: err <= opts.tol, restarts_used: used, word_length });
            }
            if best.as_ref().map_or(true, |b| err < b.2) {
                best = Some((word.clone(), d, err));
            }
        }
        if m >= opts.budget || 2 * rounds * k > opts.budget.max(m) {
            break;
        }
        rounds *= 2;
    }
    let (w, d, _) = best.expect("at least one attempt");
    let schedule = realize(n, generators, &w, &d, opts.drift_period);
    let err = linalg::phase_distance(&schedule.flow(), g);
    Ok(SteerResult { schedule, error: err, met: err <= opts.tol, restarts_used: used, word_length })
}

/// Tracking of a sampled SU(n) curve by concatenated steering steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackingPlan {
    pub times: Vec<f64>,
    /// Schedule time reached at each sample; nondecreasing.
    pub tau: Vec<f64>,
    pub schedule: GeneratorSchedule,
    /// Number of schedule segments completed at each sample.
    pub sample_segments: Vec<usize>,
    /// Phase-invariant error of the flow at `tau[i]` against the sample.
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackOptions {
    pub eps: f64,
    pub steer: SteerOptions,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions { eps: 0.05, steer: SteerOptions { init: Init::Auto, ..SteerOptions::default() } }
    }
}

/// Tracks `curve[i]` at `times[i]`. Each step steers the increment from the flow
/// actually reached to the next sample, with per-step tolerance `eps / (2S)`.
pub fn track_su(curve: &[CMat<f64>], times: &[f64], generators: &[Generator], opts: &TrackOptions) -> Result<TrackingPlan> {
    if curve.is_empty() || curve.len() != times.len() {
        return Err(Error::InvalidArgument("curve and times must be nonempty and of equal length".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("sample times must increase".into()));
    }
    let n = curve[0].nrows();
    let id = linalg::eye::<f64>(n);
    if linalg::phase_distance(&curve[0], &id) > 1e-9 {
        return Err(Error::Precondition("curve must start at the identity".into()));
    }
    for i in 0..curve.len() - 1 {
        let jump = linalg::op_norm(&(&curve[i + 1] - &curve[i]));
        if jump >= 1.0 {
            return Err(Error::Precondition(format!(
                "samples {i} and {} are {jump:.3} apart; sample the curve more densely",
                i + 1
            )));
        }
    }
    if opts.steer.check_closure {
        closure_check(n, generators)?;
    }
    let s = (curve.len() - 1).max(1);
    let step_tol = opts.eps / (2.0 * s as f64);
    let mut schedule = GeneratorSchedule::from_generators(n, generators);
    let mut u = id.clone();
    let mut tau = vec![0.0];
    let mut sample_segments = vec![0];
    let mut errors = vec![linalg::phase_distance(&u, &curve[0])];
    let mut sopts = opts.steer.clone();
    sopts.tol = step_tol;
    sopts.check_closure = false;
    for i in 0..curve.len() - 1 {
        let h = &curve[i + 1] * u.adjoint();
        sopts.seed = opts.steer.seed.wrapping_add(1000 * i as u64);
        let res = steer_su(&h, generators, &sopts)?;
        if !res.met {
            return Err(Error::Precondition(format!(
                "steering failed at step {i}: error {:.3e} > {step_tol:.3e}",
                res.error
            )));
        }
        u = res.schedule.flow() * u;
        schedule.extend(&res.schedule);
        tau.push(schedule.total_time);
        sample_segments.push(schedule.segments.len());
        errors.push(linalg::phase_distance(&u, &curve[i + 1]));
    }
    Ok(TrackingPlan { times: times.to_vec(), tau, schedule, sample_segments, errors })
}

/// Lifts a state map to `g in SU(n)`.
///
/// `n >= n0` is the smallest truncation keeping `1 - eps^2` of every state's
/// norm. The orthonormalized truncated families are matched and completed by
/// the rotation closest to the identity, and the determinant is fixed by a phase
/// on a completion vector.
pub fn lift_target(initial: &[CVec<f64>], targets: &[CVec<f64>], n0: usize, eps: f64) -> Result<(usize, CMat<f64>)> {
    let r = initial.len();
    if r == 0 || r != targets.len() {
        return Err(Error::InvalidArgument("need equally many initial and target states".into()));
    }
    if r > n0 {
        return Err(Error::InvalidArgument(format!("{r} states do not fit in n0 = {n0}")));
    }
    let len = initial.iter().chain(targets).map(|v| v.len()).min().unwrap_or(0);
    if len < n0 {
        return Err(Error::Dimension(format!("states of length {len} shorter than n0 = {n0}")));
    }
    for v in initial.iter().chain(targets) {
        if (v.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("state norm {} is not 1", v.norm())));
        }
    }
    let kept = |v: &CVec<f64>, n: usize| v.rows(0, n).norm_squared();
    let mut n = n0;
    while n < len && initial.iter().chain(targets).any(|v| kept(v, n) < 1.0 - eps * eps) {
        n += 1;
    }
    if initial.iter().chain(targets).any(|v| kept(v, n) < 1.0 - eps * eps) {
        return Err(Error::Precondition(format!("states lose more than eps^2 of their norm at n = {n}; increase n0")));
    }
    let trunc = |vs: &[CVec<f64>]| -> CMat<f64> {
        let mut m = CMat::<f64>::zeros(n, vs.len());
        for (c, v) in vs.iter().enumerate() {
            m.column_mut(c).copy_from(&v.rows(0, n));
        }
        m
    };
    let a = trunc(initial);
    let b = trunc(targets);
    let ga = a.adjoint() * &a;
    let gb = b.adjoint() * &b;
    let gram_gap = linalg::max_abs(&(&ga - &gb));
    if gram_gap > 2.0 * eps + 1e-9 {
        return Err(Error::Precondition(format!(
            "truncated families differ in inner products by {gram_gap:.3e}; increase n0"
        )));
    }
    let qa = gram_schmidt(&a)?;
    let qb = gram_schmidt(&b)?;
    let mut both = CMat::<f64>::zeros(n, 2 * r);
    both.columns_mut(0, r).copy_from(&qa);
    both.columns_mut(r, r).copy_from(&qb);
    let span = range_basis(&both, 1e-10);
    let s = span.ncols();
    let id = linalg::eye::<f64>(n);
    let pa_full = (&id - &qa * qa.adjoint()) * &span;
    let pb_full = (&id - &qb * qb.adjoint()) * &span;
    let pa = range_basis(&pa_full, 1e-10);
    let pb = range_basis(&pb_full, 1e-10);
    let mut g = &id - &qa * qa.adjoint() - &pa * pa.adjoint() + &qb * qa.adjoint();
    let c = pa.ncols().min(pb.ncols());
    let pa = pa.columns(0, c).into_owned();
    let pb = pb.columns(0, c).into_owned();
    if c > 0 {
        let svd = (pa.adjoint() * &pb).svd(true, true);
        let w = svd.v_t.expect("v requested").adjoint() * svd.u.expect("u requested").adjoint();
        g += &pb * w * pa.adjoint();
    }
    let det = g.determinant();
    let ph = det.conj() / det.norm();
    let p: Option<CVec<f64>> = if c > 0 {
        Some(pa.column(0).into_owned())
    } else if s < n {
        let perp = range_basis(&(&id - &span * span.adjoint()), 1e-10);
        Some(perp.column(0).into_owned())
    } else {
        None
    };
    match p {
        Some(p) => g = &g * (&id + &p * p.adjoint() * (ph - C64::new(1.0, 0.0))),
        None => g *= C64::from_polar(1.0, ph.arg() / n as f64),
    }
    Ok((n, g))
}

fn gram_schmidt(a: &CMat<f64>) -> Result<CMat<f64>> {
    let mut q = a.clone();
    for c in 0..q.ncols() {
        for _ in 0..2 {
            for p in 0..c {
                let qp = q.column(p).into_owned();
                let proj = qp.dotc(&q.column(c));
                let mut col = q.column_mut(c);
                col -= qp * proj;
            }
        }
        let nrm = q.column(c).norm();
        if nrm < 1e-8 {
            return Err(Error::Precondition("state family is linearly dependent after truncation".into()));
        }
        let mut col = q.column_mut(c);
        col /= C64::new(nrm, 0.0);
    }
    Ok(q)
}

/// Orthonormal basis of the column range, from the singular value decomposition.
fn range_basis(m: &CMat<f64>, tol: f64) -> CMat<f64> {
    let n = m.nrows();
    if m.ncols() == 0 {
        return CMat::<f64>::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol * smax.max(1.0)).collect();
    let mut out = CMat::<f64>::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.column_mut(c).copy_from(&u.column(i));
    }
    out
}

/// Lifts a sampled modulus curve to an SU(n) curve by per-step real plane
/// rotations, conjugated by the phases of the initial state.
///
/// Moduli vectors are normalized before rotating.
pub fn lift_modulus_curve(moduli: &[Vec<f64>], psi0: Option<&CVec<f64>>) -> Result<Vec<CMat<f64>>> {
    if moduli.is_empty() {
        return Err(Error::InvalidArgument("empty modulus curve".into()));
    }
    let n = moduli[0].len();
    let mut vs = Vec::with_capacity(moduli.len());
    for (i, m) in moduli.iter().enumerate() {
        if m.len() != n {
            return Err(Error::Dimension(format!("sample {i} has {} moduli, expected {n}", m.len())));
        }
        if m.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} has a negative or non-finite modulus")));
        }
        let nrm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1.0 + 1e-9 || nrm < 1e-12 {
            return Err(Error::InvalidArgument(format!("sample {i} has l2 norm {nrm}")));
        }
        vs.push(DVector::from_iterator(n, m.iter().map(|x| x / nrm)));
    }
    let phases: Vec<C64> = (0..n)
        .map(|k| match psi0 {
            Some(p) if p[k].norm() > 1e-12 => p[k] / p[k].norm(),
            _ => C64::new(1.0, 0.0),
        })
        .collect();
    let mut g = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(vs.len());
    let conj = |g: &DMatrix<f64>| CMat::<f64>::from_fn(n, n, |a, b| phases[a] * g[(a, b)] * phases[b].conj());
    out.push(conj(&g));
    for w in vs.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let cos = a.dot(b).clamp(-1.0, 1.0);
        let perp = b - a * cos;
        let sin = perp.norm();
        if sin > 1e-14 {
            let u = perp / sin;
            let r = DMatrix::<f64>::identity(n, n) + (a * a.transpose() + &u * u.transpose()) * (cos - 1.0)
                + (&u * a.transpose() - a * u.transpose()) * sin;
            g = r * g;
        }
        out.push(conj(&g));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseAlignOptions {
    /// Search horizon; the default is `2 pi n / (min nonzero occupied gap)`.
    pub horizon: Option<f64>,
    pub eta: f64,
    /// Quotient by a common global phase.
    pub global_phase: bool,
    pub max_doublings: u32,
}

impl Default for PhaseAlignOptions {
    fn default() -> Self {
        PhaseAlignOptions { horizon: None, eta: 0.05, global_phase: true, max_doublings: 10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseAlignResult {
    pub t: f64,
    pub mismatch: f64,
    pub horizon: f64,
}

fn align_mismatch(current: &[CVec<f64>], target: &[CVec<f64>], lambda: &[f64], t: f64, global: bool) -> f64 {
    let rot: Vec<C64> = lambda.iter().map(|&l| C64::from_polar(1.0, l * t)).collect();
    let ph = if global {
        let mut ov = C64::new(0.0, 0.0);
        for (c, g) in current.iter().zip(target) {
            for k in 0..lambda.len() {
                ov += (rot[k] * c[k]).conj() * g[k];
            }
        }
        if ov.norm() > 0.0 {
            ov / ov.norm()
        } else {
            C64::new(1.0, 0.0)
        }
    } else {
        C64::new(1.0, 0.0)
    };
    let mut m = 0.0f64;
    for (c, g) in current.iter().zip(target) {
        for k in 0..lambda.len() {
            m = m.max((rot[k] * c[k] * ph - g[k]).norm());
        }
    }
    m
}

/// Free-drift duration `t*` making `exp(t* A) psi` match the targets.
pub fn phase_align(current: &[CVec<f64>], target: &[CVec<f64>], lambda: &[f64], opts: &PhaseAlignOptions) -> Result<PhaseAlignResult> {
    if current.is_empty() || current.len() != target.len() {
        return Err(Error::InvalidArgument("need equally many current and target states".into()));
    }
    let n = lambda.len();
    for (c, g) in current.iter().zip(target) {
        if c.len() != n || g.len() != n {
            return Err(Error::Dimension("state length differs from the spectrum".into()));
        }
        for k in 0..n {
            if (c[k].norm() - g[k].norm()).abs() > opts.eta / 2.0 + 1e-12 {
                return Err(Error::Precondition(format!("moduli differ by more than eta/2 at component {k}")));
            }
        }
    }
    let occupied: Vec<usize> = (0..n).filter(|&k| current.iter().any(|c| c[k].norm() > 1e-12)).collect();
    let mut freqs: Vec<f64> = Vec::new();
    if opts.global_phase {
        for &a in &occupied {
            for &b in &occupied {
                freqs.push((lambda[a] - lambda[b]).abs());
            }
        }
    } else {
        freqs.extend(occupied.iter().map(|&k| lambda[k].abs()));
    }
    let scale = lambda.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    freqs.retain(|&f| f > 1e-12 * scale);
    let f = |t: f64| align_mismatch(current, target, lambda, t, opts.global_phase);
    if freqs.is_empty() {
        return Ok(PhaseAlignResult { t: 0.0, mismatch: f(0.0), horizon: 0.0 });
    }
    let fmax = freqs.iter().fold(0.0f64, |m, &x| m.max(x));
    let fmin = freqs.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let step = TAU / (16.0 * fmax);
    let mut horizon = opts.horizon.unwrap_or(TAU * n as f64 / fmin);
    let mut best = (0.0, f(0.0));
    let mut searched = 0.0;
    for round in 0..=opts.max_doublings {
        let m = ((horizon - searched) / step).ceil() as usize;
        for i in 0..=m {
            let t = (searched + i as f64 * step).min(horizon);
            let v = f(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        let (mut a, mut b) = ((best.0 - step).max(0.0), (best.0 + step).min(horizon));
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = b - gr * (b - a);
            let x2 = a + gr * (b - a);
            if f(x1) < f(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let t = 0.5 * (a + b);
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
        searched = horizon;
        if best.1 < opts.eta || opts.horizon.is_some() && round == 0 && opts.max_doublings == 0 {
            break;
        }
        if round < opts.max_doublings {
            horizon *= 2.0;
        }
    }
    Ok(PhaseAlignResult { t: best.0, mismatch: best.1, horizon: searched })
}
