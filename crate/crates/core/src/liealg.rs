//! Real Lie closures in u(n), the generator families of the control and
//! stalking conditions, and their certification.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{self, CompatibilityWitness, GapSet, TruncatedSystem};
use crate::linalg::{self, CMat};
use crate::models::QuantumModel;
use crate::scalar::{cabs, Real};
use crate::C64;

/// How an accepted closure element was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    /// Input generator with this index.
    Generator(usize),
    /// Bracket of two earlier elements (indices into the certificate).
    Bracket(usize, usize),
}

/// Lie closure of a set of skew-Hermitian matrices.
#[derive(Clone, Debug)]
pub struct LieClosureResult<T: Real> {
    pub dim: usize,
    /// Orthonormal under `Re tr(X* Y)`.
    pub basis: Vec<CMat<T>>,
    pub depth: usize,
    /// One node per basis direction, in acceptance order.
    pub certificate: Vec<Node>,
    /// False when `max_depth` stopped the search before the span stabilized.
    pub saturated: bool,
}

impl<T: Real> LieClosureResult<T> {
    /// Bracket word of certificate entry `i` written with generator names `g0, g1, ...`.
    pub fn word(&self, i: usize) -> String {
        match self.certificate[i] {
            Node::Generator(g) => format!("g{g}"),
            Node::Bracket(a, b) => format!("[{},{}]", self.word(a), self.word(b)),
        }
    }

    pub fn words(&self) -> Vec<String> {
        (0..self.certificate.len()).map(|i| self.word(i)).collect()
    }

    /// Residual norm of `x` after projection on the span.
    pub fn residual(&self, x: &CMat<T>) -> T {
        let mut r = x.clone();
        for b in &self.basis {
            let c = linalg::re_inner(b, &r);
            r -= b * Complex::new(c, T::zero());
        }
        linalg::frobenius(&r)
    }

    /// Whether every element of su(n) lies in the span.
    pub fn contains_su(&self, n: usize, tol: T) -> bool {
        linalg::su_basis::<T>(n).iter().all(|x| self.residual(x) <= tol)
    }
}

struct Span<T: Real> {
    basis: Vec<Vec<T>>,
    tol: T,
}

fn flatten<T: Real>(m: &CMat<T>) -> Vec<T> {
    let mut v = Vec::with_capacity(2 * m.len());
    for z in m.iter() {
        v.push(z.re);
        v.push(z.im);
    }
    v
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

impl<T: Real> Span<T> {
    /// Two passes of modified Gram-Schmidt; accepts when the relative residual exceeds `tol`.
    fn try_add(&mut self, m: &CMat<T>) -> bool {
        let mut v = flatten(m);
        let norm = dot(&v, &v).sqrt();
        if norm <= T::EPS {
            return false;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        for _ in 0..2 {
            for b in &self.basis {
                let c = dot(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * *y;
                }
            }
        }
        let r = dot(&v, &v).sqrt();
        if r <= self.tol {
            return false;
        }
        for x in v.iter_mut() {
            *x /= r;
        }
        self.basis.push(v);
        true
    }
}

fn unflatten<T: Real>(v: &[T], n: usize) -> CMat<T> {
    CMat::<T>::from_fn(n, n, |r, c| {
        let i = 2 * (c * n + r);
        Complex::new(v[i], v[i + 1])
    })
}

/// Real Lie closure of `generators`.
///
/// Generators are normalized to unit Frobenius norm. The search brackets each
/// newly accepted element with the accepted generators, breadth first, and
/// accepts a candidate when its normalized residual against the current span
/// exceeds `rank_tol`. Right-normed brackets of generators span the generated
/// algebra, so this reaches the full closure.
pub fn lie_closure<T: Real>(generators: &[CMat<T>], rank_tol: T, max_depth: usize) -> Result<LieClosureResult<T>> {
    if generators.is_empty() {
        return Err(Error::InvalidArgument("lie_closure needs at least one generator".into()));
    }
    let n = generators[0].nrows();
    for (i, g) in generators.iter().enumerate() {
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::Dimension(format!("generator {i} has shape {:?}, expected {n}x{n}", g.shape())));
        }
        let scale = linalg::max_abs(g).max(T::one());
        let d = linalg::skew_defect(g);
        if d > T::of(1e-10) * scale {
            return Err(Error::NotSkew(i, d.f64()));
        }
    }
    let traceless = generators.iter().all(|g| cabs(linalg::trace(g)) <= T::of(1e-10) * linalg::max_abs(g).max(T::one()));
    let cap = if traceless { n * n - 1 } else { n * n };
    let mut span = Span { basis: Vec::new(), tol: rank_tol };
    let mut elems: Vec<CMat<T>> = Vec::new();
    let mut cert = Vec::new();
    let mut gens = Vec::new();
    for (i, g) in generators.iter().enumerate() {
        if span.basis.len() == cap {
            break;
        }
        if span.try_add(g) {
            let nrm = linalg::frobenius(g);
            elems.push(g * Complex::new(T::one() / nrm, T::zero()));
            cert.push(Node::Generator(i));
            gens.push(elems.len() - 1);
        }
    }
    let mut frontier: Vec<usize> = (0..elems.len()).collect();
    let mut depth = 0;
    while !frontier.is_empty() && depth < max_depth && span.basis.len() < cap {
        depth += 1;
        let mut next = Vec::new();
        'outer: for &e in &frontier {
            for &g in &gens {
                if span.basis.len() == cap {
                    break 'outer;
                }
                let c = linalg::commutator(&elems[g], &elems[e]);
                if span.try_add(&c) {
                    let nrm = linalg::frobenius(&c);
                    elems.push(c * Complex::new(T::one() / nrm, T::zero()));
                    cert.push(Node::Bracket(g, e));
                    next.push(elems.len() - 1);
                }
            }
        }
        frontier = next;
    }
    let saturated = frontier.is_empty() || span.basis.len() == cap;
    Ok(LieClosureResult {
        dim: span.basis.len(),
        basis: span.basis.iter().map(|v| unflatten(v, n)).collect(),
        depth,
        certificate: cert,
        saturated,
    })
}

/// Re-evaluates a certificate from the generators, normalizing every element.
pub fn replay_certificate<T: Real>(generators: &[CMat<T>], certificate: &[Node]) -> Vec<CMat<T>> {
    let mut out: Vec<CMat<T>> = Vec::with_capacity(certificate.len());
    for node in certificate {
        let m = match *node {
            Node::Generator(g) => generators[g].clone(),
            Node::Bracket(a, b) => linalg::commutator(&out[a], &out[b]),
        };
        let nrm = linalg::frobenius(&m);
        out.push(m * Complex::new(T::one() / nrm, T::zero()));
    }
    out
}

/// Numerical rank of a set of matrices viewed as real vectors.
pub fn real_rank<T: Real>(ms: &[CMat<T>], tol: T) -> usize {
    let mut span = Span { basis: Vec::new(), tol };
    ms.iter().filter(|m| span.try_add(m)).count()
}

/// Whether every bracket of two basis elements stays in the span.
pub fn is_bracket_stable<T: Real>(res: &LieClosureResult<T>, tol: T) -> bool {
    for (i, x) in res.basis.iter().enumerate() {
        for y in &res.basis[i + 1..] {
            let c = linalg::commutator(x, y);
            let nrm = linalg::frobenius(&c);
            if nrm > T::EPS && res.residual(&c) > tol * nrm.max(T::one()) {
                return false;
            }
        }
    }
    true
}

/// Identifies a generator of the control or stalking families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GenLabel {
    /// `A`.
    Drift,
    /// `E_0(B_j)`.
    Diagonal { j: usize },
    /// `E_0(B_j) + w E_sigma(B_j)`.
    Combined { sigma: f64, j: usize },
    /// `w J_xi(E_sigma(B_j))`; `xi` stored as `[re, im]`.
    Activated { sigma: f64, j: usize, xi: [f64; 2] },
    Custom(String),
}

impl GenLabel {
    pub fn xi(&self) -> C64 {
        match self {
            GenLabel::Activated { xi, .. } => C64::new(xi[0], xi[1]),
            _ => C64::new(1.0, 0.0),
        }
    }

    pub fn control(&self) -> Option<usize> {
        match self {
            GenLabel::Diagonal { j } | GenLabel::Combined { j, .. } | GenLabel::Activated { j, .. } => Some(*j),
            _ => None,
        }
    }
}

impl std::fmt::Display for GenLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GenLabel::Drift => write!(f, "A"),
            GenLabel::Diagonal { j } => write!(f, "E0(B{})", j + 1),
            GenLabel::Combined { sigma, j } => write!(f, "E0(B{0})+wE[{1}](B{0})", j + 1, sigma),
            GenLabel::Activated { sigma, j, xi } => {
                write!(f, "wJ[{}{:+}i]E[{}](B{})", xi[0], xi[1], sigma, j + 1)
            }
            GenLabel::Custom(s) => write!(f, "{s}"),
        }
    }
}

/// Labeled generator matrix.
#[derive(Clone, Debug)]
pub struct Generator {
    pub label: GenLabel,
    pub matrix: CMat<f64>,
    /// Negative durations are realizable.
    pub reversible: bool,
}

/// Which family to assemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// `V_n^0`, unscaled.
    V0,
    /// `V_n` with `xi` in `{1, i}`, unscaled.
    V,
    /// `W_n`, scaled by `w delta_j`.
    W,
    /// `w V_n` with `xi` in `{1, i}`, scaled by `w delta_j`.
    WV,
}

/// `Xi_n` decisions for all gaps of the `n`-truncation and all controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XiTable {
    pub n: usize,
    pub witnesses: Vec<CompatibilityWitness>,
}

impl XiTable {
    pub fn build(model: &QuantumModel, n: usize, n_check: usize) -> Result<Self> {
        let sys = galerkin::truncate::<f64>(model, n)?;
        let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
        let mut witnesses = Vec::new();
        for &sigma in &gaps.gaps {
            for j in 0..model.p {
                witnesses.push(galerkin::xi_membership(model, n, sigma, j, n_check)?);
            }
        }
        Ok(XiTable { n, witnesses })
    }

    pub fn contains(&self, sigma: f64, j: usize) -> bool {
        self.witnesses
            .iter()
            .any(|w| w.j == j && (w.sigma - sigma).abs() <= 1e-9 * sigma.abs().max(1.0) && w.member)
    }

    pub fn caveats(&self) -> Vec<String> {
        self.witnesses
            .iter()
            .filter_map(|w| w.caveat.as_ref().map(|c| format!("(sigma={}, j={}): {c}", w.sigma, w.j + 1)))
            .collect()
    }
}

/// Matrix of a labeled generator at truncation `sys` (any `N >= n`), before scaling.
pub fn label_matrix(label: &GenLabel, sys: &TruncatedSystem<f64>, gaps: &GapSet) -> Result<CMat<f64>> {
    let act = |sigma: f64, j: usize| -> Result<CMat<f64>> {
        let id = gaps.find(sigma).ok_or_else(|| Error::InvalidArgument(format!("gap {sigma} absent at N = {}", sys.n)))?;
        galerkin::excite(&sys.b[j], id, gaps)
    };
    Ok(match label {
        GenLabel::Drift => sys.a_matrix(),
        GenLabel::Diagonal { j } => galerkin::excite(&sys.b[*j], 0, gaps)?,
        GenLabel::Combined { sigma, j } => {
            galerkin::excite(&sys.b[*j], 0, gaps)? + act(*sigma, *j)? * C64::new(crate::synth::VARPI, 0.0)
        }
        GenLabel::Activated { sigma, j, xi } => {
            galerkin::j_rotate_sys(&act(*sigma, *j)?, C64::new(xi[0], xi[1]), sys, gaps)?
        }
        GenLabel::Custom(s) => return Err(Error::InvalidArgument(format!("custom label {s} has no model matrix"))),
    })
}

/// Matrix of a labeled generator at truncation `sys` with the `W`-family scaling.
pub fn scaled_label_matrix(label: &GenLabel, model: &QuantumModel, sys: &TruncatedSystem<f64>, gaps: &GapSet) -> Result<CMat<f64>> {
    Ok(scaled(label, label_matrix(label, sys, gaps)?, model, Family::W))
}

fn scaled(label: &GenLabel, m: CMat<f64>, model: &QuantumModel, family: Family) -> CMat<f64> {
    let w = match (family, label) {
        (Family::W | Family::WV, GenLabel::Activated { j, .. }) => crate::synth::VARPI * model.bounds[*j].delta,
        (Family::W | Family::WV, GenLabel::Diagonal { j } | GenLabel::Combined { j, .. }) => model.bounds[*j].delta,
        _ => 1.0,
    };
    if w == 1.0 {
        m
    } else {
        m * C64::new(w, 0.0)
    }
}

/// Labels of a family, in canonical order and before deduplication.
pub fn family_labels(model: &QuantumModel, xi: &XiTable, gaps_n: &GapSet, family: Family) -> Vec<GenLabel> {
    let mut out = Vec::new();
    let nonzero: Vec<f64> = gaps_n.gaps.iter().copied().filter(|&s| s > 0.0).collect();
    let one = [1.0, 0.0];
    let i = [0.0, 1.0];
    match family {
        Family::V0 | Family::W => {
            out.push(GenLabel::Drift);
            for j in 0..model.p {
                let sym = model.bounds[j].is_symmetric();
                for &s in &nonzero {
                    if xi.contains(s, j) && sym {
                        let sigma = s;
                        out.push(GenLabel::Activated { sigma, j, xi: one });
                    }
                }
            }
            for j in 0..model.p {
                if xi.contains(0.0, j) {
                    out.push(GenLabel::Diagonal { j });
                    for &s in &nonzero {
                        if xi.contains(s, j) {
                            let sigma = s;
                            if family == Family::W {
                                out.push(GenLabel::Combined { sigma, j });
                            } else {
                                out.push(GenLabel::Activated { sigma, j, xi: one });
                            }
                        }
                    }
                }
            }
        }
        Family::V | Family::WV => {
            for j in 0..model.p {
                for &s in &nonzero {
                    if xi.contains(s, j) {
                        out.push(GenLabel::Activated { sigma: s, j, xi: one });
                        out.push(GenLabel::Activated { sigma: s, j, xi: i });
                    }
                }
            }
        }
    }
    out
}

/// Assembles a generator family at truncation `big_n >= n`, dropping zero and duplicate matrices.
pub fn assemble(model: &QuantumModel, n: usize, big_n: usize, family: Family, xi: &XiTable) -> Result<Vec<Generator>> {
    if big_n < n {
        return Err(Error::InvalidArgument(format!("N = {big_n} smaller than n = {n}")));
    }
    let sys_n = galerkin::truncate::<f64>(model, n)?;
    let gaps_n = galerkin::spectral_gaps(&sys_n, galerkin::default_gap_tol(&sys_n.a_diag));
    let sys = galerkin::truncate::<f64>(model, big_n)?;
    let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
    let labels = family_labels(model, xi, &gaps_n, family);
    let mut out: Vec<Generator> = Vec::new();
    for label in labels {
        let m = scaled(&label, label_matrix(&label, &sys, &gaps)?, model, family);
        let small = galerkin::crop(&m, n)?;
        if linalg::max_abs(&small) == 0.0 {
            continue;
        }
        if out.iter().any(|g| linalg::max_abs(&(galerkin::crop(&g.matrix, n).unwrap() - &small)) == 0.0) {
            continue;
        }
        let reversible = match &label {
            GenLabel::Drift => model.drift_period().is_some(),
            GenLabel::Activated { .. } => true,
            GenLabel::Diagonal { j } | GenLabel::Combined { j, .. } => model.bounds[*j].is_symmetric(),
            GenLabel::Custom(_) => false,
        };
        out.push(Generator { label, matrix: m, reversible });
    }
    Ok(out)
}

/// `V_n^0`.
pub fn assemble_v0(model: &QuantumModel, n: usize, xi: &XiTable) -> Result<Vec<Generator>> {
    assemble(model, n, n, Family::V0, xi)
}

/// `V_n` sampled at `xi` in `{1, i}`.
pub fn assemble_v(model: &QuantumModel, n: usize, xi: &XiTable) -> Result<Vec<Generator>> {
    assemble(model, n, n, Family::V, xi)
}

/// `W_n`.
pub fn assemble_w(model: &QuantumModel, n: usize, xi: &XiTable) -> Result<Vec<Generator>> {
    assemble(model, n, n, Family::W, xi)
}

/// `W_{n,N}`.
pub fn assemble_w_nn(model: &QuantumModel, n: usize, big_n: usize, xi: &XiTable) -> Result<Vec<Generator>> {
    assemble(model, n, big_n, Family::W, xi)
}

/// Adjacent-level activations `E_{|lambda_k - lambda_{k-1}|}(B_j^(n))`, the well's generating
/// family, optionally together with their `J_i` rotations.
pub fn adjacent_gap_activations(model: &QuantumModel, n: usize, j: usize, rotated: bool) -> Result<Vec<CMat<f64>>> {
    let sys = galerkin::truncate::<f64>(model, n)?;
    let gaps = galerkin::spectral_gaps(&sys, galerkin::default_gap_tol(&sys.a_diag));
    let mut out = Vec::new();
    for k in 1..n {
        let id = gaps.id(k - 1, k);
        let e = galerkin::excite(&sys.b[j], id, &gaps)?;
        if rotated {
            out.push(galerkin::j_rotate_sys(&e, C64::new(0.0, 1.0), &sys, &gaps)?);
        }
        out.push(e);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionKind {
    #[serde(rename = "LGCC")]
    Lgcc,
    #[serde(rename = "LGSC")]
    Lgsc,
}

/// Tolerances of a condition check.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CheckOptions {
    pub rank_tol: f64,
    pub max_depth: Option<usize>,
    /// Largest truncation scanned for models without structural guarantees.
    pub n_check: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { rank_tol: 1e-8, max_depth: None, n_check: None }
    }
}

/// Serializable summary of a closure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClosureSummary {
    pub dim: usize,
    pub depth: usize,
    pub saturated: bool,
    pub certificate: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kind: ConditionKind,
    pub n: usize,
    pub holds: bool,
    pub target_dim: usize,
    pub closure: ClosureSummary,
    pub generators_used: Vec<String>,
    pub xi: XiTable,
    pub caveats: Vec<String>,
}

/// Certifies LGCC (`Lie V_n^0` contains su(n)) or LGSC (`Lie V_n = su(n)`) at a fixed `n`.
pub fn check_condition(model: &QuantumModel, n: usize, kind: ConditionKind, opts: &CheckOptions) -> Result<ConditionReport> {
    if n < 2 {
        return Err(Error::InvalidArgument("n must be at least 2".into()));
    }
    let n_check = opts.n_check.unwrap_or(4 * n);
    let xi = XiTable::build(model, n, n_check)?;
    let gens = match kind {
        ConditionKind::Lgcc => assemble_v0(model, n, &xi)?,
        ConditionKind::Lgsc => assemble_v(model, n, &xi)?,
    };
    let mut caveats = xi.caveats();
    caveats.push("condition certified at this n only; the quantifier over all n0 is not decided".into());
    let target = n * n - 1;
    let (closure, holds) = if gens.is_empty() {
        (
            ClosureSummary { dim: 0, depth: 0, saturated: true, certificate: vec![] },
            false,
        )
    } else {
        let mats: Vec<CMat<f64>> = gens.iter().map(|g| g.matrix.clone()).collect();
        let res = lie_closure(&mats, opts.rank_tol, opts.max_depth.unwrap_or(2 * n))?;
        let holds = match kind {
            ConditionKind::Lgcc => res.contains_su(n, 1e-6_f64.max(opts.rank_tol.sqrt())),
            ConditionKind::Lgsc => res.dim == target,
        };
        let names: Vec<String> = gens.iter().map(|g| g.label.to_string()).collect();
        let words = res
            .words()
            .into_iter()
            .map(|w| {
                let mut s = w;
                for (i, name) in names.iter().enumerate().rev() {
                    s = s.replace(&format!("g{i}"), &format!("{{{name}}}"));
                }
                s
            })
            .collect();
        (
            ClosureSummary { dim: res.dim, depth: res.depth, saturated: res.saturated, certificate: words },
            holds,
        )
    };
    Ok(ConditionReport {
        kind,
        n,
        holds,
        target_dim: target,
        closure,
        generators_used: gens.iter().map(|g| g.label.to_string()).collect(),
        xi,
        caveats,
    })
}
