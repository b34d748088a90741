//! Quantum models: drift spectrum, control couplings and structural metadata.
//!
//! Built-in models are the infinite potential well with a dipole control and
//! the rigid rotor with three orthogonal dipole controls. Custom models are
//! tabulated from JSON files.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::C64;

/// Shape of an admissible control set `U_j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundKind {
    /// `U_j = [0, delta]`.
    HalfInterval,
    /// `U_j = [-delta, delta]`.
    SymmetricInterval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBound {
    pub kind: BoundKind,
    pub delta: f64,
}

impl ControlBound {
    pub fn symmetric(delta: f64) -> Self {
        ControlBound { kind: BoundKind::SymmetricInterval, delta }
    }

    pub fn half(delta: f64) -> Self {
        ControlBound { kind: BoundKind::HalfInterval, delta }
    }

    pub fn is_symmetric(&self) -> bool {
        self.kind == BoundKind::SymmetricInterval
    }

    pub fn contains(&self, u: f64) -> bool {
        let tol = 1e-12 * self.delta;
        match self.kind {
            BoundKind::HalfInterval => u >= -tol && u <= self.delta + tol,
            BoundKind::SymmetricInterval => u.abs() <= self.delta + tol,
        }
    }
}

/// Declared structural facts about the couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guarantees {
    /// Coupling vanishes when the index distance exceeds this value.
    pub bandwidth: Option<usize>,
    /// Coupling vanishes unless the 1-based level indices have odd sum.
    pub odd_sum_parity: bool,
    /// Coupling vanishes unless the angular momenta differ by exactly one.
    pub adjacent_levels: bool,
    pub s_weakly_coupled: bool,
}

/// Tabulated couplings of a custom model.
#[derive(Clone, Debug)]
pub struct Table {
    pub eigenvalues: Vec<f64>,
    pub couplings: Vec<CMat<f64>>,
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    Well,
    /// Rigid rotor whose first `4 l + 4` basis vectors span the levels `anchor`, `anchor + 1`.
    Rotor { anchor: usize },
    Table(Table),
}

/// Bilinear Schrodinger system `dpsi/dt = (A + sum_j u_j B_j) psi` in the drift eigenbasis.
#[derive(Clone, Debug)]
pub struct QuantumModel {
    pub name: String,
    pub p: usize,
    pub bounds: Vec<ControlBound>,
    pub guarantees: Guarantees,
    pub kind: ModelKind,
}

/// Angular momentum label `Y_l^m` of a rotor basis vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RotorIndex {
    pub l: usize,
    pub m: i64,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("control bound delta must be positive, got {delta}")));
    }
    Ok(())
}

/// Infinite potential well on `(-1/2, 1/2)` with control potential `B = i x`.
pub fn well_model(delta: f64) -> Result<QuantumModel> {
    check_delta(delta)?;
    Ok(QuantumModel {
        name: "well".into(),
        p: 1,
        bounds: vec![ControlBound::symmetric(delta)],
        guarantees: Guarantees {
            bandwidth: None,
            odd_sum_parity: true,
            adjacent_levels: false,
            s_weakly_coupled: true,
        },
        kind: ModelKind::Well,
    })
}

/// Rigid rotor with anchor level 1, so the first eight basis vectors span levels 1 and 2.
pub fn rotor_model(delta: f64) -> Result<QuantumModel> {
    rotor_model_anchored(delta, 1)
}

/// Rigid rotor whose leading `4 anchor + 4` basis vectors span the levels `anchor`, `anchor + 1`.
pub fn rotor_model_anchored(delta: f64, anchor: usize) -> Result<QuantumModel> {
    check_delta(delta)?;
    Ok(QuantumModel {
        name: "rotor".into(),
        p: 3,
        bounds: vec![ControlBound::symmetric(delta); 3],
        guarantees: Guarantees {
            bandwidth: None,
            odd_sum_parity: false,
            adjacent_levels: true,
            s_weakly_coupled: true,
        },
        kind: ModelKind::Rotor { anchor },
    })
}

/// Closed-form `int_{-1/2}^{1/2} x sin(c pi x) dx` for odd `c`.
fn well_moment(c: i64) -> f64 {
    let s = match c.rem_euclid(4) {
        1 => 1.0,
        3 => -1.0,
        _ => 0.0,
    };
    let c = c as f64;
    2.0 * s / (c * c * PI * PI)
}

/// `<phi_l, i x phi_k>` for 1-based well levels.
pub fn well_coupling(l: usize, k: usize) -> C64 {
    if (l + k) % 2 == 0 {
        return C64::new(0.0, 0.0);
    }
    let (e, o) = if l % 2 == 0 { (l as i64, k as i64) } else { (k as i64, l as i64) };
    C64::new(0.0, well_moment(e + o) + well_moment(e - o))
}

/// `q_{l,m}` of the rotor couplings in the x and y directions.
pub fn rotor_q(l: usize, m: i64) -> f64 {
    let l = l as f64;
    let m = m as f64;
    let num = (l - m + 2.0) * (l - m + 1.0);
    if num <= 0.0 {
        return 0.0;
    }
    (num / (4.0 * (2.0 * l + 1.0) * (2.0 * l + 3.0))).sqrt()
}

/// `p_{l,m}` of the rotor coupling in the z direction.
pub fn rotor_p(l: usize, m: i64) -> f64 {
    let lf = l as f64;
    let num = (lf + 1.0).powi(2) - (m as f64).powi(2);
    if num <= 0.0 {
        return 0.0;
    }
    -(num / ((2.0 * lf + 1.0) * (2.0 * lf + 3.0))).sqrt()
}

fn rotor_levels(anchor: usize) -> impl Iterator<Item = usize> {
    [anchor, anchor + 1]
        .into_iter()
        .chain(0..anchor)
        .chain(anchor + 2..)
}

/// Basis label at linear position `idx` (0-based) under the anchored ordering.
pub fn rotor_state(anchor: usize, idx: usize) -> RotorIndex {
    let mut rest = idx;
    for l in rotor_levels(anchor) {
        let size = 2 * l + 1;
        if rest < size {
            return RotorIndex { l, m: rest as i64 - l as i64 };
        }
        rest -= size;
    }
    unreachable!("level sequence is infinite")
}

/// Linear position (0-based) of `Y_l^m` under the anchored ordering.
pub fn rotor_linear(anchor: usize, s: RotorIndex) -> usize {
    let mut off = 0;
    for l in rotor_levels(anchor) {
        if l == s.l {
            return off + (s.m + l as i64) as usize;
        }
        off += 2 * l + 1;
    }
    unreachable!("level sequence is infinite")
}

/// Coupling `<(r,m), B_j (r+1,m')>` between adjacent levels, upper block.
fn rotor_upper(j: usize, r: usize, m: i64, mp: i64) -> C64 {
    match j {
        0 if mp == m - 1 => C64::new(0.0, -rotor_q(r, m)),
        0 if mp == m + 1 => C64::new(0.0, rotor_q(r, -m)),
        1 if mp == m - 1 => C64::new(rotor_q(r, m), 0.0),
        1 if mp == m + 1 => C64::new(rotor_q(r, -m), 0.0),
        2 if mp == m => C64::new(0.0, rotor_p(r, m)),
        _ => C64::new(0.0, 0.0),
    }
}

/// Coupling between two rotor basis labels.
pub fn rotor_coupling(j: usize, a: RotorIndex, b: RotorIndex) -> C64 {
    if b.l == a.l + 1 {
        rotor_upper(j, a.l, a.m, b.m)
    } else if a.l == b.l + 1 {
        -rotor_upper(j, b.l, b.m, a.m).conj()
    } else {
        C64::new(0.0, 0.0)
    }
}

impl QuantumModel {
    /// Largest usable truncation, `None` for analytic models.
    pub fn n_max(&self) -> Option<usize> {
        match &self.kind {
            ModelKind::Table(t) => Some(t.eigenvalues.len()),
            _ => None,
        }
    }

    /// Drift eigenvalue `lambda_k` (0-based `k`); the drift acts as `i lambda_k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        match &self.kind {
            ModelKind::Well => {
                let k = (k + 1) as f64;
                -k * k * PI * PI / 2.0
            }
            ModelKind::Rotor { anchor } => {
                let l = rotor_state(*anchor, k).l as f64;
                -l * (l + 1.0)
            }
            ModelKind::Table(t) => t.eigenvalues[k],
        }
    }

    pub fn eigenvalues(&self, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.eigenvalue(k)).collect()
    }

    /// Exact integer eigenvalue keys `lambda_k = key_k * scale`, when known.
    pub fn level_keys(&self, n: usize) -> Option<(Vec<i64>, f64)> {
        match &self.kind {
            ModelKind::Well => Some((
                (1..=n as i64).map(|k| -k * k).collect(),
                PI * PI / 2.0,
            )),
            ModelKind::Rotor { anchor } => Some((
                (0..n)
                    .map(|k| {
                        let l = rotor_state(*anchor, k).l as i64;
                        -l * (l + 1)
                    })
                    .collect(),
                1.0,
            )),
            ModelKind::Table(_) => None,
        }
    }

    /// `b^{(j)}_{lk} = <phi_l, B_j phi_k>` for 0-based `j, l, k`.
    pub fn coupling(&self, j: usize, l: usize, k: usize) -> C64 {
        match &self.kind {
            ModelKind::Well => well_coupling(l + 1, k + 1),
            ModelKind::Rotor { anchor } => {
                rotor_coupling(j, rotor_state(*anchor, l), rotor_state(*anchor, k))
            }
            ModelKind::Table(t) => t.couplings[j][(l, k)],
        }
    }

    /// Period of the free drift `exp(tA)`, when it is periodic.
    pub fn drift_period(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::Well => Some(4.0 / PI),
            ModelKind::Rotor { .. } => Some(2.0 * PI),
            ModelKind::Table(_) => None,
        }
    }

    pub fn rotor_anchor(&self) -> Option<usize> {
        match &self.kind {
            ModelKind::Rotor { anchor } => Some(*anchor),
            _ => None,
        }
    }

    /// All pairs `(l, k)` with `l < n <= k`, `|lambda_l - lambda_k| = sigma_key * scale`
    /// and nonzero coupling of control `j`. `None` when the model cannot enumerate them.
    pub fn crossing_pairs(&self, n: usize, sigma_key: i64, j: usize) -> Option<Vec<(usize, usize)>> {
        match &self.kind {
            ModelKind::Well => {
                let mut out = Vec::new();
                for l in 1..=n as i64 {
                    let k2 = sigma_key + l * l;
                    let k = (k2 as f64).sqrt().round() as i64;
                    if k * k == k2 && k > n as i64 && (l + k) % 2 == 1 {
                        out.push((l as usize - 1, k as usize - 1));
                    }
                }
                Some(out)
            }
            ModelKind::Rotor { anchor } => {
                let mut out = Vec::new();
                for a in 0..n {
                    let s = rotor_state(*anchor, a);
                    let ka = -(s.l as i64) * (s.l as i64 + 1);
                    let mut partners = Vec::new();
                    for lp in [s.l.wrapping_sub(1), s.l + 1] {
                        if lp == usize::MAX {
                            continue;
                        }
                        for mp in [s.m - 1, s.m, s.m + 1] {
                            if mp.unsigned_abs() as usize <= lp {
                                partners.push(RotorIndex { l: lp, m: mp });
                            }
                        }
                    }
                    for t in partners {
                        let b = rotor_linear(*anchor, t);
                        let kb = -(t.l as i64) * (t.l as i64 + 1);
                        if b >= n && (ka - kb).abs() == sigma_key && rotor_coupling(j, s, t).norm() > 0.0 {
                            out.push((a, b));
                        }
                    }
                }
                Some(out)
            }
            ModelKind::Table(_) => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileBound {
    pub kind: String,
    pub delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileGuarantees {
    pub bandwidth: Option<usize>,
    pub s_weakly_coupled: bool,
}

/// On-disk custom model. Level indices are 1-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub p: usize,
    pub n_max: usize,
    pub eigenvalues: Vec<f64>,
    pub bounds: Vec<FileBound>,
    pub couplings: Vec<Vec<[f64; 4]>>,
    pub guarantees: FileGuarantees,
}

fn parse_index(x: f64, n_max: usize, j: usize) -> Result<usize> {
    if x.fract() != 0.0 || x < 1.0 || x > n_max as f64 {
        return Err(Error::Parse(format!(
            "control {}: level index {x} outside 1..={n_max}",
            j + 1
        )));
    }
    Ok(x as usize - 1)
}

impl ModelFile {
    /// Validates the file contents and builds the model.
    pub fn into_model(self) -> Result<QuantumModel> {
        let n = self.n_max;
        if n < 2 {
            return Err(Error::Parse(format!("n_max must be at least 2, got {n}")));
        }
        if self.eigenvalues.len() != n {
            return Err(Error::Parse(format!(
                "expected {n} eigenvalues, found {}",
                self.eigenvalues.len()
            )));
        }
        if let Some(x) = self.eigenvalues.iter().find(|x| !x.is_finite()) {
            return Err(Error::Parse(format!("non-finite eigenvalue {x}")));
        }
        if self.bounds.len() != self.p || self.couplings.len() != self.p || self.p == 0 {
            return Err(Error::Parse(format!(
                "p = {} but {} bounds and {} coupling lists",
                self.p,
                self.bounds.len(),
                self.couplings.len()
            )));
        }
        let mut bounds = Vec::with_capacity(self.p);
        for b in &self.bounds {
            check_delta(b.delta).map_err(|e| Error::Parse(e.to_string()))?;
            let kind = match b.kind.as_str() {
                "half" => BoundKind::HalfInterval,
                "symmetric" => BoundKind::SymmetricInterval,
                other => return Err(Error::Parse(format!("unknown bound kind {other:?}"))),
            };
            bounds.push(ControlBound { kind, delta: b.delta });
        }
        let mut mats = Vec::with_capacity(self.p);
        for (j, list) in self.couplings.iter().enumerate() {
            let mut m = CMat::<f64>::zeros(n, n);
            let mut set = vec![false; n * n];
            for t in list {
                let l = parse_index(t[0], n, j)?;
                let k = parse_index(t[1], n, j)?;
                if set[l * n + k] {
                    return Err(Error::Parse(format!(
                        "control {}: duplicate entry ({}, {})",
                        j + 1,
                        l + 1,
                        k + 1
                    )));
                }
                let z = C64::new(t[2], t[3]);
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::Parse(format!("control {}: non-finite entry", j + 1)));
                }
                m[(l, k)] = z;
                set[l * n + k] = true;
            }
            for l in 0..n {
                for k in l..n {
                    let (a, b) = (set[l * n + k], set[k * n + l]);
                    if a && !b {
                        m[(k, l)] = -m[(l, k)].conj();
                    } else if b && !a {
                        m[(l, k)] = -m[(k, l)].conj();
                    }
                    let x = m[(l, k)];
                    let y = m[(k, l)];
                    let scale = x.norm().max(y.norm()).max(1.0);
                    if (x + y.conj()).norm() > 1e-12 * scale {
                        return Err(Error::SkewViolation {
                            j: j + 1,
                            l: l + 1,
                            k: k + 1,
                            detail: format!("b_lk = {x}, b_kl = {y}"),
                        });
                    }
                    if let Some(w) = self.guarantees.bandwidth {
                        if k - l > w && x.norm() > 0.0 {
                            return Err(Error::Parse(format!(
                                "control {}: entry ({}, {}) exceeds declared bandwidth {w}",
                                j + 1,
                                l + 1,
                                k + 1
                            )));
                        }
                    }
                }
            }
            mats.push(m);
        }
        Ok(QuantumModel {
            name: self.name,
            p: self.p,
            bounds,
            guarantees: Guarantees {
                bandwidth: self.guarantees.bandwidth,
                odd_sum_parity: false,
                adjacent_levels: false,
                s_weakly_coupled: self.guarantees.s_weakly_coupled,
            },
            kind: ModelKind::Table(Table { eigenvalues: self.eigenvalues, couplings: mats }),
        })
    }
}

/// Parses a custom model from JSON text.
pub fn parse_model(text: &str) -> Result<QuantumModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_model()
}

/// Loads a custom model from a JSON file.
pub fn load_model(path: impl AsRef<Path>) -> Result<QuantumModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

/// Tabulates any model up to `n_max` in the file format (upper triangle only).
pub fn export_model(model: &QuantumModel, n_max: usize) -> ModelFile {
    let couplings = (0..model.p)
        .map(|j| {
            let mut list = Vec::new();
            for l in 0..n_max {
                for k in l..n_max {
                    let z = model.coupling(j, l, k);
                    if z.norm() > 0.0 {
                        list.push([(l + 1) as f64, (k + 1) as f64, z.re, z.im]);
                    }
                }
            }
            list
        })
        .collect();
    ModelFile {
        name: model.name.clone(),
        p: model.p,
        n_max,
        eigenvalues: model.eigenvalues(n_max),
        bounds: model
            .bounds
            .iter()
            .map(|b| FileBound {
                kind: if b.is_symmetric() { "symmetric" } else { "half" }.into(),
                delta: b.delta,
            })
            .collect(),
        couplings,
        guarantees: FileGuarantees {
            bandwidth: model.guarantees.bandwidth,
            s_weakly_coupled: model.guarantees.s_weakly_coupled,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn phi(k: usize, x: f64) -> f64 {
        let s = 2f64.sqrt();
        if k % 2 == 1 {
            s * (k as f64 * PI * x).cos()
        } else {
            s * (k as f64 * PI * x).sin()
        }
    }

    #[test]
    fn well_coupling_matches_quadrature() {
        for l in 1..=8 {
            for k in 1..=8 {
                let q = simpson(|x| phi(l, x) * x * phi(k, x), -0.5, 0.5, 4000);
                let b = well_coupling(l, k);
                assert!(b.re == 0.0);
                assert!((b.im - q).abs() < 1e-10, "({l},{k}): {} vs {q}", b.im);
            }
        }
    }

    #[test]
    fn well_b12_value() {
        let b = well_coupling(1, 2).norm();
        assert!((b - 0.18012654869748937).abs() < 1e-15);
        assert!((b - 16.0 / (9.0 * PI * PI)).abs() < 1e-15);
        assert_eq!(well_coupling(1, 3).norm(), 0.0);
    }

    #[test]
    fn well_eigenvalue_2() {
        let m = well_model(1.0).unwrap();
        assert!((m.eigenvalue(1) + 19.739208802178716).abs() < 1e-12);
    }

    #[test]
    fn rotor_closed_forms() {
        assert!((rotor_q(1, 0) - 0.31622776601683794).abs() < 1e-15);
        assert!((rotor_p(1, 0) + 0.5163977794943222).abs() < 1e-15);
    }

    #[test]
    fn rotor_ordering_round_trip() {
        for anchor in 0..4 {
            for idx in 0..80 {
                let s = rotor_state(anchor, idx);
                assert!(s.m.unsigned_abs() as usize <= s.l);
                assert_eq!(rotor_linear(anchor, s), idx);
            }
        }
        let block: Vec<_> = (0..8).map(|i| rotor_state(1, i)).collect();
        assert_eq!(block[0], RotorIndex { l: 1, m: -1 });
        assert_eq!(block[3], RotorIndex { l: 2, m: -2 });
        assert_eq!(rotor_state(1, 8), RotorIndex { l: 0, m: 0 });
        assert_eq!(rotor_state(1, 9), RotorIndex { l: 3, m: -3 });
    }

    #[test]
    fn rotor_spectrum_and_gap() {
        let m = rotor_model(1.0).unwrap();
        let e = m.eigenvalues(8);
        assert_eq!(e, vec![-2.0, -2.0, -2.0, -6.0, -6.0, -6.0, -6.0, -6.0]);
        let a = rotor_model_anchored(1.0, 2).unwrap();
        assert_eq!(a.eigenvalue(0), -6.0);
        assert_eq!(a.eigenvalue(5), -12.0);
    }

    /// Condon-Shortley spherical harmonic at (theta, phi).
    fn ylm(l: usize, m: i64, theta: f64, phi: f64) -> C64 {
        let ma = m.unsigned_abs() as usize;
        let x = theta.cos();
        let sx = theta.sin();
        let mut pmm = 1.0;
        for i in 0..ma {
            pmm *= -((2 * i + 1) as f64) * sx;
        }
        let plm = if l == ma {
            pmm
        } else {
            let mut a = pmm;
            let mut b = x * (2 * ma + 1) as f64 * pmm;
            for ll in ma + 2..=l {
                let c = (x * (2 * ll - 1) as f64 * b - (ll + ma - 1) as f64 * a) / (ll - ma) as f64;
                a = b;
                b = c;
            }
            b
        };
        let ratio: f64 = ((l - ma + 1)..=(l + ma)).map(|k| 1.0 / k as f64).product();
        let norm = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
        let y = C64::from_polar(norm * plm, ma as f64 * phi);
        if m >= 0 {
            y
        } else if ma % 2 == 0 {
            y.conj()
        } else {
            -y.conj()
        }
    }

    #[test]
    fn rotor_couplings_match_sphere_quadrature() {
        // B_1, B_2, B_3 multiply by -i sin(t) cos(p), -i sin(t) sin(p), -i cos(t).
        let fields = [
            |t: f64, p: f64| t.sin() * p.cos(),
            |t: f64, p: f64| t.sin() * p.sin(),
            |t: f64, _p: f64| t.cos(),
        ];
        let nt = 400;
        let np = 16;
        let m = rotor_model(1.0).unwrap();
        let dim = 9;
        for (j, f) in fields.iter().enumerate() {
            for a in 0..dim {
                for b in 0..dim {
                    let (sa, sb) = (rotor_state(1, a), rotor_state(1, b));
                    let mut acc = C64::new(0.0, 0.0);
                    let ht = PI / nt as f64;
                    for it in 0..=nt {
                        let t = it as f64 * ht;
                        let w = if it == 0 || it == nt { 1.0 } else if it % 2 == 1 { 4.0 } else { 2.0 };
                        let mut ring = C64::new(0.0, 0.0);
                        for ip in 0..np {
                            let p = 2.0 * PI * ip as f64 / np as f64;
                            ring += ylm(sa.l, sa.m, t, p).conj() * ylm(sb.l, sb.m, t, p) * f(t, p);
                        }
                        acc += ring * (w * t.sin() * ht / 3.0 * 2.0 * PI / np as f64);
                    }
                    // The tabulated B_2 is the negative of the Condon-Shortley matrix element.
                    let sign = if j == 1 { -1.0 } else { 1.0 };
                    let q = acc * C64::new(0.0, -sign);
                    let c = m.coupling(j, a, b);
                    assert!((c - q).norm() < 1e-8, "B{} {sa:?} {sb:?}: {c} vs {q}", j + 1);
                }
            }
        }
    }

    #[test]
    fn rotor_intra_level_vanishes() {
        let m = rotor_model(1.0).unwrap();
        let y10 = rotor_linear(1, RotorIndex { l: 1, m: 0 });
        let y11 = rotor_linear(1, RotorIndex { l: 1, m: 1 });
        for j in 0..3 {
            assert_eq!(m.coupling(j, y10, y11).norm(), 0.0);
        }
    }

    #[test]
    fn rejects_nonpositive_delta() {
        assert!(well_model(0.0).is_err());
        assert!(rotor_model(-1.0).is_err());
    }

    #[test]
    fn minimal_file_model() {
        let ok = r#"{"name":"toy","p":1,"n_max":2,"eigenvalues":[0,-1],
            "bounds":[{"kind":"symmetric","delta":1}],
            "couplings":[[[1,2,0,1]]],
            "guarantees":{"bandwidth":null,"s_weakly_coupled":false}}"#;
        let m = parse_model(ok).unwrap();
        assert_eq!(m.p, 1);
        assert_eq!(m.coupling(0, 1, 0), C64::new(0.0, 1.0));
        let bad = ok.replace("[[1,2,0,1]]", "[[1,2,0,1],[2,1,0,-1]]");
        match parse_model(&bad) {
            Err(Error::SkewViolation { j, l, k, .. }) => assert_eq!((j, l, k), (1, 1, 2)),
            other => panic!("expected skew violation, got {other:?}"),
        }
        let small = ok.replace("\"n_max\":2", "\"n_max\":1").replace("[0,-1]", "[0]");
        assert!(parse_model(&small).is_err());
    }

    #[test]
    fn bandwidth_is_enforced() {
        let text = r#"{"name":"toy","p":1,"n_max":3,"eigenvalues":[0,-1,-3],
            "bounds":[{"kind":"half","delta":1}],
            "couplings":[[[1,3,1,0]]],
            "guarantees":{"bandwidth":1,"s_weakly_coupled":false}}"#;
        assert!(parse_model(text).is_err());
    }
}
