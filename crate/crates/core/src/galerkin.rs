//! Galerkin truncations, spectral gaps, gap activation, the rotation `J_xi`,
//! the compatibility set and cropping.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::models::QuantumModel;
use crate::scalar::{cabs, cast_c, Real};

/// `A^(n) = i diag(a_diag)` and dense skew-Hermitian `B_j^(n)`.
#[derive(Clone, Debug)]
pub struct TruncatedSystem<T: Real> {
    pub n: usize,
    pub a_diag: Vec<T>,
    /// Exact eigenvalue keys with `lambda_k = key_k * scale`, for built-in models.
    pub keys: Option<(Vec<i64>, f64)>,
    pub b: Vec<CMat<T>>,
}

impl<T: Real> TruncatedSystem<T> {
    pub fn p(&self) -> usize {
        self.b.len()
    }

    /// Drift matrix `A^(n)`.
    pub fn a_matrix(&self) -> CMat<T> {
        let mut a = linalg::zeros::<T>(self.n);
        for (k, &x) in self.a_diag.iter().enumerate() {
            a[(k, k)] = Complex::new(T::zero(), x);
        }
        a
    }

    fn lambda_cmp(&self, l: usize, k: usize) -> std::cmp::Ordering {
        match &self.keys {
            Some((keys, _)) => keys[l].cmp(&keys[k]),
            None => self.a_diag[l].partial_cmp(&self.a_diag[k]).unwrap_or(std::cmp::Ordering::Equal),
        }
    }
}

/// Builds the `n`-level Galerkin truncation of `model`.
pub fn truncate<T: Real>(model: &QuantumModel, n: usize) -> Result<TruncatedSystem<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("truncation order must be at least 2, got {n}")));
    }
    if let Some(n_max) = model.n_max() {
        if n > n_max {
            return Err(Error::OutOfRange { n, n_max });
        }
    }
    let a_diag = model.eigenvalues(n).into_iter().map(T::of).collect();
    let mut b = Vec::with_capacity(model.p);
    for j in 0..model.p {
        let m = CMat::<T>::from_fn(n, n, |l, k| cast_c(model.coupling(j, l, k)));
        let d = linalg::skew_defect(&m);
        let scale = linalg::max_abs(&m).max(T::one());
        if d > T::of(1e-12) * scale + T::EPS * scale {
            return Err(Error::NotSkew(j, d.f64()));
        }
        b.push(m);
    }
    Ok(TruncatedSystem { n, a_diag, keys: model.level_keys(n), b })
}

/// Partition of the index pairs by spectral gap `|lambda_l - lambda_k|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapSet {
    pub n: usize,
    /// Representative value of each cluster, ascending; `gaps[0] = 0`.
    pub gaps: Vec<f64>,
    /// Exact integer gaps when the eigenvalues carry keys.
    pub keys: Option<Vec<i64>>,
    /// Spread of the pair gaps inside each cluster.
    pub diameters: Vec<f64>,
    pub tol: f64,
    ids: Vec<usize>,
}

impl GapSet {
    /// Cluster id of the pair `(l, k)`.
    pub fn id(&self, l: usize, k: usize) -> usize {
        self.ids[l * self.n + k]
    }

    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    /// Cluster containing the value `sigma`, if any.
    pub fn find(&self, sigma: f64) -> Option<usize> {
        let slack = self.tol.max(1e-12 * sigma.abs().max(1.0));
        self.gaps
            .iter()
            .enumerate()
            .filter(|(i, g)| (*g - sigma).abs() <= slack + self.diameters[*i])
            .min_by(|a, b| (a.1 - sigma).abs().total_cmp(&(b.1 - sigma).abs()))
            .map(|(i, _)| i)
    }

    /// Exact key of cluster `id` when available.
    pub fn key(&self, id: usize) -> Option<i64> {
        self.keys.as_ref().map(|k| k[id])
    }
}

/// Default clustering tolerance `1e-9 max |lambda|`.
pub fn default_gap_tol<T: Real>(a_diag: &[T]) -> f64 {
    1e-9 * a_diag.iter().fold(0.0f64, |m, x| m.max(x.f64().abs()))
}

/// Spectral gap set of a truncation.
///
/// Keyed systems are partitioned exactly. Otherwise pair gaps are grouped by
/// single linkage: consecutive sorted gaps closer than `tol` share a cluster.
pub fn spectral_gaps<T: Real>(sys: &TruncatedSystem<T>, tol: f64) -> GapSet {
    let n = sys.n;
    let mut ids = vec![0usize; n * n];
    if let Some((keys, scale)) = &sys.keys {
        let mut gk: Vec<i64> = Vec::new();
        for l in 0..n {
            for k in 0..n {
                gk.push((keys[l] - keys[k]).abs());
            }
        }
        let mut uniq = gk.clone();
        uniq.push(0);
        uniq.sort_unstable();
        uniq.dedup();
        for (p, g) in gk.iter().enumerate() {
            ids[p] = uniq.binary_search(g).expect("key present");
        }
        return GapSet {
            n,
            gaps: uniq.iter().map(|&g| g as f64 * scale).collect(),
            diameters: vec![0.0; uniq.len()],
            keys: Some(uniq),
            tol,
            ids,
        };
    }
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n * n);
    for l in 0..n {
        for k in 0..n {
            let g = if l == k { 0.0 } else { (sys.a_diag[l] - sys.a_diag[k]).f64().abs() };
            pairs.push((g, l * n + k));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut diameters = Vec::new();
    let mut start = 0;
    for i in 0..=pairs.len() {
        let split = i == pairs.len() || (i > start && pairs[i].0 - pairs[i - 1].0 > tol);
        if split {
            let members = &pairs[start..i];
            let id = gaps.len();
            let lo = members[0].0;
            let hi = members[members.len() - 1].0;
            let mean = if lo == 0.0 { 0.0 } else { members.iter().map(|p| p.0).sum::<f64>() / members.len() as f64 };
            gaps.push(mean);
            diameters.push(hi - lo);
            for p in members {
                ids[p.1] = id;
            }
            start = i;
        }
    }
    GapSet { n, gaps, keys: None, diameters, tol, ids }
}

/// `E_sigma(M)`: keeps the entries whose index pair lies in gap cluster `sigma`.
pub fn excite<T: Real>(m: &CMat<T>, sigma: usize, gaps: &GapSet) -> Result<CMat<T>> {
    if sigma >= gaps.len() {
        return Err(Error::UnknownGap(sigma));
    }
    if m.nrows() != gaps.n || m.ncols() != gaps.n {
        return Err(Error::Dimension(format!("{:?} against gap set of order {}", m.shape(), gaps.n)));
    }
    Ok(CMat::<T>::from_fn(gaps.n, gaps.n, |l, k| {
        if gaps.id(l, k) == sigma {
            m[(l, k)]
        } else {
            Complex::new(T::zero(), T::zero())
        }
    }))
}

fn check_unit<T: Real>(xi: Complex<T>) -> Result<()> {
    if (cabs(xi).f64() - 1.0).abs() > 1e-12_f64.max(10.0 * T::EPS.f64()) {
        return Err(Error::InvalidArgument(format!("xi must have unit modulus, got {}", cabs(xi).f64())));
    }
    Ok(())
}

/// `J_xi(M)`: multiplies entry `(j,k)` by `xi` when `lambda_j < lambda_k`, by
/// `conj(xi)` when `lambda_j > lambda_k`, and zeroes it when they are equal.
pub fn j_rotate<T: Real>(m: &CMat<T>, xi: Complex<T>, a_diag: &[T]) -> Result<CMat<T>> {
    check_unit(xi)?;
    let n = a_diag.len();
    Ok(CMat::<T>::from_fn(n, n, |j, k| {
        if a_diag[j] < a_diag[k] {
            m[(j, k)] * xi
        } else if a_diag[j] > a_diag[k] {
            m[(j, k)] * xi.conj()
        } else {
            Complex::new(T::zero(), T::zero())
        }
    }))
}

/// `J_xi` with equality decided by the system's gap partition.
pub fn j_rotate_sys<T: Real>(m: &CMat<T>, xi: Complex<T>, sys: &TruncatedSystem<T>, gaps: &GapSet) -> Result<CMat<T>> {
    check_unit(xi)?;
    let n = sys.n;
    Ok(CMat::<T>::from_fn(n, n, |j, k| {
        if gaps.id(j, k) == 0 {
            return Complex::new(T::zero(), T::zero());
        }
        match sys.lambda_cmp(j, k) {
            std::cmp::Ordering::Less => m[(j, k)] * xi,
            std::cmp::Ordering::Greater => m[(j, k)] * xi.conj(),
            std::cmp::Ordering::Equal => Complex::new(T::zero(), T::zero()),
        }
    }))
}

/// Leading principal `n x n` block.
pub fn crop<T: Real>(m: &CMat<T>, n: usize) -> Result<CMat<T>> {
    if n > m.nrows() || n > m.ncols() {
        return Err(Error::Dimension(format!("cannot crop {:?} to {n}", m.shape())));
    }
    Ok(m.view((0, 0), (n, n)).into_owned())
}

/// Evidence for or against `(sigma, j)` belonging to the compatibility set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompatibilityWitness {
    pub sigma: f64,
    pub j: usize,
    /// No coupling of control `j` at gap `sigma` crosses the `n`-block (as far as known).
    pub member: bool,
    /// The decision follows from declared model structure for every `N > n`.
    pub guaranteed: bool,
    /// Largest truncation examined numerically.
    pub verified_to: usize,
    /// First offending pair `(l, k)`, `l < n <= k`, 0-based.
    pub offending: Option<(usize, usize)>,
    pub caveat: Option<String>,
}

/// Scans crossing pairs `l < n <= k < n_to` numerically.
///
/// The top-left block of `E_sigma(B_j^(N))` is independent of `N` by nesting,
/// so block-diagonality for all `N <= n_to` reduces to these entries.
fn scan_crossing(model: &QuantumModel, n: usize, sigma: f64, j: usize, n_to: usize, tol: f64) -> Option<(usize, usize)> {
    let lam = model.eigenvalues(n_to);
    let mut scale = 0.0f64;
    for l in 0..n {
        for k in 0..n {
            scale = scale.max(model.coupling(j, l, k).norm());
        }
    }
    let zero = 1e-14 * scale.max(1.0);
    for l in 0..n {
        for k in n..n_to {
            if ((lam[l] - lam[k]).abs() - sigma).abs() <= tol && model.coupling(j, l, k).norm() > zero {
                return Some((l, k));
            }
        }
    }
    None
}

/// Decides `(sigma, j)` in `Xi_n`.
///
/// Built-in models enumerate the crossing pairs exactly. Tabulated models with
/// a declared bandwidth `W` are decided exactly when `n + W <= n_max`;
/// otherwise couplings are scanned up to `n_check` and the witness carries a caveat.
pub fn xi_membership(model: &QuantumModel, n: usize, sigma: f64, j: usize, n_check: usize) -> Result<CompatibilityWitness> {
    if n < 2 {
        return Err(Error::InvalidArgument("n must be at least 2".into()));
    }
    if j >= model.p {
        return Err(Error::InvalidArgument(format!("control index {j} out of range")));
    }
    let lam = model.eigenvalues(n.max(n_check.min(model.n_max().unwrap_or(usize::MAX))));
    let tol = default_gap_tol(&lam).max(1e-12);
    if let Some((_, scale)) = model.level_keys(n) {
        let key = (sigma / scale).round() as i64;
        if ((key as f64) * scale - sigma).abs() > 1e-9 * sigma.abs().max(1.0) {
            return Ok(CompatibilityWitness {
                sigma,
                j,
                member: true,
                guaranteed: true,
                verified_to: n,
                offending: None,
                caveat: Some("sigma is not a spectral gap of the model".into()),
            });
        }
        let pairs = model.crossing_pairs(n, key, j).expect("keyed models enumerate partners");
        let n_to = n_check.max(n + 1);
        return Ok(CompatibilityWitness {
            sigma,
            j,
            member: pairs.is_empty(),
            guaranteed: true,
            verified_to: n_to,
            offending: pairs.first().copied(),
            caveat: None,
        });
    }
    let n_max = model.n_max().unwrap_or(n_check);
    if let Some(w) = model.guarantees.bandwidth {
        if n + w <= n_max {
            let off = scan_crossing(model, n, sigma, j, n + w, tol);
            return Ok(CompatibilityWitness {
                sigma,
                j,
                member: off.is_none(),
                guaranteed: true,
                verified_to: n + w,
                offending: off,
                caveat: None,
            });
        }
    }
    let n_to = n_check.min(n_max).max(n);
    let off = scan_crossing(model, n, sigma, j, n_to, tol);
    let caveat = if off.is_none() {
        Some(format!(
            "block structure verified numerically up to N = {n_to} only; larger truncations are unchecked"
        ))
    } else {
        None
    };
    Ok(CompatibilityWitness {
        sigma,
        j,
        member: off.is_none(),
        guaranteed: off.is_some(),
        verified_to: n_to,
        offending: off,
        caveat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{rotor_model, well_model, RotorIndex, rotor_linear, rotor_p};
    use std::f64::consts::PI;

    #[test]
    fn well_n2_block() {
        let s = truncate::<f64>(&well_model(1.0).unwrap(), 2).unwrap();
        assert_eq!(s.b[0][(0, 0)].norm(), 0.0);
        assert!((s.b[0][(0, 1)].norm() - 16.0 / (9.0 * PI * PI)).abs() < 1e-15);
    }

    #[test]
    fn well_n3_gaps() {
        let s = truncate::<f64>(&well_model(1.0).unwrap(), 3).unwrap();
        let g = spectral_gaps(&s, default_gap_tol(&s.a_diag));
        let want = [0.0, 1.5 * PI * PI, 2.5 * PI * PI, 4.0 * PI * PI];
        assert_eq!(g.len(), 4);
        for (a, b) in g.gaps.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotor_n8_gaps_and_zero_activation() {
        let s = truncate::<f64>(&rotor_model(1.0).unwrap(), 8).unwrap();
        let g = spectral_gaps(&s, 0.0);
        assert_eq!(g.gaps, vec![0.0, 4.0]);
        let e0 = excite(&s.b[2], 0, &g).unwrap();
        assert_eq!(linalg::max_abs(&e0), 0.0);
    }

    #[test]
    fn float_clustering_single_cluster() {
        let s = TruncatedSystem::<f64> {
            n: 3,
            a_diag: vec![-1.0; 3],
            keys: None,
            b: vec![],
        };
        let g = spectral_gaps(&s, 1e-9);
        assert_eq!(g.gaps, vec![0.0]);
    }

    #[test]
    fn float_clustering_matches_exact() {
        let s = truncate::<f64>(&well_model(1.0).unwrap(), 6).unwrap();
        let mut f = s.clone();
        f.keys = None;
        let a = spectral_gaps(&s, 0.0);
        let b = spectral_gaps(&f, default_gap_tol(&f.a_diag));
        assert_eq!(a.len(), b.len());
        for l in 0..6 {
            for k in 0..6 {
                assert_eq!(a.id(l, k), b.id(l, k));
            }
        }
    }

    #[test]
    fn excite_keeps_gap_pairs() {
        let s = truncate::<f64>(&well_model(1.0).unwrap(), 3).unwrap();
        let g = spectral_gaps(&s, 0.0);
        let id = g.find(1.5 * PI * PI).unwrap();
        let e = excite(&s.b[0], id, &g).unwrap();
        for l in 0..3 {
            for k in 0..3 {
                let keep = (l, k) == (0, 1) || (l, k) == (1, 0);
                assert_eq!(e[(l, k)].norm() > 0.0, keep);
            }
        }
        assert!(excite(&s.b[0], 9, &g).is_err());
    }

    #[test]
    fn j_rotate_identity_and_square() {
        let s = truncate::<f64>(&well_model(1.0).unwrap(), 4).unwrap();
        let one = Complex::new(1.0, 0.0);
        let i = Complex::new(0.0, 1.0);
        let r1 = j_rotate(&s.b[0], one, &s.a_diag).unwrap();
        assert!(linalg::max_abs(&(r1 - &s.b[0])) == 0.0);
        let r2 = j_rotate(&j_rotate(&s.b[0], i, &s.a_diag).unwrap(), i, &s.a_diag).unwrap();
        assert!(linalg::max_abs(&(r2 + &s.b[0])) < 1e-16);
        assert!(j_rotate(&s.b[0], Complex::new(2.0, 0.0), &s.a_diag).is_err());
    }

    #[test]
    fn j_i_of_rotor_b3() {
        let s = truncate::<f64>(&rotor_model(1.0).unwrap(), 8).unwrap();
        let r = j_rotate(&s.b[2], Complex::new(0.0, 1.0), &s.a_diag).unwrap();
        let mut want = linalg::zeros::<f64>(8);
        for m in -1..=1 {
            let a = rotor_linear(1, RotorIndex { l: 1, m });
            let b = rotor_linear(1, RotorIndex { l: 2, m });
            want[(a, b)] = Complex::new(rotor_p(1, m), 0.0);
            want[(b, a)] = Complex::new(-rotor_p(1, m), 0.0);
        }
        assert!(linalg::max_abs(&(r - want)) < 1e-15);
    }

    #[test]
    fn crop_examples() {
        let i4 = linalg::eye::<f64>(4);
        assert_eq!(crop(&i4, 2).unwrap(), linalg::eye::<f64>(2));
        let mut swap = linalg::zeros::<f64>(2);
        swap[(0, 1)] = Complex::new(1.0, 0.0);
        swap[(1, 0)] = Complex::new(1.0, 0.0);
        assert_eq!(crop(&swap, 1).unwrap()[(0, 0)].norm(), 0.0);
        assert!(crop(&i4, 5).is_err());
    }

    #[test]
    fn xi_rotor_and_well() {
        let r = rotor_model(1.0).unwrap();
        for j in 0..3 {
            let w = xi_membership(&r, 8, 4.0, j, 32).unwrap();
            assert!(w.member && w.guaranteed);
            let w0 = xi_membership(&r, 8, 0.0, j, 32).unwrap();
            assert!(w0.member);
        }
        let w = xi_membership(&r, 8, 6.0, 2, 32);
        assert!(w.is_ok());
        let well = well_model(1.0).unwrap();
        for k in 2..=6usize {
            let sigma = (2 * k - 1) as f64 * PI * PI / 2.0;
            let w = xi_membership(&well, k.max(2), sigma, 0, 24).unwrap();
            assert!(w.member && w.guaranteed, "k = {k}");
        }
        // gap 8 pi^2 / 2 between levels 1 and 3 is not coupled; levels 4,5 have 9.
        let w = xi_membership(&well, 4, 9.0 * PI * PI / 2.0, 0, 24).unwrap();
        assert!(!w.member);
        assert_eq!(w.offending, Some((3, 4)));
    }

    #[test]
    fn single_precision_truncation() {
        let s = truncate::<f32>(&rotor_model(1.0).unwrap(), 8).unwrap();
        assert!(linalg::skew_defect(&s.b[0]) < 1e-6);
    }
}
