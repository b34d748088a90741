//! Dense complex linear algebra kernels on u(n) and U(n).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{cabs, Real};

pub type CMat<T> = DMatrix<Complex<T>>;
pub type CVec<T> = DVector<Complex<T>>;

pub fn zeros<T: Real>(n: usize) -> CMat<T> {
    CMat::<T>::zeros(n, n)
}

pub fn eye<T: Real>(n: usize) -> CMat<T> {
    CMat::<T>::identity(n, n)
}

/// Matrix commutator `XY - YX`.
pub fn commutator<T: Real>(x: &CMat<T>, y: &CMat<T>) -> CMat<T> {
    x * y - y * x
}

/// Checked commutator.
pub fn bracket<T: Real>(x: &CMat<T>, y: &CMat<T>) -> Result<CMat<T>> {
    if x.shape() != y.shape() || x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "bracket of {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(commutator(x, y))
}

/// Real inner product `Re tr(X* Y)`.
pub fn re_inner<T: Real>(x: &CMat<T>, y: &CMat<T>) -> T {
    x.iter()
        .zip(y.iter())
        .fold(T::zero(), |acc, (a, b)| acc + a.re * b.re + a.im * b.im)
}

pub fn frobenius<T: Real>(x: &CMat<T>) -> T {
    re_inner(x, x).sqrt()
}

pub fn max_abs<T: Real>(x: &CMat<T>) -> T {
    x.iter().fold(T::zero(), |m, z| m.max(cabs(*z)))
}

/// Largest entry of `M + M*`.
pub fn skew_defect<T: Real>(m: &CMat<T>) -> T {
    max_abs(&(m + m.adjoint()))
}

/// Frobenius norm of `U*U - I`.
pub fn unitarity_defect<T: Real>(u: &CMat<T>) -> T {
    let n = u.nrows();
    frobenius(&(u.adjoint() * u - eye::<T>(n)))
}

/// Spectral norm.
pub fn op_norm<T: Real>(m: &CMat<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().singular_values().max()
}

pub fn trace<T: Real>(m: &CMat<T>) -> Complex<T> {
    m.diagonal().iter().fold(Complex::new(T::zero(), T::zero()), |a, z| a + z)
}

/// Traceless part `M - tr(M)/n I`.
pub fn traceless<T: Real>(m: &CMat<T>) -> CMat<T> {
    let n = m.nrows();
    let t = trace(m) / T::of(n as f64);
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] -= t;
    }
    out
}

/// Skew-Hermitian part `(M - M*)/2`.
pub fn skew_part<T: Real>(m: &CMat<T>) -> CMat<T> {
    (m - m.adjoint()) * Complex::new(T::of(0.5), T::zero())
}

/// Distance between `U` and the nearest global-phase multiple of `G` in Frobenius norm.
pub fn phase_distance<T: Real>(u: &CMat<T>, g: &CMat<T>) -> T {
    let ov = trace(&(u.adjoint() * g));
    let ph = if cabs(ov) > T::zero() {
        ov / cabs(ov)
    } else {
        Complex::new(T::one(), T::zero())
    };
    frobenius(&(u * ph - g))
}

/// Euclidean distance between two states, without phase quotient.
pub fn vec_dist<T: Real>(a: &CVec<T>, b: &CVec<T>) -> T {
    (a - b).norm()
}

/// Exponential of a skew-Hermitian generator through its Hermitian eigendecomposition.
///
/// `G = -i V diag(mu) V*`, so `exp(tG) = V diag(exp(-i t mu)) V*`.
#[derive(Clone, Debug)]
pub struct SkewExp<T: Real> {
    pub v: CMat<T>,
    pub mu: Vec<T>,
}

impl<T: Real> SkewExp<T> {
    pub fn new(g: &CMat<T>) -> Self {
        let i = Complex::new(T::zero(), T::one());
        let h = g * i;
        let h = (&h + h.adjoint()) * Complex::new(T::of(0.5), T::zero());
        let eig = h.symmetric_eigen();
        SkewExp {
            v: eig.eigenvectors,
            mu: eig.eigenvalues.iter().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn exp(&self, t: T) -> CMat<T> {
        let mut vd = self.v.clone();
        for (c, &m) in self.mu.iter().enumerate() {
            let ph = T::cis(-t * m);
            vd.column_mut(c).scale_mut_c(ph);
        }
        vd * self.v.adjoint()
    }
}

trait ScaleC<T: Real> {
    fn scale_mut_c(&mut self, z: Complex<T>);
}

impl<T: Real, S> ScaleC<T> for nalgebra::Matrix<Complex<T>, nalgebra::Dyn, nalgebra::U1, S>
where
    S: nalgebra::StorageMut<Complex<T>, nalgebra::Dyn, nalgebra::U1>,
{
    fn scale_mut_c(&mut self, z: Complex<T>) {
        for e in self.iter_mut() {
            *e *= z;
        }
    }
}

/// `exp(tG)` for skew-Hermitian `G`.
pub fn expm_skew<T: Real>(g: &CMat<T>, t: T) -> CMat<T> {
    SkewExp::new(g).exp(t)
}

/// Exponential of `t * diag(i a)`.
pub fn expm_diag<T: Real>(a: &[T], t: T) -> CVec<T> {
    CVec::<T>::from_iterator(a.len(), a.iter().map(|&x| T::cis(t * x)))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// General matrix exponential by Pade(13) scaling and squaring.
pub fn expm<T: Real>(m: &CMat<T>) -> CMat<T> {
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|c| m.column(c).iter().fold(T::zero(), |a, z| a + cabs(*z)))
        .fold(T::zero(), |a, b| a.max(b));
    let theta = 5.371920351148152;
    let mut s = 0i32;
    if norm1.f64() > theta {
        s = (norm1.f64() / theta).log2().ceil() as i32;
    }
    let a = m * Complex::new(T::of(0.5f64.powi(s)), T::zero());
    let b: Vec<Complex<T>> = PADE13.iter().map(|&x| Complex::new(T::of(x), T::zero())).collect();
    let id = eye::<T>(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Pade denominator is nonsingular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Orthonormal basis of su(n) under `Re tr(X* Y)`.
pub fn su_basis<T: Real>(n: usize) -> Vec<CMat<T>> {
    let mut out = Vec::with_capacity(n * n - 1);
    let h = T::of(std::f64::consts::FRAC_1_SQRT_2);
    for a in 0..n {
        for b in a + 1..n {
            let mut e = zeros::<T>(n);
            e[(a, b)] = Complex::new(h, T::zero());
            e[(b, a)] = Complex::new(-h, T::zero());
            out.push(e);
            let mut f = zeros::<T>(n);
            f[(a, b)] = Complex::new(T::zero(), h);
            f[(b, a)] = Complex::new(T::zero(), h);
            out.push(f);
        }
    }
    for k in 1..n {
        let mut d = zeros::<T>(n);
        let norm = T::of(((k * (k + 1)) as f64).sqrt());
        for i in 0..k {
            d[(i, i)] = Complex::new(T::zero(), T::one() / norm);
        }
        d[(k, k)] = Complex::new(T::zero(), -T::of(k as f64) / norm);
        out.push(d);
    }
    out
}

/// Haar-random unitary from the QR factorization of a Ginibre matrix.
pub fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMat<f64> {
    let z = CMat::<f64>::from_fn(n, n, |_, _| gauss_c(rng));
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..n {
        let d = r[(c, c)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { Complex::new(1.0, 0.0) };
        for e in q.column_mut(c).iter_mut() {
            *e *= ph;
        }
    }
    q
}

/// Haar-random element of SU(n).
pub fn random_special_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMat<f64> {
    let mut u = random_unitary(n, rng);
    let det = u.determinant();
    let ph = Complex::from_polar(1.0, -det.arg() / n as f64);
    u *= ph;
    u
}

/// Random element of su(n) with Gaussian coordinates in the orthonormal basis.
pub fn random_su(n: usize, rng: &mut ChaCha8Rng) -> CMat<f64> {
    let mut x = zeros::<f64>(n);
    for b in su_basis::<f64>(n) {
        let c: f64 = gauss(rng);
        x += b * Complex::new(c, 0.0);
    }
    x
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gauss_c(rng: &mut ChaCha8Rng) -> Complex<f64> {
    Complex::new(gauss(rng), gauss(rng))
}

/// Serde adapter storing a complex matrix as `{rows, cols, data}` with row-major `[re, im]` pairs.
pub mod cmat_serde {
    use super::CMat;
    use num_complex::Complex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<[f64; 2]>,
    }

    pub fn serialize<S: Serializer>(m: &CMat<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push([m[(r, c)].re, m[(r, c)].im]);
            }
        }
        Repr { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMat<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom("matrix data length does not match shape"));
        }
        Ok(CMat::<f64>::from_fn(r.rows, r.cols, |i, j| {
            let [re, im] = r.data[i * r.cols + j];
            Complex::new(re, im)
        }))
    }
}

/// Serde adapter storing a complex vector as `[re, im]` pairs.
pub mod cvec_serde {
    use super::CVec;
    use num_complex::Complex;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &CVec<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CVec<f64>, D::Error> {
        let data = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(CVec::<f64>::from_iterator(data.len(), data.iter().map(|p| Complex::new(p[0], p[1]))))
    }
}

/// Converts a double precision matrix to another scalar type.
pub fn cast_mat<T: Real>(m: &CMat<f64>) -> CMat<T> {
    m.map(crate::scalar::cast_c::<T>)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn eigen_exp_matches_pade() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 5, 9] {
            let x = random_su(n, &mut rng);
            let a = expm_skew(&x, 0.8);
            let b = expm(&(&x * Complex::new(0.8, 0.0)));
            assert!(max_abs(&(a.clone() - b)) < 1e-12);
            assert!(unitarity_defect(&a) < 1e-12);
        }
    }

    #[test]
    fn pade_large_norm_uses_squaring() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_su(4, &mut rng) * Complex::new(40.0, 0.0);
        let a = expm_skew(&x, 1.0);
        let b = expm(&x);
        assert!(max_abs(&(a - b)) < 1e-10);
    }

    #[test]
    fn pade_of_nilpotent() {
        let mut m = zeros::<f64>(2);
        m[(0, 1)] = Complex::new(3.0, 0.0);
        let e = expm(&m);
        assert!((e[(0, 1)] - Complex::new(3.0, 0.0)).norm() < 1e-14);
        assert!((e[(0, 0)] - Complex::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn su_basis_is_orthonormal() {
        let b = su_basis::<f64>(4);
        assert_eq!(b.len(), 15);
        for (i, x) in b.iter().enumerate() {
            assert!(skew_defect(x) < 1e-15);
            assert!(trace(x).norm() < 1e-15);
            for (j, y) in b.iter().enumerate() {
                let g = re_inner(x, y);
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn phase_distance_is_phase_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_unitary(3, &mut rng);
        let g = &u * Complex::from_polar(1.0, 0.7);
        assert!(phase_distance(&u, &g) < 1e-13);
    }

    #[test]
    fn special_unitary_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_special_unitary(5, &mut rng);
        assert!((u.determinant() - Complex::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_precision_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: CMat<f32> = cast_mat(&random_su(3, &mut rng));
        let a = expm_skew(&x, 0.5f32);
        assert!(unitarity_defect(&a) < 1e-5);
    }
}
