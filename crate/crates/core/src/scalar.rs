//! Scalar abstraction shared by the generic numerical kernels.

use nalgebra as na;
use num_complex::Complex;
use num_traits as nt;

/// Real floating point type usable by the generic kernels (`f32`, `f64`).
pub trait Real:
    na::RealField + nt::FromPrimitive + nt::ToPrimitive + nt::FloatConst + Copy + Send + Sync + 'static
{
    /// Machine epsilon.
    const EPS: Self;

    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    /// Lossy conversion to `f64`.
    fn f64(self) -> f64;

    /// Complex number with the given parts.
    fn c(re: Self, im: Self) -> Complex<Self> {
        Complex::new(re, im)
    }

    /// `exp(i theta)`.
    fn cis(theta: Self) -> Complex<Self> {
        Complex::new(theta.cos(), theta.sin())
    }
}

macro_rules! impl_real {
    ($f:ty) => {
        impl Real for $f {
            const EPS: Self = <$f>::EPSILON;

            fn of(x: f64) -> Self {
                x as $f
            }

            fn f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Complex conversion from double precision.
pub fn cast_c<T: Real>(z: crate::C64) -> Complex<T> {
    Complex::new(T::of(z.re), T::of(z.im))
}

/// Modulus of a complex number.
pub fn cabs<T: Real>(z: Complex<T>) -> T {
    z.re.hypot(z.im)
}
