//! Scalar abstraction shared by the floating-point parts of the crate.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, Signed, ToPrimitive};
use rustfft::FftNum;

/// Real scalar type: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Signed
    + Debug
    + Display
    + Default
    + FftNum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; every supported type can represent (an approximation of) it.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn of_int(x: i64) -> Self {
        Self::from_i64(x).expect("i64 converts to every Real")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `e(t) = exp(2πit)`.
#[inline]
pub fn e<T: Real>(t: T) -> Complex<T> {
    let angle = T::TAU() * t;
    Complex::new(angle.cos(), angle.sin())
}

/// Kahan-compensated complex accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum<T: Real> {
    sum: Complex<T>,
    comp: Complex<T>,
}

impl<T: Real> KahanSum<T> {
    pub fn new() -> Self {
        Self {
            sum: Complex::new(T::zero(), T::zero()),
            comp: Complex::new(T::zero(), T::zero()),
        }
    }

    #[inline]
    pub fn add(&mut self, value: Complex<T>) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> Complex<T> {
        self.sum
    }
}

impl<T: Real> FromIterator<Complex<T>> for KahanSum<T> {
    fn from_iter<I: IntoIterator<Item = Complex<T>>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Table of the `L`-th roots of unity `e(m/L)`, `m = 0..L`.
#[derive(Clone, Debug)]
pub struct RootTable<T: Real> {
    modulus: u64,
    roots: Vec<Complex<T>>,
}

impl<T: Real> RootTable<T> {
    pub fn new(modulus: u64) -> Self {
        assert!(modulus >= 1, "root table modulus must be positive");
        // Angles are formed in f64 and reduced before conversion so f32 tables stay accurate.
        let roots = (0..modulus)
            .map(|m| {
                let angle = std::f64::consts::TAU * (m as f64) / (modulus as f64);
                Complex::new(T::of(angle.cos()), T::of(angle.sin()))
            })
            .collect();
        Self { modulus, roots }
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// `e(m/L)` for any integer `m`.
    #[inline]
    pub fn get(&self, m: i128) -> Complex<T> {
        let l = self.modulus as i128;
        self.roots[m.rem_euclid(l) as usize]
    }

    #[inline]
    pub fn at(&self, residue: u64) -> Complex<T> {
        self.roots[residue as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_table_matches_direct_exponential() {
        let table = RootTable::<f64>::new(12);
        for m in -30i128..30 {
            let direct = e(m as f64 / 12.0);
            assert!((table.get(m) - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn kahan_sum_of_roots_vanishes() {
        let table = RootTable::<f64>::new(97);
        let s: KahanSum<f64> = (0..97u64).map(|m| table.at(m)).collect();
        assert!(s.value().norm() < 1e-13);
    }

    #[test]
    fn f32_table_is_usable() {
        let table = RootTable::<f32>::new(8);
        assert!((table.at(2) - Complex::new(0.0f32, 1.0)).norm() < 1e-6);
    }
}
