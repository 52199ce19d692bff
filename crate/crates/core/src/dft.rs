//! Multidimensional DFT on the torus `Z_N^n`, any `N`.
//!
//! Conventions: `f̂(m) = Σ_y f(y) e(y·m/N)` and `f(y) = N^{-n} Σ_m f̂(m) e(-y·m/N)`.
//! Arrays are stored row-major with the last coordinate fastest.

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `Σ f(y) e(+y·m/N)`
    Forward,
    /// `N^{-n} Σ f̂(m) e(-y·m/N)`
    Inverse,
}

fn transform_axis<T: Real>(data: &mut [Complex<T>], side: usize, dim: usize, axis: usize, fft: &Arc<dyn Fft<T>>) {
    let stride = side.pow((dim - 1 - axis) as u32);
    let block = stride * side;
    data.par_chunks_mut(block).for_each(|chunk| {
        let mut line = vec![Complex::new(T::zero(), T::zero()); side];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
        for offset in 0..stride {
            for (i, v) in line.iter_mut().enumerate() {
                *v = chunk[offset + i * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (i, v) in line.iter().enumerate() {
                chunk[offset + i * stride] = *v;
            }
        }
    });
}

/// In-place `n`-dimensional transform of a `side^dim` array.
pub fn dft_nd<T: Real>(data: &mut [Complex<T>], side: usize, dim: usize, direction: Direction) {
    assert_eq!(data.len(), side.pow(dim as u32), "array length must be side^dim");
    let mut planner = FftPlanner::<T>::new();
    // rustfft's "inverse" carries the positive exponent.
    let fft = match direction {
        Direction::Forward => planner.plan_fft_inverse(side),
        Direction::Inverse => planner.plan_fft_forward(side),
    };
    for axis in 0..dim {
        transform_axis(data, side, dim, axis, &fft);
    }
    if direction == Direction::Inverse {
        let scale = T::one() / T::of_usize(data.len());
        for v in data.iter_mut() {
            *v = *v * scale;
        }
    }
}

/// Multi-index of a flat position.
pub fn unflatten(mut idx: usize, side: usize, dim: usize) -> Vec<usize> {
    let mut out = vec![0usize; dim];
    for slot in out.iter_mut().rev() {
        *slot = idx % side;
        idx /= side;
    }
    out
}

/// Flat position of a multi-index, reducing each coordinate mod `side`.
pub fn flatten(index: &[i64], side: usize) -> usize {
    index
        .iter()
        .fold(0usize, |acc, &v| acc * side + v.rem_euclid(side as i64) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::e;

    fn naive(data: &[Complex<f64>], side: usize, dim: usize) -> Vec<Complex<f64>> {
        (0..data.len())
            .map(|m| {
                let mi = unflatten(m, side, dim);
                data.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (y, &v)| {
                    let yi = unflatten(y, side, dim);
                    let dot: usize = mi.iter().zip(&yi).map(|(a, b)| a * b).sum();
                    acc + v * e((dot % side) as f64 / side as f64)
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_transform() {
        for (side, dim) in [(5usize, 1usize), (6, 2), (4, 3), (7, 2)] {
            let len = side.pow(dim as u32);
            let data: Vec<Complex<f64>> = (0..len)
                .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let expected = naive(&data, side, dim);
            let mut got = data.clone();
            dft_nd(&mut got, side, dim, Direction::Forward);
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).norm() < 1e-10);
            }
            dft_nd(&mut got, side, dim, Direction::Inverse);
            for (a, b) in got.iter().zip(&data) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn flatten_roundtrip() {
        for idx in 0..125 {
            let m = unflatten(idx, 5, 3);
            let signed: Vec<i64> = m.iter().map(|&v| v as i64 - 5).collect();
            assert_eq!(flatten(&signed, 5), idx);
        }
    }
}
