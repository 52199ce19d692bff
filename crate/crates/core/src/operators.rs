//! Averages `A_λ`, Fourier multipliers `M_λ`, and empirical lower bounds for maximal operators,
//! on finite tori `Z_N^n` and boxes `[−R, R]^n`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Mutex;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::{enumerate_solutions, SolutionSet};
use crate::dft::{dft_nd, flatten, unflatten, Direction};
use crate::error::{Budget, Error, Result};
use crate::forms::{CutoffPsi, IntegralForm};
use crate::multipliers::{MultiplierContext, OmegaHat};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `Z_N^n` with wraparound.
    Torus,
    /// `[−R, R]^n`, zero outside.
    Box,
}

impl GridKind {
    fn code(self) -> u64 {
        match self {
            GridKind::Torus => 1,
            GridKind::Box => 2,
        }
    }
}

/// A complex function on a torus or a box, stored row-major with the last coordinate fastest.
pub struct GridFunction<T: Real> {
    kind: GridKind,
    side: usize,
    dim: usize,
    values: Vec<Complex<T>>,
    norms: Mutex<HashMap<u64, f64>>,
}

impl<T: Real> Clone for GridFunction<T> {
    fn clone(&self) -> Self {
        Self::raw(self.kind, self.side, self.dim, self.values.clone())
    }
}

impl<T: Real> std::fmt::Debug for GridFunction<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridFunction")
            .field("kind", &self.kind)
            .field("side", &self.side)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl<T: Real> GridFunction<T> {
    fn raw(kind: GridKind, side: usize, dim: usize, values: Vec<Complex<T>>) -> Self {
        Self { kind, side, dim, values, norms: Mutex::new(HashMap::new()) }
    }

    fn checked(kind: GridKind, side: usize, dim: usize, values: Vec<Complex<T>>) -> Result<Self> {
        let len = side
            .checked_pow(dim as u32)
            .ok_or(Error::Overflow("grid size"))?;
        if side == 0 || dim == 0 {
            return Err(Error::InvalidParameter("grid needs positive side and dimension".into()));
        }
        if values.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: values.len() });
        }
        Ok(Self::raw(kind, side, dim, values))
    }

    pub fn torus(side: usize, dim: usize, values: Vec<Complex<T>>) -> Result<Self> {
        Self::checked(GridKind::Torus, side, dim, values)
    }

    pub fn boxed(radius: usize, dim: usize, values: Vec<Complex<T>>) -> Result<Self> {
        Self::checked(GridKind::Box, 2 * radius + 1, dim, values)
    }

    /// Samples `f` at the grid points (torus coordinates in `[0, N)`, box coordinates in `[−R, R]`).
    pub fn from_fn<F>(kind: GridKind, size: usize, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[i64]) -> Complex<T> + Sync,
    {
        let side = match kind {
            GridKind::Torus => size,
            GridKind::Box => 2 * size + 1,
        };
        let len = side.checked_pow(dim as u32).ok_or(Error::Overflow("grid size"))?;
        let offset = match kind {
            GridKind::Torus => 0,
            GridKind::Box => size as i64,
        };
        let values = (0..len)
            .into_par_iter()
            .map(|i| {
                let y: Vec<i64> = unflatten(i, side, dim).into_iter().map(|v| v as i64 - offset).collect();
                f(&y)
            })
            .collect();
        Self::checked(kind, side, dim, values)
    }

    pub fn delta(kind: GridKind, size: usize, dim: usize) -> Result<Self> {
        Self::from_fn(kind, size, dim, |y| {
            let v = if y.iter().all(|&c| c == 0) { T::one() } else { T::zero() };
            Complex::new(v, T::zero())
        })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `R` for a box, `None` for a torus.
    pub fn radius(&self) -> Option<usize> {
        (self.kind == GridKind::Box).then_some(self.side / 2)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    fn offset(&self) -> i64 {
        match self.kind {
            GridKind::Torus => 0,
            GridKind::Box => (self.side / 2) as i64,
        }
    }

    /// Grid coordinates of a flat position.
    pub fn point(&self, idx: usize) -> Vec<i64> {
        let off = self.offset();
        unflatten(idx, self.side, self.dim).into_iter().map(|v| v as i64 - off).collect()
    }

    fn index(&self, y: &[i64]) -> Option<usize> {
        match self.kind {
            GridKind::Torus => Some(flatten(y, self.side)),
            GridKind::Box => {
                let r = (self.side / 2) as i64;
                if y.iter().any(|&c| c < -r || c > r) {
                    return None;
                }
                Some(y.iter().fold(0usize, |acc, &c| acc * self.side + (c + r) as usize))
            }
        }
    }

    pub fn get(&self, y: &[i64]) -> Complex<T> {
        self.index(y).map_or(Complex::new(T::zero(), T::zero()), |i| self.values[i])
    }

    pub fn sum(&self) -> Complex<T> {
        self.values.iter().copied().collect::<crate::scalar::KahanSum<T>>().value()
    }

    /// `‖f‖_p`; `p = ∞` gives the sup norm. Cached per exponent.
    pub fn norm(&self, p: f64) -> f64 {
        let key = p.to_bits();
        if let Some(&v) = self.norms.lock().expect("norm cache poisoned").get(&key) {
            return v;
        }
        let v = if p.is_infinite() {
            self.values.iter().map(|z| z.norm().as_f64()).fold(0.0, f64::max)
        } else {
            let s: f64 = self.values.par_iter().map(|z| z.norm().as_f64().powf(p)).sum();
            s.powf(1.0 / p)
        };
        self.norms.lock().expect("norm cache poisoned").insert(key, v);
        v
    }

    pub fn map<F: Fn(Complex<T>) -> Complex<T> + Sync>(&self, f: F) -> Self {
        Self::raw(self.kind, self.side, self.dim, self.values.par_iter().map(|&v| f(v)).collect())
    }

    pub fn abs(&self) -> Self {
        self.map(|v| Complex::new(v.norm(), T::zero()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self::raw(self.kind, self.side, self.dim, values))
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.kind != other.kind || self.dim != other.dim || self.side != other.side {
            return Err(Error::InvalidParameter("grid functions differ in shape".into()));
        }
        Ok(())
    }

    /// Re-embeds a box function into the larger box `[−radius, radius]^n`.
    pub fn embed(&self, radius: usize) -> Result<Self> {
        let current = self.radius().ok_or_else(|| Error::Unsupported("only boxes can be embedded".into()))?;
        if radius < current {
            return Err(Error::InvalidParameter(format!("cannot shrink a box from {current} to {radius}")));
        }
        Self::from_fn(GridKind::Box, radius, self.dim, |y| self.get(y))
    }

    /// Header `{n, kind, side, 0}` as little-endian `u64` (the layout of the count tables),
    /// then `(re, im)` pairs as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.dim as u64, self.kind.code(), self.side as u64, 0] {
            w.write_all(&v.to_le_bytes())?;
        }
        for z in &self.values {
            w.write_all(&z.re.as_f64().to_le_bytes())?;
            w.write_all(&z.im.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [dim, code, side, _] = header;
        let kind = match code {
            1 => GridKind::Torus,
            2 => GridKind::Box,
            other => return Err(Error::InvalidParameter(format!("unknown grid kind {other}"))),
        };
        let len = (side as usize).checked_pow(dim as u32).ok_or(Error::Overflow("grid size"))?;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            values.push(Complex::new(T::of(re), T::of(im)));
        }
        Self::checked(kind, side as usize, dim as usize, values)
    }
}

/// `(A_λ f)(y) = r(λ)^{−1} Σ_{Q(x)=λ} ψ(x/λ^{1/k}) f(y − x)`.
///
/// Boxes grow by `max |x|_∞` over the solutions so that no mass is lost; tori wrap around.
pub fn apply_average<T: Real>(solutions: &SolutionSet, f: &GridFunction<T>, budget: &Budget) -> Result<GridFunction<T>> {
    if solutions.is_empty() || solutions.count() <= 0.0 {
        return Err(Error::NotRepresented(solutions.lambda));
    }
    let (out_kind, out_size) = match f.kind {
        GridKind::Torus => (GridKind::Torus, f.side),
        GridKind::Box => (GridKind::Box, f.side / 2 + solutions.max_abs() as usize),
    };
    let out_side = match out_kind {
        GridKind::Torus => out_size,
        GridKind::Box => 2 * out_size + 1,
    };
    budget.check((out_side as u128).pow(f.dim as u32) * solutions.len() as u128)?;
    let inv = T::of(1.0 / solutions.count());
    let weights: Vec<T> = solutions.weights.iter().map(|&w| T::of(w)).collect();
    GridFunction::from_fn(out_kind, out_size, f.dim, |y| {
        let mut acc = Complex::new(T::zero(), T::zero());
        let mut shifted = vec![0i64; y.len()];
        for (x, &w) in solutions.points.iter().zip(&weights) {
            for ((s, &yi), &xi) in shifted.iter_mut().zip(y).zip(x) {
                *s = yi - xi;
            }
            acc = acc + f.get(&shifted) * w;
        }
        acc * inv
    })
}

/// Enumerates `{Q = λ}` and applies `A_λ`.
pub fn apply_average_for<T: Real>(
    form: &IntegralForm,
    psi: &CutoffPsi,
    lambda: u64,
    f: &GridFunction<T>,
    budget: &Budget,
) -> Result<GridFunction<T>> {
    let s = enumerate_solutions(form, psi, lambda, budget)?;
    apply_average(&s, f, budget)
}

/// Frequencies `m/N` reduced into `[−1/2, 1/2)^n`, in grid order.
pub fn grid_frequencies<T: Real>(side: usize, dim: usize) -> Vec<Vec<T>> {
    let n = side as i64;
    (0..side.pow(dim as u32))
        .map(|i| {
            unflatten(i, side, dim)
                .into_iter()
                .map(|m| {
                    let mut c = m as i64;
                    if 2 * c >= n {
                        c -= n;
                    }
                    T::of(c as f64 / side as f64)
                })
                .collect()
        })
        .collect()
}

/// `m(𝐦/N)` for every frequency of `Z_N^n`.
pub fn multiplier_grid<T, F>(side: usize, dim: usize, m: F) -> Result<Vec<Complex<T>>>
where
    T: Real,
    F: Fn(&[T]) -> Result<Complex<T>> + Sync,
{
    grid_frequencies::<T>(side, dim).par_iter().map(|xi| m(xi)).collect()
}

/// Transform, multiply by a precomputed multiplier grid, transform back.
pub fn apply_multiplier_grid<T: Real>(f: &GridFunction<T>, grid: &[Complex<T>]) -> Result<GridFunction<T>> {
    if f.kind != GridKind::Torus {
        return Err(Error::Unsupported("multipliers act on tori only".into()));
    }
    if grid.len() != f.len() {
        return Err(Error::DimensionMismatch { expected: f.len(), got: grid.len() });
    }
    let mut data = f.values.clone();
    dft_nd(&mut data, f.side, f.dim, Direction::Forward);
    data.par_iter_mut().zip(grid).for_each(|(v, &m)| *v = *v * m);
    dft_nd(&mut data, f.side, f.dim, Direction::Inverse);
    Ok(GridFunction::raw(GridKind::Torus, f.side, f.dim, data))
}

/// `M f = F^{−1}(m · F f)` on the torus.
pub fn apply_multiplier<T, F>(f: &GridFunction<T>, m: F) -> Result<GridFunction<T>>
where
    T: Real,
    F: Fn(&[T]) -> Result<Complex<T>> + Sync,
{
    if f.kind != GridKind::Torus {
        return Err(Error::Unsupported("multipliers act on tori only".into()));
    }
    let grid = multiplier_grid(f.side, f.dim, m)?;
    apply_multiplier_grid(f, &grid)
}

/// Pointwise `max_i |g_i|`; boxes are embedded into the largest one first.
pub fn maximal_of<T: Real>(outputs: &[GridFunction<T>]) -> Result<GridFunction<T>> {
    let first = outputs.first().ok_or_else(|| Error::InvalidParameter("empty operator list".into()))?;
    let aligned: Vec<GridFunction<T>> = match first.kind {
        GridKind::Torus => outputs.to_vec(),
        GridKind::Box => {
            let r = outputs.iter().filter_map(|g| g.radius()).max().unwrap_or(0);
            outputs.iter().map(|g| g.embed(r)).collect::<Result<_>>()?
        }
    };
    let mut acc = aligned[0].abs();
    for g in &aligned[1..] {
        acc.same_shape(g)?;
        acc.values.par_iter_mut().zip(&g.values).for_each(|(a, b)| {
            if b.norm() > a.re {
                *a = Complex::new(b.norm(), T::zero());
            }
        });
    }
    acc.norms = Mutex::new(HashMap::new());
    Ok(acc)
}

/// `sup_{λ ∈ Λ} |A_λ f|`
pub fn maximal_apply<T: Real>(
    form: &IntegralForm,
    psi: &CutoffPsi,
    lambdas: &[u64],
    f: &GridFunction<T>,
    budget: &Budget,
) -> Result<GridFunction<T>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty λ list".into()));
    }
    let outs = lambdas
        .iter()
        .map(|&l| apply_average_for(form, psi, l, f, budget))
        .collect::<Result<Vec<_>>>()?;
    maximal_of(&outs)
}

/// `‖output‖_p / ‖f‖_p`: a lower bound on the norm of whatever operator produced `output`.
pub fn norm_ratio<T: Real>(output: &GridFunction<T>, f: &GridFunction<T>, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent p = {p} must be at least 1")));
    }
    let denom = f.norm(p);
    if denom == 0.0 {
        return Err(Error::InvalidParameter("zero input".into()));
    }
    Ok(output.norm(p) / denom)
}

/// Trial inputs for the maximal probe: a delta, indicators of `dZ^n` for `d | N`, `d ∈ {2, 3}`,
/// and `randoms` random `±1` functions.
pub fn standard_trials<T: Real>(side: usize, dim: usize, randoms: usize, seed: u64) -> Result<Vec<(String, GridFunction<T>)>> {
    let mut out = vec![("delta".to_string(), GridFunction::delta(GridKind::Torus, side, dim)?)];
    for d in [2usize, 3] {
        if side % d == 0 {
            let g = GridFunction::from_fn(GridKind::Torus, side, dim, |y| {
                let v = if y.iter().all(|&c| c % d as i64 == 0) { T::one() } else { T::zero() };
                Complex::new(v, T::zero())
            })?;
            out.push((format!("indicator_{d}Z"), g));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..randoms {
        let values: Vec<Complex<T>> = (0..side.pow(dim as u32))
            .map(|_| Complex::new(if rng.gen::<bool>() { T::one() } else { -T::one() }, T::zero()))
            .collect();
        out.push((format!("random_{i}"), GridFunction::torus(side, dim, values)?));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRatio {
    pub label: String,
    pub ratio: f64,
    /// Best ratio over this trial and all before it.
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MstarProbe {
    pub j: u32,
    pub p: f64,
    pub side: usize,
    pub lambdas: Vec<u64>,
    pub trials: Vec<TrialRatio>,
    /// Best lower bound on `‖M_{*,j}‖_{p→p}`.
    pub lower_bound: f64,
    /// `lower_bound / (j² 2^j)`
    pub scaled: f64,
}

/// Empirical lower bound for `sup_λ |M_{λ,j} f|` with the normalized main terms on `Z_N^n`.
pub fn probe_mstar_j<T: Real>(
    ctx: &MultiplierContext<'_, T>,
    lambdas: &[u64],
    j: u32,
    p: f64,
    side: usize,
    trials: &[(String, GridFunction<T>)],
) -> Result<MstarProbe> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty λ list".into()));
    }
    let dim = ctx.form().dim();
    let grids = lambdas
        .iter()
        .map(|&l| {
            let count = OmegaHat::<T>::new(ctx.form(), ctx.psi(), l, ctx.budget())?.count();
            let norm = ctx.normalization(l, count);
            multiplier_grid(side, dim, |xi| Ok(ctx.main_term_j(l, j, xi)? * norm))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0.0f64;
    let mut rows = Vec::with_capacity(trials.len());
    for (label, f) in trials {
        let outs = grids.iter().map(|g| apply_multiplier_grid(f, g)).collect::<Result<Vec<_>>>()?;
        let ratio = norm_ratio(&maximal_of(&outs)?, f, p)?;
        best = best.max(ratio);
        rows.push(TrialRatio { label: label.clone(), ratio, best_so_far: best });
    }
    let scale = (j as f64).powi(2) * 2f64.powi(j as i32);
    Ok(MstarProbe { j, p, side, lambdas: lambdas.to_vec(), trials: rows, lower_bound: best, scaled: best / scale })
}

/// Fits `c` from the smallest `j` and checks `lower_bound ≤ c j² 2^j` for the rest.
pub fn mstar_consistency(probes: &[MstarProbe]) -> (f64, bool) {
    let Some(first) = probes.iter().min_by_key(|p| p.j) else {
        return (0.0, true);
    };
    let c = first.scaled;
    let ok = probes.iter().all(|p| p.scaled <= c * (1.0 + 1e-12));
    (c, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Complex<f64> {
        Complex::new(v, 0.0)
    }

    #[test]
    fn delta_average_is_normalized_indicator() {
        let f = IntegralForm::sphere(3);
        let b = Budget::default();
        let delta = GridFunction::<f64>::delta(GridKind::Box, 0, 3).unwrap();
        let out = apply_average_for(&f, &CutoffPsi::Unit, 2, &delta, &b).unwrap();
        assert_eq!(out.radius(), Some(1));
        for i in 0..out.len() {
            let y = out.point(i);
            let expected = if f.eval_i128(&y) == Some(2) { 1.0 / 12.0 } else { 0.0 };
            assert!((out.values()[i].re - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_on_torus_is_fixed() {
        let f = IntegralForm::sphere(3);
        let one = GridFunction::<f64>::from_fn(GridKind::Torus, 6, 3, |_| c(1.0)).unwrap();
        let out = apply_average_for(&f, &CutoffPsi::Unit, 3, &one, &Budget::default()).unwrap();
        assert!(out.values().iter().all(|v| (v - c(1.0)).norm() < 1e-14));
    }

    #[test]
    fn parity_example() {
        let f = IntegralForm::sphere(5);
        let even = GridFunction::<f64>::from_fn(GridKind::Torus, 4, 5, |y| {
            c(if y.iter().sum::<i64>() % 2 == 0 { 1.0 } else { 0.0 })
        })
        .unwrap();
        let out = apply_average_for(&f, &CutoffPsi::Unit, 1, &even, &Budget::default()).unwrap();
        // Every unit step flips parity.
        assert!((out.get(&[1, 0, 0, 0, 0]).re - 1.0).abs() < 1e-15);
        assert!(out.get(&[0, 0, 0, 0, 0]).re.abs() < 1e-15);
    }

    #[test]
    fn identity_multiplier() {
        let f = GridFunction::<f64>::from_fn(GridKind::Torus, 5, 2, |y| c((y[0] * 3 + y[1]) as f64)).unwrap();
        let g = apply_multiplier(&f, |_| Ok(c(1.0))).unwrap();
        assert!(f.sub(&g).unwrap().norm(f64::INFINITY) < 1e-12);
        let boxed = GridFunction::<f64>::delta(GridKind::Box, 2, 2).unwrap();
        assert!(apply_multiplier(&boxed, |_| Ok(c(1.0))).is_err());
    }

    #[test]
    fn maximal_examples() {
        let f = IntegralForm::sphere(5);
        let b = Budget::default();
        let delta = GridFunction::<f64>::delta(GridKind::Box, 0, 5).unwrap();
        let single = maximal_apply(&f, &CutoffPsi::Unit, &[4], &delta, &b).unwrap();
        let direct = apply_average_for(&f, &CutoffPsi::Unit, 4, &delta, &b).unwrap().abs();
        assert!(single.sub(&direct).unwrap().norm(f64::INFINITY) < 1e-15);
        let both = maximal_apply(&f, &CutoffPsi::Unit, &[1, 4], &delta, &b).unwrap();
        assert!((both.get(&[1, 0, 0, 0, 0]).re - 0.1).abs() < 1e-15);
        assert!((both.get(&[2, 0, 0, 0, 0]).re - 1.0 / 90.0).abs() < 1e-15);
        assert!(maximal_apply(&f, &CutoffPsi::Unit, &[], &delta, &b).is_err());
    }

    #[test]
    fn norm_ratio_examples() {
        let f = GridFunction::<f64>::from_fn(GridKind::Torus, 4, 2, |y| c((y[0] + 1) as f64)).unwrap();
        assert!((norm_ratio(&f, &f, 1.5).unwrap() - 1.0).abs() < 1e-14);
        let zero = GridFunction::<f64>::from_fn(GridKind::Torus, 4, 2, |_| c(0.0)).unwrap();
        assert!(norm_ratio(&f, &zero, 2.0).is_err());
        let form = IntegralForm::sphere(3);
        let delta = GridFunction::<f64>::delta(GridKind::Box, 0, 3).unwrap();
        let out = apply_average_for(&form, &CutoffPsi::Unit, 2, &delta, &Budget::default()).unwrap();
        let p = 1.5;
        let expected = 12f64.powf(1.0 / p - 1.0);
        assert!((norm_ratio(&out, &delta, p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let f = GridFunction::<f64>::from_fn(GridKind::Box, 2, 2, |y| Complex::new(y[0] as f64, y[1] as f64 * 0.5)).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = GridFunction::<f64>::read_binary(buf.as_slice()).unwrap();
        assert_eq!(g.kind(), GridKind::Box);
        assert_eq!(f.values(), g.values());
    }
}
