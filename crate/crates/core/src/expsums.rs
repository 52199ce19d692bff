//! Complete exponential sums: normalized Weyl sums `F_q(a, 𝐚)`, the generalized sums
//! `F(a, q, 𝐚, 𝐪)`, the decay exponent `α_Q`, and the arithmetic identities linking them to
//! solution counts modulo `q`.

use std::collections::HashMap;

use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{divisors, gcd, is_squarefree, lcm, mobius, pow_mod, units};
use crate::counting::{linear_fit, mod_solution_table};
use crate::dft::{dft_nd, Direction};
use crate::error::{Budget, Error, Result};
use crate::forms::IntegralForm;
use crate::scalar::{e, KahanSum, Real, RootTable};

/// `F_q(a, 𝐚)` with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylValue<T> {
    pub q: u64,
    pub a: u64,
    pub avec: Vec<u64>,
    pub value: Complex<T>,
}

/// `F(a, q, 𝐚, 𝐪)` with its parameters; `l = lcm(q, q_1, …, q_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedWeylValue<T> {
    pub a: u64,
    pub q: u64,
    pub avec: Vec<i64>,
    pub qvec: Vec<u64>,
    pub l: u64,
    pub value: Complex<T>,
}

fn check_params(form: &IntegralForm, q: u64, a: u64, avec: &[u64]) -> Result<()> {
    if q == 0 {
        return Err(Error::InvalidParameter("q must be positive".into()));
    }
    if avec.len() != form.dim() {
        return Err(Error::DimensionMismatch { expected: form.dim(), got: avec.len() });
    }
    if a >= q || avec.iter().any(|&v| v >= q) {
        return Err(Error::InvalidParameter(format!("residues must lie in Z_{q}")));
    }
    Ok(())
}

/// `(1/q) Σ_{s ∈ Z_q} e((c s^k a + s b)/q)`.
fn coordinate_sum<T: Real>(c: i64, k: u32, a: u64, b: u64, roots: &RootTable<T>) -> Complex<T> {
    let q = roots.modulus();
    let qi = q as i128;
    let ca = (c as i128).rem_euclid(qi) * a as i128 % qi;
    let acc: KahanSum<T> = (0..q)
        .map(|s| {
            let phase = (pow_mod(s as i128, k, q) as i128 * ca + s as i128 * b as i128) % qi;
            roots.at(phase as u64)
        })
        .collect();
    acc.value() / T::of_usize(q as usize)
}

/// Odometer over `Z_q^n`.
fn next_residue(s: &mut [i64], q: u64) -> bool {
    for v in s.iter_mut().rev() {
        *v += 1;
        if (*v as u64) < q {
            return true;
        }
        *v = 0;
    }
    false
}

/// `q^{-n} Σ_{s ∈ Z_q^n} e((Q(s) a + s·𝐚)/q)` by direct summation over `Z_q^n`.
pub fn weyl_sum_direct<T: Real>(form: &IntegralForm, q: u64, a: u64, avec: &[u64], budget: &Budget) -> Result<WeylValue<T>> {
    check_params(form, q, a, avec)?;
    let n = form.dim();
    budget.check((q as u128).pow(n as u32))?;
    let roots = RootTable::<T>::new(q);
    let qi = q as i128;
    let mut s = vec![0i64; n];
    let mut acc = KahanSum::new();
    loop {
        let lin: i128 = s.iter().zip(avec).map(|(&x, &b)| x as i128 * b as i128).sum();
        let phase = (form.eval_mod(&s, q) as i128 * a as i128 + lin) % qi;
        acc.add(roots.at(phase as u64));
        if !next_residue(&mut s, q) {
            break;
        }
    }
    let value = acc.value() / T::of(q as f64).powi(n as i32);
    Ok(WeylValue { q, a, avec: avec.to_vec(), value })
}

/// `F_q(a, 𝐚)`; diagonal forms factor into `n` one-dimensional sums.
pub fn weyl_sum<T: Real>(form: &IntegralForm, q: u64, a: u64, avec: &[u64], budget: &Budget) -> Result<WeylValue<T>> {
    check_params(form, q, a, avec)?;
    match form.diagonal_coefficients() {
        Some(coeffs) => {
            budget.check(form.dim() as u128 * q as u128)?;
            let roots = RootTable::<T>::new(q);
            let value = coeffs
                .iter()
                .zip(avec)
                .fold(Complex::new(T::one(), T::zero()), |acc, (&c, &b)| {
                    acc * coordinate_sum(c, form.degree(), a, b, &roots)
                });
            Ok(WeylValue { q, a, avec: avec.to_vec(), value })
        }
        None => weyl_sum_direct(form, q, a, avec, budget),
    }
}

/// `F(a, q, 𝐚, 𝐪) = L^{-n} Σ_{s ∈ Z_L^n} e(Q(s) a/q + Σ s_i a_i/q_i)`.
pub fn generalized_weyl_sum<T: Real>(
    form: &IntegralForm,
    a: u64,
    q: u64,
    avec: &[i64],
    qvec: &[u64],
    budget: &Budget,
) -> Result<GeneralizedWeylValue<T>> {
    let n = form.dim();
    if avec.len() != n || qvec.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: avec.len().min(qvec.len()) });
    }
    if q == 0 || qvec.contains(&0) {
        return Err(Error::InvalidParameter("denominators must be positive".into()));
    }
    let l = qvec.iter().fold(q, |acc, &qi| lcm(acc, qi));
    let a = a % q;
    // Phase numerator modulo `m` for one coordinate, with `m` a common multiple of q and q_i.
    let coord_phase = |c: i128, s: i128, ai: i64, qi: u64, m: u64| -> i128 {
        let mi = m as i128;
        let lin = (ai as i128).rem_euclid(qi as i128) * (m / qi) as i128 % mi * s % mi;
        (c * a as i128 % mi * (m / q) as i128 % mi * pow_mod(s, form.degree(), m) as i128 + lin) % mi
    };
    let value = match form.diagonal_coefficients() {
        Some(coeffs) => {
            let mut value = Complex::new(T::one(), T::zero());
            for i in 0..n {
                let li = lcm(q, qvec[i]);
                budget.check(li as u128)?;
                let roots = RootTable::<T>::new(li);
                let c = (coeffs[i] as i128).rem_euclid(li as i128);
                let acc: KahanSum<T> = (0..li)
                    .map(|s| roots.at(coord_phase(c, s as i128, avec[i], qvec[i], li) as u64))
                    .collect();
                value = value * (acc.value() / T::of_usize(li as usize));
            }
            value
        }
        None => {
            budget.check((l as u128).pow(n as u32))?;
            let roots = RootTable::<T>::new(l);
            let li = l as i128;
            let mut s = vec![0i64; n];
            let mut acc = KahanSum::new();
            loop {
                let qpart = form.eval_mod(&s, q) as i128 * a as i128 % li * (l / q) as i128 % li;
                let lin: i128 = (0..n)
                    .map(|i| (avec[i] as i128).rem_euclid(qvec[i] as i128) * (l / qvec[i]) as i128 % li * s[i] as i128 % li)
                    .sum();
                acc.add(roots.at(((qpart + lin) % li) as u64));
                if !next_residue(&mut s, l) {
                    break;
                }
            }
            acc.value() / T::of(l as f64).powi(n as i32)
        }
    };
    Ok(GeneralizedWeylValue { a, q, avec: avec.to_vec(), qvec: qvec.to_vec(), l, value })
}

/// A random parameter tuple for the vanishing check: `a ∈ U_q`, `a_i ∈ U_{q_i}`, and at least
/// one `q_i` not dividing `q`. Returns `(a, q, 𝐚, 𝐪)`.
pub fn random_vanishing_tuple<R: Rng>(rng: &mut R, n: usize, q_max: u64) -> (u64, u64, Vec<i64>, Vec<u64>) {
    let pick_unit = |rng: &mut R, m: u64| -> u64 {
        let u = units(m);
        u[rng.gen_range(0..u.len())]
    };
    let q = rng.gen_range(1..=q_max);
    let a = pick_unit(rng, q);
    let mut qvec: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=q_max)).collect();
    if qvec.iter().all(|&qi| q % qi == 0) {
        let i = rng.gen_range(0..n);
        qvec[i] = loop {
            let cand = rng.gen_range(2..=q_max.max(2) + 1);
            if q % cand != 0 {
                break cand;
            }
        };
    }
    let avec = qvec.iter().map(|&qi| pick_unit(rng, qi) as i64).collect();
    (a, q, avec, qvec)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QFilter {
    #[default]
    Squarefree,
    All,
}

impl QFilter {
    pub fn accepts(&self, q: u64) -> bool {
        match self {
            QFilter::Squarefree => is_squarefree(q),
            QFilter::All => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaOptions {
    pub q_min: u64,
    pub filter: QFilter,
    /// Largest `q^n` for which non-diagonal forms get the exhaustive supremum.
    pub exhaustive_cap: u64,
    /// Number of random `(a, 𝐚)` pairs drawn when the supremum is sampled.
    pub samples: usize,
    pub seed: u64,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        Self { q_min: 2, filter: QFilter::Squarefree, exhaustive_cap: 1 << 20, samples: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub q: u64,
    /// `s(q) = sup_{a ∈ U_q, 𝐚 ∈ Z_q^n} |F_q(a, 𝐚)|`
    pub sup: f64,
    pub sampled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub form: String,
    pub q_max: u64,
    pub filter: QFilter,
    pub points: Vec<AlphaPoint>,
    /// The `q` that entered the fit.
    pub used: Vec<u64>,
    pub alpha_hat: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub sampled: bool,
}

/// `max_{b ∈ Z_q} |(1/q) Σ_s e((c s^k a + s b)/q)|`.
fn coordinate_max(c: i64, k: u32, a: u64, roots: &RootTable<f64>) -> f64 {
    let q = roots.modulus();
    let qi = q as i128;
    let ca = (c as i128).rem_euclid(qi) * a as i128 % qi;
    let mut line: Vec<Complex<f64>> = (0..q)
        .map(|s| roots.at((pow_mod(s as i128, k, q) as i128 * ca % qi) as u64))
        .collect();
    dft_nd(&mut line, q as usize, 1, Direction::Forward);
    line.iter().map(|z| z.norm()).fold(0.0, f64::max) / q as f64
}

/// `s(q)`, and whether it was obtained by sampling.
///
/// For diagonal forms the supremum over `𝐚` of a product of independent coordinate factors is
/// the product of the coordinate maxima, so the value is exact at cost `φ(q)·q log q`.
pub fn weyl_supremum(form: &IntegralForm, q: u64, options: &AlphaOptions, budget: &Budget) -> Result<(f64, bool)> {
    let us = units(q);
    let n = form.dim();
    if let Some(coeffs) = form.diagonal_coefficients() {
        budget.check(us.len() as u128 * n as u128 * q as u128)?;
        let roots = RootTable::<f64>::new(q);
        let mut distinct: Vec<(i64, i32)> = Vec::new();
        for &c in coeffs {
            match distinct.iter_mut().find(|(v, _)| *v == c) {
                Some(entry) => entry.1 += 1,
                None => distinct.push((c, 1)),
            }
        }
        let sup = us
            .par_iter()
            .map(|&a| {
                distinct
                    .iter()
                    .map(|&(c, mult)| coordinate_max(c, form.degree(), a, &roots).powi(mult))
                    .product::<f64>()
            })
            .reduce(|| 0.0, f64::max);
        return Ok((sup, false));
    }
    let size = (q as u128).pow(n as u32);
    if size <= options.exhaustive_cap as u128 {
        budget.check(us.len() as u128 * size * n as u128)?;
        let roots = RootTable::<f64>::new(q);
        let side = q as usize;
        let mut sup = 0.0f64;
        for &a in &us {
            let mut data = Vec::with_capacity(size as usize);
            let mut s = vec![0i64; n];
            loop {
                data.push(roots.at((form.eval_mod(&s, q) as u128 * a as u128 % q as u128) as u64));
                if !next_residue(&mut s, q) {
                    break;
                }
            }
            dft_nd(&mut data, side, n, Direction::Forward);
            let m = data.iter().map(|z| z.norm()).fold(0.0, f64::max) / size as f64;
            sup = sup.max(m);
        }
        return Ok((sup, false));
    }
    budget.check(options.samples as u128 * size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ q.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut sup = 0.0f64;
    for _ in 0..options.samples {
        let a = us[rng.gen_range(0..us.len())];
        let avec: Vec<u64> = (0..n).map(|_| rng.gen_range(0..q)).collect();
        sup = sup.max(weyl_sum_direct::<f64>(form, q, a, &avec, budget)?.value.norm());
    }
    Ok((sup, true))
}

/// Least-squares fit of `log s(q) ≈ c − α log q` over the filtered `q ∈ [q_min, q_max]`.
pub fn estimate_alpha(form: &IntegralForm, q_max: u64, options: &AlphaOptions, budget: &Budget) -> Result<AlphaEstimate> {
    if q_max < 8 {
        return Err(Error::InvalidParameter(format!("q_max must be at least 8, got {q_max}")));
    }
    let qs: Vec<u64> = (options.q_min.max(1)..=q_max).filter(|&q| options.filter.accepts(q)).collect();
    if qs.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: qs.len() });
    }
    let points = qs
        .iter()
        .map(|&q| weyl_supremum(form, q, options, budget).map(|(sup, sampled)| AlphaPoint { q, sup, sampled }))
        .collect::<Result<Vec<_>>>()?;
    let usable: Vec<&AlphaPoint> = points.iter().filter(|p| p.q >= 2 && p.sup > 0.0).collect();
    if usable.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: usable.len() });
    }
    let x: Vec<f64> = usable.iter().map(|p| (p.q as f64).ln()).collect();
    let y: Vec<f64> = usable.iter().map(|p| p.sup.ln()).collect();
    let (slope, intercept, _) = linear_fit(&x, &y);
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - (intercept + slope * xi)).collect();
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let stderr = (ssr / (m - 2.0) / sxx).sqrt();
    Ok(AlphaEstimate {
        form: form.name().to_string(),
        q_max,
        filter: options.filter,
        sampled: points.iter().any(|p| p.sampled),
        used: usable.iter().map(|p| p.q).collect(),
        points,
        alpha_hat: -slope,
        stderr,
        intercept,
        residuals,
    })
}

/// Caches `|V_r(d)|` tables and `F_d(a, 0)` values across identity checks.
pub struct ArithmeticCache<'a> {
    form: &'a IntegralForm,
    budget: Budget,
    mobius: fn(u64) -> i64,
    tables: HashMap<u64, Vec<u64>>,
    zero_sums: HashMap<u64, Vec<(u64, Complex<f64>)>>,
}

/// Both sides of `Σ_{d|q} μ(q/d) d^{1−n}|V_λ(d)| = Σ_{a ∈ U_q} F_q(a,0) e(−λa/q)` and the
/// variant with `(d^{1−n}|V_λ(d)| − 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FSides {
    pub q: u64,
    pub lambda: i64,
    pub counts_side: f64,
    pub shifted_side: f64,
    pub weyl_side: Complex<f64>,
}

impl FSides {
    pub fn residual(&self) -> f64 {
        let w = self.weyl_side;
        (Complex::new(self.counts_side, 0.0) - w)
            .norm()
            .max((Complex::new(self.shifted_side, 0.0) - w).norm())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CKReport {
    pub q: u64,
    /// `max_λ q^{1−n}|V_λ(q)|`
    pub c_max: f64,
    /// `max_{t ∈ U_q} |F_q(t, 0)|`
    pub k_lhs: f64,
    /// `sup_r |Σ_{d|q} μ(q/d)(d^{1−n}|V_r(d)| − 1)|`
    pub k_rhs: f64,
    pub k_constant: f64,
    pub k_holds: bool,
}

pub const IDENTITY_TOLERANCE: f64 = 1e-9;

impl<'a> ArithmeticCache<'a> {
    pub fn new(form: &'a IntegralForm, budget: Budget) -> Self {
        Self::with_mobius(form, budget, mobius)
    }

    /// Uses a replacement Möbius function, for mutation testing.
    pub fn with_mobius(form: &'a IntegralForm, budget: Budget, mobius: fn(u64) -> i64) -> Self {
        Self { form, budget, mobius, tables: HashMap::new(), zero_sums: HashMap::new() }
    }

    /// `t ↦ |V_t(d)|`.
    pub fn table(&mut self, d: u64) -> Result<&[u64]> {
        if !self.tables.contains_key(&d) {
            let t = mod_solution_table(self.form, d, &self.budget)?;
            self.tables.insert(d, t);
        }
        Ok(&self.tables[&d])
    }

    /// `d^{1−n}|V_λ(d)|`
    pub fn density(&mut self, lambda: i64, d: u64) -> Result<f64> {
        let n = self.form.dim() as i32;
        let v = self.table(d)?[lambda.rem_euclid(d as i64) as usize];
        Ok(v as f64 / (d as f64).powi(n - 1))
    }

    /// `(a, F_d(a, 0))` for `a ∈ U_d`.
    pub fn zero_sums(&mut self, d: u64) -> Result<&[(u64, Complex<f64>)]> {
        if !self.zero_sums.contains_key(&d) {
            let zero = vec![0u64; self.form.dim()];
            let vals = units(d)
                .into_iter()
                .map(|a| Ok((a, weyl_sum::<f64>(self.form, d, a, &zero, &self.budget)?.value)))
                .collect::<Result<Vec<_>>>()?;
            self.zero_sums.insert(d, vals);
        }
        Ok(&self.zero_sums[&d])
    }

    /// `Σ_{a ∈ U_d} F_d(a, 0) e(−λa/d)`
    pub fn twisted_sum(&mut self, lambda: i64, d: u64) -> Result<Complex<f64>> {
        let l = lambda.rem_euclid(d as i64) as u64;
        Ok(self
            .zero_sums(d)?
            .iter()
            .map(|&(a, f)| f * e(-((l * a % d) as f64) / d as f64))
            .sum())
    }

    pub fn f_sides(&mut self, q: u64, lambda: i64) -> Result<FSides> {
        let mut counts_side = 0.0;
        let mut shifted_side = 0.0;
        for d in divisors(q) {
            let mu = (self.mobius)(q / d) as f64;
            if mu != 0.0 {
                let dens = self.density(lambda, d)?;
                counts_side += mu * dens;
                shifted_side += mu * (dens - 1.0);
            }
        }
        Ok(FSides { q, lambda, counts_side, shifted_side, weyl_side: self.twisted_sum(lambda, q)? })
    }

    /// Residual of identity (F); requires `q ≥ 2`.
    pub fn f_check(&mut self, q: u64, lambda: i64) -> Result<f64> {
        if q < 2 {
            return Err(Error::InvalidParameter(
                "identity (F) needs q >= 2: at q = 1 the shifted side is 0 while the others are 1".into(),
            ));
        }
        Ok(self.f_sides(q, lambda)?.residual())
    }

    /// Residual of `q^{1−n}|V_λ(q)| = Σ_{d|q} Σ_{a ∈ U_d} F_d(a, 0) e(−λa/d)`.
    pub fn u_check(&mut self, q: u64, lambda: i64) -> Result<f64> {
        let lhs = self.density(lambda, q)?;
        let mut rhs = Complex::new(0.0, 0.0);
        for d in divisors(q) {
            rhs += self.twisted_sum(lambda, d)?;
        }
        Ok((Complex::new(lhs, 0.0) - rhs).norm())
    }

    pub fn ck_check(&mut self, q: u64) -> Result<CKReport> {
        if q < 2 {
            return Err(Error::InvalidParameter("bounds (C) and (K) are checked for q >= 2".into()));
        }
        let mut c_max = 0.0f64;
        let mut k_rhs = 0.0f64;
        for r in 0..q as i64 {
            c_max = c_max.max(self.density(r, q)?);
            k_rhs = k_rhs.max(self.f_sides(q, r)?.shifted_side.abs());
        }
        let k_lhs = self.zero_sums(q)?.iter().map(|(_, f)| f.norm()).fold(0.0, f64::max);
        Ok(CKReport { q, c_max, k_lhs, k_rhs, k_constant: 1.0, k_holds: k_lhs <= k_rhs + IDENTITY_TOLERANCE })
    }
}

pub fn identity_f_check(form: &IntegralForm, q: u64, lambda: i64, budget: &Budget) -> Result<f64> {
    ArithmeticCache::new(form, *budget).f_check(q, lambda)
}

pub fn identity_u_check(form: &IntegralForm, q: u64, lambda: i64, budget: &Budget) -> Result<f64> {
    ArithmeticCache::new(form, *budget).u_check(q, lambda)
}

pub fn bound_c_and_k_check(form: &IntegralForm, q: u64, budget: &Budget) -> Result<CKReport> {
    ArithmeticCache::new(form, *budget).ck_check(q)
}

/// Whether `gcd(a, q) = 1` under the `U_1 = {0}` convention.
pub fn in_units(a: u64, q: u64) -> bool {
    if q == 1 {
        a == 0
    } else {
        gcd(a, q) == 1
    }
}
