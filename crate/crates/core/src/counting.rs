//! Lattice-point counts: representation numbers `r(λ)`, solution counts `|V_λ(d)|`,
//! congruence-restricted counts and ball counts.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Budget, Error, Result};
use crate::forms::{CutoffPsi, FormKind, IntegralForm};
use crate::special::ball_volume;

/// Default `R_0`: the smallest window base accepted by [`restricted_maximizer`].
pub const DEFAULT_R0: u64 = 1 << 10;
/// Default `c_0` in `N(λ; b) ≥ c_0 p^{-J(n-1)} λ^{n/k-1}`.
pub const DEFAULT_C0: f64 = 0.05;

const CHUNK: usize = 4096;
const AUTO_TRANSFORM_WORK: u128 = 1 << 26;

/// Coordinatewise constraint `x ≡ b (mod q)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Congruence {
    pub modulus: u64,
    pub residues: Vec<u64>,
}

impl Congruence {
    pub fn new(modulus: u64, residues: Vec<u64>) -> Result<Self> {
        if modulus == 0 {
            return Err(Error::InvalidParameter("congruence modulus must be positive".into()));
        }
        let residues = residues.into_iter().map(|r| r % modulus).collect();
        Ok(Self { modulus, residues })
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        let q = self.modulus as i64;
        x.iter().zip(&self.residues).all(|(&v, &b)| v.rem_euclid(q) as u64 == b)
    }

    pub fn contains_zero(&self) -> bool {
        self.residues.iter().all(|&b| b == 0)
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.residues.len() != dim {
            Err(Error::DimensionMismatch { expected: dim, got: self.residues.len() })
        } else {
            Ok(())
        }
    }
}

/// All residue vectors of `Z_q^n` in lexicographic order.
pub fn residue_vectors(q: u64, n: usize) -> impl Iterator<Item = Vec<u64>> {
    let total = (q as u128).pow(n as u32);
    (0..total).map(move |mut idx| {
        let mut b = vec![0u64; n];
        for slot in b.iter_mut().rev() {
            *slot = (idx % q as u128) as u64;
            idx /= q as u128;
        }
        b
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMethod {
    /// Sparse-by-dense direct summation.
    #[default]
    Schoolbook,
    /// FFT product, rounded and verified against integer totals.
    Transform,
    /// Transform when the schoolbook work exceeds a fixed threshold.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableBackend {
    Convolution(ConvolutionMethod),
    BruteForce,
}

/// Representation counts `λ ↦ #{x ∈ Z^n : Q(x) = λ, x ≡ b mod q}` for `λ ≤ λ_cap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepCountTable {
    pub form: String,
    pub dim: usize,
    pub degree: u32,
    pub lambda_cap: u64,
    pub congruence: Option<Congruence>,
    pub backend: TableBackend,
    counts: Vec<u64>,
}

impl RepCountTable {
    /// Builds with the convolution backend for positive definite diagonal forms and by brute
    /// force otherwise.
    pub fn build(
        form: &IntegralForm,
        lambda_cap: u64,
        congruence: Option<&Congruence>,
        budget: &Budget,
    ) -> Result<Self> {
        let backend = if form.diagonal_coefficients().is_some() && form.is_positive_definite() {
            TableBackend::Convolution(ConvolutionMethod::Schoolbook)
        } else {
            TableBackend::BruteForce
        };
        build_rep_table(form, lambda_cap, congruence, backend, budget)
    }

    pub fn get(&self, lambda: u64) -> Result<u64> {
        self.counts
            .get(lambda as usize)
            .copied()
            .ok_or(Error::CapExceeded { lambda, cap: self.lambda_cap })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `#{x : Q(x) ≤ R}` under the table's constraint.
    pub fn ball(&self, radius: u64) -> Result<u64> {
        if radius > self.lambda_cap {
            return Err(Error::CapExceeded { lambda: radius, cap: self.lambda_cap });
        }
        Ok(self.counts[..=radius as usize].iter().sum())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda,count")?;
        for (l, c) in self.counts.iter().enumerate() {
            writeln!(w, "{l},{c}")?;
        }
        Ok(())
    }

    /// Little-endian `u64` header `{n, k, q, λ_cap}` (`q = 1` when unconstrained) followed by
    /// `λ_cap + 1` little-endian `u64` counts.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let q = self.congruence.as_ref().map_or(1, |c| c.modulus);
        for v in [self.dim as u64, self.degree as u64, q, self.lambda_cap] {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in &self.counts {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary layout back. Residues are not part of the format, so the congruence of
    /// the result only records the modulus (residues set to 0).
    pub fn read_binary<R: Read>(mut r: R, form: &str) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let dim = next(&mut r)? as usize;
        let degree = next(&mut r)? as u32;
        let q = next(&mut r)?;
        let cap = next(&mut r)?;
        let counts = (0..=cap).map(|_| next(&mut r)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            form: form.to_string(),
            dim,
            degree,
            lambda_cap: cap,
            congruence: (q != 1).then(|| Congruence { modulus: q, residues: vec![0; dim] }),
            backend: TableBackend::BruteForce,
            counts,
        })
    }
}

type Sparse = Vec<(usize, u64)>;

/// `h(m) = #{x ≡ b mod q : c x^k = m}`, `0 ≤ m ≤ cap`, for `c > 0` and even `k`.
fn coordinate_counts(c: i64, k: u32, cap: u64, modulus: u64, residue: u64) -> Sparse {
    let mut out: Vec<(usize, u64)> = Vec::new();
    let q = modulus as i64;
    let mut t: i64 = 0;
    loop {
        let Some(v) = (t as i128).checked_pow(k).and_then(|p| p.checked_mul(c as i128)) else {
            break;
        };
        if v > cap as i128 {
            break;
        }
        let mut cnt = 0u64;
        if t.rem_euclid(q) as u64 == residue {
            cnt += 1;
        }
        if t > 0 && (-t).rem_euclid(q) as u64 == residue {
            cnt += 1;
        }
        if cnt > 0 {
            out.push((v as usize, cnt));
        }
        t += 1;
    }
    out
}

fn sparse_to_dense(h: &Sparse, cap: u64) -> Vec<u64> {
    let mut dense = vec![0u64; cap as usize + 1];
    for &(v, c) in h {
        dense[v] += c;
    }
    dense
}

fn convolve_schoolbook(acc: &[u64], h: &Sparse) -> Result<Vec<u64>> {
    let mut out = vec![0u64; acc.len()];
    out.par_chunks_mut(CHUNK).enumerate().try_for_each(|(ci, chunk)| {
        let base = ci * CHUNK;
        for (off, slot) in chunk.iter_mut().enumerate() {
            let m = base + off;
            let mut s = 0u64;
            for &(v, c) in h {
                if v > m {
                    break;
                }
                let a = acc[m - v];
                if a != 0 {
                    s = a
                        .checked_mul(c)
                        .and_then(|t| s.checked_add(t))
                        .ok_or(Error::Overflow("representation count exceeds u64"))?;
                }
            }
            *slot = s;
        }
        Ok::<(), Error>(())
    })?;
    Ok(out)
}

fn convolve_transform(acc: &[u64], h: &Sparse) -> Result<Vec<u64>> {
    let lh = h.last().map_or(1, |&(v, _)| v + 1);
    let full = acc.len() + lh - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = acc.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b = vec![Complex::new(0.0, 0.0); size];
    for &(v, c) in h {
        b[v].re += c as f64;
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    let mut max_err = 0.0f64;
    let mut total: u128 = 0;
    let mut out = Vec::with_capacity(acc.len());
    for (i, z) in a.iter().take(full).enumerate() {
        let x = z.re * scale;
        let r = x.round();
        max_err = max_err.max((x - r).abs());
        if r < 0.0 || r >= u64::MAX as f64 {
            return Err(Error::Overflow("transform convolution out of range"));
        }
        total += r as u128;
        if i < acc.len() {
            out.push(r as u64);
        }
    }
    let expected = acc.iter().map(|&v| v as u128).sum::<u128>() * h.iter().map(|&(_, c)| c as u128).sum::<u128>();
    if max_err >= 0.25 || total != expected {
        return Err(Error::Overflow("transform convolution lost exactness"));
    }
    Ok(out)
}

fn convolve(acc: &[u64], h: &Sparse, method: ConvolutionMethod) -> Result<Vec<u64>> {
    match method {
        ConvolutionMethod::Schoolbook => convolve_schoolbook(acc, h),
        ConvolutionMethod::Transform => convolve_transform(acc, h),
        ConvolutionMethod::Auto => {
            if acc.len() as u128 * h.len() as u128 > AUTO_TRANSFORM_WORK {
                convolve_transform(acc, h)
            } else {
                convolve_schoolbook(acc, h)
            }
        }
    }
}

fn require_pd_diagonal(form: &IntegralForm) -> Result<&[i64]> {
    let coeffs = form
        .diagonal_coefficients()
        .ok_or_else(|| Error::Unsupported("convolution backend needs a diagonal form".into()))?;
    if !form.is_positive_definite() {
        return Err(Error::Unsupported(
            "convolution backend rejects negative monomial contributions (form not positive definite)".into(),
        ));
    }
    Ok(coeffs)
}

/// Builds a [`RepCountTable`] with the requested backend.
pub fn build_rep_table(
    form: &IntegralForm,
    lambda_cap: u64,
    congruence: Option<&Congruence>,
    backend: TableBackend,
    budget: &Budget,
) -> Result<RepCountTable> {
    if let Some(c) = congruence {
        c.check(form.dim())?;
    }
    let (q, res) = match congruence {
        Some(c) => (c.modulus, c.residues.clone()),
        None => (1, vec![0; form.dim()]),
    };
    let counts = match backend {
        TableBackend::Convolution(method) => {
            let coeffs = require_pd_diagonal(form)?;
            let hs: Vec<Sparse> = coeffs
                .iter()
                .zip(&res)
                .map(|(&c, &b)| coordinate_counts(c, form.degree(), lambda_cap, q, b))
                .collect();
            let work: u128 = hs.iter().map(|h| h.len() as u128).sum::<u128>() * (lambda_cap as u128 + 1);
            budget.check(work)?;
            let mut acc = sparse_to_dense(&hs[0], lambda_cap);
            for h in &hs[1..] {
                acc = convolve(&acc, h, method)?;
            }
            acc
        }
        TableBackend::BruteForce => {
            let psi = CutoffPsi::Unit;
            let ranges = search_ranges(form, &psi, lambda_cap, congruence)?;
            budget.check(box_size(&ranges))?;
            let mut counts = vec![0u64; lambda_cap as usize + 1];
            visit_points(form, &ranges, lambda_cap as i128, &mut |_, v| {
                if v >= 0 {
                    counts[v as usize] += 1;
                }
            })?;
            counts
        }
    };
    Ok(RepCountTable {
        form: form.name().to_string(),
        dim: form.dim(),
        degree: form.degree(),
        lambda_cap,
        congruence: congruence.cloned(),
        backend,
        counts,
    })
}

/// Candidate coordinate values for the real solutions of `Q(x) ≤ limit` on the support of `ψ`,
/// filtered by the congruence.
pub fn search_ranges(
    form: &IntegralForm,
    psi: &CutoffPsi,
    limit: u64,
    congruence: Option<&Congruence>,
) -> Result<Vec<Vec<i64>>> {
    let n = form.dim();
    let k = form.degree() as f64;
    let scale = (limit as f64).powf(1.0 / k);
    let mut lo = vec![i64::MIN; n];
    let mut hi = vec![i64::MAX; n];
    let mut bounded = false;
    if let Some(bounds) = form.coordinate_bounds(limit as f64) {
        for i in 0..n {
            let b = bounds[i].floor() as i64 + 1;
            lo[i] = -b;
            hi[i] = b;
        }
        bounded = true;
    }
    if let Some(rho) = psi.support_radius() {
        let b = (rho * scale).floor() as i64 + 1;
        for i in 0..n {
            lo[i] = lo[i].max(-b);
            hi[i] = hi[i].min(b);
        }
        bounded = true;
    }
    if psi.support_in_positive_orthant() {
        for v in lo.iter_mut() {
            *v = (*v).max(1);
        }
        if !bounded {
            // Positive coefficients bound each coordinate on the positive orthant.
            let coeffs = form.diagonal_coefficients().filter(|c| c.iter().all(|&v| v > 0)).ok_or_else(|| {
                Error::Unsupported("unbounded level set on the positive orthant".into())
            })?;
            for (h, &c) in hi.iter_mut().zip(coeffs) {
                *h = (limit as f64 / c as f64).powf(1.0 / k).floor() as i64 + 1;
            }
            bounded = true;
        }
    }
    if !bounded {
        return Err(Error::Unsupported(format!(
            "level sets of {} are not compact on the support of ψ = {}",
            form.name(),
            psi.label()
        )));
    }
    Ok((0..n)
        .map(|i| {
            (lo[i]..=hi[i])
                .filter(|&x| congruence.map_or(true, |c| x.rem_euclid(c.modulus as i64) as u64 == c.residues[i]))
                .collect()
        })
        .collect())
}

fn box_size(ranges: &[Vec<i64>]) -> u128 {
    ranges.iter().map(|r| r.len() as u128).product()
}

/// Visits every point of the product of `ranges` with `0 ≤ Q(x) ≤ limit` (diagonal forms with
/// non-negative terms are pruned; other forms are scanned in full).
fn visit_points(
    form: &IntegralForm,
    ranges: &[Vec<i64>],
    limit: i128,
    f: &mut dyn FnMut(&[i64], i128),
) -> Result<()> {
    let n = form.dim();
    if ranges.iter().any(|r| r.is_empty()) {
        return Ok(());
    }
    let diag = form.diagonal_coefficients();
    let prunable = diag.is_some_and(|c| {
        c.iter()
            .zip(ranges)
            .all(|(&ci, r)| ci >= 0 && (form.degree() % 2 == 0 || r[0] >= 0))
    });
    let mut x = vec![0i64; n];
    if prunable {
        let coeffs = diag.unwrap();
        let k = form.degree();
        // Per coordinate: (term, value) sorted by term.
        let mut terms: Vec<Vec<(i128, i64)>> = Vec::with_capacity(n);
        for (r, &c) in ranges.iter().zip(coeffs) {
            let mut t: Vec<(i128, i64)> = r
                .iter()
                .filter_map(|&v| {
                    (v as i128).checked_pow(k).and_then(|p| p.checked_mul(c as i128)).map(|t| (t, v))
                })
                .filter(|&(t, _)| t <= limit)
                .collect();
            t.sort_unstable();
            terms.push(t);
        }
        if terms.iter().any(|t| t.is_empty()) {
            return Ok(());
        }
        let mut suffix_min = vec![0i128; n + 1];
        for i in (0..n).rev() {
            suffix_min[i] = suffix_min[i + 1] + terms[i][0].0;
        }
        fn dfs(
            i: usize,
            partial: i128,
            limit: i128,
            terms: &[Vec<(i128, i64)>],
            suffix_min: &[i128],
            x: &mut [i64],
            f: &mut dyn FnMut(&[i64], i128),
        ) {
            if i == terms.len() {
                f(x, partial);
                return;
            }
            for &(t, v) in &terms[i] {
                if partial + t + suffix_min[i + 1] > limit {
                    break;
                }
                x[i] = v;
                dfs(i + 1, partial + t, limit, terms, suffix_min, x, f);
            }
        }
        dfs(0, 0, limit, &terms, &suffix_min, &mut x, f);
        return Ok(());
    }
    let mut idx = vec![0usize; n];
    loop {
        for i in 0..n {
            x[i] = ranges[i][idx[i]];
        }
        let v = form.eval_i128(&x).ok_or(Error::Overflow("form value exceeds i128"))?;
        if (0..=limit).contains(&v) {
            f(&x, v);
        }
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < ranges[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
}

/// The solutions of `Q(x) = λ` on the support of `ψ`, with weights `ψ(x / λ^{1/k})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub lambda: u64,
    pub points: Vec<Vec<i64>>,
    pub weights: Vec<f64>,
}

impl SolutionSet {
    /// `r_{Q,ψ}(λ)`.
    pub fn count(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `max |x|_∞` over the solutions.
    pub fn max_abs(&self) -> i64 {
        self.points.iter().flat_map(|p| p.iter().map(|v| v.abs())).max().unwrap_or(0)
    }
}

pub fn enumerate_solutions(form: &IntegralForm, psi: &CutoffPsi, lambda: u64, budget: &Budget) -> Result<SolutionSet> {
    let ranges = search_ranges(form, psi, lambda, None)?;
    budget.check(box_size(&ranges))?;
    let scale = if lambda == 0 { 1.0 } else { (lambda as f64).powf(1.0 / form.degree() as f64) };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    visit_points(form, &ranges, lambda as i128, &mut |x, v| {
        if v == lambda as i128 {
            let y: Vec<f64> = x.iter().map(|&c| c as f64 / scale).collect();
            let w = psi.eval(&y);
            if w > 0.0 {
                points.push(x.to_vec());
                weights.push(w);
            }
        }
    })?;
    Ok(SolutionSet { lambda, points, weights })
}

/// `r_{Q,ψ}(λ) = Σ_{Q(x)=λ} ψ(x/λ^{1/k})`; exact for `ψ ≡ 1`.
pub fn count_representations(form: &IntegralForm, psi: &CutoffPsi, lambda: u64, budget: &Budget) -> Result<f64> {
    Ok(enumerate_solutions(form, psi, lambda, budget)?.count())
}

/// `|V_λ(d)|` together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModSolutionCount {
    pub modulus: u64,
    pub target: u64,
    pub value: u64,
}

/// `t ↦ |{s ∈ Z_d^n : Q(s) ≡ t mod d}|` for all `t ∈ Z_d`.
pub fn mod_solution_table(form: &IntegralForm, d: u64, budget: &Budget) -> Result<Vec<u64>> {
    if d == 0 {
        return Err(Error::InvalidParameter("modulus must be positive".into()));
    }
    let du = d as usize;
    if let Some(coeffs) = form.diagonal_coefficients() {
        budget.check(coeffs.len() as u128 * (d as u128) * (d as u128))?;
        let hist = |c: i64| {
            let mut h = vec![0u64; du];
            for s in 0..d {
                let v = crate::arith::pow_mod(s as i128, form.degree(), d) as i128 * (c as i128).rem_euclid(d as i128);
                h[(v % d as i128) as usize] += 1;
            }
            h
        };
        let mut acc = hist(coeffs[0]);
        for &c in &coeffs[1..] {
            let h = hist(c);
            let mut next = vec![0u64; du];
            for (u, &a) in acc.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                for (v, &b) in h.iter().enumerate() {
                    if b != 0 {
                        next[(u + v) % du] += a * b;
                    }
                }
            }
            acc = next;
        }
        return Ok(acc);
    }
    let n = form.dim();
    budget.check((d as u128).pow(n as u32))?;
    let mut table = vec![0u64; du];
    let mut s = vec![0i64; n];
    loop {
        table[form.eval_mod(&s, d) as usize] += 1;
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(table);
            }
            i -= 1;
            s[i] += 1;
            if (s[i] as u64) < d {
                break;
            }
            s[i] = 0;
        }
    }
}

/// `|V_λ(d)| = |{s ∈ Z_d^n : Q(s) ≡ λ mod d}|`.
pub fn count_mod(form: &IntegralForm, lambda: i64, d: u64, budget: &Budget) -> Result<ModSolutionCount> {
    let table = mod_solution_table(form, d, budget)?;
    let target = lambda.rem_euclid(d as i64) as u64;
    Ok(ModSolutionCount { modulus: d, target, value: table[target as usize] })
}

/// `#{x ∈ Z^n : Q(x) ≤ R, x ≡ b mod q}` for positive definite `Q`.
pub fn count_ball(form: &IntegralForm, radius: u64, congruence: Option<&Congruence>, budget: &Budget) -> Result<u64> {
    if !form.is_positive_definite() {
        return Err(Error::Unsupported("ball counts need a positive definite form".into()));
    }
    RepCountTable::build(form, radius, congruence, budget)?.ball(radius)
}

/// Closed-form `C_Q = vol{x ∈ R^n : Q(x) ≤ 1}` where one is available.
pub fn volume_constant(form: &IntegralForm) -> Option<f64> {
    use statrs::function::gamma::gamma;
    if !form.is_positive_definite() {
        return None;
    }
    let n = form.dim() as f64;
    let k = form.degree() as f64;
    match form.kind() {
        _ if form.is_sphere() => Some(ball_volume::<f64>(form.dim())),
        FormKind::Diagonal { coefficients } => {
            let prod: f64 = coefficients
                .iter()
                .map(|&c| 2.0 * gamma(1.0 + 1.0 / k) / (c as f64).powf(1.0 / k))
                .product();
            Some(prod / gamma(1.0 + n / k))
        }
        FormKind::Quadratic { gram } => {
            let det = float_det(gram);
            (det > 0.0).then(|| ball_volume::<f64>(form.dim()) / det.sqrt())
        }
        FormKind::Generic { .. } => None,
    }
}

fn float_det(m: &[Vec<i64>]) -> f64 {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for j in c..n {
                a[r][j] -= f * a[c][j];
            }
        }
    }
    det
}

/// Least-squares slope and intercept of `y` on `x`, with the Pearson correlation.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let corr = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    (slope, my - slope * mx, corr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzFit {
    pub radii: Vec<u64>,
    pub counts: Vec<u64>,
    pub modulus: u64,
    /// `n/k`
    pub exponent: f64,
    /// Fitted coefficient of `R^{n/k}` (for a congruence class this estimates `C_Q q^{-n}`).
    pub c_hat: f64,
    /// `c_hat · q^n`
    pub c_hat_scaled: f64,
    /// Closed-form `C_Q` when available.
    pub c_reference: Option<f64>,
    /// `|c_hat_scaled / C_Q - 1|` when the closed form is available.
    pub relative_error: Option<f64>,
    /// Fitted exponent `β` of `|count − C_Q q^{-n} R^{n/k}|`.
    pub beta: f64,
    /// `n/k − 1`
    pub beta_bound: f64,
    pub slack: f64,
    pub beta_ok: bool,
}

pub const LIPSCHITZ_SLACK: f64 = 0.3;

/// Fits `#{Q ≤ R, x ≡ b mod q} ≈ C_Q q^{-n} R^{n/k}` and the exponent of the error.
pub fn lipschitz_fit(
    form: &IntegralForm,
    radii: &[u64],
    congruence: Option<&Congruence>,
    budget: &Budget,
) -> Result<LipschitzFit> {
    if radii.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: radii.len() });
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] == 0 {
        return Err(Error::InvalidParameter("radii must be positive and increasing".into()));
    }
    let max_r = *radii.last().unwrap();
    let table = RepCountTable::build(form, max_r, congruence, budget)?;
    let mut prefix = Vec::with_capacity(table.counts().len());
    let mut acc = 0u64;
    for &c in table.counts() {
        acc += c;
        prefix.push(acc);
    }
    let counts: Vec<u64> = radii.iter().map(|&r| prefix[r as usize]).collect();
    let e = form.homogeneity_ratio();
    let q = congruence.map_or(1, |c| c.modulus);
    let qn = (q as f64).powi(form.dim() as i32);
    let num: f64 = radii.iter().zip(&counts).map(|(&r, &c)| c as f64 * (r as f64).powf(e)).sum();
    let den: f64 = radii.iter().map(|&r| (r as f64).powf(2.0 * e)).sum();
    let c_hat = num / den;
    let c_hat_scaled = c_hat * qn;
    let c_reference = volume_constant(form);
    let c_used = c_reference.unwrap_or(c_hat_scaled) / qn;
    let (lx, ly): (Vec<f64>, Vec<f64>) = radii
        .iter()
        .zip(&counts)
        .filter_map(|(&r, &c)| {
            let err = (c as f64 - c_used * (r as f64).powf(e)).abs();
            (err > 0.0).then(|| ((r as f64).ln(), err.ln()))
        })
        .unzip();
    if lx.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: lx.len() });
    }
    let (beta, _, _) = linear_fit(&lx, &ly);
    let beta_bound = e - 1.0;
    Ok(LipschitzFit {
        radii: radii.to_vec(),
        counts,
        modulus: q,
        exponent: e,
        c_hat,
        c_hat_scaled,
        c_reference,
        relative_error: c_reference.map(|c| (c_hat_scaled / c - 1.0).abs()),
        beta,
        beta_bound,
        slack: LIPSCHITZ_SLACK,
        beta_ok: beta <= beta_bound + LIPSCHITZ_SLACK,
    })
}

/// Memoized congruence-restricted counts `N(λ; b, q)` for a positive definite diagonal form,
/// sharing prefix convolutions between residue vectors.
pub struct ResidueClassTables {
    coefficients: Vec<i64>,
    degree: u32,
    modulus: u64,
    cap: u64,
    method: ConvolutionMethod,
    budget: Budget,
    coords: Mutex<HashMap<(i64, u64), Arc<Sparse>>>,
    prefixes: Mutex<HashMap<Vec<(i64, u64)>, Arc<Vec<u64>>>>,
    build: Mutex<()>,
}

impl ResidueClassTables {
    pub fn new(form: &IntegralForm, modulus: u64, cap: u64, method: ConvolutionMethod, budget: Budget) -> Result<Self> {
        let coefficients = require_pd_diagonal(form)?.to_vec();
        if modulus == 0 {
            return Err(Error::InvalidParameter("modulus must be positive".into()));
        }
        Ok(Self {
            coefficients,
            degree: form.degree(),
            modulus,
            cap,
            method,
            budget,
            coords: Mutex::new(HashMap::new()),
            prefixes: Mutex::new(HashMap::new()),
            build: Mutex::new(()),
        })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    /// Canonical `(coefficient, residue)` list: residues folded under `x ↦ −x` (the degree is
    /// even) and sorted, which permutes coordinates only among equal coefficients.
    fn canonical(&self, b: &[u64]) -> Vec<(i64, u64)> {
        let q = self.modulus;
        let mut v: Vec<(i64, u64)> = self
            .coefficients
            .iter()
            .zip(b)
            .map(|(&c, &r)| {
                let r = r % q;
                (c, r.min((q - r) % q))
            })
            .collect();
        v.sort_unstable();
        v
    }

    fn coordinate(&self, key: (i64, u64)) -> Arc<Sparse> {
        let mut map = self.coords.lock().expect("coordinate cache poisoned");
        map.entry(key)
            .or_insert_with(|| Arc::new(coordinate_counts(key.0, self.degree, self.cap, self.modulus, key.1)))
            .clone()
    }

    fn cached_prefix(&self, key: &[(i64, u64)]) -> Option<Arc<Vec<u64>>> {
        self.prefixes.lock().expect("prefix cache poisoned").get(key).cloned()
    }

    fn prefix(&self, key: &[(i64, u64)]) -> Result<Arc<Vec<u64>>> {
        if let Some(t) = self.cached_prefix(key) {
            return Ok(t);
        }
        // One builder at a time, so concurrent callers do not repeat the same convolutions.
        let _guard = self.build.lock().expect("prefix build lock poisoned");
        let mut prev: Option<Arc<Vec<u64>>> = None;
        for len in 1..=key.len() {
            if let Some(t) = self.cached_prefix(&key[..len]) {
                prev = Some(t);
                continue;
            }
            let h = self.coordinate(key[len - 1]);
            let table = match &prev {
                None => sparse_to_dense(&h, self.cap),
                Some(p) => {
                    self.budget.check(p.len() as u128 * h.len() as u128)?;
                    convolve(p, &h, self.method)?
                }
            };
            let table = Arc::new(table);
            self.prefixes
                .lock()
                .expect("prefix cache poisoned")
                .insert(key[..len].to_vec(), table.clone());
            prev = Some(table);
        }
        Ok(prev.expect("non-empty prefix"))
    }

    /// `N(λ; b, q) = #{x ≡ b mod q : Q(x) = λ}`.
    pub fn count(&self, lambda: u64, b: &[u64]) -> Result<u64> {
        if b.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch { expected: self.coefficients.len(), got: b.len() });
        }
        if lambda > self.cap {
            return Err(Error::CapExceeded { lambda, cap: self.cap });
        }
        let key = self.canonical(b);
        let n = key.len();
        let last = self.coordinate(key[n - 1]);
        if n == 1 {
            return Ok(last.iter().filter(|&&(v, _)| v as u64 == lambda).map(|&(_, c)| c).sum());
        }
        let prefix = self.prefix(&key[..n - 1])?;
        let mut total = 0u64;
        for &(v, c) in last.iter() {
            if v as u64 > lambda {
                break;
            }
            total = prefix[(lambda - v as u64) as usize]
                .checked_mul(c)
                .and_then(|t| total.checked_add(t))
                .ok_or(Error::Overflow("representation count exceeds u64"))?;
        }
        Ok(total)
    }

    /// `N(λ; b, q)` for every `λ ∈ [lo, hi)` with `λ ≡ target (mod q)`, as `(λ, count)` pairs.
    pub fn window(&self, b: &[u64], lo: u64, hi: u64, target: u64) -> Result<Vec<(u64, u64)>> {
        let q = self.modulus;
        let first = lo + (target % q + q - lo % q) % q;
        let lambdas: Vec<u64> = (first..hi).step_by(q as usize).collect();
        if hi > self.cap + 1 {
            return Err(Error::CapExceeded { lambda: hi - 1, cap: self.cap });
        }
        let key = self.canonical(b);
        let last = self.coordinate(key[key.len() - 1]);
        if key.len() > 1 && lambdas.len() as u128 * last.len() as u128 > AUTO_TRANSFORM_WORK {
            // Long windows: one more convolution gives the whole table for this class.
            let full = self.prefix(&key)?;
            return Ok(lambdas.iter().map(|&l| (l, full[l as usize])).collect());
        }
        // Warm the shared prefix before fanning out.
        if let Some(&l) = lambdas.first() {
            self.count(l, b)?;
        }
        lambdas.par_iter().map(|&l| Ok((l, self.count(l, b)?))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximizerConfig {
    pub r0: u64,
    pub c0: f64,
}

impl Default for MaximizerConfig {
    fn default() -> Self {
        Self { r0: DEFAULT_R0, c0: DEFAULT_C0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximizerResult {
    pub residue: Vec<u64>,
    pub modulus: u64,
    pub window: (u64, u64),
    pub lambda_star: u64,
    pub count: u64,
    /// `count / (q^{-(n-1)} λ^{n/k-1})`
    pub ratio: f64,
    pub pass: bool,
}

/// The `λ ∈ [R, 2R)` with `λ ≡ Q(b) mod q` maximizing `N(λ; b, q)`.
pub fn restricted_maximizer(
    tables: &ResidueClassTables,
    form: &IntegralForm,
    b: &[u64],
    radius: u64,
    config: &MaximizerConfig,
) -> Result<MaximizerResult> {
    if radius < config.r0 {
        return Err(Error::InvalidParameter(format!("R = {radius} is below R_0 = {}", config.r0)));
    }
    let q = tables.modulus();
    let x: Vec<i64> = b.iter().map(|&v| v as i64).collect();
    let target = form.eval_mod(&x, q);
    let hi = 2 * radius;
    if hi - 1 > tables.cap() {
        return Err(Error::CapExceeded { lambda: hi - 1, cap: tables.cap() });
    }
    let window = tables.window(b, radius, hi, target)?;
    let &(lambda_star, count) = window
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .ok_or_else(|| Error::EmptyWindow(format!("no λ ≡ {target} mod {q} in [{radius}, {hi})")))?;
    let ratio = restricted_ratio(count, lambda_star, q, form);
    Ok(MaximizerResult {
        residue: b.to_vec(),
        modulus: q,
        window: (radius, hi),
        lambda_star,
        count,
        ratio,
        pass: ratio >= config.c0,
    })
}

/// `count / (q^{-(n-1)} λ^{n/k-1})`.
pub fn restricted_ratio(count: u64, lambda: u64, modulus: u64, form: &IntegralForm) -> f64 {
    let n = form.dim() as f64;
    count as f64 / ((modulus as f64).powf(-(n - 1.0)) * (lambda as f64).powf(form.homogeneity_ratio() - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_count(form: &IntegralForm, lambda: i128, bound: i64, cong: Option<&Congruence>) -> u64 {
        let n = form.dim();
        let side = (2 * bound + 1) as usize;
        let mut total = 0;
        for idx in 0..side.pow(n as u32) {
            let mut rem = idx;
            let x: Vec<i64> = (0..n)
                .map(|_| {
                    let v = (rem % side) as i64 - bound;
                    rem /= side;
                    v
                })
                .collect();
            if form.eval_i128(&x) == Some(lambda) && cong.map_or(true, |c| c.contains(&x)) {
                total += 1;
            }
        }
        total
    }

    #[test]
    fn representation_examples() {
        let b = Budget::default();
        let s5 = IntegralForm::sphere(5);
        assert_eq!(count_representations(&s5, &CutoffPsi::Unit, 1, &b).unwrap(), 10.0);
        assert_eq!(count_representations(&s5, &CutoffPsi::Unit, 0, &b).unwrap(), 1.0);
        let s4 = IntegralForm::sphere(4);
        let oracle = brute_count(&s4, 4, 2, None);
        assert_eq!(oracle, 24);
        assert_eq!(count_representations(&s4, &CutoffPsi::Unit, 4, &b).unwrap(), 24.0);
    }

    #[test]
    fn table_examples() {
        let b = Budget::default();
        let s5 = IntegralForm::sphere(5);
        let t = RepCountTable::build(&s5, 200, None, &b).unwrap();
        assert_eq!(t.get(1).unwrap(), 10);
        assert_eq!(t.get(2).unwrap(), 40);
        assert_eq!(t.get(2).unwrap(), brute_count(&s5, 2, 2, None));
        assert!(matches!(t.get(201), Err(Error::CapExceeded { .. })));

        let c = Congruence::new(3, vec![1, 0, 0, 0, 0]).unwrap();
        let t = RepCountTable::build(&s5, 10, Some(&c), &b).unwrap();
        assert_eq!(t.get(1).unwrap(), 1);

        for res in [vec![0; 5], vec![1, 0, 0, 0, 0]] {
            let c = Congruence::new(3, res.clone()).unwrap();
            let t = RepCountTable::build(&s5, 0, Some(&c), &b).unwrap();
            assert_eq!(t.get(0).unwrap(), u64::from(c.contains_zero()));
        }
    }

    #[test]
    fn convolution_rejects_indefinite_diagonal() {
        let f = IntegralForm::diagonal(3, vec![1, 1, 1]).unwrap();
        let err = build_rep_table(&f, 10, None, TableBackend::Convolution(ConvolutionMethod::Schoolbook), &Budget::default());
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn transform_backend_matches_schoolbook() {
        let b = Budget::default();
        let s5 = IntegralForm::sphere(5);
        let a = build_rep_table(&s5, 3000, None, TableBackend::Convolution(ConvolutionMethod::Schoolbook), &b).unwrap();
        let t = build_rep_table(&s5, 3000, None, TableBackend::Convolution(ConvolutionMethod::Transform), &b).unwrap();
        assert_eq!(a.counts(), t.counts());
    }

    #[test]
    fn mod_count_examples() {
        let b = Budget::default();
        assert_eq!(count_mod(&IntegralForm::sphere(4), 3, 1, &b).unwrap().value, 1);
        assert_eq!(count_mod(&IntegralForm::sphere(2), 0, 2, &b).unwrap().value, 2);
        assert_eq!(count_mod(&IntegralForm::sphere(1), 2, 4, &b).unwrap().value, 0);
    }

    #[test]
    fn mod_count_diagonal_matches_generic_path() {
        let b = Budget::default();
        let diag = IntegralForm::diagonal(3, vec![1, 2, 5]).unwrap();
        let quad = IntegralForm::quadratic(vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 5]]).unwrap();
        let sq = IntegralForm::diagonal(2, vec![1, 2, 5]).unwrap();
        for d in 1..15 {
            let t = mod_solution_table(&sq, d, &b).unwrap();
            assert_eq!(t, mod_solution_table(&quad, d, &b).unwrap());
            assert_eq!(t.iter().sum::<u64>(), d.pow(3));
            assert_eq!(mod_solution_table(&diag, d, &b).unwrap().iter().sum::<u64>(), d.pow(3));
        }
    }

    #[test]
    fn ball_examples() {
        let b = Budget::default();
        let s2 = IntegralForm::sphere(2);
        assert_eq!(count_ball(&s2, 1, None, &b).unwrap(), 5);
        assert_eq!(count_ball(&s2, 2, None, &b).unwrap(), 9);
    }

    #[test]
    fn lipschitz_needs_four_radii() {
        let err = lipschitz_fit(&IntegralForm::sphere(5), &[256], None, &Budget::default()).unwrap_err();
        assert_eq!(err, Error::TooFewPoints { needed: 4, got: 1 });
    }

    #[test]
    fn volume_constants() {
        let v = volume_constant(&IntegralForm::sphere(5)).unwrap();
        assert!((v - 8.0 * std::f64::consts::PI.powi(2) / 15.0).abs() < 1e-12);
        // x^2 + 2y^2 has area π/√2.
        let d = volume_constant(&IntegralForm::diagonal(2, vec![1, 2]).unwrap()).unwrap();
        assert!((d - std::f64::consts::PI / 2f64.sqrt()).abs() < 1e-12);
        let q = volume_constant(&IntegralForm::quadratic(vec![vec![1, 0], vec![0, 2]]).unwrap()).unwrap();
        assert!((q - d).abs() < 1e-12);
        // |x|^4 + |y|^4 ≤ 1 has area 4Γ(5/4)^2/Γ(3/2).
        let k4 = volume_constant(&IntegralForm::k_sphere(4, 2)).unwrap();
        assert!((k4 - 3.708_149_354_602_744).abs() < 1e-9);
    }

    #[test]
    fn residue_tables_match_brute_force() {
        let b = Budget::default();
        let s3 = IntegralForm::sphere(3);
        let tables = ResidueClassTables::new(&s3, 3, 60, ConvolutionMethod::Schoolbook, b).unwrap();
        for res in residue_vectors(3, 3) {
            let c = Congruence::new(3, res.clone()).unwrap();
            for lambda in 0..=60u64 {
                assert_eq!(tables.count(lambda, &res).unwrap(), brute_count(&s3, lambda as i128, 8, Some(&c)));
            }
        }
    }

    #[test]
    fn maximizer_rejects_short_window() {
        let s5 = IntegralForm::sphere(5);
        let tables = ResidueClassTables::new(&s5, 27, 64, ConvolutionMethod::Schoolbook, Budget::default()).unwrap();
        let config = MaximizerConfig { r0: 1, c0: 0.05 };
        // Q(b) = 1 mod 27 and the window [8, 16) holds no such λ.
        let err = restricted_maximizer(&tables, &s5, &[1, 0, 0, 0, 0], 8, &config).unwrap_err();
        assert!(matches!(err, Error::EmptyWindow(_)));
    }

    #[test]
    fn binary_roundtrip() {
        let t = RepCountTable::build(&IntegralForm::sphere(3), 50, None, &Budget::default()).unwrap();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (4 + 51));
        let back = RepCountTable::read_binary(buf.as_slice(), "sphere3").unwrap();
        assert_eq!(back.counts(), t.counts());
        assert_eq!(back.dim, 3);
        assert_eq!(back.degree, 2);
    }
}
