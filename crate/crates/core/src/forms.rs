//! Integral forms `Q`, their evaluation and gradients, Birch-rank metadata, and cutoffs `ψ`.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arith::pow_mod;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::smooth_step;

/// A monomial `coefficient · Π x_i^{e_i}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coefficient: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormKind {
    /// `Σ c_i x_i^k`
    Diagonal { coefficients: Vec<i64> },
    /// `Σ_{i,j} G_ij x_i x_j` for a symmetric integer matrix `G`.
    Quadratic { gram: Vec<Vec<i64>> },
    /// Sparse coefficient map over exponent multi-indices.
    Generic { monomials: Vec<Monomial> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralForm {
    name: String,
    degree: u32,
    dim: usize,
    kind: FormKind,
    birch_rank: usize,
    positive_definite: bool,
    /// Lower estimate of `min_{|u|=1} Q(u)` for generic positive definite forms.
    #[serde(skip)]
    sphere_min: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BirchVerdict {
    Verified,
    Assumed,
    Inconsistent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirchReport {
    pub verdict: BirchVerdict,
    pub declared: usize,
    pub computed: Option<usize>,
    /// `(k-1) 2^k`
    pub threshold: u64,
    /// Whether the declared rank exceeds the threshold.
    pub regular: bool,
    /// Decay exponent `K = ((B - (k-1)2^{k-1}) / 2^k - 1) / 2` of the surface measure transform.
    pub decay_exponent: f64,
    /// `B / (2^{k-1}(k-1))`, recorded only when the rank condition holds.
    pub alpha_upper_bound: Option<f64>,
}

fn checked_pow(base: i128, exp: u32) -> Option<i128> {
    let mut acc: i128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

fn big_pow(base: i64, exp: u32) -> BigInt {
    num_traits::pow(BigInt::from(base), exp as usize)
}

/// Rank and leading principal minors of an integer matrix, by fraction-free elimination.
fn bareiss_rank(matrix: &[Vec<i64>]) -> usize {
    let n = matrix.len();
    if n == 0 {
        return 0;
    }
    let m = matrix[0].len();
    let mut a: Vec<Vec<BigInt>> = matrix
        .iter()
        .map(|row| row.iter().map(|&v| BigInt::from(v)).collect())
        .collect();
    let mut prev = BigInt::one();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..m {
        if row >= n {
            break;
        }
        let Some(pivot) = (row..n).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(row, pivot);
        for r in row + 1..n {
            for c in col + 1..m {
                let v = &a[row][col] * &a[r][c] - &a[r][col] * &a[row][c];
                a[r][c] = v / &prev;
            }
            a[r][col] = BigInt::zero();
        }
        prev = a[row][col].clone();
        row += 1;
        rank += 1;
    }
    rank
}

fn determinant(matrix: &[Vec<i64>]) -> BigInt {
    let n = matrix.len();
    let mut a: Vec<Vec<BigInt>> = matrix
        .iter()
        .map(|row| row.iter().map(|&v| BigInt::from(v)).collect())
        .collect();
    let mut prev = BigInt::one();
    let mut sign = BigInt::one();
    for k in 0..n {
        if a[k][k].is_zero() {
            let Some(p) = (k + 1..n).find(|&r| !a[r][k].is_zero()) else {
                return BigInt::zero();
            };
            a.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &a[k][k] * &a[i][j] - &a[i][k] * &a[k][j];
                a[i][j] = v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    sign * prev
}

/// Diagonal of the inverse of a symmetric positive definite matrix, in floating point.
fn inverse_diagonal(matrix: &[Vec<i64>]) -> Option<Vec<f64>> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n + i]).collect())
}

impl IntegralForm {
    /// `x_1^2 + ... + x_n^2`.
    pub fn sphere(n: usize) -> Self {
        let mut f = Self::diagonal(2, vec![1; n]).expect("sphere is a valid diagonal form");
        f.name = format!("sphere{n}");
        f
    }

    /// `x_1^k + ... + x_n^k`.
    pub fn k_sphere(degree: u32, n: usize) -> Self {
        let mut f = Self::diagonal(degree, vec![1; n]).expect("k-sphere is a valid diagonal form");
        f.name = format!("diag_k{degree}_n{n}");
        f
    }

    pub fn diagonal(degree: u32, coefficients: Vec<i64>) -> Result<Self> {
        if degree < 2 {
            return Err(Error::InvalidParameter(format!("degree must be >= 2, got {degree}")));
        }
        if coefficients.is_empty() {
            return Err(Error::InvalidParameter("a form needs at least one variable".into()));
        }
        let dim = coefficients.len();
        let rank = coefficients.iter().filter(|&&c| c != 0).count();
        let positive_definite = degree % 2 == 0 && coefficients.iter().all(|&c| c > 0);
        Ok(Self {
            name: format!("diagonal_k{degree}_n{dim}"),
            degree,
            dim,
            kind: FormKind::Diagonal { coefficients },
            birch_rank: rank,
            positive_definite,
            sphere_min: None,
        })
    }

    pub fn quadratic(gram: Vec<Vec<i64>>) -> Result<Self> {
        let dim = gram.len();
        if dim == 0 || gram.iter().any(|row| row.len() != dim) {
            return Err(Error::InvalidParameter("Gram matrix must be square and non-empty".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if gram[i][j] != gram[j][i] {
                    return Err(Error::InvalidParameter("Gram matrix must be symmetric".into()));
                }
            }
        }
        let rank = bareiss_rank(&gram);
        let positive_definite = (1..=dim).all(|m| {
            let minor: Vec<Vec<i64>> = gram[..m].iter().map(|r| r[..m].to_vec()).collect();
            determinant(&minor) > BigInt::zero()
        });
        Ok(Self {
            name: format!("quadratic_n{dim}"),
            degree: 2,
            dim,
            kind: FormKind::Quadratic { gram },
            birch_rank: rank,
            positive_definite,
            sphere_min: None,
        })
    }

    /// A generic form with a declared Birch rank; positivity is declared through
    /// [`IntegralForm::with_positive_definite`].
    pub fn generic(degree: u32, dim: usize, monomials: Vec<Monomial>, birch_rank: usize) -> Result<Self> {
        if degree < 2 || dim == 0 {
            return Err(Error::InvalidParameter("generic form needs degree >= 2 and n >= 1".into()));
        }
        for m in &monomials {
            if m.exponents.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: m.exponents.len() });
            }
            let total: u32 = m.exponents.iter().sum();
            if total != degree {
                return Err(Error::InvalidParameter(format!(
                    "monomial {:?} has total degree {total}, form degree is {degree}",
                    m.exponents
                )));
            }
        }
        if birch_rank == 0 {
            return Err(Error::InvalidParameter("declared Birch rank must be positive".into()));
        }
        Ok(Self {
            name: format!("generic_k{degree}_n{dim}"),
            degree,
            dim,
            kind: FormKind::Generic { monomials },
            birch_rank,
            positive_definite: false,
            sphere_min: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_birch_rank(mut self, rank: usize) -> Self {
        self.birch_rank = rank;
        self
    }

    /// Declares positivity. For generic forms this also estimates `min Q` on the unit sphere
    /// (used to bound lattice searches) and rejects the declaration if a sampled value is `≤ 0`.
    pub fn with_positive_definite(mut self, positive: bool) -> Result<Self> {
        if let FormKind::Generic { .. } = self.kind {
            if positive {
                let m = self.estimate_sphere_min(20_000, 0x5eed);
                if m <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "form declared positive definite takes non-positive values".into(),
                    ));
                }
                self.sphere_min = Some(m);
            }
            self.positive_definite = positive;
            Ok(self)
        } else if positive != self.positive_definite {
            Err(Error::InvalidParameter(
                "positivity of diagonal and quadratic forms is computed, not declared".into(),
            ))
        } else {
            Ok(self)
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &FormKind {
        &self.kind
    }

    pub fn birch_rank(&self) -> usize {
        self.birch_rank
    }

    pub fn is_positive_definite(&self) -> bool {
        self.positive_definite
    }

    pub fn diagonal_coefficients(&self) -> Option<&[i64]> {
        match &self.kind {
            FormKind::Diagonal { coefficients } => Some(coefficients),
            _ => None,
        }
    }

    pub fn is_sphere(&self) -> bool {
        self.degree == 2 && self.diagonal_coefficients().is_some_and(|c| c.iter().all(|&v| v == 1))
    }

    /// `n/k`
    pub fn homogeneity_ratio(&self) -> f64 {
        self.dim as f64 / self.degree as f64
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            Err(Error::DimensionMismatch { expected: self.dim, got: len })
        } else {
            Ok(())
        }
    }

    /// `Q(x)` in `i128`, or `None` on overflow.
    pub fn eval_i128(&self, x: &[i64]) -> Option<i128> {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            FormKind::Diagonal { coefficients } => {
                let mut acc: i128 = 0;
                for (&c, &xi) in coefficients.iter().zip(x) {
                    let term = checked_pow(xi as i128, self.degree)?.checked_mul(c as i128)?;
                    acc = acc.checked_add(term)?;
                }
                Some(acc)
            }
            FormKind::Quadratic { gram } => {
                let mut acc: i128 = 0;
                for (i, row) in gram.iter().enumerate() {
                    for (j, &g) in row.iter().enumerate() {
                        if g != 0 {
                            let t = (g as i128).checked_mul(x[i] as i128)?.checked_mul(x[j] as i128)?;
                            acc = acc.checked_add(t)?;
                        }
                    }
                }
                Some(acc)
            }
            FormKind::Generic { monomials } => {
                let mut acc: i128 = 0;
                for m in monomials {
                    let mut t = m.coefficient as i128;
                    for (&xi, &e) in x.iter().zip(&m.exponents) {
                        if e > 0 {
                            t = t.checked_mul(checked_pow(xi as i128, e)?)?;
                        }
                    }
                    acc = acc.checked_add(t)?;
                }
                Some(acc)
            }
        }
    }

    fn eval_big(&self, x: &[i64]) -> BigInt {
        match &self.kind {
            FormKind::Diagonal { coefficients } => coefficients
                .iter()
                .zip(x)
                .map(|(&c, &xi)| BigInt::from(c) * big_pow(xi, self.degree))
                .sum(),
            FormKind::Quadratic { gram } => {
                let mut acc = BigInt::zero();
                for (i, row) in gram.iter().enumerate() {
                    for (j, &g) in row.iter().enumerate() {
                        acc += BigInt::from(g) * BigInt::from(x[i]) * BigInt::from(x[j]);
                    }
                }
                acc
            }
            FormKind::Generic { monomials } => monomials
                .iter()
                .map(|m| {
                    x.iter()
                        .zip(&m.exponents)
                        .fold(BigInt::from(m.coefficient), |acc, (&xi, &e)| acc * big_pow(xi, e))
                })
                .sum(),
        }
    }

    /// Exact `Q(x)`: checked machine arithmetic, promoted to big integers on overflow.
    pub fn eval(&self, x: &[i64]) -> Result<BigInt> {
        self.check_dim(x.len())?;
        Ok(match self.eval_i128(x) {
            Some(v) => BigInt::from(v),
            None => self.eval_big(x),
        })
    }

    /// `Q(x) mod m` in `[0, m)`.
    pub fn eval_mod(&self, x: &[i64], m: u64) -> u64 {
        debug_assert_eq!(x.len(), self.dim);
        let mm = m as i128;
        let acc: i128 = match &self.kind {
            FormKind::Diagonal { coefficients } => coefficients
                .iter()
                .zip(x)
                .map(|(&c, &xi)| (c as i128).rem_euclid(mm) * pow_mod(xi as i128, self.degree, m) as i128 % mm)
                .sum(),
            FormKind::Quadratic { gram } => {
                let xr: Vec<i128> = x.iter().map(|&v| (v as i128).rem_euclid(mm)).collect();
                let mut acc = 0i128;
                for (i, row) in gram.iter().enumerate() {
                    for (j, &g) in row.iter().enumerate() {
                        if g != 0 {
                            acc = (acc + (g as i128).rem_euclid(mm) * xr[i] % mm * xr[j]) % mm;
                        }
                    }
                }
                acc
            }
            FormKind::Generic { monomials } => {
                let mut acc = 0i128;
                for mono in monomials {
                    let mut t = (mono.coefficient as i128).rem_euclid(mm);
                    for (&xi, &e) in x.iter().zip(&mono.exponents) {
                        if e > 0 {
                            t = t * pow_mod(xi as i128, e, m) as i128 % mm;
                        }
                    }
                    acc = (acc + t) % mm;
                }
                acc
            }
        };
        acc.rem_euclid(mm) as u64
    }

    /// `Q(x)` at a real point.
    pub fn eval_real<T: Real>(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            FormKind::Diagonal { coefficients } => coefficients
                .iter()
                .zip(x)
                .fold(T::zero(), |acc, (&c, &xi)| acc + T::of_int(c) * xi.powi(self.degree as i32)),
            FormKind::Quadratic { gram } => {
                let mut acc = T::zero();
                for (i, row) in gram.iter().enumerate() {
                    for (j, &g) in row.iter().enumerate() {
                        acc += T::of_int(g) * x[i] * x[j];
                    }
                }
                acc
            }
            FormKind::Generic { monomials } => monomials.iter().fold(T::zero(), |acc, m| {
                acc + x
                    .iter()
                    .zip(&m.exponents)
                    .fold(T::of_int(m.coefficient), |t, (&xi, &e)| t * xi.powi(e as i32))
            }),
        }
    }

    /// `∇Q(x)`.
    pub fn gradient<T: Real>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.dim);
        let k = self.degree as i32;
        match &self.kind {
            FormKind::Diagonal { coefficients } => coefficients
                .iter()
                .zip(x)
                .map(|(&c, &xi)| T::of_int(k as i64 * c) * xi.powi(k - 1))
                .collect(),
            FormKind::Quadratic { gram } => gram
                .iter()
                .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (&g, &xj)| acc + T::of(2.0) * T::of_int(g) * xj))
                .collect(),
            FormKind::Generic { monomials } => {
                let mut grad = vec![T::zero(); self.dim];
                for m in monomials {
                    for (i, g) in grad.iter_mut().enumerate() {
                        let e = m.exponents[i];
                        if e == 0 {
                            continue;
                        }
                        let mut t = T::of_int(m.coefficient) * T::of_usize(e as usize);
                        for (j, (&xj, &ej)) in x.iter().zip(&m.exponents).enumerate() {
                            let p = if j == i { ej - 1 } else { ej };
                            t *= xj.powi(p as i32);
                        }
                        *g += t;
                    }
                }
                grad
            }
        }
    }

    /// Checks the declared Birch rank against the computable one and records the regularity
    /// inequality `B(Q) > (k-1) 2^k`.
    pub fn verify_birch_rank(&self) -> BirchReport {
        let computed = match &self.kind {
            // ∂_i Q = k c_i x_i^{k-1}: the singular locus is cut out by the nonzero coordinates.
            FormKind::Diagonal { coefficients } => Some(coefficients.iter().filter(|&&c| c != 0).count()),
            // ∇Q = 2Gx: the singular locus is ker G.
            FormKind::Quadratic { gram } => Some(bareiss_rank(gram)),
            FormKind::Generic { .. } => None,
        };
        let verdict = match computed {
            None => BirchVerdict::Assumed,
            Some(r) if r == self.birch_rank => BirchVerdict::Verified,
            Some(_) => BirchVerdict::Inconsistent,
        };
        let k = self.degree as u64;
        let threshold = (k - 1) << k;
        let b = self.birch_rank as f64;
        let kf = k as f64;
        let decay_exponent = 0.5 * ((b - (kf - 1.0) * 2f64.powf(kf - 1.0)) / 2f64.powf(kf) - 1.0);
        let regular = self.birch_rank as u64 > threshold;
        BirchReport {
            verdict,
            declared: self.birch_rank,
            computed,
            threshold,
            regular,
            decay_exponent,
            alpha_upper_bound: regular.then(|| b / (2f64.powf(kf - 1.0) * (kf - 1.0))),
        }
    }

    fn estimate_sphere_min(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = f64::INFINITY;
        let mut u = vec![0.0f64; self.dim];
        for _ in 0..samples {
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in u.iter_mut() {
                *v /= norm;
            }
            best = best.min(self.eval_real(&u));
        }
        best
    }

    /// Per-coordinate bounds `|x_i| ≤ B_i` for the real solutions of `Q(x) ≤ λ`, when
    /// the form is positive definite. Bounds for generic forms rest on a sampled minimum on the
    /// unit sphere, deflated by a factor of two.
    pub fn coordinate_bounds(&self, lambda: f64) -> Option<Vec<f64>> {
        if !self.positive_definite {
            return None;
        }
        let k = self.degree as f64;
        match &self.kind {
            FormKind::Diagonal { coefficients } => {
                Some(coefficients.iter().map(|&c| (lambda / c as f64).powf(1.0 / k)).collect())
            }
            FormKind::Quadratic { gram } => {
                let inv = inverse_diagonal(gram)?;
                Some(inv.iter().map(|&d| (lambda * d.max(0.0)).sqrt()).collect())
            }
            FormKind::Generic { .. } => {
                let m = self.sphere_min? * 0.5;
                let r = (lambda / m).powf(1.0 / k);
                Some(vec![r; self.dim])
            }
        }
    }
}

impl fmt::Display for IntegralForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (k={}, n={})", self.name, self.degree, self.dim)
    }
}

/// The cutoff `ψ` with `0 ≤ ψ ≤ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffPsi {
    /// `ψ ≡ 1`.
    Unit,
    /// `Π_i s(x_i / ramp)` with `s` a smooth step: equal to 1 where every `x_i ≥ ramp`,
    /// vanishing off the open positive orthant.
    PositiveOrthant { ramp: f64 },
    /// Radial profile, linearly interpolated between samples `(radii[i], values[i])`.
    /// The last value must be 0; the profile vanishes beyond the last radius.
    Radial { radii: Vec<f64>, values: Vec<f64> },
}

impl Default for CutoffPsi {
    fn default() -> Self {
        CutoffPsi::Unit
    }
}

impl CutoffPsi {
    pub const DEFAULT_RAMP: f64 = 0.05;

    pub fn positive_orthant() -> Self {
        CutoffPsi::PositiveOrthant { ramp: Self::DEFAULT_RAMP }
    }

    pub fn radial(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() != values.len() || radii.len() < 2 {
            return Err(Error::InvalidParameter("radial profile needs >= 2 matching samples".into()));
        }
        if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("radial samples must start at 0 and increase".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("radial profile values must lie in [0,1]".into()));
        }
        if *values.last().unwrap() != 0.0 {
            return Err(Error::InvalidParameter("radial profile must end at 0".into()));
        }
        Ok(CutoffPsi::Radial { radii, values })
    }

    /// The default cutoff for a form: `ψ ≡ 1` when positive definite, positive-orthant
    /// smoothing otherwise.
    pub fn default_for(form: &IntegralForm) -> Self {
        if form.is_positive_definite() {
            CutoffPsi::Unit
        } else {
            Self::positive_orthant()
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, CutoffPsi::Unit)
    }

    pub fn label(&self) -> String {
        match self {
            CutoffPsi::Unit => "unit".into(),
            CutoffPsi::PositiveOrthant { ramp } => format!("positive_orthant({ramp})"),
            CutoffPsi::Radial { radii, .. } => format!("radial({} samples)", radii.len()),
        }
    }

    fn radial_profile<T: Real>(radii: &[f64], values: &[f64], r: T) -> T {
        let rf = r.as_f64();
        let last = radii.len() - 1;
        if rf >= radii[last] {
            return T::zero();
        }
        let i = radii.partition_point(|&x| x <= rf).saturating_sub(1);
        let t = (r - T::of(radii[i])) / T::of(radii[i + 1] - radii[i]);
        (T::of(values[i]) + t * T::of(values[i + 1] - values[i])).max(T::zero()).min(T::one())
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match self {
            CutoffPsi::Unit => T::one(),
            CutoffPsi::PositiveOrthant { ramp } => {
                let ramp = T::of(*ramp);
                x.iter().fold(T::one(), |acc, &xi| acc * smooth_step(xi / ramp))
            }
            CutoffPsi::Radial { radii, values } => {
                let r = x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
                Self::radial_profile(radii, values, r)
            }
        }
    }

    /// Per-coordinate factor when `ψ` is a tensor product, as for the orthant cutoff.
    pub fn coordinate_factor<T: Real>(&self, t: T) -> Option<T> {
        match self {
            CutoffPsi::Unit => Some(T::one()),
            CutoffPsi::PositiveOrthant { ramp } => Some(smooth_step(t / T::of(*ramp))),
            CutoffPsi::Radial { .. } => None,
        }
    }

    pub fn is_separable(&self) -> bool {
        !matches!(self, CutoffPsi::Radial { .. })
    }

    pub fn support_in_positive_orthant(&self) -> bool {
        matches!(self, CutoffPsi::PositiveOrthant { .. })
    }

    /// Radius of a ball containing the support, when bounded.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            CutoffPsi::Radial { radii, .. } => radii.last().copied(),
            _ => None,
        }
    }

    pub fn plateau_contains(&self, x: &[f64]) -> bool {
        match self {
            CutoffPsi::Unit => true,
            CutoffPsi::PositiveOrthant { ramp } => x.iter().all(|&v| v >= *ramp),
            CutoffPsi::Radial { .. } => self.eval(x) == 1.0,
        }
    }

    pub fn support_contains(&self, x: &[f64]) -> bool {
        match self {
            CutoffPsi::Unit => true,
            CutoffPsi::PositiveOrthant { .. } => x.iter().all(|&v| v > 0.0),
            CutoffPsi::Radial { .. } => self.eval(x) > 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cubic_generic() -> IntegralForm {
        // x^3 + y^3 + z^3 + xyz
        let monomials = vec![
            Monomial { exponents: vec![3, 0, 0], coefficient: 1 },
            Monomial { exponents: vec![0, 3, 0], coefficient: 1 },
            Monomial { exponents: vec![0, 0, 3], coefficient: 1 },
            Monomial { exponents: vec![1, 1, 1], coefficient: 1 },
        ];
        IntegralForm::generic(3, 3, monomials, 20).unwrap()
    }

    fn sample_forms() -> Vec<IntegralForm> {
        vec![
            IntegralForm::sphere(5),
            IntegralForm::k_sphere(4, 3),
            IntegralForm::diagonal(3, vec![1, 2, -3, 5]).unwrap(),
            IntegralForm::quadratic(vec![vec![2, 1, 0], vec![1, 2, 1], vec![0, 1, 3]]).unwrap(),
            cubic_generic(),
        ]
    }

    #[test]
    fn eval_examples() {
        assert_eq!(IntegralForm::sphere(5).eval(&[1, 1, 1, 1, 1]).unwrap(), BigInt::from(5));
        assert_eq!(IntegralForm::k_sphere(4, 3).eval(&[2, 0, 0]).unwrap(), BigInt::from(16));
        assert_eq!(IntegralForm::sphere(4).eval(&[1, -1, 1, -1]).unwrap(), BigInt::from(4));
    }

    #[test]
    fn eval_dimension_mismatch() {
        let err = IntegralForm::sphere(3).eval(&[1, 2]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 3, got: 2 });
    }

    #[test]
    fn eval_promotes_on_overflow() {
        let f = IntegralForm::k_sphere(9, 2);
        let big = 1i64 << 40;
        let v = f.eval(&[big, 1]).unwrap();
        let expected = num_traits::pow(BigInt::from(2), 360) + BigInt::from(1);
        assert_eq!(v, expected);
        assert!(f.eval_i128(&[big, 1]).is_none());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(IntegralForm::sphere(2).gradient(&[1.0f64, 0.0]), vec![2.0, 0.0]);
        assert_eq!(IntegralForm::k_sphere(4, 2).gradient(&[1.0f64, 1.0]), vec![4.0, 4.0]);
        assert_eq!(IntegralForm::sphere(3).gradient(&[0.0f64; 3]), vec![0.0; 3]);
    }

    #[test]
    fn birch_examples() {
        let r = IntegralForm::sphere(5).verify_birch_rank();
        assert_eq!(r.verdict, BirchVerdict::Verified);
        assert!(r.regular);
        assert_eq!(r.threshold, 4);

        let r = IntegralForm::k_sphere(4, 30).verify_birch_rank();
        assert_eq!(r.verdict, BirchVerdict::Verified);
        assert_eq!(r.threshold, 48);
        assert!(!r.regular);

        assert_eq!(cubic_generic().verify_birch_rank().verdict, BirchVerdict::Assumed);

        let wrong = IntegralForm::sphere(4).with_birch_rank(3);
        assert_eq!(wrong.verify_birch_rank().verdict, BirchVerdict::Inconsistent);

        let degenerate = IntegralForm::quadratic(vec![vec![1, 1], vec![1, 1]]).unwrap();
        let r = degenerate.verify_birch_rank();
        assert_eq!(r.computed, Some(1));
        assert_eq!(r.verdict, BirchVerdict::Verified);
    }

    #[test]
    fn quadratic_positivity_is_computed() {
        let pd = IntegralForm::quadratic(vec![vec![2, 1], vec![1, 2]]).unwrap();
        assert!(pd.is_positive_definite());
        let indefinite = IntegralForm::quadratic(vec![vec![1, 2], vec![2, 1]]).unwrap();
        assert!(!indefinite.is_positive_definite());
    }

    #[test]
    fn generic_positive_definite_declaration_is_sampled() {
        let quartic = IntegralForm::generic(
            4,
            2,
            vec![
                Monomial { exponents: vec![4, 0], coefficient: 1 },
                Monomial { exponents: vec![2, 2], coefficient: 1 },
                Monomial { exponents: vec![0, 4], coefficient: 1 },
            ],
            2,
        )
        .unwrap()
        .with_positive_definite(true)
        .unwrap();
        let b = quartic.coordinate_bounds(16.0).unwrap();
        assert!(b[0] >= 2.0);
        assert!(cubic_generic().with_positive_definite(true).is_err());
    }

    #[test]
    fn mod_eval_agrees_with_exact() {
        for f in sample_forms() {
            let x: Vec<i64> = (0..f.dim() as i64).map(|i| 3 * i - 4).collect();
            let exact = f.eval_i128(&x).unwrap();
            for m in [1u64, 2, 7, 12, 97] {
                assert_eq!(f.eval_mod(&x, m) as i128, exact.rem_euclid(m as i128));
            }
        }
    }

    #[test]
    fn cutoff_examples() {
        let psi = CutoffPsi::positive_orthant();
        assert_eq!(psi.eval(&[0.5f64, 0.2]), 1.0);
        assert_eq!(psi.eval(&[-0.1f64, 0.2]), 0.0);
        assert!(psi.plateau_contains(&[0.06, 0.3]));
        assert!(!psi.support_contains(&[0.0, 0.3]));
        let radial = CutoffPsi::radial(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(radial.eval(&[0.5f64, 0.0]), 1.0);
        assert!((radial.eval(&[1.5f64, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(radial.eval(&[2.5f64, 0.0]), 0.0);
        assert!(CutoffPsi::radial(vec![0.0, 1.0], vec![1.0, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn homogeneity(t in -5i64..=5, xs in proptest::collection::vec(-6i64..=6, 5)) {
            for f in sample_forms() {
                let x = &xs[..f.dim()];
                let tx: Vec<i64> = x.iter().map(|v| v * t).collect();
                let lhs = f.eval(&tx).unwrap();
                let rhs = num_traits::pow(BigInt::from(t), f.degree() as usize) * f.eval(x).unwrap();
                prop_assert_eq!(lhs, rhs);
            }
        }

        #[test]
        fn euler_identity(xs in proptest::collection::vec(-3.0f64..3.0, 5)) {
            for f in sample_forms() {
                let x = &xs[..f.dim()];
                let g = f.gradient(x);
                let lhs: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
                let rhs = f.degree() as f64 * f.eval_real(x);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn positive_definite_forms_are_positive(xs in proptest::collection::vec(-20i64..=20, 5)) {
            prop_assume!(xs.iter().any(|&v| v != 0));
            for f in sample_forms().into_iter().filter(|f| f.is_positive_definite()) {
                let x = &xs[..f.dim()];
                if x.iter().all(|&v| v == 0) { continue; }
                prop_assert!(f.eval_i128(x).unwrap() > 0);
            }
        }

        #[test]
        fn cutoff_range(xs in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let cutoffs = [
                CutoffPsi::Unit,
                CutoffPsi::positive_orthant(),
                CutoffPsi::radial(vec![0.0, 0.5, 1.5], vec![1.0, 0.7, 0.0]).unwrap(),
            ];
            for psi in &cutoffs {
                let v = psi.eval(&xs);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
