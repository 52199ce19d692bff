//! Torus multipliers: the exact `ω̂_λ`, the localized main terms `m_{λ,j,q}` and `m_{λ,j}`,
//! the completed terms `Ω_{λ,j,d}`, the divisor constants `C_j(d)`, the bump `ζ`, and the
//! Fourier transform of the surface measure `dσ = ψ dμ/|∇Q|` on `{Q = 1}`.

use std::collections::HashMap;
use std::sync::Mutex;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{divisors, mobius, units};
use crate::counting::{enumerate_solutions, linear_fit, search_ranges, SolutionSet};
use crate::error::{Budget, Error, Result};
use crate::expsums::{weyl_supremum, weyl_sum, AlphaOptions};
use crate::forms::{CutoffPsi, IntegralForm};
use crate::scalar::{e, Real};
use crate::special::{bessel_j, smooth_step, sphere_area, BesselOrder};

/// `ζ(t) = φ((1/5 − |t|)/(1/10))` with `φ` the smooth step: 1 on `[−1/10, 1/10]`, 0 off
/// `(−1/5, 1/5)`.
pub fn zeta<T: Real>(t: T) -> T {
    smooth_step((T::of(0.2) - t.abs()) / T::of(0.1))
}

/// `Π_i ζ(t_i)`.
pub fn zeta_vec<T: Real>(t: &[T]) -> T {
    t.iter().fold(T::one(), |acc, &v| acc * zeta(v))
}

/// `I_j = [2^{j−1}, 2^j)`
pub fn dyadic_range(j: u32) -> std::ops::Range<u64> {
    (1u64 << (j - 1))..(1u64 << j)
}

/// `C_j(d) = Σ_{h ≥ 1} μ(h) 1_{I_j}(dh)`.
pub fn divisor_constant(j: u32, d: u64) -> i64 {
    divisor_constant_with(j, d, mobius)
}

pub fn divisor_constant_with(j: u32, d: u64, mu: fn(u64) -> i64) -> i64 {
    let r = dyadic_range(j);
    let h_lo = r.start.div_ceil(d);
    let h_hi = (r.end - 1) / d;
    (h_lo.max(1)..=h_hi).map(mu).sum()
}

/// `Σ_d |C_j(d)|`
pub fn divisor_abs_sum(j: u32) -> u64 {
    (1..(1u64 << j)).map(|d| divisor_constant(j, d).unsigned_abs()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsigmaBackend {
    SphereClosedForm,
    MonteCarlo { samples: usize, seed: u64 },
}

/// `d̃σ(ξ)` with the standard error of its estimate (0 for the closed form).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsigmaValue<T> {
    pub value: Complex<T>,
    pub stderr: T,
}

/// `d̃σ(ξ) = ∫ e(−x·ξ) dσ(x)`.
pub struct SurfaceMeasure<T: Real> {
    backend: DsigmaBackend,
    dim: usize,
    decay_exponent: f64,
    // Monte-Carlo nodes `y = u/Q(u)^{1/k}` with weights `|S^{n−1}| Q(u)^{−n/k} ψ(y)/k`.
    nodes: Vec<T>,
    weights: Vec<T>,
    cache: Mutex<HashMap<Vec<u64>, DsigmaValue<T>>>,
}

impl<T: Real> SurfaceMeasure<T> {
    pub fn new(form: &IntegralForm, psi: &CutoffPsi, backend: DsigmaBackend) -> Result<Self> {
        let n = form.dim();
        let decay_exponent = form.verify_birch_rank().decay_exponent;
        let (nodes, weights) = match backend {
            DsigmaBackend::SphereClosedForm => {
                if !form.is_sphere() || !psi.is_unit() {
                    return Err(Error::Unsupported(
                        "the closed form covers the unit sphere with ψ ≡ 1 only".into(),
                    ));
                }
                if n < 2 {
                    return Err(Error::Unsupported("closed form needs n >= 2".into()));
                }
                (Vec::new(), Vec::new())
            }
            DsigmaBackend::MonteCarlo { samples, seed } => Self::sample(form, psi, samples, seed)?,
        };
        Ok(Self { backend, dim: n, decay_exponent, nodes, weights, cache: Mutex::new(HashMap::new()) })
    }

    /// The closed form for spheres with `ψ ≡ 1`, Monte Carlo otherwise.
    pub fn default_for(form: &IntegralForm, psi: &CutoffPsi, samples: usize, seed: u64) -> Result<Self> {
        if form.is_sphere() && psi.is_unit() && form.dim() >= 2 {
            Self::new(form, psi, DsigmaBackend::SphereClosedForm)
        } else {
            Self::new(form, psi, DsigmaBackend::MonteCarlo { samples, seed })
        }
    }

    fn sample(form: &IntegralForm, psi: &CutoffPsi, samples: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
        let n = form.dim();
        let k = form.degree() as f64;
        let area = sphere_area::<f64>(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::with_capacity(samples * n);
        let mut weights = Vec::with_capacity(samples);
        let mut u = vec![0.0f64; n];
        let mut hits = 0usize;
        for _ in 0..samples {
            for v in u.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in u.iter_mut() {
                *v /= norm;
            }
            let qu = form.eval_real(&u);
            let (y, w) = if qu > 0.0 {
                let s = qu.powf(-1.0 / k);
                let y: Vec<f64> = u.iter().map(|v| v * s).collect();
                let w = area * qu.powf(-(n as f64) / k) * psi.eval(&y) / k;
                (y, w)
            } else {
                (vec![0.0; n], 0.0)
            };
            if w > 0.0 {
                hits += 1;
            }
            nodes.extend(y.iter().map(|&v| T::of(v)));
            weights.push(T::of(w));
        }
        if hits == 0 {
            return Err(Error::SurfaceSampling(format!(
                "no sampled direction reached {{Q = 1}} inside the support of ψ = {} ({samples} samples)",
                psi.label()
            )));
        }
        Ok((nodes, weights))
    }

    pub fn backend(&self) -> DsigmaBackend {
        self.backend
    }

    /// Decay exponent `K` from the Birch rank.
    pub fn decay_exponent(&self) -> f64 {
        self.decay_exponent
    }

    pub fn eval(&self, xi: &[T]) -> DsigmaValue<T> {
        debug_assert_eq!(xi.len(), self.dim);
        match self.backend {
            DsigmaBackend::SphereClosedForm => {
                let r = xi.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
                let half = T::of(0.5);
                let value = if r == T::zero() {
                    sphere_area::<T>(self.dim) * half
                } else {
                    let order = BesselOrder::sphere(self.dim);
                    let nu: T = order.value();
                    let z = T::TAU() * r;
                    half * T::TAU() * r.powf(-nu) * bessel_j(order, z)
                };
                DsigmaValue { value: Complex::new(value, T::zero()), stderr: T::zero() }
            }
            DsigmaBackend::MonteCarlo { .. } => {
                let key: Vec<u64> = xi.iter().map(|v| v.as_f64().to_bits()).collect();
                if let Some(v) = self.cache.lock().expect("dsigma cache poisoned").get(&key) {
                    return *v;
                }
                let v = self.monte_carlo(xi);
                self.cache.lock().expect("dsigma cache poisoned").insert(key, v);
                v
            }
        }
    }

    fn monte_carlo(&self, xi: &[T]) -> DsigmaValue<T> {
        let n = self.dim;
        let m = self.weights.len();
        let mut sum = Complex::new(0.0f64, 0.0);
        let mut sq = 0.0f64;
        for (i, &w) in self.weights.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let y = &self.nodes[i * n..(i + 1) * n];
            let dot: f64 = y.iter().zip(xi).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
            let z = e(-dot) * w.as_f64();
            sum += z;
            sq += z.norm_sqr();
        }
        let mean = sum / m as f64;
        let var = (sq / m as f64 - mean.norm_sqr()).max(0.0) * m as f64 / (m as f64 - 1.0).max(1.0);
        DsigmaValue {
            value: Complex::new(T::of(mean.re), T::of(mean.im)),
            stderr: T::of((var / m as f64).sqrt()),
        }
    }
}

/// The radial factor multiplying each arithmetic coefficient in the main terms.
#[derive(Clone, Copy, Debug)]
pub enum ContinuousFactor {
    /// `∫ e(x·η) dσ(x) = d̃σ(−η)`
    SurfaceMeasure,
    /// A real radial profile `|η| ↦ f(|η|)` standing in for `d̃σ`.
    StandIn(fn(f64) -> f64),
}

/// `ω̂_λ(ξ) = r(λ)^{−1} Σ_{Q(x)=λ} ψ(x/λ^{1/k}) e(x·ξ)`.
pub struct OmegaHat<T: Real> {
    lambda: u64,
    count: f64,
    kind: OmegaKind<T>,
}

enum OmegaKind<T: Real> {
    /// Per-coordinate `(c_i x^k, x, ψ_i weight)`, combined by convolution over coordinates.
    Separable { coords: Vec<Vec<(usize, i64, T)>> },
    Listed(SolutionSet),
}

impl<T: Real> OmegaHat<T> {
    pub fn new(form: &IntegralForm, psi: &CutoffPsi, lambda: u64, budget: &Budget) -> Result<Self> {
        let separable = form.diagonal_coefficients().is_some_and(|c| {
            psi.is_separable() && (form.is_positive_definite() || (psi.support_in_positive_orthant() && c.iter().all(|&v| v > 0)))
        });
        let kind = if separable {
            let coeffs = form.diagonal_coefficients().unwrap();
            let ranges = search_ranges(form, psi, lambda, None)?;
            budget.check(ranges.iter().map(|r| r.len() as u128).sum::<u128>() * (lambda as u128 + 1))?;
            let scale = if lambda == 0 { 1.0 } else { (lambda as f64).powf(1.0 / form.degree() as f64) };
            let coords = ranges
                .iter()
                .zip(coeffs)
                .map(|(r, &c)| {
                    r.iter()
                        .filter_map(|&x| {
                            let v = (x as i128).checked_pow(form.degree())? * c as i128;
                            let w = psi.coordinate_factor(x as f64 / scale)?;
                            (v <= lambda as i128 && w > 0.0).then(|| (v as usize, x, T::of(w)))
                        })
                        .collect()
                })
                .collect();
            OmegaKind::Separable { coords }
        } else {
            OmegaKind::Listed(enumerate_solutions(form, psi, lambda, budget)?)
        };
        let mut omega = Self { lambda, count: 0.0, kind };
        let zero = vec![T::zero(); form.dim()];
        omega.count = omega.raw(&zero).re.as_f64();
        if omega.count <= 0.0 {
            return Err(Error::NotRepresented(lambda));
        }
        Ok(omega)
    }

    pub fn lambda(&self) -> u64 {
        self.lambda
    }

    /// `r_{Q,ψ}(λ)`
    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn solutions(&self) -> Option<&SolutionSet> {
        match &self.kind {
            OmegaKind::Listed(s) => Some(s),
            OmegaKind::Separable { .. } => None,
        }
    }

    fn raw(&self, xi: &[T]) -> Complex<T> {
        let zero = Complex::new(T::zero(), T::zero());
        match &self.kind {
            OmegaKind::Listed(s) => s.points.iter().zip(&s.weights).fold(zero, |acc, (x, &w)| {
                let dot = x.iter().zip(xi).fold(T::zero(), |a, (&xi_, &f)| a + T::of_int(xi_) * f);
                acc + e(dot) * T::of(w)
            }),
            OmegaKind::Separable { coords } => {
                let len = self.lambda as usize + 1;
                let g = |i: usize| -> Vec<(usize, Complex<T>)> {
                    let mut out: Vec<(usize, Complex<T>)> = Vec::with_capacity(coords[i].len());
                    for &(v, x, w) in &coords[i] {
                        let z = e(T::of_int(x) * xi[i]) * w;
                        match out.last_mut() {
                            Some(last) if last.0 == v => last.1 = last.1 + z,
                            _ => out.push((v, z)),
                        }
                    }
                    out.sort_by_key(|p| p.0);
                    out
                };
                let n = coords.len();
                if n == 1 {
                    return g(0).iter().filter(|p| p.0 == self.lambda as usize).fold(zero, |a, p| a + p.1);
                }
                let mut acc = vec![zero; len];
                for (v, z) in g(0) {
                    acc[v] = acc[v] + z;
                }
                for i in 1..n - 1 {
                    let gi = g(i);
                    let mut next = vec![zero; len];
                    for (m, slot) in next.iter_mut().enumerate() {
                        let mut s = zero;
                        for &(v, z) in &gi {
                            if v > m {
                                break;
                            }
                            s = s + acc[m - v] * z;
                        }
                        *slot = s;
                    }
                    acc = next;
                }
                let l = self.lambda as usize;
                g(n - 1).iter().filter(|p| p.0 <= l).fold(zero, |s, &(v, z)| s + acc[l - v] * z)
            }
        }
    }

    pub fn eval(&self, xi: &[T]) -> Complex<T> {
        self.raw(xi) / T::of(self.count)
    }
}

/// Nearest `𝐚/d` to `ξ` coordinatewise: `(𝐚 mod d, ξ − 𝐚/d)`.
fn nearest_fraction<T: Real>(xi: &[T], d: u64) -> (Vec<u64>, Vec<T>) {
    let df = T::of_usize(d as usize);
    let mut avec = Vec::with_capacity(xi.len());
    let mut eta = Vec::with_capacity(xi.len());
    for &x in xi {
        let m = (x * df).round();
        let mi = m.to_i64().expect("frequency fits in i64");
        avec.push(mi.rem_euclid(d as i64) as u64);
        eta.push(x - m / df);
    }
    (avec, eta)
}

fn wrap<T: Real>(t: T) -> T {
    t - t.round()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierKind {
    OmegaHat,
    MainTerm,
    MainTermJ,
    Truncated,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSample<T> {
    pub kind: MultiplierKind,
    pub lambda: u64,
    pub j: u32,
    /// `q`, `d`, or `J_max`, depending on the kind.
    pub index: u64,
    pub xi: Vec<T>,
    pub value: Complex<T>,
}

/// Shared state for main-term evaluation: form, cutoff, surface measure, Möbius function.
pub struct MultiplierContext<'a, T: Real> {
    form: &'a IntegralForm,
    psi: &'a CutoffPsi,
    surface: SurfaceMeasure<T>,
    factor: ContinuousFactor,
    mobius: fn(u64) -> i64,
    budget: Budget,
}

impl<'a, T: Real> MultiplierContext<'a, T> {
    pub fn new(form: &'a IntegralForm, psi: &'a CutoffPsi, surface: SurfaceMeasure<T>, budget: Budget) -> Self {
        Self { form, psi, surface, factor: ContinuousFactor::SurfaceMeasure, mobius, budget }
    }

    pub fn with_factor(mut self, factor: ContinuousFactor) -> Self {
        self.factor = factor;
        self
    }

    /// Replaces the Möbius function, for mutation testing.
    pub fn with_mobius(mut self, mobius: fn(u64) -> i64) -> Self {
        self.mobius = mobius;
        self
    }

    pub fn form(&self) -> &IntegralForm {
        self.form
    }

    pub fn psi(&self) -> &CutoffPsi {
        self.psi
    }

    pub fn surface(&self) -> &SurfaceMeasure<T> {
        &self.surface
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    fn lambda_root(&self, lambda: u64) -> T {
        T::of(lambda as f64).powf(T::one() / T::of_usize(self.form.degree() as usize))
    }

    fn continuous(&self, eta: &[T]) -> Complex<T> {
        match self.factor {
            ContinuousFactor::SurfaceMeasure => {
                let neg: Vec<T> = eta.iter().map(|&v| -v).collect();
                self.surface.eval(&neg).value
            }
            ContinuousFactor::StandIn(f) => {
                let r = eta.iter().fold(0.0, |acc, v| acc + v.as_f64().powi(2)).sqrt();
                Complex::new(T::of(f(r)), T::zero())
            }
        }
    }

    /// `Σ_a F_d(a, 𝐚) e(−aλ/d)` with `a` over `U_d` or all of `Z_d`.
    fn arithmetic_factor(&self, lambda: u64, d: u64, avec: &[u64], complete: bool) -> Result<Complex<T>> {
        let residues: Vec<u64> = if complete { (0..d).collect() } else { units(d) };
        let mut acc = Complex::new(T::zero(), T::zero());
        for a in residues {
            let f = weyl_sum::<T>(self.form, d, a, avec, &self.budget)?.value;
            let phase = (a as u128 * lambda as u128 % d as u128) as u64;
            acc = acc + f * e(-T::of(phase as f64) / T::of(d as f64));
        }
        Ok(acc)
    }

    fn localized(&self, lambda: u64, j: u32, d: u64, xi: &[T], complete: bool) -> Result<Complex<T>> {
        let (avec, eta) = nearest_fraction(xi, d);
        let scale = T::of(10f64.powi(j as i32));
        let z = zeta_vec(&eta.iter().map(|&v| v * scale).collect::<Vec<_>>());
        if z == T::zero() {
            return Ok(Complex::new(T::zero(), T::zero()));
        }
        // The ζ(10^j ·) supports around distinct 𝐚/d are disjoint.
        debug_assert!(eta.iter().all(|v| v.as_f64().abs() <= 0.5 / d as f64 + 1e-12));
        let root = self.lambda_root(lambda);
        let arg: Vec<T> = eta.iter().map(|&v| v * root).collect();
        Ok(self.arithmetic_factor(lambda, d, &avec, complete)? * self.continuous(&arg) * z)
    }

    fn localized_unpruned(&self, lambda: u64, j: u32, d: u64, xi: &[T], complete: bool) -> Result<Complex<T>> {
        let n = self.form.dim();
        self.budget.check((d as u128).pow(n as u32))?;
        let scale = T::of(10f64.powi(j as i32));
        let root = self.lambda_root(lambda);
        let df = T::of(d as f64);
        let mut acc = Complex::new(T::zero(), T::zero());
        let mut avec = vec![0u64; n];
        loop {
            let eta: Vec<T> = xi.iter().zip(&avec).map(|(&x, &a)| wrap(x - T::of(a as f64) / df)).collect();
            let z = zeta_vec(&eta.iter().map(|&v| v * scale).collect::<Vec<_>>());
            let arg: Vec<T> = eta.iter().map(|&v| v * root).collect();
            acc = acc + self.arithmetic_factor(lambda, d, &avec, complete)? * self.continuous(&arg) * z;
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(acc);
                }
                i -= 1;
                avec[i] += 1;
                if avec[i] < d {
                    break;
                }
                avec[i] = 0;
            }
        }
    }

    fn check_q(j: u32, q: u64) -> Result<()> {
        if j == 0 || !dyadic_range(j).contains(&q) {
            return Err(Error::InvalidParameter(format!("q = {q} is not in I_{j} = [2^{{j-1}}, 2^j)")));
        }
        Ok(())
    }

    /// `m_{λ,j,q}(ξ)` with locality pruning.
    pub fn main_term(&self, lambda: u64, j: u32, q: u64, xi: &[T]) -> Result<Complex<T>> {
        Self::check_q(j, q)?;
        self.localized(lambda, j, q, xi, false)
    }

    /// `m_{λ,j,q}(ξ)` summed over every `𝐚 ∈ Z_q^n`, without pruning.
    pub fn main_term_unpruned(&self, lambda: u64, j: u32, q: u64, xi: &[T]) -> Result<Complex<T>> {
        Self::check_q(j, q)?;
        self.localized_unpruned(lambda, j, q, xi, false)
    }

    /// `Ω_{λ,j,d}(ξ)`: the main term with `a` over all of `Z_d`.
    pub fn completed_term(&self, lambda: u64, j: u32, d: u64, xi: &[T]) -> Result<Complex<T>> {
        if d == 0 || j == 0 {
            return Err(Error::InvalidParameter("need d >= 1 and j >= 1".into()));
        }
        self.localized(lambda, j, d, xi, true)
    }

    pub fn completed_term_unpruned(&self, lambda: u64, j: u32, d: u64, xi: &[T]) -> Result<Complex<T>> {
        if d == 0 || j == 0 {
            return Err(Error::InvalidParameter("need d >= 1 and j >= 1".into()));
        }
        self.localized_unpruned(lambda, j, d, xi, true)
    }

    /// `m_{λ,j}(ξ) = Σ_{q ∈ I_j} m_{λ,j,q}(ξ)`
    pub fn main_term_j(&self, lambda: u64, j: u32, xi: &[T]) -> Result<Complex<T>> {
        dyadic_range(j).try_fold(Complex::new(T::zero(), T::zero()), |acc, q| Ok(acc + self.main_term(lambda, j, q, xi)?))
    }

    /// `Σ_{j ≤ J_max} m_{λ,j}(ξ)`
    pub fn truncated(&self, lambda: u64, j_max: u32, xi: &[T]) -> Result<Complex<T>> {
        (1..=j_max).try_fold(Complex::new(T::zero(), T::zero()), |acc, j| Ok(acc + self.main_term_j(lambda, j, xi)?))
    }

    /// `λ^{n/k−1} / r(λ)`: puts the main terms on the scale of `ω̂_λ`.
    pub fn normalization(&self, lambda: u64, count: f64) -> T {
        T::of((lambda as f64).powf(self.form.homogeneity_ratio() - 1.0) / count)
    }

    pub fn sample(&self, kind: MultiplierKind, lambda: u64, j: u32, index: u64, xi: &[T]) -> Result<MultiplierSample<T>> {
        let value = match kind {
            MultiplierKind::OmegaHat => OmegaHat::new(self.form, self.psi, lambda, &self.budget)?.eval(xi),
            MultiplierKind::MainTerm => self.main_term(lambda, j, index, xi)?,
            MultiplierKind::MainTermJ => self.main_term_j(lambda, j, xi)?,
            MultiplierKind::Truncated => self.truncated(lambda, index as u32, xi)?,
            MultiplierKind::Completed => self.completed_term(lambda, j, index, xi)?,
        };
        Ok(MultiplierSample { kind, lambda, j, index, xi: xi.to_vec(), value })
    }

    pub fn divisor_constant(&self, j: u32, d: u64) -> i64 {
        divisor_constant_with(j, d, self.mobius)
    }

    /// `max_ξ |m_{λ,j,q}(ξ) − Σ_{d|q} μ(q/d) Ω_{λ,j,d}(ξ)|`
    pub fn completion_residual(&self, lambda: u64, j: u32, q: u64, xis: &[Vec<T>]) -> Result<f64> {
        Self::check_q(j, q)?;
        let divs = divisors(q);
        xis.par_iter()
            .map(|xi| {
                let m = self.main_term(lambda, j, q, xi)?;
                let mut s = Complex::new(T::zero(), T::zero());
                for &d in &divs {
                    let mu = (self.mobius)(q / d);
                    if mu != 0 {
                        s = s + self.completed_term(lambda, j, d, xi)? * T::of(mu as f64);
                    }
                }
                Ok((m - s).norm().as_f64())
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
    }

    /// `max_ξ |m_{λ,j}(ξ) − Σ_d C_j(d) Ω_{λ,j,d}(ξ)|`
    pub fn summed_completion_residual(&self, lambda: u64, j: u32, xis: &[Vec<T>]) -> Result<f64> {
        let consts: Vec<(u64, i64)> = (1..(1u64 << j))
            .map(|d| (d, self.divisor_constant(j, d)))
            .filter(|&(_, c)| c != 0)
            .collect();
        xis.par_iter()
            .map(|xi| {
                let m = self.main_term_j(lambda, j, xi)?;
                let mut s = Complex::new(T::zero(), T::zero());
                for &(d, c) in &consts {
                    s = s + self.completed_term(lambda, j, d, xi)? * T::of(c as f64);
                }
                Ok((m - s).norm().as_f64())
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub lambda: u64,
    pub j: u32,
    pub q: u64,
    pub residual: f64,
    pub summed_residual: f64,
    pub samples: usize,
}

pub fn mobius_completion_check<T: Real>(
    ctx: &MultiplierContext<'_, T>,
    lambda: u64,
    j: u32,
    q: u64,
    xis: &[Vec<T>],
) -> Result<CompletionReport> {
    Ok(CompletionReport {
        lambda,
        j,
        q,
        residual: ctx.completion_residual(lambda, j, q, xis)?,
        summed_residual: ctx.summed_completion_residual(lambda, j, xis)?,
        samples: xis.len(),
    })
}

/// `count` points uniform in `[−1/2, 1/2)^n`.
pub fn uniform_frequencies<T: Real>(n: usize, count: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| T::of(rng.gen::<f64>() - 0.5)).collect()).collect()
}

/// Every `𝐚/q ∈ [−1/2, 1/2)^n` with `q ≤ q_max`, without repetition.
pub fn rational_frequencies<T: Real>(n: usize, q_max: u64) -> Vec<Vec<T>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for q in 1..=q_max {
        let total = (q as u128).pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let mut key = Vec::with_capacity(n);
            let mut xi = Vec::with_capacity(n);
            for _ in 0..n {
                let a = (rem % q as u128) as u64;
                rem /= q as u128;
                let g = crate::arith::gcd(a, q);
                key.push((a / g, q / g));
                let mut v = a as f64 / q as f64;
                if v >= 0.5 {
                    v -= 1.0;
                }
                xi.push(T::of(v));
            }
            if seen.insert(key) {
                out.push(xi);
            }
        }
    }
    out
}

/// Random rationals `𝐚/q` (`q ≤ q_max`) displaced by at most `offset` in each coordinate.
pub fn near_rational_frequencies<T: Real>(n: usize, count: usize, q_max: u64, offset: f64, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q = rng.gen_range(1..=q_max);
            (0..n)
                .map(|_| {
                    let a = rng.gen_range(0..q) as f64;
                    T::of(wrap(a / q as f64 + rng.gen_range(-offset..=offset)))
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub lambda: u64,
    pub count: f64,
    /// `max_ξ |ω̂_λ(ξ) − N_λ Σ_{j ≤ J} m_{λ,j}(ξ)|`
    pub error: f64,
    /// `|1 − N_λ Σ_j m_{λ,j}(0)|` when `ξ = 0` was sampled.
    pub error_at_zero: Option<f64>,
    /// Bound on the omitted scales `j ∈ (J, J+4]`: `N_λ |d̃σ(0)| Σ_q φ(q) s(q)`.
    pub tail_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub j_max: u32,
    pub samples: usize,
    pub points: Vec<DecayPoint>,
    pub delta_hat: f64,
    pub correlation: f64,
    pub pass: bool,
}

/// Error of the truncated, normalized main term against `ω̂_λ`, and its decay in `λ`.
pub fn error_term_decay<T: Real>(
    ctx: &MultiplierContext<'_, T>,
    lambdas: &[u64],
    j_max: u32,
    xis: &[Vec<T>],
) -> Result<DecayReport> {
    if lambdas.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: lambdas.len() });
    }
    let form = ctx.form();
    let mut tail_sum = 0.0;
    for j in j_max + 1..=j_max + 4 {
        for q in dyadic_range(j) {
            let (s, _) = weyl_supremum(form, q, &AlphaOptions::default(), ctx.budget())?;
            tail_sum += units(q).len() as f64 * s;
        }
    }
    let dsigma0 = ctx.surface().eval(&vec![T::zero(); form.dim()]).value.norm().as_f64();
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let omega = OmegaHat::<T>::new(form, ctx.psi(), lambda, ctx.budget())?;
        let norm = ctx.normalization(lambda, omega.count());
        let errs: Vec<(f64, bool)> = xis
            .par_iter()
            .map(|xi| {
                let m = ctx.truncated(lambda, j_max, xi)? * norm;
                let err = (omega.eval(xi) - m).norm().as_f64();
                Ok((err, xi.iter().all(|v| *v == T::zero())))
            })
            .collect::<Result<Vec<_>>>()?;
        let error = errs.iter().map(|p| p.0).fold(0.0, f64::max);
        let error_at_zero = errs.iter().find(|p| p.1).map(|p| p.0);
        points.push(DecayPoint {
            lambda,
            count: omega.count(),
            error,
            error_at_zero,
            tail_bound: norm.as_f64() * dsigma0 * tail_sum,
        });
    }
    let usable: Vec<&DecayPoint> = points.iter().filter(|p| p.error > 0.0).collect();
    if usable.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: usable.len() });
    }
    let x: Vec<f64> = usable.iter().map(|p| (p.lambda as f64).ln()).collect();
    let y: Vec<f64> = usable.iter().map(|p| p.error.ln()).collect();
    let (slope, _, correlation) = linear_fit(&x, &y);
    Ok(DecayReport { j_max, samples: xis.len(), points, delta_hat: -slope, correlation, pass: -slope > 0.0 })
}

/// `ζ̂(u) = ∫ ζ(s) e(−us) ds`, by composite Simpson quadrature on `[−1/5, 1/5]`.
pub fn zeta_hat(u: f64) -> f64 {
    const PANELS: usize = 2000;
    let h = 0.4 / PANELS as f64;
    let f = |s: f64| zeta(s) * (std::f64::consts::TAU * u * s).cos();
    let mut acc = f(-0.2) + f(0.2);
    for i in 1..PANELS {
        let s = -0.2 + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(s);
    }
    acc * h / 3.0
}

/// `V_{t,d}(x) = d 1_{Q(x) ≡ t mod d} ∫_{[−1/2,1/2]^n} ζ(dξ) e(−x·ξ) dξ`, with the product bump
/// the integral is `d^{−n} Π_i ζ̂(x_i/d)`. One-dimensional factors are cached per `(d, x_i)`.
pub struct KernelVtd {
    cache: Mutex<HashMap<(u64, i64), f64>>,
}

impl Default for KernelVtd {
    fn default() -> Self {
        Self::new()
    }
}

impl KernelVtd {
    pub fn new() -> Self {
        Self { cache: Mutex::new(HashMap::new()) }
    }

    fn factor(&self, d: u64, x: i64) -> f64 {
        if let Some(&v) = self.cache.lock().expect("kernel cache poisoned").get(&(d, x)) {
            return v;
        }
        let v = zeta_hat(x as f64 / d as f64);
        self.cache.lock().expect("kernel cache poisoned").insert((d, x), v);
        v
    }

    pub fn eval(&self, form: &IntegralForm, d: u64, t: i64, x: &[i64]) -> f64 {
        if form.eval_mod(x, d) != t.rem_euclid(d as i64) as u64 {
            return 0.0;
        }
        let n = x.len() as i32;
        let prod: f64 = x.iter().map(|&xi| self.factor(d, xi)).product();
        d as f64 * prod / (d as f64).powi(n)
    }

    /// `d 1_{Q(x)≡t} / (d^n (√n + 1 + |x|/d)^{n+1})`
    pub fn envelope(form: &IntegralForm, d: u64, t: i64, x: &[i64]) -> f64 {
        if form.eval_mod(x, d) != t.rem_euclid(d as i64) as u64 {
            return 0.0;
        }
        let n = x.len() as f64;
        let r = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        d as f64 / ((d as f64).powf(n) * (n.sqrt() + 1.0 + r / d as f64).powf(n + 1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub d: u64,
    pub t: i64,
    pub fitted_constant: f64,
    pub checked: usize,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Fits `C` in `|V_{t,d}(x)| ≤ C · envelope(x)` on the box `|x|_∞ ≤ fit_radius`, then checks
/// `checks` random points with `|x|_∞ ≤ check_radius`.
pub fn kernel_envelope_check(
    form: &IntegralForm,
    kernel: &KernelVtd,
    d: u64,
    t: i64,
    fit_radius: i64,
    check_radius: i64,
    checks: usize,
    seed: u64,
) -> EnvelopeReport {
    let n = form.dim();
    let side = (2 * fit_radius + 1) as usize;
    let mut fitted = 0.0f64;
    for idx in 0..side.pow(n as u32) {
        let mut rem = idx;
        let x: Vec<i64> = (0..n)
            .map(|_| {
                let v = (rem % side) as i64 - fit_radius;
                rem /= side;
                v
            })
            .collect();
        let env = KernelVtd::envelope(form, d, t, &x);
        if env > 0.0 {
            fitted = fitted.max(kernel.eval(form, d, t, &x).abs() / env);
        }
    }
    let constant = fitted * 1.05;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    let mut checked = 0;
    while checked < checks {
        let x: Vec<i64> = (0..n).map(|_| rng.gen_range(-check_radius..=check_radius)).collect();
        let env = KernelVtd::envelope(form, d, t, &x);
        if env == 0.0 {
            continue;
        }
        checked += 1;
        max_ratio = max_ratio.max(kernel.eval(form, d, t, &x).abs() / env);
    }
    EnvelopeReport { d, t, fitted_constant: constant, checked, max_ratio, pass: max_ratio <= constant }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayDecay {
    pub rays: usize,
    pub radii: Vec<f64>,
    /// Largest `|d̃σ(tω)|` over the rays within each dyadic block `[2^m, 2^{m+1})`.
    pub block_maxima: Vec<f64>,
    pub exponent: f64,
    pub predicted_exponent: f64,
    /// `(ray, t, |d̃σ(tω)|)`
    #[serde(skip)]
    pub samples: Vec<(usize, f64, f64)>,
}

/// Fits the decay of `|d̃σ|` along `rays` random directions over `t ∈ [1, t_max]`, using block
/// maxima over dyadic blocks.
pub fn dsigma_ray_decay<T: Real>(surface: &SurfaceMeasure<T>, dim: usize, rays: usize, t_max: f64, step: f64, seed: u64) -> Result<RayDecay> {
    let blocks = t_max.log2().floor() as usize;
    if blocks < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: blocks });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..rays)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut block_maxima = vec![0.0f64; blocks];
    let steps = ((t_max - 1.0) / step).floor() as usize;
    let samples: Vec<(usize, f64, f64)> = (0..steps)
        .into_par_iter()
        .flat_map_iter(|i| {
            let t = 1.0 + i as f64 * step;
            dirs.iter()
                .enumerate()
                .map(|(r, w)| {
                    let xi: Vec<T> = w.iter().map(|&c| T::of(c * t)).collect();
                    (r, t, surface.eval(&xi).value.norm().as_f64())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    for &(_, t, v) in &samples {
        let b = t.log2().floor() as usize;
        if b < blocks {
            block_maxima[b] = block_maxima[b].max(v);
        }
    }
    let radii: Vec<f64> = (0..blocks).map(|m| 2f64.powi(m as i32)).collect();
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = block_maxima.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let (slope, _, _) = linear_fit(&x, &y);
    Ok(RayDecay { rays, radii, block_maxima, exponent: -slope, predicted_exponent: surface.decay_exponent(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_sphere<'a>(f: &'a IntegralForm, psi: &'a CutoffPsi) -> MultiplierContext<'a, f64> {
        let s = SurfaceMeasure::new(f, psi, DsigmaBackend::SphereClosedForm).unwrap();
        MultiplierContext::new(f, psi, s, Budget::default())
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(0.0f64), 1.0);
        assert_eq!(zeta(0.1f64), 1.0);
        assert_eq!(zeta(0.25f64), 0.0);
        assert_eq!(zeta(-0.2f64), 0.0);
        let v = zeta(0.15f64);
        assert!(v > 0.0 && v < 1.0);
        for i in 0..100 {
            let t = i as f64 / 300.0;
            assert_eq!(zeta(t), zeta(-t));
        }
    }

    #[test]
    fn zeta_derivatives_are_bounded() {
        let h = 1e-3;
        let mut max3 = 0.0f64;
        for i in -300..300 {
            let t = i as f64 / 1000.0;
            let d3 = (zeta(t + 2.0 * h) - 2.0 * zeta(t + h) + 2.0 * zeta(t - h) - zeta(t - 2.0 * h)) / (2.0 * h.powi(3));
            max3 = max3.max(d3.abs());
        }
        assert!(max3.is_finite() && max3 < 1e6);
    }

    #[test]
    fn divisor_constant_examples() {
        assert_eq!(divisor_constant(2, 2), 1);
        assert_eq!(divisor_constant(2, 1), -2);
        for j in 1..8 {
            for d in (1u64 << j)..(1u64 << j) + 10 {
                assert_eq!(divisor_constant(j, d), 0);
            }
        }
    }

    #[test]
    fn dsigma_at_zero_is_half_the_area() {
        let f = IntegralForm::sphere(5);
        let s = SurfaceMeasure::<f64>::new(&f, &CutoffPsi::Unit, DsigmaBackend::SphereClosedForm).unwrap();
        let v = s.eval(&[0.0; 5]).value;
        assert!((v.re - 4.0 * std::f64::consts::PI.powi(2) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_refuses_other_forms() {
        let f = IntegralForm::k_sphere(4, 3);
        assert!(SurfaceMeasure::<f64>::new(&f, &CutoffPsi::Unit, DsigmaBackend::SphereClosedForm).is_err());
    }

    #[test]
    fn monte_carlo_fails_without_real_points() {
        // -x^2 - y^2 has no real point on {Q = 1}.
        let f = IntegralForm::diagonal(2, vec![-1, -1]).unwrap();
        let err = SurfaceMeasure::<f64>::new(&f, &CutoffPsi::Unit, DsigmaBackend::MonteCarlo { samples: 1000, seed: 1 });
        assert!(matches!(err, Err(Error::SurfaceSampling(_))));
    }

    #[test]
    fn omega_examples() {
        let f = IntegralForm::sphere(5);
        let b = Budget::default();
        let w = OmegaHat::<f64>::new(&f, &CutoffPsi::Unit, 1, &b).unwrap();
        assert_eq!(w.count(), 10.0);
        assert!((w.eval(&[0.0; 5]) - Complex::new(1.0, 0.0)).norm() < 1e-14);
        let v = w.eval(&[0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((v - Complex::new(0.6, 0.0)).norm() < 1e-14);
        assert!(matches!(OmegaHat::<f64>::new(&IntegralForm::sphere(3), &CutoffPsi::Unit, 7, &b), Err(Error::NotRepresented(7))));
    }

    #[test]
    fn separable_and_listed_omega_agree() {
        let b = Budget::default();
        let diag = IntegralForm::diagonal(2, vec![1, 2, 3]).unwrap();
        let quad = IntegralForm::quadratic(vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 3]]).unwrap();
        for lambda in [6u64, 11, 30] {
            let a = OmegaHat::<f64>::new(&diag, &CutoffPsi::Unit, lambda, &b).unwrap();
            let c = OmegaHat::<f64>::new(&quad, &CutoffPsi::Unit, lambda, &b).unwrap();
            assert_eq!(a.count(), c.count());
            for xi in uniform_frequencies::<f64>(3, 10, lambda) {
                assert!((a.eval(&xi) - c.eval(&xi)).norm() < 1e-12);
            }
        }
        // Weighted: odd degree on the positive orthant.
        let cubic = IntegralForm::diagonal(3, vec![1, 1, 1]).unwrap();
        let psi = CutoffPsi::positive_orthant();
        let a = OmegaHat::<f64>::new(&cubic, &psi, 36, &b).unwrap();
        let listed = enumerate_solutions(&cubic, &psi, 36, &b).unwrap();
        assert!((a.count() - listed.count()).abs() < 1e-12);
    }

    #[test]
    fn main_term_far_from_rationals_vanishes() {
        let f = IntegralForm::sphere(3);
        let psi = CutoffPsi::Unit;
        let ctx = ctx_sphere(&f, &psi);
        let xi = [0.3, 0.3, 0.3];
        assert_eq!(ctx.main_term(10, 2, 2, &xi).unwrap(), Complex::new(0.0, 0.0));
        assert!(ctx.main_term(10, 2, 4, &xi).is_err());
    }

    #[test]
    fn first_main_term_at_zero_is_dsigma_mass() {
        let f = IntegralForm::sphere(5);
        let psi = CutoffPsi::Unit;
        let ctx = ctx_sphere(&f, &psi);
        let v = ctx.main_term(7, 1, 1, &[0.0; 5]).unwrap();
        assert!((v.re - 4.0 * std::f64::consts::PI.powi(2) / 3.0).abs() < 1e-12);
        let w = ctx.completed_term(7, 1, 1, &[0.0; 5]).unwrap();
        assert_eq!(v, w);
    }

    #[test]
    fn pruned_matches_unpruned() {
        let f = IntegralForm::sphere(5);
        let psi = CutoffPsi::Unit;
        let ctx = ctx_sphere(&f, &psi);
        let xi = [0.5, 0.0, 0.0, 0.0, 0.0];
        let a = ctx.main_term(25, 2, 2, &xi).unwrap();
        let b = ctx.main_term_unpruned(25, 2, 2, &xi).unwrap();
        assert!((a - b).norm() < 1e-12);
        assert!(a.norm() > 0.0);
        for xi in near_rational_frequencies::<f64>(5, 20, 3, 0.02, 3) {
            for q in [2u64, 3] {
                let a = ctx.main_term(25, 2, q, &xi).unwrap();
                let b = ctx.main_term_unpruned(25, 2, q, &xi).unwrap();
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn completed_term_at_zero_matches_counts() {
        let f = IntegralForm::sphere(4);
        let psi = CutoffPsi::Unit;
        let ctx = ctx_sphere(&f, &psi);
        for (d, lambda) in [(3u64, 5u64), (5, 2), (7, 0)] {
            let v = ctx.completed_term(lambda, 3, d, &[0.0; 4]).unwrap();
            let count = crate::counting::count_mod(&f, lambda as i64, d, &Budget::default()).unwrap().value;
            let expected = 2.0 * std::f64::consts::PI.powi(2) / 2.0 * count as f64 / (d as f64).powi(3);
            assert!((v.re - expected).abs() < 1e-10, "d = {d}");
        }
    }

    #[test]
    fn prime_completion_has_two_terms() {
        let f = IntegralForm::sphere(3);
        let psi = CutoffPsi::Unit;
        let ctx = ctx_sphere(&f, &psi);
        for xi in near_rational_frequencies::<f64>(3, 10, 3, 0.01, 9) {
            let m = ctx.main_term(6, 2, 3, &xi).unwrap();
            let two = ctx.completed_term(6, 2, 3, &xi).unwrap() - ctx.completed_term(6, 2, 1, &xi).unwrap();
            assert!((m - two).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_examples() {
        let f = IntegralForm::sphere(2);
        let k = KernelVtd::new();
        assert_eq!(k.eval(&f, 3, 1, &[0, 0]), 0.0);
        let v = k.eval(&IntegralForm::sphere(2), 1, 0, &[0, 0]);
        assert!(v > 0.0);
        // ∫ζ = 0.3 by symmetry of the smooth step about the middle of each ramp.
        assert!((zeta_hat(0.0) - 0.3).abs() < 1e-9);
    }
}
