//! Lacunary sequences: validation, regular-value progressions, and the counterexample plan that
//! puts one maximizing `λ(b)` per residue class `b mod p^J` into consecutive dyadic windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::is_prime;
use crate::counting::{
    count_representations, restricted_maximizer, residue_vectors, ConvolutionMethod, MaximizerConfig, RepCountTable,
    ResidueClassTables, DEFAULT_C0,
};
use crate::error::{Budget, Error, Result};
use crate::forms::{CutoffPsi, IntegralForm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Dyadic,
    User,
    Counterexample { p: u64, j: u32, windows: Vec<(u64, u64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LacunarySequence {
    pub terms: Vec<u64>,
    /// Smallest consecutive ratio.
    pub c_min: f64,
    pub provenance: Provenance,
}

impl LacunarySequence {
    pub fn new(terms: Vec<u64>, provenance: Provenance) -> Result<Self> {
        let (_, c_min) = validate_lacunary(&terms)?;
        Ok(Self { terms, c_min, provenance })
    }

    /// `2^{start}, 2^{start+1}, …` (`len` terms).
    pub fn dyadic(start: u32, len: usize) -> Result<Self> {
        let terms = (0..len as u32)
            .map(|i| 1u64.checked_shl(start + i).ok_or(Error::Overflow("dyadic term")))
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms, Provenance::Dyadic)
    }
}

/// `(c_min > 1, c_min)` with `c_min = min λ_{i+1}/λ_i`.
pub fn validate_lacunary(terms: &[u64]) -> Result<(bool, f64)> {
    if terms.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: terms.len() });
    }
    if terms[0] == 0 {
        return Err(Error::InvalidParameter("terms must be positive".into()));
    }
    let mut c_min = f64::INFINITY;
    for w in terms.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidParameter(format!("terms not strictly increasing at {} -> {}", w[0], w[1])));
        }
        c_min = c_min.min(w[1] as f64 / w[0] as f64);
    }
    Ok((c_min > 1.0, c_min))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressionClass {
    pub modulus: u64,
    pub residue: u64,
    /// `min r(λ)/λ^{n/k−1}` over the class within `[cap/4, cap]`.
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularProgression {
    pub cap: u64,
    pub q_scan: u64,
    pub threshold: f64,
    /// Smallest modulus with a regular class, and its best class.
    pub gamma: ProgressionClass,
    pub full_integers: bool,
    /// Every class modulo `q_scan`.
    pub classes: Vec<ProgressionClass>,
}

/// Scans `{qt + r}` for `q ≤ q_scan` and reports the progressions along which
/// `r(λ)/λ^{n/k−1}` stays bounded below on `[cap/4, cap]`.
pub fn detect_regular_progression(
    form: &IntegralForm,
    psi: &CutoffPsi,
    cap: u64,
    q_scan: u64,
    budget: &Budget,
) -> Result<RegularProgression> {
    if cap < 10 {
        return Err(Error::InvalidParameter(format!("table cap {cap} is too short (need at least 10)")));
    }
    if q_scan == 0 {
        return Err(Error::InvalidParameter("q_scan must be positive".into()));
    }
    let lo = (cap / 4).max(1);
    let counts: Vec<f64> = if psi.is_unit() {
        let t = RepCountTable::build(form, cap, None, budget)?;
        t.counts()[lo as usize..=cap as usize].iter().map(|&c| c as f64).collect()
    } else {
        (lo..=cap)
            .into_par_iter()
            .map(|l| count_representations(form, psi, l, budget))
            .collect::<Result<_>>()?
    };
    let expo = form.homogeneity_ratio() - 1.0;
    let scaled: Vec<f64> = counts.iter().zip(lo..).map(|(&c, l)| c / (l as f64).powf(expo)).collect();
    let class = |q: u64, r: u64| -> ProgressionClass {
        let constant = scaled
            .iter()
            .zip(lo..)
            .filter(|&(_, l)| l % q == r)
            .map(|(&s, _)| s)
            .fold(f64::INFINITY, f64::min);
        ProgressionClass { modulus: q, residue: r, constant: if constant.is_finite() { constant } else { 0.0 } }
    };
    let all: Vec<ProgressionClass> = (1..=q_scan).flat_map(|q| (0..q).map(move |r| (q, r))).map(|(q, r)| class(q, r)).collect();
    let max = all.iter().map(|c| c.constant).fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::EmptyWindow(format!("no progression with positive counts on [{lo}, {cap}]")));
    }
    let threshold = 0.01 * max;
    let gamma = (1..=q_scan)
        .find_map(|q| {
            all.iter()
                .filter(|c| c.modulus == q && c.constant > threshold)
                .max_by(|a, b| a.constant.total_cmp(&b.constant))
                .cloned()
        })
        .expect("the maximal class exceeds the threshold");
    let full_integers = gamma.modulus == 1;
    let classes = all.into_iter().filter(|c| c.modulus == q_scan).collect();
    Ok(RegularProgression { cap, q_scan, threshold, gamma, full_integers, classes })
}

/// How residues are assigned dyadic windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Residue `i` gets `[2^{K+i−1}, 2^{K+i})`; consecutive ratios are only `> 1`.
    Adjacent,
    /// Residue `i` gets `[2^{K+2i−2}, 2^{K+2i−1})`; consecutive ratios exceed 2.
    Alternating,
}

impl WindowPolicy {
    /// Exponent of the lower end of the window of residue `i` (0-based).
    pub fn start(self, k: u32, i: u32) -> u32 {
        match self {
            WindowPolicy::Adjacent => k + i,
            WindowPolicy::Alternating => k + 2 * i,
        }
    }

    /// Bits needed for `m` windows starting at `2^k`.
    pub fn bits(self, k: u32, m: u64) -> u64 {
        match self {
            WindowPolicy::Adjacent => k as u64 + m,
            WindowPolicy::Alternating => k as u64 + 2 * m - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    pub p: u64,
    pub j: u32,
    /// Number of residues covered, in lexicographic order.
    pub m: u64,
    /// Window base; searched upward from `k_min` when absent.
    pub k_override: Option<u32>,
    pub k_min: u32,
    pub c0: f64,
    /// Windows must stay below `2^{cap_bits}`.
    pub cap_bits: u32,
    pub windows: WindowPolicy,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { p: 3, j: 1, m: 8, k_override: None, k_min: 2, c0: DEFAULT_C0, cap_bits: 24, windows: WindowPolicy::Alternating }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub b: Vec<u64>,
    pub window: (u64, u64),
    pub lambda: u64,
    pub count: u64,
    /// `count / (p^{−J(n−1)} λ^{n/k−1})`
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexamplePlan {
    pub p: u64,
    #[serde(rename = "J")]
    pub j: u32,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "K")]
    pub k: u32,
    pub windows: WindowPolicy,
    pub modulus: u64,
    pub c0: f64,
    pub min_ratio: f64,
    /// Every entry meets `c0`.
    pub certified: bool,
    pub residues: Vec<PlanEntry>,
}

impl CounterexamplePlan {
    pub fn terms(&self) -> Vec<u64> {
        self.residues.iter().map(|e| e.lambda).collect()
    }

    pub fn sequence(&self) -> Result<LacunarySequence> {
        let windows = self.residues.iter().map(|e| e.window).collect();
        if self.residues.len() == 1 {
            return Ok(LacunarySequence {
                terms: self.terms(),
                c_min: f64::INFINITY,
                provenance: Provenance::Counterexample { p: self.p, j: self.j, windows },
            });
        }
        LacunarySequence::new(self.terms(), Provenance::Counterexample { p: self.p, j: self.j, windows })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

fn attempt(
    form: &IntegralForm,
    config: &CounterexampleConfig,
    residues: &[Vec<u64>],
    k: u32,
    budget: &Budget,
) -> Result<(CounterexamplePlan, ResidueClassTables)> {
    let q = config.p.pow(config.j);
    let cap = (1u64 << config.windows.bits(k, residues.len() as u64)) - 1;
    let tables = ResidueClassTables::new(form, q, cap, ConvolutionMethod::Auto, *budget)?;
    let prop = MaximizerConfig { r0: 1, c0: config.c0 };
    let entries = residues
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let r = restricted_maximizer(&tables, form, b, 1u64 << config.windows.start(k, i as u32), &prop)?;
            Ok(PlanEntry { b: b.clone(), window: r.window, lambda: r.lambda_star, count: r.count, ratio: r.ratio })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_ratio = entries.iter().map(|e| e.ratio).fold(f64::INFINITY, f64::min);
    let plan = CounterexamplePlan {
        p: config.p,
        j: config.j,
        m: config.m,
        k,
        windows: config.windows,
        modulus: q,
        c0: config.c0,
        min_ratio,
        certified: entries.iter().all(|e| e.ratio >= config.c0 && e.count > 0),
        residues: entries,
    };
    Ok((plan, tables))
}

/// Orders residues mod `p^J` lexicographically, gives each one a dyadic window per the policy,
/// and picks the `λ` there maximizing `N(λ; b, p^J)`.
pub fn build_counterexample(form: &IntegralForm, config: &CounterexampleConfig, budget: &Budget) -> Result<CounterexamplePlan> {
    build_counterexample_with_tables(form, config, budget).map(|(plan, _)| plan)
}

/// As [`build_counterexample`], also returning the restricted-count tables mod `p^J` it used.
pub fn build_counterexample_with_tables(
    form: &IntegralForm,
    config: &CounterexampleConfig,
    budget: &Budget,
) -> Result<(CounterexamplePlan, ResidueClassTables)> {
    if config.p == 2 || !is_prime(config.p) {
        return Err(Error::InvalidParameter(format!("p = {} must be an odd prime", config.p)));
    }
    if config.j == 0 {
        return Err(Error::InvalidParameter("J must be positive".into()));
    }
    if config.m == 0 {
        return Err(Error::InvalidParameter("M = 0 gives an empty plan".into()));
    }
    let q = config
        .p
        .checked_pow(config.j)
        .ok_or(Error::Overflow("p^J"))?;
    let total = (q as u128).checked_pow(form.dim() as u32);
    if total.is_some_and(|t| (config.m as u128) > t) {
        return Err(Error::InvalidParameter(format!("M = {} exceeds the {} residues", config.m, total.unwrap())));
    }
    let window_check = |k: u32| -> Result<()> {
        let needed = config.windows.bits(k, config.m);
        if needed > config.cap_bits as u64 {
            return Err(Error::WindowBudget {
                requested: config.m,
                needed_bits: needed,
                feasible: (config.cap_bits as u64).saturating_sub(k as u64),
            });
        }
        Ok(())
    };
    let start = config.k_override.unwrap_or(config.k_min);
    window_check(start)?;
    let residues: Vec<Vec<u64>> = residue_vectors(q, form.dim()).take(config.m as usize).collect();
    if let Some(k) = config.k_override {
        return attempt(form, config, &residues, k, budget);
    }
    let mut k = config.k_min;
    loop {
        window_check(k)?;
        match attempt(form, config, &residues, k, budget) {
            Ok(found) if found.0.certified => return Ok(found),
            Ok(_) | Err(Error::EmptyWindow(_)) => k += 1,
            Err(e) => return Err(e),
        }
    }
}
