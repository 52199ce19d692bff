//! Named, reproducible experiments over the library, each producing an [`ExperimentReport`]
//! (JSON plus CSV sidecars).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arith::{is_prime, mobius, units};
use crate::counting::{
    count_representations, lipschitz_fit, residue_vectors, Congruence, ConvolutionMethod, ResidueClassTables,
};
use crate::error::{Budget, Error, Result};
use crate::expsums::{
    estimate_alpha, generalized_weyl_sum, random_vanishing_tuple, weyl_sum, weyl_sum_direct, AlphaOptions,
    ArithmeticCache, QFilter, IDENTITY_TOLERANCE,
};
use crate::forms::{CutoffPsi, FormKind, IntegralForm};
use crate::multipliers::{
    dsigma_ray_decay, dyadic_range, error_term_decay, near_rational_frequencies, rational_frequencies,
    uniform_frequencies, ContinuousFactor, DecayReport, DsigmaBackend, MultiplierContext, SurfaceMeasure,
};
use crate::sequences::{build_counterexample_with_tables, CounterexampleConfig, CounterexamplePlan, WindowPolicy};

/// Plain `key = value` configuration; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", no + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        if entries.is_empty() {
            return Err(Error::Config("empty configuration".into()));
        }
        Ok(Self { entries })
    }

    /// The five-dimensional sum of squares.
    pub fn default_sphere() -> Self {
        Self::from_pairs(&[("kind", "sphere"), ("n", "5")])
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self { entries: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.entries.get(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Config(format!("cannot parse {key} entry {s:?}"))))
                .collect(),
        }
    }

    /// `kind = sphere | diagonal | quadratic`, with `n`, `degree`, `coefficients`, `gram`
    /// (rows separated by `;`), optional `birch_rank` and `name`.
    pub fn form(&self) -> Result<IntegralForm> {
        let kind = self.get_str("kind").unwrap_or("sphere");
        let form = match kind {
            "sphere" => {
                let n: usize = self.require("n")?;
                match self.get("degree", 2u32)? {
                    2 => IntegralForm::sphere(n),
                    k => IntegralForm::k_sphere(k, n),
                }
            }
            "diagonal" => {
                let k: u32 = self.require("degree")?;
                let coeffs: Vec<i64> = self.get_list("coefficients", Vec::new())?;
                if coeffs.is_empty() {
                    let n: usize = self.require("n")?;
                    IntegralForm::k_sphere(k, n)
                } else {
                    IntegralForm::diagonal(k, coeffs)?
                }
            }
            "quadratic" => {
                let text = self.get_str("gram").ok_or_else(|| Error::Config("missing key gram".into()))?;
                let gram = text
                    .split(';')
                    .map(|row| {
                        row.split(',')
                            .map(|v| v.trim().parse::<i64>().map_err(|_| Error::Config(format!("bad gram entry {v:?}"))))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                IntegralForm::quadratic(gram)?
            }
            other => return Err(Error::Config(format!("unknown form kind {other:?}"))),
        };
        let form = match self.get_str("birch_rank") {
            Some(_) => form.with_birch_rank(self.require("birch_rank")?),
            None => form,
        };
        Ok(match self.get_str("name") {
            Some(name) => form.with_name(name),
            None => form,
        })
    }

    /// `psi = unit | orthant | radial` (radial takes `psi_radii` and `psi_values`).
    pub fn psi(&self, form: &IntegralForm) -> Result<CutoffPsi> {
        match self.get_str("psi") {
            None => Ok(CutoffPsi::default_for(form)),
            Some("unit") => Ok(CutoffPsi::Unit),
            Some("orthant") => Ok(CutoffPsi::positive_orthant()),
            Some("radial") => CutoffPsi::radial(self.get_list("psi_radii", Vec::new())?, self.get_list("psi_values", Vec::new())?),
            Some(other) => Err(Error::Config(format!("unknown psi {other:?}"))),
        }
    }
}

/// Seed, budget and hooks shared by every experiment.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub seed: u64,
    pub budget: Budget,
    pub timestamp: bool,
    /// Replaces the Möbius function in the completion and (F) checks.
    pub mobius: fn(u64) -> i64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 1, budget: Budget::default(), timestamp: true, mobius }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub params: Value,
    pub value: f64,
    /// `"<="` or `">="` against `tolerance`, or `"flag"`.
    pub comparison: String,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub budget_exhausted: bool,
}

impl CheckResult {
    fn base(name: &str, params: Value, value: f64, comparison: &str, tolerance: f64, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            params,
            value,
            comparison: comparison.to_string(),
            tolerance,
            pass,
            seed: None,
            stderr: None,
            error: None,
            budget_exhausted: false,
        }
    }

    pub fn at_most(name: &str, params: Value, value: f64, tolerance: f64) -> Self {
        Self::base(name, params, value, "<=", tolerance, value <= tolerance)
    }

    pub fn at_least(name: &str, params: Value, value: f64, tolerance: f64) -> Self {
        Self::base(name, params, value, ">=", tolerance, value >= tolerance)
    }

    pub fn greater(name: &str, params: Value, value: f64, bound: f64) -> Self {
        Self::base(name, params, value, ">", bound, value > bound)
    }

    pub fn failed(name: &str, params: Value, err: &Error) -> Self {
        let mut c = Self::base(name, params, f64::NAN, "error", 0.0, false);
        c.error = Some(err.to_string());
        c.budget_exhausted = err.is_budget();
        c
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

/// A CSV sidecar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Series {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub budget: u64,
    pub results: Vec<CheckResult>,
    pub summary: Value,
    pub pass: bool,
    pub provenance: ReportProvenance,
    pub outputs: Vec<String>,
    #[serde(skip)]
    pub series: Vec<Series>,
}

impl ExperimentReport {
    fn new(experiment: &str, config: &Config, opts: &RunOptions) -> Self {
        let timestamp = opts.timestamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Self {
            experiment: experiment.to_string(),
            config: config.entries.clone(),
            seed: opts.seed,
            budget: opts.budget.cap(),
            results: Vec::new(),
            summary: json!({}),
            pass: true,
            provenance: ReportProvenance { version: env!("CARGO_PKG_VERSION").to_string(), timestamp },
            outputs: Vec::new(),
            series: Vec::new(),
        }
    }

    fn push(&mut self, check: CheckResult) {
        self.pass &= check.pass;
        self.results.push(check);
    }

    fn summarize(&mut self, key: &str, value: Value) {
        if let Value::Object(map) = &mut self.summary {
            map.insert(key.to_string(), value);
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.results.iter().find(|c| c.name == name)
    }

    pub fn budget_exhausted(&self) -> bool {
        self.results.iter().any(|c| c.budget_exhausted)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes the CSV sidecars and `<experiment>.json` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.outputs.clear();
        for s in &self.series {
            let path = dir.join(format!("{}_{}.csv", self.experiment, s.name));
            std::fs::write(&path, s.to_csv())?;
            self.outputs.push(path.display().to_string());
        }
        let path = dir.join(format!("{}.json", self.experiment));
        self.outputs.push(path.display().to_string());
        std::fs::write(&path, self.to_json())?;
        Ok(())
    }
}

fn surface_for(form: &IntegralForm, psi: &CutoffPsi, config: &Config, seed: u64) -> Result<SurfaceMeasure<f64>> {
    let samples = config.get("dsigma_samples", 20_000usize)?;
    SurfaceMeasure::default_for(form, psi, samples, seed)
}

/// The first `count` values `λ ≥ 1` with `r(λ) > 0`.
pub fn first_represented(form: &IntegralForm, psi: &CutoffPsi, count: usize, budget: &Budget) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(count);
    let mut l = 1u64;
    while out.len() < count {
        if count_representations(form, psi, l, budget)? > 0.0 {
            out.push(l);
        }
        l += 1;
        if l > 1 << 20 {
            return Err(Error::EmptyWindow("fewer represented values than requested".into()));
        }
    }
    Ok(out)
}

/// Completion over `q ≤ q_max`, identities (F), (U), bound (K) over `q ≤ q_fu`, and the
/// vanishing of generalized sums.
pub fn run_identities(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let psi = config.psi(&form)?;
    let mut report = ExperimentReport::new("identities", config, opts);
    let n = form.dim();
    let q_max: u64 = config.get("q_max", 24)?;
    let q_fu: u64 = config.get("q_fu", 36)?;
    let lambdas = match config.get_str("lambdas") {
        Some(_) => config.get_list("lambdas", Vec::new())?,
        None => first_represented(&form, &psi, 5, &opts.budget)?,
    };
    let uniform: usize = config.get("uniform_samples", 50)?;
    let near: usize = config.get("near_samples", 50)?;
    let rational_q: u64 = config.get("rational_q", 4)?;
    let mut xis = uniform_frequencies::<f64>(n, uniform, opts.seed);
    xis.extend(rational_frequencies::<f64>(n, rational_q));
    xis.extend(near_rational_frequencies::<f64>(n, near, 8, 0.02, opts.seed.wrapping_add(1)));

    let surface = surface_for(&form, &psi, config, opts.seed)?;
    let mut ctx = MultiplierContext::new(&form, &psi, surface, opts.budget).with_mobius(opts.mobius);
    if config.get_str("factor") == Some("stand_in") {
        ctx = ctx.with_factor(ContinuousFactor::StandIn(|r| (-r * r).exp()));
    }
    let params = json!({"q_max": q_max, "lambdas": lambdas, "samples": xis.len(), "seed": opts.seed});
    let completion = (|| -> Result<(f64, f64, Vec<Value>)> {
        let mut worst = 0.0f64;
        let mut worst_summed = 0.0f64;
        let mut rows = Vec::new();
        let j_max = 64 - q_max.leading_zeros();
        for &lambda in &lambdas {
            for j in 1..=j_max {
                for q in dyadic_range(j).filter(|&q| q <= q_max) {
                    let r = ctx.completion_residual(lambda, j, q, &xis)?;
                    worst = worst.max(r);
                    rows.push(json!({"lambda": lambda, "j": j, "q": q, "residual": r}));
                }
                if dyadic_range(j).end - 1 <= q_max {
                    worst_summed = worst_summed.max(ctx.summed_completion_residual(lambda, j, &xis)?);
                }
            }
        }
        Ok((worst, worst_summed, rows))
    })();
    match completion {
        Ok((worst, summed, rows)) => {
            report.push(CheckResult::at_most("mobius_completion", params.clone(), worst, IDENTITY_TOLERANCE).with_seed(opts.seed));
            report.push(CheckResult::at_most("mobius_completion_summed", params, summed, IDENTITY_TOLERANCE).with_seed(opts.seed));
            let mut s = Series::new("completion", &["lambda", "j", "q", "residual"]);
            for r in &rows {
                s.push(vec![r["lambda"].to_string(), r["j"].to_string(), r["q"].to_string(), format!("{:e}", r["residual"].as_f64().unwrap_or(f64::NAN))]);
            }
            report.series.push(s);
        }
        Err(e) => report.push(CheckResult::failed("mobius_completion", params, &e)),
    }

    let mut cache = ArithmeticCache::with_mobius(&form, opts.budget, opts.mobius);
    let fu = (|| -> Result<(f64, f64, f64, f64)> {
        let (mut f_worst, mut u_worst, mut k_gap, mut c_max) = (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64);
        for q in 1..=q_fu {
            for lambda in 0..q as i64 {
                u_worst = u_worst.max(cache.u_check(q, lambda)?);
                if q >= 2 {
                    f_worst = f_worst.max(cache.f_check(q, lambda)?);
                }
            }
            if q >= 2 {
                let ck = cache.ck_check(q)?;
                k_gap = k_gap.max(ck.k_lhs - ck.k_constant * ck.k_rhs);
                c_max = c_max.max(ck.c_max);
            }
        }
        Ok((f_worst, u_worst, k_gap, c_max))
    })();
    let params = json!({"q_max": q_fu});
    match fu {
        Ok((f, u, k, c)) => {
            report.push(CheckResult::at_most("identity_f", params.clone(), f, IDENTITY_TOLERANCE));
            report.push(CheckResult::at_most("identity_u", params.clone(), u, IDENTITY_TOLERANCE));
            report.push(CheckResult::at_most("bound_k_constant_one", params, k, IDENTITY_TOLERANCE));
            report.summarize("bound_c_max", json!(c));
        }
        Err(e) => report.push(CheckResult::failed("identity_f", params, &e)),
    }

    let tuples: usize = config.get("vanishing_tuples", 200)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let vanishing = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..tuples {
            let (a, q, avec, qvec) = random_vanishing_tuple(&mut rng, n, 12);
            worst = worst.max(generalized_weyl_sum::<f64>(&form, a, q, &avec, &qvec, &opts.budget)?.value.norm());
        }
        Ok(worst)
    })();
    let params = json!({"tuples": tuples, "q_max": 12});
    match vanishing {
        Ok(w) => report.push(CheckResult::at_most("generalized_vanishing", params, w, IDENTITY_TOLERANCE).with_seed(opts.seed)),
        Err(e) => report.push(CheckResult::failed("generalized_vanishing", params, &e)),
    }
    Ok(report)
}

/// One Weyl sum from `q`, `a`, `avec`, the fast path against the direct sum, and for sums of
/// squares the Gauss-sum magnitude `p^{−n/2}` at odd primes.
pub fn run_weyl(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let n = form.dim();
    let mut report = ExperimentReport::new("weyl", config, opts);
    let q: u64 = config.get("q", 5)?;
    let a: u64 = config.get("a", 1)?;
    let avec: Vec<u64> = config.get_list("avec", vec![0; n])?;
    let fast = weyl_sum::<f64>(&form, q, a, &avec, &opts.budget)?;
    report.summarize("value", json!({"q": q, "a": a, "avec": avec, "re": fast.value.re, "im": fast.value.im, "abs": fast.value.norm()}));
    let small = (q as u128).pow(n as u32) <= 1 << 20;
    if small {
        let direct = weyl_sum_direct::<f64>(&form, q, a, &avec, &opts.budget)?;
        report.push(CheckResult::at_most("fast_vs_direct", json!({"q": q, "a": a}), (fast.value - direct.value).norm(), 1e-10));
    }
    let squares = matches!(form.kind(), FormKind::Diagonal { coefficients } if form.degree() == 2 && coefficients.iter().all(|&c| c == 1));
    if squares {
        let primes: Vec<u64> = config.get_list("primes", vec![3, 5, 7, 11])?;
        let mut worst = 0.0f64;
        let mut oracle = 0.0f64;
        let zero = vec![0u64; n];
        let mut s = Series::new("gauss", &["p", "a", "abs"]);
        for &p in primes.iter().filter(|&&p| p > 2 && is_prime(p)) {
            let target = (p as f64).powf(-(n as f64) / 2.0);
            for a in units(p) {
                let v = weyl_sum::<f64>(&form, p, a, &zero, &opts.budget)?.value;
                worst = worst.max((v.norm() - target).abs());
                s.push(vec![p.to_string(), a.to_string(), format!("{:e}", v.norm())]);
                if p <= 5 {
                    let d = weyl_sum_direct::<f64>(&form, p, a, &zero, &opts.budget)?.value;
                    oracle = oracle.max((d.norm() - target).abs());
                }
            }
        }
        report.push(CheckResult::at_most("gauss_calibration", json!({"primes": primes}), worst, 1e-10));
        report.push(CheckResult::at_most("gauss_calibration_direct", json!({"primes": [3, 5]}), oracle, 1e-10));
        report.series.push(s);
    }
    Ok(report)
}

/// Least-squares `α̂` from `log sup|F_q|` against `log q`.
pub fn run_alpha(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let mut report = ExperimentReport::new("alpha", config, opts);
    let n = form.dim() as f64;
    let k = form.degree() as f64;
    let q_max: u64 = config.get("q_max", if form.degree() == 2 { 200 } else { 100 })?;
    let filter = match config.get_str("filter").unwrap_or("squarefree") {
        "squarefree" => QFilter::Squarefree,
        "all" => QFilter::All,
        other => return Err(Error::Config(format!("unknown filter {other:?}"))),
    };
    let reference: f64 = config.get("alpha_reference", n / k)?;
    let tolerance: f64 = config.get("alpha_tolerance", if form.degree() == 2 { 0.15 } else { 0.3 })?;
    let options = AlphaOptions { filter, seed: opts.seed, ..AlphaOptions::default() };
    let params = json!({"q_max": q_max, "filter": filter, "reference": reference});
    match estimate_alpha(&form, q_max, &options, &opts.budget) {
        Ok(est) => {
            let mut c = CheckResult::at_most("alpha_fit", params, (est.alpha_hat - reference).abs(), tolerance).with_stderr(est.stderr);
            if est.sampled {
                c = c.with_seed(opts.seed);
            }
            report.push(c);
            let lacunary = (2.0 * est.alpha_hat - 2.0) / (2.0 * est.alpha_hat - 3.0);
            let critical = if n > k { Some(n / (n - k)) } else { None };
            report.summarize("alpha_hat", json!(est.alpha_hat));
            report.summarize("stderr", json!(est.stderr));
            report.summarize("predicted_lacunary_exponent", json!(lacunary));
            report.summarize("full_maximal_critical_exponent", json!(critical));
            let mut s = Series::new("sup", &["q", "sup", "sampled"]);
            for p in &est.points {
                s.push(vec![p.q.to_string(), format!("{:e}", p.sup), p.sampled.to_string()]);
            }
            report.series.push(s);
        }
        Err(e) => report.push(CheckResult::failed("alpha_fit", params, &e)),
    }
    Ok(report)
}

/// Ball counts against `C_Q R^{n/k}`, unrestricted and in one class mod `q`.
pub fn run_lipschitz(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let n = form.dim();
    let mut report = ExperimentReport::new("lipschitz", config, opts);
    let default_radii: Vec<u64> = (8..=14).map(|e| 1u64 << e).collect();
    let radii: Vec<u64> = config.get_list("radii", default_radii)?;
    let modulus: u64 = config.get("modulus", 3)?;
    let residue: Vec<u64> = config.get_list("residue", vec![0; n])?;
    let params = json!({"radii": radii});
    let plain = match lipschitz_fit(&form, &radii, None, &opts.budget) {
        Ok(fit) => fit,
        Err(e) => {
            report.push(CheckResult::failed("lipschitz_constant", params, &e));
            return Ok(report);
        }
    };
    if let Some(err) = plain.relative_error {
        report.push(CheckResult::at_most("lipschitz_constant", params.clone(), err, 0.05));
    }
    report.push(CheckResult::at_most("lipschitz_error_exponent", params, plain.beta, plain.beta_bound + plain.slack));
    let cong = Congruence::new(modulus, residue.clone())?;
    let params = json!({"radii": radii, "modulus": modulus, "residue": residue});
    match lipschitz_fit(&form, &radii, Some(&cong), &opts.budget) {
        Ok(fit) => {
            let rel = (fit.c_hat / (plain.c_hat / (modulus as f64).powi(n as i32)) - 1.0).abs();
            report.push(CheckResult::at_most("lipschitz_congruence", params, rel, 0.10));
            report.summarize("congruence", serde_json::to_value(&fit).expect("fit serializes"));
        }
        Err(e) => report.push(CheckResult::failed("lipschitz_congruence", params, &e)),
    }
    let mut s = Series::new("counts", &["radius", "count"]);
    for (r, c) in plain.radii.iter().zip(&plain.counts) {
        s.push(vec![r.to_string(), c.to_string()]);
    }
    report.series.push(s);
    report.summarize("plain", serde_json::to_value(&plain).expect("fit serializes"));
    Ok(report)
}

/// `ê(λ)` for each `J_max` in `j_sweep`, the fitted decay rate, and monotonicity in `J_max`.
pub fn run_error_decay(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let psi = config.psi(&form)?;
    let n = form.dim();
    let mut report = ExperimentReport::new("error-decay", config, opts);
    let lambdas: Vec<u64> = config.get_list("lambdas", (0..6).map(|t| 5 * 4u64.pow(t)).collect())?;
    let j_max: u32 = config.get("j_max", 3)?;
    let sweep: Vec<u32> = config.get_list("j_sweep", vec![1, 2, 3])?;
    let mut xis = uniform_frequencies::<f64>(n, config.get("uniform_samples", 50)?, opts.seed);
    xis.extend(near_rational_frequencies::<f64>(n, config.get("near_samples", 50)?, 7, 0.02, opts.seed.wrapping_add(1)));
    xis.push(vec![0.0; n]);
    let surface = surface_for(&form, &psi, config, opts.seed)?;
    let ctx = MultiplierContext::new(&form, &psi, surface, opts.budget);
    let mut js: Vec<u32> = sweep.clone();
    if !js.contains(&j_max) {
        js.push(j_max);
    }
    js.sort_unstable();
    let mut reports: BTreeMap<u32, DecayReport> = BTreeMap::new();
    let params = json!({"lambdas": lambdas, "j_max": j_max, "samples": xis.len(), "seed": opts.seed});
    for &j in &js {
        match error_term_decay(&ctx, &lambdas, j, &xis) {
            Ok(r) => {
                reports.insert(j, r);
            }
            Err(e) => {
                report.push(CheckResult::failed("error_decay", params.clone(), &e));
                return Ok(report);
            }
        }
    }
    let main = &reports[&j_max];
    report.push(CheckResult::greater("error_decay_rate", params.clone(), main.delta_hat, 0.0).with_seed(opts.seed));
    report.push(CheckResult::at_most("error_decay_correlation", params, main.correlation, -0.8).with_seed(opts.seed));
    if sweep.len() > 1 {
        let mut worst = f64::NEG_INFINITY;
        for w in js.windows(2) {
            for (a, b) in reports[&w[0]].points.iter().zip(&reports[&w[1]].points) {
                worst = worst.max(b.error - a.error);
            }
        }
        report.push(CheckResult::at_most("error_monotone_in_j", json!({"j_sweep": js}), worst, 1e-12));
    }
    let mut s = Series::new("errors", &["j_max", "lambda", "error", "error_at_zero", "tail_bound"]);
    for (j, r) in &reports {
        for p in &r.points {
            s.push(vec![
                j.to_string(),
                p.lambda.to_string(),
                format!("{:e}", p.error),
                p.error_at_zero.map_or(String::new(), |v| format!("{v:e}")),
                format!("{:e}", p.tail_bound),
            ]);
        }
    }
    report.series.push(s);
    report.summarize("delta_hat", json!(main.delta_hat));
    report.summarize("correlation", json!(main.correlation));
    report.summarize("reports", serde_json::to_value(&reports).expect("decay serializes"));
    Ok(report)
}

/// Ray decay of `|d̃σ|` against `K` (or `(n−1)/2` for spheres), and for spheres the closed
/// form against Monte Carlo.
pub fn run_dsigma(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let psi = config.psi(&form)?;
    let n = form.dim();
    let mut report = ExperimentReport::new("dsigma", config, opts);
    let rays: usize = config.get("rays", 4)?;
    let t_max: f64 = config.get("t_max", 16.0)?;
    let step: f64 = config.get("t_step", 0.05)?;
    let samples: usize = config.get("mc_samples", 100_000)?;
    let sphere = form.is_sphere() && psi.is_unit();
    let surface = if sphere {
        SurfaceMeasure::<f64>::new(&form, &psi, DsigmaBackend::SphereClosedForm)?
    } else {
        SurfaceMeasure::<f64>::new(&form, &psi, DsigmaBackend::MonteCarlo { samples, seed: opts.seed })?
    };
    let decay = dsigma_ray_decay(&surface, n, rays, t_max, step, opts.seed)?;
    let (target, label) = if sphere { ((n as f64 - 1.0) / 2.0, "sphere") } else { (decay.predicted_exponent, "predicted") };
    // Block maxima of the sphere sit exactly on t^{-(n-1)/2}; allow round-off.
    let tolerance = 1e-9;
    let params = json!({"rays": rays, "t_max": t_max, "target": label, "tolerance": tolerance, "seed": opts.seed});
    if sphere || target > 0.0 {
        let mut c = CheckResult::at_least("dsigma_decay", params, decay.exponent, target - tolerance);
        if !sphere {
            c = c.with_seed(opts.seed);
        }
        report.push(c);
    }
    if sphere {
        let cross_samples: usize = config.get("cross_samples", 200_000)?;
        let mc = SurfaceMeasure::<f64>::new(&form, &psi, DsigmaBackend::MonteCarlo { samples: cross_samples, seed: opts.seed })?;
        let radius: f64 = config.get("cross_radius", 10.0)?;
        let points = uniform_frequencies::<f64>(n, 20, opts.seed.wrapping_add(3));
        let mut worst = 0.0f64;
        let mut worst_se = 0.0f64;
        let mut s = Series::new("cross", &["xi_norm", "closed_re", "mc_re", "mc_im", "stderr"]);
        for p in points {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let xi: Vec<f64> = p.iter().map(|v| v / norm * radius * (norm / (n as f64 / 4.0).sqrt()).min(1.0)).collect();
            let a = surface.eval(&xi);
            let b = mc.eval(&xi);
            let z = (a.value - b.value).norm() / b.stderr;
            if z > worst {
                worst = z;
                worst_se = b.stderr;
            }
            let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            s.push(vec![format!("{r}"), format!("{:e}", a.value.re), format!("{:e}", b.value.re), format!("{:e}", b.value.im), format!("{:e}", b.stderr)]);
        }
        report.push(
            CheckResult::at_most("backend_agreement_sigmas", json!({"frequencies": 20, "max_norm": radius, "samples": cross_samples}), worst, 3.0)
                .with_seed(opts.seed)
                .with_stderr(worst_se),
        );
        report.series.push(s);
    }
    let mut s = Series::new("rays", &["ray", "t", "abs"]);
    for &(r, t, v) in &decay.samples {
        s.push(vec![r.to_string(), format!("{t}"), format!("{v:e}")]);
    }
    report.series.push(s);
    report.summarize("decay", serde_json::to_value(&decay).expect("decay serializes"));
    Ok(report)
}

/// Number of integers in `[lo, hi]` congruent to `b` mod `q`.
fn count_in_range(lo: i64, hi: i64, b: u64, q: u64) -> u64 {
    if hi < lo {
        return 0;
    }
    let q = q as i64;
    let first = lo + (b as i64 - lo).rem_euclid(q);
    if first > hi {
        0
    } else {
        ((hi - first) / q + 1) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRatio {
    pub j: u32,
    pub p_exponent: f64,
    /// `(Σ_{b ∈ C} #interior(b) G(b)^p / ‖f_T‖_p^p)^{1/p}`: a lower bound on the operator norm.
    pub certified: f64,
    /// `certified` rescaled by `(p^{Jn}/|C|)^{1/p}`, i.e. extrapolated to full coverage.
    pub covered: f64,
    pub control_certified: f64,
    pub control_covered: f64,
    /// `p^{J(n/p − (n−1))}`
    pub trend: f64,
}

/// Restricted counts `G(b) = max_i N(λ_i; b)/r(λ_i)` over covered residues.
fn residue_maxima(tables: &ResidueClassTables, totals: &ResidueClassTables, residues: &[Vec<u64>], lambdas: &[u64]) -> Result<Vec<f64>> {
    let n = residues.first().map_or(0, |b| b.len());
    let zero = vec![0u64; n];
    let r: Vec<f64> = lambdas.iter().map(|&l| totals.count(l, &zero).map(|c| c as f64)).collect::<Result<_>>()?;
    residues
        .iter()
        .map(|b| {
            lambdas.iter().zip(&r).try_fold(0.0f64, |acc, (&l, &rl)| {
                let c = tables.count(l, b)? as f64;
                Ok(if rl > 0.0 { acc.max(c / rl) } else { acc })
            })
        })
        .collect()
}

/// Lower bounds for the lacunary maximal operator on `f_T = 1_{(p^J Z ∩ [−T, T])^n}`, against a
/// dyadic control sequence on the same windows.
pub fn run_counterexample(config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    let form = config.form()?;
    let n = form.dim();
    let mut report = ExperimentReport::new("counterexample", config, opts);
    let p: u64 = config.get("p", 3)?;
    let js: Vec<u32> = config.get_list("J", vec![1, 2])?;
    let m: u64 = config.get("M", 8)?;
    let exponents: Vec<f64> = config.get_list("p_exponents", vec![1.1, 2.0])?;
    let windows = match config.get_str("windows").unwrap_or("alternating") {
        "alternating" => WindowPolicy::Alternating,
        "adjacent" => WindowPolicy::Adjacent,
        other => return Err(Error::Config(format!("unknown window policy {other:?}"))),
    };
    let k_override = match config.get_str("K") {
        Some(_) => Some(config.require("K")?),
        None => None,
    };
    let boundary = n as f64 / (n as f64 - 1.0);
    let mut ratios: Vec<NormRatio> = Vec::new();
    let mut plans: Vec<CounterexamplePlan> = Vec::new();
    for &j in &js {
        let cc = CounterexampleConfig {
            p,
            j,
            m,
            k_override,
            k_min: config.get("K_min", 2)?,
            c0: config.get("c0", crate::counting::DEFAULT_C0)?,
            cap_bits: config.get("cap_bits", 24)?,
            windows,
        };
        let params = json!({"p": p, "J": j, "M": m});
        let (plan, tables) = match build_counterexample_with_tables(&form, &cc, &opts.budget) {
            Ok(v) => v,
            Err(e) => {
                report.push(CheckResult::failed(&format!("plan_J{j}"), params, &e));
                continue;
            }
        };
        report.push(CheckResult::at_least(&format!("plan_J{j}_restricted_count"), params.clone(), plan.min_ratio, plan.c0));
        let q = plan.modulus;
        let residues: Vec<Vec<u64>> = plan.residues.iter().map(|e| e.b.clone()).collect();
        let terms = plan.terms();
        let control: Vec<u64> = plan.residues.iter().map(|e| e.window.0).collect();
        let cap = *terms.iter().chain(&control).max().expect("non-empty plan");
        let totals = ResidueClassTables::new(&form, 1, cap, ConvolutionMethod::Auto, opts.budget)?;
        let g = residue_maxima(&tables, &totals, &residues, &terms)?;
        let g_control = residue_maxima(&tables, &totals, &residues, &control)?;
        let rho = (cap as f64).powf(1.0 / form.degree() as f64).floor() as i64;
        let t: i64 = config.get("T", 1000 * (rho + q as i64))?;
        if t < 2 * (rho + q as i64) {
            report.push(CheckResult::failed(
                &format!("norm_J{j}"),
                params,
                &Error::InvalidParameter(format!("T = {t} is below 2(max λ^(1/k) + p^J) = {}", 2 * (rho + q as i64))),
            ));
            continue;
        }
        let f_points = (2 * (t / q as i64) + 1) as f64;
        let f_mass = f_points.powi(n as i32);
        let interior: Vec<f64> = residues
            .iter()
            .map(|b| b.iter().map(|&bi| count_in_range(-(t - rho), t - rho, bi, q) as f64).product())
            .collect();
        let cover = residue_vectors(q, n).count() as f64 / residues.len() as f64;
        for &pe in &exponents {
            let lower = |g: &[f64]| -> f64 {
                let s: f64 = interior.iter().zip(g).map(|(&c, &v)| (c / f_mass) * v.powf(pe)).sum();
                s.powf(1.0 / pe)
            };
            let certified = lower(&g);
            let control_certified = lower(&g_control);
            ratios.push(NormRatio {
                j,
                p_exponent: pe,
                certified,
                covered: certified * cover.powf(1.0 / pe),
                control_certified,
                control_covered: control_certified * cover.powf(1.0 / pe),
                trend: (q as f64).powf(n as f64 / pe - (n as f64 - 1.0)),
            });
        }
        plans.push(plan);
    }
    for r in &ratios {
        if r.p_exponent < boundary {
            report.push(CheckResult::greater(
                &format!("exceeds_control_J{}_p{}", r.j, r.p_exponent),
                json!({"J": r.j, "p_exponent": r.p_exponent, "control": r.control_certified}),
                r.certified / r.control_certified.max(f64::MIN_POSITIVE),
                1.0,
            ));
        }
    }
    for &pe in &exponents {
        let by_j: Vec<&NormRatio> = ratios.iter().filter(|r| r.p_exponent == pe).collect();
        for w in by_j.windows(2) {
            let growth = w[1].covered / w[0].covered;
            let params = json!({"p_exponent": pe, "from_J": w[0].j, "to_J": w[1].j});
            let name = format!("growth_J{}_J{}_p{}", w[0].j, w[1].j, pe);
            if pe < boundary {
                report.push(CheckResult::greater(&name, params, growth, 1.0));
            } else {
                report.push(CheckResult::at_most(&name, params, growth, 1.1));
            }
        }
    }
    let mut s = Series::new("ratios", &["J", "p_exponent", "certified", "covered", "control_certified", "control_covered", "trend"]);
    for r in &ratios {
        s.push(vec![
            r.j.to_string(),
            r.p_exponent.to_string(),
            format!("{:e}", r.certified),
            format!("{:e}", r.covered),
            format!("{:e}", r.control_certified),
            format!("{:e}", r.control_covered),
            format!("{:e}", r.trend),
        ]);
    }
    report.series.push(s);
    report.summarize("ratios", serde_json::to_value(&ratios).expect("ratios serialize"));
    report.summarize("plans", serde_json::to_value(&plans).expect("plans serialize"));
    report.summarize("boundary_exponent", json!(boundary));
    Ok(report)
}

/// Dispatches by subcommand name.
pub fn run(name: &str, config: &Config, opts: &RunOptions) -> Result<ExperimentReport> {
    match name {
        "identities" => run_identities(config, opts),
        "weyl" => run_weyl(config, opts),
        "alpha" => run_alpha(config, opts),
        "error-decay" => run_error_decay(config, opts),
        "counterexample" => run_counterexample(config, opts),
        "lipschitz" => run_lipschitz(config, opts),
        "dsigma" => run_dsigma(config, opts),
        other => Err(Error::Config(format!("unknown experiment {other:?}"))),
    }
}
