//! The closed-form law of the cluster capacity and the statistical tests used
//! to compare simulations with it.
//!
//! For a root with `g0 = g(x0, x0)` and a level `h ≥ 0`, the capacity of the
//! cluster of `{φ ≥ h}` restricted to `{φ_{x0} ≥ h}` has density
//!
//! ```text
//! ρ_h(t) = exp(−h² t / 2) / (2π t √(g0 (t − 1/g0)))     for t ≥ 1/g0
//! ```
//!
//! and Laplace transform `E[e^{−u cap} 1{φ_{x0} ≥ h}] = P(φ_{x0} ≥ √(2u + h²))`.
//! All integrals use the substitution `t = 1/g0 + s²`, after which the
//! integrand `√g0 e^{−h² t/2} / (π (1 + g0 s²))` is smooth.

use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

use crate::error::{Error, Result};

/// Absolute tolerance of the quadratures.
pub const QUAD_ABS_TOL: f64 = 1e-12;
/// Relative tolerance of the quadratures.
pub const QUAD_REL_TOL: f64 = 1e-10;
const MAX_PANELS: usize = 4000;

/// Standard normal CDF via `erfc`, accurate to a few ulps in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn check_law(g0: f64, h: f64) -> Result<()> {
    if !(g0 > 0.0 && g0.is_finite()) {
        return Err(Error::InvalidArgument(format!("g0 must be positive, got {g0}")));
    }
    if !(h >= 0.0) {
        return Err(Error::InvalidArgument(format!("level must be non-negative, got {h}")));
    }
    Ok(())
}

/// Density `ρ_h(t)` of the cluster capacity.
pub fn rho_density(g0: f64, h: f64, t: f64) -> Result<f64> {
    check_law(g0, h)?;
    if t < 1.0 / g0 {
        return Ok(0.0);
    }
    let gap = g0 * (t - 1.0 / g0);
    if gap <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((-h * h * t / 2.0).exp() / (2.0 * std::f64::consts::PI * t * gap.sqrt()))
}

// density after t = 1/g0 + s², including the Jacobian 2s
fn smooth_integrand(g0: f64, h: f64, u: f64, s: f64) -> f64 {
    let t = 1.0 / g0 + s * s;
    g0.sqrt() * (-(h * h / 2.0 + u) * t).exp() / (std::f64::consts::PI * (1.0 + g0 * s * s))
}

/// Total mass `P(φ_{x0} ≥ h) = 1 − Φ(h/√g0)` of the law.
pub fn law_mass(g0: f64, h: f64) -> Result<f64> {
    check_law(g0, h)?;
    Ok(normal_sf(h / g0.sqrt()))
}

/// `P(cap ≤ r, φ_{x0} ≥ h)`, by quadrature of the density.
pub fn law_cdf(g0: f64, h: f64, r: f64) -> Result<f64> {
    check_law(g0, h)?;
    if r <= 1.0 / g0 {
        return Ok(0.0);
    }
    if r.is_infinite() {
        return tail_integral(g0, h, 0.0, 0.0);
    }
    let upper = (r - 1.0 / g0).sqrt();
    integrate(|s| smooth_integrand(g0, h, 0.0, s), 0.0, upper)
}

/// `P(cap ≥ r, φ_{x0} ≥ h)`, integrating the tail directly.
pub fn law_survival(g0: f64, h: f64, r: f64) -> Result<f64> {
    check_law(g0, h)?;
    let lower = if r <= 1.0 / g0 { 0.0 } else { (r - 1.0 / g0).sqrt() };
    tail_integral(g0, h, 0.0, lower)
}

// ∫_lower^∞ of the smoothed integrand, via s = lower + v/(1−v)
fn tail_integral(g0: f64, h: f64, u: f64, lower: f64) -> Result<f64> {
    integrate(
        |v| {
            if v >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - v;
            smooth_integrand(g0, h, u, lower + v / w) / (w * w)
        },
        0.0,
        1.0,
    )
}

/// Right-hand side of the Laplace identity, `1 − Φ(√(2u + h²)/√g0)`.
pub fn laplace_rhs(g0: f64, h: f64, u: f64) -> Result<f64> {
    check_law(g0, h)?;
    if !(u >= 0.0) {
        return Err(Error::InvalidArgument(format!("u must be non-negative, got {u}")));
    }
    Ok(normal_sf((2.0 * u + h * h).sqrt() / g0.sqrt()))
}

/// `∫ ρ_h(t) e^{−u t} dt` by quadrature.
pub fn laplace_lhs(g0: f64, h: f64, u: f64) -> Result<f64> {
    check_law(g0, h)?;
    if !(u >= 0.0) {
        return Err(Error::InvalidArgument(format!("u must be non-negative, got {u}")));
    }
    tail_integral(g0, h, u, 0.0)
}

/// Absolute difference between the two sides of the Laplace identity.
pub fn laplace_selfcheck(g0: f64, h: f64, u: f64) -> Result<f64> {
    Ok((laplace_lhs(g0, h, u)? - laplace_rhs(g0, h, u)?).abs())
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = r * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * r, ((kronrod - gauss) * r).abs())
}

#[derive(PartialEq)]
struct Panel {
    error: f64,
    a: f64,
    b: f64,
    value: f64,
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive Gauss-Kronrod (7/15) quadrature, bisecting the panel with the
/// largest error estimate until the total error meets
/// `max(QUAD_ABS_TOL, QUAD_REL_TOL·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (value, error) = gk15(&f, a, b);
    let mut heap = BinaryHeap::from([Panel { error, a, b, value }]);
    let (mut total, mut total_err) = (value, error);
    while total_err > QUAD_ABS_TOL.max(QUAD_REL_TOL * total.abs()) {
        if heap.len() >= MAX_PANELS {
            return Err(Error::Quadrature { error: total_err, intervals: heap.len() });
        }
        let p = heap.pop().unwrap();
        let m = 0.5 * (p.a + p.b);
        let (v1, e1) = gk15(&f, p.a, m);
        let (v2, e2) = gk15(&f, m, p.b);
        total += v1 + v2 - p.value;
        total_err += e1 + e2 - p.error;
        heap.push(Panel { error: e1, a: p.a, b: m, value: v1 });
        heap.push(Panel { error: e2, a: m, b: p.b, value: v2 });
    }
    // re-sum to shed the drift of the running totals
    Ok(heap.iter().map(|p| p.value).sum())
}

/// Outcome of one statistical or deterministic check.
#[derive(Clone, Debug, Serialize)]
pub struct TestReport {
    pub experiment: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub sample_sizes: Vec<usize>,
    /// Significance level for hypothesis tests, or the absolute tolerance
    /// for deviation checks.
    pub tolerance: f64,
    pub pass: bool,
    pub seed: Option<u64>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl TestReport {
    pub fn new(experiment: impl Into<String>, statistic: f64, tolerance: f64, pass: bool) -> Self {
        TestReport {
            experiment: experiment.into(),
            statistic,
            p_value: None,
            sample_sizes: Vec::new(),
            tolerance,
            pass,
            seed: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Tolerance check `|observed − expected| ≤ tolerance`.
    pub fn deviation(experiment: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        let d = (observed - expected).abs();
        let mut r = TestReport::new(experiment, d, tolerance, d <= tolerance);
        r.metadata.insert("observed".into(), json_f64(observed));
        r.metadata.insert("expected".into(), json_f64(expected));
        r
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.metadata.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sample_sizes = sizes;
        self
    }

    /// Re-labels the report and sets the rejection threshold `alpha`.
    pub fn at_alpha(mut self, alpha: f64) -> Self {
        self.tolerance = alpha;
        self.pass = self.p_value.is_none_or(|p| p >= alpha);
        self
    }
}

fn json_f64(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map_or_else(|| serde_json::Value::String(x.to_string()), serde_json::Value::Number)
}

/// Asymptotic Kolmogorov p-value of `D` for effective size `n`, with
/// Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: f64) -> f64 {
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Minimum number of finite samples for the KS tests.
pub const KS_MIN_SAMPLES: usize = 30;

fn finite_sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite sample {x}")));
    }
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: samples.len(), need: KS_MIN_SAMPLES });
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample KS test against a continuous-or-atomic CDF, passing at level
/// 0.01 by default (see [`TestReport::at_alpha`]).
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<TestReport> {
    let v = finite_sorted(samples)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        // step over ties so atoms in the data are handled as one jump
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        let below = i as f64 / n;
        let at = (j + 1) as f64 / n;
        let f_left = cdf(v[i] - v[i].abs().max(1.0) * 1e-15);
        d = d.max((at - f).abs()).max((f_left - below).abs());
        i = j + 1;
    }
    let p = kolmogorov_p_value(d, n);
    let mut r = TestReport::new("ks_one_sample", d, 0.01, p >= 0.01).with_sizes(vec![v.len()]);
    r.p_value = Some(p);
    Ok(r)
}

/// Two-sample KS test.
pub fn ks_two_sample(s1: &[f64], s2: &[f64]) -> Result<TestReport> {
    let a = finite_sorted(s1)?;
    let b = finite_sorted(s2)?;
    let d = ks_distance_sorted(&a, &b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let p = kolmogorov_p_value(d, n1 * n2 / (n1 + n2));
    let mut r = TestReport::new("ks_two_sample", d, 0.01, p >= 0.01).with_sizes(vec![a.len(), b.len()]);
    r.p_value = Some(p);
    Ok(r)
}

/// `sup |F₁ − F₂|` of two sorted samples.
pub fn ks_distance_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    d
}

/// Pearson chi-square test of counts against `Poisson(mean)`; bins with
/// expected count below 5 are pooled into the tails.
pub fn chi_square_poisson(counts: &[u64], mean: f64) -> Result<TestReport> {
    if counts.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: counts.len(), need: KS_MIN_SAMPLES });
    }
    let dist = Poisson::new(mean).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = counts.len() as f64;
    let max = *counts.iter().max().unwrap();
    let mut observed = vec![0u64; max as usize + 1];
    for &c in counts {
        observed[c as usize] += 1;
    }
    let top = (max as f64).max(mean + 10.0 * mean.sqrt() + 10.0) as u64;
    // (observed, expected) per bin; the last bin absorbs the upper tail
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp, mut cumulative) = (0.0, 0.0, 0.0);
    for k in 0..=top {
        let p = dist.pmf(k);
        cumulative += p;
        obs += observed.get(k as usize).copied().unwrap_or(0) as f64;
        exp += n * p;
        if exp >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    exp += n * (1.0 - cumulative).max(0.0);
    match bins.last_mut() {
        Some(last) if exp < 5.0 => {
            last.0 += obs;
            last.1 += exp;
        }
        _ => bins.push((obs, exp)),
    }
    if bins.len() < 2 {
        return Err(Error::InvalidArgument("too few chi-square bins".into()));
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?.cdf(stat);
    let mut r = TestReport::new("chi_square_poisson", stat, 0.01, p >= 0.01)
        .with_sizes(vec![counts.len()])
        .with_meta("bins", bins.len())
        .with_meta("mean", mean);
    r.p_value = Some(p);
    Ok(r)
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// `|p̂ − p| ≤ k·√(p(1−p)/n)` for `successes` out of `n` trials.
pub fn binomial_z_test(successes: usize, n: usize, p: f64, k: f64) -> TestReport {
    let phat = successes as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    TestReport::deviation("binomial_z", phat, p, k * se).with_sizes(vec![n]).with_meta("stderr", se)
}

/// `|mean − expected| ≤ k·stderr + slack`.
pub fn mean_test(values: &[f64], expected: f64, k: f64, slack: f64) -> TestReport {
    let (m, se) = mean_stderr(values);
    TestReport::deviation("mean", m, expected, k * se + slack)
        .with_sizes(vec![values.len()])
        .with_meta("stderr", se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    // closed forms at h = 0: P(cap ≤ r) = arctan(√(g0 r − 1)) / π
    fn cdf0(g0: f64, r: f64) -> f64 {
        if r <= 1.0 / g0 {
            0.0
        } else {
            (g0 * r - 1.0).sqrt().atan() / PI
        }
    }

    #[test]
    fn density_examples() {
        assert_eq!(rho_density(1.0, 0.0, 0.5).unwrap(), 0.0);
        assert_relative_eq!(rho_density(1.0, 0.0, 2.0).unwrap(), 1.0 / (4.0 * PI), epsilon = 1e-16);
        assert!(rho_density(0.0, 0.0, 1.0).is_err());
        assert!(rho_density(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cdf_matches_arctan_form() {
        for &g0 in &[0.5, 1.0, 2.0] {
            for &r in &[0.1, 1.0 / g0, 1.5 / g0, 3.0, 10.0, 1e3] {
                assert!((law_cdf(g0, 0.0, r).unwrap() - cdf0(g0, r)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn mass_and_tail() {
        for &g0 in &[0.5, 1.0, 2.0] {
            for &h in &[0.0, 0.5, 1.0] {
                let total = law_cdf(g0, h, f64::INFINITY).unwrap();
                assert!((total - normal_sf(h / g0.sqrt())).abs() <= 1e-8);
            }
            let r = 1e4 / g0;
            let tail = law_survival(g0, 0.0, r).unwrap() * (PI * PI * g0 * r).sqrt();
            assert!((tail - 1.0).abs() <= 0.02);
        }
    }

    #[test]
    fn laplace_examples() {
        assert_relative_eq!(laplace_rhs(1.0, 0.0, 0.0).unwrap(), 0.5, epsilon = 1e-16);
        assert_relative_eq!(laplace_rhs(1.0, 0.0, 0.5).unwrap(), 0.158_655_253_931_457, epsilon = 1e-14);
        assert!(laplace_rhs(1.0, 0.0, 1e6).unwrap() < 1e-300);
        for &(g0, h, u) in &[(1.0, 0.0, 0.0), (2.0, 1.0, 0.7), (1.0, 0.0, 50.0)] {
            assert!(laplace_selfcheck(g0, h, u).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn normal_tails_are_accurate() {
        assert_relative_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_sf(10.0), 7.619_853_024_160_527e-24, max_relative = 1e-13);
        assert_relative_eq!(normal_cdf(-10.0), 7.619_853_024_160_527e-24, max_relative = 1e-13);
    }

    #[test]
    fn ks_trivial_cases() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
        let b: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap().statistic, 1.0);
        assert!(matches!(ks_one_sample(&a[..10], |x| x), Err(Error::TooFewSamples { .. })));
        assert!(ks_one_sample(&[f64::INFINITY; 40], |x| x).is_err());
    }

    #[test]
    fn quadrature_reports_failure() {
        // oscillation too fast for the panel budget
        assert!(matches!(integrate(|x| (1e9 * x).sin().abs(), 0.0, 1.0), Err(Error::Quadrature { .. })));
    }
}
