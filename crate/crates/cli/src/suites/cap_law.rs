//! Monte Carlo of cluster capacities against their closed-form law.
//!
//! For `h ≥ 0` the cluster of `x0` in `{φ ≥ h}` is explored once on the
//! finest refinement. Its capacity is computed exactly (with the partial
//! stubs on the cable system) and, for the refinement sweep, as the discrete
//! capacity of its restriction to each level. For `h < 0` the run checks the
//! non-compactness probability and compares `cap(E^{≥h})` on `(0, ∞)` with
//! `cap(E^{≥|h|})` on `{φ ≥ |h|}`.

use cablegff::analytics::{
    binomial_z_test, ks_one_sample, ks_two_sample, law_cdf, law_mass, law_survival, laplace_rhs, mean_stderr, mean_test,
    normal_cdf, TestReport,
};
use cablegff::gff::{cable_cluster_capacity, cluster_capacity, explore_cluster, explore_refined_cluster, project_report, sample_field};
use cablegff::{green_operator, refine_uniform, CableGreen, GreenOperator, RefinedGraph, StreamKey};

use crate::config::Resolved;
use crate::error::Result;
use crate::output::{num, Outcome, Table};
use crate::runner::par_map;

struct Setup<'a> {
    cfg: &'a Resolved,
    green: GreenOperator,
    g0: f64,
    levels: Vec<RefinedGraph>,
    kernels: Vec<CableGreen>,
}

impl Setup<'_> {
    fn finest(&self) -> (&RefinedGraph, &CableGreen) {
        (self.levels.last().unwrap(), self.kernels.last().unwrap())
    }

    fn key(&self, h: f64, i: u64) -> StreamKey {
        StreamKey::new(self.cfg.seed, i).derive(h.to_bits())
    }
}

fn named(mut r: TestReport, name: &str, h: f64) -> TestReport {
    r.experiment = format!("{name}[h={h}]");
    r
}

pub fn run(cfg: &Resolved) -> Result<Outcome> {
    let green = green_operator(&cfg.graph)?;
    let g0 = green.g(cfg.x0, cfg.x0)?;
    let levels = cfg.refine.iter().map(|&r| refine_uniform(&cfg.graph, r)).collect::<cablegff::Result<Vec<_>>>()?;
    let kernels = levels.iter().map(|r| CableGreen::for_refined(r, &green)).collect::<cablegff::Result<Vec<_>>>()?;
    let setup = Setup { cfg, green, g0, levels, kernels };
    let mut out = Outcome::new("cap-law");
    for &h in &cfg.h {
        if h >= 0.0 {
            law(&setup, h, &mut out)?;
        } else {
            negative(&setup, -h, &mut out)?;
        }
    }
    Ok(out)
}

struct LawSample {
    above: bool,
    exact: f64,
    discrete: Vec<f64>,
}

fn law(s: &Setup<'_>, h: f64, out: &mut Outcome) -> Result<()> {
    let cfg = s.cfg;
    let p = &cfg.cap_law;
    let (finest, kernel) = s.finest();
    let samples = par_map(cfg.workers, cfg.samples, |i| {
        let f = sample_field(&s.green, s.key(h, i))?;
        if f.value(cfg.x0) < h {
            return Ok(LawSample { above: false, exact: 0.0, discrete: Vec::new() });
        }
        let (fine_field, report) = explore_refined_cluster(&f, finest, cfg.x0, h)?;
        let exact = cable_cluster_capacity(&report, &fine_field, finest, kernel)?.as_f64();
        let discrete = s
            .levels
            .iter()
            .zip(&s.kernels)
            .map(|(level, k)| Ok(cluster_capacity(&project_report(&report, finest, level)?, level.graph(), k)?.as_f64()))
            .collect::<cablegff::Result<Vec<_>>>()?;
        Ok(LawSample { above: true, exact, discrete })
    })?;
    let m = samples.len();
    let above: Vec<&LawSample> = samples.iter().filter(|x| x.above).collect();
    let mass = law_mass(s.g0, h)?;
    out.reports.push(named(
        binomial_z_test(above.len(), m, mass, p.stderr_k).with_meta("g0", s.g0),
        "root_above_level",
        h,
    ));

    let cdf = |r: f64| law_cdf(s.g0, h, r).map_or(f64::NAN, |c| c / mass);
    let mut ks_table = Table::new("ks_by_refinement", &["h", "refinement", "estimator", "n", "ks", "p_value"]);
    let mut discrete_ks = Vec::new();
    for (l, &r) in cfg.refine.iter().enumerate() {
        let caps: Vec<f64> = above.iter().map(|x| x.discrete[l]).collect();
        let t = ks_one_sample(&caps, cdf)?;
        ks_table.push([num(h), r.to_string(), "discrete".into(), caps.len().to_string(), num(t.statistic), t.p_value.map(num).unwrap_or_default()]);
        discrete_ks.push(t.statistic);
    }
    let exact: Vec<f64> = above.iter().map(|x| x.exact).collect();
    let finest_r = *cfg.refine.last().unwrap();
    let t = ks_one_sample(&exact, cdf)?;
    ks_table.push([num(h), finest_r.to_string(), "exact".into(), exact.len().to_string(), num(t.statistic), t.p_value.map(num).unwrap_or_default()]);

    let rise = discrete_ks.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let rise = if rise.is_finite() { rise } else { 0.0 };
    out.reports.push(named(
        TestReport::new("ks_sweep_nonincreasing", rise, 0.0, rise <= 0.0)
            .with_sizes(vec![above.len()])
            .with_meta("refinements", &cfg.refine)
            .with_meta("ks", &discrete_ks),
        "ks_sweep_nonincreasing",
        h,
    ));
    let mut ks_exact = TestReport::new("ks_exact", t.statistic, p.ks_tolerance, t.statistic <= p.ks_tolerance)
        .with_sizes(vec![exact.len()])
        .with_meta("refinement", finest_r);
    ks_exact.p_value = t.p_value;
    out.reports.push(named(ks_exact, "ks_exact", h));

    let mut laplace = Table::new("laplace", &["h", "u", "estimator", "estimate", "stderr", "expected"]);
    for &u in &cfg.u {
        let expected = laplace_rhs(s.g0, h, u)?;
        let values = |cap: &dyn Fn(&LawSample) -> f64| -> Vec<f64> {
            samples.iter().map(|x| if x.above { (-u * cap(x)).exp() } else { 0.0 }).collect()
        };
        for (l, &r) in cfg.refine.iter().enumerate() {
            let (mean, se) = mean_stderr(&values(&|x| x.discrete[l]));
            laplace.push([num(h), num(u), format!("discrete_r{r}"), num(mean), num(se), num(expected)]);
        }
        let v = values(&|x| x.exact);
        let (mean, se) = mean_stderr(&v);
        laplace.push([num(h), num(u), format!("exact_r{finest_r}"), num(mean), num(se), num(expected)]);
        out.reports.push(named(mean_test(&v, expected, p.stderr_k, p.laplace_slack).with_meta("u", u), &format!("laplace_u{u}"), h));
    }

    if h == 0.0 {
        let r = p.tail_multiple / s.g0;
        let scale = (std::f64::consts::PI.powi(2) * s.g0 * r).sqrt();
        let mut tail = Table::new("tail", &["h", "r", "estimator", "survival", "ratio"]);
        for (l, &rr) in cfg.refine.iter().enumerate() {
            let hits = above.iter().filter(|x| x.discrete[l] >= r).count() as f64 / m as f64;
            tail.push([num(h), num(r), format!("discrete_r{rr}"), num(hits), num(hits * scale)]);
        }
        let hits = above.iter().filter(|x| x.exact >= r).count();
        let surv = hits as f64 / m as f64;
        let analytic = law_survival(s.g0, 0.0, r)?;
        tail.push([num(h), num(r), format!("exact_r{finest_r}"), num(surv), num(surv * scale)]);
        tail.push([num(h), num(r), "law".into(), num(analytic), num(analytic * scale)]);
        let ratio = surv * scale;
        let [lo, hi] = p.tail_band;
        out.reports.push(named(
            TestReport::new("tail_ratio", ratio, hi - lo, (lo..=hi).contains(&ratio))
                .with_sizes(vec![m])
                .with_meta("r", r)
                .with_meta("hits", hits)
                .with_meta("band", p.tail_band)
                .with_meta("law_ratio", analytic * scale),
            "tail_ratio",
            h,
        ));
        out.append(tail);
    }

    let hcfg = &p.histogram;
    let mut hist = Table::new("capacity_histogram", &["h", "bin_lo", "bin_hi", "count", "expected"]);
    if hcfg.bins > 0 && hcfg.max > hcfg.min {
        let width = (hcfg.max - hcfg.min) / hcfg.bins as f64;
        let mut counts = vec![0usize; hcfg.bins + 1];
        for &c in &exact {
            if c >= hcfg.min {
                counts[(((c - hcfg.min) / width) as usize).min(hcfg.bins)] += 1;
            }
        }
        let n = exact.len() as f64;
        for (b, &count) in counts.iter().enumerate() {
            let lo = hcfg.min + b as f64 * width;
            let hi = if b == hcfg.bins { f64::INFINITY } else { lo + width };
            let expected = n * (if hi.is_finite() { cdf(hi) } else { 1.0 } - cdf(lo));
            hist.push([num(h), num(lo), num(hi), count.to_string(), num(expected)]);
        }
    }
    out.append(ks_table);
    out.append(laplace);
    out.append(hist);
    Ok(())
}

struct NegativeSample {
    non_compact: bool,
    // cap(E^{≥−a}) on (0, ∞), else 0
    below: f64,
    // cap(E^{≥a}) on {φ ≥ a}, else 0, from an independent field
    above: f64,
}

fn negative(s: &Setup<'_>, a: f64, out: &mut Outcome) -> Result<()> {
    let cfg = s.cfg;
    let p = &cfg.cap_law;
    let h = -a;
    let (finest, kernel) = s.finest();
    let samples = par_map(cfg.workers, cfg.samples, |i| {
        let key = s.key(h, i);
        let f = sample_field(&s.green, key)?;
        let non_compact = !explore_cluster(&f, cfg.x0, h)?.compact;
        if !p.symmetry {
            return Ok(NegativeSample { non_compact, below: 0.0, above: 0.0 });
        }
        let (ff, rep) = explore_refined_cluster(&f, finest, cfg.x0, h)?;
        let below = if rep.is_empty() || !rep.compact { 0.0 } else { cable_cluster_capacity(&rep, &ff, finest, kernel)?.as_f64() };
        let f2 = sample_field(&s.green, key.derive(1))?;
        let above = if f2.value(cfg.x0) < a {
            0.0
        } else {
            let (ff2, rep2) = explore_refined_cluster(&f2, finest, cfg.x0, a)?;
            cable_cluster_capacity(&rep2, &ff2, finest, kernel)?.as_f64()
        };
        Ok(NegativeSample { non_compact, below, above })
    })?;
    let m = samples.len();
    let hits = samples.iter().filter(|x| x.non_compact).count();
    let expected = 2.0 * normal_cdf(a / s.g0.sqrt()) - 1.0;
    let mut table = Table::new("non_compact", &["h", "n", "non_compact", "estimate", "expected"]);
    table.push([num(h), m.to_string(), hits.to_string(), num(hits as f64 / m as f64), num(expected)]);
    out.append(table);
    out.reports.push(named(binomial_z_test(hits, m, expected, p.stderr_k).with_meta("g0", s.g0), "non_compact", h));

    if p.symmetry && m > 0 {
        let below: Vec<f64> = samples.iter().map(|x| x.below).collect();
        let above: Vec<f64> = samples.iter().map(|x| x.above).collect();
        let r = ks_two_sample(&below, &above)?.at_alpha(cfg.alpha).with_meta("refinement", cfg.refine.last());
        out.reports.push(named(r, "plus_minus_symmetry", h));
        let mut q = Table::new("symmetry_quantiles", &["h", "quantile", "below_level", "above_level"]);
        let (mut b, mut c) = (below.clone(), above.clone());
        b.sort_by(f64::total_cmp);
        c.sort_by(f64::total_cmp);
        for qq in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99] {
            let k = ((qq * m as f64) as usize).min(m.saturating_sub(1));
            q.push([num(h), num(qq), num(b[k]), num(c[k])]);
        }
        out.append(q);
    }
    Ok(())
}
