//! Interlacement suites: excursion count, vacancy, and the two isomorphisms
//! against an independent shifted field.

use cablegff::analytics::{binomial_z_test, chi_square_poisson, ks_two_sample, mean_stderr, TestReport};
use cablegff::gff::sample_field;
use cablegff::interlacement::{
    build_coupled_field, squared_iso_pair, write_excursions_jsonl, write_local_times_csv, write_psi_csv, InterlacementSampler,
};
use cablegff::potential::capacity_green_inverse;
use cablegff::{green_operator, GreenOperator, Purpose, StreamKey};
use rand::seq::index::sample;

use crate::config::{resolve_vertex, Resolved};
use crate::error::{CliError, Result};
use crate::output::{num, Outcome, Table};
use crate::runner::par_map;

struct IsoSample {
    squared: Vec<f64>,
    psi: Vec<f64>,
    reference: Vec<f64>,
    excursions: u64,
    avoids: Vec<bool>,
}

fn test_sets(cfg: &Resolved) -> Result<Vec<Vec<usize>>> {
    let g = &cfg.graph;
    if let Some(sets) = &cfg.isom.test_sets {
        return sets
            .iter()
            .map(|s| {
                let mut v = s.iter().map(|x| resolve_vertex(x, &cfg.family, g)).collect::<Result<Vec<_>>>()?;
                v.sort_unstable();
                v.dedup();
                if v.is_empty() {
                    return Err(CliError::config("empty vacancy test set"));
                }
                Ok(v)
            })
            .collect();
    }
    let dist = g.bfs_distances(cfg.x0);
    Ok((0..3).map(|r| (0..g.len()).filter(|&v| dist[v] <= r).collect()).collect())
}

pub fn run(cfg: &Resolved) -> Result<Outcome> {
    let green = green_operator(&cfg.graph)?;
    let sets = test_sets(cfg)?;
    let mut out = Outcome::new("isom");
    for &u in &cfg.u {
        level(cfg, &green, &sets, u, &mut out)?;
    }
    Ok(out)
}

fn named(mut r: TestReport, name: &str, u: f64) -> TestReport {
    r.experiment = format!("{name}[u={u}]");
    r
}

fn level(cfg: &Resolved, green: &GreenOperator, sets: &[Vec<usize>], u: f64, out: &mut Outcome) -> Result<()> {
    let g = &cfg.graph;
    let n = g.len();
    let p = &cfg.isom;
    let sampler = InterlacementSampler::new(g)?;
    let shift = (2.0 * u).sqrt();
    let key = |i: u64| StreamKey::new(cfg.seed, i).derive(u.to_bits());
    let samples = par_map(cfg.workers, cfg.samples, |i| {
        let k = key(i);
        let phi = sample_field(green, k)?;
        let s = sampler.sample(u, k)?;
        let coupled = build_coupled_field(&phi, &s, k)?;
        let reference = sample_field(green, k.derive(1))?.values().to_vec();
        Ok(IsoSample {
            squared: squared_iso_pair(&phi, &s)?,
            psi: coupled.psi,
            reference,
            excursions: s.excursions.len() as u64,
            avoids: sets.iter().map(|set| s.avoids(set)).collect(),
        })
    })?;
    let m = samples.len();
    let bonferroni = cfg.alpha / n as f64;

    let mut vertices = Table::new(
        "isom_vertices",
        &["u", "vertex", "ks_squared", "p_squared", "ks_psi", "p_psi", "mean_psi", "stderr_psi"],
    );
    let (mut worst_sq, mut min_p_sq) = (0.0f64, 1.0f64);
    let (mut worst_psi, mut min_p_psi) = (0.0f64, 1.0f64);
    let mut worst_z = 0.0f64;
    for x in 0..n {
        let squared: Vec<f64> = samples.iter().map(|s| s.squared[x]).collect();
        let psi: Vec<f64> = samples.iter().map(|s| s.psi[x]).collect();
        let shifted: Vec<f64> = samples.iter().map(|s| s.reference[x] + shift).collect();
        let shifted_sq: Vec<f64> = shifted.iter().map(|v| v * v / 2.0).collect();
        let a = ks_two_sample(&squared, &shifted_sq)?;
        let b = ks_two_sample(&psi, &shifted)?;
        let (mean, se) = mean_stderr(&psi);
        let pa = a.p_value.unwrap_or(1.0);
        let pb = b.p_value.unwrap_or(1.0);
        worst_sq = worst_sq.max(a.statistic);
        min_p_sq = min_p_sq.min(pa);
        worst_psi = worst_psi.max(b.statistic);
        min_p_psi = min_p_psi.min(pb);
        worst_z = worst_z.max((mean - shift).abs() / se);
        vertices.push([num(u), g.id(x).to_string(), num(a.statistic), num(pa), num(b.statistic), num(pb), num(mean), num(se)]);
    }
    let mut r = TestReport::new("squared_isomorphism", worst_sq, cfg.alpha, min_p_sq >= bonferroni).with_sizes(vec![m, m]);
    r.p_value = Some(min_p_sq);
    out.reports.push(named(r.with_meta("bonferroni_alpha", bonferroni), "squared_isomorphism", u));
    let mut r = TestReport::new("signed_isomorphism", worst_psi, cfg.alpha, min_p_psi >= bonferroni).with_sizes(vec![m, m]);
    r.p_value = Some(min_p_psi);
    out.reports.push(named(r.with_meta("bonferroni_alpha", bonferroni), "signed_isomorphism", u));
    out.reports.push(named(
        TestReport::new("psi_mean_shift", worst_z, p.stderr_k, worst_z <= p.stderr_k).with_sizes(vec![m]).with_meta("shift", shift),
        "psi_mean_shift",
        u,
    ));
    out.append(vertices);

    // covariance of ψ on random pairs
    let mut pairs_table = Table::new("psi_covariance", &["u", "x", "y", "estimate", "stderr", "green"]);
    let all_pairs: Vec<(usize, usize)> = (0..n).flat_map(|x| (x..n).map(move |y| (x, y))).collect();
    let mut rng = StreamKey::new(cfg.seed, 0).rng(Purpose::Auxiliary, 0x7061_6972);
    let chosen = sample(&mut rng, all_pairs.len(), p.pairs.min(all_pairs.len())).into_vec();
    let means: Vec<f64> = (0..n).map(|x| samples.iter().map(|s| s.psi[x]).sum::<f64>() / m as f64).collect();
    for k in chosen {
        let (x, y) = all_pairs[k];
        let prods: Vec<f64> = samples.iter().map(|s| (s.psi[x] - means[x]) * (s.psi[y] - means[y])).collect();
        let (cov, se) = mean_stderr(&prods);
        let want = green.g(x, y)?;
        pairs_table.push([num(u), g.id(x).to_string(), g.id(y).to_string(), num(cov), num(se), num(want)]);
        let d = (cov - want).abs();
        out.reports.push(named(
            TestReport::new("psi_covariance", d, p.stderr_k * se, d <= p.stderr_k * se).with_sizes(vec![m]),
            &format!("psi_covariance({},{})", g.id(x), g.id(y)),
            u,
        ));
    }
    out.append(pairs_table);

    let mut vacancy = Table::new("vacancy", &["u", "set", "size", "capacity", "estimate", "expected"]);
    for (k, set) in sets.iter().enumerate() {
        let cap = capacity_green_inverse(green, set)?;
        let expected = (-u * cap).exp();
        let hits = samples.iter().filter(|s| s.avoids[k]).count();
        vacancy.push([num(u), k.to_string(), set.len().to_string(), num(cap), num(hits as f64 / m as f64), num(expected)]);
        out.reports.push(named(
            binomial_z_test(hits, m, expected, p.stderr_k).with_meta("capacity", cap).with_meta("set_size", set.len()),
            &format!("vacancy_set{k}"),
            u,
        ));
    }
    out.append(vacancy);

    let counts: Vec<u64> = samples.iter().map(|s| s.excursions).collect();
    let mean_count = u * g.kappas().iter().sum::<f64>();
    let chi = chi_square_poisson(&counts, mean_count)?.at_alpha(cfg.alpha);
    out.reports.push(named(chi, "excursion_count_poisson", u));
    let top = counts.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; top as usize + 1];
    for &c in &counts {
        hist[c as usize] += 1;
    }
    let mut count_table = Table::new("excursion_counts", &["u", "count", "observed"]);
    for (c, &o) in hist.iter().enumerate() {
        count_table.push([num(u), c.to_string(), o.to_string()]);
    }
    out.append(count_table);

    if p.dump_samples > 0 {
        let mut ell_w = csv::Writer::from_writer(Vec::new());
        let mut psi_w = csv::Writer::from_writer(Vec::new());
        let mut traces = Vec::new();
        for i in 0..p.dump_samples.min(cfg.samples) {
            let k = key(i);
            let phi = sample_field(green, k)?;
            let s = sampler.sample(u, k)?;
            let coupled = build_coupled_field(&phi, &s, k)?;
            write_local_times_csv(&mut ell_w, i, g, &s.ell, i == 0)?;
            write_psi_csv(&mut psi_w, i, g, &coupled, i == 0)?;
            write_excursions_jsonl(&mut traces, i, &s)?;
        }
        let ell = ell_w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        let psi = psi_w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        out.files.push((format!("ell_u{u}.csv"), ell));
        out.files.push((format!("psi_u{u}.csv"), psi));
        out.files.push((format!("excursions_u{u}.jsonl"), traces));
    }
    Ok(())
}
