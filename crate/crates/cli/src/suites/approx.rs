//! Exhaustion of the target graph by growing domains with infinite killing
//! outside. Green function at `x0` and capacities of a fixed block converge
//! monotonically; the capacity law of the cluster at `x0` drifts with them.

use cablegff::analytics::{ks_one_sample, law_cdf, law_mass, TestReport, KS_MIN_SAMPLES};
use cablegff::gff::{cable_cluster_capacity, explore_refined_cluster, sample_field};
use cablegff::potential::capacity_green_inverse;
use cablegff::{green_operator, induce_finite_killing, refine_uniform, CableGreen, GraphFamily, StreamKey, WeightedGraph};

use crate::config::{grid_coords, resolve_vertex, Exhaustion, Resolved};
use crate::error::{CliError, Result};
use crate::output::{num, Outcome, Table};
use crate::runner::par_map;

/// Sup-norm or graph distance from `x0` to every vertex.
fn distances(cfg: &Resolved) -> Vec<usize> {
    match (cfg.approx.exhaustion, &cfg.family) {
        (Exhaustion::Box, GraphFamily::Grid { d, side, .. }) => {
            let c0 = grid_coords(cfg.x0, *d, *side);
            (0..cfg.graph.len())
                .map(|v| grid_coords(v, *d, *side).iter().zip(&c0).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0))
                .collect()
        }
        _ => cfg.graph.bfs_distances(cfg.x0),
    }
}

/// The unit square at `x0` spanned by the first and last coordinate
/// directions, or `x0` with its neighbours off a grid.
fn default_block(cfg: &Resolved) -> Vec<usize> {
    let g = &cfg.graph;
    match &cfg.family {
        GraphFamily::Grid { d, side, .. } => {
            let c = grid_coords(cfg.x0, *d, *side);
            let step = |c: &mut Vec<usize>, k: usize| c[k] = if c[k] + 1 < *side { c[k] + 1 } else { c[k] - 1 };
            let index = |c: &[usize]| c.iter().fold(0, |acc, &x| acc * side + x);
            let mut a = c.clone();
            step(&mut a, d - 1);
            let mut b = c.clone();
            step(&mut b, 0);
            let mut ab = a.clone();
            step(&mut ab, 0);
            let mut s = vec![cfg.x0, index(&a), index(&b), index(&ab)];
            s.sort_unstable();
            s.dedup();
            s
        }
        _ => {
            let mut s: Vec<usize> = std::iter::once(cfg.x0).chain(g.neighbors(cfg.x0).iter().map(|&(y, _)| y)).collect();
            s.sort_unstable();
            s.dedup();
            s
        }
    }
}

/// Positions of `vertices` of `target` inside a domain graph.
fn locate(domain: &WeightedGraph, target: &WeightedGraph, vertices: &[usize]) -> Result<Vec<usize>> {
    vertices
        .iter()
        .map(|&v| {
            (0..domain.len())
                .find(|&w| domain.id(w) == target.id(v))
                .ok_or_else(|| CliError::config(format!("vertex {} lies outside the domain", target.id(v))))
        })
        .collect()
}

pub fn run(cfg: &Resolved) -> Result<Outcome> {
    let g = &cfg.graph;
    let p = &cfg.approx;
    let dist = distances(cfg);
    let cover = dist.iter().copied().max().unwrap_or(0);
    let block = match &p.block {
        Some(b) => {
            let mut s = b.iter().map(|x| resolve_vertex(x, &cfg.family, g)).collect::<Result<Vec<_>>>()?;
            s.sort_unstable();
            s.dedup();
            s
        }
        None => default_block(cfg),
    };
    if block.is_empty() {
        return Err(CliError::config("empty block"));
    }
    let reach = block.iter().map(|&v| dist[v]).max().unwrap_or(0).max(1);
    let radii = p.radii.clone().unwrap_or_else(|| (reach..=cover.max(reach)).collect());
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("approx radii must be increasing"));
    }
    if let Some(&far) = block.iter().find(|&&v| dist[v] > radii[0]) {
        return Err(CliError::config(format!("block vertex {} lies outside the smallest domain", g.id(far))));
    }

    let target = green_operator(g)?;
    let target_g0 = target.g(cfg.x0, cfg.x0)?;
    let target_cap = capacity_green_inverse(&target, &block)?;
    let mut out = Outcome::new("approx");
    let mut table = Table::new("exhaustion", &["radius", "vertices", "g_x0", "block_capacity", "ks_own_law", "ks_target_law"]);
    let mut green_seq = Vec::new();
    let mut cap_seq = Vec::new();
    let drift = cfg.samples >= KS_MIN_SAMPLES as u64;
    let mut worst_p: f64 = 1.0;
    for &n in &radii {
        let kappa: Vec<f64> = (0..g.len()).map(|v| if dist[v] <= n { g.kappas()[v] } else { f64::INFINITY }).collect();
        let domain = induce_finite_killing(&g.with_kappa(kappa)?)?;
        let green = green_operator(&domain)?;
        let x0 = locate(&domain, g, &[cfg.x0])?[0];
        let inner = locate(&domain, g, &block)?;
        let g0 = green.g(x0, x0)?;
        let cap = capacity_green_inverse(&green, &inner)?;
        green_seq.push(g0);
        cap_seq.push(cap);

        let (mut own, mut far) = (String::new(), String::new());
        if drift {
            let refined = refine_uniform(&domain, 1)?;
            let kernel = CableGreen::for_refined(&refined, &green)?;
            let caps = par_map(cfg.workers, cfg.samples, |i| {
                let f = sample_field(&green, StreamKey::new(cfg.seed, i).derive(n as u64))?;
                if f.value(x0) < 0.0 {
                    return Ok(None);
                }
                let (fine, report) = explore_refined_cluster(&f, &refined, x0, 0.0)?;
                Ok(Some(cable_cluster_capacity(&report, &fine, &refined, &kernel)?.as_f64()))
            })?;
            let caps: Vec<f64> = caps.into_iter().flatten().collect();
            if caps.len() >= KS_MIN_SAMPLES {
                let fit = |g0: f64| {
                    let mass = law_mass(g0, 0.0)?;
                    ks_one_sample(&caps, |r| law_cdf(g0, 0.0, r).map_or(f64::NAN, |c| c / mass))
                };
                let a = fit(g0)?;
                let b = fit(target_g0)?;
                worst_p = worst_p.min(a.p_value.unwrap_or(1.0));
                own = num(a.statistic);
                far = num(b.statistic);
            }
        }
        table.push([n.to_string(), domain.len().to_string(), num(g0), num(cap), own, far]);
    }

    let rise = green_seq.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    out.reports.push(
        TestReport::new("green_increasing", rise.max(0.0), 0.0, green_seq.windows(2).all(|w| w[1] > w[0]))
            .with_sizes(vec![radii.len()])
            .with_meta("g_x0", &green_seq),
    );
    let fall = cap_seq.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    out.reports.push(
        TestReport::new("capacity_decreasing", fall.max(0.0), 0.0, cap_seq.windows(2).all(|w| w[1] < w[0]))
            .with_sizes(vec![radii.len()])
            .with_meta("capacity", &cap_seq)
            .with_meta("block_size", block.len()),
    );
    let last = radii.len() - 1;
    out.reports.push(TestReport::deviation("green_limit", green_seq[last], target_g0, p.tolerance));
    out.reports.push(TestReport::deviation("capacity_limit", cap_seq[last], target_cap, p.tolerance));
    if drift {
        let alpha = cfg.alpha / radii.len() as f64;
        let mut r = TestReport::new("capacity_law_by_domain", worst_p, alpha, worst_p >= alpha).with_sizes(vec![cfg.samples as usize]);
        r.p_value = Some(worst_p);
        out.reports.push(r);
    }
    out.tables.push(table);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Command, ExperimentConfig};

    fn resolved(json: &str) -> Resolved {
        ExperimentConfig::from_json_str(json).unwrap().resolve(Command::Approx).unwrap()
    }

    #[test]
    fn block_is_a_unit_square() {
        let cfg = resolved(r#"{"graph":{"family":"grid","params":{"side":6,"kappa":0.1}}}"#);
        // x0 = (2,2) = 14
        assert_eq!(default_block(&cfg), vec![14, 15, 20, 21]);
        let corner = resolved(r#"{"graph":{"family":"grid","params":{"side":6,"kappa":0.1}},"x0":[5,5]}"#);
        assert_eq!(default_block(&corner), vec![28, 29, 34, 35]);
    }

    #[test]
    fn box_distances_are_sup_norm() {
        let cfg = resolved(r#"{"graph":{"family":"grid","params":{"side":5,"kappa":0.1}}}"#);
        let d = distances(&cfg);
        assert_eq!(d[12], 0);
        assert_eq!(d[0], 2);
        assert_eq!(d[6], 1);
        assert_eq!(*d.iter().max().unwrap(), 2);
    }

    #[test]
    fn small_exhaustion_converges() {
        let cfg = resolved(r#"{"graph":{"family":"grid","params":{"side":7,"kappa":0.2}},"samples":0,"approx":{"exhaustion":"ball"}}"#);
        let out = run(&cfg).unwrap();
        assert!(out.pass(), "{:?}", out.reports);
        assert_eq!(out.table("exhaustion").unwrap().rows.len(), 5);
    }
}
