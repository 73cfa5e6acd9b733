//! Deterministic potential-theory checks on one graph.

use cablegff::analytics::TestReport;
use cablegff::potential::{
    capacity_green_inverse, capacity_growth_profile, equilibrium_measure, hitting_distribution, sweeping_residual,
    write_equilibrium_csv, write_green_csv,
};
use cablegff::{green_operator, refine_uniform, Purpose, StreamKey};
use rand::seq::index::sample;

use crate::config::Resolved;
use crate::error::Result;
use crate::output::{num, Outcome, Table};

// Largest graph for which the full Green matrix is dumped.
const GREEN_DUMP_LIMIT: usize = 100;

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn run(cfg: &Resolved) -> Result<Outcome> {
    let g = &cfg.graph;
    let p = &cfg.potential;
    let x0 = cfg.x0;
    let green = green_operator(g)?;
    let mut out = Outcome::new("potential");

    // Σ_y g(x,y) κ_y = 1
    let absorbed = green.solve(g.kappas())?;
    let worst = absorbed.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    out.reports.push(TestReport::new("green_kappa_normalization", worst, p.tolerance, worst <= p.tolerance).with_sizes(vec![g.len()]));

    let dist = g.bfs_distances(x0);
    let ball = |r: usize| -> Vec<usize> { (0..g.len()).filter(|&v| dist[v] <= r).collect() };
    let mut sets: Vec<(String, Vec<usize>)> = vec![
        ("x0".into(), vec![x0]),
        ("ball1".into(), ball(1)),
        ("all".into(), (0..g.len()).collect()),
    ];
    let mut rng = StreamKey::new(cfg.seed, 0).rng(Purpose::Auxiliary, 0x706f74);
    for k in 0..p.random_sets {
        let size = 1 + (k * 7 + 2) % g.len();
        let mut s = sample(&mut rng, g.len(), size).into_vec();
        s.sort_unstable();
        sets.push((format!("random{k}"), s));
    }

    let mut caps = Table::new("capacities", &["set", "size", "escape_capacity", "green_inverse_capacity", "relative_gap"]);
    let mut worst_gap: f64 = 0.0;
    let mut base_caps = Vec::new();
    for (name, set) in &sets {
        let eq = equilibrium_measure(&green, set)?;
        let inv = capacity_green_inverse(&green, set)?;
        let gap = relative(eq.capacity, inv);
        worst_gap = worst_gap.max(gap);
        caps.push([name.clone(), set.len().to_string(), num(eq.capacity), num(inv), num(gap)]);
        base_caps.push(eq.capacity);
    }
    let cap_x0 = base_caps[0];
    out.reports.push(
        TestReport::new("capacity_dual", worst_gap, p.tolerance, worst_gap <= p.tolerance)
            .with_sizes(vec![sets.len()])
            .with_meta("cap_x0", cap_x0)
            .with_meta("g_x0", green.g(x0, x0)?),
    );
    let total_kappa: f64 = g.kappas().iter().sum();
    let whole = relative(base_caps[2], total_kappa);
    out.reports.push(TestReport::new("capacity_of_graph_is_total_killing", whole, p.tolerance, whole <= p.tolerance));

    // sweeping from the unit ball (or the whole graph) onto {x0}
    let mut residual: f64 = 0.0;
    let outer = if sets[1].1.len() > 1 { sets[1].1.clone() } else { sets[2].1.clone() };
    residual = residual.max(sweeping_residual(&green, &[x0], &outer)?);
    let ball2 = ball(2);
    if ball2.len() > outer.len() {
        residual = residual.max(sweeping_residual(&green, &outer, &ball2)?);
    }
    out.reports.push(TestReport::new("sweeping_residual", residual, p.tolerance, residual <= p.tolerance));

    // entrance law from the farthest vertex into the unit ball
    let far = (0..g.len()).max_by_key(|&v| (dist[v], std::cmp::Reverse(v))).unwrap_or(x0);
    let hd = hitting_distribution(&green, &outer, far)?;
    let miss = (hd.total() - 1.0).abs();
    out.reports.push(TestReport::new("hitting_normalization", miss, 1e-12, miss <= 1e-12));

    // refinement invariance on the original vertices
    let mut refinement = Table::new("refinement_invariance", &["refinement", "vertices", "max_green_gap", "max_capacity_gap"]);
    let mut worst_refined: f64 = 0.0;
    for &r in cfg.refine.iter().filter(|&&r| r > 1) {
        let refined = refine_uniform(g, r)?;
        let fine = green_operator(refined.graph())?;
        let mut gg: f64 = 0.0;
        for y in 0..g.len() {
            let coarse = green.column(y)?;
            let col = fine.column(y)?;
            for x in 0..g.len() {
                gg = gg.max(relative(col[x], coarse[x]));
            }
        }
        let mut cg: f64 = 0.0;
        for ((_, set), &c) in sets.iter().zip(&base_caps) {
            cg = cg.max(relative(equilibrium_measure(&fine, set)?.capacity, c));
        }
        worst_refined = worst_refined.max(gg).max(cg);
        refinement.push([r.to_string(), refined.graph().len().to_string(), num(gg), num(cg)]);
    }
    out.reports.push(
        TestReport::new("refinement_invariance", worst_refined, p.refine_tolerance, worst_refined <= p.refine_tolerance)
            .with_meta("refinements", &cfg.refine),
    );

    let ecc = dist.iter().copied().max().unwrap_or(0);
    let radii: Vec<usize> = (0..=ecc).collect();
    let profile = capacity_growth_profile(&green, x0, &radii)?;
    let mut growth = Table::new("capacity_growth", &["radius", "ball_capacity", "path_capacity"]);
    for pt in &profile {
        growth.push([pt.radius.to_string(), num(pt.ball_capacity), num(pt.path_capacity)]);
    }
    let monotone = profile.windows(2).all(|w| w[1].ball_capacity >= w[0].ball_capacity - 1e-12)
        && profile.iter().all(|pt| pt.path_capacity <= pt.ball_capacity + 1e-12);
    out.reports.push(TestReport::new("capacity_growth_monotone", 0.0, 1e-12, monotone).with_sizes(vec![profile.len()]));

    let dump: Vec<usize> = (0..g.len().min(GREEN_DUMP_LIMIT)).collect();
    let mut buf = Vec::new();
    write_green_csv(&green, &dump, &mut buf)?;
    out.files.push(("green.csv".into(), buf));
    let mut buf = Vec::new();
    write_equilibrium_csv(&equilibrium_measure(&green, &outer)?, g, &mut buf)?;
    out.files.push(("equilibrium.csv".into(), buf));

    out.tables.push(caps);
    out.tables.push(refinement);
    out.tables.push(growth);
    Ok(out)
}
