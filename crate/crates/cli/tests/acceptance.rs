//! Acceptance suite: the eleven headline criteria at their stated sizes and
//! tolerances. Prints one line per criterion and fails if any criterion does.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cablegff::analytics::{laplace_lhs, laplace_selfcheck, normal_cdf};
use cablegff_cli::config::{Command, ExperimentConfig};
use cablegff_cli::output::Outcome;

const TWO_VERTEX: &str = r#"{"vertices":["x","y"],"edges":[["x","y",1.0]],"kappa":{"x":1.0,"y":1.0}}"#;

struct Verdict {
    pass: bool,
    detail: String,
}

fn run(command: Command, json: &str) -> (Outcome, Duration) {
    let cfg = ExperimentConfig::from_json_str(json).unwrap().resolve(command).unwrap();
    let start = Instant::now();
    let out = cablegff_cli::run(&cfg).unwrap();
    (out, start.elapsed())
}

fn all(out: &Outcome, prefixes: &[&str]) -> Verdict {
    let picked: Vec<_> = out.reports.iter().filter(|r| prefixes.iter().any(|p| r.experiment.starts_with(p))).collect();
    let failed: Vec<String> = picked.iter().filter(|r| !r.pass).map(|r| format!("{} stat={:.4e}", r.experiment, r.statistic)).collect();
    let pass = !picked.is_empty() && failed.is_empty();
    let detail = if failed.is_empty() { format!("{} checks", picked.len()) } else { failed.join(", ") };
    Verdict { pass, detail }
}

fn stat(out: &Outcome, name: &str) -> f64 {
    out.report(name).map_or(f64::NAN, |r| r.statistic)
}

fn timed(mut v: Verdict, took: Duration, limit: Duration) -> Verdict {
    v.detail = format!("{}; {:.2}s (limit {}s)", v.detail, took.as_secs_f64(), limit.as_secs());
    v.pass &= took <= limit;
    v
}

fn criterion_1() -> Verdict {
    let grid = r#"{"graph":{"family":"grid","params":{"d":2,"side":5,"kappa":1.0}},"refine":[1,2,4,8]}"#;
    let pair = format!(r#"{{"graph":{TWO_VERTEX},"x0":"x","refine":[1,2,4,8]}}"#);
    let mut took = Duration::ZERO;
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, json) in [("two-vertex", pair.as_str()), ("5x5", grid)] {
        let (out, t) = run(Command::Potential, json);
        took += t;
        let w = all(&out, &["capacity_dual", "sweeping_residual", "green_kappa_normalization", "refinement_invariance"]);
        pass &= w.pass;
        parts.push(format!("{name}: {}", w.detail));
    }
    timed(Verdict { pass, detail: parts.join(", ") }, took, Duration::from_secs(1))
}

fn criterion_4() -> Verdict {
    let (out, took) = run(Command::CapLaw, r#"{"h":[-0.25,-0.5,-1.0],"samples":100000,"cap_law":{"symmetry":false}}"#);
    timed(all(&out, &["non_compact"]), took, Duration::from_secs(60))
}

fn criterion_9() -> Verdict {
    let (out, took) = run(Command::CapLaw, r#"{"h":[-0.5],"samples":100000,"refine":[8]}"#);
    let v = all(&out, &["plus_minus_symmetry"]);
    let p = out.report("plus_minus_symmetry[h=-0.5]").and_then(|r| r.p_value).unwrap_or(f64::NAN);
    Verdict { pass: v.pass, detail: format!("{}; p={p:.3}; {:.1}s", v.detail, took.as_secs_f64()) }
}

fn criterion_10() -> Verdict {
    let (out, took) = run(Command::Approx, r#"{"samples":0}"#);
    let v = all(&out, &["green_increasing", "capacity_decreasing", "green_limit", "capacity_limit"]);
    let v = Verdict {
        detail: format!("{}; green gap {:.1e}, capacity gap {:.1e}", v.detail, stat(&out, "green_limit"), stat(&out, "capacity_limit")),
        ..v
    };
    timed(v, took, Duration::from_secs(5))
}

fn criterion_11() -> Verdict {
    let (mut worst_check, mut worst_mass) = (0.0f64, 0.0f64);
    for g0 in [0.5, 1.0, 2.0] {
        for h in [0.0, 0.5, 1.0] {
            for u in [0.0, 0.1, 1.0, 10.0] {
                worst_check = worst_check.max(laplace_selfcheck(g0, h, u).unwrap());
            }
            let mass = laplace_lhs(g0, h, 0.0).unwrap();
            worst_mass = worst_mass.max((mass - (1.0 - normal_cdf(h / g0.sqrt()))).abs());
        }
    }
    Verdict {
        pass: worst_check <= 1e-7 && worst_mass <= 1e-8,
        detail: format!("selfcheck {worst_check:.2e} (≤ 1e-7), mass {worst_mass:.2e} (≤ 1e-8)"),
    }
}

fn main() -> ExitCode {
    let mut lines: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        lines.push((n, name, v));
    };

    report(1, "deterministic potential theory", criterion_1());

    // criteria 2, 3 and 8 share one run
    let (law, took) = run(Command::CapLaw, r#"{"h":[0.0],"samples":200000,"refine":[1,2,4,8]}"#);
    let mut v2 = all(&law, &["ks_sweep_nonincreasing[h=0]", "ks_exact[h=0]"]);
    v2.detail = format!(
        "{}; sweep rise {:.2e}, ks {:.4} (≤ 0.015)",
        v2.detail,
        stat(&law, "ks_sweep_nonincreasing[h=0]"),
        stat(&law, "ks_exact[h=0]")
    );
    report(2, "capacity law at h = 0", timed(v2, took, Duration::from_secs(600)));
    report(3, "laplace identity", all(&law, &["laplace_u"]));
    let mut v8 = all(&law, &["tail_ratio[h=0]"]);
    v8.detail = format!("{}; ratio {:.3} in [0.7, 1.3]", v8.detail, stat(&law, "tail_ratio[h=0]"));
    report(4, "non-compactness probability", criterion_4());

    let (iso, _) = run(Command::Isom, r#"{"u":[1.0],"samples":50000}"#);
    report(5, "squared isomorphism", all(&iso, &["squared_isomorphism"]));
    report(6, "signed isomorphism and covariance", all(&iso, &["signed_isomorphism", "psi_covariance"]));
    report(7, "vacancy and excursion count", all(&iso, &["vacancy_set", "excursion_count_poisson"]));
    report(8, "capacity tail", v8);
    report(9, "plus/minus symmetry", criterion_9());
    report(10, "finite-volume monotonicity", criterion_10());
    report(11, "analytics self-consistency", criterion_11());

    let failed: Vec<usize> = lines.iter().filter(|(_, _, v)| !v.pass).map(|(n, _, _)| *n).collect();
    println!("acceptance: {}/{} criteria passed", lines.len() - failed.len(), lines.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
