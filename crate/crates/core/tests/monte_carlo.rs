//! Seeded Monte Carlo checks against closed forms.

use cablegff::analytics::{ks_one_sample, ks_two_sample, mean_stderr, normal_cdf};
use cablegff::gff::{explore_cluster, level_crossing_prob, sample_field, sample_field_negated, FieldSample};
use cablegff::interlacement::{build_coupled_field, squared_iso_pair, InterlacementSampler};
use cablegff::{generate_graph, green_operator, GraphFamily, Purpose, StreamKey, VertexId, WeightedGraph};
use rand::Rng;

fn grid(side: usize, kappa: f64) -> WeightedGraph {
    generate_graph(&GraphFamily::Grid { d: 2, side, lambda: 1.0, kappa, boundary_kappa: None }).unwrap()
}

fn within(values: &[f64], expected: f64, k: f64) -> bool {
    let (m, se) = mean_stderr(values);
    (m - expected).abs() <= k * se
}

#[test]
fn single_vertex_variance() {
    let g = WeightedGraph::new(vec![VertexId::Int(0)], vec![], vec![1.0]).unwrap();
    let green = green_operator(&g).unwrap();
    let sq: Vec<f64> = (0..100_000).map(|i| sample_field(&green, StreamKey::new(1, i)).unwrap().value(0).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / sq.len() as f64;
    assert!((var - 1.0).abs() <= 0.02, "{var}");
}

#[test]
fn two_vertex_covariance() {
    let g = WeightedGraph::new(vec![VertexId::Int(0), VertexId::Int(1)], vec![(0, 1, 1.0)], vec![1.0, 1.0]).unwrap();
    let green = green_operator(&g).unwrap();
    let prods: Vec<f64> = (0..100_000)
        .map(|i| {
            let f = sample_field(&green, StreamKey::new(2, i)).unwrap();
            f.value(0) * f.value(1)
        })
        .collect();
    assert!(within(&prods, 1.0 / 3.0, 3.0));
}

#[test]
fn grid_covariance_matches_green() {
    let g = grid(3, 0.5);
    let green = green_operator(&g).unwrap();
    let n = g.len();
    let samples: Vec<Vec<f64>> = (0..100_000).map(|i| sample_field(&green, StreamKey::new(3, i)).unwrap().values().to_vec()).collect();
    for x in 0..n {
        let m: Vec<f64> = samples.iter().map(|s| s[x]).collect();
        assert!(within(&m, 0.0, 3.0), "mean at {x}");
        for y in x..n {
            let p: Vec<f64> = samples.iter().map(|s| s[x] * s[y]).collect();
            assert!(within(&p, green.g(x, y).unwrap(), 3.0), "cov({x},{y})");
        }
    }
}

#[test]
fn crossing_frequency_matches_bridge_formula() {
    let g = WeightedGraph::new(vec![VertexId::Int(0), VertexId::Int(1)], vec![(0, 1, 0.8)], vec![1.0, 1.0]).unwrap();
    let (a, b, h) = (0.9, 0.6, 0.2);
    let p = level_crossing_prob(a, b, 0.8, h);
    let hits: Vec<f64> = (0..40_000)
        .map(|i| {
            let f = FieldSample::from_values(&g, vec![a, b], StreamKey::new(4, i)).unwrap();
            let r = explore_cluster(&f, 0, h).unwrap();
            f64::from(u8::from(r.members.len() == 2))
        })
        .collect();
    assert!(within(&hits, p, 3.0), "p = {p}");
}

#[test]
fn sign_symmetry_of_root_and_capacity_law() {
    let g = grid(4, 0.5);
    let green = green_operator(&g).unwrap();
    let x0 = 5;
    let m = 20_000u64;
    let above: Vec<f64> = (0..m).map(|i| f64::from(u8::from(sample_field(&green, StreamKey::new(5, i)).unwrap().value(x0) >= 0.0))).collect();
    assert!(within(&above, 0.5, 3.0));
    let kernel = cablegff::CableGreen::new(&green).unwrap();
    let cap = |f: &FieldSample<'_>| {
        let r = explore_cluster(f, x0, 0.0).unwrap();
        cablegff::gff::cluster_capacity(&r, &g, &kernel).unwrap().as_f64()
    };
    let plain: Vec<f64> = (0..m).map(|i| cap(&sample_field(&green, StreamKey::new(6, i)).unwrap())).collect();
    let flipped: Vec<f64> = (m..2 * m).map(|i| cap(&sample_field_negated(&green, StreamKey::new(6, i)).unwrap())).collect();
    let r = ks_two_sample(&plain, &flipped).unwrap().at_alpha(0.01);
    assert!(r.pass, "{r:?}");
}

#[test]
fn non_compact_probability_on_small_grid() {
    let g = grid(4, 0.5);
    let green = green_operator(&g).unwrap();
    let x0 = 5;
    let g0 = green.g(x0, x0).unwrap();
    for h in [0.3, 0.8] {
        let hits: Vec<f64> = (0..40_000)
            .map(|i| {
                let f = sample_field(&green, StreamKey::new(7, i)).unwrap();
                f64::from(u8::from(!explore_cluster(&f, x0, -h).unwrap().compact))
            })
            .collect();
        assert!(within(&hits, 2.0 * normal_cdf(h / g0.sqrt()) - 1.0, 3.0), "h = {h}");
    }
}

#[test]
fn mean_local_time_equals_level() {
    let g = grid(3, 0.5);
    let sampler = InterlacementSampler::new(&g).unwrap();
    let u = 0.8;
    let ell: Vec<Vec<f64>> = (0..100_000).map(|i| sampler.local_times(u, StreamKey::new(8, i)).unwrap()).collect();
    for x in 0..g.len() {
        let col: Vec<f64> = ell.iter().map(|l| l[x]).collect();
        assert!(within(&col, u, 3.0), "vertex {x}");
    }
}

#[test]
fn squared_pair_mean() {
    let g = grid(3, 0.5);
    let green = green_operator(&g).unwrap();
    let sampler = InterlacementSampler::new(&g).unwrap();
    let u = 0.5;
    let rows: Vec<Vec<f64>> = (0..50_000)
        .map(|i| {
            let key = StreamKey::new(9, i);
            squared_iso_pair(&sample_field(&green, key).unwrap(), &sampler.sample(u, key).unwrap()).unwrap()
        })
        .collect();
    for x in 0..g.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[x]).collect();
        assert!(within(&col, u + green.g(x, x).unwrap() / 2.0, 3.0), "vertex {x}");
    }
}

#[test]
fn coupled_field_has_shifted_gaussian_marginals() {
    let g = grid(3, 0.5);
    let green = green_operator(&g).unwrap();
    let sampler = InterlacementSampler::new(&g).unwrap();
    let u = 0.5;
    let m = 20_000u64;
    let psi: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let key = StreamKey::new(10, i);
            let phi = sample_field(&green, key).unwrap();
            build_coupled_field(&phi, &sampler.sample(u, key).unwrap(), key).unwrap().psi
        })
        .collect();
    let shift = (2.0 * u).sqrt();
    for x in 0..g.len() {
        let col: Vec<f64> = psi.iter().map(|p| p[x]).collect();
        assert!(within(&col, shift, 3.0), "vertex {x}");
        let sd = green.g(x, x).unwrap().sqrt();
        let r = ks_one_sample(&col, |t| normal_cdf((t - shift) / sd)).unwrap().at_alpha(0.01 / g.len() as f64);
        assert!(r.pass, "vertex {x}: {r:?}");
    }
}

#[test]
fn vanishing_level_resigns_the_field() {
    let g = grid(3, 0.5);
    let green = green_operator(&g).unwrap();
    let sampler = InterlacementSampler::new(&g).unwrap();
    let m = 10_000u64;
    let mut psi = vec![Vec::new(); g.len()];
    let mut fresh = vec![Vec::new(); g.len()];
    for i in 0..m {
        let key = StreamKey::new(11, i);
        let phi = sample_field(&green, key).unwrap();
        let s = sampler.sample(1e-12, key).unwrap();
        assert!(s.is_empty());
        let c = build_coupled_field(&phi, &s, key).unwrap();
        let other = sample_field(&green, StreamKey::new(12, i)).unwrap();
        for x in 0..g.len() {
            assert!((c.psi[x].abs() - phi.value(x).abs()).abs() < 1e-15);
            psi[x].push(c.psi[x]);
            fresh[x].push(other.value(x));
        }
    }
    for x in 0..g.len() {
        let r = ks_two_sample(&psi[x], &fresh[x]).unwrap().at_alpha(0.01 / g.len() as f64);
        assert!(r.pass, "vertex {x}: {r:?}");
    }
}

#[test]
fn ks_is_calibrated() {
    let mut rejected = 0;
    for rep in 0..100 {
        let mut rng = StreamKey::new(13, rep).rng(Purpose::Auxiliary, 0);
        let draws: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        if !ks_one_sample(&draws, |t| t.clamp(0.0, 1.0)).unwrap().at_alpha(0.01).pass {
            rejected += 1;
        }
    }
    assert!(rejected <= 2, "{rejected} of 100 rejected");
}
