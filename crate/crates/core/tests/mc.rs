use linked_gp::design::maximin_lhd;
use linked_gp::emulator::{FitConfig, NuggetMode};
use linked_gp::graph::{Node, SystemGraph};
use linked_gp::mc::{mc_moments, sample_emulator, sample_linked};
use linked_gp::systems::two_layer_system;
use linked_gp::NormalVector;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn fitted(nugget: NuggetMode, seed: u64) -> (SystemGraph, Vec<Vec<f64>>) {
    let fit = FitConfig {
        nugget,
        ..FitConfig::default()
    };
    let nodes: Vec<Node> = two_layer_system().nodes().map(|n| n.clone().with_fit(fit.clone())).collect();
    let mut g = SystemGraph::new(vec![(0.0, 2.0), (0.0, 2.0)], nodes).unwrap();
    let d = maximin_lhd(10, g.global_bounds(), seed, 1000).unwrap();
    let data = g.collect_runs(d.points()).unwrap();
    g.fit_all(&data, seed).unwrap();
    (g, d.points().to_vec())
}

#[test]
fn alternating_batch() {
    let x: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
    let m = mc_moments(&x).unwrap();
    assert_eq!(m.mean, 0.5);
    assert!((m.var - 0.25 * 1000.0 / 999.0).abs() < 1e-15);
    assert!((m.var - 0.25025).abs() < 1e-5);
    assert!((m.se_mean - (m.var / 1000.0).sqrt()).abs() < 1e-15);
    assert_eq!(m.skewness, 0.0);
}

#[test]
fn constant_batch_has_no_spread() {
    let m = mc_moments(&[2.0; 50]).unwrap();
    assert_eq!(m.var, 0.0);
    assert_eq!(m.se_var, 0.0);
    assert!(mc_moments(&[1.0]).is_err());
}

#[test]
fn normal_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = Normal::new(3.0, 2.0).unwrap();
    let x: Vec<f64> = (0..1_000_000).map(|_| d.sample(&mut rng)).collect();
    let m = mc_moments(&x).unwrap();
    assert!((m.mean - 3.0).abs() < 3.0 * 2.0 / 1000.0);
    assert!((m.var - 4.0).abs() < 3.0 * m.se_var);
    // For normal data the variance has standard error σ²·sqrt(2/(n-1)).
    assert!((m.se_var / (4.0 * (2.0f64 / 999_999.0).sqrt()) - 1.0).abs() < 0.01);
    assert!(m.skewness.abs() < 3.0 * m.se_skewness);
}

#[test]
fn same_seed_same_batch() {
    let (g, _) = fitted(NuggetMode::Estimate, 1);
    let a = sample_linked(&g, &[0.4, 1.3], 10_000, 42, None, true).unwrap();
    let b = sample_linked(&g, &[0.4, 1.3], 10_000, 42, None, true).unwrap();
    assert_eq!(a, b);
    let c = sample_linked(&g, &[0.4, 1.3], 10_000, 43, None, false).unwrap();
    assert_ne!(a.samples, c.samples);
    assert_eq!(a.intermediates.as_ref().unwrap()[&3], a.samples);
    assert_eq!(a.seed, 42);
    assert_eq!(a.node, 3);
}

#[test]
fn thread_count_does_not_matter() {
    let (g, _) = fitted(NuggetMode::Estimate, 2);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_linked(&g, &[1.1, 0.6], 20_000, 7, None, false).unwrap())
    };
    assert_eq!(run(1).samples, run(4).samples);
}

#[test]
fn prefix_of_a_larger_batch() {
    let (g, _) = fitted(NuggetMode::Estimate, 3);
    let small = sample_linked(&g, &[0.9, 0.9], 5_000, 1, None, false).unwrap();
    let big = sample_linked(&g, &[0.9, 0.9], 9_000, 1, None, false).unwrap();
    assert_eq!(small.samples[..], big.samples[..5_000]);
}

#[test]
fn certain_chain_reproduces_training_outputs() {
    let (g, xs) = fitted(NuggetMode::Fixed(0.0), 4);
    for x in xs.iter().take(3) {
        let b = sample_linked(&g, x, 200, 0, None, false).unwrap();
        let y = g.true_outputs(x).unwrap()[&3];
        let scale = g.emulator(3).unwrap().sigma2().sqrt();
        for s in &b.samples {
            assert!((s - y).abs() < 1e-6 * scale, "{s} vs {y}");
        }
    }
}

#[test]
fn csv_export_is_long_format() {
    let (g, _) = fitted(NuggetMode::Estimate, 5);
    let b = sample_linked(&g, &[0.2, 0.2], 4, 0, None, true).unwrap();
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sample,node,value");
    assert_eq!(lines.len(), 1 + 3 * 4);
    assert!(lines[1].starts_with("0,1,"));
}

#[test]
fn bad_requests_are_rejected() {
    let (g, _) = fitted(NuggetMode::Estimate, 6);
    assert!(sample_linked(&g, &[0.2, 0.2], 0, 0, None, false).is_err());
    assert!(sample_linked(&g, &[0.2], 10, 0, None, false).is_err());
    assert!(sample_linked(&g, &[0.2, 0.2], 10, 0, Some(99), false).is_err());
}

#[test]
fn emulator_sampling_with_point_inputs_matches_prediction() {
    let (g, _) = fitted(NuggetMode::Estimate, 7);
    let e = g.emulator(3).unwrap();
    let w = NormalVector::new(DVector::from_vec(vec![31.0, 4.2]), DMatrix::zeros(2, 2)).unwrap();
    let s = sample_emulator(e, &w, &[], 200_000, 9).unwrap();
    let m = mc_moments(&s).unwrap();
    let p = e.predict(&[31.0, 4.2]).unwrap();
    assert!((m.mean - p.mean).abs() < 4.0 * m.se_mean);
    assert!((m.var - p.var).abs() < 4.0 * m.se_var);
}
