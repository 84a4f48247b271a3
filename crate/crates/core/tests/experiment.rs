use linked_gp::design::{grid, maximin_lhd, nrmsep, nrmsep_pooled};
use linked_gp::emulator::FitConfig;
use linked_gp::experiment::{run_experiment, ExperimentConfig, ExperimentKind};
use linked_gp::graph::SystemGraph;
use linked_gp::systems::two_layer_system;
use linked_gp::KernelKind;

fn small(kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        replications: 2,
        test_grid: 6,
        lhd_iterations: 300,
        grid_per_dim: 10,
        adaptive_runs: 2,
        mc_samples: 50,
        seed: 11,
        ..ExperimentConfig::new(kind)
    }
}

fn csv_of(c: &ExperimentConfig) -> String {
    let out = run_experiment(c).unwrap();
    let mut buf = Vec::new();
    out.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn two_layer_smoke_reports_both_emulators() {
    let c = ExperimentConfig {
        replications: 1,
        sizes: Some(vec![10]),
        ..small(ExperimentKind::TwoLayerAccuracy)
    };
    let out = run_experiment(&c).unwrap();
    assert_eq!(out.summary.failed, 0);
    let methods: Vec<&str> = out.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["linked", "composite"]);
    assert!(out.rows.iter().all(|r| r.metric == "nrmsep" && r.value > 0.0));
    assert!(out.summary.get(10, "linked", "nrmsep_pooled").is_some());
}

#[test]
fn results_match_direct_library_calls() {
    let c = ExperimentConfig {
        sizes: Some(vec![8]),
        ..small(ExperimentKind::TwoLayerAccuracy)
    };
    let out = run_experiment(&c).unwrap();

    let base = two_layer_system();
    let xs = grid(base.global_bounds(), c.test_grid);
    let truth: Vec<f64> = xs.iter().map(|x| base.true_outputs(x).unwrap()[&3]).collect();
    let mut preds = Vec::new();
    for t in 0..c.replications {
        let seed = c.seed + t as u64;
        let fit = FitConfig::new(KernelKind::Matern25, Default::default());
        let nodes = base.nodes().map(|n| n.clone().with_fit(fit.clone())).collect();
        let mut g = SystemGraph::new(base.global_bounds().to_vec(), nodes).unwrap();
        let d = maximin_lhd(8, g.global_bounds(), seed, c.lhd_iterations).unwrap();
        let data = g.collect_runs(d.points()).unwrap();
        g.fit_all(&data, seed).unwrap();
        let p: Vec<f64> = xs.iter().map(|x| g.propagate(x).unwrap().output(3).unwrap().mu).collect();
        let row = out
            .rows
            .iter()
            .find(|r| r.replication == t && r.method == "linked")
            .unwrap();
        assert_eq!(row.value, nrmsep(&truth, &p).unwrap());
        preds.push(p);
    }
    assert_eq!(
        out.summary.get(8, "linked", "nrmsep_pooled").unwrap(),
        nrmsep_pooled(&truth, &preds).unwrap()
    );
}

#[test]
fn kernel_comparison_keeps_every_design() {
    let c = ExperimentConfig {
        replications: 3,
        sizes: Some(vec![10]),
        ..small(ExperimentKind::KernelComparison)
    };
    let out = run_experiment(&c).unwrap();
    assert_eq!(out.rows.len(), 3 * 2);
    for k in ["squared_exponential", "matern25"] {
        assert_eq!(out.rows.iter().filter(|r| r.method == k).count(), 3);
        assert!(out.summary.get(10, k, "nrmsep_max_over_median").unwrap() >= 1.0);
        assert!(out.summary.get(10, k, "nrmsep_pooled").is_none());
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    for kind in [ExperimentKind::TwoLayerAccuracy, ExperimentKind::ThreeLayerChain] {
        let c = ExperimentConfig {
            sizes: Some(vec![8]),
            ..small(kind)
        };
        let a = csv_of(&c);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = one.install(|| csv_of(&c));
        assert_eq!(a, b, "{kind}");
        assert!(a.starts_with("experiment,replication,size,method,metric,input,value\n"));
    }
}

#[test]
fn adaptive_experiment_accounts_for_runs() {
    let out = run_experiment(&small(ExperimentKind::AdaptiveVsSequential)).unwrap();
    assert_eq!(out.summary.failed, 0);
    for t in 0..2 {
        let v = |method: &str, metric: &str| {
            out.rows
                .iter()
                .find(|r| r.replication == t && r.method == method && r.metric == metric)
                .unwrap()
                .value
        };
        assert_eq!(v("adaptive", "total_runs"), 7.0 * 3.0 + 2.0);
        assert_eq!(v("sequential", "total_runs"), 30.0);
        let spent: f64 = (1..=3).map(|id| v("adaptive", &format!("runs_node_{id}"))).sum();
        assert_eq!(spent, 2.0);
    }
    let wins = out.summary.get(10, "adaptive", "wins").unwrap();
    assert!((0.0..=2.0).contains(&wins));
}

#[test]
fn independent_design_reports_ratios_along_the_grid() {
    let c = ExperimentConfig {
        replications: 1,
        ..small(ExperimentKind::IndependentDesign)
    };
    let out = run_experiment(&c).unwrap();
    for m in ["ratio_1", "ratio_2"] {
        assert_eq!(out.rows.iter().filter(|r| r.metric == m).count(), 36);
        assert!(out.summary.get(10, "sequential", &format!("{m}_share_above_100")).is_some());
    }
    assert!(out.summary.get(10, "independent", "nrmsep_median").is_some());
}

#[test]
fn chain_rows_carry_inputs() {
    let c = ExperimentConfig {
        replications: 1,
        ..small(ExperimentKind::ThreeLayerChain)
    };
    let out = run_experiment(&c).unwrap();
    assert!(out.rows.iter().all(|r| r.input.is_some()));
    let share = out.summary.get(8, "linked", "share_mean_within_3se").unwrap();
    assert!((0.0..=1.0).contains(&share));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small(ExperimentKind::TwoLayerAccuracy);
    c.replications = 0;
    assert!(run_experiment(&c).is_err());
    let mut c = small(ExperimentKind::TwoLayerAccuracy);
    c.sizes = Some(vec![5]);
    assert!(run_experiment(&c).unwrap_err().to_string().contains("must exceed"));
    let mut c = small(ExperimentKind::KernelComparison);
    c.kernels.clear();
    assert!(run_experiment(&c).is_err());
    assert!("nonsense".parse::<ExperimentKind>().is_err());
}

#[test]
fn config_files_fill_in_defaults() {
    let c: ExperimentConfig = serde_json::from_str(r#"{"experiment": "kernel_comparison", "replications": 4}"#).unwrap();
    assert_eq!(c.experiment, ExperimentKind::KernelComparison);
    assert_eq!(c.replications, 4);
    assert_eq!(c.test_grid, 25);
    assert_eq!(c.sizes(), vec![10, 15, 20, 25, 30, 35, 40, 45, 50]);
    let p = c.clone().full_scale();
    assert_eq!((p.replications, p.test_grid), (100, 50));
}
