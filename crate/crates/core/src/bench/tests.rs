use super::*;
use crate::error::Error;
use tempfile::tempdir;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.grid_side = 8;
    cfg.projections = vec![1, 2];
    cfg.methods = vec![GuidanceMethod::Dps, GuidanceMethod::Exact];
    cfg.num_samples = 24;
    cfg.num_noise_scales = 12;
    cfg.sigma_min = 0.05;
    cfg.prior.template_count = 2;
    cfg.prior.jitter = 1e-2;
    cfg.prior.phantom_seed = 5;
    cfg.master_seed = 11;
    cfg.mmd_permutations = 20;
    cfg
}

#[test]
fn default_config_is_valid_and_round_trips() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.grid_side, 32);
    assert_eq!(cfg.projections, vec![1, 3, 6, 12, 18, 30, 90, 180]);
    assert_eq!(cfg.methods.len(), 4);
    assert_eq!(cfg.num_samples, 2000);
    assert_eq!(cfg.num_noise_scales, 100);

    let json = serde_json::to_string(&cfg).unwrap();
    let back = ExperimentConfig::from_json(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);

    // Empty object selects all defaults.
    let empty = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(empty.master_seed, cfg.master_seed);
}

#[test]
fn config_validation_rejects_bad_inputs() {
    let reject = |mutate: &dyn Fn(&mut ExperimentConfig)| {
        let mut cfg = small_config();
        mutate(&mut cfg);
        assert!(
            matches!(cfg.validate(), Err(Error::Config(_))),
            "expected config rejection"
        );
    };
    reject(&|c| c.projections = vec![3, 1]);
    reject(&|c| c.projections = vec![2, 2]);
    reject(&|c| c.projections = vec![0, 1]);
    reject(&|c| c.projections.clear());
    reject(&|c| c.methods.clear());
    reject(&|c| c.methods = vec![GuidanceMethod::Dps, GuidanceMethod::Dps]);
    reject(&|c| c.num_samples = 1);
    reject(&|c| c.num_noise_scales = 1);
    reject(&|c| c.sigma_min = 0.0);
    reject(&|c| c.sigma_max = Some(0.01));
    reject(&|c| c.prior.jitter = 0.0);
    reject(&|c| c.prior.template_count = 0);
    reject(&|c| {
        c.alpha_scales.insert("dsp".to_string(), 1.0);
    });
    reject(&|c| {
        c.alpha_scales.insert("dps".to_string(), 0.0);
    });
    reject(&|c| c.pig_solver_cap = 0);
    reject(&|c| c.mmd_permutations = 0);

    // Unknown fields in a config file are typos, not extensions.
    assert!(matches!(
        ExperimentConfig::from_json(r#"{"grid_size": 8}"#),
        Err(Error::Config(_))
    ));
}

#[test]
fn derive_seed_is_deterministic_and_tag_sensitive() {
    assert_eq!(derive_seed(7, "prior-samples"), derive_seed(7, "prior-samples"));
    assert_ne!(derive_seed(7, "prior-samples"), derive_seed(8, "prior-samples"));
    assert_ne!(derive_seed(7, "prior-samples"), derive_seed(7, "measurements"));
    assert_ne!(derive_seed(7, "chains-dps-1"), derive_seed(7, "chains-dps-2"));
}

#[test]
fn chain_seeds_are_distinct_across_indices() {
    let cell = derive_seed(3, "chains-mcg-6");
    let seeds: Vec<u64> = (0..64).map(|i| chain_seed(cell, i)).collect();
    let mut dedup = seeds.clone();
    dedup.sort_unstable();
    dedup.dedup();
    assert_eq!(dedup.len(), seeds.len());
}

#[test]
fn run_id_depends_on_config_content() {
    let cfg = small_config();
    assert_eq!(run_id(&cfg), run_id(&cfg));
    let mut other = cfg.clone();
    other.master_seed += 1;
    assert_ne!(run_id(&cfg), run_id(&other));
}

#[test]
fn run_benchmark_produces_reports_and_artifacts() {
    let cfg = small_config();
    let dir = tempdir().unwrap();
    let out = run_benchmark(&cfg, dir.path()).unwrap();

    // One row per (p, method) cell, in configured order.
    assert_eq!(out.reports.len(), 4);
    let keys: Vec<(usize, &str)> =
        out.reports.iter().map(|r| (r.p, r.method.as_str())).collect();
    assert_eq!(keys, vec![(1, "dps"), (1, "exact"), (2, "dps"), (2, "exact")]);

    for r in &out.reports {
        assert_eq!(r.status, "ok", "cell {}/{} failed: {}", r.method, r.p, r.status);
        assert_eq!(r.n, 24);
        for v in [r.nmc, r.pps_mmd, r.pps_mmd_null95, r.pps_fd] {
            assert!(v.unwrap().is_finite());
        }
        assert!(r.runtime_s >= 0.0);
    }

    // The exact sampler draws from the true posterior, so its residual
    // power should sit near the noise level even at this tiny cell size.
    for r in out.reports.iter().filter(|r| r.method == "exact") {
        let v = r.nmc.unwrap();
        assert!((0.5..1.5).contains(&v), "exact NMC {v} at p={}", r.p);
    }

    let run_dir = &out.run_dir;
    let csv = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with(CSV_HEADER));
    assert!(run_dir.join("report.json").exists());
    for key in ["dps_1", "exact_1", "dps_2", "exact_2"] {
        let path = run_dir.join(format!("samples/{key}.bin"));
        let (header, data) = crate::io::read_tensor(&path).unwrap();
        assert_eq!(header.shape, vec![24, 64]);
        assert_eq!(data.len(), 24 * 64);
    }

    let manifest_text = std::fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    let manifest: Manifest = serde_json::from_str(&manifest_text).unwrap();
    assert_eq!(manifest.run_id, run_id(&cfg));
    assert!(manifest.sigma_y > 0.0);
    assert!(manifest.seeds.contains_key("prior-samples"));
    assert!(manifest.seeds.contains_key("chains-dps-2"));
    assert!(manifest.seeds.contains_key("mmd-exact-1"));
    assert_eq!(manifest.cells.len(), 4);
    assert!(!manifest.observations.is_empty());
}

#[test]
fn run_benchmark_is_deterministic_modulo_runtime() {
    let cfg = small_config();
    let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
    let a = run_benchmark(&cfg, d1.path()).unwrap();
    let b = run_benchmark(&cfg, d2.path()).unwrap();
    let strip = |reports: &[EvalReport]| -> Vec<String> {
        reports.iter().map(|r| r.csv_row_without_runtime()).collect()
    };
    assert_eq!(strip(&a.reports), strip(&b.reports));
    assert_eq!(a.manifest.seeds, b.manifest.seeds);
    assert_eq!(a.manifest.observations, b.manifest.observations);

    let bytes = |dir: &std::path::Path, name: &str| std::fs::read(dir.join(name)).unwrap();
    assert_eq!(
        bytes(&a.run_dir, "samples/exact_2.bin"),
        bytes(&b.run_dir, "samples/exact_2.bin")
    );
}

#[test]
fn pig_cells_above_the_solver_cap_are_skipped() {
    let mut cfg = small_config();
    cfg.methods = vec![GuidanceMethod::Pig];
    cfg.projections = vec![1];
    // m_p = 13 at side 8; a cap below that forces the skip path.
    cfg.pig_solver_cap = 10;
    let dir = tempdir().unwrap();
    let out = run_benchmark(&cfg, dir.path()).unwrap();
    assert_eq!(out.reports.len(), 1);
    let r = &out.reports[0];
    assert_eq!(r.status, "skipped");
    assert!(r.nmc.is_none() && r.pps_mmd.is_none() && r.pps_fd.is_none());
    assert!(!out.run_dir.join("samples/pig_1.bin").exists());

    // Skipped metric fields serialize as empty CSV cells.
    let csv = std::fs::read_to_string(out.run_dir.join("report.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("pig,1,24,,,,"));
}

#[test]
fn sweep_alpha_rejects_unsupported_inputs() {
    let cfg = small_config();
    let dir = tempdir().unwrap();
    for method in [GuidanceMethod::Exact, GuidanceMethod::Pig, GuidanceMethod::None] {
        let err = sweep_alpha(&cfg, dir.path(), method, 2, &[1.0], Some(8)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
    let err = sweep_alpha(&cfg, dir.path(), GuidanceMethod::Dps, 2, &[], Some(8)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    let err =
        sweep_alpha(&cfg, dir.path(), GuidanceMethod::Dps, 2, &[-1.0], Some(8)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    let err =
        sweep_alpha(&cfg, dir.path(), GuidanceMethod::Dps, 0, &[1.0], Some(8)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn sweep_alpha_single_point_matches_the_benchmark_cell() {
    let cfg = small_config();
    let dir = tempdir().unwrap();
    let bench = run_benchmark(&cfg, dir.path()).unwrap();
    let cell = bench
        .reports
        .iter()
        .find(|r| r.method == "dps" && r.p == 2)
        .unwrap();

    let sweep = sweep_alpha(
        &cfg,
        dir.path(),
        GuidanceMethod::Dps,
        2,
        &[1.0],
        Some(cfg.num_samples),
    )
    .unwrap();
    assert_eq!(sweep.rows.len(), 1);
    let row = &sweep.rows[0];
    assert_eq!(row.nmc, cell.nmc);
    assert_eq!(row.pps_mmd, cell.pps_mmd);
    assert_eq!(row.pps_fd, cell.pps_fd);
    assert!(sweep.run_dir.join("sweep_dps_2.csv").exists());
    assert!(sweep.run_dir.join("sweep_dps_2.json").exists());
}

#[test]
fn sweep_alpha_sorts_rows_by_distance_to_unit_nmc() {
    let cfg = small_config();
    let dir = tempdir().unwrap();
    let sweep = sweep_alpha(
        &cfg,
        dir.path(),
        GuidanceMethod::Dps,
        2,
        &[0.0, 0.3, 1.0],
        Some(12),
    )
    .unwrap();
    assert_eq!(sweep.rows.len(), 3);
    let dist: Vec<f64> = sweep
        .rows
        .iter()
        .map(|r| (r.nmc.unwrap() - 1.0).abs())
        .collect();
    assert!(dist.windows(2).all(|w| w[0] <= w[1]), "distances {dist:?}");
    // With guidance off the chain ignores the sinogram entirely, so the
    // zero row cannot be the best tracker of NMC = 1.
    assert_ne!(sweep.rows[0].alpha_scale, 0.0);
}

#[test]
fn export_histograms_writes_curves_and_sidecar() {
    let cfg = small_config();
    let dir = tempdir().unwrap();
    let out = export_histograms(
        &cfg,
        dir.path(),
        GuidanceMethod::Exact,
        2,
        &[0, 27],
        60,
    )
    .unwrap();
    assert_eq!(out.reports.len(), 2);
    for r in &out.reports {
        assert!(r.wasserstein1.is_finite() && r.wasserstein1 >= 0.0);
        assert!(r.marginal_std > 0.0);
        let hist = std::fs::read_to_string(out.run_dir.join(&r.histogram_csv)).unwrap();
        assert_eq!(hist.lines().count(), HISTOGRAM_BINS + 1);
        assert!(hist.starts_with("bin_lo,bin_hi,mass"));
        let oracle = std::fs::read_to_string(out.run_dir.join(&r.oracle_csv)).unwrap();
        assert!(oracle.starts_with("x,density"));
        assert!(oracle.lines().count() > 100);
    }
    assert!(out.run_dir.join("exact_p2_summary.json").exists());
}

#[test]
fn export_histograms_rejects_bad_pixel_lists() {
    let cfg = small_config();
    let dir = tempdir().unwrap();
    let err =
        export_histograms(&cfg, dir.path(), GuidanceMethod::Dps, 2, &[], 40).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    let err = export_histograms(&cfg, dir.path(), GuidanceMethod::Dps, 2, &[64], 40)
        .unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
    let err =
        export_histograms(&cfg, dir.path(), GuidanceMethod::Dps, 2, &[0], 1).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn reference_samples_are_prefix_stable_in_cell_size() {
    let cfg = small_config();
    let big = RunContext::new(&cfg, 24).unwrap();
    let small = RunContext::new(&cfg, 8).unwrap();
    assert_eq!(big.noise.sigma_y, small.noise.sigma_y);
    for i in 0..8 {
        assert_eq!(big.reference[i], small.reference[i]);
    }
    let (_, sinos_big) = big.measurements(2).unwrap();
    let (_, sinos_small) = small.measurements(2).unwrap();
    for i in 0..8 {
        assert_eq!(sinos_big[i], sinos_small[i]);
    }
}
