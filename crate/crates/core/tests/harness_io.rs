use std::path::{Path, PathBuf};

use esce::env::EnvConfig;
use esce::harness::{
    self, compare, emit_chart, oracle_dump, read_log, seed_dir, ExperimentConfig, Mode, CHECKPOINT_FILE,
    CONFIG_FILE, EPISODES_FILE, METRICS_FILE, TIMING_FILE,
};
use esce::Error;

fn small(mode: Mode, out: &Path) -> ExperimentConfig {
    let mut config = ExperimentConfig {
        mode,
        seeds: vec![0, 1],
        outer_iterations: 3,
        max_steps_per_iteration: 1500,
        stop_on_convergence: false,
        output_dir: out.to_path_buf(),
        env: EnvConfig::grid(4, 4),
        ..ExperimentConfig::default()
    };
    config.pools.capacity = 200;
    config.agent.workers = 1;
    config
}

fn finished(mode: Mode) -> (tempfile::TempDir, ExperimentConfig) {
    let dir = tempfile::tempdir().unwrap();
    let config = small(mode, dir.path());
    harness::run(&config).unwrap();
    (dir, config)
}

#[test]
fn run_writes_every_file_and_the_mix_matches_the_mode() {
    for mode in [Mode::Baseline, Mode::Semi, Mode::Full] {
        let (dir, config) = finished(mode);
        assert!(dir.path().join(CONFIG_FILE).exists());
        assert_eq!(ExperimentConfig::load(&dir.path().join(CONFIG_FILE)).unwrap(), config);
        let mix = mode.mix();
        for &seed in &config.seeds {
            let sd = seed_dir(dir.path(), seed);
            for f in [METRICS_FILE, TIMING_FILE, EPISODES_FILE, CHECKPOINT_FILE] {
                assert!(sd.join(f).exists(), "{mode} seed {seed}: missing {f}");
            }
            let log = read_log(&sd.join(METRICS_FILE)).unwrap();
            assert_eq!(log.len(), config.outer_iterations);
            for (i, r) in log.iter().enumerate() {
                assert_eq!(r.outer_iteration, i + 1);
                assert_eq!((r.alpha, r.beta), (mix.alpha, mix.beta));
                assert!(r.max_calibrated_per_round <= 1);
            }
            for w in log.windows(2) {
                assert!(w[1].episodes >= w[0].episodes);
                assert!(w[1].steps >= w[0].steps);
            }
            let timing = std::fs::read_to_string(sd.join(TIMING_FILE)).unwrap();
            assert_eq!(timing.lines().count(), config.outer_iterations);
        }
    }
}

#[test]
fn compare_tables_two_runs_and_rejects_bad_input() {
    let (a, _) = finished(Mode::Baseline);
    let (b, _) = finished(Mode::Full);
    let out = tempfile::tempdir().unwrap();
    let runs = vec![a.path().to_path_buf(), b.path().to_path_buf()];
    let table = compare(&runs, "window_mean", out.path()).unwrap();
    assert_eq!(table.runs.len(), 2);
    assert!(out.path().join("compare.tsv").exists());
    assert!(out.path().join("compare.svg").exists());
    for row in &table.rows {
        assert_eq!(row.seeds, 2);
        assert!(row.low <= row.mean && row.mean <= row.high);
    }
    assert!(table.rows.iter().filter(|r| r.run == table.runs[0]).all(|r| r.diff_vs_first == Some(0.0)));

    assert!(matches!(compare(&runs, "nonsense", out.path()), Err(Error::UnknownMetric { .. })));
    assert!(compare(&runs[..1], "window_mean", out.path()).is_err());

    let chain = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        env: EnvConfig::chain(6, 2),
        ..small(Mode::Baseline, chain.path())
    };
    harness::run(&ExperimentConfig { outer_iterations: 1, seeds: vec![0], ..config }).unwrap();
    let mixed = vec![a.path().to_path_buf(), chain.path().to_path_buf()];
    assert!(matches!(compare(&mixed, "window_mean", out.path()), Err(Error::Incompatible(_))));
}

#[test]
fn chart_from_logs() {
    let (dir, _) = finished(Mode::Full);
    let logs: Vec<PathBuf> = [0, 1].iter().map(|&s| seed_dir(dir.path(), s).join(METRICS_FILE)).collect();
    let out = dir.path().join("pr.svg");
    emit_chart(&logs, &["precision_pos".into(), "recall_pos".into()], &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("mean precision_pos"));

    assert!(matches!(emit_chart(&logs, &["bogus".into()], &out), Err(Error::UnknownMetric { .. })));
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(emit_chart(&[empty], &["window_mean".into()], &out), Err(Error::EmptyLog)));
}

#[test]
fn oracle_dump_reads_checkpoints() {
    let (dir, config) = finished(Mode::Full);
    let uniform = oracle_dump(&config, None, 1e-6).unwrap();
    assert!(!uniform.is_empty());
    assert!(uniform.iter().all(|r| r.esce_prob.is_none() && (0.0..=1.0).contains(&r.success_prob)));

    let ckpt = seed_dir(dir.path(), 0).join(CHECKPOINT_FILE);
    let rows = oracle_dump(&config, Some(&ckpt), 1e-6).unwrap();
    assert_eq!(rows.len(), uniform.len());
    assert!(rows.iter().all(|r| r.esce_prob.is_some_and(|p| (0.0..=1.0).contains(&p))));

    let other = ExperimentConfig {
        env: EnvConfig::chain(6, 2),
        ..config
    };
    assert!(matches!(oracle_dump(&other, Some(&ckpt), 1e-6), Err(Error::Incompatible(_))));
}
