use std::fs;
use std::path::Path;

use mot_core::artifact::{read_trajectory_file, verify_manifest, RunArtifact, CSV_HEADER};
use mot_core::experiments::{
    ablation_csv, init_mot, prepare_seed, run_ablation_schedule, run_comparison, seed_dir, CHECK_NAMES,
};
use mot_core::trainer::train;
use mot_core::{ExperimentConfig, ModelState, StageSchedule};

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        num_classes: 2,
        dim: 8,
        num_tokens: 4,
        samples_per_type: 2,
        num_experts: 3,
        probe_samples_per_type: 1,
        histogram_trials: 2,
        seeds: vec![0, 1],
        schedule: StageSchedule {
            t1: 4,
            t2: 8,
            t_total: 12,
            ..StageSchedule::default()
        },
        ..ExperimentConfig::default()
    }
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for (file, _) in verify_manifest(root).unwrap() {
        if file.extension().is_some_and(|e| e == "csv") {
            out.push((file.display().to_string(), fs::read(root.join(&file)).unwrap()));
        }
    }
    out
}

#[test]
fn comparison_writes_a_verified_reproducible_bundle() {
    let cfg = tiny_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let bundle = run_comparison(&cfg, a.path()).unwrap();
    run_comparison(&cfg, b.path()).unwrap();

    assert_eq!(bundle.seeds.len(), 2);
    assert!(bundle.seeds.iter().all(|s| s.outcome().is_some()));
    let rates = bundle.pass_rates();
    assert_eq!(rates.len(), CHECK_NAMES.len());
    assert!(rates.iter().all(|&(_, passed, total)| total == 2 && passed <= 2));

    let first = csv_files(a.path());
    assert!(first.len() >= 2 * 9);
    assert_eq!(first, csv_files(b.path()));

    for seed in [0u64, 1] {
        let dir = a.path().join(seed_dir(seed));
        for arch in ["mot", "multihead", "moe-ffn"] {
            let rows = read_trajectory_file(&dir.join(format!("{arch}.csv"))).unwrap();
            assert_eq!(rows.len(), cfg.schedule.t_total);
            assert!(rows.iter().all(|r| r.routed_counts.len() == cfg.num_experts));
            assert_eq!(rows.iter().all(|r| r.router_loss.is_none()), arch == "multihead");
        }
        let text = fs::read_to_string(dir.join("mot.csv")).unwrap();
        assert!(text.starts_with(CSV_HEADER));
    }
}

#[test]
fn all_architectures_share_one_corpus_per_seed() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_comparison(&cfg, dir.path()).unwrap();
    for status in &bundle.seeds {
        let outcome = status.outcome().unwrap();
        let data = prepare_seed(&cfg, outcome.seed).unwrap();
        assert_eq!(outcome.corpus_checksum, data.corpus.checksum());
        let artifact = RunArtifact::load(&dir.path().join(seed_dir(outcome.seed)).join("artifact.json")).unwrap();
        assert_eq!(artifact.corpus.checksum(), data.corpus.checksum());
        for arch in ["mot", "multihead", "moe-ffn"] {
            assert!(artifact.checkpoints.iter().any(|c| c.arch == arch && c.epoch == cfg.schedule.t_total));
        }
        let restored: ModelState = artifact.checkpoint("mot", cfg.schedule.t_total).unwrap().unwrap();
        assert_eq!(restored, outcome.mot.model);
    }
    assert_ne!(
        prepare_seed(&cfg, 0).unwrap().corpus.checksum(),
        prepare_seed(&cfg, 1).unwrap().corpus.checksum()
    );
}

#[test]
fn single_point_ablation_reproduces_the_base_run() {
    let mut cfg = tiny_config();
    cfg.seeds = vec![3];
    let sch = cfg.schedule.clone();
    let points = run_ablation_schedule(&cfg, &[sch.t1], &[sch.t2]).unwrap();
    assert_eq!(points.len(), 1);
    let data = prepare_seed(&cfg, 3).unwrap();
    let base = train(init_mot(&cfg, 3).unwrap(), &data.corpus, &sch, 3).unwrap();
    assert_eq!(points[0].final_loss.to_bits(), base.final_loss().to_bits());
    assert_eq!(points[0].t_total, sch.t_total);
    assert!(ablation_csv(&points).starts_with("seed,t1,t2,t_total,final_loss"));
}

#[test]
fn ablation_keeps_the_stage_three_length() {
    let mut cfg = tiny_config();
    cfg.seeds = vec![0];
    let points = run_ablation_schedule(&cfg, &[1, 2], &[6]).unwrap();
    assert_eq!(points.len(), 2);
    assert!(points.iter().all(|p| p.t_total == 6 + 4));
    assert!(run_ablation_schedule(&cfg, &[], &[6]).is_err());
    assert!(run_ablation_schedule(&cfg, &[7], &[6]).is_err());
}

#[test]
fn config_files_round_trip_and_name_bad_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.cfg");
    fs::write(&path, tiny_config().to_text()).unwrap();
    let loaded = ExperimentConfig::load(&path).unwrap();
    assert_eq!(loaded.to_text(), tiny_config().to_text());

    let err = ExperimentConfig::parse("t1 = 900\n").unwrap_err().to_string();
    assert!(err.contains("t2"), "{err}");
    let err = ExperimentConfig::parse("colour = red\n").unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
    assert!(ExperimentConfig::load(&dir.path().join("absent.cfg")).is_err());
}
