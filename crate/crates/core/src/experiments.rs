//! Canned recipes: the three-architecture comparison on a shared corpus and
//! the stage-length ablation grid.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::artifact::{fmt_float, table_csv, trajectory_csv, write_file, write_manifest, RunArtifact, SeedRecord};
use crate::baselines::{train_moe_ffn, train_multihead, MoeFfnParams, MultiHeadParams};
use crate::config::ExperimentConfig;
use crate::datagen::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{
    attention_probe, fit_convergence_rate, mass_on_sets, projection_dominance, routing_histogram,
    signal_projection_probe, specialization_report, AttentionProbeRow, RateFit, SpecializationReport,
};
use crate::model::ModelState;
use crate::plot::{heatmap, line_chart, Series};
use crate::rng::{stream, Stream};
use crate::signal_space::SignalDictionary;
use crate::trainer::{train, Stage, StageSchedule, TrainRecord, Trajectory};

/// Pass thresholds for the per-seed checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub margin_growth: f64,
    pub routing_mass: f64,
    pub within_set_ratio: f64,
    pub pvv_min: f64,
    /// Other probed scores must not exceed this multiple of `1/L`.
    pub other_score_factor: f64,
    pub stage3_r_squared: f64,
    pub final_loss: f64,
    pub projection_dominance: f64,
    pub slope_ratio: f64,
    pub floor_factor: f64,
    pub theta_sum: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            margin_growth: 3.0,
            routing_mass: 0.9,
            within_set_ratio: 2.0,
            pvv_min: 0.5,
            other_score_factor: 2.0,
            stage3_r_squared: 0.95,
            final_loss: 0.05,
            projection_dominance: 10.0,
            slope_ratio: 3.0,
            floor_factor: 2.0,
            theta_sum: 1e-7,
        }
    }
}

/// Dictionary, training corpus and held-out probe corpus of one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub corpus: Corpus,
    pub probe: Corpus,
}

impl SeedData {
    pub fn dictionary(&self) -> &SignalDictionary {
        &self.corpus.dictionary
    }
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let dict = SignalDictionary::build(cfg.dim, cfg.num_classes, &mut stream(seed, Stream::Dictionary))?;
    let corpus = Corpus::build(&dict, cfg.num_tokens, cfg.noise_std, cfg.samples_per_type, seed)?;
    let probe = Corpus::build_with_stream(
        &dict,
        cfg.num_tokens,
        cfg.noise_std,
        cfg.probe_samples_per_type,
        seed,
        Stream::ProbeCorpus,
    )?;
    Ok(SeedData { seed, corpus, probe })
}

pub fn init_mot(cfg: &ExperimentConfig, seed: u64) -> Result<ModelState> {
    ModelState::init(cfg.dim, cfg.num_experts, cfg.init_std, &mut stream(seed, Stream::MotInit))
}

pub fn init_multihead(cfg: &ExperimentConfig, seed: u64) -> Result<MultiHeadParams> {
    MultiHeadParams::init(cfg.dim, cfg.num_heads(), cfg.init_std, &mut stream(seed, Stream::MultiHeadInit))
}

pub fn init_moe_ffn(cfg: &ExperimentConfig, seed: u64) -> Result<MoeFfnParams> {
    MoeFfnParams::init(cfg.dim, cfg.num_experts, cfg.init_std, &mut stream(seed, Stream::MoeFfnInit))
}

/// Routing and specialization after Stage I.
#[derive(Debug, Clone, Serialize)]
pub struct StageOneAnalysis {
    pub initial_mean_margin: f64,
    pub report: SpecializationReport,
    /// `N × M` routing frequencies by class.
    #[serde(skip)]
    pub routing: Array2<f64>,
    pub mass_on_sets: Vec<f64>,
    /// Max/min routing frequency inside each class's specialization set;
    /// infinite when some member is never chosen, NaN for an empty set.
    pub within_set_ratio: Vec<f64>,
}

impl StageOneAnalysis {
    pub fn margin_growth(&self) -> f64 {
        self.report.mean_margin() / self.initial_mean_margin
    }

    pub fn min_mass(&self) -> f64 {
        self.mass_on_sets.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_within_ratio(&self) -> f64 {
        self.within_set_ratio
            .iter()
            .map(|r| if r.is_nan() { f64::INFINITY } else { *r })
            .fold(0.0, f64::max)
    }
}

pub fn analyze_stage_one(
    cfg: &ExperimentConfig,
    data: &SeedData,
    initial: &ModelState,
    after_t1: &ModelState,
) -> Result<StageOneAnalysis> {
    let dict = data.dictionary();
    let report = specialization_report(after_t1, dict);
    let routing = routing_histogram(
        after_t1,
        &data.corpus,
        cfg.histogram_trials,
        cfg.schedule.noise_scale(Stage::I),
        &mut stream(data.seed, Stream::Histogram),
    )?;
    let within_set_ratio = report
        .sets
        .iter()
        .enumerate()
        .map(|(n, set)| {
            if set.is_empty() {
                return f64::NAN;
            }
            let freqs: Vec<f64> = set.iter().map(|&i| routing[(n, i)]).collect();
            let max = freqs.iter().cloned().fold(0.0, f64::max);
            let min = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(StageOneAnalysis {
        initial_mean_margin: specialization_report(initial, dict).mean_margin(),
        mass_on_sets: mass_on_sets(&routing, &report),
        report,
        routing,
        within_set_ratio,
    })
}

fn active_experts(record: &TrainRecord) -> Vec<usize> {
    record
        .routed_counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .map(|(i, _)| i)
        .collect()
}

/// Name, pass flag and the measured value behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
}

pub const CHECK_NAMES: [&str; 11] = [
    "margin_growth",
    "routing_concentration",
    "class_coverage",
    "attention_concentration",
    "stage3_linear_fit",
    "final_loss",
    "projection_dominance",
    "rate_separation",
    "loss_ordering",
    "moe_ffn_floor",
    "router_conservation",
];

/// Everything measured on one seed of the comparison.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub corpus_checksum: String,
    pub mot: Trajectory,
    pub multihead: Trajectory<MultiHeadParams>,
    pub moe_ffn: Trajectory<MoeFfnParams>,
    pub stage_one: StageOneAnalysis,
    /// Probe rows at `t2` for experts routed samples in epoch `t2`.
    pub attention_t2: Vec<AttentionProbeRow>,
    /// `M × 2N` projections of the final model.
    pub projection: Array2<f64>,
    /// Dominance ratio of each expert routed samples in the final epoch.
    pub dominance: Vec<(usize, f64)>,
    pub rates: [(&'static str, RateFit); 3],
    pub moe_ffn_floor: f64,
    pub checks: Vec<Check>,
}

impl SeedOutcome {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn rate(&self, arch: &str) -> Option<&RateFit> {
        self.rates.iter().find(|(a, _)| *a == arch).map(|(_, r)| r)
    }
}

fn stage3_fit(records: &[TrainRecord], schedule: &StageSchedule) -> Result<RateFit> {
    let losses: Vec<(usize, f64)> = records.iter().map(|r| (r.epoch, r.expert_loss)).collect();
    fit_convergence_rate(&losses, schedule.epochs(Stage::III))
}

/// Trains all three architectures on the seed's corpus and evaluates them.
pub fn run_seed(cfg: &ExperimentConfig, data: &SeedData, th: &Thresholds) -> Result<SeedOutcome> {
    let sch = &cfg.schedule;
    let dict = data.dictionary();
    let initial = init_mot(cfg, data.seed)?;
    let mot = train(initial.clone(), &data.corpus, sch, data.seed)?;
    let multihead = train_multihead(init_multihead(cfg, data.seed)?, &data.corpus, sch)?;
    let moe_ffn = train_moe_ffn(init_moe_ffn(cfg, data.seed)?, &data.corpus, sch, data.seed)?;

    let missing = |e| Error::InvalidArgument(format!("no checkpoint at epoch {e}"));
    let at_t1 = mot.checkpoint(sch.t1).ok_or_else(|| missing(sch.t1))?;
    let at_t2 = mot.checkpoint(sch.t2).ok_or_else(|| missing(sch.t2))?;
    let stage_one = analyze_stage_one(cfg, data, &initial, at_t1)?;

    let active_t2 = active_experts(&mot.records[sch.t2 - 1]);
    let attention_t2: Vec<AttentionProbeRow> = attention_probe(at_t2, dict, &data.probe)?
        .into_iter()
        .filter(|r| active_t2.contains(&r.expert))
        .collect();

    let projection = signal_projection_probe(&mot.model, dict);
    let report = specialization_report(&mot.model, dict);
    let dominance: Vec<(usize, f64)> = active_experts(mot.records.last().expect("nonempty trajectory"))
        .into_iter()
        .map(|i| {
            (
                i,
                projection_dominance(projection.row(i), dict.num_classes, report.best_class[i]),
            )
        })
        .collect();

    let rates = [
        ("mot", stage3_fit(&mot.records, sch)?),
        ("multihead", stage3_fit(&multihead.records, sch)?),
        ("moe-ffn", stage3_fit(&moe_ffn.records, sch)?),
    ];
    let quarter_start = sch.t_total - sch.t_total / 4;
    let moe_ffn_floor = moe_ffn
        .records
        .iter()
        .filter(|r| r.epoch > quarter_start)
        .map(|r| r.expert_loss)
        .fold(f64::INFINITY, f64::min);

    let inv_l = 1.0 / cfg.num_tokens as f64;
    let (mot_final, mh_final, moe_final) = (mot.final_loss(), multihead.final_loss(), moe_ffn.final_loss());
    let worst_pvv = attention_t2.iter().map(|r| r.v_v).fold(f64::INFINITY, f64::min);
    let worst_other = attention_t2.iter().map(|r| r.max_other()).fold(0.0, f64::max);
    let min_dominance = dominance.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let slope_ratio = rates[0].1.slope.abs() / rates[1].1.slope.abs();
    let max_theta_sum = mot.records.iter().map(|r| r.theta_sum_inf).fold(0.0, f64::max);

    let checks = vec![
        Check {
            name: "margin_growth",
            passed: stage_one.margin_growth() >= th.margin_growth,
            value: stage_one.margin_growth(),
        },
        Check {
            name: "routing_concentration",
            passed: stage_one.min_mass() >= th.routing_mass && stage_one.max_within_ratio() <= th.within_set_ratio,
            value: stage_one.min_mass(),
        },
        Check {
            name: "class_coverage",
            passed: stage_one.report.covers_all_classes,
            value: stage_one.report.sets.iter().filter(|s| !s.is_empty()).count() as f64,
        },
        Check {
            name: "attention_concentration",
            passed: !attention_t2.is_empty()
                && attention_t2.iter().all(|r| r.samples > 0)
                && worst_pvv >= th.pvv_min
                && worst_other <= th.other_score_factor * inv_l,
            value: worst_pvv,
        },
        Check {
            name: "stage3_linear_fit",
            passed: rates[0].1.r_squared >= th.stage3_r_squared && rates[0].1.slope < 0.0,
            value: rates[0].1.r_squared,
        },
        Check {
            name: "final_loss",
            passed: mot_final <= th.final_loss,
            value: mot_final,
        },
        Check {
            name: "projection_dominance",
            passed: min_dominance >= th.projection_dominance,
            value: min_dominance,
        },
        Check {
            name: "rate_separation",
            passed: slope_ratio >= th.slope_ratio,
            value: slope_ratio,
        },
        Check {
            name: "loss_ordering",
            passed: mot_final < mh_final && mh_final < moe_final,
            value: mh_final - mot_final,
        },
        Check {
            name: "moe_ffn_floor",
            passed: moe_ffn_floor >= th.floor_factor * mot_final,
            value: moe_ffn_floor / mot_final,
        },
        Check {
            name: "router_conservation",
            passed: max_theta_sum <= th.theta_sum,
            value: max_theta_sum,
        },
    ];

    Ok(SeedOutcome {
        seed: data.seed,
        corpus_checksum: data.corpus.checksum(),
        mot,
        multihead,
        moe_ffn,
        stage_one,
        attention_t2,
        projection,
        dominance,
        rates,
        moe_ffn_floor,
        checks,
    })
}

pub fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed_{seed}"))
}

/// Writes trajectories, report tables, plots and the run artifact of one
/// seed below `root`; returns the written paths relative to `root`.
pub fn write_seed_outputs(
    root: &Path,
    cfg: &ExperimentConfig,
    data: &SeedData,
    out: &SeedOutcome,
) -> Result<Vec<PathBuf>> {
    let dir = seed_dir(out.seed);
    let mut files = Vec::new();
    let mut csvs = Vec::new();
    for (arch, records) in [
        ("mot", &out.mot.records),
        ("multihead", &out.multihead.records),
        ("moe-ffn", &out.moe_ffn.records),
    ] {
        let p = write_file(root, dir.join(format!("{arch}.csv")), trajectory_csv(records).as_bytes())?;
        csvs.push(p.clone());
        files.push(p);
    }

    let spec_rows: Vec<Vec<String>> = out
        .stage_one
        .report
        .best_class
        .iter()
        .zip(&out.stage_one.report.margins)
        .enumerate()
        .map(|(i, (n, m))| vec![i.to_string(), n.to_string(), fmt_float(*m)])
        .collect();
    files.push(write_file(
        root,
        dir.join("specialization_t1.csv"),
        table_csv(&["expert", "best_class", "margin"], &spec_rows).as_bytes(),
    )?);

    let m = cfg.num_experts;
    let routing_header: Vec<String> = std::iter::once("class".to_string())
        .chain((0..m).map(|i| format!("expert_{i}")))
        .collect();
    let routing_rows: Vec<Vec<String>> = out
        .stage_one
        .routing
        .rows()
        .into_iter()
        .enumerate()
        .map(|(n, row)| std::iter::once(n.to_string()).chain(row.iter().map(|x| fmt_float(*x))).collect())
        .collect();
    let header_refs: Vec<&str> = routing_header.iter().map(String::as_str).collect();
    files.push(write_file(
        root,
        dir.join("routing_t1.csv"),
        table_csv(&header_refs, &routing_rows).as_bytes(),
    )?);

    let attn_rows: Vec<Vec<String>> = out
        .attention_t2
        .iter()
        .map(|r| {
            vec![
                r.expert.to_string(),
                r.class.to_string(),
                r.samples.to_string(),
                fmt_float(r.v_v),
                fmt_float(r.v_c),
                fmt_float(r.c_v),
                fmt_float(r.v_noise),
            ]
        })
        .collect();
    files.push(write_file(
        root,
        dir.join("attention_t2.csv"),
        table_csv(&["expert", "class", "samples", "v_v", "v_c", "c_v", "v_noise"], &attn_rows).as_bytes(),
    )?);

    let n = cfg.num_classes;
    let proj_header: Vec<String> = std::iter::once("expert".to_string())
        .chain((0..n).map(|j| format!("c_{j}")))
        .chain((0..n).map(|j| format!("v_{j}")))
        .collect();
    let proj_rows: Vec<Vec<String>> = out
        .projection
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(|x| fmt_float(*x))).collect())
        .collect();
    let header_refs: Vec<&str> = proj_header.iter().map(String::as_str).collect();
    files.push(write_file(
        root,
        dir.join("projection_final.csv"),
        table_csv(&header_refs, &proj_rows).as_bytes(),
    )?);

    let rate_rows: Vec<Vec<String>> = out
        .rates
        .iter()
        .map(|(arch, r)| {
            vec![
                arch.to_string(),
                r.first_epoch.to_string(),
                r.last_epoch.to_string(),
                fmt_float(r.slope),
                fmt_float(r.intercept),
                fmt_float(r.r_squared),
            ]
        })
        .collect();
    files.push(write_file(
        root,
        dir.join("rates.csv"),
        table_csv(&["arch", "first_epoch", "last_epoch", "slope", "intercept", "r_squared"], &rate_rows).as_bytes(),
    )?);

    let check_rows: Vec<Vec<String>> = out
        .checks
        .iter()
        .map(|c| vec![c.name.to_string(), c.passed.to_string(), fmt_float(c.value)])
        .collect();
    files.push(write_file(
        root,
        dir.join("checks.csv"),
        table_csv(&["check", "passed", "value"], &check_rows).as_bytes(),
    )?);

    files.extend(write_plots(root, &dir, &out.mot.records, &out.multihead.records, &out.moe_ffn.records, &out.stage_one.routing)?);

    let mut artifact = RunArtifact::new(cfg.to_text(), SeedRecord::new(out.seed), &data.corpus, csvs);
    artifact.add_checkpoints("mot", &out.mot.checkpoints)?;
    artifact.add_checkpoints("multihead", &out.multihead.checkpoints)?;
    artifact.add_checkpoints("moe-ffn", &out.moe_ffn.checkpoints)?;
    files.push(write_file(root, dir.join("artifact.json"), artifact.to_json()?.as_bytes())?);
    Ok(files)
}

/// Loss curves, margin curves and the routing heat map.
pub fn write_plots(
    root: &Path,
    dir: &Path,
    mot: &[TrainRecord],
    multihead: &[TrainRecord],
    moe_ffn: &[TrainRecord],
    routing: &Array2<f64>,
) -> Result<Vec<PathBuf>> {
    let series = |f: fn(&TrainRecord) -> f64| {
        [("mot", mot), ("multihead", multihead), ("moe-ffn", moe_ffn)]
            .into_iter()
            .filter(|(_, r)| !r.is_empty())
            .map(|(label, recs)| Series {
                label,
                points: recs.iter().map(|r| (r.epoch as f64, f(r))).collect(),
            })
            .collect::<Vec<_>>()
    };
    let mut files = vec![
        write_file(
            root,
            dir.join("loss.svg"),
            line_chart("expert loss", "epoch", "loss", &series(|r| r.expert_loss), true).as_bytes(),
        )?,
        write_file(
            root,
            dir.join("margins.svg"),
            line_chart("mean specialization margin", "epoch", "margin", &series(|r| r.mean_margin), false)
                .as_bytes(),
        )?,
    ];
    if !routing.is_empty() {
        files.push(write_file(
            root,
            dir.join("routing_t1.svg"),
            heatmap("routing frequency after stage I", "class", "expert", routing).as_bytes(),
        )?);
    }
    Ok(files)
}

#[derive(Debug)]
pub enum SeedStatus {
    Completed(Box<SeedOutcome>),
    Failed { seed: u64, error: String },
}

impl SeedStatus {
    pub fn seed(&self) -> u64 {
        match self {
            SeedStatus::Completed(o) => o.seed,
            SeedStatus::Failed { seed, .. } => *seed,
        }
    }

    pub fn outcome(&self) -> Option<&SeedOutcome> {
        match self {
            SeedStatus::Completed(o) => Some(o),
            SeedStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug)]
pub struct ComparisonBundle {
    pub seeds: Vec<SeedStatus>,
    /// Written files relative to the output directory, manifest last.
    pub files: Vec<PathBuf>,
}

impl ComparisonBundle {
    /// `(check, passed seeds, completed seeds)` per check.
    pub fn pass_rates(&self) -> Vec<(&'static str, usize, usize)> {
        let done: Vec<&SeedOutcome> = self.seeds.iter().filter_map(SeedStatus::outcome).collect();
        CHECK_NAMES
            .iter()
            .map(|&name| {
                let passed = done
                    .iter()
                    .filter(|o| o.check(name).is_some_and(|c| c.passed))
                    .count();
                (name, passed, done.len())
            })
            .collect()
    }
}

/// Runs every seed of `cfg`, writing outputs below `out_dir` as each seed
/// finishes. A failing seed is recorded and the others continue.
pub fn run_comparison(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ComparisonBundle> {
    cfg.validate()?;
    let th = Thresholds::default();
    let mut seeds = Vec::new();
    let mut files = vec![write_file(out_dir, "config.txt", cfg.to_text().as_bytes())?];
    for &seed in &cfg.seeds {
        let result = prepare_seed(cfg, seed).and_then(|data| run_seed(cfg, &data, &th).map(|o| (data, o)));
        match result {
            Ok((data, outcome)) => {
                files.extend(write_seed_outputs(out_dir, cfg, &data, &outcome)?);
                seeds.push(SeedStatus::Completed(Box::new(outcome)));
            }
            Err(e) => seeds.push(SeedStatus::Failed {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mut bundle = ComparisonBundle { seeds, files };

    let status_rows: Vec<Vec<String>> = bundle
        .seeds
        .iter()
        .map(|s| match s {
            SeedStatus::Completed(o) => vec![o.seed.to_string(), "ok".into(), o.corpus_checksum.clone()],
            SeedStatus::Failed { seed, error } => {
                vec![seed.to_string(), "failed".into(), error.replace([',', '\n'], ";")]
            }
        })
        .collect();
    bundle.files.push(write_file(
        out_dir,
        "seeds.csv",
        table_csv(&["seed", "status", "detail"], &status_rows).as_bytes(),
    )?);
    let rate_rows: Vec<Vec<String>> = bundle
        .pass_rates()
        .into_iter()
        .map(|(name, passed, total)| {
            let rate = if total > 0 { passed as f64 / total as f64 } else { 0.0 };
            vec![name.to_string(), passed.to_string(), total.to_string(), fmt_float(rate)]
        })
        .collect();
    bundle.files.push(write_file(
        out_dir,
        "summary.csv",
        table_csv(&["check", "passed", "seeds", "pass_rate"], &rate_rows).as_bytes(),
    )?);
    let manifest = write_manifest(out_dir, &bundle.files)?;
    bundle.files.push(manifest);
    Ok(bundle)
}

/// One grid point of the stage-length ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationPoint {
    pub seed: u64,
    pub t1: usize,
    pub t2: usize,
    pub t_total: usize,
    pub final_loss: f64,
    pub covers_all_classes: bool,
    pub min_mass_on_sets: f64,
}

/// Schedule with the given stage boundaries and the configured Stage III
/// length.
pub fn ablation_schedule(base: &StageSchedule, t1: usize, t2: usize) -> Result<StageSchedule> {
    let s = StageSchedule {
        t1,
        t2,
        t_total: t2 + (base.t_total - base.t2),
        ..base.clone()
    };
    s.validate()?;
    Ok(s)
}

/// Retrains the routed model for every `(t1, t2)` in the grid product on
/// each seed's shared corpus.
pub fn run_ablation_schedule(cfg: &ExperimentConfig, t1_grid: &[usize], t2_grid: &[usize]) -> Result<Vec<AblationPoint>> {
    cfg.validate()?;
    if t1_grid.is_empty() || t2_grid.is_empty() {
        return Err(Error::InvalidArgument("ablation grids must be nonempty".into()));
    }
    let schedules = t1_grid
        .iter()
        .flat_map(|&t1| t2_grid.iter().map(move |&t2| (t1, t2)))
        .map(|(t1, t2)| ablation_schedule(&cfg.schedule, t1, t2))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        let data = prepare_seed(cfg, seed)?;
        let initial = init_mot(cfg, seed)?;
        for sch in &schedules {
            let traj = train(initial.clone(), &data.corpus, sch, seed)?;
            let after_t1 = traj.checkpoint(sch.t1).expect("checkpoint at t1");
            let mut local = cfg.clone();
            local.schedule = sch.clone();
            let s1 = analyze_stage_one(&local, &data, &initial, after_t1)?;
            points.push(AblationPoint {
                seed,
                t1: sch.t1,
                t2: sch.t2,
                t_total: sch.t_total,
                final_loss: traj.final_loss(),
                covers_all_classes: s1.report.covers_all_classes,
                min_mass_on_sets: s1.min_mass(),
            });
        }
    }
    Ok(points)
}

pub fn ablation_csv(points: &[AblationPoint]) -> String {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.seed.to_string(),
                p.t1.to_string(),
                p.t2.to_string(),
                p.t_total.to_string(),
                fmt_float(p.final_loss),
                p.covers_all_classes.to_string(),
                fmt_float(p.min_mass_on_sets),
            ]
        })
        .collect();
    table_csv(
        &["seed", "t1", "t2", "t_total", "final_loss", "covers_all_classes", "min_mass_on_sets"],
        &rows,
    )
}
