use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use mot_core::artifact::{
    read_trajectory_file, table_csv, trajectory_csv, verify_manifest, write_file, write_manifest, CsvRow,
    RunArtifact, SeedRecord,
};
use mot_core::baselines::{train_moe_ffn, train_multihead};
use mot_core::experiments::{
    ablation_csv, init_moe_ffn, init_mot, init_multihead, prepare_seed, run_ablation_schedule, run_comparison,
    seed_dir, write_plots, SeedStatus,
};
use mot_core::gradcheck::run_gradcheck;
use mot_core::metrics::fit_convergence_rate;
use mot_core::plot::{heatmap, line_chart, Series};
use mot_core::trainer::{train, Stage};
use mot_core::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "mot-lab", version, about = "Mixture-of-transformers training laboratory")]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; every file is written below it.
    #[arg(long, global = true, env = "MOT_LAB_OUT")]
    out: Option<PathBuf>,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the dictionary and training corpus for each seed.
    GenData,
    /// Train one architecture and write its trajectory and checkpoints.
    Train {
        #[arg(long, value_enum, default_value_t = Arch::Mot)]
        arch: Arch,
    },
    /// Compare closed-form gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Train all three architectures per seed and evaluate the checks.
    Compare,
    /// Final-loss grid over stage boundaries.
    Ablate {
        #[arg(long, value_delimiter = ',', required = true)]
        t1: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        t2: Vec<usize>,
    },
    /// Render plots and rate fits from a directory of trajectory CSVs.
    Report {
        /// Directory holding `mot.csv`, `multihead.csv` and/or `moe-ffn.csv`.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Mot,
    Multihead,
    MoeFfn,
}

impl Arch {
    fn name(self) -> &'static str {
        match self {
            Arch::Mot => "mot",
            Arch::Multihead => "multihead",
            Arch::MoeFfn => "moe-ffn",
        }
    }
}

const ARCHES: [&str; 3] = ["mot", "multihead", "moe-ffn"];

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn load_ctx(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    cfg.out_dir = out.clone();
    Ok(Ctx {
        cfg,
        out,
        quiet: cli.quiet,
    })
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let mut files = Vec::new();
    for &seed in &ctx.cfg.seeds {
        let data = prepare_seed(&ctx.cfg, seed)?;
        let json = serde_json::to_string(&data.corpus)?;
        files.push(write_file(&ctx.out, seed_dir(seed).join("corpus.json"), json.as_bytes())?);
        ctx.say(format!("seed {seed}: {}", data.corpus.summary()));
        ctx.say(format!("  checksum {}", data.corpus.checksum()));
    }
    write_manifest(&ctx.out, &files)?;
    Ok(())
}

fn train_one(ctx: &Ctx, arch: Arch) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let data = prepare_seed(cfg, seed)?;
        let dir = seed_dir(seed);
        let csv = dir.join(format!("{}.csv", arch.name()));
        let mut artifact = RunArtifact::new(cfg.to_text(), SeedRecord::new(seed), &data.corpus, vec![csv.clone()]);
        let records = match arch {
            Arch::Mot => {
                let t = train(init_mot(cfg, seed)?, &data.corpus, &cfg.schedule, seed)?;
                artifact.add_checkpoints(arch.name(), &t.checkpoints)?;
                t.records
            }
            Arch::Multihead => {
                let t = train_multihead(init_multihead(cfg, seed)?, &data.corpus, &cfg.schedule)?;
                artifact.add_checkpoints(arch.name(), &t.checkpoints)?;
                t.records
            }
            Arch::MoeFfn => {
                let t = train_moe_ffn(init_moe_ffn(cfg, seed)?, &data.corpus, &cfg.schedule, seed)?;
                artifact.add_checkpoints(arch.name(), &t.checkpoints)?;
                t.records
            }
        };
        files.push(write_file(&ctx.out, &csv, trajectory_csv(&records).as_bytes())?);
        files.push(write_file(&ctx.out, dir.join("artifact.json"), artifact.to_json()?.as_bytes())?);
        let (mot, mh, moe) = match arch {
            Arch::Mot => (&records[..], &[][..], &[][..]),
            Arch::Multihead => (&[][..], &records[..], &[][..]),
            Arch::MoeFfn => (&[][..], &[][..], &records[..]),
        };
        files.extend(write_plots(&ctx.out, &dir, mot, mh, moe, &Array2::zeros((0, 0)))?);
        let last = records.last().context("empty trajectory")?;
        ctx.say(format!(
            "seed {seed}: {} final expert_loss {:.6e} after {} epochs",
            arch.name(),
            last.expert_loss,
            last.epoch
        ));
    }
    write_manifest(&ctx.out, &files)?;
    Ok(())
}

fn gradcheck(ctx: &Ctx, instances: usize) -> Result<bool> {
    let seed = ctx.cfg.seeds[0];
    let report = run_gradcheck(seed, instances)?;
    if ctx.quiet {
        println!("{}", report.summary_line());
    } else {
        println!("{report}");
    }
    Ok(report.passed())
}

fn compare(ctx: &Ctx) -> Result<bool> {
    let bundle = run_comparison(&ctx.cfg, &ctx.out)?;
    for s in &bundle.seeds {
        match s {
            SeedStatus::Completed(o) => ctx.say(format!(
                "seed {}: final loss mot {:.4e} multihead {:.4e} moe-ffn {:.4e}",
                o.seed,
                o.mot.final_loss(),
                o.multihead.final_loss(),
                o.moe_ffn.final_loss()
            )),
            SeedStatus::Failed { seed, error } => eprintln!("seed {seed} failed: {error}"),
        }
    }
    for (name, passed, total) in bundle.pass_rates() {
        ctx.say(format!("{name:<24} {passed}/{total}"));
    }
    Ok(bundle.seeds.iter().all(|s| s.outcome().is_some()))
}

fn ablate(ctx: &Ctx, t1: &[usize], t2: &[usize]) -> Result<()> {
    let points = run_ablation_schedule(&ctx.cfg, t1, t2)?;
    let f = write_file(&ctx.out, "ablation.csv", ablation_csv(&points).as_bytes())?;
    write_manifest(&ctx.out, &[f])?;
    for p in &points {
        ctx.say(format!(
            "seed {} t1 {:>5} t2 {:>5} final_loss {:.4e} coverage {}",
            p.seed, p.t1, p.t2, p.final_loss, p.covers_all_classes
        ));
    }
    Ok(())
}

fn to_records(rows: &[CsvRow]) -> Vec<mot_core::TrainRecord> {
    rows.iter()
        .map(|r| mot_core::TrainRecord {
            epoch: r.epoch,
            stage: r.stage,
            expert_loss: r.expert_loss,
            router_loss: r.router_loss,
            routed_counts: r.routed_counts.clone(),
            margins: Vec::new(),
            mean_margin: r.mean_margin,
            mean_pvv: r.mean_pvv,
            theta_sum_inf: f64::NAN,
        })
        .collect()
}

fn report(ctx: &Ctx, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!(mot_core::Error::MissingFile(dir.to_path_buf()));
    }
    if dir.join("manifest.tsv").is_file() {
        verify_manifest(dir)?;
    }
    let mut loaded = Vec::new();
    for arch in ARCHES {
        let path = dir.join(format!("{arch}.csv"));
        if path.is_file() {
            loaded.push((arch, to_records(&read_trajectory_file(&path)?)));
        }
    }
    if loaded.is_empty() {
        bail!(mot_core::Error::MissingFile(dir.join("mot.csv")));
    }
    let get = |a: &str| {
        loaded
            .iter()
            .find(|(name, _)| *name == a)
            .map_or(&[][..], |(_, r)| &r[..])
    };
    let out_dir = PathBuf::from("report");
    let mut files = write_plots(&ctx.out, &out_dir, get("mot"), get("multihead"), get("moe-ffn"), &Array2::zeros((0, 0)))?;

    let mut rate_rows = Vec::new();
    for (arch, recs) in &loaded {
        let losses: Vec<(usize, f64)> = recs.iter().map(|r| (r.epoch, r.expert_loss)).collect();
        let stage3: Vec<usize> = recs.iter().filter(|r| r.stage == Stage::III).map(|r| r.epoch).collect();
        if let (Some(&a), Some(&b)) = (stage3.first(), stage3.last()) {
            let fit = fit_convergence_rate(&losses, a..=b)?;
            rate_rows.push(vec![
                arch.to_string(),
                a.to_string(),
                b.to_string(),
                format!("{:?}", fit.slope),
                format!("{:?}", fit.intercept),
                format!("{:?}", fit.r_squared),
            ]);
            ctx.say(format!("{arch:<10} stage III slope {:.4e} R² {:.4}", fit.slope, fit.r_squared));
        }
        let counts = routing_over_time(recs);
        if counts.nrows() > 0 {
            let svg = heatmap(&format!("{arch} routed samples per expert over training"), "expert", "epoch bin", &counts);
            files.push(write_file(&ctx.out, out_dir.join(format!("routing_{arch}.svg")), svg.as_bytes())?);
        }
    }
    files.push(write_file(
        &ctx.out,
        out_dir.join("rates.csv"),
        table_csv(&["arch", "first_epoch", "last_epoch", "slope", "intercept", "r_squared"], &rate_rows).as_bytes(),
    )?);
    let mut series = Vec::new();
    for (arch, recs) in &loaded {
        series.push(Series {
            label: arch,
            points: recs.iter().map(|r| (r.epoch as f64, r.mean_pvv)).collect(),
        });
    }
    files.push(write_file(
        &ctx.out,
        out_dir.join("attention.svg"),
        line_chart("mean (v, v) attention score", "epoch", "score", &series, false).as_bytes(),
    )?);
    write_manifest(&ctx.out, &files)?;
    Ok(())
}

/// Experts × epoch-bins matrix of mean routed-sample fractions.
fn routing_over_time(recs: &[mot_core::TrainRecord]) -> Array2<f64> {
    let Some(first) = recs.first() else {
        return Array2::zeros((0, 0));
    };
    let m = first.routed_counts.len();
    let bins = recs.len().min(60);
    let mut out = Array2::<f64>::zeros((m, bins));
    let mut seen = vec![0usize; bins];
    for (t, r) in recs.iter().enumerate() {
        let b = t * bins / recs.len();
        let total: usize = r.routed_counts.iter().sum();
        for (i, &c) in r.routed_counts.iter().enumerate().take(m) {
            out[(i, b)] += c as f64 / total.max(1) as f64;
        }
        seen[b] += 1;
    }
    for (b, &n) in seen.iter().enumerate() {
        if n > 0 {
            out.column_mut(b).mapv_inplace(|x| x / n as f64);
        }
    }
    out
}

fn run(cli: &Cli) -> Result<bool> {
    let ctx = load_ctx(cli)?;
    match &cli.command {
        Command::GenData => gen_data(&ctx).map(|_| true),
        Command::Train { arch } => train_one(&ctx, *arch).map(|_| true),
        Command::Gradcheck { instances } => gradcheck(&ctx, *instances),
        Command::Compare => compare(&ctx),
        Command::Ablate { t1, t2 } => ablate(&ctx, t1, t2).map(|_| true),
        Command::Report { dir } => report(&ctx, dir).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
