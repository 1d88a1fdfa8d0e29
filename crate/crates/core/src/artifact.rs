//! On-disk formats: trajectory CSV, JSON run artifact and checksum manifest.

use std::fmt::Write as _;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::Corpus;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::signal_space::SignalDictionary;
use crate::trainer::{Checkpoint, Stage, TrainRecord};

pub const CSV_HEADER: &str = "epoch,stage,expert_loss,router_loss,routed_counts,mean_margin,mean_pvv";
pub const FORMAT_VERSION: &str = "mot-lab/1";

/// The CSV projection of a [`TrainRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub epoch: usize,
    pub stage: Stage,
    pub expert_loss: f64,
    pub router_loss: Option<f64>,
    pub routed_counts: Vec<usize>,
    pub mean_margin: f64,
    pub mean_pvv: f64,
}

impl From<&TrainRecord> for CsvRow {
    fn from(r: &TrainRecord) -> Self {
        Self {
            epoch: r.epoch,
            stage: r.stage,
            expert_loss: r.expert_loss,
            router_loss: r.router_loss,
            routed_counts: r.routed_counts.clone(),
            mean_margin: r.mean_margin,
            mean_pvv: r.mean_pvv,
        }
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

pub fn trajectory_csv(records: &[TrainRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let counts: Vec<String> = r.routed_counts.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.stage,
            fmt_float(r.expert_loss),
            r.router_loss.map(fmt_float).unwrap_or_default(),
            counts.join("|"),
            fmt_float(r.mean_margin),
            fmt_float(r.mean_pvv),
        );
    }
    out
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, text: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::malformed("trajectory CSV", format!("line {line}: bad {name} `{text}`")))
}

pub fn read_trajectory_csv(reader: impl Read) -> Result<Vec<CsvRow>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != CSV_HEADER {
        return Err(Error::malformed("trajectory CSV", "missing or wrong header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::malformed(
                "trajectory CSV",
                format!("line {lineno}: expected 7 fields, got {}", fields.len()),
            ));
        }
        let stage = Stage::parse(fields[1])
            .ok_or_else(|| Error::malformed("trajectory CSV", format!("line {lineno}: bad stage `{}`", fields[1])))?;
        let router_loss = if fields[3].is_empty() {
            None
        } else {
            Some(parse_field(lineno, "router_loss", fields[3])?)
        };
        let routed_counts = fields[4]
            .split('|')
            .map(|c| parse_field(lineno, "routed_counts", c))
            .collect::<Result<_>>()?;
        rows.push(CsvRow {
            epoch: parse_field(lineno, "epoch", fields[0])?,
            stage,
            expert_loss: parse_field(lineno, "expert_loss", fields[2])?,
            router_loss,
            routed_counts,
            mean_margin: parse_field(lineno, "mean_margin", fields[5])?,
            mean_pvv: parse_field(lineno, "mean_pvv", fields[6])?,
        });
    }
    Ok(rows)
}

pub fn read_trajectory_file(path: &Path) -> Result<Vec<CsvRow>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_trajectory_csv(fs::File::open(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_checksum(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `contents` below `root`, creating parent directories, and returns
/// the path relative to `root`.
pub fn write_file(root: &Path, relative: impl AsRef<Path>, contents: &[u8]) -> Result<PathBuf> {
    let relative = relative.as_ref();
    let path = root.join(relative);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents)?;
    Ok(relative.to_path_buf())
}

/// Line-oriented `path<TAB>sha256` listing; paths are relative to `root`.
pub fn write_manifest(root: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let mut sorted = files.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out = String::new();
    for f in &sorted {
        let full = root.join(f);
        if !full.is_file() {
            return Err(Error::MissingFile(full));
        }
        let _ = writeln!(out, "{}\t{}", f.display(), file_checksum(&full)?);
    }
    write_file(root, "manifest.tsv", out.as_bytes())
}

/// Parses a manifest and checks every listed checksum; returns the entries.
pub fn verify_manifest(root: &Path) -> Result<Vec<(PathBuf, String)>> {
    let path = root.join("manifest.tsv");
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let mut entries = Vec::new();
    for line in fs::read_to_string(&path)?.lines() {
        let (file, sum) = line
            .split_once('\t')
            .ok_or_else(|| Error::malformed("manifest", format!("no tab in `{line}`")))?;
        let full = root.join(file);
        if !full.is_file() {
            return Err(Error::MissingFile(full));
        }
        let actual = file_checksum(&full)?;
        if actual != sum {
            return Err(Error::malformed("manifest", format!("checksum mismatch for {file}")));
        }
        entries.push((PathBuf::from(file), sum.to_string()));
    }
    Ok(entries)
}

/// Everything needed to reload a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format_version: String,
    pub config: String,
    pub seeds: SeedRecord,
    pub dictionary: SignalDictionary,
    pub corpus: Corpus,
    pub checkpoints: Vec<ArchCheckpoint>,
    pub trajectory_csv: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchCheckpoint {
    pub arch: String,
    pub epoch: usize,
    pub stage: Stage,
    pub model: serde_json::Value,
}

/// The run seed and the ChaCha stream id behind each named consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub streams: BTreeMap<String, u64>,
}

impl SeedRecord {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            streams: Stream::ALL.iter().map(|&s| (s.name().to_string(), s as u64)).collect(),
        }
    }
}

impl RunArtifact {
    pub fn new(config: String, seeds: SeedRecord, corpus: &Corpus, trajectory_csv: Vec<PathBuf>) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            config,
            seeds,
            dictionary: corpus.dictionary.clone(),
            corpus: corpus.clone(),
            checkpoints: Vec::new(),
            trajectory_csv,
        }
    }

    pub fn add_checkpoints<P: Serialize>(&mut self, arch: &str, checkpoints: &[Checkpoint<P>]) -> Result<()> {
        for c in checkpoints {
            self.checkpoints.push(ArchCheckpoint {
                arch: arch.to_string(),
                epoch: c.epoch,
                stage: c.stage,
                model: serde_json::to_value(&c.model)?,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.format_version != FORMAT_VERSION {
            return Err(Error::malformed(
                "run artifact",
                format!("unsupported format version `{}`", a.format_version),
            ));
        }
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The checkpoint of `arch` at `epoch`, if this artifact holds one.
    pub fn checkpoint<P: serde::de::DeserializeOwned>(&self, arch: &str, epoch: usize) -> Result<Option<P>> {
        match self.checkpoints.iter().find(|c| c.arch == arch && c.epoch == epoch) {
            Some(c) => Ok(Some(serde_json::from_value(c.model.clone())?)),
            None => Ok(None),
        }
    }
}

/// Writes a small table as CSV with full-precision floats.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
