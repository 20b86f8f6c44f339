//! CSV and JSON files read and written by the tool.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use riskctl_core::adversary::ReportSet;
use riskctl_core::dataset::{Dataset, Interaction, Item, User};
use riskctl_core::{GroupId, ItemId, SlateId, UserId};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const INTERACTIONS_HEADER: [&str; 6] =
    ["user_id", "item_id", "slate_id", "relevance", "risk", "flagged"];
pub const ITEMS_HEADER: [&str; 3] = ["item_id", "group_id", "likes"];
pub const REPORTS_HEADER: [&str; 3] = ["user_id", "item_id", "strategy"];
pub const SNAPSHOT_HEADER: [&str; 6] = ["scope", "scope_id", "alpha", "lambda_hat", "Q", "conservative"];

pub const INTERACTIONS_FILE: &str = "interactions.csv";
pub const ITEMS_FILE: &str = "items.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(tmp.path(), std::fs::Permissions::from_mode(0o644))
            .map_err(|e| CliError::io(tmp.path(), e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a headed CSV, checking the header, and hands each record with its
/// line number to `row`.
fn read_csv<T>(
    path: &Path,
    header: &[&str],
    mut row: impl FnMut(&csv::StringRecord, u64) -> Result<T>,
) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let got = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if got.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(row(&rec, line)?);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    ix: usize,
    name: &str,
    path: &Path,
    line: u64,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(ix).unwrap_or("").trim();
    raw.parse()
        .map_err(|e| parse_err(path, line, format!("{name} {raw:?}: {e}")))
}

fn finite(v: f64, name: &str, path: &Path, line: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(path, line, format!("{name} must be finite, got {v}")))
    }
}

pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    read_csv(path, &INTERACTIONS_HEADER, |rec, line| {
        let flagged = match rec.get(5).unwrap_or("").trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, line, format!("flagged must be 0 or 1, got {other:?}"))),
        };
        let risk = finite(field(rec, 4, "risk", path, line)?, "risk", path, line)?;
        if !(0.0..=1.0).contains(&risk) {
            return Err(parse_err(path, line, format!("risk {risk} outside [0, 1]")));
        }
        Ok(Interaction {
            user: UserId(field(rec, 0, "user_id", path, line)?),
            item: ItemId(field(rec, 1, "item_id", path, line)?),
            slate: field::<SlateId>(rec, 2, "slate_id", path, line)?,
            relevance: finite(field(rec, 3, "relevance", path, line)?, "relevance", path, line)?,
            risk,
            flagged,
        })
    })
}

pub fn read_items(path: &Path) -> Result<Vec<Item>> {
    read_csv(path, &ITEMS_HEADER, |rec, line| {
        Ok(Item {
            id: ItemId(field(rec, 0, "item_id", path, line)?),
            group: GroupId(field(rec, 1, "group_id", path, line)?),
            likes: field(rec, 2, "likes", path, line)?,
        })
    })
}

/// Loads a dataset; each user's flag rate is their empirical rate.
pub fn load_dataset(interactions: &Path, items: &Path) -> Result<Dataset> {
    let rows = read_interactions(interactions)?;
    let items = read_items(items)?;
    let mut counts: BTreeMap<UserId, (usize, usize)> = BTreeMap::new();
    for r in &rows {
        let c = counts.entry(r.user).or_default();
        c.0 += r.flagged as usize;
        c.1 += 1;
    }
    let users = counts
        .into_iter()
        .map(|(id, (f, n))| User {
            id,
            true_flag_rate: f as f64 / n as f64,
        })
        .collect();
    Dataset::new(items, users, rows).map_err(|e| CliError::Config {
        path: interactions.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads `interactions.csv` and `items.csv` from a directory.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(&dir.join(INTERACTIONS_FILE), &dir.join(ITEMS_FILE))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn interactions_csv(dataset: &Dataset) -> Vec<u8> {
    csv_bytes(
        &INTERACTIONS_HEADER,
        dataset.interactions().iter().map(|i| {
            vec![
                i.user.0.to_string(),
                i.item.0.to_string(),
                i.slate.to_string(),
                i.relevance.to_string(),
                i.risk.to_string(),
                (i.flagged as u8).to_string(),
            ]
        }),
    )
}

pub fn items_csv(dataset: &Dataset) -> Vec<u8> {
    csv_bytes(
        &ITEMS_HEADER,
        dataset
            .items()
            .iter()
            .map(|i| vec![i.id.0.to_string(), i.group.0.to_string(), i.likes.to_string()]),
    )
}

/// Writes `interactions.csv` and `items.csv` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let a = dir.join(INTERACTIONS_FILE);
    let b = dir.join(ITEMS_FILE);
    write_atomic(&a, &interactions_csv(dataset))?;
    write_atomic(&b, &items_csv(dataset))?;
    Ok(vec![a, b])
}

pub fn reports_csv(reports: &ReportSet) -> Vec<u8> {
    let strategy = reports.strategy().map_or("", |s| s.name());
    csv_bytes(
        &REPORTS_HEADER,
        reports
            .pairs()
            .map(|(u, i)| vec![u.0.to_string(), i.0.to_string(), strategy.to_string()]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Global,
    User(UserId),
}

/// One row of a calibration snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotRow {
    pub scope: Scope,
    pub alpha: f64,
    pub lambda_hat: f64,
    pub samples: usize,
    pub conservative: bool,
}

pub fn snapshot_csv(rows: &[SnapshotRow]) -> Vec<u8> {
    csv_bytes(
        &SNAPSHOT_HEADER,
        rows.iter().map(|r| {
            let (scope, id) = match r.scope {
                Scope::Global => ("global", String::new()),
                Scope::User(u) => ("user", u.0.to_string()),
            };
            vec![
                scope.to_string(),
                id,
                r.alpha.to_string(),
                r.lambda_hat.to_string(),
                r.samples.to_string(),
                r.conservative.to_string(),
            ]
        }),
    )
}

/// Provenance of an output directory.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, outputs: &[PathBuf]) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash(&config),
            config,
            outputs: outputs
                .iter()
                .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
                .collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push(b'\n');
        write_atomic(path, &text)
    }
}

/// serde_json maps are ordered, so the serialization is canonical.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("a Value always serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
