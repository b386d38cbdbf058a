//! Experiment archives: measurement records plus the configuration they
//! were taken under.
//!
//! On disk every experiment is one directory under the store root:
//!
//! ```text
//! <root>/<experiment id>/snapshot.json   ConfigSnapshot, written once
//! <root>/<experiment id>/records.tsv     record log, see `record`
//! <root>/<experiment id>/SEALED          hex digest, present once sealed
//! ```
//!
//! Each append is flushed to disk before it returns. A line without its
//! terminating newline was never acknowledged; reopening drops it.
//!
//! The seal digest is SHA-256 over the snapshot file bytes, a single `\n`,
//! then the record log bytes.

mod record;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chanem::ChannelScenario;
use crate::inventory::Inventory;
use crate::scheduler::{Reservation, ReservationState};
use crate::specvirt::iqfile::IqFormat;
use crate::{ReservationId, Timestamp};

pub use record::{ExperimentRecord, Location};

pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("StateError: {0}")]
    State(String),
    #[error("SealedError: experiment {0} is sealed")]
    Sealed(String),
    #[error("OrderError: node {node} at {got} us after {last} us")]
    Order { node: String, last: i64, got: i64 },
    #[error("ValidationError: {0}")]
    Validation(String),
    #[error("NotFound: experiment {0}")]
    NotFound(String),
    #[error("IoError: {0}")]
    Io(String),
    #[error("RecoveryError: {path} line {line}: {reason}")]
    Recovery { path: String, line: usize, reason: String },
}

impl DataError {
    pub fn name(&self) -> &'static str {
        match self {
            DataError::State(_) => "StateError",
            DataError::Sealed(_) => "SealedError",
            DataError::Order { .. } => "OrderError",
            DataError::Validation(_) => "ValidationError",
            DataError::NotFound(_) => "NotFound",
            DataError::Io(_) => "IoError",
            DataError::Recovery { .. } => "RecoveryError",
        }
    }
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> DataError {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub inventory_hash: String,
    pub reservation_id: ReservationId,
    pub scenario_hash: Option<String>,
    pub software: Vec<String>,
    pub sample_formats: Vec<IqFormat>,
    pub created_utc: Timestamp,
}

impl ConfigSnapshot {
    pub fn capture(
        inventory: &Inventory,
        reservation: &Reservation,
        scenario: Option<&ChannelScenario>,
        sample_formats: Vec<IqFormat>,
        now: Timestamp,
    ) -> ConfigSnapshot {
        ConfigSnapshot {
            inventory_hash: inventory.content_hash(),
            reservation_id: reservation.id.clone(),
            scenario_hash: scenario.map(|s| s.content_hash()),
            software: reservation.spec.compute.software.clone(),
            sample_formats,
            created_utc: now,
        }
    }
}

/// Record selection. Every range is half-open `[from, to)`; `None` bounds
/// are unbounded. An azimuth range with `from > to` wraps through north.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    #[serde(default)]
    pub t_from_us: Option<i64>,
    #[serde(default)]
    pub t_to_us: Option<i64>,
    #[serde(default)]
    pub node_id: Option<String>,
    #[serde(default)]
    pub freq_from_hz: Option<f64>,
    #[serde(default)]
    pub freq_to_hz: Option<f64>,
    #[serde(default)]
    pub azimuth_from_deg: Option<f64>,
    #[serde(default)]
    pub azimuth_to_deg: Option<f64>,
}

impl QueryFilter {
    pub fn matches(&self, r: &ExperimentRecord) -> bool {
        let in_range = |v: f64, from: Option<f64>, to: Option<f64>| {
            from.is_none_or(|f| v >= f) && to.is_none_or(|t| v < t)
        };
        let azimuth = match (self.azimuth_from_deg, self.azimuth_to_deg) {
            (Some(f), Some(t)) if f > t => r.azimuth_deg >= f || r.azimuth_deg < t,
            (f, t) => in_range(r.azimuth_deg, f, t),
        };
        self.t_from_us.is_none_or(|f| r.t_utc_us >= f)
            && self.t_to_us.is_none_or(|t| r.t_utc_us < t)
            && self.node_id.as_ref().is_none_or(|n| &r.node_id == n)
            && in_range(r.freq_hz, self.freq_from_hz, self.freq_to_hz)
            && azimuth
    }
}

#[derive(Debug)]
pub struct ExperimentArchive {
    pub id: String,
    pub snapshot: ConfigSnapshot,
    records: Vec<ExperimentRecord>,
    /// Positions in `records` per node, in time order.
    by_node: BTreeMap<String, Vec<usize>>,
    digest: Option<String>,
    snapshot_bytes: Vec<u8>,
    log: Option<File>,
    dir: Option<PathBuf>,
}

impl ExperimentArchive {
    pub fn records(&self) -> &[ExperimentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sealed(&self) -> bool {
        self.digest.is_some()
    }

    pub fn digest(&self) -> Option<&str> {
        self.digest.as_deref()
    }

    pub fn summary(&self) -> ArchiveSummary {
        ArchiveSummary {
            id: self.id.clone(),
            reservation_id: self.snapshot.reservation_id.clone(),
            records: self.records.len(),
            sealed: self.sealed(),
            digest: self.digest.clone(),
        }
    }

    fn check(&self, rec: &ExperimentRecord, pending: &BTreeMap<&str, i64>) -> Result<(), DataError> {
        rec.validate().map_err(DataError::Validation)?;
        let last = pending.get(rec.node_id.as_str()).copied().or_else(|| {
            self.by_node
                .get(&rec.node_id)
                .and_then(|ix| ix.last())
                .map(|&i| self.records[i].t_utc_us)
        });
        match last {
            Some(last) if rec.t_utc_us < last => Err(DataError::Order {
                node: rec.node_id.clone(),
                last,
                got: rec.t_utc_us,
            }),
            _ => Ok(()),
        }
    }

    fn push(&mut self, rec: ExperimentRecord) {
        self.by_node.entry(rec.node_id.clone()).or_default().push(self.records.len());
        self.records.push(rec);
    }

    fn compute_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(&self.snapshot_bytes);
        h.update(b"\n");
        for r in &self.records {
            h.update(r.to_line().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Matching records ordered by time, then node, then append order.
    pub fn query(&self, filter: &QueryFilter) -> Vec<ExperimentRecord> {
        let mut hits: Vec<&ExperimentRecord> = match &filter.node_id {
            Some(node) => {
                let Some(ix) = self.by_node.get(node) else { return Vec::new() };
                let start = filter
                    .t_from_us
                    .map_or(0, |f| ix.partition_point(|&i| self.records[i].t_utc_us < f));
                let end = filter
                    .t_to_us
                    .map_or(ix.len(), |t| ix.partition_point(|&i| self.records[i].t_utc_us < t));
                ix[start..end.max(start)]
                    .iter()
                    .map(|&i| &self.records[i])
                    .filter(|r| filter.matches(r))
                    .collect()
            }
            None => self.records.iter().filter(|r| filter.matches(r)).collect(),
        };
        hits.sort_by(|a, b| a.t_utc_us.cmp(&b.t_utc_us).then_with(|| a.node_id.cmp(&b.node_id)));
        hits.into_iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub id: String,
    pub reservation_id: ReservationId,
    pub records: usize,
    pub sealed: bool,
    pub digest: Option<String>,
}

/// All archives, on disk or in memory.
#[derive(Debug)]
pub struct DataStore {
    root: Option<PathBuf>,
    archives: BTreeMap<String, ExperimentArchive>,
    next_seq: u64,
}

fn experiment_id(seq: u64) -> String {
    format!("exp-{seq:06}")
}

impl DataStore {
    pub fn in_memory() -> DataStore {
        DataStore {
            root: None,
            archives: BTreeMap::new(),
            next_seq: 1,
        }
    }

    /// Opens or creates the store at `root`, reloading every archive.
    pub fn open(root: impl AsRef<Path>) -> Result<DataStore, DataError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut store = DataStore {
            root: Some(root.clone()),
            archives: BTreeMap::new(),
            next_seq: 1,
        };
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("snapshot.json").is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let archive = load_archive(&dir)?;
            if let Some(seq) = archive.id.strip_prefix("exp-").and_then(|s| s.parse::<u64>().ok()) {
                store.next_seq = store.next_seq.max(seq + 1);
            }
            store.archives.insert(archive.id.clone(), archive);
        }
        Ok(store)
    }

    pub fn is_persistent(&self) -> bool {
        self.root.is_some()
    }

    pub fn get(&self, id: &str) -> Option<&ExperimentArchive> {
        self.archives.get(id)
    }

    pub fn archives(&self) -> impl Iterator<Item = &ExperimentArchive> {
        self.archives.values()
    }

    fn archive_mut(&mut self, id: &str) -> Result<&mut ExperimentArchive, DataError> {
        self.archives.get_mut(id).ok_or_else(|| DataError::NotFound(id.to_string()))
    }

    pub fn open_experiment(
        &mut self,
        reservation: &Reservation,
        snapshot: ConfigSnapshot,
    ) -> Result<String, DataError> {
        if reservation.state != ReservationState::Active {
            return Err(DataError::State(format!(
                "reservation {} is {:?}, experiments open only while Active",
                reservation.id, reservation.state
            )));
        }
        if snapshot.reservation_id != reservation.id {
            return Err(DataError::Validation(format!(
                "snapshot names {} but reservation is {}",
                snapshot.reservation_id, reservation.id
            )));
        }
        let id = experiment_id(self.next_seq);
        let snapshot_bytes = serde_json::to_vec_pretty(&snapshot).expect("snapshot serializes");
        let (log, dir) = match &self.root {
            Some(root) => {
                let dir = root.join(&id);
                fs::create_dir_all(&dir)?;
                write_durable(&dir.join("snapshot.json"), &snapshot_bytes)?;
                let log = OpenOptions::new().create(true).append(true).open(dir.join("records.tsv"))?;
                log.sync_all()?;
                File::open(root)?.sync_all()?;
                (Some(log), Some(dir))
            }
            None => (None, None),
        };
        self.next_seq += 1;
        self.archives.insert(
            id.clone(),
            ExperimentArchive {
                id: id.clone(),
                snapshot,
                records: Vec::new(),
                by_node: BTreeMap::new(),
                digest: None,
                snapshot_bytes,
                log,
                dir,
            },
        );
        Ok(id)
    }

    pub fn append(&mut self, id: &str, rec: ExperimentRecord) -> Result<(), DataError> {
        self.append_batch(id, vec![rec]).map(|_| ())
    }

    /// Appends all of `recs` or none of them, with one flush.
    pub fn append_batch(&mut self, id: &str, recs: Vec<ExperimentRecord>) -> Result<usize, DataError> {
        let archive = self.archive_mut(id)?;
        if archive.sealed() {
            return Err(DataError::Sealed(id.to_string()));
        }
        let mut pending: BTreeMap<&str, i64> = BTreeMap::new();
        for rec in &recs {
            archive.check(rec, &pending)?;
            pending.insert(&rec.node_id, rec.t_utc_us);
        }
        drop(pending);
        if let Some(log) = &mut archive.log {
            let mut text = String::new();
            for rec in &recs {
                text.push_str(&rec.to_line());
            }
            log.write_all(text.as_bytes())?;
            log.sync_data()?;
        }
        let n = recs.len();
        for rec in recs {
            archive.push(rec);
        }
        Ok(n)
    }

    pub fn query(&self, id: &str, filter: &QueryFilter) -> Result<Vec<ExperimentRecord>, DataError> {
        let archive = self.get(id).ok_or_else(|| DataError::NotFound(id.to_string()))?;
        Ok(archive.query(filter))
    }

    pub fn seal(&mut self, id: &str) -> Result<String, DataError> {
        let archive = self.archive_mut(id)?;
        if archive.sealed() {
            return Err(DataError::Sealed(id.to_string()));
        }
        let digest = archive.compute_digest();
        if let Some(dir) = &archive.dir {
            write_durable(&dir.join("SEALED"), format!("{digest}\n").as_bytes())?;
        }
        archive.log = None;
        archive.digest = Some(digest.clone());
        Ok(digest)
    }
}

/// Writes through a temporary file and renames, so readers never see a
/// partial document.
fn write_durable(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        File::open(parent)?.sync_all()?;
    }
    Ok(())
}

fn load_archive(dir: &Path) -> Result<ExperimentArchive, DataError> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| DataError::Io(format!("bad archive directory {}", dir.display())))?
        .to_string();
    let snapshot_path = dir.join("snapshot.json");
    let snapshot_bytes = fs::read(&snapshot_path)?;
    let snapshot: ConfigSnapshot = serde_json::from_slice(&snapshot_bytes).map_err(|e| DataError::Recovery {
        path: snapshot_path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let log_path = dir.join("records.tsv");
    let mut text = fs::read_to_string(&log_path).unwrap_or_default();
    if !text.is_empty() && !text.ends_with('\n') {
        // Torn final write: never acknowledged.
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        let f = OpenOptions::new().write(true).open(&log_path)?;
        f.set_len(keep as u64)?;
        f.sync_all()?;
    }
    let mut archive = ExperimentArchive {
        id,
        snapshot,
        records: Vec::new(),
        by_node: BTreeMap::new(),
        digest: None,
        snapshot_bytes,
        log: None,
        dir: Some(dir.to_path_buf()),
    };
    let empty = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let recovery = |reason: String| DataError::Recovery {
            path: log_path.display().to_string(),
            line: i + 1,
            reason,
        };
        let rec = ExperimentRecord::from_line(line).map_err(recovery)?;
        archive.check(&rec, &empty).map_err(|e| recovery(e.to_string()))?;
        archive.push(rec);
    }
    match fs::read_to_string(dir.join("SEALED")) {
        Ok(d) => {
            let digest = archive.compute_digest();
            if d.trim() != digest {
                return Err(DataError::Recovery {
                    path: dir.join("SEALED").display().to_string(),
                    line: 1,
                    reason: format!("sealed digest {} does not match contents {digest}", d.trim()),
                });
            }
            archive.digest = Some(digest);
        }
        Err(_) => {
            archive.log = Some(OpenOptions::new().create(true).append(true).open(&log_path)?);
        }
    }
    Ok(archive)
}
