//! Server state: the scheduler, the data store, the loaded channel scenario
//! and node status, behind one lock.
//!
//! With a state directory the server keeps:
//!
//! ```text
//! <dir>/inventory.toml   inventory in force
//! <dir>/events.jsonl     scheduler journal, the source of truth
//! <dir>/snapshot.json    scheduler state after the last event, for checking replays
//! <dir>/scenario.json    loaded channel scenario, if any
//! <dir>/data/            experiment archives
//! ```

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio::sync::RwLock;

use cornet_core::chanem::ChannelScenario;
use cornet_core::datamgr::DataStore;
use cornet_core::inventory::Inventory;
use cornet_core::scheduler::{
    Envelope, FileJournal, Journal, MemoryJournal, ReservationState, Scheduler, SchedulerConfig,
};
use cornet_core::Timestamp;

use crate::auth::Session;
use crate::clock::Clock;
use crate::error::ApiError;
use crate::status::{node_states, StatusTracker};

pub const INVENTORY_FILE: &str = "inventory.toml";
pub const JOURNAL_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const DATA_DIR: &str = "data";

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    /// Where state survives restarts. `None` keeps everything in memory.
    pub state_dir: Option<PathBuf>,
    /// Inventory used when the state directory holds none yet.
    pub inventory_path: Option<PathBuf>,
    pub sessions: Vec<Session>,
    pub scheduler: SchedulerConfig,
}

#[derive(Debug)]
pub struct Core {
    pub scheduler: Scheduler,
    pub data: DataStore,
    pub scenario: Option<ChannelScenario>,
    pub status: StatusTracker,
    /// The in-memory journal when there is no state directory.
    memory_journal: Option<MemoryJournal>,
    dir: Option<PathBuf>,
    persisted_seq: u64,
}

impl Core {
    /// Every journaled event so far.
    pub fn journal_entries(&self) -> Result<Vec<Envelope>, ApiError> {
        match (&self.memory_journal, &self.dir) {
            (Some(m), _) => Ok(m.entries()),
            (None, Some(dir)) => Ok(FileJournal::open(dir.join(JOURNAL_FILE))?.1),
            (None, None) => Ok(Vec::new()),
        }
    }

    fn fresh_journal(&self) -> Result<Box<dyn Journal>, ApiError> {
        match (&self.memory_journal, &self.dir) {
            (Some(m), _) => Ok(Box::new(m.clone())),
            (None, Some(dir)) => Ok(Box::new(FileJournal::open(dir.join(JOURNAL_FILE))?.0)),
            (None, None) => Ok(Box::new(MemoryJournal::new())),
        }
    }

    pub fn refresh_status(&mut self, now_us: i64) {
        let now = Timestamp(now_us.div_euclid(1_000_000));
        let states = node_states(&self.scheduler, &self.status.faults, now);
        self.status.refresh(states, now_us);
    }

    fn persist_snapshot(&mut self) -> Result<(), ApiError> {
        if self.scheduler.last_seq() == self.persisted_seq {
            return Ok(());
        }
        if let Some(dir) = &self.dir {
            let json = serde_json::to_vec_pretty(&self.scheduler.snapshot())
                .map_err(|e| ApiError::new("InternalError", e.to_string()))?;
            write_durable(&dir.join(SNAPSHOT_FILE), &json)?;
        }
        self.persisted_seq = self.scheduler.last_seq();
        Ok(())
    }

    pub fn set_scenario(&mut self, sc: ChannelScenario) -> Result<(), ApiError> {
        sc.validate()?;
        if let Some(dir) = &self.dir {
            let json = serde_json::to_vec_pretty(&sc).map_err(|e| ApiError::new("InternalError", e.to_string()))?;
            write_durable(&dir.join(SCENARIO_FILE), &json)?;
        }
        self.scenario = Some(sc);
        Ok(())
    }

    /// Rebuilds the scheduler from its journal against a new inventory.
    /// Refused while anything is Active; a journal that no longer replays
    /// leaves the old inventory in force.
    pub fn reload_inventory(&mut self, inv: Inventory) -> Result<(), ApiError> {
        if let Some(r) = self.scheduler.reservations().find(|r| r.state == ReservationState::Active) {
            return Err(ApiError::new("ConflictError", format!("{} is Active; complete it before reloading", r.id)));
        }
        let events = self.journal_entries()?;
        let config = self.scheduler.config().clone();
        let journal = self.fresh_journal()?;
        let scheduler = Scheduler::replay(Arc::new(inv.clone()), config, &events, journal)
            .map_err(|e| ApiError::new("ConflictError", format!("journal does not replay on the new inventory: {e}")))?;
        if let Some(dir) = &self.dir {
            write_durable(&dir.join(INVENTORY_FILE), inv.to_toml().as_bytes())?;
        }
        self.scheduler = scheduler;
        Ok(())
    }
}

pub struct AppState {
    pub core: RwLock<Core>,
    pub clock: Arc<dyn Clock>,
    pub sessions: Vec<Session>,
    pub inventory_path: Option<PathBuf>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("sessions", &self.sessions.len()).finish()
    }
}

pub(crate) fn write_durable(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
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

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> ApiError {
        ApiError::new("IoError", e.to_string())
    }
}

fn read_inventory(config: &ServeConfig) -> Result<Inventory, ApiError> {
    if let Some(dir) = &config.state_dir {
        let p = dir.join(INVENTORY_FILE);
        if p.exists() {
            return Ok(Inventory::from_path(p)?);
        }
    }
    match &config.inventory_path {
        Some(p) => Ok(Inventory::from_path(p)?),
        None => Ok(Inventory::testbed_default()),
    }
}

/// Rebuilds the scheduler recorded in `dir` without taking it over.
pub fn replay_state_dir(dir: &Path, config: SchedulerConfig) -> Result<Scheduler, ApiError> {
    let inv = Inventory::from_path(dir.join(INVENTORY_FILE))?;
    let (journal, events) = FileJournal::open(dir.join(JOURNAL_FILE))?;
    Ok(Scheduler::replay(Arc::new(inv), config, &events, Box::new(journal))?)
}

impl AppState {
    /// Loads or creates server state and emits the initial node status.
    pub fn open(config: ServeConfig, clock: Arc<dyn Clock>) -> Result<AppState, ApiError> {
        let inv = read_inventory(&config)?;
        let (scheduler, data, scenario, memory_journal) = match &config.state_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                write_durable(&dir.join(INVENTORY_FILE), inv.to_toml().as_bytes())?;
                let (journal, events) = FileJournal::open(dir.join(JOURNAL_FILE))?;
                let sched = Scheduler::replay(Arc::new(inv), config.scheduler.clone(), &events, Box::new(journal))?;
                let data = DataStore::open(dir.join(DATA_DIR))?;
                let sc_path = dir.join(SCENARIO_FILE);
                let scenario = if sc_path.exists() {
                    let bytes = fs::read(&sc_path)?;
                    Some(
                        serde_json::from_slice::<ChannelScenario>(&bytes)
                            .map_err(|e| ApiError::new("RecoveryError", format!("{}: {e}", sc_path.display())))?,
                    )
                } else {
                    None
                };
                (sched, data, scenario, None)
            }
            None => {
                let mem = MemoryJournal::new();
                let sched = Scheduler::new(Arc::new(inv), config.scheduler.clone(), Box::new(mem.clone()));
                (sched, DataStore::in_memory(), None, Some(mem))
            }
        };
        let mut core = Core {
            scheduler,
            data,
            scenario,
            status: StatusTracker::new(),
            memory_journal,
            dir: config.state_dir.clone(),
            persisted_seq: u64::MAX,
        };
        core.refresh_status(clock.now_us());
        core.persist_snapshot()?;
        Ok(AppState {
            core: RwLock::new(core),
            clock,
            sessions: config.sessions,
            inventory_path: config.inventory_path,
        })
    }

    pub fn session(&self, token: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.token == token)
    }

    /// Runs `f` under the write lock. Stale tentative holds are expired
    /// first; node status and the scheduler snapshot are brought up to date
    /// afterwards, whether or not `f` succeeded.
    pub async fn write<T>(&self, f: impl FnOnce(&mut Core, Timestamp) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut core = self.core.write().await;
        let now_us = self.clock.now_us();
        let now = Timestamp(now_us.div_euclid(1_000_000));
        core.scheduler.expire_tentative(now)?;
        let out = f(&mut core, now);
        core.refresh_status(now_us);
        core.persist_snapshot()?;
        out
    }

    /// Expiry and status refresh with nothing else.
    pub async fn maintain(&self) -> Result<(), ApiError> {
        self.write(|_, _| Ok(())).await
    }
}
