//! Request and response bodies shared by the server and the client.

use serde::{Deserialize, Serialize};

use cornet_core::allocator::ClassAccount;
use cornet_core::datamgr::{ArchiveSummary, ConfigSnapshot, ExperimentRecord};
use cornet_core::inventory::CapacityReport;
use cornet_core::scheduler::{Reservation, ResourceSpec, SurveyForm};
use cornet_core::specvirt::iqfile::IqFormat;
use cornet_core::{ReservationId, TimeWindow, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservationRequest {
    pub window: TimeWindow,
    #[serde(default)]
    pub spec: ResourceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub approve: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CancelRequest {
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub reservation: Reservation,
    pub survey: SurveyForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeQuery {
    pub from: Timestamp,
    pub to: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationQuery {
    pub from: Timestamp,
    pub to: Timestamp,
    pub bucket: i64,
}

/// Sample stream of one live spectrum block against a single switch port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockThroughput {
    pub node_id: String,
    pub sample_rate_sps: f64,
    pub required_bps: f64,
    pub port_rate_bps: f64,
    pub fits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResponse {
    pub capacity: CapacityReport,
    pub accounting: Vec<ClassAccount>,
    pub throughput: Vec<BlockThroughput>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReloadRequest {
    /// Inventory document. Without one the server re-reads its inventory file.
    #[serde(default)]
    pub toml: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReloadResponse {
    pub inventory_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRequest {
    pub fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResponse {
    pub scenario_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenExperimentRequest {
    pub reservation_id: ReservationId,
    #[serde(default)]
    pub sample_formats: Vec<IqFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDetail {
    pub summary: ArchiveSummary,
    pub snapshot: ConfigSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendRequest {
    pub records: Vec<ExperimentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendResponse {
    pub appended: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsResponse {
    pub records: Vec<ExperimentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealResponse {
    pub experiment_id: String,
    pub algorithm: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub ok: bool,
    pub last_seq: u64,
    pub now_utc: Timestamp,
}
