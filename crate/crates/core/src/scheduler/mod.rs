//! Reservation lifecycle over the shared inventory.
//!
//! ```text
//! Requested -> Tentative -> Confirmed ------> Active -> Completed
//!                  |    \-> PendingReview -/
//!                  \-> Denied <-----/
//! any non-terminal state -> Cancelled
//! ```
//!
//! Every mutation is first journaled as one [`Event`] and then applied, so
//! the calendar can be rebuilt exactly by [`Scheduler::replay`]. Operations
//! validate everything before journaling; a failed operation leaves no
//! trace.

mod conflict;
mod journal;
mod report;
mod spec;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::allocator::{AllocError, Allocation, Allocator, SpectrumBlock};
use crate::inventory::Inventory;
use crate::{ReservationId, Timestamp, TimeWindow};

pub use conflict::{detect_conflicts, Conflict, ConflictKind};
pub use journal::{
    Envelope, Event, FileJournal, Journal, MemoryJournal, NullJournal, RecoveryError,
};
pub use report::{utilization_report, UtilizationBucket};
pub use spec::{Channel, ComputeSpec, NetworkSpec, RadioSpec, ResourceSpec, SpecRejection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReservationState {
    Requested,
    Tentative,
    PendingReview,
    Confirmed,
    Denied,
    Active,
    Completed,
    Cancelled,
}

impl ReservationState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ReservationState::Denied | ReservationState::Completed | ReservationState::Cancelled
        )
    }

    /// Edges of the lifecycle graph.
    pub fn can_transition(self, to: ReservationState) -> bool {
        use ReservationState::*;
        match (self, to) {
            (Requested, Tentative)
            | (Tentative, Confirmed | PendingReview | Denied)
            | (PendingReview, Confirmed | Denied)
            | (Confirmed, Active)
            | (Active, Completed) => true,
            (from, Cancelled) => !from.is_terminal(),
            _ => false,
        }
    }
}

/// Outcome of automatic admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Confirmed,
    PendingReview,
    Denied,
}

impl From<Admission> for ReservationState {
    fn from(a: Admission) -> Self {
        match a {
            Admission::Confirmed => ReservationState::Confirmed,
            Admission::PendingReview => ReservationState::PendingReview,
            Admission::Denied => ReservationState::Denied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub t: Timestamp,
    pub actor: String,
    /// `None` for the creation entry.
    pub from: Option<ReservationState>,
    /// `None` for notes that do not change state.
    pub to: Option<ReservationState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub const SURVEY_QUESTIONS: [&str; 3] = [
    "Were the allocated resources adequate for your experiment?",
    "How did your actual usage compare with the scheduled window?",
    "Any other comments on the testbed or this session?",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurveyResponses {
    pub resources_adequate: Option<bool>,
    #[serde(default)]
    pub usage_comparison: String,
    #[serde(default)]
    pub comments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyForm {
    pub reservation_id: ReservationId,
    pub questions: Vec<String>,
    pub scheduled_seconds: i64,
    pub actual_seconds: i64,
    pub responses: Option<SurveyResponses>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourcesHeld {
    pub devices: Vec<String>,
    pub cores: u32,
    pub ram_gb: u64,
    pub storage_gb: u64,
    pub network_bps: f64,
    pub spectrum_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub reservation_id: ReservationId,
    pub scheduled_seconds: i64,
    pub actual_seconds: i64,
    pub resources_held: ResourcesHeld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub id: ReservationId,
    pub user: String,
    pub window: TimeWindow,
    pub spec: ResourceSpec,
    pub state: ReservationState,
    pub survey: Option<SurveyForm>,
    pub audit: Vec<AuditEntry>,
    pub created_utc: Timestamp,
    pub activated_utc: Option<Timestamp>,
    /// When an Active reservation stopped holding resources.
    pub ended_utc: Option<Timestamp>,
    /// Conflicts found by the last admission check.
    #[serde(default)]
    pub conflicts: Vec<Conflict>,
}

impl Reservation {
    /// A reservation in `Requested` with its creation audit entry. Used by the
    /// scheduler and handy for exercising the allocator directly.
    pub fn new(id: ReservationId, user: String, window: TimeWindow, spec: ResourceSpec) -> Reservation {
        Reservation {
            audit: vec![AuditEntry {
                t: window.start_utc,
                actor: user.clone(),
                from: None,
                to: Some(ReservationState::Requested),
                note: None,
            }],
            id,
            user,
            window,
            spec,
            state: ReservationState::Requested,
            survey: None,
            created_utc: window.start_utc,
            activated_utc: None,
            ended_utc: None,
            conflicts: Vec::new(),
        }
    }

    /// Whether the audit trail is a walk through the lifecycle graph that
    /// ends in the current state.
    pub fn audit_is_legal(&self) -> bool {
        let mut state: Option<ReservationState> = None;
        for entry in &self.audit {
            let Some(to) = entry.to else {
                if entry.from != state {
                    return false;
                }
                continue;
            };
            let ok = match (state, entry.from) {
                (None, None) => to == ReservationState::Requested,
                (Some(s), Some(f)) => s == f && s.can_transition(to),
                _ => false,
            };
            if !ok {
                return false;
            }
            state = Some(to);
        }
        state == Some(self.state)
    }

    fn transition(&mut self, t: Timestamp, actor: &str, to: ReservationState, note: Option<String>) {
        debug_assert!(self.state.can_transition(to), "{:?} -> {to:?}", self.state);
        self.audit.push(AuditEntry {
            t,
            actor: actor.to_owned(),
            from: Some(self.state),
            to: Some(to),
            note,
        });
        self.state = to;
    }

    fn note(&mut self, t: Timestamp, actor: &str, note: String) {
        self.audit.push(AuditEntry {
            t,
            actor: actor.to_owned(),
            from: Some(self.state),
            to: None,
            note: Some(note),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Longest reservation that can be confirmed without review.
    pub auto_approve_max_s: i64,
    /// Largest share of any resource class confirmed without review.
    pub auto_approve_fraction: f64,
    /// Tentative holds older than this are cancelled by [`Scheduler::expire_tentative`].
    pub tentative_ttl_s: i64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            auto_approve_max_s: 86_400,
            auto_approve_fraction: 0.25,
            tentative_ttl_s: 900,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchedError {
    #[error(transparent)]
    Rejected(#[from] SpecRejection),
    #[error("StateError: {id} is {state:?}; {op} needs {expected}")]
    State {
        id: ReservationId,
        state: ReservationState,
        op: &'static str,
        expected: String,
    },
    #[error("NotFound: no reservation {0}")]
    NotFound(ReservationId),
    #[error(transparent)]
    Allocation(#[from] AllocError),
    #[error("JournalError: {0}")]
    Journal(#[from] std::io::Error),
}

impl SchedError {
    /// Short error name as exposed to API clients.
    pub fn name(&self) -> &'static str {
        match self {
            SchedError::Rejected(SpecRejection::Spec { .. }) => "SpecError",
            SchedError::Rejected(SpecRejection::License { .. }) => "LicenseError",
            SchedError::Rejected(SpecRejection::Capacity { .. }) => "CapacityError",
            SchedError::State { .. } => "StateError",
            SchedError::NotFound(_) => "NotFound",
            SchedError::Allocation(_) => "AllocationError",
            SchedError::Journal(_) => "JournalError",
        }
    }
}

/// Serializable view of the whole scheduler state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSnapshot {
    pub last_seq: u64,
    pub reservations: Vec<Reservation>,
    pub usage: Vec<UsageRecord>,
    pub allocations: Vec<Allocation>,
    pub blocks: Vec<SpectrumBlock>,
}

pub struct Scheduler {
    inventory: Arc<Inventory>,
    config: SchedulerConfig,
    reservations: BTreeMap<ReservationId, Reservation>,
    allocator: Allocator,
    usage: BTreeMap<ReservationId, UsageRecord>,
    last_seq: u64,
    journal: Box<dyn Journal>,
}

impl std::fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scheduler")
            .field("reservations", &self.reservations.len())
            .field("last_seq", &self.last_seq)
            .finish()
    }
}

impl Scheduler {
    pub fn new(inventory: Arc<Inventory>, config: SchedulerConfig, journal: Box<dyn Journal>) -> Scheduler {
        Scheduler {
            allocator: Allocator::new(inventory.clone()),
            inventory,
            config,
            reservations: BTreeMap::new(),
            usage: BTreeMap::new(),
            last_seq: 0,
            journal,
        }
    }

    /// Scheduler with default thresholds that journals nowhere.
    pub fn in_memory(inventory: Arc<Inventory>) -> Scheduler {
        Scheduler::new(inventory, SchedulerConfig::default(), Box::new(NullJournal))
    }

    /// Rebuilds state from journaled events. Subsequent mutations go to
    /// `journal`, which should already contain `events`.
    pub fn replay(
        inventory: Arc<Inventory>,
        config: SchedulerConfig,
        events: &[Envelope],
        journal: Box<dyn Journal>,
    ) -> Result<Scheduler, RecoveryError> {
        let mut s = Scheduler::new(inventory, config, journal);
        for env in events {
            s.apply(env).map_err(|reason| RecoveryError::Replay {
                seq: env.seq,
                reason,
            })?;
        }
        Ok(s)
    }

    pub fn inventory(&self) -> &Arc<Inventory> {
        &self.inventory
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn allocator(&self) -> &Allocator {
        &self.allocator
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn get(&self, id: &ReservationId) -> Option<&Reservation> {
        self.reservations.get(id)
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.reservations.values()
    }

    pub fn usage(&self) -> impl Iterator<Item = &UsageRecord> {
        self.usage.values()
    }

    pub fn surveys(&self) -> impl Iterator<Item = &SurveyForm> {
        self.reservations.values().filter_map(|r| r.survey.as_ref())
    }

    /// Reservations whose windows intersect `[from, to)`, by start time.
    pub fn schedule(&self, from: Timestamp, to: Timestamp) -> Vec<&Reservation> {
        let range = TimeWindow { start_utc: from, end_utc: to };
        let mut out: Vec<&Reservation> = self
            .reservations
            .values()
            .filter(|r| r.window.overlaps(&range))
            .collect();
        out.sort_by(|a, b| a.window.start_utc.cmp(&b.window.start_utc).then(a.id.cmp(&b.id)));
        out
    }

    pub fn snapshot(&self) -> SchedulerSnapshot {
        SchedulerSnapshot {
            last_seq: self.last_seq,
            reservations: self.reservations.values().cloned().collect(),
            usage: self.usage.values().cloned().collect(),
            allocations: self.allocator.live().cloned().collect(),
            blocks: self.allocator.blocks().cloned().collect(),
        }
    }

    fn lookup(&self, id: &ReservationId) -> Result<&Reservation, SchedError> {
        self.reservations
            .get(id)
            .ok_or_else(|| SchedError::NotFound(id.clone()))
    }

    fn expect_state(
        &self,
        id: &ReservationId,
        op: &'static str,
        allowed: &[ReservationState],
    ) -> Result<&Reservation, SchedError> {
        let res = self.lookup(id)?;
        if !allowed.contains(&res.state) {
            return Err(SchedError::State {
                id: id.clone(),
                state: res.state,
                op,
                expected: format!("{allowed:?}"),
            });
        }
        Ok(res)
    }

    /// Journals `event` and applies it.
    fn record(&mut self, t: Timestamp, actor: &str, event: Event) -> Result<(), SchedError> {
        let env = Envelope {
            seq: self.last_seq + 1,
            t,
            actor: actor.to_owned(),
            event,
        };
        self.journal.append(&env)?;
        self.apply(&env)
            .expect("validated events apply cleanly");
        Ok(())
    }

    /// Applies one journaled event to in-memory state.
    fn apply(&mut self, env: &Envelope) -> Result<(), String> {
        if env.seq != self.last_seq + 1 {
            return Err(format!("expected seq {}, got {}", self.last_seq + 1, env.seq));
        }
        let t = env.t;
        let actor = env.actor.as_str();
        let id = env.event.reservation_id().clone();
        let missing = || format!("unknown reservation {id}");
        let check = |res: &Reservation, to: ReservationState| {
            if res.state.can_transition(to) {
                Ok(())
            } else {
                Err(format!("{}: illegal transition {:?} -> {to:?}", res.id, res.state))
            }
        };
        match &env.event {
            Event::Requested { user, window, spec, .. } => {
                if self.reservations.contains_key(&id) {
                    return Err(format!("duplicate reservation {id}"));
                }
                let mut res = Reservation::new(id.clone(), user.clone(), *window, spec.clone());
                res.created_utc = t;
                res.audit[0].t = t;
                res.transition(t, actor, ReservationState::Tentative, None);
                self.reservations.insert(id, res);
            }
            Event::Evaluated { outcome, conflicts, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                let to = ReservationState::from(*outcome);
                check(res, to)?;
                res.conflicts = conflicts.clone();
                res.transition(t, actor, to, None);
            }
            Event::Reviewed { approve, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                if res.state != ReservationState::PendingReview {
                    return Err(format!("{id} is not pending review"));
                }
                let to = if *approve {
                    ReservationState::Confirmed
                } else {
                    ReservationState::Denied
                };
                let verb = if *approve { "approved" } else { "denied" };
                res.transition(t, actor, to, Some(format!("{verb} by {actor}")));
            }
            Event::Activated { allocation, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                check(res, ReservationState::Active)?;
                self.allocator
                    .commit(allocation.clone())
                    .map_err(|e| e.to_string())?;
                res.activated_utc = Some(t);
                res.transition(t, actor, ReservationState::Active, None);
            }
            Event::ActivationFailed { reason, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                res.note(t, actor, format!("activation failed: {reason}"));
            }
            Event::Completed { usage, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                check(res, ReservationState::Completed)?;
                self.allocator.release(&id);
                res.ended_utc = Some(t);
                res.transition(t, actor, ReservationState::Completed, None);
                res.survey = Some(SurveyForm {
                    reservation_id: id.clone(),
                    questions: SURVEY_QUESTIONS.iter().map(|q| q.to_string()).collect(),
                    scheduled_seconds: usage.scheduled_seconds,
                    actual_seconds: usage.actual_seconds,
                    responses: None,
                });
                self.usage.insert(id, usage.clone());
            }
            Event::Cancelled { reason, usage, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                check(res, ReservationState::Cancelled)?;
                if res.state == ReservationState::Active {
                    self.allocator.release(&id);
                    res.ended_utc = Some(t);
                }
                res.transition(t, actor, ReservationState::Cancelled, Some(reason.clone()));
                if let Some(u) = usage {
                    self.usage.insert(id, u.clone());
                }
            }
            Event::SurveySubmitted { responses, .. } => {
                let res = self.reservations.get_mut(&id).ok_or_else(missing)?;
                let form = res
                    .survey
                    .as_mut()
                    .ok_or_else(|| format!("{id} has no survey"))?;
                if form.responses.is_some() {
                    return Err(format!("{id} survey already answered"));
                }
                form.responses = Some(responses.clone());
            }
        }
        self.last_seq = env.seq;
        Ok(())
    }

    /// Validates a request and records it as a Tentative hold.
    pub fn request_reservation(
        &mut self,
        user: &str,
        window: TimeWindow,
        spec: ResourceSpec,
        now: Timestamp,
    ) -> Result<Reservation, SchedError> {
        if !window.is_well_formed() {
            return Err(SpecRejection::Spec {
                field: "window".into(),
                reason: "start_utc must precede end_utc".into(),
            }
            .into());
        }
        if user.is_empty() {
            return Err(SpecRejection::Spec {
                field: "user".into(),
                reason: "empty user".into(),
            }
            .into());
        }
        spec.validate(&self.inventory)?;
        let id = ReservationId::from_seq(self.reservations.len() as u64 + 1);
        self.record(
            now,
            user,
            Event::Requested {
                id: id.clone(),
                user: user.to_owned(),
                window,
                spec,
            },
        )?;
        Ok(self.reservations[&id].clone())
    }

    /// Conflicts `id` would have against the rest of the calendar.
    pub fn detect_conflicts(&self, id: &ReservationId) -> Result<Vec<Conflict>, SchedError> {
        let res = self.lookup(id)?;
        Ok(detect_conflicts(res, self.reservations.values(), &self.inventory))
    }

    /// Decision automatic admission would take for a Tentative reservation,
    /// without recording it.
    pub fn admission_for(&self, res: &Reservation) -> (Admission, Vec<Conflict>) {
        let conflicts = detect_conflicts(res, self.reservations.values(), &self.inventory);
        if !conflicts.is_empty() {
            return (Admission::Denied, conflicts);
        }
        let inv = &self.inventory;
        let spec = &res.spec;
        let frac = |q: f64, total: f64| if total > 0.0 { q / total } else if q > 0.0 { f64::INFINITY } else { 0.0 };
        let fractions = [
            frac(spec.radio.n_usrps as f64, inv.sdr_devices.len() as f64),
            frac(
                spec.compute.cpu_cores as f64,
                inv.compute_nodes.iter().map(|n| n.cores as f64).sum(),
            ),
            frac(
                spec.compute.ram_gb as f64,
                inv.compute_nodes.iter().map(|n| n.ram_gb as f64).sum(),
            ),
            frac(
                spec.compute.storage_gb as f64,
                inv.compute_nodes.iter().map(|n| n.storage_gb as f64).sum(),
            ),
            frac(spec.network.requested_bps, inv.fabric.capacity_bps()),
        ];
        let small = fractions.iter().all(|&f| f <= self.config.auto_approve_fraction);
        let short = res.window.duration_s() <= self.config.auto_approve_max_s;
        let outcome = if small && short {
            Admission::Confirmed
        } else {
            Admission::PendingReview
        };
        (outcome, Vec::new())
    }

    /// Runs automatic admission on a Tentative reservation.
    pub fn evaluate_admission(&mut self, id: &ReservationId, now: Timestamp) -> Result<Reservation, SchedError> {
        let res = self.expect_state(id, "evaluate", &[ReservationState::Tentative])?;
        let (outcome, conflicts) = self.admission_for(res);
        self.record(
            now,
            "scheduler",
            Event::Evaluated {
                id: id.clone(),
                outcome,
                conflicts,
            },
        )?;
        Ok(self.reservations[id].clone())
    }

    /// Administrator decision on a PendingReview reservation.
    pub fn review_decision(
        &mut self,
        id: &ReservationId,
        admin: &str,
        approve: bool,
        now: Timestamp,
    ) -> Result<Reservation, SchedError> {
        self.expect_state(id, "review", &[ReservationState::PendingReview])?;
        self.record(now, admin, Event::Reviewed { id: id.clone(), approve })?;
        Ok(self.reservations[id].clone())
    }

    /// Binds resources and starts a Confirmed reservation inside its window.
    /// If the allocator cannot bind, the reservation stays Confirmed with an
    /// audit note and the allocation error is returned.
    pub fn activate(&mut self, id: &ReservationId, actor: &str, now: Timestamp) -> Result<Reservation, SchedError> {
        let res = self.expect_state(id, "activate", &[ReservationState::Confirmed])?;
        if !res.window.contains(now) {
            return Err(SchedError::State {
                id: id.clone(),
                state: res.state,
                op: "activate",
                expected: format!(
                    "a time inside [{}, {}), got {now}",
                    res.window.start_utc, res.window.end_utc
                ),
            });
        }
        match self.allocator.plan(res) {
            Ok(allocation) => {
                self.record(now, actor, Event::Activated { id: id.clone(), allocation })?;
                Ok(self.reservations[id].clone())
            }
            Err(e) => {
                self.record(
                    now,
                    actor,
                    Event::ActivationFailed {
                        id: id.clone(),
                        reason: e.to_string(),
                    },
                )?;
                Err(e.into())
            }
        }
    }

    fn usage_for(&self, res: &Reservation, now: Timestamp) -> UsageRecord {
        let started = res.activated_utc.unwrap_or(now);
        let held = match self.allocator.get(&res.id) {
            Some(a) => ResourcesHeld {
                devices: a.devices.clone(),
                cores: a.vm_placements.iter().map(|v| v.cores).sum(),
                ram_gb: a.vm_placements.iter().map(|v| v.ram_gb).sum(),
                storage_gb: a.vm_placements.iter().map(|v| v.storage_gb).sum(),
                network_bps: a.network_bps_reserved,
                spectrum_hz: a.slots.iter().map(|s| s.slot.bw_hz).sum(),
            },
            None => ResourcesHeld::default(),
        };
        UsageRecord {
            reservation_id: res.id.clone(),
            scheduled_seconds: res.window.duration_s(),
            actual_seconds: now.seconds_since(started).max(0),
            resources_held: held,
        }
    }

    /// Ends an Active reservation: releases its allocation, writes the usage
    /// ledger entry and issues the survey.
    pub fn complete(
        &mut self,
        id: &ReservationId,
        actor: &str,
        now: Timestamp,
    ) -> Result<(Reservation, SurveyForm), SchedError> {
        let res = self.expect_state(id, "complete", &[ReservationState::Active])?;
        let usage = self.usage_for(res, now);
        self.record(now, actor, Event::Completed { id: id.clone(), usage })?;
        let res = self.reservations[id].clone();
        let survey = res.survey.clone().expect("completion issues a survey");
        Ok((res, survey))
    }

    pub fn cancel(
        &mut self,
        id: &ReservationId,
        actor: &str,
        reason: &str,
        now: Timestamp,
    ) -> Result<Reservation, SchedError> {
        let res = self.lookup(id)?;
        if res.state.is_terminal() {
            return Err(SchedError::State {
                id: id.clone(),
                state: res.state,
                op: "cancel",
                expected: "a non-terminal state".into(),
            });
        }
        let usage = (res.state == ReservationState::Active).then(|| self.usage_for(res, now));
        self.record(
            now,
            actor,
            Event::Cancelled {
                id: id.clone(),
                reason: reason.to_owned(),
                usage,
            },
        )?;
        Ok(self.reservations[id].clone())
    }

    pub fn submit_survey(
        &mut self,
        id: &ReservationId,
        responses: SurveyResponses,
        now: Timestamp,
    ) -> Result<SurveyForm, SchedError> {
        let res = self.expect_state(id, "survey", &[ReservationState::Completed])?;
        if res.survey.as_ref().is_some_and(|s| s.responses.is_some()) {
            return Err(SchedError::State {
                id: id.clone(),
                state: res.state,
                op: "survey",
                expected: "an unanswered survey".into(),
            });
        }
        let user = res.user.clone();
        self.record(now, &user, Event::SurveySubmitted { id: id.clone(), responses })?;
        Ok(self.reservations[id].survey.clone().expect("survey present"))
    }

    /// Cancels Tentative holds that were never evaluated within the TTL.
    /// Returns the ids that expired.
    pub fn expire_tentative(&mut self, now: Timestamp) -> Result<Vec<ReservationId>, SchedError> {
        let ttl = self.config.tentative_ttl_s;
        let stale: Vec<ReservationId> = self
            .reservations
            .values()
            .filter(|r| r.state == ReservationState::Tentative && now.seconds_since(r.created_utc) >= ttl)
            .map(|r| r.id.clone())
            .collect();
        for id in &stale {
            self.record(
                now,
                "scheduler",
                Event::Cancelled {
                    id: id.clone(),
                    reason: "tentative hold expired".into(),
                    usage: None,
                },
            )?;
        }
        Ok(stale)
    }

    pub fn utilization_report(&self, from: Timestamp, to: Timestamp, bucket_s: i64) -> Vec<UtilizationBucket> {
        utilization_report(self.reservations.values(), &self.inventory, from, to, bucket_s)
    }
}
