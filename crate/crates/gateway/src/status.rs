//! Per-node live status and the event history behind `/v1/events`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use cornet_core::scheduler::{ReservationState, Scheduler};
use cornet_core::{ReservationId, Timestamp};

/// Events kept for resuming streams.
pub const HISTORY_LIMIT: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Idle,
    Reserved,
    Active,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatusEvent {
    /// Stream position, gap-free from 1 within one server run.
    pub id: u64,
    pub node_id: String,
    pub state: NodeState,
    /// Microseconds since the Unix epoch; strictly increasing per node.
    pub t_utc_us: i64,
    pub owner: Option<ReservationId>,
}

/// What each radio node is doing right now.
///
/// Active: one of its radios is bound to an Active reservation. Reserved: a
/// Confirmed reservation whose window covers `now` would bind one of its
/// radios if activated now, planned in id order. Fault: flagged by an
/// administrator, which overrides the rest.
pub fn node_states(
    sched: &Scheduler,
    faults: &BTreeSet<String>,
    now: Timestamp,
) -> BTreeMap<String, (NodeState, Option<ReservationId>)> {
    let inv = sched.inventory();
    let mut out: BTreeMap<String, (NodeState, Option<ReservationId>)> = inv
        .sdr_devices
        .iter()
        .map(|d| (d.node_id.clone(), (NodeState::Idle, None)))
        .collect();
    let node_of = |device: &str| inv.device(device).map(|d| d.node_id.clone());
    let mut planner = sched.allocator().clone();
    let mut waiting: Vec<_> = sched
        .reservations()
        .filter(|r| r.state == ReservationState::Confirmed && r.window.contains(now) && r.spec.radio.n_usrps > 0)
        .collect();
    waiting.sort_by(|a, b| a.id.cmp(&b.id));
    for r in waiting {
        if let Ok(plan) = planner.plan(r) {
            for d in &plan.devices {
                if let Some(slot) = node_of(d).and_then(|n| out.get_mut(&n)) {
                    if slot.0 == NodeState::Idle {
                        *slot = (NodeState::Reserved, Some(r.id.clone()));
                    }
                }
            }
            let _ = planner.commit(plan);
        }
    }
    for a in sched.allocator().live() {
        for d in &a.devices {
            if let Some(slot) = node_of(d).and_then(|n| out.get_mut(&n)) {
                *slot = (NodeState::Active, Some(a.reservation_id.clone()));
            }
        }
    }
    for f in faults {
        if let Some(slot) = out.get_mut(f) {
            *slot = (NodeState::Fault, slot.1.clone());
        }
    }
    out
}

#[derive(Debug)]
pub struct StatusTracker {
    current: BTreeMap<String, NodeStatusEvent>,
    pub faults: BTreeSet<String>,
    history: VecDeque<NodeStatusEvent>,
    next_id: u64,
    tx: broadcast::Sender<NodeStatusEvent>,
}

impl StatusTracker {
    pub fn new() -> StatusTracker {
        let (tx, _) = broadcast::channel(1024);
        StatusTracker {
            current: BTreeMap::new(),
            faults: BTreeSet::new(),
            history: VecDeque::new(),
            next_id: 1,
            tx,
        }
    }

    /// Latest event per node.
    pub fn current(&self) -> Vec<NodeStatusEvent> {
        self.current.values().cloned().collect()
    }

    pub fn last_id(&self) -> u64 {
        self.next_id - 1
    }

    /// Retained events after `last_id`, plus a receiver for everything that
    /// follows. Taken under one borrow so nothing falls between the two.
    pub fn subscribe_after(&self, last_id: u64) -> (Vec<NodeStatusEvent>, broadcast::Receiver<NodeStatusEvent>) {
        // An id from a previous server run (beyond our counter) replays everything.
        let from = if last_id > self.last_id() { 0 } else { last_id };
        let backlog = self.history.iter().filter(|e| e.id > from).cloned().collect();
        (backlog, self.tx.subscribe())
    }

    /// Emits an event for every node whose state or owner changed.
    pub fn refresh(&mut self, states: BTreeMap<String, (NodeState, Option<ReservationId>)>, now_us: i64) -> usize {
        let mut emitted = 0;
        for (node, (state, owner)) in states {
            let prev = self.current.get(&node);
            if prev.is_some_and(|p| p.state == state && p.owner == owner) {
                continue;
            }
            let t_utc_us = prev.map_or(now_us, |p| now_us.max(p.t_utc_us + 1));
            let event = NodeStatusEvent {
                id: self.next_id,
                node_id: node.clone(),
                state,
                t_utc_us,
                owner,
            };
            self.next_id += 1;
            self.history.push_back(event.clone());
            if self.history.len() > HISTORY_LIMIT {
                self.history.pop_front();
            }
            self.current.insert(node, event.clone());
            let _ = self.tx.send(event);
            emitted += 1;
        }
        emitted
    }
}

impl Default for StatusTracker {
    fn default() -> Self {
        StatusTracker::new()
    }
}
