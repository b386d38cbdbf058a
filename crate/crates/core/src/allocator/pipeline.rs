//! Placement of processing pipelines onto the compute cluster.
//!
//! Tasks are visited in topological order. Each task first tries the hosts
//! of its upstream tasks (heaviest inbound edge first) so that co-located
//! edges cost nothing on the switch, then every other host in inventory
//! order. An edge between two hosts is charged against both hosts' port
//! budgets. The heuristic can miss feasible assignments but never returns an
//! infeasible one.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{AllocError, Allocator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTask {
    pub id: String,
    pub cores: u32,
    pub ram_gb: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEdge {
    pub src: String,
    pub dst: String,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineGraph {
    pub tasks: Vec<PipelineTask>,
    pub edges: Vec<PipelineEdge>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelinePlacement {
    /// task id -> compute node id
    pub assignment: BTreeMap<String, String>,
    /// Switch-port bandwidth charged per host.
    pub port_charge_bps: BTreeMap<String, f64>,
}

impl PipelinePlacement {
    /// Total rate of edges whose endpoints sit on different hosts.
    pub fn cross_node_bps(&self, g: &PipelineGraph) -> f64 {
        g.edges
            .iter()
            .filter(|e| self.assignment.get(&e.src) != self.assignment.get(&e.dst))
            .map(|e| e.rate_bps)
            .sum()
    }
}

impl PipelineGraph {
    /// Task indices in topological order, smallest index first among ready
    /// tasks. Fails on unknown endpoints, duplicate ids, bad rates or cycles.
    pub fn topo_order(&self) -> Result<Vec<usize>, String> {
        let mut index = HashMap::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if index.insert(t.id.as_str(), i).is_some() {
                return Err(format!("duplicate task id {:?}", t.id));
            }
        }
        let mut indegree = vec![0usize; self.tasks.len()];
        let mut succ = vec![Vec::new(); self.tasks.len()];
        for e in &self.edges {
            let (Some(&s), Some(&d)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) else {
                return Err(format!("edge {} -> {} names an unknown task", e.src, e.dst));
            };
            if !(e.rate_bps.is_finite() && e.rate_bps >= 0.0) {
                return Err(format!("edge {} -> {} has an invalid rate", e.src, e.dst));
            }
            succ[s].push(d);
            indegree[d] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..self.tasks.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.tasks.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &d in &succ[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() != self.tasks.len() {
            return Err("pipeline graph has a cycle".into());
        }
        Ok(order)
    }
}

pub fn place_pipeline(g: &PipelineGraph, alloc: &Allocator) -> Result<PipelinePlacement, AllocError> {
    let order = g.topo_order().map_err(AllocError::Placement)?;
    let port_rate = alloc.inventory().fabric.port_rate_bps;
    let mut free: Vec<(String, u32, u64)> = alloc.free_compute();
    let mut port_left: Vec<f64> = vec![port_rate; free.len()];
    let mut host_of: HashMap<&str, usize> = HashMap::new();

    for ti in order {
        let task = &g.tasks[ti];
        let inbound: Vec<(usize, f64)> = g
            .edges
            .iter()
            .filter(|e| e.dst == task.id)
            .map(|e| (host_of[e.src.as_str()], e.rate_bps))
            .collect();

        let mut preferred: Vec<(usize, f64)> = Vec::new();
        for &(h, rate) in &inbound {
            match preferred.iter_mut().find(|(p, _)| *p == h) {
                Some(entry) => entry.1 += rate,
                None => preferred.push((h, rate)),
            }
        }
        preferred.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let candidates = preferred
            .iter()
            .map(|&(h, _)| h)
            .chain(0..free.len())
            .collect::<Vec<_>>();

        let mut chosen = None;
        for h in candidates {
            let (_, cores, ram) = &free[h];
            if *cores < task.cores || *ram < task.ram_gb {
                continue;
            }
            let mut charges: Vec<f64> = vec![0.0; free.len()];
            for &(src_host, rate) in &inbound {
                if src_host != h {
                    charges[src_host] += rate;
                    charges[h] += rate;
                }
            }
            if charges.iter().zip(&port_left).all(|(c, left)| c <= left) {
                chosen = Some((h, charges));
                break;
            }
        }
        let Some((h, charges)) = chosen else {
            return Err(AllocError::Placement(format!(
                "task {:?} ({} cores, {} GB) fits no host with enough port budget",
                task.id, task.cores, task.ram_gb
            )));
        };
        free[h].1 -= task.cores;
        free[h].2 -= task.ram_gb;
        for (left, c) in port_left.iter_mut().zip(&charges) {
            *left -= c;
        }
        host_of.insert(task.id.as_str(), h);
    }

    let mut placement = PipelinePlacement::default();
    for (task, &h) in &host_of {
        placement.assignment.insert((*task).to_owned(), free[h].0.clone());
    }
    for (h, left) in port_left.iter().enumerate() {
        let charged = port_rate - left;
        if charged > 0.0 {
            placement.port_charge_bps.insert(free[h].0.clone(), charged);
        }
    }
    Ok(placement)
}
