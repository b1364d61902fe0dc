//! Resource-procurement schemes.
//!
//! Every scheme answers two questions: what to launch or retire at each
//! periodic tick, and where a query goes when it arrives. The engine owns the
//! [`ClusterState`] and applies the decisions.
//!
//! | kind         | VM plan                                   | when all slots are busy            |
//! |--------------|-------------------------------------------|------------------------------------|
//! | `reactive`   | size to observed demand once overloaded   | queue                              |
//! | `util_aware` | keep utilization under `theta`            | queue                              |
//! | `exascale`   | peak-hold prediction plus `beta` headroom | queue                              |
//! | `mixed`      | same as `reactive`                        | serverless                         |
//! | `paragon`    | `util_aware`, exascale floor on flat load | serverless for strict queries only |

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::catalog::ModelProfile;
use crate::cloud::{choose_serverless_memory, RateCard, ServerlessPool, VmInstance, VmState};
use crate::error::{Error, Result};
use crate::workload::{peak_to_median_counts, QuerySpec, SloClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Reactive,
    UtilAware,
    Exascale,
    Mixed,
    Paragon,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Reactive,
        PolicyKind::UtilAware,
        PolicyKind::Exascale,
        PolicyKind::Mixed,
        PolicyKind::Paragon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Reactive => "reactive",
            PolicyKind::UtilAware => "util_aware",
            PolicyKind::Exascale => "exascale",
            PolicyKind::Mixed => "mixed",
            PolicyKind::Paragon => "paragon",
        }
    }

    pub fn uses_serverless(self) -> bool {
        matches!(self, PolicyKind::Mixed | PolicyKind::Paragon)
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy kind {s:?}")))
    }
}

/// VM plan paragon runs underneath its routing rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmPlan {
    #[default]
    UtilAware,
    Reactive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    /// Row label in comparisons; defaults to the kind name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: PolicyKind,
    pub theta: f64,
    pub beta: f64,
    pub predictor_window_s: u64,
    pub tick_interval_s: u64,
    pub idle_timeout_s: u64,
    pub p2m_gate_pct: f64,
    pub p2m_window_s: u64,
    pub strict_priority: bool,
    pub paragon_vm_plan: VmPlan,
    /// VMs active at time zero, per model pool.
    pub initial_vms: u32,
    /// Cap on provisioned VMs per model pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_vms: Option<u32>,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            name: None,
            kind: PolicyKind::Reactive,
            theta: 0.8,
            beta: 0.2,
            predictor_window_s: 60,
            tick_interval_s: 10,
            idle_timeout_s: 60,
            p2m_gate_pct: 50.0,
            p2m_window_s: 300,
            strict_priority: true,
            paragon_vm_plan: VmPlan::UtilAware,
            initial_vms: 0,
            max_vms: None,
        }
    }
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            ..Default::default()
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("policy {}: {m}", self.label())));
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return fail("theta must be in (0, 1]");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return fail("beta must be >= 0");
        }
        if self.predictor_window_s == 0 || self.p2m_window_s == 0 {
            return fail("windows must be at least 1 s");
        }
        if self.tick_interval_s == 0 {
            return fail("tick_interval_s must be positive");
        }
        if !(0.0..=100.0).contains(&self.p2m_gate_pct) {
            return fail("p2m_gate_pct must be in [0, 100]");
        }
        if let Some(max) = self.max_vms {
            if self.initial_vms > max {
                return fail("initial_vms exceeds max_vms");
            }
        }
        Ok(())
    }
}

/// A query waiting for a VM slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Queued {
    /// Index of the query in the run's query list.
    pub query: usize,
    pub class: SloClass,
    pub arrival_ms: u64,
    pub enqueue_ms: u64,
    seq: u64,
}

/// FIFO per class; strict ahead of relaxed unless priority is off.
#[derive(Clone, Debug, Default)]
pub struct RequestQueue {
    strict: VecDeque<Queued>,
    relaxed: VecDeque<Queued>,
    strict_priority: bool,
    next_seq: u64,
}

impl RequestQueue {
    pub fn new(strict_priority: bool) -> Self {
        RequestQueue {
            strict_priority,
            ..Default::default()
        }
    }

    pub fn push(&mut self, query: usize, class: SloClass, arrival_ms: u64, now_ms: u64) {
        let q = Queued {
            query,
            class,
            arrival_ms,
            enqueue_ms: now_ms,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        match class {
            SloClass::Strict => self.strict.push_back(q),
            SloClass::Relaxed => self.relaxed.push_back(q),
        }
    }

    pub fn pop(&mut self) -> Option<Queued> {
        let take_strict = match (self.strict.front(), self.relaxed.front()) {
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return None,
            (Some(s), Some(r)) => self.strict_priority || s.seq < r.seq,
        };
        if take_strict {
            self.strict.pop_front()
        } else {
            self.relaxed.pop_front()
        }
    }

    pub fn len(&self) -> usize {
        self.strict.len() + self.relaxed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strict.is_empty() && self.relaxed.is_empty()
    }
}

/// Serving state of one model pool.
#[derive(Clone, Debug)]
pub struct ClusterState {
    pub vm_type: String,
    /// Every VM ever launched for this pool, in id order.
    pub vms: Vec<VmInstance>,
    pub queue: RequestQueue,
    pub functions: BTreeMap<u32, ServerlessPool>,
    /// Arrivals per second since time zero.
    pub arrivals_per_s: Vec<u64>,
    pub slots_per_vm: u32,
    pub vm_exec_ms: u64,
    pub provision_delay_ms: u64,
    pub arrivals_since_tick: u64,
    pub offloaded_since_tick: u64,
}

impl ClusterState {
    pub fn new(vm_type: &str, slots_per_vm: u32, vm_exec_ms: u64, provision_delay_ms: u64, strict_priority: bool) -> Self {
        ClusterState {
            vm_type: vm_type.to_string(),
            vms: Vec::new(),
            queue: RequestQueue::new(strict_priority),
            functions: BTreeMap::new(),
            arrivals_per_s: Vec::new(),
            slots_per_vm,
            vm_exec_ms,
            provision_delay_ms,
            arrivals_since_tick: 0,
            offloaded_since_tick: 0,
        }
    }

    pub fn record_arrival(&mut self, now_ms: u64) {
        let sec = (now_ms / 1000) as usize;
        if self.arrivals_per_s.len() <= sec {
            self.arrivals_per_s.resize(sec + 1, 0);
        }
        self.arrivals_per_s[sec] += 1;
        self.arrivals_since_tick += 1;
    }

    /// Per-second counts of the seconds completed before `now_ms`.
    pub fn completed_history(&self, now_ms: u64) -> Vec<u64> {
        let done = (now_ms / 1000) as usize;
        let mut h: Vec<u64> = self.arrivals_per_s.iter().take(done).copied().collect();
        h.resize(done, 0);
        h
    }

    pub fn vm(&self, id: u32) -> Option<&VmInstance> {
        self.vms.binary_search_by_key(&id, |v| v.id).ok().map(|i| &self.vms[i])
    }

    pub fn vm_mut(&mut self, id: u32) -> Option<&mut VmInstance> {
        self.vms.binary_search_by_key(&id, |v| v.id).ok().map(move |i| &mut self.vms[i])
    }

    pub fn provisioned(&self) -> u32 {
        self.vms.iter().filter(|v| v.is_provisioned()).count() as u32
    }

    pub fn active_slots(&self) -> u32 {
        self.vms.iter().filter(|v| v.is_active()).map(|v| v.total_slots).sum()
    }

    pub fn busy_slots(&self) -> u32 {
        self.vms.iter().filter(|v| v.is_active()).map(|v| v.busy_slots).sum()
    }

    /// Busy over active slots; 0 without active VMs.
    pub fn utilization(&self) -> f64 {
        match self.active_slots() {
            0 => 0.0,
            total => self.busy_slots() as f64 / total as f64,
        }
    }

    /// Lowest-id active VM with a free slot.
    pub fn free_vm(&self) -> Option<&VmInstance> {
        self.vms.iter().find(|v| v.has_free_slot())
    }

    /// Time until the next provisioning VM becomes active.
    pub fn time_to_next_ready(&self, now_ms: u64) -> Option<u64> {
        self.vms
            .iter()
            .filter(|v| v.state == VmState::Provisioning)
            .map(|v| v.ready_ms.saturating_sub(now_ms))
            .min()
    }

    pub fn serverless_in_flight(&self, now_ms: u64) -> u32 {
        self.functions.values().map(|p| p.in_flight(now_ms)).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScalingDecision {
    pub launch: BTreeMap<String, u32>,
    pub terminate: Vec<u32>,
}

impl ScalingDecision {
    pub fn is_empty(&self) -> bool {
        self.launch.values().all(|&n| n == 0) && self.terminate.is_empty()
    }

    pub fn launch_count(&self) -> u32 {
        self.launch.values().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingDecision {
    Assign { vm_id: u32, slot: u32 },
    Serverless { memory_mb: u32 },
    /// Wait for a VM slot. `serverless_infeasible` marks a query the scheme
    /// wanted to offload but no function configuration could serve.
    Enqueue { serverless_infeasible: bool },
}

/// Peak-hold predictor: the largest per-second count in the last `window_s` seconds.
pub fn predict_demand(history: &[u64], window_s: usize) -> f64 {
    let start = history.len().saturating_sub(window_s);
    history[start..].iter().copied().max().unwrap_or(0) as f64
}

/// VMs needed to carry `rate_per_s` when each query holds a slot for `exec_ms`.
pub fn required_vms(rate_per_s: f64, exec_ms: u64, slots: u32) -> u32 {
    assert!(slots >= 1 && exec_ms > 0, "required_vms needs slots >= 1 and exec_ms > 0");
    if rate_per_s <= 0.0 {
        return 0;
    }
    let offered = rate_per_s * exec_ms as f64 / 1000.0;
    // guard against 19.999999 / 4 style float noise before the ceiling
    let vms = offered / slots as f64;
    let rounded = vms.round();
    if (vms - rounded).abs() < 1e-9 {
        rounded as u32
    } else {
        vms.ceil() as u32
    }
}

fn idle_expired(policy: &PolicySpec, vm: &VmInstance, now_ms: u64) -> bool {
    vm.idle_for(now_ms).is_some_and(|idle| idle >= policy.idle_timeout_s * 1000)
}

/// Idle-expired VMs, newest first, at most `limit`.
fn retire_candidates(policy: &PolicySpec, state: &ClusterState, now_ms: u64, limit: u32) -> Vec<u32> {
    state
        .vms
        .iter()
        .rev()
        .filter(|v| idle_expired(policy, v, now_ms))
        .take(limit as usize)
        .map(|v| v.id)
        .collect()
}

fn observed_rate(policy: &PolicySpec, state: &ClusterState) -> f64 {
    state.arrivals_since_tick as f64 / policy.tick_interval_s as f64
}

fn overloaded(state: &ClusterState) -> bool {
    !state.queue.is_empty() || state.offloaded_since_tick > 0
}

/// VMs reactive wants right now, if it is overloaded.
fn reactive_need(policy: &PolicySpec, state: &ClusterState) -> Option<u32> {
    if !overloaded(state) {
        return None;
    }
    // a backlog cannot be worked off before new VMs arrive, so spread it
    // over one provisioning delay rather than one tick
    let drain_s = (state.provision_delay_ms / 1000).max(policy.tick_interval_s) as f64;
    let demand = observed_rate(policy, state) + state.queue.len() as f64 / drain_s;
    let need = required_vms(demand, state.vm_exec_ms, state.slots_per_vm);
    Some(if state.queue.is_empty() { need } else { need.max(1) })
}

/// Launch count and retire list, before the `max_vms` cap.
type Plan = (u32, Vec<u32>);

fn reactive_plan(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> Plan {
    let provisioned = state.provisioned();
    let launch = reactive_need(policy, state).map_or(0, |need| need.saturating_sub(provisioned));
    let retire = retire_candidates(policy, state, now_ms, u32::MAX);
    (launch, retire)
}

fn util_target(policy: &PolicySpec, state: &ClusterState) -> u32 {
    (state.busy_slots() as f64 / (policy.theta * state.slots_per_vm as f64)).ceil() as u32
}

fn util_aware_plan(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> Plan {
    let provisioned = state.provisioned();
    if state.active_slots() == 0 {
        // nothing to measure: bootstrap with reactive sizing
        let launch = if provisioned == 0 {
            reactive_need(policy, state).unwrap_or(0)
        } else {
            0
        };
        return (launch, Vec::new());
    }
    let u = state.utilization();
    if u >= policy.theta {
        return (util_target(policy, state).saturating_sub(provisioned), Vec::new());
    }
    if u < policy.theta / 2.0 {
        let keep = util_target(policy, state).max(1);
        let surplus = provisioned.saturating_sub(keep);
        return (0, retire_candidates(policy, state, now_ms, surplus));
    }
    (0, Vec::new())
}

fn exascale_target(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> u32 {
    let history = state.completed_history(now_ms);
    let predicted = predict_demand(&history, policy.predictor_window_s as usize);
    let target = required_vms(predicted * (1.0 + policy.beta), state.vm_exec_ms, state.slots_per_vm);
    target.max(reactive_need(policy, state).unwrap_or(0))
}

fn exascale_plan(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> Plan {
    let provisioned = state.provisioned();
    let target = exascale_target(policy, state, now_ms);
    let surplus = provisioned.saturating_sub(target);
    (
        target.saturating_sub(provisioned),
        retire_candidates(policy, state, now_ms, surplus),
    )
}

/// Rolling peak-to-median of the per-second counts in the last `p2m_window_s`.
pub fn rolling_peak_to_median(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> Option<f64> {
    let history = state.completed_history(now_ms);
    if history.is_empty() {
        return None;
    }
    let start = history.len().saturating_sub(policy.p2m_window_s as usize);
    Some(peak_to_median_counts(&history[start..]))
}

fn paragon_plan(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> Plan {
    let (mut launch, mut retire) = match policy.paragon_vm_plan {
        VmPlan::UtilAware => util_aware_plan(policy, state, now_ms),
        VmPlan::Reactive => reactive_plan(policy, state, now_ms),
    };
    let flat = rolling_peak_to_median(policy, state, now_ms).is_some_and(|p2m| p2m < policy.p2m_gate_pct);
    if flat {
        // offloading will not pay on flat load: hold exascale's level in VMs
        let floor = exascale_target(policy, state, now_ms);
        let provisioned = state.provisioned();
        launch = launch.max(floor.saturating_sub(provisioned));
        let removable = (provisioned + launch).saturating_sub(floor) as usize;
        retire.truncate(removable);
    }
    (launch, retire)
}

/// Scaling decision for one pool at a periodic tick.
pub fn tick(policy: &PolicySpec, state: &ClusterState, now_ms: u64) -> ScalingDecision {
    let (mut launch, terminate) = match policy.kind {
        PolicyKind::Reactive | PolicyKind::Mixed => reactive_plan(policy, state, now_ms),
        PolicyKind::UtilAware => util_aware_plan(policy, state, now_ms),
        PolicyKind::Exascale => exascale_plan(policy, state, now_ms),
        PolicyKind::Paragon => paragon_plan(policy, state, now_ms),
    };
    if let Some(max) = policy.max_vms {
        let remaining = (max + terminate.len() as u32).saturating_sub(state.provisioned());
        launch = launch.min(remaining);
    }
    let mut decision = ScalingDecision {
        launch: BTreeMap::new(),
        terminate,
    };
    if launch > 0 {
        decision.launch.insert(state.vm_type.clone(), launch);
    }
    decision
}

fn offload(model: &ModelProfile, budget_ms: u64, card: &RateCard) -> RoutingDecision {
    match choose_serverless_memory(model, budget_ms, card, false) {
        Ok(memory_mb) => RoutingDecision::Serverless { memory_mb },
        Err(_) => RoutingDecision::Enqueue {
            serverless_infeasible: true,
        },
    }
}

/// Where an arriving (or re-examined) query goes.
pub fn route(
    policy: &PolicySpec,
    query: &QuerySpec,
    state: &ClusterState,
    now_ms: u64,
    card: &RateCard,
    model: &ModelProfile,
) -> RoutingDecision {
    if let Some(vm) = state.free_vm() {
        return RoutingDecision::Assign {
            vm_id: vm.id,
            slot: vm.busy_slots,
        };
    }
    let elapsed = now_ms.saturating_sub(query.arrival_ms);
    let budget = query.latency_max_ms().saturating_sub(elapsed);
    match policy.kind {
        PolicyKind::Reactive | PolicyKind::UtilAware | PolicyKind::Exascale => RoutingDecision::Enqueue {
            serverless_infeasible: false,
        },
        PolicyKind::Mixed => offload(model, budget, card),
        PolicyKind::Paragon => match query.slo_class {
            SloClass::Relaxed => RoutingDecision::Enqueue {
                serverless_infeasible: false,
            },
            SloClass::Strict => {
                let wait_budget = budget as i64 - state.vm_exec_ms as i64;
                let until_ready = state
                    .time_to_next_ready(now_ms)
                    .unwrap_or(state.provision_delay_ms);
                if wait_budget < until_ready as i64 {
                    offload(model, budget, card)
                } else {
                    RoutingDecision::Enqueue {
                        serverless_infeasible: false,
                    }
                }
            }
        },
    }
}

/// Pops the next waiting query for a free slot, if both exist.
pub fn dequeue_on_slot_free(_policy: &PolicySpec, state: &mut ClusterState, _now_ms: u64) -> Option<(Queued, u32)> {
    let vm_id = state.free_vm()?.id;
    state.queue.pop().map(|q| (q, vm_id))
}
