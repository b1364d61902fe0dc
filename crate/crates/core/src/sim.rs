//! Deterministic discrete-event engine.
//!
//! One run binds a trace, its per-query constraints, a policy and a rate card.
//! Each model gets its own pool of reference-type VMs and function
//! configurations; all pools share one event queue. The run drains past the
//! end of the trace until every query has finished.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, ModelProfile};
use crate::cloud::{
    billed_duration_ms, serverless_exec_latency, serverless_invocation_cost, serverless_memory_options, vm_capacity,
    vm_cost, RateCard, ServerlessPool, VmBillingStart, VmInstance, VmState,
};
use crate::error::{Error, Result};
use crate::money::Money;
use crate::policy::{self, ClusterState, PolicySpec, RoutingDecision};
use crate::workload::{ArrivalTrace, QuerySpec, SloClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resource {
    Vm(u32),
    Serverless(u32),
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Vm(id) => write!(f, "vm:{id}"),
            Resource::Serverless(mem) => write!(f, "serverless:{mem}"),
        }
    }
}

impl FromStr for Resource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("bad resource {s:?}"));
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: u32 = n.parse().map_err(|_| bad())?;
        match kind {
            "vm" => Ok(Resource::Vm(n)),
            "serverless" => Ok(Resource::Serverless(n)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Resource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    VmReady { pool: u32, vm: u32 },
    RequestComplete { query: u32, resource: Resource },
    Arrival { query: u32 },
    PolicyTick,
    IdleCheck { pool: u32, vm: u32 },
    TraceEnd,
}

impl EventKind {
    /// Same-instant order: capacity first, then completions, then new work.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::VmReady { .. } => 0,
            EventKind::RequestComplete { .. } => 1,
            EventKind::Arrival { .. } => 2,
            EventKind::PolicyTick => 3,
            EventKind::IdleCheck { .. } => 4,
            EventKind::TraceEnd => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub time_ms: u64,
    pub kind: EventKind,
    pub seq: u64,
}

impl SimEvent {
    fn key(&self) -> (u64, u8, u64) {
        (self.time_ms, self.kind.priority(), self.seq)
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue over `(time, priority, seq)`. Pops are checked to be strictly
/// increasing, and nothing may be scheduled to sort before the last pop.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
    last: Option<(u64, u8, u64)>,
}

impl EventQueue {
    pub fn push(&mut self, time_ms: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let ev = SimEvent { time_ms, kind, seq };
        if let Some(last) = self.last {
            assert!(ev.key() > last, "event {:?} scheduled before the current one {last:?}", ev.key());
        }
        self.heap.push(Reverse(ev));
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(ev) = self.heap.pop()?;
        if let Some(last) = self.last {
            assert!(ev.key() > last, "event order violated: {:?} after {last:?}", ev.key());
        }
        self.last = Some(ev.key());
        Some(ev)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub query_id: u64,
    pub model: String,
    pub slo_class: SloClass,
    pub arrival_ms: u64,
    pub start_ms: u64,
    pub finish_ms: u64,
    pub resource: Resource,
    pub cold: bool,
    pub response_ms: u64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmRecord {
    pub id: u32,
    pub model: String,
    pub vm_type: String,
    pub launch_ms: u64,
    pub ready_ms: u64,
    pub terminate_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub query_id: u64,
    pub model: String,
    pub memory_mb: u32,
    pub start_ms: u64,
    /// Warm execution time; cold overheads are derived from the rate card.
    pub exec_ms: u64,
    pub cold: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub vms: Vec<VmRecord>,
    pub invocations: Vec<InvocationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requests: Vec<RequestRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerMode {
    /// Summary only; the report cannot be replayed.
    None,
    /// VM lifetimes and invocations, enough for `replay_verify`.
    #[default]
    Billing,
    /// Billing plus one record per request.
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilSample {
    pub t_ms: u64,
    pub busy_slots: u32,
    pub active_slots: u32,
    pub provisioned_vms: u32,
    pub queued: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub p99_ms: u64,
    pub max_ms: u64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(mut xs: Vec<u64>) -> Self {
        if xs.is_empty() {
            return LatencySummary::default();
        }
        xs.sort_unstable();
        let rank = |p: f64| xs[((p / 100.0 * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1];
        LatencySummary {
            mean_ms: xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64,
            p50_ms: rank(50.0),
            p95_ms: rank(95.0),
            p99_ms: rank(99.0),
            max_ms: *xs.last().unwrap(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub requests: u64,
    pub violations: u64,
    pub serverless: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy_name: String,
    pub policy: PolicySpec,
    pub seed: u64,
    pub repetition: u32,
    pub config_hash: String,
    pub trace_hash: String,
    pub requests: u64,
    pub violations: u64,
    pub slo_violation_pct: f64,
    pub total_cost: Money,
    pub vm_cost: Money,
    pub serverless_cost: Money,
    pub vm_ms_provisioned: u64,
    pub vm_seconds_provisioned: f64,
    pub vms_launched: u64,
    pub peak_vms: u32,
    pub response: LatencySummary,
    pub serverless_invocations: u64,
    pub cold_starts: u64,
    pub serverless_share_pct: f64,
    pub by_class: BTreeMap<SloClass, ClassStats>,
    pub requests_by_model: BTreeMap<String, u64>,
    /// Queries forced onto a function because no VM configuration could take them.
    pub warnings: u64,
    pub events_processed: u64,
    pub utilization: Vec<UtilSample>,
    pub rate_card: RateCard,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger: Option<Ledger>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn mean_utilization(&self) -> f64 {
        let (busy, active) = self
            .utilization
            .iter()
            .fold((0u64, 0u64), |(b, a), s| (b + s.busy_slots as u64, a + s.active_slots as u64));
        if active == 0 {
            0.0
        } else {
            busy as f64 / active as f64
        }
    }
}

struct HashWriter(Sha256);

impl io::Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn sha256_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut w = HashWriter(Sha256::new());
    serde_json::to_writer(&mut w, value)?;
    Ok(hex::encode(w.0.finalize()))
}

pub fn trace_hash(trace: &ArrivalTrace) -> String {
    let mut h = Sha256::new();
    h.update(trace.duration_ms.to_le_bytes());
    for t in &trace.arrivals_ms {
        h.update(t.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub ledger: LedgerMode,
}

pub fn run(
    trace: &ArrivalTrace,
    queries: &[QuerySpec],
    policy: &PolicySpec,
    card: &RateCard,
    catalog: &Catalog,
    seed: u64,
) -> Result<MetricsReport> {
    run_with(trace, queries, policy, card, catalog, seed, RunOptions::default())
}

struct Pool<'a> {
    model: &'a ModelProfile,
    state: ClusterState,
}

struct Engine<'a> {
    policy: &'a PolicySpec,
    card: &'a RateCard,
    queries: &'a [QuerySpec],
    pools: Vec<Pool<'a>>,
    pool_of: Vec<u32>,
    events: EventQueue,
    records: Vec<Option<RequestRecord>>,
    vm_ledger: Vec<VmRecord>,
    invocations: Vec<InvocationRecord>,
    next_vm_id: u32,
    trace_ended: bool,
    completed: usize,
    vm_cost: Money,
    serverless_cost: Money,
    vm_ms: u64,
    launched: u64,
    peak_vms: u32,
    warnings: u64,
    util: Vec<UtilSample>,
    events_processed: u64,
}

pub fn run_with(
    trace: &ArrivalTrace,
    queries: &[QuerySpec],
    policy: &PolicySpec,
    card: &RateCard,
    catalog: &Catalog,
    seed: u64,
    opts: RunOptions,
) -> Result<MetricsReport> {
    policy.validate()?;
    card.validate()?;
    if queries.len() != trace.len() {
        return Err(Error::Validation(format!(
            "{} queries for {} arrivals",
            queries.len(),
            trace.len()
        )));
    }
    if let Some(i) = queries
        .iter()
        .zip(&trace.arrivals_ms)
        .position(|(q, &t)| q.arrival_ms != t)
    {
        return Err(Error::Validation(format!("query {i} does not match its arrival time")));
    }
    if policy.max_vms == Some(0) && !policy.kind.uses_serverless() {
        return Err(Error::Config(format!(
            "policy {} has max_vms 0 but never uses serverless",
            policy.label()
        )));
    }

    let mut pool_index: BTreeMap<&str, u32> = BTreeMap::new();
    let mut pools = Vec::new();
    let mut pool_of = Vec::with_capacity(queries.len());
    let vm_type = card.reference_vm_type.as_str();
    for q in queries {
        let idx = match pool_index.get(q.model_name.as_str()) {
            Some(&i) => i,
            None => {
                let model = catalog
                    .get(&q.model_name)
                    .ok_or_else(|| Error::Validation(format!("query {} names unknown model {}", q.id, q.model_name)))?;
                let slots = vm_capacity(vm_type, model, card)?;
                if policy.max_vms == Some(0) && serverless_memory_options(model, card).next().is_none() {
                    return Err(Error::Config(format!(
                        "model {} fits no function size and policy {} allows no VMs",
                        model.name,
                        policy.label()
                    )));
                }
                let state = ClusterState::new(
                    vm_type,
                    slots,
                    model.ref_latency_ms,
                    card.provision_delay_ms(),
                    policy.strict_priority,
                );
                pools.push(Pool { model, state });
                let i = (pools.len() - 1) as u32;
                pool_index.insert(q.model_name.as_str(), i);
                i
            }
        };
        pool_of.push(idx);
    }

    let config_hash = {
        #[derive(Serialize)]
        struct Stamp<'a> {
            policy: &'a PolicySpec,
            card: &'a RateCard,
            models: Vec<&'a ModelProfile>,
            queries: &'a [QuerySpec],
            trace_hash: &'a str,
            seed: u64,
        }
        let th = trace_hash(trace);
        sha256_json(&Stamp {
            policy,
            card,
            models: pools.iter().map(|p| p.model).collect(),
            queries,
            trace_hash: &th,
            seed,
        })?
    };

    let mut engine = Engine {
        policy,
        card,
        queries,
        pools,
        pool_of,
        events: EventQueue::default(),
        records: vec![None; queries.len()],
        vm_ledger: Vec::new(),
        invocations: Vec::new(),
        next_vm_id: 0,
        trace_ended: false,
        completed: 0,
        vm_cost: Money::ZERO,
        serverless_cost: Money::ZERO,
        vm_ms: 0,
        launched: 0,
        peak_vms: 0,
        warnings: 0,
        util: Vec::new(),
        events_processed: 0,
    };
    engine.simulate(trace)?;
    engine.into_report(trace, policy, seed, config_hash, opts)
}

impl<'a> Engine<'a> {
    fn simulate(&mut self, trace: &ArrivalTrace) -> Result<()> {
        for pool in 0..self.pools.len() {
            for _ in 0..self.policy.initial_vms {
                let id = self.launch_vm(pool, 0, 0);
                let vm = self.pools[pool].state.vm_mut(id).unwrap();
                vm.state = VmState::Active;
                vm.idle_since_ms = Some(0);
            }
        }
        if !self.queries.is_empty() {
            self.events.push(self.queries[0].arrival_ms, EventKind::Arrival { query: 0 });
        }
        self.events.push(trace.duration_ms, EventKind::TraceEnd);
        self.events
            .push(self.policy.tick_interval_s * 1000, EventKind::PolicyTick);

        while let Some(ev) = self.events.pop() {
            self.events_processed += 1;
            let now = ev.time_ms;
            match ev.kind {
                EventKind::Arrival { query } => self.on_arrival(query as usize, now)?,
                EventKind::RequestComplete { query, resource } => self.on_complete(query as usize, resource, now),
                EventKind::VmReady { pool, vm } => self.on_ready(pool as usize, vm, now),
                EventKind::IdleCheck { pool, vm } => self.on_idle_check(pool as usize, vm, now),
                EventKind::PolicyTick => self.on_tick(now)?,
                EventKind::TraceEnd => {
                    self.trace_ended = true;
                    for pool in 0..self.pools.len() {
                        // IdleCheck sorts before TraceEnd, so retire directly
                        self.retire_if_drained(pool, now, true);
                    }
                }
            }
            if self.trace_ended && self.completed == self.queries.len() {
                for pool in 0..self.pools.len() {
                    let ids: Vec<u32> = self.pools[pool].state.vms.iter().map(|v| v.id).collect();
                    for id in ids {
                        self.terminate(pool, id, now);
                    }
                }
                return Ok(());
            }
        }
        unreachable!("the tick chain keeps the queue non-empty until the run drains")
    }

    fn launch_vm(&mut self, pool: usize, now: u64, delay: u64) -> u32 {
        let id = self.next_vm_id;
        self.next_vm_id += 1;
        let st = &mut self.pools[pool].state;
        st.vms
            .push(VmInstance::launch(id, &st.vm_type.clone(), now, delay, st.slots_per_vm));
        self.launched += 1;
        let live: u32 = self.pools.iter().map(|p| p.state.provisioned()).sum();
        self.peak_vms = self.peak_vms.max(live);
        id
    }

    fn terminate(&mut self, pool: usize, id: u32, now: u64) {
        let st = &mut self.pools[pool].state;
        let pos = st.vms.binary_search_by_key(&id, |v| v.id).expect("live vm");
        let mut vm = st.vms.remove(pos);
        assert_eq!(vm.busy_slots, 0, "terminating a busy VM");
        vm.state = VmState::Terminated;
        vm.terminate_ms = Some(now);
        let rec = VmRecord {
            id,
            model: self.pools[pool].model.name.clone(),
            vm_type: vm.vm_type,
            launch_ms: vm.launch_ms,
            ready_ms: vm.ready_ms,
            terminate_ms: now,
        };
        self.vm_cost += vm_cost(billed_vm_ms(&rec, self.card), &rec.vm_type, self.card).expect("validated vm type");
        self.vm_ms += now - rec.launch_ms;
        self.vm_ledger.push(rec);
    }

    fn start_on_vm(&mut self, q: usize, pool: usize, vm_id: u32, now: u64) {
        let st = &mut self.pools[pool].state;
        let exec = st.vm_exec_ms;
        let vm = st.vm_mut(vm_id).expect("routed to a live vm");
        assert!(vm.is_active() && now >= vm.ready_ms, "VM {vm_id} served before ready");
        assert!(vm.busy_slots < vm.total_slots, "slot over-subscription on VM {vm_id}");
        vm.busy_slots += 1;
        vm.idle_since_ms = None;
        self.begin(q, pool, now, now + exec, Resource::Vm(vm_id), false);
    }

    fn start_serverless(&mut self, q: usize, pool: usize, memory_mb: u32, now: u64) -> Result<()> {
        let model = self.pools[pool].model;
        let exec = serverless_exec_latency(model, memory_mb, self.card)?;
        let st = &mut self.pools[pool].state;
        let d = st
            .functions
            .entry(memory_mb)
            .or_insert_with(|| ServerlessPool::new(memory_mb))
            .dispatch(now, exec, self.card);
        st.offloaded_since_tick += 1;
        self.serverless_cost += d.cost;
        self.invocations.push(InvocationRecord {
            query_id: self.queries[q].id,
            model: model.name.clone(),
            memory_mb,
            start_ms: now,
            exec_ms: exec,
            cold: d.cold,
        });
        self.begin(q, pool, now, now + d.latency_ms, Resource::Serverless(memory_mb), d.cold);
        Ok(())
    }

    fn begin(&mut self, q: usize, pool: usize, now: u64, finish: u64, resource: Resource, cold: bool) {
        let spec = &self.queries[q];
        assert!(now >= spec.arrival_ms, "query {} started before arrival", spec.id);
        assert!(self.records[q].is_none(), "query {} started twice", spec.id);
        self.records[q] = Some(RequestRecord {
            query_id: spec.id,
            model: self.pools[pool].model.name.clone(),
            slo_class: spec.slo_class,
            arrival_ms: spec.arrival_ms,
            start_ms: now,
            finish_ms: finish,
            resource,
            cold,
            response_ms: finish - spec.arrival_ms,
            violated: finish - spec.arrival_ms > spec.latency_max_ms(),
        });
        self.events.push(
            finish,
            EventKind::RequestComplete {
                query: q as u32,
                resource,
            },
        );
    }

    fn on_arrival(&mut self, q: usize, now: u64) -> Result<()> {
        if q + 1 < self.queries.len() {
            self.events
                .push(self.queries[q + 1].arrival_ms, EventKind::Arrival { query: q as u32 + 1 });
        }
        let pool = self.pool_of[q] as usize;
        let spec = &self.queries[q];
        let p = &mut self.pools[pool];
        p.state.record_arrival(now);
        match policy::route(self.policy, spec, &p.state, now, self.card, p.model) {
            RoutingDecision::Assign { vm_id, .. } => self.start_on_vm(q, pool, vm_id, now),
            RoutingDecision::Serverless { memory_mb } => self.start_serverless(q, pool, memory_mb, now)?,
            RoutingDecision::Enqueue { serverless_infeasible } => {
                self.warnings += serverless_infeasible as u64;
                p.state.queue.push(q, spec.slo_class, spec.arrival_ms, now);
            }
        }
        Ok(())
    }

    fn fill_free_slots(&mut self, pool: usize, now: u64) {
        while let Some((queued, vm)) = policy::dequeue_on_slot_free(self.policy, &mut self.pools[pool].state, now) {
            self.start_on_vm(queued.query, pool, vm, now);
        }
    }

    fn on_complete(&mut self, q: usize, resource: Resource, now: u64) {
        self.completed += 1;
        let pool = self.pool_of[q] as usize;
        if let Resource::Vm(id) = resource {
            let vm = self.pools[pool].state.vm_mut(id).expect("serving vm is live");
            vm.busy_slots -= 1;
            if vm.busy_slots == 0 {
                vm.idle_since_ms = Some(now);
            }
            self.fill_free_slots(pool, now);
            self.retire_if_drained(pool, now, false);
        }
    }

    fn on_ready(&mut self, pool: usize, id: u32, now: u64) {
        let Some(vm) = self.pools[pool].state.vm_mut(id) else {
            return;
        };
        if vm.state != VmState::Provisioning {
            return;
        }
        vm.state = VmState::Active;
        vm.idle_since_ms = Some(now);
        self.fill_free_slots(pool, now);
        self.retire_if_drained(pool, now, false);
    }

    fn on_idle_check(&mut self, pool: usize, id: u32, now: u64) {
        let st = &self.pools[pool].state;
        let idle = st.vm(id).is_some_and(|v| v.idle_for(now).is_some());
        if idle && self.trace_ended && st.queue.is_empty() {
            self.terminate(pool, id, now);
        }
    }

    /// After the trace, a pool with an empty queue keeps only busy VMs.
    fn retire_if_drained(&mut self, pool: usize, now: u64, inline: bool) {
        let st = &self.pools[pool].state;
        if !self.trace_ended || !st.queue.is_empty() {
            return;
        }
        let provisioning: Vec<u32> = st
            .vms
            .iter()
            .filter(|v| v.state == VmState::Provisioning)
            .map(|v| v.id)
            .collect();
        let idle: Vec<u32> = st.vms.iter().filter(|v| v.idle_for(now).is_some()).map(|v| v.id).collect();
        for id in provisioning {
            self.terminate(pool, id, now);
        }
        for vm in idle {
            if inline {
                self.terminate(pool, vm, now);
            } else {
                self.events.push(now, EventKind::IdleCheck { pool: pool as u32, vm });
            }
        }
    }

    fn on_tick(&mut self, now: u64) -> Result<()> {
        let mut sample = UtilSample {
            t_ms: now,
            ..Default::default()
        };
        for pool in 0..self.pools.len() {
            let decision = policy::tick(self.policy, &self.pools[pool].state, now);
            for &id in &decision.terminate {
                let vm = self.pools[pool].state.vm(id).expect("policy retires a live vm");
                assert!(vm.idle_for(now).is_some(), "policy retired a non-idle VM {id}");
                self.terminate(pool, id, now);
            }
            let delay = self.pools[pool].state.provision_delay_ms;
            for _ in 0..decision.launch_count() {
                let id = self.launch_vm(pool, now, delay);
                self.events.push(
                    now + delay,
                    EventKind::VmReady {
                        pool: pool as u32,
                        vm: id,
                    },
                );
            }
            let st = &mut self.pools[pool].state;
            st.arrivals_since_tick = 0;
            st.offloaded_since_tick = 0;
            if !st.queue.is_empty() && st.provisioned() == 0 {
                self.flush_stranded(pool, now)?;
            }
            let st = &self.pools[pool].state;
            sample.busy_slots += st.busy_slots();
            sample.active_slots += st.active_slots();
            sample.provisioned_vms += st.provisioned();
            sample.queued += st.queue.len() as u32;
            self.retire_if_drained(pool, now, false);
        }
        self.util.push(sample);
        self.events
            .push(now + self.policy.tick_interval_s * 1000, EventKind::PolicyTick);
        Ok(())
    }

    /// Queued work with no VM coming for it runs on the fastest function size.
    fn flush_stranded(&mut self, pool: usize, now: u64) -> Result<()> {
        let model = self.pools[pool].model;
        let memory = serverless_memory_options(model, self.card).last().ok_or_else(|| {
            Error::Config(format!("model {} has queued work, no VMs and no function size", model.name))
        })?;
        while let Some(queued) = self.pools[pool].state.queue.pop() {
            self.warnings += 1;
            self.start_serverless(queued.query, pool, memory, now)?;
        }
        Ok(())
    }

    fn into_report(
        self,
        trace: &ArrivalTrace,
        policy: &PolicySpec,
        seed: u64,
        config_hash: String,
        opts: RunOptions,
    ) -> Result<MetricsReport> {
        let records: Vec<RequestRecord> = self
            .records
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.unwrap_or_else(|| panic!("query {i} has no terminal record")))
            .collect();
        let requests = records.len() as u64;
        let violations = records.iter().filter(|r| r.violated).count() as u64;
        let mut by_class: BTreeMap<SloClass, ClassStats> = BTreeMap::new();
        let mut requests_by_model: BTreeMap<String, u64> = BTreeMap::new();
        for r in &records {
            let c = by_class.entry(r.slo_class).or_default();
            c.requests += 1;
            c.violations += r.violated as u64;
            c.serverless += matches!(r.resource, Resource::Serverless(_)) as u64;
            *requests_by_model.entry(r.model.clone()).or_default() += 1;
        }
        let serverless_invocations = self.invocations.len() as u64;
        let pct = |n: u64| if requests == 0 { 0.0 } else { 100.0 * n as f64 / requests as f64 };
        let response = LatencySummary::from_samples(records.iter().map(|r| r.response_ms).collect());
        let ledger = match opts.ledger {
            LedgerMode::None => None,
            LedgerMode::Billing | LedgerMode::Full => Some(Ledger {
                vms: self.vm_ledger,
                invocations: self.invocations.clone(),
                requests: if opts.ledger == LedgerMode::Full { records } else { Vec::new() },
            }),
        };
        Ok(MetricsReport {
            policy_name: policy.label(),
            policy: policy.clone(),
            seed,
            repetition: 0,
            config_hash,
            trace_hash: trace_hash(trace),
            requests,
            violations,
            slo_violation_pct: pct(violations),
            total_cost: self.vm_cost + self.serverless_cost,
            vm_cost: self.vm_cost,
            serverless_cost: self.serverless_cost,
            vm_ms_provisioned: self.vm_ms,
            vm_seconds_provisioned: self.vm_ms as f64 / 1000.0,
            vms_launched: self.launched,
            peak_vms: self.peak_vms,
            response,
            serverless_invocations,
            cold_starts: self.invocations.iter().filter(|i| i.cold).count() as u64,
            serverless_share_pct: pct(serverless_invocations),
            by_class,
            requests_by_model,
            warnings: self.warnings,
            events_processed: self.events_processed,
            utilization: self.util,
            rate_card: self.card.clone(),
            ledger,
        })
    }
}

fn billed_vm_ms(rec: &VmRecord, card: &RateCard) -> u64 {
    let start = match card.vm_billing_starts_at {
        VmBillingStart::Launch => rec.launch_ms,
        VmBillingStart::Ready => rec.ready_ms,
    };
    rec.terminate_ms.saturating_sub(start)
}

/// Provisioned VM-seconds of `report` relative to `baseline` on the same trace.
pub fn over_provision_ratio(report: &MetricsReport, baseline: &MetricsReport) -> Result<f64> {
    if report.trace_hash != baseline.trace_hash {
        return Err(Error::Comparison(format!(
            "{} and baseline {} ran on different traces",
            report.policy_name, baseline.policy_name
        )));
    }
    if baseline.vm_ms_provisioned == 0 {
        return Err(Error::Comparison(format!(
            "baseline {} provisioned no VM time",
            baseline.policy_name
        )));
    }
    Ok(report.vm_ms_provisioned as f64 / baseline.vm_ms_provisioned as f64)
}

/// Re-prices the ledger with `card` and checks it against the report's totals.
pub fn replay_verify(report: &MetricsReport, card: &RateCard) -> Result<bool> {
    let ledger = report
        .ledger
        .as_ref()
        .ok_or_else(|| Error::Verification(format!("report {} carries no ledger", report.policy_name)))?;
    let mut vm_total = Money::ZERO;
    for vm in &ledger.vms {
        vm_total += vm_cost(billed_vm_ms(vm, card), &vm.vm_type, card)?;
    }
    let s = &card.serverless;
    let serverless_total: Money = ledger
        .invocations
        .iter()
        .map(|inv| {
            let billed = inv.exec_ms
                + if inv.cold && s.bill_model_load { s.model_load_ms } else { 0 }
                + if inv.cold && s.bill_cold_start { s.cold_start_ms } else { 0 };
            serverless_invocation_cost(billed, inv.memory_mb, card)
        })
        .sum();
    Ok(vm_total == report.vm_cost
        && serverless_total == report.serverless_cost
        && report.total_cost == report.vm_cost + report.serverless_cost)
}

/// Billed duration sum for a set of invocations, in quantum-rounded ms.
pub fn billed_serverless_ms(invocations: &[InvocationRecord], card: &RateCard) -> u64 {
    let s = &card.serverless;
    invocations
        .iter()
        .map(|inv| {
            let extra = if inv.cold {
                (s.bill_model_load as u64) * s.model_load_ms + (s.bill_cold_start as u64) * s.cold_start_ms
            } else {
                0
            };
            billed_duration_ms(inv.exec_ms + extra, card)
        })
        .sum()
}

pub const LEDGER_CSV_HEADER: [&str; 10] = [
    "query_id",
    "model",
    "class",
    "arrival_ms",
    "start_ms",
    "finish_ms",
    "resource",
    "cold",
    "response_ms",
    "violated",
];

pub fn write_ledger_csv(records: &[RequestRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
    w.write_record(LEDGER_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.query_id.to_string(),
            r.model.clone(),
            r.slo_class.as_str().to_string(),
            r.arrival_ms.to_string(),
            r.start_ms.to_string(),
            r.finish_ms.to_string(),
            r.resource.to_string(),
            r.cold.to_string(),
            r.response_ms.to_string(),
            r.violated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::profile;
    use crate::catalog::ConstraintSet;
    use crate::cloud::tests::card;
    use crate::policy::PolicyKind;
    use crate::workload::{gen_constant, Jitter};
    use proptest::prelude::*;

    fn model(lat: u64, slots: u32) -> ModelProfile {
        let mut m = profile("m", 70.0, lat);
        m.vm_slots = BTreeMap::from([("m5.large".to_string(), slots)]);
        m.memory_mb = 512;
        m
    }

    fn queries(trace: &ArrivalTrace, class: SloClass, slo: u64) -> Vec<QuerySpec> {
        trace
            .arrivals_ms
            .iter()
            .enumerate()
            .map(|(i, &t)| QuerySpec {
                id: i as u64,
                arrival_ms: t,
                slo_class: class,
                constraints: ConstraintSet::accuracy_latency(0.0, slo),
                model_name: "m".into(),
            })
            .collect()
    }

    #[test]
    fn event_priorities_are_totally_ordered() {
        let mut q = EventQueue::default();
        q.push(5, EventKind::TraceEnd);
        q.push(5, EventKind::Arrival { query: 0 });
        q.push(5, EventKind::VmReady { pool: 0, vm: 0 });
        q.push(5, EventKind::PolicyTick);
        q.push(
            5,
            EventKind::RequestComplete {
                query: 1,
                resource: Resource::Vm(0),
            },
        );
        q.push(5, EventKind::IdleCheck { pool: 0, vm: 0 });
        q.push(4, EventKind::TraceEnd);
        let order: Vec<u8> = std::iter::from_fn(|| q.pop()).map(|e| e.kind.priority()).collect();
        assert_eq!(order, vec![5, 0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn empty_trace_costs_nothing() {
        let cat = Catalog::new(vec![model(200, 4)]).unwrap();
        let trace = ArrivalTrace::new(vec![], 60_000).unwrap();
        let r = run(&trace, &[], &PolicySpec::new(PolicyKind::Reactive), &card(), &cat, 1).unwrap();
        assert_eq!((r.requests, r.violations, r.total_cost), (0, 0, Money::ZERO));
        assert!(replay_verify(&r, &card()).unwrap());
    }

    #[test]
    fn single_request_on_prewarmed_vm() {
        let c = card();
        let cat = Catalog::new(vec![model(200, 4)]).unwrap();
        let trace = ArrivalTrace::new(vec![0], 1000).unwrap();
        let qs = queries(&trace, SloClass::Strict, 500);
        let p = PolicySpec {
            initial_vms: 1,
            ..PolicySpec::new(PolicyKind::Reactive)
        };
        let r = run_with(&trace, &qs, &p, &c, &cat, 1, RunOptions { ledger: LedgerMode::Full }).unwrap();
        let rec = &r.ledger.as_ref().unwrap().requests[0];
        assert_eq!((rec.response_ms, rec.violated), (200, false));
        assert_eq!(r.vm_ms_provisioned, 1000);
        assert_eq!(r.total_cost, vm_cost(1000, "m5.large", &c).unwrap());
        assert!(replay_verify(&r, &c).unwrap());
    }

    /// Reactive from cold, 10/s for 60 s, 120 s provisioning.
    #[test]
    fn cold_reactive_queue_drains_after_provisioning() {
        let c = card();
        let cat = Catalog::new(vec![model(200, 4)]).unwrap();
        let trace = gen_constant(10.0, 60.0, Jitter::None, 0).unwrap();
        let qs = queries(&trace, SloClass::Relaxed, 500);
        let r = run_with(
            &trace,
            &qs,
            &PolicySpec::new(PolicyKind::Reactive),
            &c,
            &cat,
            1,
            RunOptions { ledger: LedgerMode::Full },
        )
        .unwrap();
        let oracle = brute_force_single_pool(&trace.arrivals_ms, 200, 4, 120_000, 10_000, 500);
        let recs = &r.ledger.as_ref().unwrap().requests;
        let starts: Vec<u64> = recs.iter().map(|x| x.start_ms).collect();
        assert_eq!(starts, oracle.starts);
        assert_eq!(r.violations, oracle.violations);
        // nothing is ready before 130 s, so every request misses its 500 ms SLO
        assert_eq!(r.violations, 600);
        assert!(replay_verify(&r, &c).unwrap());
    }

    struct Oracle {
        starts: Vec<u64>,
        violations: u64,
    }

    /// Millisecond-stepped replay of reactive scaling for one pool: at every
    /// tick with queued work it sizes the fleet to
    /// ceil((arrivals / tick_s + queued / max(delay_s, tick_s)) * exec / slots) VMs; queued work is
    /// served FIFO as slots free up.
    fn brute_force_single_pool(arrivals: &[u64], exec: u64, slots: u32, delay: u64, tick: u64, slo: u64) -> Oracle {
        let mut starts = vec![0; arrivals.len()];
        let mut vms: Vec<(u64, Vec<u64>)> = Vec::new(); // (ready, finish times of busy slots)
        let mut queue = std::collections::VecDeque::new();
        let mut next = 0;
        let mut since_tick = 0u64;
        let mut done = 0;
        let mut t = 0;
        while done < arrivals.len() {
            for (_, busy) in vms.iter_mut() {
                let before = busy.len();
                busy.retain(|&f| f != t);
                done += before - busy.len();
            }
            let mut take = |q: usize, vms: &mut Vec<(u64, Vec<u64>)>| -> bool {
                for (ready, busy) in vms.iter_mut() {
                    if *ready <= t && busy.len() < slots as usize {
                        busy.push(t + exec);
                        starts[q] = t;
                        return true;
                    }
                }
                false
            };
            while let Some(&q) = queue.front() {
                if !take(q, &mut vms) {
                    break;
                }
                queue.pop_front();
            }
            while next < arrivals.len() && arrivals[next] == t {
                since_tick += 1;
                if !take(next, &mut vms) {
                    queue.push_back(next);
                }
                next += 1;
            }
            if t > 0 && t % tick == 0 {
                if !queue.is_empty() {
                    let tick_s = (tick / 1000) as f64;
                    let drain_s = ((delay / 1000) as f64).max(tick_s);
                    let demand = since_tick as f64 / tick_s + queue.len() as f64 / drain_s;
                    let need = ((demand * exec as f64 / 1000.0) / slots as f64).ceil().max(1.0) as usize;
                    while vms.len() < need {
                        vms.push((t + delay, Vec::new()));
                    }
                }
                since_tick = 0;
            }
            t += 1;
        }
        let violations = arrivals
            .iter()
            .zip(&starts)
            .filter(|&(&a, &s)| s + exec - a > slo)
            .count() as u64;
        Oracle { starts, violations }
    }

    #[test]
    fn perturbed_invocation_fails_replay() {
        let c = card();
        let cat = Catalog::new(vec![model(200, 4)]).unwrap();
        let trace = gen_constant(20.0, 30.0, Jitter::None, 0).unwrap();
        let qs = queries(&trace, SloClass::Relaxed, 5000);
        let p = PolicySpec {
            max_vms: Some(0),
            ..PolicySpec::new(PolicyKind::Mixed)
        };
        let mut r = run(&trace, &qs, &p, &c, &cat, 1).unwrap();
        assert!(r.serverless_invocations > 0);
        assert!(replay_verify(&r, &c).unwrap());
        r.ledger.as_mut().unwrap().invocations[0].exec_ms += c.serverless.billing_quantum_ms;
        assert!(!replay_verify(&r, &c).unwrap());
        r.ledger = None;
        assert!(matches!(replay_verify(&r, &c), Err(Error::Verification(_))));
    }

    #[test]
    fn over_provision_ratio_examples() {
        let c = card();
        let cat = Catalog::new(vec![model(200, 4)]).unwrap();
        let trace = gen_constant(10.0, 60.0, Jitter::None, 0).unwrap();
        let qs = queries(&trace, SloClass::Relaxed, 500);
        let r = run(&trace, &qs, &PolicySpec::new(PolicyKind::Reactive), &c, &cat, 1).unwrap();
        assert_eq!(over_provision_ratio(&r, &r).unwrap(), 1.0);
        let mut a = r.clone();
        let mut b = r.clone();
        a.vm_ms_provisioned = 4_000_000;
        b.vm_ms_provisioned = 3_200_000;
        assert_eq!(over_provision_ratio(&a, &b).unwrap(), 1.25);
        b.vm_ms_provisioned = 0;
        assert!(matches!(over_provision_ratio(&a, &b), Err(Error::Comparison(_))));
        b.vm_ms_provisioned = 1;
        b.trace_hash = "other".into();
        assert!(matches!(over_provision_ratio(&a, &b), Err(Error::Comparison(_))));
    }

    #[test]
    fn mismatched_queries_rejected() {
        let cat = Catalog::new(vec![model(200, 4)]).unwrap();
        let trace = gen_constant(10.0, 2.0, Jitter::None, 0).unwrap();
        let mut qs = queries(&trace, SloClass::Relaxed, 500);
        qs.pop();
        let err = run(&trace, &qs, &PolicySpec::default(), &card(), &cat, 1).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn ledger_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.csv");
        write_ledger_csv(&[], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap().trim(),
            "query_id,model,class,arrival_ms,start_ms,finish_ms,resource,cold,response_ms,violated"
        );
    }

    #[test]
    fn resource_round_trip() {
        for r in [Resource::Vm(3), Resource::Serverless(1024)] {
            assert_eq!(r.to_string().parse::<Resource>().unwrap(), r);
        }
        assert!("gpu:1".parse::<Resource>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn runs_conserve_verify_and_repeat(
            rate in 1.0f64..40.0,
            secs in 5.0f64..90.0,
            kind in 0usize..5,
            initial in 0u32..3,
            strict_share in 0.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let c = card();
            let cat = Catalog::new(vec![model(200, 4)]).unwrap();
            let trace = gen_constant(rate, secs, Jitter::Poisson, seed).unwrap();
            let mut qs = queries(&trace, SloClass::Relaxed, 5000);
            let cut = (qs.len() as f64 * strict_share) as usize;
            for q in qs.iter_mut().take(cut) {
                q.slo_class = SloClass::Strict;
                q.constraints = ConstraintSet::accuracy_latency(0.0, 700);
            }
            let p = PolicySpec {
                initial_vms: initial,
                ..PolicySpec::new(PolicyKind::ALL[kind])
            };
            let opts = RunOptions { ledger: LedgerMode::Full };
            let a = run_with(&trace, &qs, &p, &c, &cat, seed, opts).unwrap();
            let b = run_with(&trace, &qs, &p, &c, &cat, seed, opts).unwrap();
            prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
            let recs = &a.ledger.as_ref().unwrap().requests;
            prop_assert_eq!(recs.len(), trace.len());
            for (i, r) in recs.iter().enumerate() {
                prop_assert_eq!(r.query_id, i as u64);
                prop_assert!(r.arrival_ms <= r.start_ms && r.start_ms <= r.finish_ms);
            }
            prop_assert!(replay_verify(&a, &c).unwrap());
        }
    }
}
