//! Capacity and billing semantics for VMs and serverless functions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{CostEstimate, DeploymentHint, ModelProfile};
use crate::error::{Error, Result};
use crate::money::Money;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmType {
    pub hourly_price: Money,
    pub provision_delay_s: u64,
    pub compute_units: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerlessCard {
    pub per_invocation_fee: Money,
    /// Currency per GB-second, where GB = 1024 MB.
    pub gb_second_rate: Money,
    pub billing_quantum_ms: u64,
    pub cold_start_ms: u64,
    pub model_load_ms: u64,
    pub keep_alive_s: u64,
    pub memory_tiers_mb: Vec<u32>,
    /// Slowdown of each tier relative to the fastest one (>= 1).
    pub tier_speed_factors: Vec<f64>,
    /// Whether the container-init part of a cold start is billed.
    #[serde(default)]
    pub bill_cold_start: bool,
    /// Whether the model-load part of a cold start is billed.
    #[serde(default = "default_true")]
    pub bill_model_load: bool,
}

fn default_true() -> bool {
    true
}

fn default_granularity() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmBillingStart {
    #[default]
    Launch,
    Ready,
}

/// Prices and timing constants of the simulated cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCard {
    pub vm_types: BTreeMap<String, VmType>,
    /// VM type on which model profiles were measured; runs provision this type.
    pub reference_vm_type: String,
    pub serverless: ServerlessCard,
    #[serde(default = "default_granularity")]
    pub billing_granularity_s: u64,
    #[serde(default)]
    pub vm_billing_starts_at: VmBillingStart,
}

impl RateCard {
    /// The rate card shipped in `fixtures/rate_card.json`.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../fixtures/rate_card.json")).expect("bundled rate card is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let card: RateCard = serde_json::from_str(text)?;
        card.validate()?;
        Ok(card)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RateCard::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("rate card: {m}")));
        if self.vm_types.is_empty() {
            return fail("no vm_types".into());
        }
        for (name, vm) in &self.vm_types {
            if vm.hourly_price.is_negative() {
                return fail(format!("{name}: negative hourly_price"));
            }
            if !(vm.compute_units.is_finite() && vm.compute_units > 0.0) {
                return fail(format!("{name}: compute_units must be positive"));
            }
        }
        if !self.vm_types.contains_key(&self.reference_vm_type) {
            return fail(format!("reference_vm_type {} is not listed", self.reference_vm_type));
        }
        if self.billing_granularity_s == 0 {
            return fail("billing_granularity_s must be positive".into());
        }
        let s = &self.serverless;
        if s.per_invocation_fee.is_negative() || s.gb_second_rate.is_negative() {
            return fail("negative serverless price".into());
        }
        if s.billing_quantum_ms == 0 {
            return fail("billing_quantum_ms must be positive".into());
        }
        if s.memory_tiers_mb.is_empty() || s.memory_tiers_mb.len() != s.tier_speed_factors.len() {
            return fail("memory_tiers_mb and tier_speed_factors must be non-empty and equally long".into());
        }
        if s.memory_tiers_mb.windows(2).any(|w| w[0] >= w[1]) || s.memory_tiers_mb[0] == 0 {
            return fail("memory tiers must be positive and strictly ascending".into());
        }
        if s.tier_speed_factors.iter().any(|f| !(f.is_finite() && *f >= 1.0)) {
            return fail("tier speed factors must be >= 1".into());
        }
        if s.tier_speed_factors.windows(2).any(|w| w[1] > w[0]) {
            return fail("tier speed factors must be non-increasing".into());
        }
        Ok(())
    }

    pub fn vm_type(&self, name: &str) -> Result<&VmType> {
        self.vm_types
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown vm type {name}")))
    }

    pub fn reference_vm(&self) -> &VmType {
        &self.vm_types[&self.reference_vm_type]
    }

    pub fn provision_delay_ms(&self) -> u64 {
        self.reference_vm().provision_delay_s * 1000
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VmState {
    Provisioning,
    Active,
    Draining,
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VmInstance {
    pub id: u32,
    pub vm_type: String,
    pub state: VmState,
    pub launch_ms: u64,
    pub ready_ms: u64,
    pub terminate_ms: Option<u64>,
    pub busy_slots: u32,
    pub total_slots: u32,
    /// Start of the current idle stretch; `None` while serving.
    pub idle_since_ms: Option<u64>,
}

impl VmInstance {
    pub fn launch(id: u32, vm_type: &str, now_ms: u64, provision_delay_ms: u64, total_slots: u32) -> Self {
        VmInstance {
            id,
            vm_type: vm_type.to_string(),
            state: VmState::Provisioning,
            launch_ms: now_ms,
            ready_ms: now_ms + provision_delay_ms,
            terminate_ms: None,
            busy_slots: 0,
            total_slots,
            idle_since_ms: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.state == VmState::Active
    }

    /// Provisioning or active: capacity the cluster has paid for.
    pub fn is_provisioned(&self) -> bool {
        matches!(self.state, VmState::Provisioning | VmState::Active)
    }

    pub fn has_free_slot(&self) -> bool {
        self.is_active() && self.busy_slots < self.total_slots
    }

    pub fn idle_for(&self, now_ms: u64) -> Option<u64> {
        match (self.state, self.idle_since_ms) {
            (VmState::Active, Some(since)) if self.busy_slots == 0 => Some(now_ms.saturating_sub(since)),
            _ => None,
        }
    }
}

/// Concurrent query slots one VM of `vm_type` offers for `model`.
///
/// Uses the profiled value when present; otherwise scales the reference
/// type's slots linearly with compute units (floored, at least one).
pub fn vm_capacity(vm_type: &str, model: &ModelProfile, card: &RateCard) -> Result<u32> {
    let target = card.vm_type(vm_type)?;
    if let Some(&slots) = model.vm_slots.get(vm_type) {
        return Ok(slots);
    }
    let reference_slots = model.vm_slots.get(&card.reference_vm_type).ok_or_else(|| {
        Error::Config(format!(
            "model {} has no slot profile for {vm_type} or the reference type {}",
            model.name, card.reference_vm_type
        ))
    })?;
    let scaled = (*reference_slots as f64 * target.compute_units / card.reference_vm().compute_units).floor();
    Ok((scaled as u32).max(1))
}

/// Cost of keeping one VM for `billed_ms`, rounded up to the billing granularity.
pub fn vm_cost(billed_ms: u64, vm_type: &str, card: &RateCard) -> Result<Money> {
    let vm = card.vm_type(vm_type)?;
    let step = card.billing_granularity_s * 1000;
    let units_ms = billed_ms.div_ceil(step) * step;
    Ok(vm.hourly_price.mul_ratio(units_ms as i128, 3_600_000))
}

fn tier_factor(memory_mb: u32, card: &RateCard) -> Option<f64> {
    let s = &card.serverless;
    s.memory_tiers_mb
        .iter()
        .zip(&s.tier_speed_factors)
        .rev()
        .find(|(&tier, _)| tier <= memory_mb)
        .map(|(_, &f)| f)
}

/// Warm execution latency of `model` in a function with `memory_mb`.
///
/// A profiled latency for that exact size wins; otherwise the reference
/// latency is scaled by the speed factor of the largest tier not above
/// `memory_mb`, so latency stops improving past the last tier.
pub fn serverless_exec_latency(model: &ModelProfile, memory_mb: u32, card: &RateCard) -> Result<u64> {
    if memory_mb < model.memory_mb {
        return Err(Error::MemoryBelowRequirement {
            model: model.name.clone(),
            memory_mb,
            required_mb: model.memory_mb,
        });
    }
    if let Some(&lat) = model.serverless_latency_ms.get(&memory_mb) {
        return Ok(lat);
    }
    let factor = tier_factor(memory_mb, card).ok_or_else(|| {
        Error::Config(format!(
            "{memory_mb} MB is below the smallest serverless tier {}",
            card.serverless.memory_tiers_mb[0]
        ))
    })?;
    Ok((model.ref_latency_ms as f64 * factor).ceil() as u64)
}

/// Billed duration (ms) rounded up to the quantum.
pub fn billed_duration_ms(exec_ms: u64, card: &RateCard) -> u64 {
    let q = card.serverless.billing_quantum_ms;
    exec_ms.div_ceil(q).max(1) * q
}

/// Price of one invocation running `exec_ms` with `memory_mb`.
pub fn serverless_invocation_cost(exec_ms: u64, memory_mb: u32, card: &RateCard) -> Money {
    let s = &card.serverless;
    let billed = billed_duration_ms(exec_ms, card);
    let compute = s
        .gb_second_rate
        .mul_ratio(billed as i128 * memory_mb as i128, 1000 * 1024);
    s.per_invocation_fee + compute
}

/// Smallest configured memory whose latency fits `latency_budget_ms`.
///
/// With `include_cold`, the model load time counts against the budget.
pub fn choose_serverless_memory(
    model: &ModelProfile,
    latency_budget_ms: u64,
    card: &RateCard,
    include_cold: bool,
) -> Result<u32> {
    let overhead = if include_cold { card.serverless.model_load_ms } else { 0 };
    let mut fastest: Option<u64> = None;
    for &mem in card.serverless.memory_tiers_mb.iter().filter(|&&m| m >= model.memory_mb) {
        let lat = serverless_exec_latency(model, mem, card)? + overhead;
        if lat <= latency_budget_ms {
            return Ok(mem);
        }
        fastest = Some(fastest.map_or(lat, |f| f.min(lat)));
    }
    match fastest {
        Some(fastest_ms) => Err(Error::ServerlessInfeasible {
            model: model.name.clone(),
            budget_ms: latency_budget_ms,
            fastest_ms,
        }),
        None => Err(Error::MemoryBelowRequirement {
            model: model.name.clone(),
            memory_mb: *card.serverless.memory_tiers_mb.last().unwrap(),
            required_mb: model.memory_mb,
        }),
    }
}

/// Memory sizes a function for `model` may be configured with.
pub fn serverless_memory_options<'a>(model: &'a ModelProfile, card: &'a RateCard) -> impl Iterator<Item = u32> + 'a {
    card.serverless
        .memory_tiers_mb
        .iter()
        .copied()
        .filter(move |&m| m >= model.memory_mb)
}

/// Function containers of one (model, memory) configuration.
///
/// Containers are keyed by the time they become free. A container is warm at
/// `t` when it became free in `[t - keep_alive, t]`; in-flight containers have
/// a free time after `t`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServerlessPool {
    pub memory_mb: u32,
    containers: BTreeMap<u64, u32>,
    pub invocations: u64,
    pub cold_invocations: u64,
    pub billed_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dispatch {
    pub latency_ms: u64,
    /// Duration the provider bills for, before quantum rounding.
    pub billed_exec_ms: u64,
    pub cost: Money,
    pub cold: bool,
}

impl ServerlessPool {
    pub fn new(memory_mb: u32) -> Self {
        ServerlessPool {
            memory_mb,
            ..Default::default()
        }
    }

    fn expire(&mut self, now_ms: u64, keep_alive_ms: u64) {
        let horizon = now_ms.saturating_sub(keep_alive_ms);
        self.containers = self.containers.split_off(&horizon);
    }

    pub fn warm_count(&self, now_ms: u64, keep_alive_ms: u64) -> u32 {
        let horizon = now_ms.saturating_sub(keep_alive_ms);
        self.containers.range(horizon..=now_ms).map(|(_, n)| n).sum()
    }

    pub fn in_flight(&self, now_ms: u64) -> u32 {
        self.containers.range(now_ms + 1..).map(|(_, n)| n).sum()
    }

    /// Runs one invocation, reusing the most recently freed warm container
    /// if there is one.
    pub fn dispatch(&mut self, now_ms: u64, exec_ms: u64, card: &RateCard) -> Dispatch {
        let s = &card.serverless;
        self.expire(now_ms, s.keep_alive_s * 1000);
        let warm = self.containers.range(..=now_ms).next_back().map(|(&t, _)| t);
        let cold = match warm {
            Some(t) => {
                let n = self.containers.get_mut(&t).unwrap();
                *n -= 1;
                if *n == 0 {
                    self.containers.remove(&t);
                }
                false
            }
            None => true,
        };
        let (latency_ms, billed_exec_ms) = if cold {
            let billed = exec_ms
                + if s.bill_model_load { s.model_load_ms } else { 0 }
                + if s.bill_cold_start { s.cold_start_ms } else { 0 };
            (s.cold_start_ms + s.model_load_ms + exec_ms, billed)
        } else {
            (exec_ms, exec_ms)
        };
        *self.containers.entry(now_ms + latency_ms).or_insert(0) += 1;
        self.invocations += 1;
        self.cold_invocations += cold as u64;
        self.billed_ms += billed_duration_ms(billed_exec_ms, card);
        Dispatch {
            latency_ms,
            billed_exec_ms,
            cost: serverless_invocation_cost(billed_exec_ms, self.memory_mb, card),
            cold,
        }
    }
}

/// Cost of serving one million queries with `model` at `ref_rate_per_s` on
/// the cheaper of a right-sized VM fleet or serverless functions sized for
/// `latency_budget_ms`.
pub fn cost_per_million(model: &ModelProfile, card: &RateCard, ref_rate_per_s: f64, latency_budget_ms: u64) -> Result<CostEstimate> {
    const QUERIES: u64 = 1_000_000;
    let slots = vm_capacity(&card.reference_vm_type, model, card)?;
    let vms = crate::policy::required_vms(ref_rate_per_s, model.ref_latency_ms, slots) as u64;
    let span_ms = (QUERIES as f64 / ref_rate_per_s * 1000.0).ceil() as u64;
    let vm_total = vm_cost(span_ms, &card.reference_vm_type, card)? * vms;

    let serverless_total = choose_serverless_memory(model, latency_budget_ms, card, false)
        .ok()
        .map(|mem| -> Result<Money> {
            let exec = serverless_exec_latency(model, mem, card)?;
            Ok(serverless_invocation_cost(exec, mem, card) * QUERIES)
        })
        .transpose()?;

    Ok(match serverless_total {
        Some(s) if s < vm_total => CostEstimate {
            per_million: s,
            hint: DeploymentHint::Serverless,
        },
        Some(s) if s == vm_total => CostEstimate {
            per_million: s,
            hint: DeploymentHint::Either,
        },
        _ => CostEstimate {
            per_million: vm_total,
            hint: DeploymentHint::Vm,
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::tests::profile;
    use proptest::prelude::*;

    pub(crate) fn card() -> RateCard {
        RateCard::from_json(
            r#"{
            "vm_types": {
                "m5.large": {"hourly_price": 0.096, "provision_delay_s": 120, "compute_units": 2},
                "m5.xlarge": {"hourly_price": 0.192, "provision_delay_s": 120, "compute_units": 4},
                "t3.small": {"hourly_price": 0.02, "provision_delay_s": 60, "compute_units": 0.8}
            },
            "reference_vm_type": "m5.large",
            "serverless": {
                "per_invocation_fee": "0.0000002",
                "gb_second_rate": "0.0000166667",
                "billing_quantum_ms": 100,
                "cold_start_ms": 1000,
                "model_load_ms": 2000,
                "keep_alive_s": 600,
                "memory_tiers_mb": [512, 1536, 2048],
                "tier_speed_factors": [3.0, 1.5, 1.0]
            }
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn capacity_lookup_scaling_and_clamp() {
        let c = card();
        let mut m = profile("x", 70.0, 200);
        m.vm_slots.insert("m5.large".into(), 4);
        assert_eq!(vm_capacity("m5.large", &m, &c).unwrap(), 4);
        assert_eq!(vm_capacity("m5.xlarge", &m, &c).unwrap(), 8);
        m.vm_slots.insert("m5.large".into(), 2);
        // 2 * 0.8 / 2 = 0.8 -> floor 0 -> clamp 1
        assert_eq!(vm_capacity("t3.small", &m, &c).unwrap(), 1);
        assert!(matches!(vm_capacity("p3.2xlarge", &m, &c), Err(Error::Config(_))));
    }

    #[test]
    fn vm_cost_examples() {
        let c = card();
        let hour = vm_cost(3_600_000, "m5.large", &c).unwrap();
        assert_eq!(hour, "0.096".parse().unwrap());
        assert_eq!(vm_cost(0, "m5.large", &c).unwrap(), Money::ZERO);
        assert_eq!(hour * 3, "0.288".parse().unwrap());
        // partial seconds round up to the granularity
        assert_eq!(vm_cost(1, "m5.large", &c).unwrap(), vm_cost(1000, "m5.large", &c).unwrap());
    }

    #[test]
    fn invocation_cost_examples() {
        let c = card();
        let one = serverless_invocation_cost(200, 1024, &c);
        assert_eq!(one * 1_000_000, "3.53334".parse().unwrap());
        assert_eq!(serverless_invocation_cost(1, 1024, &c), serverless_invocation_cost(100, 1024, &c));
        let mut free = c.clone();
        free.serverless.per_invocation_fee = Money::ZERO;
        free.serverless.gb_second_rate = Money::ZERO;
        assert_eq!(serverless_invocation_cost(250, 2048, &free), Money::ZERO);
    }

    #[test]
    fn exec_latency_lookup_tiers_and_saturation() {
        let c = card();
        let mut m = profile("x", 70.0, 200);
        m.memory_mb = 512;
        assert_eq!(serverless_exec_latency(&m, 1536, &c).unwrap(), 300);
        assert_eq!(serverless_exec_latency(&m, 3008, &c).unwrap(), serverless_exec_latency(&m, 2048, &c).unwrap());
        m.serverless_latency_ms = BTreeMap::from([(1024, 300), (2048, 180)]);
        assert_eq!(serverless_exec_latency(&m, 2048, &c).unwrap(), 180);
        m.memory_mb = 1024;
        assert!(matches!(
            serverless_exec_latency(&m, 512, &c),
            Err(Error::MemoryBelowRequirement { .. })
        ));
    }

    #[test]
    fn memory_chooser_scans_ascending() {
        let c = card();
        let mut m = profile("x", 70.0, 200);
        m.serverless_latency_ms = BTreeMap::from([(512, 600), (1536, 300), (2048, 200)]);
        assert_eq!(choose_serverless_memory(&m, 500, &c, false).unwrap(), 1536);
        assert_eq!(choose_serverless_memory(&m, 600, &c, false).unwrap(), 512);
        match choose_serverless_memory(&m, 100, &c, false) {
            Err(Error::ServerlessInfeasible { fastest_ms, .. }) => assert_eq!(fastest_ms, 200),
            other => panic!("expected infeasible, got {other:?}"),
        }
        // cold path adds the model load time
        assert_eq!(choose_serverless_memory(&m, 2300, &c, true).unwrap(), 1536);
    }

    #[test]
    fn warm_pool_keep_alive_and_single_occupancy() {
        let c = card();
        let mut pool = ServerlessPool::new(1024);
        let first = pool.dispatch(0, 200, &c);
        assert!(first.cold);
        assert_eq!(first.latency_ms, 3200);
        // one second after the first finished
        let second = pool.dispatch(4200, 200, &c);
        assert!(!second.cold);
        assert_eq!(second.latency_ms, 200);

        let t = 10_000;
        let a = pool.dispatch(t, 200, &c);
        let b = pool.dispatch(t, 200, &c);
        assert_eq!([a.cold, b.cold].iter().filter(|&&x| x).count(), 1);

        // beyond keep-alive everything is cold again
        let late = pool.dispatch(t + 3_200 + 600_001, 200, &c);
        assert!(late.cold);
    }

    #[test]
    fn cold_start_billing_knobs() {
        let c = card();
        let mut pool = ServerlessPool::new(1024);
        let d = pool.dispatch(0, 200, &c);
        assert_eq!(d.billed_exec_ms, 2200);
        let mut c2 = c.clone();
        c2.serverless.bill_model_load = false;
        let mut pool = ServerlessPool::new(1024);
        assert_eq!(pool.dispatch(0, 200, &c2).billed_exec_ms, 200);
    }

    #[test]
    fn rate_card_validation() {
        let mut c = card();
        c.serverless.tier_speed_factors = vec![1.0, 1.5, 1.0];
        assert!(c.validate().is_err());
        let mut c = card();
        c.serverless.memory_tiers_mb = vec![512, 512, 2048];
        assert!(c.validate().is_err());
        let mut c = card();
        c.reference_vm_type = "nope".into();
        assert!(c.validate().is_err());
        assert!(RateCard::from_json(r#"{"vm_types":{}}"#).is_err());
    }

    proptest! {
        #[test]
        fn invocation_cost_monotone(exec in 1u64..5000, extra in 0u64..500, mem in 128u32..3008, more in 1u32..1000) {
            let c = card();
            prop_assert!(serverless_invocation_cost(exec, mem, &c) <= serverless_invocation_cost(exec + extra, mem, &c));
            prop_assert!(serverless_invocation_cost(exec, mem, &c) < serverless_invocation_cost(exec, mem + more, &c));
        }

        #[test]
        fn vm_cost_monotone(a in 0u64..10_000_000, b in 0u64..10_000_000) {
            let c = card();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(vm_cost(lo, "m5.large", &c).unwrap() <= vm_cost(hi, "m5.large", &c).unwrap());
        }

        #[test]
        fn exec_latency_non_increasing(lat in 1u64..2000, m1 in 512u32..4096, m2 in 512u32..4096) {
            let c = card();
            let m = profile("x", 70.0, lat);
            let (lo, hi) = (m1.min(m2), m1.max(m2));
            prop_assert!(serverless_exec_latency(&m, hi, &c).unwrap() <= serverless_exec_latency(&m, lo, &c).unwrap());
        }

        #[test]
        fn warm_pool_never_reuses_a_container_twice(gaps in proptest::collection::vec(0u64..3000, 1..60)) {
            let c = card();
            let mut pool = ServerlessPool::new(1024);
            let mut now = 0;
            let mut finishes: Vec<u64> = Vec::new();
            for g in gaps {
                now += g;
                let free_before = finishes.iter().filter(|&&f| f <= now && f + 600_000 >= now).count();
                let d = pool.dispatch(now, 200, &c);
                prop_assert_eq!(d.cold, free_before == 0);
                if !d.cold {
                    // consume the latest free one
                    let idx = finishes.iter().enumerate()
                        .filter(|(_, &f)| f <= now && f + 600_000 >= now)
                        .max_by_key(|(_, &f)| f).unwrap().0;
                    finishes.remove(idx);
                }
                finishes.push(now + d.latency_ms);
                prop_assert_eq!(pool.warm_count(now, 600_000) as usize,
                    finishes.iter().filter(|&&f| f <= now && f + 600_000 >= now).count());
            }
        }
    }
}
