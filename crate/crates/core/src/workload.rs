//! Arrival traces and per-query constraints.
//!
//! Generators work on a piecewise-constant rate profile. Deterministic
//! arrivals sit at the integer points of the cumulative rate function, so a
//! constant profile gives even spacing of `1000 / rate` ms; Poisson arrivals
//! use unit-exponential steps of the same function (time rescaling).

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::catalog::{select_model_naive, select_model_paragon, Catalog, ConstraintSet, CostEstimate, ModelProfile};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalTrace {
    pub arrivals_ms: Vec<u64>,
    pub duration_ms: u64,
}

impl ArrivalTrace {
    pub fn new(mut arrivals_ms: Vec<u64>, duration_ms: u64) -> Result<Self> {
        arrivals_ms.sort_unstable();
        if let Some(&last) = arrivals_ms.last() {
            if last >= duration_ms {
                return Err(Error::Validation(format!(
                    "arrival at {last} ms is outside the {duration_ms} ms horizon"
                )));
            }
        }
        Ok(ArrivalTrace { arrivals_ms, duration_ms })
    }

    pub fn len(&self) -> usize {
        self.arrivals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals_ms.is_empty()
    }

    /// Arrival counts per `window_s`-second bin over the whole horizon.
    pub fn window_counts(&self, window_s: u64) -> Vec<u64> {
        let w = window_s.max(1) * 1000;
        let bins = self.duration_ms.div_ceil(w) as usize;
        let mut counts = vec![0u64; bins];
        for &t in &self.arrivals_ms {
            counts[(t / w) as usize] += 1;
        }
        counts
    }

    /// Writes one timestamp (ms) per line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        for t in &self.arrivals_ms {
            w.write_record([t.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Writes the `sec,count` rate format.
    pub fn write_rate_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["sec", "count"])?;
        for (sec, count) in self.window_counts(1).iter().enumerate() {
            w.write_record([sec.to_string(), count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Loads either a headerless timestamp-per-line file or a `sec,count` rate file.
pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<ArrivalTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(&text)
}

pub fn parse_trace_csv(text: &str) -> Result<ArrivalTrace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records().peekable();
    let is_rate = match records.peek() {
        None => return Err(Error::Validation("trace file is empty".into())),
        Some(Ok(first)) => first.len() == 2 && &first[0] == "sec" && &first[1] == "count",
        Some(Err(_)) => false,
    };
    if is_rate {
        records.next();
    }

    let parse_int = |field: &str, line: u64| -> Result<u64> {
        let v: i64 = field.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected an integer, found {field:?}"),
        })?;
        u64::try_from(v).map_err(|_| Error::Validation(format!("line {line}: negative value {v}")))
    };

    let mut arrivals = Vec::new();
    let mut horizon_ms = 0u64;
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if is_rate {
            if rec.len() != 2 {
                return Err(Error::Parse {
                    line,
                    msg: "expected sec,count".into(),
                });
            }
            let sec = parse_int(&rec[0], line)?;
            let count = parse_int(&rec[1], line)?;
            arrivals.extend((0..count).map(|i| sec * 1000 + i * 1000 / count));
            horizon_ms = horizon_ms.max((sec + 1) * 1000);
        } else {
            if rec.len() != 1 {
                return Err(Error::Parse {
                    line,
                    msg: "expected one timestamp per line".into(),
                });
            }
            let t = parse_int(&rec[0], line)?;
            arrivals.push(t);
            horizon_ms = horizon_ms.max((t + 1).div_ceil(1000) * 1000);
        }
    }
    if arrivals.is_empty() && horizon_ms == 0 {
        return Err(Error::Validation("trace file has no arrivals".into()));
    }
    ArrivalTrace::new(arrivals, horizon_ms)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter {
    #[default]
    None,
    Poisson,
}

/// One constant-rate stretch of a rate profile, starting at `start_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSegment {
    pub start_s: f64,
    pub rate_per_s: f64,
}

/// Arrivals for a piecewise-constant rate profile over `[0, duration_s)`.
///
/// Segments must start at 0 and be strictly increasing in `start_s`.
pub fn gen_piecewise(segments: &[RateSegment], duration_s: f64, jitter: Jitter, seed: u64) -> Result<ArrivalTrace> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::Validation("duration must be positive".into()));
    }
    if segments.first().is_none_or(|s| s.start_s != 0.0) {
        return Err(Error::Validation("rate profile must start at 0 s".into()));
    }
    if segments.windows(2).any(|w| w[1].start_s <= w[0].start_s) {
        return Err(Error::Validation("rate segments must be strictly increasing".into()));
    }
    if segments.iter().any(|s| !(s.rate_per_s.is_finite() && s.rate_per_s >= 0.0)) {
        return Err(Error::Validation("rates must be finite and non-negative".into()));
    }
    if segments.last().unwrap().start_s >= duration_s {
        return Err(Error::Validation("rate segment starts beyond the horizon".into()));
    }

    // neighbours with equal rates are one span, so a flat burst equals a constant trace
    let mut merged: Vec<RateSegment> = Vec::with_capacity(segments.len());
    for s in segments {
        if merged.last().is_none_or(|m| m.rate_per_s != s.rate_per_s) {
            merged.push(*s);
        }
    }

    // (start, end, rate, cumulative arrivals at start)
    let mut spans = Vec::with_capacity(merged.len());
    let mut cumulative = 0.0;
    for (i, s) in merged.iter().enumerate() {
        let end = merged.get(i + 1).map_or(duration_s, |n| n.start_s);
        spans.push((s.start_s, end, s.rate_per_s, cumulative));
        cumulative += (end - s.start_s) * s.rate_per_s;
    }
    let total = cumulative;
    let duration_ms = (duration_s * 1000.0).ceil() as u64;

    // inverse of the cumulative rate function; levels arrive in increasing order
    let mut cursor = 0usize;
    let mut invert = |level: f64| -> Option<u64> {
        while let Some(&(start, end, rate, base)) = spans.get(cursor) {
            if rate > 0.0 && level < base + (end - start) * rate {
                let t_ms = (start * 1000.0 + (level - base) * 1000.0 / rate).floor() as u64;
                return (t_ms < duration_ms).then_some(t_ms);
            }
            cursor += 1;
        }
        None
    };

    let mut arrivals = Vec::new();
    match jitter {
        Jitter::None => {
            let mut i = 0u64;
            while (i as f64) < total {
                if let Some(t) = invert(i as f64) {
                    arrivals.push(t);
                }
                i += 1;
            }
        }
        Jitter::Poisson => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut level: f64 = rng.sample(Exp1);
            while level < total {
                if let Some(t) = invert(level) {
                    arrivals.push(t);
                }
                let step: f64 = rng.sample(Exp1);
                level += step;
            }
        }
    }
    ArrivalTrace::new(arrivals, duration_ms)
}

/// Constant-rate arrivals, evenly spaced or Poisson.
pub fn gen_constant(rate_per_s: f64, duration_s: f64, jitter: Jitter, seed: u64) -> Result<ArrivalTrace> {
    if !(rate_per_s.is_finite() && rate_per_s > 0.0) {
        return Err(Error::Validation("rate must be positive".into()));
    }
    gen_piecewise(
        &[RateSegment {
            start_s: 0.0,
            rate_per_s,
        }],
        duration_s,
        jitter,
        seed,
    )
}

/// Constant `base_rate` with one window at `peak_rate`.
pub fn gen_burst(
    base_rate: f64,
    peak_rate: f64,
    peak_start_s: f64,
    peak_len_s: f64,
    duration_s: f64,
    jitter: Jitter,
    seed: u64,
) -> Result<ArrivalTrace> {
    if !(base_rate > 0.0 && peak_rate >= base_rate) {
        return Err(Error::Validation("need 0 < base_rate <= peak_rate".into()));
    }
    if !(peak_start_s >= 0.0 && peak_len_s > 0.0 && peak_start_s + peak_len_s <= duration_s) {
        return Err(Error::Validation(format!(
            "peak window [{peak_start_s}, {}) is outside the {duration_s} s horizon",
            peak_start_s + peak_len_s
        )));
    }
    let mut segments = Vec::new();
    if peak_start_s > 0.0 {
        segments.push(RateSegment {
            start_s: 0.0,
            rate_per_s: base_rate,
        });
    }
    segments.push(RateSegment {
        start_s: peak_start_s,
        rate_per_s: peak_rate,
    });
    if peak_start_s + peak_len_s < duration_s {
        segments.push(RateSegment {
            start_s: peak_start_s + peak_len_s,
            rate_per_s: base_rate,
        });
    }
    gen_piecewise(&segments, duration_s, jitter, seed)
}

fn median(sorted: &[u64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

/// `100 * (peak - median) / peak` of the given window counts; 0 when empty or all zero.
pub fn peak_to_median_counts(counts: &[u64]) -> f64 {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let Some(&peak) = sorted.last() else {
        return 0.0;
    };
    if peak == 0 {
        return 0.0;
    }
    100.0 * (peak as f64 - median(&sorted)) / peak as f64
}

pub fn peak_to_median(trace: &ArrivalTrace, window_s: u64) -> f64 {
    peak_to_median_counts(&trace.window_counts(window_s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SloClass {
    Strict,
    Relaxed,
}

impl SloClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SloClass::Strict => "strict",
            SloClass::Relaxed => "relaxed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub id: u64,
    pub arrival_ms: u64,
    pub slo_class: SloClass,
    pub constraints: ConstraintSet,
    pub model_name: String,
}

impl QuerySpec {
    /// Latency bound used for SLO accounting.
    pub fn latency_max_ms(&self) -> u64 {
        self.constraints.latency_max_ms.unwrap_or(u64::MAX)
    }
}

/// One way a query of a class can be constrained. The latency bound defaults
/// to the class SLO.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintTemplate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_min_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_max_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_budget: Option<crate::money::Money>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl ConstraintTemplate {
    pub fn accuracy(accuracy_min_pct: f64) -> Self {
        ConstraintTemplate {
            accuracy_min_pct: Some(accuracy_min_pct),
            latency_max_ms: None,
            cost_budget: None,
            weight: 1.0,
        }
    }

    fn constraints(&self, class_slo_ms: u64) -> ConstraintSet {
        ConstraintSet {
            accuracy_min_pct: self.accuracy_min_pct,
            latency_max_ms: Some(self.latency_max_ms.unwrap_or(class_slo_ms)),
            cost_budget: self.cost_budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub strict_fraction: f64,
    pub strict_slo_ms: u64,
    pub relaxed_slo_ms: u64,
    #[serde(default = "default_templates")]
    pub strict_templates: Vec<ConstraintTemplate>,
    #[serde(default = "default_templates")]
    pub relaxed_templates: Vec<ConstraintTemplate>,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_templates() -> Vec<ConstraintTemplate> {
    vec![ConstraintTemplate::accuracy(0.0)]
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            strict_fraction: 0.5,
            strict_slo_ms: 500,
            relaxed_slo_ms: 5000,
            strict_templates: default_templates(),
            relaxed_templates: default_templates(),
            rng_seed: 0,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strict_fraction) {
            return Err(Error::Config(format!("strict_fraction {} outside [0, 1]", self.strict_fraction)));
        }
        if self.strict_slo_ms >= self.relaxed_slo_ms {
            return Err(Error::Config("strict_slo_ms must be below relaxed_slo_ms".into()));
        }
        for (class, templates) in [("strict", &self.strict_templates), ("relaxed", &self.relaxed_templates)] {
            if templates.is_empty() {
                return Err(Error::Config(format!("{class} class has no constraint templates")));
            }
            if templates.iter().any(|t| !(t.weight.is_finite() && t.weight > 0.0)) {
                return Err(Error::Config(format!("{class} template weights must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Naive,
    #[default]
    Paragon,
}

/// Resolves each constraint template to a model once, then tags every arrival
/// with a seeded class draw, a template draw and that template's model.
pub fn assign_constraints<F, C>(
    trace: &ArrivalTrace,
    mix: &MixSpec,
    catalog: &Catalog,
    mode: SelectionMode,
    cost_fn: F,
) -> Result<Vec<QuerySpec>>
where
    F: Fn(&ModelProfile) -> C,
    C: Into<CostEstimate>,
{
    mix.validate()?;
    let resolve = |class: SloClass, slo: u64, templates: &[ConstraintTemplate]| -> Result<Vec<(ConstraintSet, String)>> {
        templates
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let c = t.constraints(slo);
                c.validate()?;
                let choice = match mode {
                    SelectionMode::Naive => select_model_naive(catalog, &c),
                    SelectionMode::Paragon => select_model_paragon(catalog, &c, &cost_fn)?,
                };
                match (choice.model_name, mode) {
                    (Some(name), SelectionMode::Naive) => Ok((c, name)),
                    (Some(name), SelectionMode::Paragon) if choice.satisfied => Ok((c, name)),
                    _ => Err(Error::Config(format!(
                        "{} template #{i} ({c:?}) has no feasible model",
                        class.as_str()
                    ))),
                }
            })
            .collect()
    };
    let strict = resolve(SloClass::Strict, mix.strict_slo_ms, &mix.strict_templates)?;
    let relaxed = resolve(SloClass::Relaxed, mix.relaxed_slo_ms, &mix.relaxed_templates)?;
    let weights = |ts: &[ConstraintTemplate]| WeightedIndex::new(ts.iter().map(|t| t.weight)).expect("validated weights");
    let strict_pick = weights(&mix.strict_templates);
    let relaxed_pick = weights(&mix.relaxed_templates);

    let mut rng = ChaCha8Rng::seed_from_u64(mix.rng_seed);
    Ok(trace
        .arrivals_ms
        .iter()
        .enumerate()
        .map(|(i, &arrival_ms)| {
            let is_strict = rng.random_bool(mix.strict_fraction);
            let (class, pool, pick) = if is_strict {
                (SloClass::Strict, &strict, &strict_pick)
            } else {
                (SloClass::Relaxed, &relaxed, &relaxed_pick)
            };
            let (constraints, model) = &pool[pick.sample(&mut rng)];
            QuerySpec {
                id: i as u64,
                arrival_ms,
                slo_class: class,
                constraints: *constraints,
                model_name: model.clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::profile;
    use crate::money::Money;
    use proptest::prelude::*;

    #[test]
    fn parses_timestamp_file() {
        let t = parse_trace_csv("0\n500\n1000\n").unwrap();
        assert_eq!(t.arrivals_ms, [0, 500, 1000]);
        assert_eq!(t.duration_ms, 2000);
    }

    #[test]
    fn parses_rate_file() {
        let t = parse_trace_csv("sec,count\n0,2\n").unwrap();
        assert_eq!(t.arrivals_ms, [0, 500]);
        assert_eq!(t.duration_ms, 1000);
    }

    #[test]
    fn rejects_bad_trace_files() {
        assert!(matches!(parse_trace_csv(""), Err(Error::Validation(_))));
        assert!(matches!(parse_trace_csv("0\nabc\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_trace_csv("0\n-5\n"), Err(Error::Validation(_))));
        assert!(matches!(parse_trace_csv("sec,count\n0\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn constant_generator_examples() {
        let t = gen_constant(10.0, 3600.0, Jitter::None, 0).unwrap();
        assert_eq!(t.len(), 36_000);
        assert!(t.arrivals_ms.windows(2).all(|w| w[1] - w[0] == 100));
        assert_eq!(gen_constant(1.0, 1.0, Jitter::None, 0).unwrap().arrivals_ms, [0]);

        let p = gen_constant(50.0, 60.0, Jitter::Poisson, 7).unwrap();
        assert!((2700..=3300).contains(&p.len()), "{}", p.len());
        assert_eq!(p, gen_constant(50.0, 60.0, Jitter::Poisson, 7).unwrap());
        assert_ne!(p, gen_constant(50.0, 60.0, Jitter::Poisson, 8).unwrap());
    }

    #[test]
    fn burst_generator_examples() {
        let t = gen_burst(10.0, 100.0, 600.0, 60.0, 3600.0, Jitter::None, 0).unwrap();
        let counts = t.window_counts(1);
        assert_eq!(counts.len(), 3600);
        for (sec, &c) in counts.iter().enumerate() {
            let expect = if (600..660).contains(&sec) { 100 } else { 10 };
            assert_eq!(c, expect, "second {sec}");
        }
        assert_eq!(
            gen_burst(10.0, 10.0, 600.0, 60.0, 3600.0, Jitter::None, 0).unwrap(),
            gen_constant(10.0, 3600.0, Jitter::None, 0).unwrap()
        );
        assert!(gen_burst(10.0, 100.0, 3500.0, 200.0, 3600.0, Jitter::None, 0).is_err());
    }

    #[test]
    fn peak_to_median_examples() {
        assert_eq!(peak_to_median_counts(&[10, 10, 10, 100]), 90.0);
        assert_eq!(peak_to_median_counts(&[7, 7, 7]), 0.0);
        assert_eq!(peak_to_median_counts(&[5, 10]), 25.0);
        assert_eq!(peak_to_median_counts(&[0, 0]), 0.0);
        let flat = gen_constant(20.0, 120.0, Jitter::None, 0).unwrap();
        assert_eq!(peak_to_median(&flat, 1), 0.0);
    }

    fn abc() -> Catalog {
        Catalog::new(vec![profile("A", 70.0, 100), profile("B", 80.0, 300), profile("C", 90.0, 700)]).unwrap()
    }

    fn abc_cost(m: &ModelProfile) -> Money {
        Money::from_units(match m.name.as_str() {
            "A" => 1,
            "B" => 2,
            _ => 5,
        })
    }

    #[test]
    fn all_strict_mix() {
        let trace = gen_constant(10.0, 10.0, Jitter::None, 0).unwrap();
        let mix = MixSpec {
            strict_fraction: 1.0,
            ..Default::default()
        };
        let qs = assign_constraints(&trace, &mix, &abc(), SelectionMode::Paragon, abc_cost).unwrap();
        assert!(qs.iter().all(|q| q.slo_class == SloClass::Strict));
        assert!(qs.iter().all(|q| q.constraints.latency_max_ms == Some(500)));
    }

    #[test]
    fn half_mix_is_balanced_and_reproducible() {
        let trace = gen_constant(100.0, 100.0, Jitter::None, 0).unwrap();
        let mix = MixSpec {
            rng_seed: 42,
            ..Default::default()
        };
        let qs = assign_constraints(&trace, &mix, &abc(), SelectionMode::Paragon, abc_cost).unwrap();
        assert_eq!(qs.len(), 10_000);
        let strict = qs.iter().filter(|q| q.slo_class == SloClass::Strict).count();
        assert!((4800..=5200).contains(&strict), "{strict}");
        assert_eq!(qs, assign_constraints(&trace, &mix, &abc(), SelectionMode::Paragon, abc_cost).unwrap());
    }

    #[test]
    fn naive_and_paragon_pick_different_models() {
        let trace = gen_constant(10.0, 1.0, Jitter::None, 0).unwrap();
        let mix = MixSpec {
            strict_fraction: 1.0,
            strict_templates: vec![ConstraintTemplate::accuracy(80.0)],
            ..Default::default()
        };
        let paragon = assign_constraints(&trace, &mix, &abc(), SelectionMode::Paragon, abc_cost).unwrap();
        let naive = assign_constraints(&trace, &mix, &abc(), SelectionMode::Naive, abc_cost).unwrap();
        assert!(paragon.iter().all(|q| q.model_name == "B"));
        assert!(naive.iter().all(|q| q.model_name == "C"));
    }

    #[test]
    fn infeasible_template_fails_fast() {
        let trace = gen_constant(10.0, 1.0, Jitter::None, 0).unwrap();
        let mix = MixSpec {
            strict_templates: vec![ConstraintTemplate::accuracy(95.0)],
            ..Default::default()
        };
        assert!(matches!(
            assign_constraints(&trace, &mix, &abc(), SelectionMode::Paragon, abc_cost),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn window_counts_conserve_arrivals(rate in 0.5f64..200.0, dur in 1.0f64..120.0, w in 1u64..30, seed: u64) {
            let t = gen_constant(rate, dur, Jitter::Poisson, seed).unwrap();
            prop_assert_eq!(t.window_counts(w).iter().sum::<u64>() as usize, t.len());
            let p2m = peak_to_median(&t, w);
            prop_assert!((0.0..100.0).contains(&p2m));
        }

        #[test]
        fn traces_sorted_and_in_horizon(base in 1.0f64..50.0, extra in 0.0f64..100.0, start in 0.0f64..50.0, len in 1.0f64..50.0, seed: u64, poisson: bool) {
            let jitter = if poisson { Jitter::Poisson } else { Jitter::None };
            let t = gen_burst(base, base + extra, start, len, 100.0, jitter, seed).unwrap();
            prop_assert!(t.arrivals_ms.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(t.arrivals_ms.iter().all(|&a| a < t.duration_ms));
            prop_assert_eq!(&t, &gen_burst(base, base + extra, start, len, 100.0, jitter, seed).unwrap());
        }

        #[test]
        fn flat_burst_equals_constant(rate in 0.5f64..100.0, start in 0.0f64..50.0, len in 1.0f64..50.0) {
            prop_assert_eq!(
                gen_burst(rate, rate, start, len, 100.0, Jitter::None, 0).unwrap(),
                gen_constant(rate, 100.0, Jitter::None, 0).unwrap()
            );
        }
    }
}
