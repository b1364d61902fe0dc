//! Config-driven experiments: policy × repetition grids, comparison tables
//! normalized to a baseline policy, and plot-ready CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::cloud::{cost_per_million, RateCard};
use crate::error::{Error, Result};
use crate::money::Money;
use crate::policy::PolicySpec;
use crate::sim::{self, over_provision_ratio, sha256_json, LedgerMode, MetricsReport, RunOptions};
use crate::workload::{
    assign_constraints, gen_burst, gen_constant, gen_piecewise, load_trace_csv, ArrivalTrace, Jitter, MixSpec,
    QuerySpec, RateSegment, SelectionMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    /// CSV trace, relative to the config file.
    File { path: PathBuf },
    Constant {
        rate_per_s: f64,
        duration_s: f64,
        #[serde(default)]
        jitter: Jitter,
    },
    Burst {
        base_rate: f64,
        peak_rate: f64,
        peak_start_s: f64,
        peak_len_s: f64,
        duration_s: f64,
        #[serde(default)]
        jitter: Jitter,
    },
    Piecewise {
        segments: Vec<RateSegment>,
        duration_s: f64,
        #[serde(default)]
        jitter: Jitter,
    },
}

impl TraceSource {
    /// Builds the trace; generators draw from `seed`.
    pub fn build(&self, base_dir: &Path, seed: u64) -> Result<ArrivalTrace> {
        match self {
            TraceSource::File { path } => load_trace_csv(base_dir.join(path)),
            TraceSource::Constant {
                rate_per_s,
                duration_s,
                jitter,
            } => gen_constant(*rate_per_s, *duration_s, *jitter, seed),
            TraceSource::Burst {
                base_rate,
                peak_rate,
                peak_start_s,
                peak_len_s,
                duration_s,
                jitter,
            } => gen_burst(
                *base_rate,
                *peak_rate,
                *peak_start_s,
                *peak_len_s,
                *duration_s,
                *jitter,
                seed,
            ),
            TraceSource::Piecewise {
                segments,
                duration_s,
                jitter,
            } => gen_piecewise(segments, *duration_s, *jitter, seed),
        }
    }
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub trace: TraceSource,
    #[serde(default)]
    pub mix: MixSpec,
    #[serde(default)]
    pub selection: SelectionMode,
    pub catalog: PathBuf,
    /// Restrict the catalog to these models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    pub rate_card: PathBuf,
    pub policies: Vec<PolicySpec>,
    pub baseline: String,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default)]
    pub ledger: LedgerMode,
    /// Request rate used to price models during selection; defaults to the
    /// trace's mean rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_rate_per_s: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// A validated experiment with its inputs loaded.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub catalog: Catalog,
    pub card: RateCard,
}

impl Experiment {
    /// Loads every referenced file and checks every section, reporting all
    /// problems in one error.
    pub fn prepare(config: ExperimentConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let base_dir = base_dir.into();
        let mut problems = Vec::new();
        let catalog = Catalog::load(base_dir.join(&config.catalog))
            .and_then(|c| match &config.models {
                Some(names) => c.subset(&names.iter().map(String::as_str).collect::<Vec<_>>()),
                None => Ok(c),
            })
            .map_err(|e| problems.push(format!("catalog: {e}")))
            .ok();
        let card = RateCard::load(base_dir.join(&config.rate_card))
            .map_err(|e| problems.push(format!("rate_card: {e}")))
            .ok();
        if let TraceSource::File { path } = &config.trace {
            if let Err(e) = load_trace_csv(base_dir.join(path)) {
                problems.push(format!("trace: {e}"));
            }
        }
        if let Err(e) = config.mix.validate() {
            problems.push(format!("mix: {e}"));
        }
        if config.policies.is_empty() {
            problems.push("policies: empty".into());
        }
        let mut labels = BTreeMap::new();
        for p in &config.policies {
            if let Err(e) = p.validate() {
                problems.push(format!("policies: {e}"));
            }
            if labels.insert(p.label(), ()).is_some() {
                problems.push(format!("policies: duplicate label {}", p.label()));
            }
        }
        if !labels.contains_key(&config.baseline) {
            problems.push(format!("baseline {} is not in the policy list", config.baseline));
        }
        if config.repetitions == 0 {
            problems.push("repetitions must be at least 1".into());
        }
        if config.selection_rate_per_s.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
            problems.push("selection_rate_per_s must be positive".into());
        }
        match (catalog, card) {
            (Some(catalog), Some(card)) if problems.is_empty() => Ok(Experiment {
                config,
                base_dir,
                catalog,
                card,
            }),
            _ => Err(Error::Config(problems.join("; "))),
        }
    }

    pub fn load(config_path: impl AsRef<Path>) -> Result<Self> {
        let path = config_path.as_ref();
        let config = ExperimentConfig::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::prepare(config, base)
    }

    pub fn rep_seed(&self, rep: u32) -> u64 {
        self.config.seed.wrapping_add(rep as u64)
    }

    /// Trace and tagged queries of one repetition.
    pub fn workload(&self, rep: u32) -> Result<(ArrivalTrace, Vec<QuerySpec>)> {
        let seed = self.rep_seed(rep);
        let trace = self.config.trace.build(&self.base_dir, seed)?;
        let mix = MixSpec {
            rng_seed: seed,
            ..self.config.mix.clone()
        };
        let rate = self
            .config
            .selection_rate_per_s
            .unwrap_or_else(|| (trace.len() as f64 / (trace.duration_ms as f64 / 1000.0)).max(1.0));
        let budget = mix.relaxed_slo_ms;
        let card = &self.card;
        let queries = assign_constraints(&trace, &mix, &self.catalog, self.config.selection, |m| {
            cost_per_million(m, card, rate, budget).expect("catalog models fit the reference VM")
        })?;
        Ok((trace, queries))
    }

    /// Runs every (policy, repetition) pair, in parallel, in config order.
    pub fn run(&self) -> Result<Vec<MetricsReport>> {
        let reps = (0..self.config.repetitions)
            .map(|rep| self.workload(rep))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(u32, &PolicySpec)> = (0..self.config.repetitions)
            .flat_map(|rep| self.config.policies.iter().map(move |p| (rep, p)))
            .collect();
        let opts = RunOptions {
            ledger: self.config.ledger,
        };
        jobs.par_iter()
            .map(|&(rep, policy)| {
                let (trace, queries) = &reps[rep as usize];
                let mut report = sim::run_with(trace, queries, policy, &self.card, &self.catalog, self.rep_seed(rep), opts)?;
                report.repetition = rep;
                Ok(report)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub normalized_cost: f64,
    pub slo_violation_pct: f64,
    pub over_provision_ratio: f64,
    pub serverless_share_pct: f64,
    pub total_cost: f64,
    pub repetitions: u32,
    pub normalized_cost_min: f64,
    pub normalized_cost_max: f64,
    pub slo_violation_pct_min: f64,
    pub slo_violation_pct_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    /// Fixed-width text rendering.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<24} {:>10} {:>10} {:>10} {:>11} {:>12}\n",
            "policy", "norm_cost", "slo_viol%", "overprov", "serverless%", "cost"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>10.4} {:>10.3} {:>10.4} {:>11.3} {:>12.6}",
                r.policy, r.normalized_cost, r.slo_violation_pct, r.over_provision_ratio, r.serverless_share_pct, r.total_cost
            );
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Normalizes every policy against `baseline` within each repetition, then
/// averages over repetitions. Rows keep the order policies first appear in.
pub fn compare(reports: &[MetricsReport], baseline: &str) -> Result<ComparisonTable> {
    let mut trace_of_rep: BTreeMap<u32, &MetricsReport> = BTreeMap::new();
    for r in reports {
        let first = *trace_of_rep.entry(r.repetition).or_insert(r);
        if first.trace_hash != r.trace_hash {
            return Err(Error::Comparison(format!(
                "report {} (repetition {}) ran on a different trace than {}",
                r.policy_name, r.repetition, first.policy_name
            )));
        }
    }
    let base: BTreeMap<u32, &MetricsReport> = reports
        .iter()
        .filter(|r| r.policy_name == baseline)
        .map(|r| (r.repetition, r))
        .collect();
    if base.is_empty() {
        return Err(Error::Comparison(format!("no report for baseline {baseline}")));
    }

    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.policy_name.as_str()) {
            order.push(&r.policy_name);
        }
    }
    let mut rows = Vec::new();
    for name in order {
        let (mut norm, mut viol, mut over, mut share, mut cost) = (vec![], vec![], vec![], vec![], vec![]);
        for r in reports.iter().filter(|r| r.policy_name == name) {
            let b = base.get(&r.repetition).ok_or_else(|| {
                Error::Comparison(format!(
                    "report {} has repetition {} with no baseline run",
                    r.policy_name, r.repetition
                ))
            })?;
            if b.total_cost == Money::ZERO {
                return Err(Error::Comparison(format!("baseline {baseline} has zero cost")));
            }
            norm.push(r.total_cost.to_f64() / b.total_cost.to_f64());
            over.push(over_provision_ratio(r, b)?);
            viol.push(r.slo_violation_pct);
            share.push(r.serverless_share_pct);
            cost.push(r.total_cost.to_f64());
        }
        let (nlo, nhi) = min_max(&norm);
        let (vlo, vhi) = min_max(&viol);
        rows.push(ComparisonRow {
            policy: name.to_string(),
            normalized_cost: if name == baseline { 1.0 } else { mean(&norm) },
            slo_violation_pct: mean(&viol),
            over_provision_ratio: if name == baseline { 1.0 } else { mean(&over) },
            serverless_share_pct: mean(&share),
            total_cost: mean(&cost),
            repetitions: norm.len() as u32,
            normalized_cost_min: nlo,
            normalized_cost_max: nhi,
            slo_violation_pct_min: vlo,
            slo_violation_pct_max: vhi,
        });
    }
    Ok(ComparisonTable {
        baseline: baseline.to_string(),
        rows,
    })
}

pub const PLOT_CSV_HEADER: &str = "policy,normalized_cost,slo_violation_pct,over_provision_ratio";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub policy: String,
    pub normalized_cost: f64,
    pub slo_violation_pct: f64,
    pub over_provision_ratio: f64,
}

/// Grouped-bar-with-line data: cost bars, violation line.
pub fn emit_plot_data(table: &ComparisonTable) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::Validation("cannot plot an empty table".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PLOT_CSV_HEADER.split(','))?;
    for r in &table.rows {
        w.write_record([
            r.policy.clone(),
            format!("{:.6}", r.normalized_cost),
            format!("{:.6}", r.slo_violation_pct),
            format!("{:.6}", r.over_provision_ratio),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != PLOT_CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {PLOT_CSV_HEADER}"),
        });
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<PlotRow>, _>>()?)
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub reports: Vec<MetricsReport>,
    pub table: ComparisonTable,
    pub files: Vec<PathBuf>,
}

fn short(hash: &str) -> &str {
    &hash[..12]
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs a prepared experiment and writes reports, table and plot CSV under
/// the output directory, each named by a hash of its content.
pub fn run_prepared(exp: &Experiment) -> Result<ExperimentOutput> {
    let mut reports = exp.run()?;
    let table = compare(&reports, &exp.config.baseline)?;
    let out_dir = exp.base_dir.join(&exp.config.output);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut files = Vec::new();
    for report in &mut reports {
        let stem = format!(
            "{}-r{}-{}",
            report.policy_name,
            report.repetition,
            short(&report.config_hash)
        );
        if let Some(ledger) = report.ledger.as_mut().filter(|l| !l.requests.is_empty()) {
            let path = out_dir.join(format!("ledger-{stem}.csv"));
            sim::write_ledger_csv(&ledger.requests, &path)?;
            ledger.requests.clear();
            files.push(path);
        }
        let path = out_dir.join(format!("report-{stem}.json"));
        write_file(&path, report.to_json()?.as_bytes())?;
        files.push(path);
    }
    let table_json = serde_json::to_string_pretty(&table)?;
    let table_hash = sha256_json(&table)?;
    let path = out_dir.join(format!("comparison-{}.json", short(&table_hash)));
    write_file(&path, table_json.as_bytes())?;
    files.push(path);
    let path = out_dir.join(format!("plot-{}.csv", short(&table_hash)));
    write_file(&path, emit_plot_data(&table)?.as_bytes())?;
    files.push(path);
    Ok(ExperimentOutput { reports, table, files })
}

/// Loads, validates and runs the experiment at `config_path`.
pub fn run_experiment(config_path: impl AsRef<Path>, seed: Option<u64>) -> Result<ExperimentOutput> {
    let mut exp = Experiment::load(config_path)?;
    if let Some(seed) = seed {
        exp.config.seed = seed;
    }
    run_prepared(&exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;

    fn fixture_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    fn config(policies: &[PolicyKind]) -> ExperimentConfig {
        ExperimentConfig {
            name: None,
            trace: TraceSource::Constant {
                rate_per_s: 5.0,
                duration_s: 120.0,
                jitter: Jitter::Poisson,
            },
            mix: MixSpec::default(),
            selection: SelectionMode::Paragon,
            catalog: "catalog.json".into(),
            models: None,
            rate_card: "rate_card.json".into(),
            policies: policies.iter().map(|&k| PolicySpec::new(k)).collect(),
            baseline: "reactive".into(),
            output: "out".into(),
            seed: 3,
            repetitions: 1,
            ledger: LedgerMode::Billing,
            selection_rate_per_s: None,
        }
    }

    #[test]
    fn validation_aggregates_problems() {
        let mut c = config(&[PolicyKind::Mixed]);
        c.catalog = "missing.json".into();
        c.repetitions = 0;
        let err = Experiment::prepare(c, fixture_dir()).unwrap_err();
        let msg = err.to_string();
        assert!(err.is_validation());
        assert!(msg.contains("catalog") && msg.contains("baseline") && msg.contains("repetitions"), "{msg}");
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = r#"{"trace":{"kind":"constant","rate_per_s":1,"duration_s":10,"bogus":1},
            "catalog":"c","rate_card":"r","policies":[],"baseline":"reactive","output":"o"}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn single_policy_table() {
        let exp = Experiment::prepare(config(&[PolicyKind::Reactive]), fixture_dir()).unwrap();
        let reports = exp.run().unwrap();
        let t = compare(&reports, "reactive").unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].normalized_cost, 1.0);
        assert_eq!(t.rows[0].over_provision_ratio, 1.0);
    }

    #[test]
    fn five_policies_five_rows_and_repetitions_average() {
        let mut c = config(&PolicyKind::ALL);
        c.repetitions = 2;
        let exp = Experiment::prepare(c, fixture_dir()).unwrap();
        let reports = exp.run().unwrap();
        assert_eq!(reports.len(), 10);
        let t = compare(&reports, "reactive").unwrap();
        assert_eq!(t.rows.len(), 5);
        assert!(t.rows.iter().all(|r| r.repetitions == 2 && r.normalized_cost > 0.0));
        assert_ne!(reports[0].trace_hash, reports[5].trace_hash);
    }

    #[test]
    fn compare_normalizes_and_checks_traces() {
        let exp = Experiment::prepare(config(&[PolicyKind::Reactive, PolicyKind::Exascale]), fixture_dir()).unwrap();
        let mut reports = exp.run().unwrap();
        reports[1].total_cost = Money::from_f64(reports[0].total_cost.to_f64() * 0.9).unwrap();
        let t = compare(&reports, "reactive").unwrap();
        assert!((t.rows[1].normalized_cost - 0.9).abs() < 1e-9);
        assert_eq!(t.rows[1].slo_violation_pct, reports[1].slo_violation_pct);

        let mut third = reports[1].clone();
        third.policy_name = "odd".into();
        third.trace_hash = "elsewhere".into();
        reports.push(third);
        let err = compare(&reports, "reactive").unwrap_err();
        assert!(err.to_string().contains("odd"));
    }

    #[test]
    fn plot_round_trip() {
        let table = ComparisonTable {
            baseline: "reactive".into(),
            rows: (0..5)
                .map(|i| ComparisonRow {
                    policy: format!("p{i}"),
                    normalized_cost: 1.0 / (i as f64 + 1.0),
                    slo_violation_pct: 12.345678912,
                    over_provision_ratio: 1.25,
                    serverless_share_pct: 0.0,
                    total_cost: 1.0,
                    repetitions: 1,
                    normalized_cost_min: 0.0,
                    normalized_cost_max: 0.0,
                    slo_violation_pct_min: 0.0,
                    slo_violation_pct_max: 0.0,
                })
                .collect(),
        };
        let csv = emit_plot_data(&table).unwrap();
        assert_eq!(csv.lines().count(), 6);
        let rows = parse_plot_data(&csv).unwrap();
        for (a, b) in table.rows.iter().zip(&rows) {
            assert_eq!(a.policy, b.policy);
            assert!((a.normalized_cost - b.normalized_cost).abs() < 5e-7);
            assert!((a.slo_violation_pct - b.slo_violation_pct).abs() < 5e-7);
        }
        let empty = ComparisonTable {
            baseline: "x".into(),
            rows: vec![],
        };
        assert!(emit_plot_data(&empty).is_err());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["catalog.json", "rate_card.json"] {
            std::fs::copy(fixture_dir().join(f), dir.path().join(f)).unwrap();
        }
        let exp = Experiment::prepare(config(&[PolicyKind::Reactive, PolicyKind::Paragon]), dir.path()).unwrap();
        let a = run_prepared(&exp).unwrap();
        let first: Vec<Vec<u8>> = a.files.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let b = run_prepared(&exp).unwrap();
        assert_eq!(a.files, b.files);
        let second: Vec<Vec<u8>> = b.files.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }
}
