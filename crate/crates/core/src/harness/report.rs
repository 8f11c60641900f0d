//! Cohort summaries over a results table and their rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{bca_bootstrap, BootstrapCi, HarnessError, Result};
use crate::agreement::{AlignConfig, AlignmentResult, Representation};
use crate::signal::Label;

/// Per-case metrics for one configuration, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseValues {
    pub case_id: String,
    pub dice: f64,
    pub iou: f64,
    pub spearman: f64,
    pub diagnosis: Option<Label>,
    pub prediction: Option<Label>,
}

pub fn per_case_values(results: &[AlignmentResult], config: AlignConfig) -> Vec<CaseValues> {
    let mut by_case: BTreeMap<&str, Vec<&AlignmentResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.config == config) {
        by_case.entry(&r.case_id).or_default().push(r);
    }
    by_case
        .into_iter()
        .map(|(case_id, rs)| {
            let n = rs.len() as f64;
            let avg = |f: fn(&AlignmentResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            CaseValues {
                case_id: case_id.to_string(),
                dice: avg(|r| r.dice),
                iou: avg(|r| r.iou),
                spearman: avg(|r| r.spearman),
                diagnosis: rs.iter().find_map(|r| r.diagnosis),
                prediction: rs.iter().find_map(|r| r.prediction),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dice: BootstrapCi,
    pub iou: BootstrapCi,
    pub spearman: BootstrapCi,
}

fn summarize(values: &[CaseValues], b: usize, alpha: f64, seed: u64) -> Result<MetricSummary> {
    let col = |f: fn(&CaseValues) -> f64| values.iter().map(f).collect::<Vec<_>>();
    Ok(MetricSummary {
        dice: bca_bootstrap(&col(|v| v.dice), b, alpha, seed)?,
        iou: bca_bootstrap(&col(|v| v.iou), b, alpha, seed.wrapping_add(1))?,
        spearman: bca_bootstrap(&col(|v| v.spearman), b, alpha, seed.wrapping_add(2))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: AlignConfig,
    pub n_cases: usize,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumAxis {
    Diagnosis,
    Agreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub config: AlignConfig,
    pub axis: StratumAxis,
    pub condition: String,
    pub n_cases: usize,
    /// `None` for an empty stratum.
    pub metrics: Option<MetricSummary>,
    /// Fewer than two cases.
    pub flagged: bool,
}

/// Splits one configuration's cases by expert diagnosis and by whether the
/// model's prediction matches it.
pub fn stratify(
    results: &[AlignmentResult],
    config: AlignConfig,
    diagnoses: &BTreeMap<String, Label>,
    predictions: &BTreeMap<String, Label>,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Stratum>> {
    let values = per_case_values(results, config);
    let mut keyed = Vec::with_capacity(values.len());
    for v in values {
        let d = *diagnoses
            .get(&v.case_id)
            .ok_or_else(|| HarnessError::MissingDiagnosis(v.case_id.clone()))?;
        let p = *predictions
            .get(&v.case_id)
            .ok_or_else(|| HarnessError::MissingPrediction(v.case_id.clone()))?;
        keyed.push((v, d, p));
    }
    type Pick = fn(Label, Label) -> bool;
    let groups: [(StratumAxis, &str, Pick); 4] = [
        (StratumAxis::Diagnosis, "Abnormal", |d, _| d == Label::Abnormal),
        (StratumAxis::Diagnosis, "Normal", |d, _| d == Label::Normal),
        (StratumAxis::Agreement, "Agreement", |d, p| d == p),
        (StratumAxis::Agreement, "Disagreement", |d, p| d != p),
    ];
    groups
        .iter()
        .enumerate()
        .map(|(i, (axis, condition, pick))| {
            let members: Vec<CaseValues> = keyed
                .iter()
                .filter(|(_, d, p)| pick(*d, *p))
                .map(|(v, _, _)| v.clone())
                .collect();
            let metrics = if members.is_empty() {
                None
            } else {
                Some(summarize(&members, b, alpha, seed.wrapping_add(10 * (i as u64 + 1)))?)
            };
            Ok(Stratum {
                config,
                axis: *axis,
                condition: condition.to_string(),
                n_cases: members.len(),
                metrics,
                flagged: members.len() < 2,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub bootstrap_b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub configs: Vec<ConfigSummary>,
    /// Highest mean Dice per representation; ties keep the first config.
    pub winners: Vec<ConfigSummary>,
    /// Strata of each winning configuration.
    pub strata: Vec<Stratum>,
}

pub fn cohort_report(results: &[AlignmentResult], b: usize, alpha: f64, seed: u64) -> Result<CohortReport> {
    let configs: BTreeSet<AlignConfig> = results.iter().map(|r| r.config).collect();
    let mut summaries = Vec::with_capacity(configs.len());
    for (i, &config) in configs.iter().enumerate() {
        let values = per_case_values(results, config);
        let bseed = seed.wrapping_add(1000 * i as u64);
        summaries.push(ConfigSummary {
            config,
            n_cases: values.len(),
            metrics: summarize(&values, b, alpha, bseed)?,
        });
    }

    let mut winners: Vec<ConfigSummary> = Vec::new();
    for rep in Representation::ALL {
        let best =
            summaries
                .iter()
                .filter(|s| s.config.representation == rep)
                .fold(None::<&ConfigSummary>, |best, s| match best {
                    Some(b) if b.metrics.dice.mean >= s.metrics.dice.mean => Some(b),
                    _ => Some(s),
                });
        winners.extend(best.cloned());
    }

    let mut diagnoses = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    for r in results {
        if let Some(d) = r.diagnosis {
            diagnoses.entry(r.case_id.clone()).or_insert(d);
        }
        if let Some(p) = r.prediction {
            predictions.entry(r.case_id.clone()).or_insert(p);
        }
    }
    let mut strata = Vec::new();
    for (i, w) in winners.iter().enumerate() {
        let sseed = seed.wrapping_add(1_000_000 + 1000 * i as u64);
        strata.extend(stratify(results, w.config, &diagnoses, &predictions, b, alpha, sseed)?);
    }

    Ok(CohortReport {
        bootstrap_b: b,
        alpha,
        seed,
        configs: summaries,
        winners,
        strata,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Some(ReportFormat::Json),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            _ => None,
        }
    }
}

/// `mean (lo–hi)` with two decimals.
pub fn format_ci(ci: &BootstrapCi) -> String {
    format!("{:.2} ({:.2}–{:.2})", ci.mean, ci.lo, ci.hi)
}

const EMPTY_CELL: &str = "—";
const METRIC_HEADER: &str = "Dice Score | IoU Score | Spearman Cor.";

fn metric_cells(m: Option<&MetricSummary>) -> String {
    match m {
        Some(m) => format!(
            "{} | {} | {}",
            format_ci(&m.dice),
            format_ci(&m.iou),
            format_ci(&m.spearman)
        ),
        None => [EMPTY_CELL; 3].join(" | "),
    }
}

fn markdown(report: &CohortReport) -> String {
    let mut s = String::new();
    let level = (1.0 - report.alpha) * 100.0;
    let note = format!(
        "Values are bootstrap means with {level:.0}% BCa confidence intervals (B = {}).",
        report.bootstrap_b
    );
    let _ = writeln!(s, "# Explanation alignment\n\n{note}\n");

    let _ = writeln!(s, "## Best configuration per representation\n");
    let _ = writeln!(s, "| Modality | {METRIC_HEADER} |\n|---|---|---|---|");
    for w in &report.winners {
        let _ = writeln!(
            s,
            "| {} | {} |",
            w.config.representation.label(),
            metric_cells(Some(&w.metrics))
        );
    }
    if !report.winners.is_empty() {
        let picks: Vec<String> = report
            .winners
            .iter()
            .map(|w| {
                format!(
                    "{}: {}, {}",
                    w.config.representation.label(),
                    w.config.method.label(),
                    w.config.prep.label()
                )
            })
            .collect();
        let _ = writeln!(s, "\nSelected by mean Dice: {}.", picks.join("; "));
    }

    let _ = writeln!(s, "\n## Strata\n");
    let _ = writeln!(
        s,
        "| Modality | Condition | N | {METRIC_HEADER} |\n|---|---|---|---|---|---|"
    );
    for (axis, title) in [
        (StratumAxis::Diagnosis, "By diagnosis"),
        (StratumAxis::Agreement, "By agreement"),
    ] {
        let _ = writeln!(s, "| *{title}* | | | | | |");
        let mut last = None;
        for st in report.strata.iter().filter(|st| st.axis == axis) {
            let rep = st.config.representation;
            let name = if last == Some(rep) { "" } else { rep.label() };
            last = Some(rep);
            let n = if st.flagged {
                format!("{}*", st.n_cases)
            } else {
                st.n_cases.to_string()
            };
            let _ = writeln!(
                s,
                "| {name} | {} | {n} | {} |",
                st.condition,
                metric_cells(st.metrics.as_ref())
            );
        }
    }
    let _ = writeln!(s, "\n\\* fewer than two cases.");

    let _ = writeln!(s, "\n## All configurations\n");
    let _ = writeln!(
        s,
        "| Modality | Method | Prep | N | {METRIC_HEADER} |\n|---|---|---|---|---|---|---|"
    );
    for c in &report.configs {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            c.config.representation.label(),
            c.config.method.label(),
            c.config.prep.label(),
            c.n_cases,
            metric_cells(Some(&c.metrics))
        );
    }
    s
}

pub fn emit_report(report: &CohortReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("reports serialize") + "\n",
        ReportFormat::Markdown => markdown(report),
    }
}
