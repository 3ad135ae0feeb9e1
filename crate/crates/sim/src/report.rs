//! Run reports, their content hash, CSV export and report diffs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use commons_core::canonical;
use commons_core::governance::GovernanceMode;
use commons_core::{Amount, Epoch, ProposalId};
use serde::{Deserialize, Serialize};

use crate::attack::AttackReport;
use crate::SimError;

pub const CSV_HEADER: &str = "epoch,gini,participation,treasury";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: Epoch,
    pub gini: Option<f64>,
    pub participation: Option<f64>,
    pub treasury: Option<Amount>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalSummary {
    pub label: String,
    pub id: ProposalId,
    pub state: String,
    pub outcome: Option<String>,
}

/// A whale-role agent whose ballots decided an approved proposal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capture {
    pub epoch: Epoch,
    pub proposal: String,
    pub by: Vec<String>,
    /// What the outcome would have been without them.
    pub counterfactual: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFailure {
    pub epoch: Epoch,
    pub step: usize,
    pub agent: Option<String>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: GovernanceMode,
    pub series: Vec<EpochMetrics>,
    pub event_counts: BTreeMap<String, u64>,
    pub proposals: Vec<ProposalSummary>,
    pub captures: Vec<Capture>,
    pub attack: Option<AttackReport>,
    pub failures: Vec<StepFailure>,
    pub final_state_hash: String,
    pub log_head: String,
    /// SHA-256 of the canonical report without this field.
    pub content_hash: String,
}

impl SimReport {
    pub fn compute_hash(&self) -> String {
        let mut v = canonical::to_value(self);
        if let Some(m) = v.as_object_mut() {
            m.remove("content_hash");
        }
        canonical::hex_digest(&canonical::hash_value(&v))
    }

    pub fn seal(mut self) -> Self {
        self.content_hash = self.compute_hash();
        self
    }

    pub fn to_json(&self) -> String {
        canonical::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
        let f = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
        for row in &self.series {
            w.write_record([
                row.epoch.to_string(),
                f(row.gini),
                f(row.participation),
                row.treasury.map_or_else(String::new, |t| t.to_string()),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
    }

    pub fn proposal(&self, label: &str) -> Option<&ProposalSummary> {
        self.proposals.iter().find(|p| p.label == label)
    }

    /// Mean of the gini series over epochs where it is defined.
    pub fn mean_gini(&self) -> Option<f64> {
        mean(self.series.iter().filter_map(|r| r.gini))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffEntry {
    pub metric: String,
    pub a: String,
    pub b: String,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportDiff {
    pub scenario: String,
    pub entries: Vec<DiffEntry>,
}

impl ReportDiff {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, metric: &str) -> Option<&DiffEntry> {
        self.entries.iter().find(|e| e.metric == metric)
    }
}

impl fmt::Display for ReportDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "no differences");
        }
        for e in &self.entries {
            write!(f, "{}: {} -> {}", e.metric, e.a, e.b)?;
            if let Some(d) = e.delta {
                write!(f, " (delta {d:+.6})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn show<T: fmt::Debug>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "-".into(), |v| format!("{v:?}"))
}

/// Per-metric differences between two runs of the same scenario.
pub fn compare(a: &SimReport, b: &SimReport) -> Result<ReportDiff, SimError> {
    if a.scenario != b.scenario {
        return Err(SimError::ScenarioMismatch {
            a: a.scenario.clone(),
            b: b.scenario.clone(),
        });
    }
    let mut entries = Vec::new();
    let mut push = |metric: String, x: String, y: String, delta: Option<f64>| {
        if x != y {
            entries.push(DiffEntry {
                metric,
                a: x,
                b: y,
                delta,
            });
        }
    };
    push("seed".into(), a.seed.to_string(), b.seed.to_string(), None);
    push("mode".into(), format!("{:?}", a.mode), format!("{:?}", b.mode), None);
    push(
        "epochs".into(),
        a.series.len().to_string(),
        b.series.len().to_string(),
        None,
    );

    type Pick = fn(&EpochMetrics) -> Option<f64>;
    let metrics: [(&str, Pick); 3] = [
        ("gini", |r| r.gini),
        ("participation", |r| r.participation),
        ("treasury", |r| r.treasury.map(|t| t as f64)),
    ];
    for (name, pick) in metrics {
        let ma = mean(a.series.iter().filter_map(pick));
        let mb = mean(b.series.iter().filter_map(pick));
        let delta = ma.zip(mb).map(|(x, y)| y - x);
        push(format!("{name}.mean"), fmt_opt(ma), fmt_opt(mb), delta);
        let fa = a.series.last().and_then(pick);
        let fb = b.series.last().and_then(pick);
        push(
            format!("{name}.final"),
            fmt_opt(fa),
            fmt_opt(fb),
            fa.zip(fb).map(|(x, y)| y - x),
        );
    }

    let kinds: BTreeSet<&String> = a.event_counts.keys().chain(b.event_counts.keys()).collect();
    for k in kinds {
        let x = a.event_counts.get(k).copied().unwrap_or(0);
        let y = b.event_counts.get(k).copied().unwrap_or(0);
        push(
            format!("events.{k}"),
            x.to_string(),
            y.to_string(),
            Some(y as f64 - x as f64),
        );
    }
    let labels: BTreeSet<&String> = a.proposals.iter().chain(&b.proposals).map(|p| &p.label).collect();
    for l in labels {
        let x = a.proposal(l).map(|p| (p.state.clone(), p.outcome.clone()));
        let y = b.proposal(l).map(|p| (p.state.clone(), p.outcome.clone()));
        push(format!("proposal.{l}"), show(&x), show(&y), None);
    }
    push(
        "captures".into(),
        a.captures.len().to_string(),
        b.captures.len().to_string(),
        Some(b.captures.len() as f64 - a.captures.len() as f64),
    );
    let attack = |r: &SimReport| r.attack.as_ref().map(|x| (x.outcome.to_string(), x.treasury_delta));
    push("attack".into(), show(&attack(a)), show(&attack(b)), None);
    push(
        "failures".into(),
        a.failures.len().to_string(),
        b.failures.len().to_string(),
        None,
    );
    push(
        "final_state_hash".into(),
        a.final_state_hash.clone(),
        b.final_state_hash.clone(),
        None,
    );
    Ok(ReportDiff {
        scenario: a.scenario.clone(),
        entries,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}
