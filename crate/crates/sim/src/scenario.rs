//! Declarative scenario documents and their validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use commons_core::funding::MatchingMode;
use commons_core::governance::{GovernanceConfig, GovernanceParam};
use commons_core::reputation::Category;
use commons_core::{Amount, Epoch};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LOAN: Amount = 182_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Last epoch to simulate; defaults to the last scripted epoch.
    #[serde(default)]
    pub epochs: Option<Epoch>,
    /// Overrides on top of the default governance config.
    #[serde(default)]
    pub governance: GovernanceConfig,
    /// Initial ARC treasury.
    #[serde(default)]
    pub treasury: Amount,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub script: Vec<Step>,
    #[serde(default)]
    pub attack: Option<FlashLoanAttack>,
    #[serde(default = "Metric::all")]
    pub metrics: Vec<Metric>,
}

impl Scenario {
    pub fn last_epoch(&self) -> Epoch {
        self.epochs
            .unwrap_or_else(|| self.script.iter().map(|s| s.at).max().unwrap_or(0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Researcher,
    Whale,
    Attacker,
    Apathetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub tokens: Amount,
    /// Initial credentials by category.
    #[serde(default)]
    pub sbts: BTreeMap<Category, u32>,
    /// Expands into `name-1 .. name-N` when above one.
    #[serde(default = "one")]
    pub count: u32,
    /// Seats on the founder veto council.
    #[serde(default)]
    pub council: bool,
}

fn one() -> u32 {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Gini,
    Participation,
    Treasury,
}

impl Metric {
    pub fn all() -> Vec<Metric> {
        vec![Metric::Gini, Metric::Participation, Metric::Treasury]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlashLoanAttack {
    pub at: Epoch,
    pub attacker: String,
    #[serde(default = "default_loan")]
    pub loan_amount: Amount,
}

fn default_loan() -> Amount {
    DEFAULT_LOAN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub at: Epoch,
    #[serde(flatten)]
    pub action: Action,
}

/// Agent references: a single agent by name, `@name` for every agent
/// expanded from one roster entry, or `@all`.
pub type AgentRef = String;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProposalSpec {
    TreasurySpend { to: AgentRef, amount: Amount },
    ParameterChange { change: GovernanceParam },
    Constitutional { change: GovernanceParam },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectSpec {
    pub id: String,
    pub recipient: AgentRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilestoneSpecRef {
    pub description: String,
    pub tranche: Amount,
    pub recipient: AgentRef,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub to: AgentRef,
    pub bps: u32,
}

/// Funding sources: `arc` for the scenario ARC's treasury, otherwise an agent.
pub const ARC_ACCOUNT: &str = "arc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case")]
pub enum Action {
    Propose {
        id: String,
        proposer: AgentRef,
        kind: ProposalSpec,
    },
    /// Casts in whichever chamber(s) the ARC's mode has. In bicameral mode
    /// the plural ballot carries `±intensity` votes and voters holding
    /// reputation also vote in the epistemic chamber.
    Vote {
        proposal: String,
        voters: AgentRef,
        support: bool,
        #[serde(default = "one_u64")]
        intensity: u64,
        /// Fraction of `voters` that actually turn out.
        #[serde(default = "one_f64")]
        sample: f64,
    },
    Delegate {
        from: AgentRef,
        to: AgentRef,
    },
    Undelegate {
        from: AgentRef,
    },
    Tally {
        proposal: String,
    },
    Execute {
        proposal: String,
    },
    Veto {
        proposal: String,
        signers: AgentRef,
    },
    Mint {
        to: AgentRef,
        amount: Amount,
    },
    Transfer {
        from: AgentRef,
        to: AgentRef,
        amount: Amount,
    },
    IssueSbt {
        to: AgentRef,
        category: Category,
        #[serde(default = "one")]
        count: u32,
    },
    OpenRound {
        id: String,
        funder: AgentRef,
        pool: Amount,
        projects: Vec<ProjectSpec>,
        #[serde(default)]
        mode: MatchingMode,
    },
    Contribute {
        round: String,
        from: AgentRef,
        project: String,
        amount: Amount,
    },
    SettleRound {
        round: String,
    },
    CreateProgram {
        id: String,
        director: AgentRef,
        funder: AgentRef,
        budget: Amount,
        milestones: Vec<MilestoneSpecRef>,
    },
    ReportMilestone {
        program: String,
        index: usize,
    },
    ReleaseTranche {
        program: String,
        index: usize,
    },
    MintIpNft {
        id: String,
        owner: AgentRef,
        split: Vec<SplitSpec>,
        #[serde(default)]
        open_access: bool,
    },
    Royalties {
        asset: String,
        payer: AgentRef,
        revenue: Amount,
    },
    License {
        asset: String,
        licensee: AgentRef,
        price: Amount,
        #[serde(default)]
        exclusive: bool,
    },
    Fractionalize {
        asset: String,
        supply_cap: u64,
        base_price: Amount,
        slope: Amount,
        penalty_bps: u32,
        horizon_epochs: Epoch,
    },
    Buy {
        asset: String,
        buyer: AgentRef,
        units: u64,
    },
    Sell {
        asset: String,
        seller: AgentRef,
        units: u64,
    },
}

/// One problem found while loading a scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    UnknownAgentRef {
        reference: String,
        location: String,
    },
    UnknownLabel {
        label: String,
        location: String,
    },
    BadConfig(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ParseError { line, column, message } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
            Diagnostic::UnknownAgentRef { reference, location } => {
                write!(f, "unknown agent reference {reference:?} in {location}")
            }
            Diagnostic::UnknownLabel { label, location } => {
                write!(f, "{location} refers to {label:?} before it is defined")
            }
            Diagnostic::BadConfig(m) => write!(f, "bad config: {m}"),
        }
    }
}

/// Every diagnostic from a failed load.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct LoadError(pub Vec<Diagnostic>);

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// An agent after `count` expansion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Agent {
    pub name: String,
    pub role: Role,
    pub entry: usize,
}

/// The expanded agent list with reference resolution.
#[derive(Clone, Debug)]
pub struct Roster {
    pub agents: Vec<Agent>,
    by_name: BTreeMap<String, usize>,
    groups: BTreeMap<String, Vec<usize>>,
}

impl Roster {
    pub fn new(specs: &[AgentSpec]) -> Self {
        let mut agents = Vec::new();
        let mut by_name = BTreeMap::new();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (entry, spec) in specs.iter().enumerate() {
            for k in 1..=spec.count {
                let name = if spec.count == 1 {
                    spec.name.clone()
                } else {
                    format!("{}-{k}", spec.name)
                };
                let idx = agents.len();
                by_name.entry(name.clone()).or_insert(idx);
                groups.entry(spec.name.clone()).or_default().push(idx);
                agents.push(Agent {
                    name,
                    role: spec.role,
                    entry,
                });
            }
        }
        groups.insert("all".into(), (0..agents.len()).collect());
        Roster {
            agents,
            by_name,
            groups,
        }
    }

    /// Agent indices named by `r`, or `None` if it names nothing.
    pub fn resolve(&self, r: &str) -> Option<Vec<usize>> {
        match r.strip_prefix('@') {
            Some(group) => self.groups.get(group).cloned(),
            None => self.by_name.get(r).map(|i| vec![*i]),
        }
    }

    pub fn resolve_one(&self, r: &str) -> Option<usize> {
        match self.resolve(r) {
            Some(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }
}

/// Parses and validates a scenario, reporting every problem found.
pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, LoadError> {
    let scenario: Scenario = serde_json::from_slice(bytes).map_err(|e| {
        LoadError(vec![Diagnostic::ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }])
    })?;
    let diags = validate(&scenario);
    if diags.is_empty() {
        Ok(scenario)
    } else {
        Err(LoadError(diags))
    }
}

pub fn validate(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let bad = |m: String| Diagnostic::BadConfig(m);

    if s.name.is_empty() {
        out.push(bad("scenario name is empty".into()));
    }
    out.extend(s.governance.problems().into_iter().map(bad));
    if s.agents.is_empty() {
        out.push(bad("no agents declared".into()));
    }
    let mut names = BTreeSet::new();
    for a in &s.agents {
        if a.name.is_empty() || a.name.starts_with('@') || a.name == ARC_ACCOUNT || a.name == "all" {
            out.push(bad(format!("agent name {:?} is reserved or empty", a.name)));
        }
        if !names.insert(a.name.as_str()) {
            out.push(bad(format!("agent {:?} declared twice", a.name)));
        }
        if a.count == 0 {
            out.push(bad(format!("agent {:?} has count 0", a.name)));
        }
    }
    let roster = Roster::new(&s.agents);
    let council = s
        .agents
        .iter()
        .filter(|a| a.council)
        .map(|a| a.count as usize)
        .sum::<usize>();
    let n = s.governance.veto_council_m_of_n.1;
    if council != 0 && council != n {
        out.push(bad(format!(
            "{council} council seats declared, the veto council needs {n}"
        )));
    }

    let last = s.last_epoch();
    let mut labels: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (i, step) in s.script.iter().enumerate() {
        let loc = format!("script[{i}]");
        if step.at > last {
            out.push(bad(format!(
                "{loc} runs at epoch {} after the last epoch {last}",
                step.at
            )));
        }
        let mut agent = |r: &str, field: &str, single: bool| {
            let ok = if single {
                roster.resolve_one(r).is_some()
            } else {
                roster.resolve(r).is_some()
            };
            if !ok {
                out.push(Diagnostic::UnknownAgentRef {
                    reference: r.to_owned(),
                    location: format!("{loc}.{field}"),
                });
            }
        };
        let mut uses: Vec<(&str, &str)> = Vec::new();
        let mut defines: Option<(&str, &str)> = None;
        match &step.action {
            Action::Propose { id, proposer, kind } => {
                agent(proposer, "proposer", true);
                if let ProposalSpec::TreasurySpend { to, .. } = kind {
                    agent(to, "kind.to", true);
                }
                defines = Some(("proposal", id));
            }
            Action::Vote {
                proposal,
                voters,
                sample,
                intensity,
                ..
            } => {
                agent(voters, "voters", false);
                uses.push(("proposal", proposal));
                if !(0.0..=1.0).contains(sample) {
                    out.push(bad(format!("{loc}.sample {sample} outside [0, 1]")));
                }
                if *intensity == 0 {
                    out.push(bad(format!("{loc}.intensity must be positive")));
                }
            }
            Action::Delegate { from, to } => {
                agent(from, "from", false);
                agent(to, "to", true);
            }
            Action::Undelegate { from } => agent(from, "from", false),
            Action::Tally { proposal } | Action::Execute { proposal } => uses.push(("proposal", proposal)),
            Action::Veto { proposal, signers } => {
                agent(signers, "signers", false);
                uses.push(("proposal", proposal));
            }
            Action::Mint { to, .. } => agent(to, "to", false),
            Action::Transfer { from, to, .. } => {
                agent(from, "from", false);
                agent(to, "to", true);
            }
            Action::IssueSbt { to, .. } => agent(to, "to", false),
            Action::OpenRound {
                id, funder, projects, ..
            } => {
                if funder != ARC_ACCOUNT {
                    agent(funder, "funder", true);
                }
                for p in projects {
                    agent(&p.recipient, "projects.recipient", true);
                }
                defines = Some(("round", id));
            }
            Action::Contribute { round, from, .. } => {
                agent(from, "from", false);
                uses.push(("round", round));
            }
            Action::SettleRound { round } => uses.push(("round", round)),
            Action::CreateProgram {
                id,
                director,
                funder,
                milestones,
                ..
            } => {
                agent(director, "director", true);
                if funder != ARC_ACCOUNT {
                    agent(funder, "funder", true);
                }
                for m in milestones {
                    agent(&m.recipient, "milestones.recipient", true);
                }
                defines = Some(("program", id));
            }
            Action::ReportMilestone { program, .. } | Action::ReleaseTranche { program, .. } => {
                uses.push(("program", program))
            }
            Action::MintIpNft { id, owner, split, .. } => {
                agent(owner, "owner", true);
                for sp in split {
                    agent(&sp.to, "split.to", true);
                }
                defines = Some(("asset", id));
            }
            Action::Royalties { asset, payer, .. } => {
                agent(payer, "payer", true);
                uses.push(("asset", asset));
            }
            Action::License { asset, licensee, .. } => {
                agent(licensee, "licensee", true);
                uses.push(("asset", asset));
            }
            Action::Fractionalize { asset, .. } => uses.push(("asset", asset)),
            Action::Buy { asset, buyer, .. } => {
                agent(buyer, "buyer", false);
                uses.push(("asset", asset));
            }
            Action::Sell { asset, seller, .. } => {
                agent(seller, "seller", false);
                uses.push(("asset", asset));
            }
        }
        for (space, label) in uses {
            if !labels.get(space).is_some_and(|l| l.contains(label)) {
                out.push(Diagnostic::UnknownLabel {
                    label: label.to_owned(),
                    location: format!("{loc}.{space}"),
                });
            }
        }
        if let Some((space, label)) = defines {
            if !labels.entry(space).or_default().insert(label) {
                out.push(bad(format!("{loc} redefines {space} {label:?}")));
            }
        }
    }
    if let Some(a) = &s.attack {
        if roster.resolve_one(&a.attacker).is_none() {
            out.push(Diagnostic::UnknownAgentRef {
                reference: a.attacker.clone(),
                location: "attack.attacker".into(),
            });
        }
        if a.at > last {
            out.push(bad(format!("attack at epoch {} after the last epoch {last}", a.at)));
        }
        if a.loan_amount == 0 {
            out.push(bad("attack.loan_amount must be positive".into()));
        }
        if s.treasury == 0 {
            out.push(bad("an attack scenario needs a treasury to drain".into()));
        }
    }
    out
}
