//! Trace events.
//!
//! A run of the system appends labeled facts to a [`Trace`] in emission
//! order. The agreement facts follow the running/commit discipline: a
//! `Running` fact is the emitting party's own view of the transaction, a
//! `Commit` fact is the committing party's belief about its partner's view.
//! Facts emitted by the same protocol step share a step id, which is what
//! ties `Honest` markers to the commitment they qualify.

use std::fmt;

use serde::Serialize;

use crate::data::TransactionRecord;
use crate::term::Term;

/// Protocol role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Role {
    Card,
    Terminal,
    Bank,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Card => "Card",
            Role::Terminal => "Terminal",
            Role::Bank => "Bank",
        }
    }
}

/// A named protocol participant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> AgentId {
        AgentId(name.into())
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What a secret-marking fact protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SecretLabel {
    Pin,
    Pan,
    MasterKey,
    CardPrivKey,
    BankPrivKey,
}

impl SecretLabel {
    pub fn label(self) -> &'static str {
        match self {
            SecretLabel::Pin => "PIN",
            SecretLabel::Pan => "PAN",
            SecretLabel::MasterKey => "mk",
            SecretLabel::CardPrivKey => "privC",
            SecretLabel::BankPrivKey => "privB",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Fact {
    /// `agent`, acting as `view_of`, runs the protocol with `partner`; the
    /// matching commit will be made by a party in role `by_role`.
    Running { agent: AgentId, partner: AgentId, view_of: Role, by_role: Role, t: TransactionRecord },
    /// `agent`, in role `by_role`, commits to `t` as its belief about the
    /// `view_of`-role partner.
    Commit { agent: AgentId, partner: AgentId, view_of: Role, by_role: Role, t: TransactionRecord },
    TerminalAccepts(TransactionRecord),
    BankDeclines(TransactionRecord),
    Honest(AgentId),
    Compromise(AgentId),
    Secret { label: SecretLabel, term: Term },
    /// Attacker learned this term (recorded for atoms of interest).
    Ku(Term),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub index: usize,
    /// Facts emitted by the same protocol step share a step id.
    pub step: usize,
    pub fact: Fact,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trace {
    pub events: Vec<Event>,
    next_step: usize,
}

impl Trace {
    pub fn new() -> Trace {
        Trace::default()
    }

    /// Emit one protocol step: a group of facts sharing a step id.
    pub fn emit(&mut self, facts: Vec<Fact>) {
        let step = self.next_step;
        self.next_step += 1;
        for fact in facts {
            let index = self.events.len();
            self.events.push(Event { index, step, fact });
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    /// Agents marked honest at the given step.
    pub fn honest_at(&self, step: usize) -> Vec<&AgentId> {
        self.events
            .iter()
            .filter(|e| e.step == step)
            .filter_map(|e| match &e.fact {
                Fact::Honest(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn compromised(&self) -> Vec<&AgentId> {
        self.events
            .iter()
            .filter_map(|e| match &e.fact {
                Fact::Compromise(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn has_compromise(&self) -> bool {
        self.events.iter().any(|e| matches!(e.fact, Fact::Compromise(_)))
    }

    /// Does the compromise clause apply to the step that emitted index `i`?
    /// True when some agent marked honest at that step is compromised
    /// anywhere in the trace.
    pub fn compromise_clause(&self, step: usize) -> bool {
        let honest = self.honest_at(step);
        if honest.is_empty() {
            return false;
        }
        self.compromised().iter().any(|c| honest.contains(c))
    }

    /// Line-oriented rendering of the event log.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&format!("{:4} {}\n", e.index, render_fact(&e.fact)));
        }
        out
    }
}

fn render_fact(f: &Fact) -> String {
    match f {
        Fact::Running { agent, partner, view_of, by_role, t } => format!(
            "Running({agent}, {partner}, <{}, {}, {}>)",
            view_of.label(),
            by_role.label(),
            t.to_term()
        ),
        Fact::Commit { agent, partner, view_of, by_role, t } => format!(
            "Commit({agent}, {partner}, <{}, {}, {}>)",
            view_of.label(),
            by_role.label(),
            t.to_term()
        ),
        Fact::TerminalAccepts(t) => format!("TerminalAccepts({})", t.to_term()),
        Fact::BankDeclines(t) => format!("BankDeclines({})", t.to_term()),
        Fact::Honest(a) => format!("Honest({a})"),
        Fact::Compromise(a) => format!("Compromise({a})"),
        Fact::Secret { label, term } => format!("Secret[{}]({term})", label.label()),
        Fact::Ku(t) => format!("KU({t})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_group_facts_and_indices_increase() {
        let mut tr = Trace::new();
        let a = AgentId::new("terminal1");
        let b = AgentId::new("bank1");
        tr.emit(vec![Fact::Honest(a.clone()), Fact::Honest(b.clone())]);
        tr.emit(vec![Fact::Compromise(b.clone())]);
        assert_eq!(tr.events.len(), 3);
        assert!(tr.events.windows(2).all(|w| w[0].index < w[1].index));
        assert_eq!(tr.honest_at(0), vec![&a, &b]);
        assert!(tr.compromise_clause(0));
        assert!(!tr.compromise_clause(1));
    }
}
