use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::FusionConfig;
use crate::error::{Error, Result};
use crate::fusion::{self, Consistency};
use crate::graph::KnowledgeGraph;
use crate::model::{
    Certainty, EntityId, Hypothesis, HypothesisId, Term, TripleId, TriplePattern, Value,
    VerdictId, VerdictStatus,
};

/// One way of satisfying every pattern of a hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub values: BTreeMap<String, Value>,
    /// Weakest certainty among the matched triples.
    pub score: Certainty,
    /// Matched triple per pattern, in pattern order.
    pub triples: Vec<TripleId>,
}

/// Outcome of testing a hypothesis. Stored so that feedback can be applied
/// later, possibly by another process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: VerdictId,
    pub hypothesis: HypothesisId,
    pub status: VerdictStatus,
    pub theta: Certainty,
    /// Best binding per variable assignment, strongest first.
    pub bindings: Vec<Binding>,
    /// Triples of the bindings scoring at least θ.
    pub supporting: BTreeSet<TripleId>,
    /// Triples at or above θ whose object is inconsistent with a grounded
    /// pattern.
    pub contradicting: BTreeSet<TripleId>,
    /// Set once feedback has been propagated.
    #[serde(default)]
    pub applied: bool,
}

impl Verdict {
    pub fn score(&self) -> Option<Certainty> {
        self.bindings.first().map(|b| b.score)
    }
}

/// Hypothesis as written by a user: strings starting with `?` are
/// variables, subjects are entity ids, objects are parsed against the
/// predicate's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, alias = "theta", skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub patterns: Vec<PatternSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    #[serde(rename = "s", alias = "subject")]
    pub subject: String,
    #[serde(rename = "p", alias = "predicate")]
    pub predicate: String,
    #[serde(rename = "o", alias = "object")]
    pub object: serde_json::Value,
}

impl PatternSpec {
    pub fn to_pattern(&self, graph: &KnowledgeGraph) -> Result<TriplePattern> {
        let pred = graph.predicate(&self.predicate)?;
        let subject = match self.subject.strip_prefix('?') {
            Some(v) if !v.is_empty() => Term::Var(v.to_owned()),
            Some(_) => return Err(Error::InvariantViolation("empty variable name".into())),
            None if self.subject.is_empty() => {
                return Err(Error::InvariantViolation("empty subject in pattern".into()))
            }
            None => Term::Const(Value::Entity(EntityId::new(self.subject.clone()))),
        };
        let object = match self.object.as_str().and_then(|s| s.strip_prefix('?')) {
            Some(v) if !v.is_empty() => Term::Var(v.to_owned()),
            Some(_) => return Err(Error::InvariantViolation("empty variable name".into())),
            None => Term::Const(pred.domain.parse(&self.predicate, &self.object, graph.taxonomies())?),
        };
        Ok(TriplePattern {
            subject,
            predicate: self.predicate.clone(),
            object,
        })
    }
}

impl HypothesisSpec {
    pub fn into_hypothesis(self, graph: &KnowledgeGraph, default_theta: Certainty) -> Result<Hypothesis> {
        if self.patterns.is_empty() {
            return Err(Error::InvariantViolation("a hypothesis needs at least one pattern".into()));
        }
        if self.patterns.len() == 1 {
            warn!("hypothesis with a single pattern relates only one triple");
        }
        let threshold = match self.threshold {
            Some(t) => Certainty::new(t).map_err(|_| Error::OutOfRange {
                what: "threshold",
                value: t,
                expected: "[0, 1]",
            })?,
            None => default_theta,
        };
        let patterns = self
            .patterns
            .iter()
            .map(|p| p.to_pattern(graph))
            .collect::<Result<_>>()?;
        Ok(Hypothesis {
            id: HypothesisId::new(self.id.unwrap_or_default()),
            patterns,
            threshold,
            verdict: VerdictStatus::Untested,
        })
    }
}

/// A current triple with subject and entity object resolved.
pub(super) struct Candidate {
    pub id: TripleId,
    pub subject: Value,
    pub predicate: String,
    pub object: Value,
    pub certainty: Certainty,
}

pub(super) fn candidates(graph: &KnowledgeGraph) -> Vec<Candidate> {
    fusion::current_triples(graph)
        .into_iter()
        .map(|id| {
            let t = &graph.triples[&id];
            Candidate {
                id,
                subject: Value::Entity(graph.resolve_entity(&t.subject).clone()),
                predicate: t.predicate.clone(),
                object: graph.resolve_value(&t.object),
                certainty: t.certainty,
            }
        })
        .collect()
}

pub(super) fn resolve_term(graph: &KnowledgeGraph, term: &Term) -> Term {
    match term {
        Term::Const(v) => Term::Const(graph.resolve_value(v)),
        var => var.clone(),
    }
}

fn unify(term: &Term, value: &Value, bindings: &mut BTreeMap<String, Value>) -> bool {
    match term {
        Term::Const(c) => c == value,
        Term::Var(v) => match bindings.get(v) {
            Some(bound) => bound == value,
            None => {
                bindings.insert(v.clone(), value.clone());
                true
            }
        },
    }
}

pub(super) fn match_one(
    pattern: &TriplePattern,
    c: &Candidate,
    bindings: &BTreeMap<String, Value>,
) -> Option<BTreeMap<String, Value>> {
    if c.predicate != pattern.predicate {
        return None;
    }
    let mut b = bindings.clone();
    (unify(&pattern.subject, &c.subject, &mut b) && unify(&pattern.object, &c.object, &mut b)).then_some(b)
}

struct Partial {
    values: BTreeMap<String, Value>,
    score: Certainty,
    triples: Vec<TripleId>,
}

fn solve(patterns: &[&TriplePattern], cands: &[Candidate]) -> Vec<Partial> {
    let mut out = Vec::new();
    let start = Partial {
        values: BTreeMap::new(),
        score: Certainty::ONE,
        triples: Vec::new(),
    };
    extend(patterns, cands, start, &mut out);
    out
}

fn extend(patterns: &[&TriplePattern], cands: &[Candidate], partial: Partial, out: &mut Vec<Partial>) {
    let Some((first, rest)) = patterns.split_first() else {
        out.push(partial);
        return;
    };
    for c in cands {
        if let Some(values) = match_one(first, c, &partial.values) {
            let score = if c.certainty.value() < partial.score.value() {
                c.certainty
            } else {
                partial.score
            };
            let mut triples = partial.triples.clone();
            triples.push(c.id);
            extend(rest, cands, Partial { values, score, triples }, out);
        }
    }
}

fn substitute(term: &Term, values: &BTreeMap<String, Value>) -> Option<Value> {
    match term {
        Term::Const(v) => Some(v.clone()),
        Term::Var(v) => values.get(v).cloned(),
    }
}

/// Conjunctive matching over the current triples (mentions not yet fused
/// count as atomic factoids). The score of a binding is the minimum
/// certainty of its triples.
pub fn evaluate_hypothesis(
    graph: &KnowledgeGraph,
    hypothesis: &Hypothesis,
    config: &FusionConfig,
) -> Result<Verdict> {
    for p in &hypothesis.patterns {
        graph.predicate(&p.predicate)?;
    }
    let theta = hypothesis.threshold;
    let cands = candidates(graph);
    let patterns: Vec<TriplePattern> = hypothesis
        .patterns
        .iter()
        .map(|p| TriplePattern {
            subject: resolve_term(graph, &p.subject),
            predicate: p.predicate.clone(),
            object: resolve_term(graph, &p.object),
        })
        .collect();
    let refs: Vec<&TriplePattern> = patterns.iter().collect();

    let mut best: BTreeMap<BTreeMap<String, Value>, Partial> = BTreeMap::new();
    for sol in solve(&refs, &cands) {
        match best.get(&sol.values) {
            Some(b) if b.score.value() >= sol.score.value() => {}
            _ => {
                best.insert(sol.values.clone(), sol);
            }
        }
    }
    let mut bindings: Vec<Binding> = best
        .into_values()
        .map(|p| Binding {
            values: p.values,
            score: p.score,
            triples: p.triples,
        })
        .collect();
    bindings.sort_by(|a, b| {
        b.score
            .value()
            .total_cmp(&a.score.value())
            .then_with(|| a.values.cmp(&b.values))
    });

    let supporting: BTreeSet<TripleId> = bindings
        .iter()
        .filter(|b| b.score.value() >= theta.value())
        .flat_map(|b| b.triples.iter().copied())
        .collect();

    let mut contradicting = BTreeSet::new();
    let ctx = config.rule_context(graph);
    for (i, pattern) in patterns.iter().enumerate() {
        let pred = graph.predicate(&pattern.predicate)?;
        let tau = ctx.tau(pred);
        let others: Vec<&TriplePattern> = refs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, p)| *p)
            .collect();
        for partial in solve(&others, &cands) {
            let (Some(s), Some(o)) = (
                substitute(&pattern.subject, &partial.values),
                substitute(&pattern.object, &partial.values),
            ) else {
                continue;
            };
            for c in &cands {
                if c.predicate != pattern.predicate || c.subject != s || c.certainty.value() < theta.value() {
                    continue;
                }
                if fusion::classify(&pred.domain, graph.taxonomies(), &c.object, &o, tau)?
                    == Consistency::Inconsistent
                {
                    contradicting.insert(c.id);
                }
            }
        }
    }

    let confirmed = bindings.first().is_some_and(|b| b.score.value() >= theta.value());
    let status = if confirmed {
        VerdictStatus::Confirmed
    } else if !contradicting.is_empty() {
        VerdictStatus::Infirmed
    } else {
        VerdictStatus::Undetermined
    };
    Ok(Verdict {
        id: VerdictId::new(""),
        hypothesis: hypothesis.id.clone(),
        status,
        theta,
        bindings,
        supporting,
        contradicting,
        applied: false,
    })
}

/// Evaluates a stored hypothesis, records the verdict under a fresh `v<n>`
/// id and returns it.
pub fn test_hypothesis(
    graph: &mut KnowledgeGraph,
    hypothesis: &HypothesisId,
    config: &FusionConfig,
) -> Result<Verdict> {
    let h = graph.hypothesis(hypothesis)?;
    let mut verdict = evaluate_hypothesis(graph, h, config)?;
    verdict.id = graph.next_verdict_id();
    if let Some(h) = graph.hypotheses.get_mut(hypothesis) {
        h.verdict = verdict.status;
    }
    graph.verdicts.insert(verdict.id.clone(), verdict.clone());
    Ok(verdict)
}
