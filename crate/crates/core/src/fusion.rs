//! Composition rules over weighted triples.
//!
//! Two triples about the same (resolved) subject and predicate are either
//! *consistent* (concept distance of their values within the predicate's
//! τ) or *inconsistent*. Consistent pairs generalise to the least common
//! ancestor of their values with a combined certainty; inconsistent pairs
//! keep the stronger value with a discounted certainty. Facts are the
//! current triples of a subject whose certainty is strictly above π.
//!
//! Everything here is a pure function of a graph snapshot. The pipeline
//! owns state changes and the fixpoint loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::audit::DemotionReason;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{
    Certainty, CompositeFactoid, DatumKind, Derivation, EntityId, Predicate, RuleKind, TripleId,
    UncertainTriple, Value, ValueDomain,
};
use crate::similarity::MergeMap;
use crate::taxonomy::Taxonomy;

// ---------------------------------------------------------------------------
// Aggregators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistentAggregator {
    Max,
    Avg,
    Min,
    /// `1 - (1 - p1)(1 - p2)`
    NoisyOr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InconsistentAggregator {
    Min,
    /// `p1 - p2`, floored at zero.
    Difference,
    /// `p1 * (1 - p2)`
    Discount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregatorKind {
    pub consistent: ConsistentAggregator,
    pub inconsistent: InconsistentAggregator,
}

impl Default for AggregatorKind {
    fn default() -> Self {
        Self {
            consistent: ConsistentAggregator::NoisyOr,
            inconsistent: InconsistentAggregator::Discount,
        }
    }
}

pub fn aggreg_consistent(p1: Certainty, p2: Certainty, kind: ConsistentAggregator) -> Certainty {
    let (a, b) = (p1.value(), p2.value());
    Certainty::clamped(match kind {
        ConsistentAggregator::Max => a.max(b),
        ConsistentAggregator::Min => a.min(b),
        ConsistentAggregator::Avg => (a + b) / 2.0,
        ConsistentAggregator::NoisyOr => 1.0 - (1.0 - a) * (1.0 - b),
    })
}

/// Folds any number of certainties; `avg` is the plain mean. `None` when
/// `values` is empty.
pub fn aggreg_consistent_all(values: &[Certainty], kind: ConsistentAggregator) -> Option<Certainty> {
    let (first, rest) = values.split_first()?;
    Some(match kind {
        ConsistentAggregator::Avg => Certainty::clamped(
            values.iter().map(|c| c.value()).sum::<f64>() / values.len() as f64,
        ),
        ConsistentAggregator::NoisyOr => Certainty::clamped(
            1.0 - values.iter().map(|c| 1.0 - c.value()).product::<f64>(),
        ),
        _ => rest
            .iter()
            .fold(*first, |acc, c| aggreg_consistent(acc, *c, kind)),
    })
}

/// Combines a winning certainty `p1` with a conflicting `p2`. Callers order
/// the arguments so that `p1 >= p2`.
pub fn aggreg_inconsistent(p1: Certainty, p2: Certainty, kind: InconsistentAggregator) -> Certainty {
    let (a, b) = (p1.value(), p2.value());
    Certainty::clamped(match kind {
        InconsistentAggregator::Min => a.min(b),
        InconsistentAggregator::Difference => (a - b).max(0.0),
        InconsistentAggregator::Discount => a * (1.0 - b),
    })
}

/// π: triples strictly above it become facts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactThreshold(pub Certainty);

impl FactThreshold {
    pub fn new(pi: f64) -> Result<Self> {
        Ok(Self(Certainty::new(pi)?))
    }

    pub fn value(self) -> f64 {
        self.0.value()
    }

    pub fn admits(self, c: Certainty) -> bool {
        c.value() > self.value()
    }
}

// ---------------------------------------------------------------------------
// Consistency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Consistency {
    /// Within τ; the pair generalises to `generalization`.
    Consistent { generalization: Value },
    Inconsistent,
}

/// Concept distance between two values of one domain. Scalars and entities
/// are at distance 0 when equal and unboundedly far apart otherwise
/// (`None`).
pub fn value_distance(
    domain: &ValueDomain,
    taxonomies: &BTreeMap<String, Taxonomy>,
    v1: &Value,
    v2: &Value,
) -> Result<Option<u32>> {
    match (domain, v1, v2) {
        (ValueDomain::Taxonomy(name), Value::Node(a), Value::Node(b)) => {
            let tax = taxonomies
                .get(name)
                .ok_or_else(|| Error::Config(format!("taxonomy `{name}` is not loaded")))?;
            Ok(Some(tax.concept_distance(a, b)?))
        }
        _ => Ok((v1 == v2).then_some(0)),
    }
}

/// Partitions a pair of values into the consistent or inconsistent case.
pub fn classify(
    domain: &ValueDomain,
    taxonomies: &BTreeMap<String, Taxonomy>,
    v1: &Value,
    v2: &Value,
    tau: u32,
) -> Result<Consistency> {
    match value_distance(domain, taxonomies, v1, v2)? {
        Some(d) if d <= tau => {
            let generalization = match (domain, v1, v2) {
                (ValueDomain::Taxonomy(name), Value::Node(a), Value::Node(b)) => {
                    Value::Node(taxonomies[name].lca(a, b)?.to_owned())
                }
                _ => v1.clone(),
            };
            Ok(Consistency::Consistent { generalization })
        }
        _ => Ok(Consistency::Inconsistent),
    }
}

// ---------------------------------------------------------------------------
// Rule application
// ---------------------------------------------------------------------------

/// Schema and parameters the rules read.
#[derive(Debug, Clone, Copy)]
pub struct RuleContext<'a> {
    pub predicates: &'a BTreeMap<String, Predicate>,
    pub taxonomies: &'a BTreeMap<String, Taxonomy>,
    pub tau: &'a BTreeMap<String, u32>,
    pub aggregators: AggregatorKind,
    /// The weaker side of a conflict must be strictly above this for the
    /// inconsistent rule to fire.
    pub conflict_floor: Certainty,
}

impl RuleContext<'_> {
    pub fn tau(&self, predicate: &Predicate) -> u32 {
        self.tau.get(&predicate.name).copied().unwrap_or(predicate.tau)
    }
}

/// A triple as the rules see it: subject and object already resolved to
/// canonical entities, with the set of mentions it rests on.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleNode {
    pub id: TripleId,
    pub subject: EntityId,
    pub predicate: String,
    pub object: Value,
    pub certainty: Certainty,
    /// Produced by an earlier rule firing.
    pub fused: bool,
    pub evidence: BTreeSet<TripleId>,
}

/// Immutable snapshot of the rule inputs: every mention and every fused
/// triple. Mentions promoted as-is are left out; they carry no evidence of
/// their own.
#[derive(Debug, Clone, Default)]
pub struct FusionView {
    nodes: Vec<RuleNode>,
}

impl FusionView {
    pub fn new(mut nodes: Vec<RuleNode>) -> Self {
        nodes.sort_by_key(|n| n.id);
        Self { nodes }
    }

    pub fn from_graph(graph: &KnowledgeGraph, merges: &MergeMap) -> Self {
        let resolve = |e: &EntityId| merges.get(e).unwrap_or(e).clone();
        let mut evidence_memo: BTreeMap<TripleId, BTreeSet<TripleId>> = BTreeMap::new();
        let nodes = graph
            .triples()
            .filter(|t| t.is_mention() || t.is_fused())
            .map(|t| RuleNode {
                id: t.id,
                subject: resolve(&t.subject),
                predicate: t.predicate.clone(),
                object: match &t.object {
                    Value::Entity(e) => Value::Entity(resolve(e)),
                    v => v.clone(),
                },
                certainty: t.certainty,
                fused: t.is_fused(),
                evidence: evidence(graph, t.id, &mut evidence_memo),
            })
            .collect();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[RuleNode] {
        &self.nodes
    }

    fn groups(&self) -> BTreeMap<(&EntityId, &str), Vec<&RuleNode>> {
        let mut groups: BTreeMap<(&EntityId, &str), Vec<&RuleNode>> = BTreeMap::new();
        for n in &self.nodes {
            groups
                .entry((&n.subject, n.predicate.as_str()))
                .or_default()
                .push(n);
        }
        groups
    }
}

/// Mentions underlying `id`. Tolerates ids that disappeared mid-fixpoint.
fn evidence(
    graph: &KnowledgeGraph,
    id: TripleId,
    memo: &mut BTreeMap<TripleId, BTreeSet<TripleId>>,
) -> BTreeSet<TripleId> {
    if let Some(e) = memo.get(&id) {
        return e.clone();
    }
    let ev = match graph.triple(id) {
        Ok(t) if t.is_mention() => BTreeSet::from([id]),
        Ok(t) => {
            let mut ev = BTreeSet::new();
            for p in &t.provenance {
                ev.extend(evidence(graph, *p, memo));
            }
            ev
        }
        Err(_) => BTreeSet::new(),
    };
    memo.insert(id, ev.clone());
    ev
}

/// A derived triple some rule wants to exist, with the firing behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub subject: EntityId,
    pub predicate: String,
    pub object: Value,
    pub derivation: Derivation,
}

/// Value-consistent rule.
///
/// For every pair of distinct nodes sharing subject and predicate, resting
/// on disjoint evidence, whose values lie within τ: propose
/// `(s, p, lca(v1, v2))` with the consistent aggregate of both certainties.
/// A fused input only chains upwards: the generalisation must differ from
/// its own value, so no triple ever feeds itself.
pub fn apply_rule1(view: &FusionView, ctx: &RuleContext<'_>) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    for ((subject, predicate), nodes) in view.groups() {
        let pred = ctx
            .predicates
            .get(predicate)
            .ok_or_else(|| Error::UnknownPredicate(predicate.to_owned()))?;
        let tau = ctx.tau(pred);
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if !a.evidence.is_disjoint(&b.evidence) {
                    continue;
                }
                let Consistency::Consistent { generalization } =
                    classify(&pred.domain, ctx.taxonomies, &a.object, &b.object, tau)?
                else {
                    continue;
                };
                if (a.fused && generalization == a.object) || (b.fused && generalization == b.object) {
                    continue;
                }
                out.push(Proposal {
                    subject: subject.clone(),
                    predicate: predicate.to_owned(),
                    object: generalization,
                    derivation: Derivation {
                        rule: RuleKind::Consistent,
                        inputs: [a.id.min(b.id), a.id.max(b.id)],
                        value: aggreg_consistent(a.certainty, b.certainty, ctx.aggregators.consistent),
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Value-inconsistent rule.
///
/// For every pair of mentions sharing subject and predicate whose values
/// are further apart than τ: keep the value with the higher certainty
/// (ties go to the smaller value), and propose it with the inconsistent
/// aggregate `aggreg(p1, p2)`, `p1 >= p2`. Fires only when `p2` is above
/// the conflict floor.
pub fn apply_rule2(view: &FusionView, ctx: &RuleContext<'_>) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    for ((subject, predicate), nodes) in view.groups() {
        let pred = ctx
            .predicates
            .get(predicate)
            .ok_or_else(|| Error::UnknownPredicate(predicate.to_owned()))?;
        let tau = ctx.tau(pred);
        let mentions: Vec<&RuleNode> = nodes.into_iter().filter(|n| !n.fused).collect();
        for (i, a) in mentions.iter().enumerate() {
            for b in &mentions[i + 1..] {
                if classify(&pred.domain, ctx.taxonomies, &a.object, &b.object, tau)?
                    != Consistency::Inconsistent
                {
                    continue;
                }
                let a_wins = a.certainty.value() > b.certainty.value()
                    || (a.certainty == b.certainty && a.object < b.object);
                let (winner, loser) = if a_wins { (a, b) } else { (b, a) };
                if loser.certainty.value() <= ctx.conflict_floor.value() {
                    continue;
                }
                out.push(Proposal {
                    subject: subject.clone(),
                    predicate: predicate.to_owned(),
                    object: winner.object.clone(),
                    derivation: Derivation {
                        rule: RuleKind::Inconsistent,
                        inputs: [winner.id, loser.id],
                        value: aggreg_inconsistent(
                            winner.certainty,
                            loser.certainty,
                            ctx.aggregators.inconsistent,
                        ),
                    },
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fact building
// ---------------------------------------------------------------------------

/// Triples that currently speak for their subject.
///
/// A mention or fused triple stops being current once a rule has consumed
/// it as an input. A mention promoted as-is is represented by its stand-in,
/// which is current exactly when the mention was not consumed.
pub fn current_triples(graph: &KnowledgeGraph) -> BTreeSet<TripleId> {
    let consumed: BTreeSet<TripleId> = graph
        .triples()
        .flat_map(|t| t.derivations.iter().flat_map(|d| d.inputs))
        .collect();
    let stood_in: BTreeSet<TripleId> = graph.triples().filter_map(|t| t.promoted_mention()).collect();
    graph
        .triples()
        .filter(|t| match t.promoted_mention() {
            Some(m) => !consumed.contains(&m),
            None => !consumed.contains(&t.id) && !(t.is_mention() && stood_in.contains(&t.id)),
        })
        .map(|t| t.id)
        .collect()
}

/// Ω and Ω⁺ for one subject.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectFacts {
    pub subject: EntityId,
    pub omega: BTreeSet<TripleId>,
    pub omega_plus: BTreeSet<TripleId>,
}

/// What fact building decides; applied by the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FactPlan {
    pub subjects: Vec<SubjectFacts>,
    /// Factoids to promote in place.
    pub promote: Vec<TripleId>,
    /// Mentions that need a fact standing in for them.
    pub promote_mentions: Vec<TripleId>,
    /// Facts that are no longer current or no longer above π.
    pub demote: Vec<(TripleId, DemotionReason)>,
    /// Ω for every subject with at least two current triples.
    pub composites: Vec<CompositeFactoid>,
}

impl FactPlan {
    /// Ω⁺ across all subjects.
    pub fn facts(&self) -> BTreeSet<TripleId> {
        self.subjects
            .iter()
            .flat_map(|s| s.omega_plus.iter().copied())
            .collect()
    }
}

/// For each subject s: Ω = its current triples, Ω⁺ = those strictly above π.
pub fn build_facts(graph: &KnowledgeGraph, pi: FactThreshold) -> FactPlan {
    let current = current_triples(graph);
    let mut by_subject: BTreeMap<EntityId, Vec<&UncertainTriple>> = BTreeMap::new();
    for id in &current {
        let t = &graph.triples[id];
        by_subject
            .entry(graph.resolve_entity(&t.subject).clone())
            .or_default()
            .push(t);
    }

    let mut plan = FactPlan::default();
    for (subject, triples) in by_subject {
        let omega: BTreeSet<TripleId> = triples.iter().map(|t| t.id).collect();
        let mut omega_plus = BTreeSet::new();
        for t in &triples {
            if !pi.admits(t.certainty) {
                continue;
            }
            omega_plus.insert(t.id);
            match t.kind {
                DatumKind::Factoid => plan.promote.push(t.id),
                DatumKind::Mention => plan.promote_mentions.push(t.id),
                DatumKind::Fact => {}
            }
        }
        if omega.len() >= 2 {
            let certainty = triples
                .iter()
                .map(|t| t.certainty)
                .min_by(|a, b| a.value().total_cmp(&b.value()))
                .unwrap_or(Certainty::ZERO);
            plan.composites.push(CompositeFactoid {
                id: format!("omega:{subject}"),
                subject: subject.clone(),
                members: omega.clone(),
                certainty,
            });
        }
        plan.subjects.push(SubjectFacts {
            subject,
            omega,
            omega_plus,
        });
    }

    for t in graph.facts() {
        if !current.contains(&t.id) {
            plan.demote.push((t.id, DemotionReason::Superseded));
        } else if !pi.admits(t.certainty) {
            plan.demote.push((t.id, DemotionReason::BelowThreshold));
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Certainty {
        Certainty::new(v).unwrap()
    }

    #[test]
    fn consistent_examples() {
        for p in [0.0, 0.3, 0.77, 1.0] {
            let v = aggreg_consistent(c(p), Certainty::ZERO, ConsistentAggregator::NoisyOr).value();
            assert!((v - p).abs() < 1e-12);
        }
        assert_eq!(aggreg_consistent(c(0.9), c(0.9), ConsistentAggregator::NoisyOr).value(), 0.99);
        assert_eq!(aggreg_consistent(c(0.4), c(0.7), ConsistentAggregator::Max).value(), 0.7);
        assert_eq!(aggreg_consistent(c(0.4), c(0.7), ConsistentAggregator::Min).value(), 0.4);
        assert!((aggreg_consistent(c(0.4), c(0.7), ConsistentAggregator::Avg).value() - 0.55).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_examples() {
        assert_eq!(aggreg_inconsistent(c(0.7), c(0.4), InconsistentAggregator::Min).value(), 0.4);
        assert!((aggreg_inconsistent(c(0.7), c(0.4), InconsistentAggregator::Difference).value() - 0.3).abs() < 1e-15);
        assert!((aggreg_inconsistent(c(0.97), c(0.4), InconsistentAggregator::Discount).value() - 0.582).abs() < 1e-15);
        // difference floors at zero when called out of order
        assert_eq!(aggreg_inconsistent(c(0.2), c(0.4), InconsistentAggregator::Difference).value(), 0.0);
    }

    #[test]
    fn fold_matches_pairwise() {
        let vals = [c(0.2), c(0.5), c(0.9)];
        let nor = aggreg_consistent_all(&vals, ConsistentAggregator::NoisyOr).unwrap();
        let pair = aggreg_consistent(
            aggreg_consistent(vals[0], vals[1], ConsistentAggregator::NoisyOr),
            vals[2],
            ConsistentAggregator::NoisyOr,
        );
        assert!((nor.value() - pair.value()).abs() < 1e-12);
        assert_eq!(aggreg_consistent_all(&vals, ConsistentAggregator::Max).unwrap().value(), 0.9);
        assert!((aggreg_consistent_all(&vals, ConsistentAggregator::Avg).unwrap().value() - 1.6 / 3.0).abs() < 1e-12);
        assert!(aggreg_consistent_all(&[], ConsistentAggregator::Max).is_none());
    }

    #[test]
    fn fact_threshold_is_strict() {
        let pi = FactThreshold::new(0.9).unwrap();
        assert!(!pi.admits(c(0.9)));
        assert!(pi.admits(c(0.9000001)));
        assert!(!FactThreshold::new(1.0).unwrap().admits(c(0.999999)));
        assert!(FactThreshold::new(0.0).unwrap().admits(c(0.0001)));
        assert!(!FactThreshold::new(0.0).unwrap().admits(Certainty::ZERO));
        assert!(FactThreshold::new(1.2).is_err());
    }

    #[test]
    fn scalar_distance() {
        let taxes = BTreeMap::new();
        assert_eq!(value_distance(&ValueDomain::Year, &taxes, &Value::Year(1256), &Value::Year(1256)).unwrap(), Some(0));
        assert_eq!(value_distance(&ValueDomain::Year, &taxes, &Value::Year(1256), &Value::Year(1257)).unwrap(), None);
        assert_eq!(
            classify(&ValueDomain::Year, &taxes, &Value::Year(1256), &Value::Year(1257), 100).unwrap(),
            Consistency::Inconsistent
        );
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn cert() -> impl Strategy<Value = Certainty> {
            (0.0f64..=1.0).prop_map(|v| Certainty::new(v).unwrap())
        }

        const CONSISTENT: [ConsistentAggregator; 4] = [
            ConsistentAggregator::Max,
            ConsistentAggregator::Avg,
            ConsistentAggregator::Min,
            ConsistentAggregator::NoisyOr,
        ];

        proptest! {
            #[test]
            fn consistent_commutative_and_bounded(p1 in cert(), p2 in cert()) {
                for k in CONSISTENT {
                    let a = aggreg_consistent(p1, p2, k).value();
                    prop_assert!((0.0..=1.0).contains(&a));
                    prop_assert_eq!(a, aggreg_consistent(p2, p1, k).value());
                }
            }

            #[test]
            fn inconsistent_never_raises_winner(p1 in cert(), p2 in cert()) {
                let (hi, lo) = if p1.value() >= p2.value() { (p1, p2) } else { (p2, p1) };
                for k in [InconsistentAggregator::Min, InconsistentAggregator::Difference, InconsistentAggregator::Discount] {
                    let v = aggreg_inconsistent(hi, lo, k).value();
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert!(v <= hi.value());
                }
            }
        }
    }
}
