use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use tracing::debug;

use super::FusionConfig;
use crate::audit::AuditEvent;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionView, Proposal};
use crate::graph::KnowledgeGraph;
use crate::model::{DatumKind, Derivation, EntityId, TripleId, Value};
use crate::similarity::resolve_entities;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AssociateReport {
    /// Entity merges added in this run, `(entity, canonical)`.
    pub merges: Vec<(EntityId, EntityId)>,
    pub iterations: usize,
    /// Fused triples created in this run.
    pub created: Vec<TripleId>,
    /// Existing fused triples whose derivations or certainty changed.
    pub updated: Vec<TripleId>,
    /// Fused triples no rule supports any more.
    pub retracted: Vec<TripleId>,
}

type Key = (EntityId, String, Value);

/// Forward chaining to a fixpoint.
///
/// Entities are resolved first; then both rules run against the current
/// snapshot, their proposals are grouped by `(subject, predicate, object)`
/// and each group becomes one fused triple whose certainty folds the values
/// of all its derivations with the consistent aggregator. Rounds repeat
/// until no triple appears, disappears, or moves by more than ε.
pub fn associate(graph: &mut KnowledgeGraph, config: &FusionConfig) -> Result<AssociateReport> {
    let mut report = AssociateReport::default();

    let merges = resolve_entities(graph, &config.similarity);
    for (entity, canonical) in &merges {
        if graph.merges.get(entity) != Some(canonical) {
            graph.log(AuditEvent::Merge {
                entity: entity.clone(),
                canonical: canonical.clone(),
            });
            report.merges.push((entity.clone(), canonical.clone()));
        }
    }
    graph.merges = merges;

    refresh_stand_ins(graph)?;

    let mut created = BTreeSet::new();
    let mut updated = BTreeSet::new();
    loop {
        if report.iterations == config.max_iterations {
            let pending = pending_changes(graph, config)?;
            return Err(Error::NonTermination {
                iterations: report.iterations,
                pending,
            });
        }
        report.iterations += 1;
        let desired = desired_triples(graph, config)?;
        let round = reconcile(graph, desired, config)?;
        debug!(
            iteration = report.iterations,
            created = round.created.len(),
            updated = round.updated.len(),
            retracted = round.retracted.len(),
            "association round"
        );
        let quiet = round.is_quiet();
        created.extend(round.created);
        updated.extend(round.updated);
        report.retracted.extend(round.retracted);
        if quiet {
            break;
        }
    }

    // Triples created and later retracted within the run are not reported.
    let retracted: BTreeSet<TripleId> = report.retracted.iter().copied().collect();
    report.created = created.difference(&retracted).copied().collect();
    report.updated = updated
        .difference(&created)
        .filter(|id| !retracted.contains(id))
        .copied()
        .collect();
    report.retracted.retain(|id| !created.contains(id));

    prune_composites(graph);
    Ok(report)
}

fn desired_triples(
    graph: &KnowledgeGraph,
    config: &FusionConfig,
) -> Result<BTreeMap<Key, Vec<Derivation>>> {
    let view = FusionView::from_graph(graph, graph.merges());
    let ctx = config.rule_context(graph);
    let mut proposals = fusion::apply_rule1(&view, &ctx)?;
    proposals.extend(fusion::apply_rule2(&view, &ctx)?);
    let mut desired: BTreeMap<Key, Vec<Derivation>> = BTreeMap::new();
    for Proposal {
        subject,
        predicate,
        object,
        derivation,
    } in proposals
    {
        desired
            .entry((subject, predicate, object))
            .or_default()
            .push(derivation);
    }
    for derivations in desired.values_mut() {
        derivations.sort_by_key(|d| (d.inputs, d.rule));
    }
    Ok(desired)
}

#[derive(Default)]
struct Round {
    created: Vec<TripleId>,
    updated: Vec<TripleId>,
    retracted: Vec<TripleId>,
}

impl Round {
    fn is_quiet(&self) -> bool {
        self.created.is_empty() && self.updated.is_empty() && self.retracted.is_empty()
    }
}

fn fused_by_key(graph: &KnowledgeGraph) -> BTreeMap<Key, TripleId> {
    graph
        .triples()
        .filter(|t| t.is_fused())
        .map(|t| ((t.subject.clone(), t.predicate.clone(), t.object.clone()), t.id))
        .collect()
}

fn same_derivations(a: &[Derivation], b: &[Derivation], epsilon: f64) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.rule == y.rule
                && x.inputs == y.inputs
                && (x.value.value() - y.value.value()).abs() <= epsilon
        })
}

/// Brings the fused triples in line with `desired`. Creations and updates
/// happen before retractions so that no new triple points at a removed one.
fn reconcile(
    graph: &mut KnowledgeGraph,
    desired: BTreeMap<Key, Vec<Derivation>>,
    config: &FusionConfig,
) -> Result<Round> {
    let mut existing = fused_by_key(graph);
    let mut round = Round::default();
    for (key, derivations) in desired {
        let values: Vec<_> = derivations.iter().map(|d| d.value).collect();
        let certainty = fusion::aggreg_consistent_all(&values, config.aggregators.consistent)
            .expect("every desired key has a derivation");
        let provenance: BTreeSet<TripleId> = derivations.iter().flat_map(|d| d.inputs).collect();
        match existing.remove(&key) {
            Some(id) => {
                let t = graph.triple_mut(id)?;
                let moved = (t.certainty.value() - certainty.value()).abs() > config.epsilon;
                if moved || !same_derivations(&t.derivations, &derivations, config.epsilon) {
                    round.updated.push(id);
                }
                t.certainty = certainty;
                t.provenance = provenance;
                t.derivations = derivations;
            }
            None => {
                let (subject, predicate, object) = key;
                let id = graph.new_triple(
                    subject,
                    &predicate,
                    object,
                    certainty,
                    DatumKind::Factoid,
                    provenance,
                    None,
                )?;
                graph.triple_mut(id)?.derivations = derivations;
                round.created.push(id);
            }
        }
    }
    for id in existing.into_values() {
        graph.triples.remove(&id);
        graph.log(AuditEvent::Retraction { triple: id });
        round.retracted.push(id);
    }
    Ok(round)
}

/// Number of triples the next round would still touch.
fn pending_changes(graph: &KnowledgeGraph, config: &FusionConfig) -> Result<usize> {
    let mut probe = graph.clone();
    let desired = desired_triples(&probe, config)?;
    let round = reconcile(&mut probe, desired, config)?;
    Ok(round.created.len() + round.updated.len() + round.retracted.len())
}

/// A fact or factoid standing for a single mention carries that mention's
/// certainty.
fn refresh_stand_ins(graph: &mut KnowledgeGraph) -> Result<()> {
    let updates: Vec<(TripleId, _)> = graph
        .triples()
        .filter_map(|t| {
            let m = t.promoted_mention()?;
            Some((t.id, graph.triples.get(&m)?.certainty))
        })
        .collect();
    for (id, certainty) in updates {
        graph.triple_mut(id)?.certainty = certainty;
    }
    Ok(())
}

fn prune_composites(graph: &mut KnowledgeGraph) {
    let triples = &graph.triples;
    graph.composites.retain(|_, c| {
        c.members.retain(|m| triples.contains_key(m));
        if let Some(min) = c
            .members
            .iter()
            .map(|m| triples[m].certainty)
            .min_by(|a, b| a.value().total_cmp(&b.value()))
        {
            c.certainty = min;
        }
        c.members.len() >= 2
    });
}
