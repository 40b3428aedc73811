//! The knowledge-graph state every phase reads and writes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::audit::{AuditEvent, AuditLog};
use crate::error::{Error, Result};
use crate::model::{
    Certainty, CompositeFactoid, DatumKind, Entity, EntityId, Hypothesis, HypothesisId, Predicate,
    Source, SourceId, TripleId, UncertainTriple, Value, ValueDomain, VerdictId,
};
use crate::pipeline::Verdict;
use crate::taxonomy::Taxonomy;

/// Mentions and sources reachable from a triple through provenance edges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProvenanceClosure {
    pub mentions: BTreeSet<TripleId>,
    pub sources: BTreeSet<SourceId>,
}

/// Sources, schema, triples, hypotheses and the audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub(crate) sources: BTreeMap<SourceId, Source>,
    pub(crate) taxonomies: BTreeMap<String, Taxonomy>,
    pub(crate) predicates: BTreeMap<String, Predicate>,
    pub(crate) entities: BTreeMap<EntityId, Entity>,
    pub(crate) merges: BTreeMap<EntityId, EntityId>,
    pub(crate) triples: BTreeMap<TripleId, UncertainTriple>,
    pub(crate) composites: BTreeMap<EntityId, CompositeFactoid>,
    pub(crate) hypotheses: BTreeMap<HypothesisId, Hypothesis>,
    pub(crate) verdicts: BTreeMap<VerdictId, Verdict>,
    pub(crate) audit: AuditLog,
    pub(crate) next_id: u64,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self {
            sources: BTreeMap::new(),
            taxonomies: BTreeMap::new(),
            predicates: BTreeMap::new(),
            entities: BTreeMap::new(),
            merges: BTreeMap::new(),
            triples: BTreeMap::new(),
            composites: BTreeMap::new(),
            hypotheses: BTreeMap::new(),
            verdicts: BTreeMap::new(),
            audit: AuditLog::default(),
            next_id: 1,
        }
    }

    // -- registries ---------------------------------------------------------

    pub fn add_source(&mut self, source: Source) -> Result<()> {
        if source.id.as_str().is_empty() {
            return Err(Error::InvariantViolation("source id must not be empty".into()));
        }
        if self.sources.contains_key(&source.id) {
            return Err(Error::Duplicate {
                what: "source",
                id: source.id.to_string(),
            });
        }
        self.sources.insert(source.id.clone(), source);
        Ok(())
    }

    pub fn source(&self, id: &SourceId) -> Result<&Source> {
        self.sources
            .get(id)
            .ok_or_else(|| Error::UnknownSource(id.to_string()))
    }

    pub fn sources(&self) -> impl Iterator<Item = &Source> {
        self.sources.values()
    }

    pub(crate) fn set_reliability(&mut self, id: &SourceId, reliability: Certainty) -> Result<()> {
        let source = self
            .sources
            .get_mut(id)
            .ok_or_else(|| Error::UnknownSource(id.to_string()))?;
        source.reliability = reliability;
        Ok(())
    }

    pub fn add_taxonomy(&mut self, taxonomy: Taxonomy) -> Result<()> {
        if self.taxonomies.contains_key(taxonomy.name()) {
            return Err(Error::Duplicate {
                what: "taxonomy",
                id: taxonomy.name().to_owned(),
            });
        }
        self.taxonomies.insert(taxonomy.name().to_owned(), taxonomy);
        Ok(())
    }

    pub fn taxonomies(&self) -> &BTreeMap<String, Taxonomy> {
        &self.taxonomies
    }

    pub fn declare_predicate(&mut self, predicate: Predicate) -> Result<()> {
        if let ValueDomain::Taxonomy(name) = &predicate.domain {
            if !self.taxonomies.contains_key(name) {
                return Err(Error::Config(format!(
                    "predicate `{}` refers to unknown taxonomy `{name}`",
                    predicate.name
                )));
            }
        }
        if self.predicates.contains_key(&predicate.name) {
            return Err(Error::Duplicate {
                what: "predicate",
                id: predicate.name,
            });
        }
        self.predicates.insert(predicate.name.clone(), predicate);
        Ok(())
    }

    pub fn predicate(&self, name: &str) -> Result<&Predicate> {
        self.predicates
            .get(name)
            .ok_or_else(|| Error::UnknownPredicate(name.to_owned()))
    }

    pub fn predicates(&self) -> &BTreeMap<String, Predicate> {
        &self.predicates
    }

    /// Registers an entity, replacing label and domain of an existing one.
    pub fn upsert_entity(&mut self, entity: Entity) -> Result<()> {
        if entity.id.as_str().is_empty() {
            return Err(Error::InvariantViolation("entity id must not be empty".into()));
        }
        self.entities.insert(entity.id.clone(), entity);
        Ok(())
    }

    pub(crate) fn ensure_entity(&mut self, id: &EntityId) {
        self.entities
            .entry(id.clone())
            .or_insert_with(|| Entity::new(id.as_str(), id.as_str()));
    }

    pub fn entities(&self) -> &BTreeMap<EntityId, Entity> {
        &self.entities
    }

    /// Entity merge map; entities absent from it are their own canonical id.
    pub fn merges(&self) -> &BTreeMap<EntityId, EntityId> {
        &self.merges
    }

    pub fn resolve_entity<'a>(&'a self, id: &'a EntityId) -> &'a EntityId {
        self.merges.get(id).unwrap_or(id)
    }

    pub fn resolve_value(&self, value: &Value) -> Value {
        match value {
            Value::Entity(e) => Value::Entity(self.resolve_entity(e).clone()),
            other => other.clone(),
        }
    }

    // -- triples ------------------------------------------------------------

    pub(crate) fn fresh_id(&mut self) -> TripleId {
        let id = TripleId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Creates a triple with a fresh id after checking the domain and
    /// kind/provenance/source invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new_triple(
        &mut self,
        subject: EntityId,
        predicate: &str,
        object: Value,
        certainty: Certainty,
        kind: DatumKind,
        provenance: BTreeSet<TripleId>,
        source: Option<SourceId>,
    ) -> Result<TripleId> {
        let pred = self.predicate(predicate)?;
        if !pred.domain.admits(&object, &self.taxonomies) {
            return Err(Error::DomainMismatch {
                predicate: predicate.to_owned(),
                value: object.to_string(),
            });
        }
        if let Some(src) = &source {
            self.source(src)?;
        }
        for p in &provenance {
            if !self.triples.contains_key(p) {
                return Err(Error::InvariantViolation(format!(
                    "provenance refers to unknown triple {p}"
                )));
            }
        }
        let mut triple = UncertainTriple {
            id: TripleId(self.next_id),
            subject,
            predicate: predicate.to_owned(),
            object,
            certainty,
            kind,
            provenance,
            source,
            credibility: None,
            derivations: Vec::new(),
        };
        triple.check_shape()?;
        triple.id = self.fresh_id();
        self.ensure_entity(&triple.subject);
        if let Value::Entity(e) = &triple.object {
            self.ensure_entity(e);
        }
        let id = triple.id;
        self.triples.insert(id, triple);
        Ok(id)
    }

    pub fn triple(&self, id: TripleId) -> Result<&UncertainTriple> {
        self.triples
            .get(&id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub(crate) fn triple_mut(&mut self, id: TripleId) -> Result<&mut UncertainTriple> {
        self.triples
            .get_mut(&id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn triples(&self) -> impl Iterator<Item = &UncertainTriple> {
        self.triples.values()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn mention_count(&self) -> usize {
        self.triples.values().filter(|t| t.is_mention()).count()
    }

    pub fn facts(&self) -> impl Iterator<Item = &UncertainTriple> {
        self.triples.values().filter(|t| t.kind == DatumKind::Fact)
    }

    /// Transitive closure over provenance edges down to mentions and their
    /// sources. For a mention this is the mention itself and its source.
    pub fn provenance_closure(&self, id: TripleId) -> Result<ProvenanceClosure> {
        let mut closure = ProvenanceClosure::default();
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        self.triple(id)?;
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            let t = self.triple(cur)?;
            if t.is_mention() {
                closure.mentions.insert(cur);
                if let Some(s) = &t.source {
                    closure.sources.insert(s.clone());
                }
            }
            stack.extend(t.provenance.iter().copied());
        }
        Ok(closure)
    }

    pub fn composites(&self) -> impl Iterator<Item = &CompositeFactoid> {
        self.composites.values()
    }

    // -- hypotheses and verdicts --------------------------------------------

    pub fn hypothesis(&self, id: &HypothesisId) -> Result<&Hypothesis> {
        self.hypotheses
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn hypotheses(&self) -> impl Iterator<Item = &Hypothesis> {
        self.hypotheses.values()
    }

    /// Stores a hypothesis, assigning `h<n>` when its id is empty.
    pub fn add_hypothesis(&mut self, mut hypothesis: Hypothesis) -> Result<HypothesisId> {
        if hypothesis.id.as_str().is_empty() {
            hypothesis.id = HypothesisId::new(format!("h{}", self.hypotheses.len() + 1));
            while self.hypotheses.contains_key(&hypothesis.id) {
                hypothesis.id = HypothesisId::new(format!("{}'", hypothesis.id));
            }
        }
        if self.hypotheses.contains_key(&hypothesis.id) {
            return Err(Error::Duplicate {
                what: "hypothesis",
                id: hypothesis.id.to_string(),
            });
        }
        for pattern in &hypothesis.patterns {
            self.predicate(&pattern.predicate)?;
        }
        let id = hypothesis.id.clone();
        self.hypotheses.insert(id.clone(), hypothesis);
        Ok(id)
    }

    pub fn verdict(&self, id: &VerdictId) -> Result<&Verdict> {
        self.verdicts
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.values()
    }

    pub(crate) fn next_verdict_id(&self) -> VerdictId {
        VerdictId::new(format!("v{}", self.verdicts.len() + 1))
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub(crate) fn log(&mut self, event: AuditEvent) {
        self.audit.append(event);
    }

    // -- integrity ----------------------------------------------------------

    /// Referential integrity: every id a record mentions exists.
    pub fn check_integrity(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Integrity(msg));
        for pred in self.predicates.values() {
            if let ValueDomain::Taxonomy(name) = &pred.domain {
                if !self.taxonomies.contains_key(name) {
                    return fail(format!("predicate `{}` uses unknown taxonomy `{name}`", pred.name));
                }
            }
        }
        for (id, t) in &self.triples {
            if *id != t.id {
                return fail(format!("triple stored under {id} carries id {}", t.id));
            }
            if t.id.0 >= self.next_id {
                return fail(format!("triple id {} not below the id counter", t.id));
            }
            t.check_shape().map_err(|e| Error::Integrity(e.to_string()))?;
            let Some(pred) = self.predicates.get(&t.predicate) else {
                return fail(format!("{}: unknown predicate `{}`", t.id, t.predicate));
            };
            if !pred.domain.admits(&t.object, &self.taxonomies) {
                return fail(format!("{}: object {} outside the domain of `{}`", t.id, t.object, t.predicate));
            }
            if let Some(s) = &t.source {
                if !self.sources.contains_key(s) {
                    return fail(format!("{}: dangling source `{s}`", t.id));
                }
            }
            for p in &t.provenance {
                if !self.triples.contains_key(p) {
                    return fail(format!("{}: dangling provenance id {p}", t.id));
                }
            }
            for d in &t.derivations {
                for i in &d.inputs {
                    if !t.provenance.contains(i) {
                        return fail(format!("{}: derivation input {i} missing from provenance", t.id));
                    }
                }
            }
            if !self.entities.contains_key(&t.subject) {
                return fail(format!("{}: unregistered subject `{}`", t.id, t.subject));
            }
        }
        // Provenance must bottom out in mentions: no cycles.
        for id in self.triples.keys() {
            let mut on_path = BTreeSet::new();
            if self.has_cycle(*id, &mut on_path, &mut BTreeSet::new()) {
                return fail(format!("provenance cycle through {id}"));
            }
        }
        for (from, to) in &self.merges {
            if !self.entities.contains_key(from) || !self.entities.contains_key(to) {
                return fail(format!("merge {from} -> {to} refers to an unknown entity"));
            }
        }
        for c in self.composites.values() {
            for m in &c.members {
                if !self.triples.contains_key(m) {
                    return fail(format!("composite {} has dangling member {m}", c.id));
                }
            }
        }
        for v in self.verdicts.values() {
            if !self.hypotheses.contains_key(&v.hypothesis) {
                return fail(format!("verdict {} refers to unknown hypothesis {}", v.id, v.hypothesis));
            }
        }
        for h in self.hypotheses.values() {
            for p in &h.patterns {
                if !self.predicates.contains_key(&p.predicate) {
                    return fail(format!("hypothesis {} uses unknown predicate `{}`", h.id, p.predicate));
                }
            }
        }
        Ok(())
    }

    fn has_cycle(
        &self,
        id: TripleId,
        on_path: &mut BTreeSet<TripleId>,
        done: &mut BTreeSet<TripleId>,
    ) -> bool {
        if done.contains(&id) {
            return false;
        }
        if !on_path.insert(id) {
            return true;
        }
        if let Some(t) = self.triples.get(&id) {
            for p in &t.provenance {
                if self.has_cycle(*p, on_path, done) {
                    return true;
                }
            }
        }
        on_path.remove(&id);
        done.insert(id);
        false
    }
}
