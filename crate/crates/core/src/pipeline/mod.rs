//! The five phases: capture, association, establishment, hypothesis test and
//! feedback propagation.
//!
//! Every phase takes the graph by `&mut` and is the only writer for its
//! duration. Read-only helpers ([`decompose`], [`query`],
//! [`evaluate_hypothesis`]) take `&KnowledgeGraph`.

mod associate;
mod explain;
mod feedback;
mod hypothesis;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, DemotionReason};
use crate::error::{Error, Result};
use crate::fusion::{self, AggregatorKind, FactThreshold, RuleContext};
use crate::graph::KnowledgeGraph;
use crate::model::{Certainty, DatumKind, EntityId, SourceId, TripleId};
use crate::similarity::SimilarityConfig;

pub use associate::{associate, AssociateReport};
pub use explain::{decompose, parse_pattern, query, ProvenanceNode, QueryMatch};
pub use feedback::{propagate_feedback, FeedbackReport, ReliabilityDelta};
pub use hypothesis::{
    evaluate_hypothesis, test_hypothesis, Binding, HypothesisSpec, PatternSpec, Verdict,
};

/// Parameters of every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub aggregators: AggregatorKind,
    pub pi: FactThreshold,
    /// Per-predicate τ, overriding the value declared on the predicate.
    pub tau: BTreeMap<String, u32>,
    /// Feedback learning rate, strictly between 0 and 1.
    pub alpha: f64,
    /// Default hypothesis threshold θ.
    #[serde(alias = "hypothesis_theta_default")]
    pub theta: Certainty,
    /// Mentions from sources at least this reliable are also promoted to
    /// facts at capture time, provided their certainty clears π.
    pub auto_fact_reliability: Certainty,
    pub similarity: SimilarityConfig,
    /// The weaker side of a conflict must exceed this for the inconsistent
    /// rule to fire.
    pub conflict_floor: Certainty,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            aggregators: AggregatorKind::default(),
            pi: FactThreshold(Certainty::clamped(0.9)),
            tau: BTreeMap::new(),
            alpha: 0.1,
            theta: Certainty::clamped(0.9),
            auto_fact_reliability: Certainty::ONE,
            similarity: SimilarityConfig::default(),
            conflict_floor: Certainty::ZERO,
            epsilon: 1e-9,
            max_iterations: 1000,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::OutOfRange {
                what: "alpha",
                value: self.alpha,
                expected: "(0, 1)",
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::OutOfRange {
                what: "epsilon",
                value: self.epsilon,
                expected: "> 0",
            });
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        self.similarity.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn rule_context<'a>(&'a self, graph: &'a KnowledgeGraph) -> RuleContext<'a> {
        RuleContext {
            predicates: graph.predicates(),
            taxonomies: graph.taxonomies(),
            tau: &self.tau,
            aggregators: self.aggregators,
            conflict_floor: self.conflict_floor,
        }
    }
}

// ---------------------------------------------------------------------------
// Capture
// ---------------------------------------------------------------------------

/// One statement read from a source, before it becomes a mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Statement {
    #[serde(rename = "s", alias = "subject")]
    pub subject: String,
    #[serde(rename = "p", alias = "predicate")]
    pub predicate: String,
    #[serde(rename = "o", alias = "object")]
    pub object: serde_json::Value,
    pub credibility: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CaptureReport {
    pub mentions: Vec<TripleId>,
    /// Facts created directly from mentions of highly reliable sources.
    pub facts: Vec<TripleId>,
}

/// Turns statements of one source into mentions with certainty
/// `reliability × credibility`. All statements are validated before any
/// is stored.
pub fn capture(
    graph: &mut KnowledgeGraph,
    source: &SourceId,
    statements: &[Statement],
    config: &FusionConfig,
) -> Result<CaptureReport> {
    let reliability = graph.source(source)?.reliability;
    let mut parsed = Vec::with_capacity(statements.len());
    for st in statements {
        let credibility = Certainty::new(st.credibility).map_err(|_| Error::OutOfRange {
            what: "credibility",
            value: st.credibility,
            expected: "[0, 1]",
        })?;
        if st.subject.is_empty() {
            return Err(Error::InvariantViolation("statement with empty subject".into()));
        }
        let pred = graph.predicate(&st.predicate)?;
        let object = pred.domain.parse(&st.predicate, &st.object, graph.taxonomies())?;
        parsed.push((EntityId::new(st.subject.clone()), st.predicate.clone(), object, credibility));
    }

    let mut report = CaptureReport::default();
    let auto_fact = reliability.value() >= config.auto_fact_reliability.value();
    for (subject, predicate, object, credibility) in parsed {
        let certainty = Certainty::clamped(reliability.value() * credibility.value());
        let id = graph.new_triple(
            subject.clone(),
            &predicate,
            object.clone(),
            certainty,
            DatumKind::Mention,
            BTreeSet::new(),
            Some(source.clone()),
        )?;
        graph.triple_mut(id)?.credibility = Some(credibility);
        report.mentions.push(id);
        if auto_fact && config.pi.admits(certainty) {
            let fact = graph.new_triple(
                subject,
                &predicate,
                object,
                certainty,
                DatumKind::Fact,
                BTreeSet::from([id]),
                None,
            )?;
            graph.log(AuditEvent::Promotion {
                triple: fact,
                certainty,
                from_mention: Some(id),
            });
            report.facts.push(fact);
        }
    }
    graph.log(AuditEvent::Capture {
        source: source.clone(),
        mentions: report.mentions.len(),
    });
    Ok(report)
}

// ---------------------------------------------------------------------------
// Establishment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstablishReport {
    /// Factoids promoted in place.
    pub promoted: Vec<TripleId>,
    /// `(mention, new fact)` pairs.
    pub promoted_mentions: Vec<(TripleId, TripleId)>,
    pub demoted: Vec<(TripleId, DemotionReason)>,
    /// All facts after the phase.
    pub facts: Vec<TripleId>,
    pub composites: usize,
}

/// Applies fact building: current triples above π become facts, facts that
/// are no longer current or no longer above π go back to factoids, and Ω
/// is registered for every subject with two or more current triples.
pub fn establish(graph: &mut KnowledgeGraph, config: &FusionConfig) -> Result<EstablishReport> {
    let plan = fusion::build_facts(graph, config.pi);
    let mut report = EstablishReport::default();

    for id in &plan.promote {
        let t = graph.triple_mut(*id)?;
        t.kind = DatumKind::Fact;
        let certainty = t.certainty;
        graph.log(AuditEvent::Promotion {
            triple: *id,
            certainty,
            from_mention: None,
        });
        report.promoted.push(*id);
    }
    for m in &plan.promote_mentions {
        let t = graph.triple(*m)?.clone();
        let fact = graph.new_triple(
            t.subject,
            &t.predicate,
            t.object,
            t.certainty,
            DatumKind::Fact,
            BTreeSet::from([*m]),
            None,
        )?;
        graph.log(AuditEvent::Promotion {
            triple: fact,
            certainty: t.certainty,
            from_mention: Some(*m),
        });
        report.promoted_mentions.push((*m, fact));
    }
    for (id, reason) in &plan.demote {
        let t = graph.triple_mut(*id)?;
        t.kind = DatumKind::Factoid;
        let certainty = t.certainty;
        graph.log(AuditEvent::Demotion {
            triple: *id,
            certainty,
            reason: *reason,
        });
        report.demoted.push((*id, *reason));
    }

    // Ω membership follows the current triples; stand-ins created above
    // replace their mentions.
    let stand_in: BTreeMap<TripleId, TripleId> = report.promoted_mentions.iter().copied().collect();
    graph.composites = plan
        .composites
        .into_iter()
        .map(|mut c| {
            c.members = c
                .members
                .iter()
                .map(|m| stand_in.get(m).copied().unwrap_or(*m))
                .collect();
            (c.subject.clone(), c)
        })
        .collect();
    report.composites = graph.composites.len();
    report.facts = graph.facts().map(|t| t.id).collect();
    Ok(report)
}
