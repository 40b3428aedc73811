use std::collections::BTreeSet;

use serde::Serialize;

use super::{associate, establish, AssociateReport, EstablishReport, FusionConfig};
use crate::audit::AuditEvent;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{Certainty, SourceId, TripleId, VerdictId, VerdictStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityDelta {
    pub source: SourceId,
    pub old: Certainty,
    pub new: Certainty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackReport {
    pub verdict: VerdictId,
    pub status: VerdictStatus,
    pub reliability: Vec<ReliabilityDelta>,
    /// Mentions whose certainty changed after the reliability update.
    pub recomputed_mentions: Vec<TripleId>,
    pub associate: AssociateReport,
    pub establish: EstablishReport,
}

/// Moves source reliabilities towards 1 (confirmed) or 0 (infirmed) by
/// the rate α, then recomputes mention certainties and re-runs association
/// and establishment, which demotes every fact that fell to π or below.
///
/// Confirmed verdicts act on the sources behind the supporting triples,
/// infirmed ones on the sources behind the contradicting triples.
pub fn propagate_feedback(
    graph: &mut KnowledgeGraph,
    verdict: &VerdictId,
    config: &FusionConfig,
) -> Result<FeedbackReport> {
    let v = graph.verdict(verdict)?;
    if v.applied {
        return Err(Error::AlreadyApplied(verdict.to_string()));
    }
    let status = v.status;
    let triples = match status {
        VerdictStatus::Confirmed => v.supporting.clone(),
        VerdictStatus::Infirmed => v.contradicting.clone(),
        VerdictStatus::Undetermined | VerdictStatus::Untested => {
            return Err(Error::VerdictUndetermined(verdict.to_string()))
        }
    };

    let mut sources = BTreeSet::new();
    for id in &triples {
        let closure = graph.provenance_closure(*id).map_err(|_| {
            Error::Integrity(format!(
                "verdict {verdict} refers to {id}, which no longer exists; test the hypothesis again"
            ))
        })?;
        sources.extend(closure.sources);
    }

    let alpha = config.alpha;
    let mut reliability = Vec::new();
    for s in sources {
        let old = graph.source(&s)?.reliability;
        let r = old.value();
        let new = Certainty::clamped(match status {
            VerdictStatus::Confirmed => r + alpha * (1.0 - r),
            _ => r * (1.0 - alpha),
        });
        graph.set_reliability(&s, new)?;
        graph.log(AuditEvent::ReliabilityChange {
            source: s.clone(),
            old,
            new,
            verdict: verdict.clone(),
        });
        reliability.push(ReliabilityDelta { source: s, old, new });
    }

    let recomputed_mentions = recompute_mentions(graph)?;
    let associate = associate(graph, config)?;
    let establish = establish(graph, config)?;
    if let Some(v) = graph.verdicts.get_mut(verdict) {
        v.applied = true;
    }
    Ok(FeedbackReport {
        verdict: verdict.clone(),
        status,
        reliability,
        recomputed_mentions,
        associate,
        establish,
    })
}

/// `reliability × credibility` for every mention with a stored credibility.
fn recompute_mentions(graph: &mut KnowledgeGraph) -> Result<Vec<TripleId>> {
    let mut updates = Vec::new();
    for t in graph.triples().filter(|t| t.is_mention()) {
        let (Some(src), Some(cred)) = (&t.source, t.credibility) else {
            continue;
        };
        let c = Certainty::clamped(graph.source(src)?.reliability.value() * cred.value());
        if c != t.certainty {
            updates.push((t.id, c));
        }
    }
    let mut changed = Vec::with_capacity(updates.len());
    for (id, c) in updates {
        graph.triple_mut(id)?.certainty = c;
        changed.push(id);
    }
    Ok(changed)
}
