use std::collections::BTreeMap;

use serde::Serialize;

use super::hypothesis::{candidates, match_one, resolve_term, PatternSpec};
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{
    Certainty, DatumKind, EntityId, RuleKind, SourceId, TripleId, TriplePattern, Value,
};

/// Provenance tree of a triple, leaves are mentions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceNode {
    pub id: TripleId,
    pub kind: DatumKind,
    pub subject: EntityId,
    pub predicate: String,
    pub object: Value,
    pub certainty: Certainty,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceId>,
    /// Rules that produced this triple, if any.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleKind>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ProvenanceNode>,
}

impl ProvenanceNode {
    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| c.depth() + 1).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> Vec<&ProvenanceNode> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }
}

/// Backward chaining: unfolds the provenance of `id` down to mentions.
pub fn decompose(graph: &KnowledgeGraph, id: TripleId) -> Result<ProvenanceNode> {
    let t = graph.triple(id)?;
    let mut rules: Vec<RuleKind> = t.derivations.iter().map(|d| d.rule).collect();
    rules.sort();
    rules.dedup();
    let children = t
        .provenance
        .iter()
        .map(|p| decompose(graph, *p))
        .collect::<Result<_>>()?;
    Ok(ProvenanceNode {
        id,
        kind: t.kind,
        subject: t.subject.clone(),
        predicate: t.predicate.clone(),
        object: t.object.clone(),
        certainty: t.certainty,
        source: t.source.clone(),
        rules,
        children,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMatch {
    pub triple: TripleId,
    pub kind: DatumKind,
    pub certainty: Certainty,
    pub bindings: BTreeMap<String, Value>,
}

/// Current triples matching one pattern, strongest first.
pub fn query(graph: &KnowledgeGraph, pattern: &TriplePattern) -> Result<Vec<QueryMatch>> {
    graph.predicate(&pattern.predicate)?;
    let pattern = TriplePattern {
        subject: resolve_term(graph, &pattern.subject),
        predicate: pattern.predicate.clone(),
        object: resolve_term(graph, &pattern.object),
    };
    let mut out: Vec<QueryMatch> = candidates(graph)
        .iter()
        .filter_map(|c| {
            let bindings = match_one(&pattern, c, &BTreeMap::new())?;
            Some(QueryMatch {
                triple: c.id,
                kind: graph.triples[&c.id].kind,
                certainty: c.certainty,
                bindings,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.certainty
            .value()
            .total_cmp(&a.certainty.value())
            .then(a.triple.cmp(&b.triple))
    });
    Ok(out)
}

/// Parses `subject predicate object`, e.g. `?p graduates ?d` or
/// `diploma2 awardedIn 1256`. The object may contain spaces.
pub fn parse_pattern(graph: &KnowledgeGraph, text: &str) -> Result<TriplePattern> {
    let mut parts = text.trim().splitn(3, char::is_whitespace);
    let (Some(s), Some(p), Some(o)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `subject predicate object`, got `{text}`"),
        });
    };
    let o = o.trim();
    let object = serde_json::from_str::<serde_json::Value>(o)
        .ok()
        .filter(|v| v.is_number())
        .unwrap_or_else(|| serde_json::Value::String(o.to_owned()));
    PatternSpec {
        subject: s.to_owned(),
        predicate: p.to_owned(),
        object,
    }
    .to_pattern(graph)
}
