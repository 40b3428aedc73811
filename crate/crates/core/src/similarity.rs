//! Per-domain similarity and entity resolution.
//!
//! Names are compared after case folding and accent stripping
//! (Unicode NFD, combining marks dropped). Locale-naive: `Thomas d'Aquino`
//! and `THOMAS D'AQUINO` compare equal, transliterations do not.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{Entity, EntityId, Value};

/// Built-in similarity functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityFn {
    Exact,
    NormalizedEditDistance,
    NumericProximity { window: f64 },
}

impl SimilarityFn {
    pub fn score(&self, a: &str, b: &str) -> f64 {
        match *self {
            SimilarityFn::Exact => sim_exact(a, b),
            SimilarityFn::NormalizedEditDistance => sim_string(a, b),
            SimilarityFn::NumericProximity { window } => {
                match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                    (Ok(x), Ok(y)) => sim_numeric(x, y, window),
                    _ => sim_exact(a, b),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    /// Function for entities without a domain, or whose domain has no entry
    /// in `domains`.
    pub function: SimilarityFn,
    pub domains: BTreeMap<String, SimilarityFn>,
    pub merge_threshold: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            function: SimilarityFn::NormalizedEditDistance,
            domains: BTreeMap::new(),
            merge_threshold: 0.85,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.merge_threshold) {
            return Err(Error::OutOfRange {
                what: "similarity.merge_threshold",
                value: self.merge_threshold,
                expected: "[0, 1]",
            });
        }
        for f in std::iter::once(&self.function).chain(self.domains.values()) {
            if let SimilarityFn::NumericProximity { window } = f {
                if !(*window > 0.0 && window.is_finite()) {
                    return Err(Error::OutOfRange {
                        what: "numeric-proximity window",
                        value: *window,
                        expected: "> 0",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn function_for(&self, domain: Option<&str>) -> SimilarityFn {
        domain
            .and_then(|d| self.domains.get(d))
            .copied()
            .unwrap_or(self.function)
    }
}

/// Case-folded, accent-stripped form of a name.
pub fn normalize(s: &str) -> String {
    s.nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` on normalized strings, counted in
/// characters. Two empty strings are identical.
pub fn sim_string(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / longest as f64
}

pub fn sim_exact(a: &str, b: &str) -> f64 {
    if normalize(a) == normalize(b) {
        1.0
    } else {
        0.0
    }
}

/// Linear decay to zero at `window` apart.
pub fn sim_numeric(a: f64, b: f64, window: f64) -> f64 {
    (1.0 - (a - b).abs() / window).clamp(0.0, 1.0)
}

/// Entity → canonical entity. Entities missing from the map are canonical.
pub type MergeMap = BTreeMap<EntityId, EntityId>;

/// Decides which entities denote the same individual.
///
/// Two entities merge when their labels are at least `merge_threshold`
/// similar under their domain's function *and* they take part in at least
/// one common predicate among the mentions. Entities with different declared
/// domains never merge. Merges are closed transitively; the canonical member
/// of each class is its smallest id. Only non-identity entries are returned.
pub fn resolve_entities(graph: &KnowledgeGraph, config: &SimilarityConfig) -> MergeMap {
    // predicates each entity takes part in, as subject or entity object
    let mut involvement: BTreeMap<&EntityId, BTreeSet<&str>> = BTreeMap::new();
    for t in graph.triples().filter(|t| t.is_mention()) {
        involvement
            .entry(&t.subject)
            .or_default()
            .insert(t.predicate.as_str());
        if let Value::Entity(o) = &t.object {
            involvement.entry(o).or_default().insert(t.predicate.as_str());
        }
    }
    let candidates: Vec<(&EntityId, &BTreeSet<&str>)> = involvement.iter().map(|(k, v)| (*k, v)).collect();
    let entities = graph.entities();
    fn label<'a>(entities: &'a BTreeMap<EntityId, Entity>, id: &'a EntityId) -> &'a str {
        entities.get(id).map_or(id.as_str(), |e| e.label.as_str())
    }
    let domain = |id: &EntityId| entities.get(id).and_then(|e| e.domain.as_deref());

    let mut uf = UnionFind::new(candidates.len());
    for i in 0..candidates.len() {
        for j in (i + 1)..candidates.len() {
            let (a, pa) = candidates[i];
            let (b, pb) = candidates[j];
            let (da, db) = (domain(a), domain(b));
            if da.is_some() && db.is_some() && da != db {
                continue;
            }
            if pa.is_disjoint(pb) {
                continue;
            }
            let f = config.function_for(da.or(db));
            if f.score(label(entities, a), label(entities, b)) >= config.merge_threshold {
                uf.union(i, j);
            }
        }
    }

    let mut map = MergeMap::new();
    for i in 0..candidates.len() {
        // candidates are sorted, so the smallest index of a class is its
        // smallest id
        let root = uf.min_member(i);
        if root != i {
            map.insert(candidates[i].0.clone(), candidates[root].0.clone());
        }
    }
    map
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Union keeping the smaller index as representative.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn min_member(&mut self, x: usize) -> usize {
        self.find(x)
    }
}
