//! Rooted domain trees.
//!
//! A [`Taxonomy`] organises the values of one domain (places, degrees, ...)
//! under a single root, following one relation such as *is located in* or
//! *is a*. It answers the three questions the composition rules ask:
//! the least common ancestor of two values, the ascent distance from a value
//! to one of its ancestors, and the concept distance between two values
//! (the smaller of the two ascents to their least common ancestor).
//!
//! Only trees are accepted. A node with two parents makes the least common
//! ancestor ambiguous, so the loader rejects it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy `{taxonomy}`: node `{node}` already present")]
    DuplicateNode { taxonomy: String, node: String },
    #[error("taxonomy `{taxonomy}`: unknown parent `{parent}`")]
    UnknownParent { taxonomy: String, parent: String },
    #[error("taxonomy `{taxonomy}`: `{node}` would be a second root (root is `{root}`)")]
    SecondRoot {
        taxonomy: String,
        node: String,
        root: String,
    },
    #[error("taxonomy `{taxonomy}`: unknown node `{node}`")]
    UnknownNode { taxonomy: String, node: String },
    #[error("taxonomy `{taxonomy}`: `{ancestor}` is not an ancestor of `{node}`")]
    NotAnAncestor {
        taxonomy: String,
        node: String,
        ancestor: String,
    },
    #[error("taxonomy `{taxonomy}`: node `{node}` has more than one parent")]
    MultipleParents { taxonomy: String, node: String },
    #[error("taxonomy `{taxonomy}`: nodes not reachable from the root: {nodes:?}")]
    Unreachable { taxonomy: String, nodes: Vec<String> },
    #[error("taxonomy `{0}` has no root")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    parent: Option<String>,
    level: u32,
}

/// A rooted tree over the labels of one value domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct Taxonomy {
    name: String,
    root: Option<String>,
    nodes: BTreeMap<String, Node>,
}

/// On-disk form: `{"name": ..., "root": ..., "edges": [[parent, child], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub name: String,
    pub root: String,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

impl Taxonomy {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            root: None,
            nodes: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn root(&self) -> Option<&str> {
        self.root.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains_key(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    /// Inserts `node` below `parent`, or as the root when `parent` is `None`.
    pub fn add_node(&mut self, node: &str, parent: Option<&str>) -> Result<(), TaxonomyError> {
        if self.nodes.contains_key(node) {
            return Err(TaxonomyError::DuplicateNode {
                taxonomy: self.name.clone(),
                node: node.to_owned(),
            });
        }
        let level = match parent {
            None => {
                if let Some(root) = &self.root {
                    return Err(TaxonomyError::SecondRoot {
                        taxonomy: self.name.clone(),
                        node: node.to_owned(),
                        root: root.clone(),
                    });
                }
                self.root = Some(node.to_owned());
                0
            }
            Some(p) => {
                let parent_node =
                    self.nodes
                        .get(p)
                        .ok_or_else(|| TaxonomyError::UnknownParent {
                            taxonomy: self.name.clone(),
                            parent: p.to_owned(),
                        })?;
                parent_node.level + 1
            }
        };
        self.nodes.insert(
            node.to_owned(),
            Node {
                parent: parent.map(str::to_owned),
                level,
            },
        );
        Ok(())
    }

    fn node(&self, node: &str) -> Result<&Node, TaxonomyError> {
        self.nodes.get(node).ok_or_else(|| TaxonomyError::UnknownNode {
            taxonomy: self.name.clone(),
            node: node.to_owned(),
        })
    }

    pub fn level(&self, node: &str) -> Result<u32, TaxonomyError> {
        Ok(self.node(node)?.level)
    }

    pub fn parent(&self, node: &str) -> Result<Option<&str>, TaxonomyError> {
        Ok(self.node(node)?.parent.as_deref())
    }

    /// `ancestor` is `node` itself or lies on its path to the root.
    pub fn is_ancestor_or_equal(&self, ancestor: &str, node: &str) -> Result<bool, TaxonomyError> {
        let target = self.level(ancestor)?;
        let mut cur = node;
        let mut level = self.level(node)?;
        while level > target {
            cur = self.node(cur)?.parent.as_deref().expect("non-root has a parent");
            level -= 1;
        }
        Ok(cur == ancestor)
    }

    /// Least common ancestor: the deepest node that is an ancestor-or-equal
    /// of both arguments.
    pub fn lca<'a>(&'a self, a: &'a str, b: &'a str) -> Result<&'a str, TaxonomyError> {
        let (mut x, mut lx) = (a, self.level(a)?);
        let (mut y, mut ly) = (b, self.level(b)?);
        while lx > ly {
            x = self.nodes[x].parent.as_deref().expect("non-root has a parent");
            lx -= 1;
        }
        while ly > lx {
            y = self.nodes[y].parent.as_deref().expect("non-root has a parent");
            ly -= 1;
        }
        while x != y {
            x = self.nodes[x].parent.as_deref().expect("distinct nodes below root");
            y = self.nodes[y].parent.as_deref().expect("distinct nodes below root");
        }
        // Re-borrow from the map so the lifetime is tied to `self`.
        Ok(self.nodes.get_key_value(x).map(|(k, _)| k.as_str()).unwrap())
    }

    /// Level difference between `node` and its ancestor-or-equal `ancestor`.
    pub fn dist_a(&self, node: &str, ancestor: &str) -> Result<u32, TaxonomyError> {
        if !self.is_ancestor_or_equal(ancestor, node)? {
            return Err(TaxonomyError::NotAnAncestor {
                taxonomy: self.name.clone(),
                node: node.to_owned(),
                ancestor: ancestor.to_owned(),
            });
        }
        Ok(self.level(node)? - self.level(ancestor)?)
    }

    /// `min(dist_a(v1, lca), dist_a(v2, lca))`. Zero whenever one value is an
    /// ancestor-or-equal of the other.
    pub fn concept_distance(&self, v1: &str, v2: &str) -> Result<u32, TaxonomyError> {
        let lca = self.lca(v1, v2)?;
        let l = self.level(lca)?;
        Ok((self.level(v1)? - l).min(self.level(v2)? - l))
    }

    pub fn to_file(&self) -> TaxonomyFile {
        let mut edges: Vec<(u32, String, String)> = self
            .nodes
            .iter()
            .filter_map(|(child, n)| n.parent.as_ref().map(|p| (n.level, p.clone(), child.clone())))
            .collect();
        edges.sort();
        TaxonomyFile {
            name: self.name.clone(),
            root: self.root.clone().unwrap_or_default(),
            edges: edges.into_iter().map(|(_, p, c)| (p, c)).collect(),
        }
    }

    /// Builds a taxonomy from its edge list, checking the tree invariants.
    pub fn from_file(file: TaxonomyFile) -> Result<Self, TaxonomyError> {
        let name = file.name;
        if file.root.is_empty() {
            return Err(TaxonomyError::Empty(name));
        }
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut parent_of: BTreeMap<&str, &str> = BTreeMap::new();
        let mut all: BTreeSet<&str> = BTreeSet::new();
        all.insert(file.root.as_str());
        for (p, c) in &file.edges {
            if c == &file.root {
                return Err(TaxonomyError::MultipleParents {
                    taxonomy: name.clone(),
                    node: c.clone(),
                });
            }
            if let Some(prev) = parent_of.insert(c.as_str(), p.as_str()) {
                if prev == p {
                    return Err(TaxonomyError::DuplicateNode {
                        taxonomy: name.clone(),
                        node: c.clone(),
                    });
                }
                return Err(TaxonomyError::MultipleParents {
                    taxonomy: name.clone(),
                    node: c.clone(),
                });
            }
            children.entry(p.as_str()).or_default().push(c.as_str());
            all.insert(p.as_str());
            all.insert(c.as_str());
        }

        let mut tax = Taxonomy::new(name.clone());
        tax.add_node(&file.root, None)?;
        let mut queue = VecDeque::from([file.root.as_str()]);
        while let Some(p) = queue.pop_front() {
            for &c in children.get(p).map(Vec::as_slice).unwrap_or_default() {
                tax.add_node(c, Some(p))?;
                queue.push_back(c);
            }
        }
        let unreachable: Vec<String> = all
            .into_iter()
            .filter(|n| !tax.contains(n))
            .map(str::to_owned)
            .collect();
        if !unreachable.is_empty() {
            return Err(TaxonomyError::Unreachable {
                taxonomy: name,
                nodes: unreachable,
            });
        }
        Ok(tax)
    }
}

impl TryFrom<TaxonomyFile> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(file: TaxonomyFile) -> Result<Self, Self::Error> {
        Taxonomy::from_file(file)
    }
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(tax: Taxonomy) -> Self {
        tax.to_file()
    }
}
