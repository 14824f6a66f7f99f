use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Rooted tree over tokens. The root has depth 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    root: String,
    parent: BTreeMap<String, String>,
    nodes: BTreeSet<String>,
}

impl Taxonomy {
    /// Builds a tree from `(parent, child)` edges. The root is the unique
    /// parent that never appears as a child.
    pub fn from_edges<I, S>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        let mut nodes = BTreeSet::new();
        for (p, c) in edges {
            let (p, c) = (p.into(), c.into());
            if p == c {
                return Err(Error::Data(format!("cycle involving {c:?}")));
            }
            if let Some(prev) = parent.get(&c) {
                if *prev != p {
                    return Err(Error::Data(format!(
                        "node {c:?} has two parents ({prev:?} and {p:?}); taxonomy must be a tree"
                    )));
                }
            }
            nodes.insert(p.clone());
            nodes.insert(c.clone());
            parent.insert(c, p);
        }
        if nodes.is_empty() {
            return Err(Error::Data("empty taxonomy".into()));
        }
        for start in &nodes {
            let mut seen = HashSet::new();
            let mut cur = start;
            while let Some(p) = parent.get(cur) {
                if !seen.insert(cur) {
                    return Err(Error::Data(format!("cycle involving {cur:?}")));
                }
                cur = p;
            }
        }
        let roots: Vec<&String> = nodes.iter().filter(|n| !parent.contains_key(*n)).collect();
        match roots.as_slice() {
            [root] => {
                let root = (*root).clone();
                Ok(Self { root, parent, nodes })
            }
            [] => Err(Error::Data("taxonomy has no root".into())),
            many => Err(Error::Data(format!(
                "taxonomy has {} roots ({}); expected exactly one",
                many.len(),
                many.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// `parent<TAB>child` per line.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (p, c) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected parent<TAB>child".into(),
            })?;
            edges.push((p.trim().to_string(), c.trim().to_string()));
        }
        Self::from_edges(edges)
    }

    pub fn to_text(&self) -> String {
        self.parent.iter().map(|(c, p)| format!("{p}\t{c}\n")).collect()
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    fn require(&self, node: &str) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::Data(format!("{node:?} is not in the taxonomy")))
        }
    }

    /// Path from `node` up to the root, inclusive.
    pub fn ancestors<'s>(&'s self, node: &'s str) -> Result<Vec<&'s str>> {
        self.require(node)?;
        let mut out = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent.get(cur) {
            out.push(p);
            cur = p;
        }
        Ok(out)
    }

    pub fn depth(&self, node: &str) -> Result<usize> {
        Ok(self.ancestors(node)?.len())
    }

    /// Deepest common ancestor (a node is its own ancestor).
    pub fn lowest_common_ancestor<'s>(&'s self, a: &'s str, b: &'s str) -> Result<&'s str> {
        let up_a = self.ancestors(a)?;
        let up_b: HashSet<&str> = self.ancestors(b)?.into_iter().collect();
        Ok(up_a
            .into_iter()
            .find(|n| up_b.contains(n))
            .expect("a tree's nodes share the root"))
    }
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    Taxonomy::parse(&std::fs::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(t: &str) -> Result<Taxonomy> {
        Taxonomy::parse(t, Path::new("mem"))
    }

    #[test]
    fn small_tree_depths() {
        let t = parse("root\ta\nroot\tb\na\ta1\n").unwrap();
        assert_eq!(t.root(), "root");
        assert_eq!(t.depth("root").unwrap(), 1);
        assert_eq!(t.depth("a").unwrap(), 2);
        assert_eq!(t.depth("a1").unwrap(), 3);
        assert_eq!(t.lowest_common_ancestor("a1", "b").unwrap(), "root");
        assert_eq!(t.lowest_common_ancestor("a1", "a").unwrap(), "a");
    }

    #[test]
    fn cycle_is_named() {
        let err = parse("root\tx\na\tb\nb\tc\nc\ta\n").unwrap_err().to_string();
        assert!(err.contains("cycle involving"), "{err}");
    }

    #[test]
    fn two_parents_rejected() {
        let err = parse("root\ta\nroot\tb\na\tx\nb\tx\n").unwrap_err().to_string();
        assert!(err.contains("two parents"), "{err}");
    }

    #[test]
    fn multiple_roots_rejected() {
        assert!(parse("r1\ta\nr2\tb\n").unwrap_err().to_string().contains("2 roots"));
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(parse("root a\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn unknown_node() {
        let t = parse("root\ta\n").unwrap();
        assert!(t.depth("zzz").is_err());
    }
}
