//! Relation taxonomy derived from slash-delimited relation names such as
//! `/business/company/founders`.
//!
//! Level `i` (1-based) holds the `i`-segment prefixes of every relation. The
//! root is implicit. `NA` is its own node at every level and always has id 0.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub const NA: &str = "NA";

/// Splits a relation name into its `depth` level-local names.
///
/// Shorter paths repeat their deepest prefix; for longer paths the last level
/// is the full name, so the deepest entry always identifies the relation.
pub fn parse_relation_chain(name: &str, depth: usize) -> Result<Vec<String>> {
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::EmptyRelation);
    }
    if depth == 0 {
        return Err(Error::Config("hierarchy depth must be at least 1".into()));
    }
    if name == NA {
        return Ok(vec![NA.to_string(); depth]);
    }
    let segments: Vec<&str> = name.split('/').filter(|s| !s.is_empty()).collect();
    if segments.is_empty() {
        return Err(Error::EmptyRelation);
    }
    let prefix = |n: usize| {
        let mut s = String::new();
        for seg in &segments[..n] {
            s.push('/');
            s.push_str(seg);
        }
        s
    };
    Ok((0..depth)
        .map(|level| {
            if level + 1 == depth {
                prefix(segments.len())
            } else {
                prefix((level + 1).min(segments.len()))
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationHierarchy {
    depth: usize,
    relations: Vec<String>,
    levels: Vec<Vec<String>>,
    chains: Vec<Vec<usize>>,
}

impl RelationHierarchy {
    /// Builds the taxonomy over the given relation names. Duplicates are
    /// ignored; `NA` is always present with id 0 and the rest are sorted.
    pub fn new<'a, I>(names: I, depth: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut set = BTreeSet::new();
        for n in names {
            let n = n.trim();
            if n.is_empty() {
                return Err(Error::EmptyRelation);
            }
            if n != NA {
                set.insert(n.to_string());
            }
        }
        let mut relations = vec![NA.to_string()];
        relations.extend(set);

        let raw: Vec<Vec<String>> = relations
            .iter()
            .map(|r| parse_relation_chain(r, depth))
            .collect::<Result<_>>()?;
        let mut levels = Vec::with_capacity(depth);
        for level in 0..depth {
            let names: BTreeSet<&str> = raw
                .iter()
                .map(|c| c[level].as_str())
                .filter(|n| *n != NA)
                .collect();
            let mut v = vec![NA.to_string()];
            v.extend(names.into_iter().map(String::from));
            levels.push(v);
        }
        let chains = raw
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&levels)
                    .map(|(name, lv)| lv.binary_search_by(|x| cmp_na_first(x, name)).unwrap())
                    .collect()
            })
            .collect();
        Ok(RelationHierarchy {
            depth,
            relations,
            levels,
            chains,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name.trim())
    }

    /// Number of nodes at 0-based `level`, `NA` included.
    pub fn level_size(&self, level: usize) -> usize {
        self.levels[level].len()
    }

    pub fn level_names(&self, level: usize) -> &[String] {
        &self.levels[level]
    }

    /// Level-local ids `[r¹, …, rᵏ]` of a base relation.
    pub fn chain(&self, relation: usize) -> &[usize] {
        &self.chains[relation]
    }

    pub fn na_id(&self) -> usize {
        0
    }

    pub fn is_na(&self, relation: usize) -> bool {
        relation == 0
    }
}

fn cmp_na_first(a: &str, b: &str) -> core::cmp::Ordering {
    match (a == NA, b == NA) {
        (true, true) => core::cmp::Ordering::Equal,
        (true, false) => core::cmp::Ordering::Less,
        (false, true) => core::cmp::Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn founders_chain() {
        let c = parse_relation_chain("/business/company/founders", 3).unwrap();
        assert_eq!(c, ["/business", "/business/company", "/business/company/founders"]);
    }

    #[test]
    fn na_and_padding() {
        assert_eq!(parse_relation_chain("NA", 3).unwrap(), ["NA", "NA", "NA"]);
        assert_eq!(
            parse_relation_chain("/people/person", 3).unwrap(),
            ["/people", "/people/person", "/people/person"]
        );
        assert_eq!(parse_relation_chain("", 3), Err(Error::EmptyRelation));
        assert_eq!(parse_relation_chain("  ", 3), Err(Error::EmptyRelation));
    }

    #[test]
    fn deep_path_keeps_full_name_last() {
        let c = parse_relation_chain("/a/b/c/d", 3).unwrap();
        assert_eq!(c, ["/a", "/a/b", "/a/b/c/d"]);
    }

    #[test]
    fn hierarchy_levels() {
        let h = RelationHierarchy::new(
            [
                "/business/company/founders",
                "/business/person/company",
                "NA",
                "/people/person/nationality",
                "/business/company/founders",
            ],
            3,
        )
        .unwrap();
        assert_eq!(h.num_relations(), 4);
        assert_eq!(h.relation_name(0), NA);
        assert_eq!(h.level_names(0), ["NA", "/business", "/people"]);
        assert_eq!(h.level_size(1), 4);
        assert_eq!(h.level_size(2), 4);
        let founders = h.relation_id("/business/company/founders").unwrap();
        assert_eq!(h.chain(founders), [1, 1, 1]);
        assert_eq!(h.chain(0), [0, 0, 0]);
        assert!(h.level_size(0) <= h.level_size(1) && h.level_size(1) <= h.level_size(2));
    }
}
