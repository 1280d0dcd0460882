//! Candidate generation: focused pruning from the predicted subject mention,
//! the all-n-gram baseline, and the unpruned space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, MatchMode, RelationId};
use crate::labeler::{extract_mention, Label};

/// Candidate `(subject, relation)` pairs with the mention that produced each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidateSet {
    pairs: BTreeMap<(EntityId, RelationId), String>,
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `(entity, r)` for every relation the entity has.
    pub fn add_entity(&mut self, kb: &KnowledgeBase, entity: EntityId, mention: &str) {
        for &r in kb.adjacency(entity) {
            self.pairs.entry((entity, r)).or_insert_with(|| mention.to_owned());
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, s: EntityId, r: RelationId) -> bool {
        self.pairs.contains_key(&(s, r))
    }

    /// Pairs in `(subject, relation)` order.
    pub fn pairs(&self) -> impl Iterator<Item = (EntityId, RelationId)> + '_ {
        self.pairs.keys().copied()
    }

    pub fn mention(&self, s: EntityId, r: RelationId) -> Option<&str> {
        self.pairs.get(&(s, r)).map(String::as_str)
    }

    pub fn subjects(&self) -> BTreeSet<EntityId> {
        self.pairs.keys().map(|p| p.0).collect()
    }

    pub fn relations(&self) -> BTreeSet<RelationId> {
        self.pairs.keys().map(|p| p.1).collect()
    }

    /// Subjects paired with `r`, ascending.
    pub fn subjects_for(&self, r: RelationId) -> Vec<EntityId> {
        self.pairs.keys().filter(|p| p.1 == r).map(|p| p.0).collect()
    }

    pub fn is_subset_of(&self, other: &CandidateSet) -> bool {
        self.pairs.keys().all(|k| other.pairs.contains_key(k))
    }
}

/// Which candidate generator to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pruning {
    Focused,
    NGram,
    /// Every valid pair; only for small knowledge bases.
    Full,
}

impl fmt::Display for Pruning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pruning::Focused => "focused",
            Pruning::NGram => "ngram",
            Pruning::Full => "full",
        })
    }
}

impl FromStr for Pruning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focused" => Ok(Pruning::Focused),
            "ngram" => Ok(Pruning::NGram),
            "full" => Ok(Pruning::Full),
            other => Err(Error::Config(format!("unknown pruning `{other}`"))),
        }
    }
}

/// How the focused candidate set was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkKind {
    Strict,
    Approximate,
    /// No usable mention; n-gram candidates were used instead.
    NGramFallback,
}

#[derive(Clone, Debug)]
pub struct Focused {
    pub candidates: CandidateSet,
    pub mention: Option<String>,
    pub link: LinkKind,
}

/// Strict alias matches of every contiguous n-gram.
pub fn ngram_prune(kb: &KnowledgeBase, tokens: &[String]) -> CandidateSet {
    let mut out = CandidateSet::new();
    for i in 0..tokens.len() {
        for j in i + 1..=tokens.len() {
            let gram = tokens[i..j].join(" ");
            for e in kb.match_alias(&gram, MatchMode::Strict) {
                out.add_entity(kb, e, &gram);
            }
        }
    }
    out
}

/// Candidates from the mention implied by `labels`. Falls back to
/// [`ngram_prune`] when no mention is labeled or the mention links to nothing.
pub fn focused_prune(kb: &KnowledgeBase, tokens: &[String], labels: &[Label]) -> Result<Focused> {
    if labels.len() != tokens.len() {
        return Err(Error::dim("labels", tokens.len(), labels.len()));
    }
    if let Some(span) = extract_mention(labels) {
        let mention = tokens[span].join(" ");
        let mut link = LinkKind::Strict;
        let mut entities = kb.match_alias(&mention, MatchMode::Strict);
        if entities.is_empty() {
            link = LinkKind::Approximate;
            entities = kb.match_alias(&mention, MatchMode::Approximate);
        }
        let mut candidates = CandidateSet::new();
        for e in entities {
            candidates.add_entity(kb, e, &mention);
        }
        if !candidates.is_empty() {
            return Ok(Focused {
                candidates,
                mention: Some(mention),
                link,
            });
        }
    }
    Ok(Focused {
        candidates: ngram_prune(kb, tokens),
        mention: None,
        link: LinkKind::NGramFallback,
    })
}

/// Every `(s, r)` with `s → r`.
pub fn full_candidates(kb: &KnowledgeBase) -> CandidateSet {
    let mut out = CandidateSet::new();
    for e in kb.entities() {
        out.add_entity(kb, e, "");
    }
    out
}

pub fn recall_at(candidates: &CandidateSet, gold: (EntityId, RelationId)) -> bool {
    candidates.contains(gold.0, gold.1)
}
