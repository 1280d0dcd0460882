//! Relation scoring `v(r, q) = f(q)ᵀ E(r)`, candidate-set softmax, hinge loss
//! and negative relation sampling.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::encoder::QuestionEncoder;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, RelationId};
use crate::neural::{axpy, dot, log_softmax, Module, Param, Real};

/// `Σ_j max(0, γ − gold + neg_j)`.
pub fn hinge<T: Real>(gamma: T, gold: T, negatives: &[T]) -> T {
    negatives
        .iter()
        .map(|&n| (gamma - gold + n).max(T::zero()))
        .fold(T::zero(), |a, b| a + b)
}

#[derive(Clone, Debug)]
pub struct RelationScorer<T> {
    pub encoder: QuestionEncoder<T>,
    pub embedding: Param<T>,
}

impl<T: Real> RelationScorer<T> {
    pub fn new(encoder: QuestionEncoder<T>, num_relations: usize, range: f64, rng: &mut impl Rng) -> Self {
        let d = encoder.output_dim();
        Self {
            encoder,
            embedding: Param::uniform("relation.embedding", &[num_relations, d], range, rng),
        }
    }

    pub fn num_relations(&self) -> usize {
        self.embedding.value.rows()
    }

    fn check(&self, r: RelationId) -> Result<()> {
        if r.index() >= self.num_relations() {
            return Err(Error::Lookup {
                kind: "relation id",
                name: r.0.to_string(),
            });
        }
        Ok(())
    }

    /// Score of `r` against an already-encoded question.
    pub fn score_encoded(&self, f_q: &[T], r: RelationId) -> Result<T> {
        self.check(r)?;
        Ok(dot(f_q, self.embedding.value.row(r.index())))
    }

    pub fn score(&self, ids: &[usize], r: RelationId) -> Result<T> {
        let f_q = self.encoder.encode(ids)?;
        self.score_encoded(&f_q, r)
    }

    /// Log-softmax of scores over `candidates`, in candidate order.
    pub fn log_probs_encoded(&self, f_q: &[T], candidates: &[RelationId]) -> Result<Vec<T>> {
        if candidates.is_empty() {
            return Err(Error::Empty("relation candidate set"));
        }
        let scores = candidates
            .iter()
            .map(|&r| self.score_encoded(f_q, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_softmax(&scores))
    }

    pub fn log_probs(&self, ids: &[usize], candidates: &[RelationId]) -> Result<Vec<T>> {
        let f_q = self.encoder.encode(ids)?;
        self.log_probs_encoded(&f_q, candidates)
    }

    /// Hinge loss against sampled negatives; accumulates gradients.
    pub fn hinge_loss(
        &mut self,
        ids: &[usize],
        gold: RelationId,
        negatives: &[RelationId],
        gamma: T,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<T> {
        self.check(gold)?;
        for &n in negatives {
            self.check(n)?;
            if n == gold {
                return Err(Error::Invalid("gold relation among negatives".into()));
            }
        }
        let cache = self.encoder.forward(ids, rng)?;
        let f_q = cache.output().to_vec();
        let e = &self.embedding.value;
        let v_gold = dot(&f_q, e.row(gold.index()));
        let mut loss = T::zero();
        let mut d_f = vec![T::zero(); f_q.len()];
        let mut active = Vec::new();
        for &n in negatives {
            let m = gamma - v_gold + dot(&f_q, e.row(n.index()));
            if m > T::zero() {
                loss += m;
                axpy(T::one(), e.row(n.index()), &mut d_f);
                axpy(-T::one(), e.row(gold.index()), &mut d_f);
                active.push(n);
            }
        }
        if active.is_empty() {
            return Ok(loss);
        }
        for &n in &active {
            axpy(T::one(), &f_q, self.embedding.grad.row_mut(n.index()));
        }
        let k = T::lit(active.len() as f64);
        axpy(-k, &f_q, self.embedding.grad.row_mut(gold.index()));
        self.encoder.backward(&cache, &d_f);
        Ok(loss)
    }
}

impl<T: Real> Module<T> for RelationScorer<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.encoder.visit_params(f);
        f(&self.embedding);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.encoder.visit_params_mut(f);
        f(&mut self.embedding);
    }
}

/// Which relations may serve as negatives for a training question.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NegativePool {
    /// Relations the gold subject has no fact for.
    #[default]
    Unconnected,
    /// Every relation except the gold one.
    AllButGold,
}

impl fmt::Display for NegativePool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativePool::Unconnected => "unconnected",
            NegativePool::AllButGold => "all",
        })
    }
}

impl FromStr for NegativePool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconnected" => Ok(NegativePool::Unconnected),
            "all" => Ok(NegativePool::AllButGold),
            other => Err(Error::Config(format!("unknown negative pool `{other}`"))),
        }
    }
}

/// Up to `count` distinct negatives for `(subject, gold)` drawn from `pool`.
/// Eligible hub relations are always included; the rest are drawn uniformly
/// without replacement.
pub fn sample_negative_relations(
    kb: &KnowledgeBase,
    subject: crate::kb::EntityId,
    gold: RelationId,
    pool: NegativePool,
    count: usize,
    hubs: &[RelationId],
    rng: &mut impl Rng,
) -> Vec<RelationId> {
    let adjacent = kb.adjacency(subject);
    let eligible = |r: &RelationId| match pool {
        NegativePool::Unconnected => adjacent.binary_search(r).is_err(),
        NegativePool::AllButGold => *r != gold,
    };
    let mut out: Vec<RelationId> = Vec::new();
    for h in hubs.iter().filter(|h| eligible(h)) {
        if out.len() < count && !out.contains(h) {
            out.push(*h);
        }
    }
    let candidates: Vec<RelationId> = kb
        .relations()
        .filter(|r| eligible(r) && !out.contains(r))
        .collect();
    let want = count - out.len();
    if candidates.len() < want {
        log::debug!(
            "only {} negative relations eligible for {}, wanted {count}",
            candidates.len() + out.len(),
            kb.entity_name(subject)
        );
    }
    let take = want.min(candidates.len());
    out.extend(index::sample(rng, candidates.len(), take).into_iter().map(|i| candidates[i]));
    out
}
