//! Subject scoring `u(s, r, q) = g(q)ᵀ E(s) + α h(r, s)` under three entity
//! representations, with the hinge and type-wise cross-entropy objectives.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::encoder::QuestionEncoder;
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId};
use crate::neural::{axpy, dot, Module, Param, Real, Tensor};
use crate::relation::hinge;

/// Probability clamp applied before the logs of the type-wise loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityReprMode {
    Random,
    Pretrained,
    TypeVector,
}

impl fmt::Display for EntityReprMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityReprMode::Random => "random",
            EntityReprMode::Pretrained => "pretrained",
            EntityReprMode::TypeVector => "typevec",
        })
    }
}

impl FromStr for EntityReprMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "pretrained" => Ok(Self::Pretrained),
            "typevec" => Ok(Self::TypeVector),
            other => Err(Error::Config(format!("unknown entity representation `{other}`"))),
        }
    }
}

/// Binary `(|ℰ|, K)` matrix of type memberships.
pub fn type_matrix<T: Real>(kb: &KnowledgeBase) -> Tensor<T> {
    let k = kb.num_types();
    let mut m = Tensor::zeros(&[kb.num_entities(), k]);
    for e in kb.entities() {
        for t in kb.types_of(e) {
            m.row_mut(e.index())[t.index()] = T::one();
        }
    }
    m
}

#[derive(Clone, Debug)]
pub enum EntityRepr<T> {
    /// Table, randomly or TransE initialized. A frozen table receives no
    /// gradient.
    Table { table: Param<T>, frozen: bool },
    /// Fixed type vectors.
    Types(Tensor<T>),
}

impl<T: Real> EntityRepr<T> {
    pub fn dim(&self) -> usize {
        match self {
            EntityRepr::Table { table, .. } => table.value.cols(),
            EntityRepr::Types(m) => m.cols(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            EntityRepr::Table { table, .. } => table.value.rows(),
            EntityRepr::Types(m) => m.rows(),
        }
    }

    pub fn row(&self, s: EntityId) -> &[T] {
        match self {
            EntityRepr::Table { table, .. } => table.value.row(s.index()),
            EntityRepr::Types(m) => m.row(s.index()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubjectScorer<T> {
    pub encoder: QuestionEncoder<T>,
    pub repr: EntityRepr<T>,
    pub mode: EntityReprMode,
    pub alpha: T,
}

impl<T: Real> SubjectScorer<T> {
    pub fn new(encoder: QuestionEncoder<T>, repr: EntityRepr<T>, mode: EntityReprMode, alpha: T) -> Result<Self> {
        if encoder.output_dim() != repr.dim() {
            return Err(Error::dim("subject encoder output", repr.dim(), encoder.output_dim()));
        }
        if matches!(repr, EntityRepr::Types(_)) != (mode == EntityReprMode::TypeVector) {
            return Err(Error::Invalid(format!("representation does not match mode {mode}")));
        }
        Ok(Self {
            encoder,
            repr,
            mode,
            alpha,
        })
    }

    fn check(&self, s: EntityId) -> Result<()> {
        if s.index() >= self.repr.rows() {
            return Err(Error::Lookup {
                kind: "entity id",
                name: s.0.to_string(),
            });
        }
        Ok(())
    }

    /// `g(q)ᵀ E(s)`.
    pub fn context_score(&self, g_q: &[T], s: EntityId) -> Result<T> {
        self.check(s)?;
        Ok(dot(g_q, self.repr.row(s)))
    }

    /// Full score against an encoded question.
    pub fn score_encoded(&self, kb: &KnowledgeBase, g_q: &[T], s: EntityId, r: RelationId) -> Result<T> {
        let c = self.context_score(g_q, s)?;
        let h = if kb.has_relation(s, r)? { T::one() } else { T::zero() };
        Ok(c + self.alpha * h)
    }

    pub fn score(&self, kb: &KnowledgeBase, ids: &[usize], s: EntityId, r: RelationId) -> Result<T> {
        let g_q = self.encoder.encode(ids)?;
        self.score_encoded(kb, &g_q, s, r)
    }

    /// Hinge loss against sampled negative subjects; accumulates gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn hinge_loss(
        &mut self,
        kb: &KnowledgeBase,
        ids: &[usize],
        gold: EntityId,
        r: RelationId,
        negatives: &[EntityId],
        gamma: T,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<T> {
        if self.mode == EntityReprMode::TypeVector {
            return Err(Error::Invalid("hinge loss is not used with type vectors".into()));
        }
        self.check(gold)?;
        for &n in negatives {
            self.check(n)?;
            if n == gold {
                return Err(Error::Invalid("gold subject among negatives".into()));
            }
        }
        let cache = self.encoder.forward(ids, rng)?;
        let g_q = cache.output().to_vec();
        let u_gold = self.score_encoded(kb, &g_q, gold, r)?;
        let mut loss = T::zero();
        let mut d_g = vec![T::zero(); g_q.len()];
        let mut active = Vec::new();
        for &n in negatives {
            let m = gamma - u_gold + self.score_encoded(kb, &g_q, n, r)?;
            if m > T::zero() {
                loss += m;
                axpy(T::one(), self.repr.row(n), &mut d_g);
                axpy(-T::one(), self.repr.row(gold), &mut d_g);
                active.push(n);
            }
        }
        if active.is_empty() {
            return Ok(loss);
        }
        if let EntityRepr::Table { table, frozen: false } = &mut self.repr {
            for &n in &active {
                axpy(T::one(), &g_q, table.grad.row_mut(n.index()));
            }
            axpy(-T::lit(active.len() as f64), &g_q, table.grad.row_mut(gold.index()));
        }
        self.encoder.backward(&cache, &d_g);
        Ok(loss)
    }

    /// Type-wise binary cross-entropy of `g(q)` against the gold type vector;
    /// accumulates gradients. Clamped elements contribute no gradient.
    pub fn type_bce_loss(&mut self, ids: &[usize], gold: EntityId, rng: Option<&mut dyn RngCore>) -> Result<T> {
        if self.mode != EntityReprMode::TypeVector {
            return Err(Error::Invalid("type loss requires type vectors".into()));
        }
        self.check(gold)?;
        let cache = self.encoder.forward(ids, rng)?;
        let target = self.repr.row(gold).to_vec();
        let (loss, d_g) = type_bce(cache.output(), &target);
        self.encoder.backward(&cache, &d_g);
        Ok(loss)
    }
}

/// Loss and gradient w.r.t. the probabilities.
pub fn type_bce<T: Real>(probs: &[T], target: &[T]) -> (T, Vec<T>) {
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    for ((&p, &y), g) in probs.iter().zip(target).zip(&mut grad) {
        let c = p.max(lo).min(hi);
        loss -= y * c.ln() + (T::one() - y) * (T::one() - c).ln();
        if c == p {
            *g = (c - y) / (c * (T::one() - c));
        }
    }
    (loss, grad)
}

impl<T: Real> Module<T> for SubjectScorer<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.encoder.visit_params(f);
        if let EntityRepr::Table { table, .. } = &self.repr {
            f(table);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.encoder.visit_params_mut(f);
        if let EntityRepr::Table { table, .. } = &mut self.repr {
            f(table);
        }
    }
}

/// Hinge loss on precomputed scores, exposed for the loss-law checks.
pub fn subject_hinge<T: Real>(gamma: T, gold: T, negatives: &[T]) -> T {
    hinge(gamma, gold, negatives)
}

/// Up to `count` distinct entities other than `gold`, uniform over ℰ.
pub fn sample_negative_entities(
    kb: &KnowledgeBase,
    gold: EntityId,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<EntityId> {
    let n = kb.num_entities();
    if n <= 1 {
        return Vec::new();
    }
    let pool = n - 1;
    if pool < count {
        log::debug!("only {pool} negative entities available, wanted {count}");
    }
    index::sample(rng, pool, count.min(pool))
        .into_iter()
        .map(|i| {
            let i = i as u32;
            EntityId(if i < gold.0 { i } else { i + 1 })
        })
        .collect()
}
