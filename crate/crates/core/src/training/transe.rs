//! TransE pretraining of entity embeddings: `E(s) + E(r) ≈ E(o)` under a
//! margin ranking loss with squared Euclidean distance.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kb::{EntityId, Fact, KnowledgeBase, RelationId};
use crate::neural::{axpy, Module, Param, Real, Tensor};

#[derive(Clone, Debug)]
pub struct TransE<T> {
    pub entities: Param<T>,
    pub relations: Param<T>,
}

fn normalize_rows<T: Real>(t: &mut Tensor<T>) {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if n > T::zero() {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

impl<T: Real> TransE<T> {
    pub fn new(num_entities: usize, num_relations: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let range = 6.0 / (dim as f64).sqrt();
        let mut relations = Param::uniform("transe.relations", &[num_relations, dim], range, rng);
        normalize_rows(&mut relations.value);
        Self {
            entities: Param::uniform("transe.entities", &[num_entities, dim], range, rng),
            relations,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.value.cols()
    }

    fn residual(&self, s: EntityId, r: RelationId, o: EntityId) -> Vec<T> {
        let mut d = self.entities.value.row(s.index()).to_vec();
        axpy(T::one(), self.relations.value.row(r.index()), &mut d);
        axpy(-T::one(), self.entities.value.row(o.index()), &mut d);
        d
    }

    /// `‖E(s) + E(r) − E(o)‖²`.
    pub fn distance(&self, s: EntityId, r: RelationId, o: EntityId) -> T {
        self.residual(s, r, o).iter().map(|&v| v * v).sum()
    }

    fn add_grad(&mut self, s: EntityId, r: RelationId, o: EntityId, scale: T) {
        let d = self.residual(s, r, o);
        let two = scale + scale;
        axpy(two, &d, self.entities.grad.row_mut(s.index()));
        axpy(two, &d, self.relations.grad.row_mut(r.index()));
        axpy(-two, &d, self.entities.grad.row_mut(o.index()));
    }

    /// `max(0, margin + d(fact) − d(corrupt))`; accumulates gradients.
    pub fn margin_loss(&mut self, fact: Fact, corrupt: (EntityId, EntityId), margin: T) -> T {
        let pos = self.distance(fact.subject, fact.relation, fact.object);
        let neg = self.distance(corrupt.0, fact.relation, corrupt.1);
        let m = margin + pos - neg;
        if m <= T::zero() {
            return T::zero();
        }
        self.add_grad(fact.subject, fact.relation, fact.object, T::one());
        self.add_grad(corrupt.0, fact.relation, corrupt.1, -T::one());
        m
    }

    pub fn normalize_entities(&mut self) {
        normalize_rows(&mut self.entities.value);
    }

    /// 1-based rank of each fact's object among all entities by distance,
    /// averaged over facts.
    pub fn mean_rank(&self, kb: &KnowledgeBase) -> f64 {
        let facts = kb.facts();
        let total: usize = facts
            .iter()
            .map(|f| {
                let d = self.distance(f.subject, f.relation, f.object);
                1 + kb
                    .entities()
                    .filter(|&e| self.distance(f.subject, f.relation, e) < d)
                    .count()
            })
            .sum();
        total as f64 / facts.len().max(1) as f64
    }
}

impl<T: Real> Module<T> for TransE<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.entities);
        f(&self.relations);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.entities);
        f(&mut self.relations);
    }
}

/// Replaces the subject or the object (fair coin) with a different entity.
pub fn corrupt(fact: Fact, num_entities: usize, rng: &mut impl Rng) -> (EntityId, EntityId) {
    let replace = |keep: EntityId, rng: &mut dyn rand::RngCore| {
        let i = rng.gen_range(0..num_entities as u32 - 1);
        EntityId(if i < keep.0 { i } else { i + 1 })
    };
    if rng.gen_bool(0.5) {
        (replace(fact.subject, rng), fact.object)
    } else {
        (fact.subject, replace(fact.object, rng))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TransEOptions {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
}

/// Per-fact SGD; entity rows are renormalized at the start of every epoch.
pub fn transe_pretrain(kb: &KnowledgeBase, opts: &TransEOptions, rng: &mut impl Rng) -> Result<TransE<f32>> {
    if kb.facts().is_empty() {
        return Err(Error::Empty("knowledge base facts"));
    }
    if kb.num_entities() < 2 {
        return Err(Error::Invalid("TransE needs at least two entities".into()));
    }
    let mut model = TransE::new(kb.num_entities(), kb.num_relations(), opts.dim, rng);
    let lr = opts.learning_rate as f32;
    let margin = opts.margin as f32;
    let mut facts: Vec<Fact> = kb.facts().to_vec();
    for epoch in 0..opts.epochs {
        model.normalize_entities();
        facts.shuffle(rng);
        let mut total = 0.0f64;
        for &f in &facts {
            let c = corrupt(f, kb.num_entities(), rng);
            let loss = model.margin_loss(f, c, margin);
            total += loss as f64;
            if loss > 0.0 {
                let ents = [f.subject, f.object, c.0, c.1];
                for e in ents {
                    let g = model.entities.grad.row(e.index()).to_vec();
                    axpy(-lr, &g, model.entities.value.row_mut(e.index()));
                    model.entities.grad.row_mut(e.index()).fill(0.0);
                }
                let g = model.relations.grad.row(f.relation.index()).to_vec();
                axpy(-lr, &g, model.relations.value.row_mut(f.relation.index()));
                model.relations.grad.row_mut(f.relation.index()).fill(0.0);
            }
        }
        log::debug!("transe epoch {}: mean loss {:.6}", epoch + 1, total / facts.len() as f64);
    }
    model.normalize_entities();
    Ok(model)
}
