//! Finite-difference checks of every hand-written backward pass, run in
//! `f64` on small shapes. Used by the `gradcheck` subcommand and the tests.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{BiGruEncoder, EmbedAvgEncoder, EncoderDims, QuestionEncoder};
use crate::error::Result;
use crate::kb::{EntityId, Fact, KbBuilder, KnowledgeBase, RelationId};
use crate::labeler::{Label, Labeler};
use crate::neural::{finite_diff_check, BiGruStack, GradCheckReport, GruCell, Module, Param, Tensor};
use crate::relation::RelationScorer;
use crate::subject::{type_matrix, EntityRepr, EntityReprMode, SubjectScorer};
use crate::training::TransE;

pub const EPSILON: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

const RANGE: f64 = 0.5;
const IDS: &[usize] = &[1, 4, 2, 5, 3];

/// Result of one component's check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < TOLERANCE && self.report.max_relative_error.is_finite()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed random weights turning a tensor into a scalar loss.
fn probe(len: usize, seed: u64) -> Vec<f64> {
    Tensor::<f64>::uniform(&[len], 1.0, &mut rng(seed)).data().to_vec()
}

/// A layer plus a trainable input so input gradients are checked too.
struct WithInput<L> {
    layer: L,
    input: Param<f64>,
}

impl<L: Module<f64>> Module<f64> for WithInput<L> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<f64>)) {
        f(&self.input);
        self.layer.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
        f(&mut self.input);
        self.layer.visit_params_mut(f);
    }
}

fn gru_cell(seed: u64) -> Result<GradCheckReport> {
    let (t, d_in, d_h) = (4, 3, 5);
    let mut r = rng(seed);
    let mut m = WithInput {
        layer: GruCell::new("gru", d_in, d_h, RANGE, &mut r),
        input: Param::uniform("x", &[t, d_in], 1.0, &mut r),
    };
    let c = probe(t * d_h, seed ^ 1);
    finite_diff_check(&mut m, EPSILON, |m| {
        let mut total = 0.0;
        for reverse in [false, true] {
            let cache = m.layer.forward(m.input.value.clone(), reverse)?;
            total += cache.hidden().data().iter().zip(&c).map(|(h, w)| h * w).sum::<f64>();
            let d_h_t = Tensor::from_vec(&[t, d_h], c.clone())?;
            let mut d_x = Tensor::zeros(&[t, d_in]);
            m.layer.backward(&cache, &d_h_t, &mut d_x);
            m.input.grad.add_assign(&d_x);
        }
        Ok(total)
    })
}

fn bigru_stack(seed: u64, dropout: f64) -> Result<GradCheckReport> {
    let (t, d_in, d_h) = (4, 3, 3);
    let mut r = rng(seed);
    let mut m = WithInput {
        layer: BiGruStack::new("bigru", d_in, d_h, 2, dropout, RANGE, &mut r),
        input: Param::uniform("x", &[t, d_in], 1.0, &mut r),
    };
    let c_seq = probe(t * 2 * d_h, seed ^ 2);
    let c_fin = probe(2 * d_h, seed ^ 3);
    finite_diff_check(&mut m, EPSILON, |m| {
        // Same mask on every evaluation.
        let mut mask = rng(seed ^ 4);
        let rng_arg: Option<&mut dyn RngCore> = if dropout > 0.0 { Some(&mut mask) } else { None };
        let cache = m.layer.forward(m.input.value.clone(), rng_arg)?;
        let loss = cache.hidden.data().iter().zip(&c_seq).map(|(h, w)| h * w).sum::<f64>()
            + cache.final_state.iter().zip(&c_fin).map(|(h, w)| h * w).sum::<f64>();
        let d_seq = Tensor::from_vec(&[t, 2 * d_h], c_seq.clone())?;
        let d_x = m.layer.backward(&cache, Some(&d_seq), Some(&c_fin));
        m.input.grad.add_assign(&d_x);
        Ok(loss)
    })
}

fn dims(output: usize) -> EncoderDims {
    EncoderDims {
        vocab_rows: 6,
        embedding: 4,
        hidden: 3,
        layers: 2,
        output,
    }
}

fn bigru_encoder(seed: u64, squash: bool) -> Result<GradCheckReport> {
    let mut m = BiGruEncoder::<f64>::new("enc", dims(4), 0.0, squash, RANGE, &mut rng(seed));
    let c = probe(4, seed ^ 5);
    finite_diff_check(&mut m, EPSILON, |m| {
        let cache = m.forward(IDS, None)?;
        let loss = cache.output.iter().zip(&c).map(|(a, b)| a * b).sum();
        m.backward(&cache, &c);
        Ok(loss)
    })
}

fn embed_avg(seed: u64) -> Result<GradCheckReport> {
    let mut m = EmbedAvgEncoder::<f64>::new("avg", 6, 4, RANGE, &mut rng(seed));
    let c = probe(4, seed ^ 6);
    finite_diff_check(&mut m, EPSILON, |m| {
        let out = m.encode(&[1, 2, 2, 5])?;
        m.backward(&[1, 2, 2, 5], &c);
        Ok(out.iter().zip(&c).map(|(a, b)| a * b).sum())
    })
}

fn tiny_kb() -> KnowledgeBase {
    let mut b = KbBuilder::new();
    b.add_fact("a", "r0", "b")
        .add_fact("a", "r1", "c")
        .add_fact("b", "r2", "c")
        .add_fact("c", "r0", "d")
        .add_fact("d", "r1", "a");
    for (e, t) in [("a", "t0"), ("a", "t1"), ("b", "t1"), ("c", "t2"), ("d", "t0")] {
        b.add_type(e, t);
    }
    b.build()
}

fn relation_hinge(seed: u64, avg: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let enc = if avg {
        QuestionEncoder::Avg(EmbedAvgEncoder::new("rel.enc", 6, 4, RANGE, &mut r))
    } else {
        QuestionEncoder::BiGru(BiGruEncoder::new("rel.enc", dims(4), 0.0, false, RANGE, &mut r))
    };
    let mut m = RelationScorer::new(enc, 3, RANGE, &mut r);
    finite_diff_check(&mut m, EPSILON, |m| {
        // A wide margin keeps every negative active, away from the kink.
        m.hinge_loss(IDS, RelationId(0), &[RelationId(1), RelationId(2)], 5.0, None)
    })
}

fn subject_hinge(seed: u64) -> Result<GradCheckReport> {
    let kb = tiny_kb();
    let mut r = rng(seed);
    let enc = QuestionEncoder::BiGru(BiGruEncoder::new("subj.enc", dims(4), 0.0, false, RANGE, &mut r));
    let table = Param::uniform("subject.entities", &[kb.num_entities(), 4], RANGE, &mut r);
    let repr = EntityRepr::Table { table, frozen: false };
    let mut m = SubjectScorer::new(enc, repr, EntityReprMode::Random, 1.0)?;
    let negs = [EntityId(1), EntityId(2), EntityId(3)];
    finite_diff_check(&mut m, EPSILON, |m| m.hinge_loss(&kb, IDS, EntityId(0), RelationId(0), &negs, 5.0, None))
}

fn type_bce(seed: u64) -> Result<GradCheckReport> {
    let kb = tiny_kb();
    let k = kb.num_types();
    let mut r = rng(seed);
    let enc = QuestionEncoder::BiGru(BiGruEncoder::new("subj.enc", dims(k), 0.0, true, RANGE, &mut r));
    let mut m = SubjectScorer::new(enc, EntityRepr::Types(type_matrix(&kb)), EntityReprMode::TypeVector, 1.0)?;
    finite_diff_check(&mut m, EPSILON, |m| m.type_bce_loss(IDS, EntityId(0), None))
}

fn crf_nll(seed: u64) -> Result<GradCheckReport> {
    let mut m = Labeler::<f64>::new(6, 4, 3, 2, 0.0, RANGE, &mut rng(seed));
    let gold = [Label::O, Label::Sub, Label::Sub, Label::O, Label::O];
    finite_diff_check(&mut m, EPSILON, |m| m.nll(IDS, &gold, None))
}

fn transe(seed: u64) -> Result<GradCheckReport> {
    let kb = tiny_kb();
    let mut m = TransE::<f64>::new(kb.num_entities(), kb.num_relations(), 4, &mut rng(seed));
    let facts: Vec<Fact> = kb.facts().to_vec();
    finite_diff_check(&mut m, EPSILON, |m| {
        let mut loss = 0.0;
        for (i, f) in facts.iter().enumerate() {
            let other = EntityId(((f.object.index() + 1 + i) % 4) as u32);
            let bad = if other == f.object { EntityId((other.0 + 1) % 4) } else { other };
            loss += m.margin_loss(*f, (f.subject, bad), 50.0);
        }
        Ok(loss)
    })
}

/// Runs every check with weights drawn from `seed`.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let checks: Vec<(&'static str, Result<GradCheckReport>)> = vec![
        ("gru_cell", gru_cell(seed)),
        ("bigru_stack", bigru_stack(seed, 0.0)),
        ("bigru_stack_dropout", bigru_stack(seed, 0.5)),
        ("bigru_encoder", bigru_encoder(seed, false)),
        ("bigru_encoder_sigmoid", bigru_encoder(seed, true)),
        ("embed_avg_encoder", embed_avg(seed)),
        ("relation_hinge", relation_hinge(seed, false)),
        ("relation_hinge_avg", relation_hinge(seed, true)),
        ("subject_hinge", subject_hinge(seed)),
        ("type_bce", type_bce(seed)),
        ("crf_nll", crf_nll(seed)),
        ("transe_margin", transe(seed)),
    ];
    checks
        .into_iter()
        .map(|(name, r)| r.map(|report| CheckResult { name, report }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_components_pass() {
        for seed in [1, 2] {
            for c in run_all(seed).unwrap() {
                assert!(c.passed(), "{} seed {seed}: {:?}", c.name, c.report);
                assert!(c.report.checked > 0);
            }
        }
    }
}
