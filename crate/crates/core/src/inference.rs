//! Answering: rank candidate pairs by `log p(r|q) + log p(s|q,r)`, and the
//! batch evaluation behind the `eval` command.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::Combine;
use crate::data::Sample;
use crate::encoder::tokenize;
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId};
use crate::labeler::Label;
use crate::neural::{log_softmax, Real};
use crate::pipeline::Pipeline;
use crate::pruning::{focused_prune, full_candidates, ngram_prune, CandidateSet, LinkKind, Pruning};
use crate::relation::RelationScorer;
use crate::subject::SubjectScorer;
use crate::training::reverse_link_labels;

/// Largest fact count [`exact_infer`] will enumerate.
pub const EXACT_INFER_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub subject: EntityId,
    pub relation: RelationId,
    pub objects: Vec<EntityId>,
    /// `log p(r|q)`, or `v(r,q)` when combining raw scores.
    pub log_prob_relation: f64,
    /// `log p(s|q,r)`, or `u(s,r,q)` when combining raw scores.
    pub log_prob_subject: f64,
    pub combined: f64,
    pub candidate_count: usize,
}

impl Prediction {
    pub fn pair(&self) -> (EntityId, RelationId) {
        (self.subject, self.relation)
    }
}

struct Scored {
    s: EntityId,
    r: RelationId,
    lr: f64,
    ls: f64,
    combined: f64,
}

/// Higher combined score, then higher subject degree, lower subject id,
/// lower relation id.
fn better(kb: &KnowledgeBase, a: &Scored, b: &Scored) -> bool {
    let ord = a
        .combined
        .total_cmp(&b.combined)
        .then_with(|| kb.degree(a.s).cmp(&kb.degree(b.s)))
        .then_with(|| b.s.cmp(&a.s))
        .then_with(|| b.r.cmp(&a.r));
    ord == Ordering::Greater
}

/// Scores `groups` of `(relation, subjects)` and returns the best pair.
fn rank_groups<T: Real>(
    kb: &KnowledgeBase,
    rel: &RelationScorer<T>,
    subj: &SubjectScorer<T>,
    ids: &[usize],
    groups: &[(RelationId, Vec<EntityId>)],
    combine: Combine,
    candidate_count: usize,
) -> Result<Option<Prediction>> {
    if groups.is_empty() {
        return Ok(None);
    }
    let f_q = rel.encoder.encode(ids)?;
    let g_q = subj.encoder.encode(ids)?;
    let relations: Vec<RelationId> = groups.iter().map(|g| g.0).collect();
    let v: Vec<T> = relations
        .iter()
        .map(|&r| rel.score_encoded(&f_q, r))
        .collect::<Result<_>>()?;
    let lp_r = log_softmax(&v);
    let mut best: Option<Scored> = None;
    for (gi, (r, subjects)) in groups.iter().enumerate() {
        let u: Vec<T> = subjects
            .iter()
            .map(|&s| subj.score_encoded(kb, &g_q, s, *r))
            .collect::<Result<_>>()?;
        let lp_s = log_softmax(&u);
        for (si, &s) in subjects.iter().enumerate() {
            let (lr, ls) = match combine {
                Combine::Softmax => (lp_r[gi], lp_s[si]),
                Combine::Raw => (v[gi], u[si]),
            };
            let (lr, ls) = (lr.as_f64(), ls.as_f64());
            let cand = Scored {
                s,
                r: *r,
                lr,
                ls,
                combined: lr + ls,
            };
            if best.as_ref().is_none_or(|b| better(kb, &cand, b)) {
                best = Some(cand);
            }
        }
    }
    Ok(best.map(|b| Prediction {
        subject: b.s,
        relation: b.r,
        objects: kb.lookup_objects(b.s, b.r).to_vec(),
        log_prob_relation: b.lr,
        log_prob_subject: b.ls,
        combined: b.combined,
        candidate_count,
    }))
}

/// Best pair within `candidates`; `None` iff the set is empty.
pub fn rank_candidates<T: Real>(
    kb: &KnowledgeBase,
    rel: &RelationScorer<T>,
    subj: &SubjectScorer<T>,
    ids: &[usize],
    candidates: &CandidateSet,
    combine: Combine,
) -> Result<Option<Prediction>> {
    let groups: Vec<(RelationId, Vec<EntityId>)> = candidates
        .relations()
        .into_iter()
        .map(|r| (r, candidates.subjects_for(r)))
        .collect();
    rank_groups(kb, rel, subj, ids, &groups, combine, candidates.len())
}

/// Brute force over every `(s, r)` with `s → r`, enumerated directly from
/// the knowledge base.
pub fn exact_infer<T: Real>(
    kb: &KnowledgeBase,
    rel: &RelationScorer<T>,
    subj: &SubjectScorer<T>,
    ids: &[usize],
    combine: Combine,
) -> Result<Prediction> {
    if kb.facts().len() > EXACT_INFER_LIMIT {
        return Err(Error::Invalid(format!(
            "exact inference limited to {EXACT_INFER_LIMIT} facts, knowledge base has {}",
            kb.facts().len()
        )));
    }
    let mut groups = Vec::new();
    let mut count = 0;
    for r in kb.relations() {
        let mut subjects = Vec::new();
        for s in kb.entities() {
            if kb.has_relation(s, r)? {
                subjects.push(s);
            }
        }
        if !subjects.is_empty() {
            count += subjects.len();
            groups.push((r, subjects));
        }
    }
    rank_groups(kb, rel, subj, ids, &groups, combine, count)?.ok_or(Error::Empty("knowledge base facts"))
}

/// Everything computed while answering one question.
#[derive(Clone, Debug)]
pub struct Answer {
    pub tokens: Vec<String>,
    pub labels: Option<Vec<Label>>,
    pub mention: Option<String>,
    pub link: Option<LinkKind>,
    pub candidates: CandidateSet,
    pub prediction: Option<Prediction>,
}

impl<T: Real> Pipeline<T> {
    /// Candidate set for `tokens` under `pruning`.
    pub fn prune(&self, kb: &KnowledgeBase, tokens: &[String], pruning: Pruning) -> Result<Answer> {
        let mut out = Answer {
            tokens: tokens.to_vec(),
            labels: None,
            mention: None,
            link: None,
            candidates: CandidateSet::new(),
            prediction: None,
        };
        match pruning {
            Pruning::Focused => {
                let (labels, _) = self.labeler.decode(&self.vocab.encode(tokens))?;
                let f = focused_prune(kb, tokens, &labels)?;
                out.labels = Some(labels);
                out.mention = f.mention;
                out.link = Some(f.link);
                out.candidates = f.candidates;
            }
            Pruning::NGram => out.candidates = ngram_prune(kb, tokens),
            Pruning::Full => out.candidates = full_candidates(kb),
        }
        Ok(out)
    }

    pub fn answer_tokens(
        &self,
        kb: &KnowledgeBase,
        tokens: &[String],
        pruning: Pruning,
        combine: Combine,
    ) -> Result<Answer> {
        let mut a = self.prune(kb, tokens, pruning)?;
        let ids = self.vocab.encode(tokens);
        a.prediction = rank_candidates(kb, &self.relation, &self.subject, &ids, &a.candidates, combine)?;
        Ok(a)
    }

    pub fn answer(&self, kb: &KnowledgeBase, question: &str, pruning: Pruning, combine: Combine) -> Result<Answer> {
        self.answer_tokens(kb, &tokenize(question)?, pruning, combine)
    }

    pub fn exact(&self, kb: &KnowledgeBase, question: &str, combine: Combine) -> Result<Prediction> {
        let ids = self.vocab.encode(&tokenize(question)?);
        exact_infer(kb, &self.relation, &self.subject, &ids, combine)
    }
}

/// Fraction of predictions whose subject and relation both match.
pub fn eval_accuracy(predictions: &[Option<(EntityId, RelationId)>], golds: &[(EntityId, RelationId)]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::dim("predictions", golds.len(), predictions.len()));
    }
    if golds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref() == Some(g))
        .count();
    Ok(correct as f64 / golds.len() as f64)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub total: usize,
    pub accuracy: f64,
    pub recall: f64,
    pub single_subject: usize,
    pub single_subject_acc: f64,
    pub multi_subject: usize,
    pub multi_subject_acc: f64,
    pub mean_subject_candidates: f64,
    pub approximate_links: usize,
    pub ngram_fallbacks: usize,
    pub answers: Vec<Answer>,
}

impl EvalReport {
    /// The `key=value` lines printed by `eval`.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy={:.4}", self.accuracy);
        let _ = writeln!(s, "recall={:.4}", self.recall);
        let _ = writeln!(s, "single_subject_acc={:.4}", self.single_subject_acc);
        let _ = writeln!(s, "multi_subject_acc={:.4}", self.multi_subject_acc);
        let _ = writeln!(s, "single_subject_count={}", self.single_subject);
        let _ = writeln!(s, "multi_subject_count={}", self.multi_subject);
        let _ = writeln!(s, "mean_subject_candidates={:.4}", self.mean_subject_candidates);
        let _ = writeln!(s, "approximate_links={}", self.approximate_links);
        let _ = writeln!(s, "ngram_fallbacks={}", self.ngram_fallbacks);
        let _ = writeln!(s, "questions={}", self.total);
        s
    }

    /// `question<TAB>subject<TAB>relation<TAB>objects<TAB>combined` per
    /// question in input order; unanswered questions leave the fields empty.
    pub fn predictions_tsv(&self, kb: &KnowledgeBase, samples: &[Sample]) -> String {
        let mut s = String::new();
        for (a, x) in self.answers.iter().zip(samples) {
            match &a.prediction {
                Some(p) => {
                    let objs: Vec<&str> = p.objects.iter().map(|&o| kb.entity_name(o)).collect();
                    let _ = writeln!(
                        s,
                        "{}\t{}\t{}\t{}\t{}",
                        x.question,
                        kb.entity_name(p.subject),
                        kb.relation_name(p.relation),
                        objs.join(","),
                        p.combined
                    );
                }
                None => {
                    let _ = writeln!(s, "{}\t\t\t\t", x.question);
                }
            }
        }
        s
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

impl<T: Real> Pipeline<T> {
    pub fn evaluate(&self, kb: &KnowledgeBase, samples: &[Sample], pruning: Pruning, combine: Combine) -> Result<EvalReport> {
        if samples.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let answers: Vec<Answer> = samples
            .par_iter()
            .map(|x| self.answer_tokens(kb, &x.tokens, pruning, combine))
            .collect::<Result<_>>()?;
        let preds: Vec<Option<(EntityId, RelationId)>> =
            answers.iter().map(|a| a.prediction.as_ref().map(Prediction::pair)).collect();
        let golds: Vec<(EntityId, RelationId)> = samples.iter().map(|x| (x.subject, x.relation)).collect();
        let accuracy = eval_accuracy(&preds, &golds)?;

        let (mut recalled, mut single, mut single_ok, mut multi_ok, mut subj_total) = (0, 0, 0, 0, 0);
        let (mut approx, mut fallback) = (0, 0);
        for ((a, p), g) in answers.iter().zip(&preds).zip(&golds) {
            let ok = p.as_ref() == Some(g);
            if a.candidates.contains(g.0, g.1) {
                recalled += 1;
            }
            let n_subj = a.candidates.subjects().len();
            subj_total += n_subj;
            if n_subj <= 1 {
                single += 1;
                single_ok += ok as usize;
            } else {
                multi_ok += ok as usize;
            }
            match a.link {
                Some(LinkKind::Approximate) => approx += 1,
                Some(LinkKind::NGramFallback) => fallback += 1,
                _ => {}
            }
        }
        let n = samples.len();
        Ok(EvalReport {
            total: n,
            accuracy,
            recall: ratio(recalled, n),
            single_subject: single,
            single_subject_acc: ratio(single_ok, single),
            multi_subject: n - single,
            multi_subject_acc: ratio(multi_ok, n - single),
            mean_subject_candidates: ratio(subj_total, n),
            approximate_links: approx,
            ngram_fallbacks: fallback,
            answers,
        })
    }

    /// Fraction of reverse-linkable questions whose decoded label sequence
    /// equals the reverse-linked one, and the number of such questions.
    pub fn labeler_accuracy(&self, kb: &KnowledgeBase, samples: &[Sample]) -> Result<(f64, usize)> {
        let results: Vec<Option<bool>> = samples
            .par_iter()
            .map(|x| -> Result<Option<bool>> {
                let Some(gold) = reverse_link_labels(kb, &x.tokens, x.subject) else {
                    return Ok(None);
                };
                let (labels, _) = self.labeler.decode(&self.vocab.encode(&x.tokens))?;
                Ok(Some(labels == gold))
            })
            .collect::<Result<_>>()?;
        let linked = results.iter().flatten().count();
        let correct = results.iter().flatten().filter(|&&b| b).count();
        Ok((ratio(correct, linked), linked))
    }
}
