//! Mention labels from the gold subject: the longest question n-gram that
//! equals one of the subject's aliases is labeled `SUB`.

use crate::data::{LabeledSequence, Sample};
use crate::kb::{normalize_alias, EntityId, KnowledgeBase};
use crate::labeler::Label;

pub fn reverse_link_labels(kb: &KnowledgeBase, tokens: &[String], subject: EntityId) -> Option<Vec<Label>> {
    let aliases = kb.aliases_of(subject);
    if aliases.is_empty() {
        return None;
    }
    let n = tokens.len();
    for len in (1..=n).rev() {
        for start in 0..=n - len {
            let gram = normalize_alias(&tokens[start..start + len].join(" "));
            if aliases.contains(&gram) {
                let mut labels = vec![Label::O; n];
                labels[start..start + len].fill(Label::Sub);
                return Some(labels);
            }
        }
    }
    None
}

/// Labels every sample that links; returns the sequences, aligned sample
/// indices, and the match rate.
pub fn label_dataset(kb: &KnowledgeBase, samples: &[Sample]) -> (Vec<LabeledSequence>, Vec<usize>, f64) {
    let mut seqs = Vec::new();
    let mut idx = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(labels) = reverse_link_labels(kb, &s.tokens, s.subject) {
            seqs.push(LabeledSequence {
                tokens: s.tokens.clone(),
                labels,
            });
            idx.push(i);
        }
    }
    let rate = if samples.is_empty() { 0.0 } else { idx.len() as f64 / samples.len() as f64 };
    (seqs, idx, rate)
}
