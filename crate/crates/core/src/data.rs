//! Question datasets and labeled token sequences on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::encoder::tokenize;
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, RelationId};
use crate::labeler::Label;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub question: String,
    pub tokens: Vec<String>,
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: Option<EntityId>,
}

impl Sample {
    pub fn new(
        kb: &KnowledgeBase,
        question: &str,
        subject: EntityId,
        relation: RelationId,
        object: Option<EntityId>,
    ) -> Result<Self> {
        kb.check_entity(subject)?;
        kb.check_relation(relation)?;
        if let Some(o) = object {
            if !kb.lookup_objects(subject, relation).contains(&o) {
                return Err(Error::Invalid(format!(
                    "no fact ({}, {}, {})",
                    kb.entity_name(subject),
                    kb.relation_name(relation),
                    kb.entity_name(o)
                )));
            }
        }
        Ok(Self {
            question: question.to_owned(),
            tokens: tokenize(question)?,
            subject,
            relation,
            object,
        })
    }
}

/// Reads `question<TAB>subject<TAB>relation[<TAB>object]` lines.
pub fn read_dataset(path: &Path, kb: &KnowledgeBase) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&f.len()) {
            return Err(err(format!("expected 3 or 4 tab-separated fields, found {}", f.len())));
        }
        let subject = kb
            .entity_id(f[1].trim())
            .ok_or_else(|| err(format!("unknown entity `{}`", f[1])))?;
        let relation = kb
            .relation_id(f[2].trim())
            .ok_or_else(|| err(format!("unknown relation `{}`", f[2])))?;
        let object = match f.get(3) {
            Some(o) => Some(
                kb.entity_id(o.trim())
                    .ok_or_else(|| err(format!("unknown entity `{o}`")))?,
            ),
            None => None,
        };
        out.push(Sample::new(kb, f[0], subject, relation, object).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn format_dataset(samples: &[Sample], kb: &KnowledgeBase) -> String {
    let mut s = String::new();
    for x in samples {
        let _ = write!(
            s,
            "{}\t{}\t{}",
            x.question,
            kb.entity_name(x.subject),
            kb.relation_name(x.relation)
        );
        if let Some(o) = x.object {
            let _ = write!(s, "\t{}", kb.entity_name(o));
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSequence {
    pub tokens: Vec<String>,
    pub labels: Vec<Label>,
}

/// Reads `token token …<TAB>label label …` lines.
pub fn read_labeled(path: &Path) -> Result<Vec<LabeledSequence>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let (toks, labs) = line
            .split_once('\t')
            .ok_or_else(|| err("expected tokens<TAB>labels".into()))?;
        let tokens: Vec<String> = toks.split_whitespace().map(str::to_owned).collect();
        let labels = labs
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<Label>>>()
            .map_err(|e| err(e.to_string()))?;
        if tokens.len() != labels.len() || tokens.is_empty() {
            return Err(err(format!("{} tokens but {} labels", tokens.len(), labels.len())));
        }
        out.push(LabeledSequence { tokens, labels });
    }
    Ok(out)
}

pub fn format_labeled(seqs: &[LabeledSequence]) -> String {
    let mut s = String::new();
    for x in seqs {
        let labels: Vec<String> = x.labels.iter().map(Label::to_string).collect();
        let _ = writeln!(s, "{}\t{}", x.tokens.join(" "), labels.join(" "));
    }
    s
}
