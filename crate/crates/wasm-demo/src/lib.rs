//! Browser demo over the toy corpus: n-gram pruning, training a small
//! pipeline in the page, and answering questions with it.

use std::fmt::Write;

use kbqa::config::{Combine, Config};
use kbqa::data::Sample;
use kbqa::encoder::tokenize;
use kbqa::kb::KnowledgeBase;
use kbqa::pipeline::Pipeline;
use kbqa::pruning::{ngram_prune, Pruning};
use kbqa::toy::{self, ToyCorpus};
use wasm_bindgen::prelude::*;

/// Shapes small enough to train in a few seconds on one thread.
const DEMO_CONFIG: &str = "embedding_dim=24\nhidden_size=24\nlayers=1\nrelation_dim=24\nentity_dim=24\n\
                           neg_relations=32\nneg_entities=32\nparallel=false\nentity_repr=typevec\n";

const MAX_LISTED: usize = 12;

#[wasm_bindgen]
pub struct Demo {
    kb: KnowledgeBase,
    train: Vec<Sample>,
    test: Vec<Sample>,
    pipeline: Option<Pipeline<f32>>,
}

fn err(e: kbqa::Error) -> String {
    e.to_string()
}

#[wasm_bindgen]
impl Demo {
    /// Generates the toy corpus for `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, questions: u32) -> Result<Demo, String> {
        let corpus = toy::generate(seed as u64, questions.max(10) as usize);
        let kb = corpus.knowledge_base();
        let train = ToyCorpus::samples(&kb, &corpus.train).map_err(err)?;
        let test = ToyCorpus::samples(&kb, &corpus.test).map_err(err)?;
        Ok(Demo { kb, train, test, pipeline: None })
    }

    /// KB and split sizes, one `key=value` per line.
    pub fn stats(&self) -> String {
        let st = self.kb.stats();
        format!(
            "entities={}\nrelations={}\nfacts={}\ntypes={}\ntrain={}\ntest={}\n",
            st.entities,
            st.relations,
            st.facts,
            st.types,
            self.train.len(),
            self.test.len()
        )
    }

    /// Every (subject, relation) pair whose subject alias is an n-gram of
    /// the question.
    pub fn prune(&self, question: &str) -> Result<String, String> {
        let tokens = tokenize(question).map_err(err)?;
        let c = ngram_prune(&self.kb, &tokens);
        let mut s = format!("candidates={} subjects={}\n", c.len(), c.subjects().len());
        for (e, r) in c.pairs().take(MAX_LISTED) {
            let _ = writeln!(s, "{}\t{}\t\"{}\"", self.kb.entity_name(e), self.kb.relation_name(r), c.mention(e, r).unwrap_or(""));
        }
        if c.len() > MAX_LISTED {
            let _ = writeln!(s, "... {} more", c.len() - MAX_LISTED);
        }
        Ok(s)
    }

    /// Trains a small pipeline for `epochs` and reports held-out accuracy.
    pub fn train(&mut self, epochs: u32, seed: u32) -> Result<String, String> {
        let mut config = Config::default();
        config.apply_text(toy::TOY_CONFIG).map_err(err)?;
        config.apply_text(DEMO_CONFIG).map_err(err)?;
        config.hyper.epochs = epochs.clamp(1, 50) as usize;
        config.hyper.seed = seed as u64;
        let trained = Pipeline::train(&self.kb, &self.train, &config, None).map_err(err)?;
        let report = trained.pipeline.evaluate(&self.kb, &self.test, Pruning::Focused, Combine::Softmax).map_err(err)?;
        self.pipeline = Some(trained.pipeline);
        Ok(report.summary())
    }

    /// Answers with the trained pipeline under focused pruning.
    pub fn answer(&self, question: &str) -> Result<String, String> {
        let p = self.pipeline.as_ref().ok_or_else(|| String::from("train a model first"))?;
        let a = p.answer(&self.kb, question, Pruning::Focused, Combine::Softmax).map_err(err)?;
        let mut s = String::new();
        if let Some(m) = &a.mention {
            let _ = writeln!(s, "mention={m}");
        }
        let _ = writeln!(s, "candidates={}", a.candidates.len());
        match &a.prediction {
            Some(pred) => {
                let objects: Vec<&str> = pred.objects.iter().map(|&o| self.kb.entity_name(o)).collect();
                let _ = writeln!(s, "subject={}", self.kb.entity_name(pred.subject));
                let _ = writeln!(s, "relation={}", self.kb.relation_name(pred.relation));
                let _ = writeln!(s, "objects={}", objects.join(","));
                let _ = writeln!(s, "score={:.4}", pred.combined);
            }
            None => s.push_str("no answer\n"),
        }
        Ok(s)
    }
}
