//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kbqa::config::{Combine, Config, EncoderKind};
use kbqa::data::Sample;
use kbqa::encoder::{BiGruEncoder, EncoderDims, QuestionEncoder};
use kbqa::gradcheck;
use kbqa::kb::{EntityId, KnowledgeBase, RelationId};
use kbqa::labeler::{log_partition, viterbi, Label};
use kbqa::neural::{log_softmax, Module, Param, Tensor};
use kbqa::pipeline::{build_vocab, init_relation, train_relation, Pipeline, Trained};
use kbqa::pruning::{focused_prune, ngram_prune, recall_at, Pruning};
use kbqa::relation::{hinge, RelationScorer};
use kbqa::subject::{subject_hinge, type_bce, EntityRepr, EntityReprMode, SubjectScorer};
use kbqa::toy::{self, ToyCorpus};
use kbqa::training::reverse_link_labels;

const TOY_SEED: u64 = 1;
const TOY_QUESTIONS: usize = 600;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Toy {
    kb: KnowledgeBase,
    train: Vec<Sample>,
    test: Vec<Sample>,
}

fn toy_data() -> Toy {
    let corpus = toy::generate(TOY_SEED, TOY_QUESTIONS);
    let kb = corpus.knowledge_base();
    let train = ToyCorpus::samples(&kb, &corpus.train).expect("train samples");
    let test = ToyCorpus::samples(&kb, &corpus.test).expect("test samples");
    Toy { kb, train, test }
}

fn toy_config() -> Config {
    let mut c = Config::default();
    c.apply_text(toy::TOY_CONFIG).expect("toy config");
    c.validate().expect("valid toy config");
    c
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1. Finite differences agree with every backward pass.
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let results = gradcheck::run_all(1).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let worst = results
        .iter()
        .max_by(|a, b| a.report.max_relative_error.total_cmp(&b.report.max_relative_error))
        .expect("checks");
    let names: Vec<&str> = results.iter().map(|r| r.name).collect();
    let required = [
        "gru_cell", "bigru_stack", "bigru_encoder", "embed_avg_encoder", "relation_hinge", "subject_hinge",
        "type_bce", "crf_nll", "transe_margin",
    ];
    let covered = required.iter().all(|n| names.contains(n));
    let pass = covered
        && results.iter().all(|r| r.report.max_relative_error < 1e-3)
        && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{} suites, worst {} max_rel_err={:.2e}, {}",
            results.len(),
            worst.name,
            worst.report.max_relative_error,
            secs(elapsed)
        ),
    )
}

fn brute_force(em: &[[f64; 2]], trans: &[[f64; 2]; 2]) -> (f64, Vec<usize>) {
    let t = em.len();
    let mut scores = Vec::with_capacity(1 << t);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 0..(1usize << t) {
        let y: Vec<usize> = (0..t).map(|i| (mask >> i) & 1).collect();
        let mut s = 0.0;
        for i in 0..t {
            s += em[i][y[i]];
            if i > 0 {
                s += trans[y[i - 1]][y[i]];
            }
        }
        if s > best.0 {
            best = (s, y);
        }
        scores.push(s);
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    (z, best.1)
}

// 2. Forward recursion and Viterbi against enumeration of all 2^T paths.
fn crf_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut mismatches) = (0.0f64, 0);
    for _ in 0..100 {
        let t = rng.gen_range(1..=8);
        let em: Vec<[f64; 2]> = (0..t).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let trans = [
            [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
        ];
        let em_t = Tensor::from_vec(&[t, 2], em.iter().flatten().copied().collect()).unwrap();
        let tr_t = Tensor::from_vec(&[2, 2], trans.iter().flatten().copied().collect()).unwrap();
        let (z, best) = brute_force(&em, &trans);
        worst = worst.max((log_partition(&em_t, &tr_t).unwrap() - z).abs());
        let (labels, _) = viterbi(&em_t, &tr_t).unwrap();
        let decoded: Vec<usize> = labels.iter().map(|l| (*l == Label::Sub) as usize).collect();
        mismatches += (decoded != best) as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-8 && mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("100 instances, max |logZ err|={worst:.1e}, viterbi mismatches={mismatches}, {}", secs(elapsed)),
    )
}

fn small_config() -> Config {
    let mut c = toy_config();
    c.apply_text("embedding_dim=16\nhidden_size=12\nrelation_dim=12\nentity_dim=12\nepochs=2\nneg_relations=64\nneg_entities=64\ntranse_epochs=3\n")
        .unwrap();
    c
}

// 3. Ranking the full candidate set equals brute force over the KB.
fn inference_equivalence(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let kb = &toy.kb;
    let all: Vec<Sample> = toy.train.iter().chain(&toy.test).cloned().collect();
    let mut checked = 0;
    let mut mismatches = 0;
    for mode in [EntityReprMode::TypeVector, EntityReprMode::Random] {
        let mut c = small_config();
        c.entity_repr = mode;
        let p = Pipeline::<f32>::init(kb, build_vocab(&toy.train), &c).unwrap();
        for x in all.iter().take(300) {
            for combine in [Combine::Softmax, Combine::Raw] {
                let a = p.answer(kb, &x.question, Pruning::Full, combine).unwrap();
                let e = p.exact(kb, &x.question, combine).unwrap();
                checked += 1;
                mismatches += (a.prediction.map(|p| p.pair()) != Some(e.pair())) as usize;
            }
        }
    }
    let elapsed = start.elapsed();
    let facts = kb.facts().len();
    outcome(
        facts <= 1000 && checked >= 200 && mismatches == 0 && elapsed < Duration::from_secs(30),
        format!("{checked} questions over {facts} facts, mismatches={mismatches}, {}", secs(elapsed)),
    )
}

fn shared_training(toy: &Toy) -> (Trained, Duration) {
    let start = Instant::now();
    let trained = Pipeline::train(&toy.kb, &toy.train, &toy_config(), None).expect("toy training");
    (trained, start.elapsed())
}

// 4. Full pipeline on the held-out split.
fn end_to_end(toy: &Toy, trained: &Trained, train_time: Duration) -> Outcome {
    let start = Instant::now();
    let kb = &toy.kb;
    let p = &trained.pipeline;
    let report = p.evaluate(kb, &toy.test, Pruning::Focused, Combine::Softmax).unwrap();
    let (labeler_acc, _) = p.labeler_accuracy(kb, &toy.test).unwrap();
    let hp = p.answer(kb, "Who created the character Harry Potter", Pruning::Focused, Combine::Softmax).unwrap();
    let hp_ok = hp
        .prediction
        .as_ref()
        .is_some_and(|x| kb.entity_name(x.subject) == "HarryPotter" && x.objects.iter().any(|&o| kb.entity_name(o) == "JKRowling"));
    let total = train_time + start.elapsed();
    let st = kb.stats();
    let shape = st.entities >= 50 && st.relations >= 10 && toy.train.len() + toy.test.len() >= 500;
    let epochs = p.config.hyper.epochs;
    outcome(
        shape && epochs <= 50 && report.accuracy >= 0.90 && labeler_acc >= 0.95 && hp_ok && total < Duration::from_secs(600),
        format!(
            "accuracy={:.4} labeler_sentence_acc={:.4} recall={:.4} harry_potter={} ({} train / {} test, {epochs} epochs, {})",
            report.accuracy,
            labeler_acc,
            report.recall,
            if hp_ok { "ok" } else { "wrong" },
            toy.train.len(),
            toy.test.len(),
            secs(total)
        ),
    )
}

// 5. Focused pruning on exact-alias mentions keeps the gold pair and
// shrinks the subject candidates compared to n-gram pruning.
fn pruning_properties(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let kb = &toy.kb;
    let (mut recalled, mut focused_subjects, mut ngram_subjects, mut n) = (0usize, 0usize, 0usize, 0usize);
    for x in &toy.test {
        let gold = reverse_link_labels(kb, &x.tokens, x.subject).expect("toy mentions are exact aliases");
        let f = focused_prune(kb, &x.tokens, &gold).unwrap();
        recalled += recall_at(&f.candidates, (x.subject, x.relation)) as usize;
        focused_subjects += f.candidates.subjects().len();
        ngram_subjects += ngram_prune(kb, &x.tokens).subjects().len();
        n += 1;
    }
    let recall = recalled as f64 / n as f64;
    let (mf, mn) = (focused_subjects as f64 / n as f64, ngram_subjects as f64 / n as f64);
    let elapsed = start.elapsed();
    outcome(
        recalled == n && mf < mn && elapsed < Duration::from_secs(30),
        format!("recall={recall:.4} mean|Cs| focused={mf:.3} ngram={mn:.3}, {}", secs(elapsed)),
    )
}

fn grads_zero<M: Module<f64>>(m: &M) -> bool {
    m.params().iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0))
}

fn unit_scaled(f: &[f64], score: f64) -> Vec<f64> {
    let n2: f64 = f.iter().map(|v| v * v).sum();
    f.iter().map(|v| v * score / n2).collect()
}

// 6. Hinge losses vanish once every margin is met, the uniform binary
// prediction costs 2 ln 2, and candidate softmaxes normalize.
fn loss_laws(toy: &Toy) -> Outcome {
    let gamma = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;

    // Boundary: a gap of exactly γ is already zero loss.
    ok &= hinge(gamma, gamma, &[0.0]) == 0.0 && subject_hinge(gamma, gamma, &[0.0]) == 0.0;
    for _ in 0..1000 {
        let gold = rng.gen_range(-5.0..5.0);
        let negs: Vec<f64> = (0..8).map(|_| gold - gamma - rng.gen_range(0.0..3.0)).collect();
        ok &= hinge(gamma, gold, &negs) == 0.0 && subject_hinge(gamma, gold, &negs) == 0.0;
    }

    let dims = EncoderDims { vocab_rows: 8, embedding: 5, hidden: 4, layers: 2, output: 6 };
    let ids = [1, 3, 5, 2];
    let enc = QuestionEncoder::BiGru(BiGruEncoder::<f64>::new("r", dims, 0.0, false, 0.3, &mut rng));
    let mut rel = RelationScorer::new(enc, 4, 0.3, &mut rng);
    let f_q = rel.encoder.encode(&ids).unwrap();
    for (r, s) in [(0, 1.0), (1, 0.85), (2, 0.2), (3, -1.0)] {
        rel.embedding.value.row_mut(r).copy_from_slice(&unit_scaled(&f_q, s));
    }
    rel.zero_grad();
    let l = rel.hinge_loss(&ids, RelationId(0), &[RelationId(1), RelationId(2), RelationId(3)], gamma, None).unwrap();
    ok &= l == 0.0 && grads_zero(&rel);

    let kb = &toy.kb;
    let r = toy.train[0].relation;
    let gold = toy.train[0].subject;
    let enc = QuestionEncoder::BiGru(BiGruEncoder::<f64>::new("s", dims, 0.0, false, 0.3, &mut rng));
    let table = Param::uniform("subject.entities", &[kb.num_entities(), 6], 0.3, &mut rng);
    let mut subj = SubjectScorer::new(enc, EntityRepr::Table { table, frozen: false }, EntityReprMode::Random, 1.0).unwrap();
    let g_q = subj.encoder.encode(&ids).unwrap();
    let negs: Vec<EntityId> = kb.entities().filter(|&e| e != gold).take(20).collect();
    if let EntityRepr::Table { table, .. } = &mut subj.repr {
        table.value.row_mut(gold.index()).copy_from_slice(&unit_scaled(&g_q, 1.0));
        for &n in &negs {
            table.value.row_mut(n.index()).copy_from_slice(&unit_scaled(&g_q, -0.5));
        }
    }
    subj.zero_grad();
    let l = subj.hinge_loss(kb, &ids, gold, r, &negs, gamma, None).unwrap();
    ok &= l == 0.0 && grads_zero(&subj);

    let (bce, _) = type_bce(&[0.5f64, 0.5], &[1.0, 0.0]);
    let bce_err = (bce - 2.0 * std::f64::consts::LN_2).abs();
    ok &= bce_err <= 1e-9;

    // Softmaxes over real candidate sets from a randomly initialized model.
    let p = Pipeline::<f32>::init(kb, build_vocab(&toy.train), &small_config()).unwrap();
    let mut worst = 0.0f64;
    for x in &toy.test {
        let ids = p.vocab.encode(&x.tokens);
        let cands = ngram_prune(kb, &x.tokens);
        let relations: Vec<RelationId> = cands.relations().into_iter().collect();
        if relations.is_empty() {
            continue;
        }
        let lp = p.relation.log_probs(&ids, &relations).unwrap();
        worst = worst.max((lp.iter().map(|v| (*v as f64).exp()).sum::<f64>() - 1.0).abs());
        for r in relations {
            let u: Vec<f32> = cands
                .subjects_for(r)
                .iter()
                .map(|&s| p.subject.score(kb, &ids, s, r).unwrap())
                .collect();
            let ls = log_softmax(&u);
            worst = worst.max((ls.iter().map(|v| (*v as f64).exp()).sum::<f64>() - 1.0).abs());
        }
    }
    ok &= worst <= 1e-6;
    outcome(ok, format!("hinge zero past margin, |bce-2ln2|={bce_err:.1e}, max |Σp-1|={worst:.1e}"))
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

// 7. Same seed, same bytes; serial and parallel batches agree.
fn determinism(toy: &Toy) -> Outcome {
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut files = 0;
    for mode in [EntityReprMode::TypeVector, EntityReprMode::Pretrained, EntityReprMode::Random] {
        let mut runs = Vec::new();
        for (i, parallel) in [true, true, false].into_iter().enumerate() {
            let mut c = small_config();
            c.entity_repr = mode;
            c.hyper.parallel = parallel;
            let dir = root.path().join(format!("{mode}-{i}"));
            Pipeline::train(&toy.kb, &toy.train, &c, None).unwrap().save(&dir).unwrap();
            let mut bytes = dir_bytes(&dir);
            // The saved config records the parallel flag itself.
            bytes.remove("model.conf");
            runs.push(bytes);
        }
        files += runs[0].len();
        ok &= runs[0] == runs[1] && runs[0] == runs[2];
    }
    let elapsed = start.elapsed();
    outcome(ok, format!("{files} files compared across 3 entity modes, {}", secs(elapsed)))
}

// 8. BiGRU relation encoder is not worse than the embedding average.
fn ablation(toy: &Toy, trained: &Trained) -> Outcome {
    let start = Instant::now();
    let kb = &toy.kb;
    let bigru = trained.pipeline.evaluate(kb, &toy.test, Pruning::Focused, Combine::Softmax).unwrap().accuracy;
    let mut c = toy_config();
    c.encoder = EncoderKind::Avg;
    let mut p = trained.pipeline.clone();
    p.config = c.clone();
    p.relation = init_relation(&c, &p.vocab, kb);
    train_relation(&mut p.relation, &c, &p.vocab, kb, &toy.train).unwrap();
    let avg = p.evaluate(kb, &toy.test, Pruning::Focused, Combine::Softmax).unwrap().accuracy;
    outcome(
        bigru >= avg - 0.02,
        format!("bigru={bigru:.4} embed_avg={avg:.4} (slack 0.02), {}", secs(start.elapsed())),
    )
}

fn main() {
    let toy = toy_data();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("criterion {n} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient-correctness", gradient_correctness());
    report(2, "crf-exactness", crf_exactness());
    report(3, "inference-equivalence", inference_equivalence(&toy));
    let (trained, train_time) = shared_training(&toy);
    report(4, "end-to-end-toy", end_to_end(&toy, &trained, train_time));
    report(5, "pruning-properties", pruning_properties(&toy));
    report(6, "loss-laws", loss_laws(&toy));
    report(7, "determinism", determinism(&toy));
    report(8, "ablation-direction", ablation(&toy, &trained));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
