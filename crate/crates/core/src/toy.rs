//! Synthetic world for hermetic end-to-end runs: a small typed KB of people,
//! books, films, albums, bands and places, with templated questions.
//!
//! Every entity's display name is one of its aliases. People also get a
//! last-name alias, which makes n-gram candidate sets noisy. A handful of
//! films share their title with the book they adapt, so some mentions are
//! ambiguous and only the entity type can settle them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::Result;
use crate::kb::{KbBuilder, KnowledgeBase};

const FIRST: &[&str] = &[
    "anna", "maria", "john", "peter", "laura", "david", "elena", "omar", "yuki", "ravi", "sofia", "lucas",
    "nina", "igor", "clara", "marco", "hana", "felix", "ines", "oscar", "lena", "tomas", "mira", "ivan",
    "zoe", "emil", "rosa", "jonas", "alma", "victor",
];
const LAST: &[&str] = &[
    "stone", "rivers", "moreau", "tanaka", "okafor", "lindqvist", "novak", "fischer", "costa", "mendez",
    "kowalski", "haddad", "bauer", "sato", "ferreira", "jensen", "dubois", "rossi", "petrov", "khan",
    "silva", "nakamura", "weber", "olsen", "garcia", "murphy", "larsen", "ito", "kim", "baker",
];
const ADJ: &[&str] = &[
    "silent", "golden", "broken", "hidden", "last", "crimson", "frozen", "distant", "wild", "quiet",
    "burning", "lost", "endless", "hollow", "bright",
];
const NOUN: &[&str] = &[
    "river", "stone", "garden", "empire", "shadow", "mirror", "harbor", "forest", "crown", "letter",
    "voyage", "tower", "winter", "echo", "island",
];
const CHARACTER_FIRST: &[&str] = &["captain", "lady", "doctor", "little", "old", "young", "sister", "brother"];
const CHARACTER_LAST: &[&str] = &[
    "blackwood", "quill", "thorne", "wren", "ashby", "vale", "holt", "frost", "marlow", "crane", "birch",
    "fenwick", "lark", "moss",
];
const BAND_NOUN: &[&str] = &[
    "foxes", "lanterns", "comets", "sparrows", "engines", "tides", "wolves", "ravens", "pilots", "saints",
];
const CITIES: &[(&str, &str)] = &[
    ("lisbon", "portugal"),
    ("porto", "portugal"),
    ("oslo", "norway"),
    ("bergen", "norway"),
    ("kyoto", "japan"),
    ("osaka", "japan"),
    ("lagos", "nigeria"),
    ("accra", "ghana"),
    ("lima", "peru"),
    ("quito", "ecuador"),
    ("turin", "italy"),
    ("gdansk", "poland"),
    ("graz", "austria"),
    ("leeds", "england"),
    ("perth", "australia"),
];
const BOOK_GENRES: &[&str] = &["fantasy", "mystery", "romance", "science fiction", "historical fiction"];
const FILM_GENRES: &[&str] = &["comedy", "drama", "thriller", "horror", "western"];
const ALBUM_GENRES: &[&str] = &["jazz", "rock", "folk", "pop", "blues"];

const KINDS: &[(&str, &[&str])] = &[
    ("born_in", &[
        "where was {} born",
        "what city was {} born in",
        "in which city was {} born",
        "{} was born where",
        "what is the birthplace of {}",
        "which city is the hometown of {}",
    ]),
    ("nationality", &[
        "what is the nationality of {}",
        "what country is {} a citizen of",
        "which country does {} come from",
        "{} holds citizenship of which country",
        "what nationality is {}",
    ]),
    ("written_by", &[
        "who wrote {}",
        "who is the author of {}",
        "who wrote the book {}",
        "{} was written by whom",
        "which author wrote {}",
        "who penned the novel {}",
    ]),
    ("published_in", &[
        "when was {} published",
        "what year was the book {} published",
        "in which year was the novel {} first printed",
        "{} was published in what year",
        "what is the publication year of {}",
    ]),
    ("directed_by", &[
        "who directed {}",
        "who is the director of {}",
        "who directed the film {}",
        "{} was directed by whom",
        "which filmmaker made the movie {}",
    ]),
    ("starring", &[
        "who starred in {}",
        "who is the lead actor of {}",
        "which actor appears in the film {}",
        "who plays the lead in the movie {}",
        "name an actor in {}",
    ]),
    ("performed_by", &[
        "who performed {}",
        "who recorded the album {}",
        "which artist released {}",
        "{} is an album by whom",
        "who made the record {}",
    ]),
    ("formed_in", &[
        "where was {} formed",
        "in which city was the band {} formed",
        "what city did the group {} start in",
        "{} was founded in which city",
        "where did the band {} get together",
    ]),
    ("located_in", &[
        "what country is {} in",
        "in which country is {} located",
        "{} is a city in which country",
        "which nation contains the city {}",
        "{} belongs to which country",
    ]),
    ("character_created_by", &[
        "who created the character {}",
        "who invented {}",
        "which author created {}",
        "{} was created by whom",
        "who is the creator of {}",
    ]),
    ("appears_in", &[
        "which book features {}",
        "in what book does {} appear",
        "{} appears in which novel",
        "where does the character {} appear",
        "what story is {} from",
    ]),
];

const GENRE_TEMPLATES: &[(&str, &[&str])] = &[
    ("book", &[
        "what genre is the book {}",
        "what kind of book is {}",
        "the novel {} belongs to which genre",
        "what literary genre is {}",
        "what genre of novel is {}",
    ]),
    ("film", &[
        "what genre is the film {}",
        "what kind of movie is {}",
        "the movie {} is what genre",
        "what type of film is {}",
        "what genre of movie is {}",
    ]),
    ("album", &[
        "what genre is the album {}",
        "what style of music is {}",
        "the record {} is in which genre",
        "what kind of music is on {}",
        "what musical genre is the album {}",
    ]),
];

const RELEASE_TEMPLATES: &[(&str, &[&str])] = &[
    ("film", &[
        "when was the film {} released",
        "what year did the movie {} come out",
        "in what year was the film {} released",
        "the movie {} premiered in which year",
        "what is the release year of the film {}",
    ]),
    ("album", &[
        "when was the album {} released",
        "what year did the record {} come out",
        "in what year was the album {} released",
        "the album {} was released in which year",
        "what is the release year of the record {}",
    ]),
];

/// Hyperparameters for the toy corpus: the default sizes with a batch size
/// suited to a few hundred questions. Learning rates shrink by
/// sqrt(16/256) along with the batch.
pub const TOY_CONFIG: &str = "\
batch_size=16
epochs=15
lr_relation=0.005
lr_subject=0.005
lr_labeler=0.005
lr_embed_avg=0.005
lr_typevec_encoder=0.00025
relation_negatives=all
neg_relations=1024
neg_entities=1024
";

/// One generated question.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyQuestion {
    pub question: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Clone, Debug, Default)]
pub struct ToyCorpus {
    pub triples: Vec<(String, String, String)>,
    pub aliases: Vec<(String, String)>,
    pub types: Vec<(String, String)>,
    pub train: Vec<ToyQuestion>,
    pub test: Vec<ToyQuestion>,
}

#[derive(Default)]
struct World {
    triples: Vec<(String, String, String)>,
    aliases: Vec<(String, String)>,
    types: Vec<(String, String)>,
    display: BTreeMap<String, String>,
    kind: BTreeMap<String, &'static str>,
}

fn camel(display: &str) -> String {
    display
        .split_whitespace()
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect::<String>(),
                None => String::new(),
            }
        })
        .collect()
}

impl World {
    fn entity(&mut self, id: &str, display: &str, kind: &'static str, types: &[&str]) {
        if self.display.contains_key(id) {
            return;
        }
        self.display.insert(id.to_owned(), display.to_owned());
        self.kind.insert(id.to_owned(), kind);
        self.aliases.push((id.to_owned(), display.to_owned()));
        for t in types {
            self.types.push((id.to_owned(), (*t).to_owned()));
        }
    }

    fn fact(&mut self, s: &str, r: &str, o: &str) {
        self.triples.push((s.to_owned(), r.to_owned(), o.to_owned()));
    }
}

fn year(w: &mut World, y: u32) -> String {
    let id = y.to_string();
    w.entity(&id, &id, "year", &["year"]);
    id
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty pool")
}

fn build_world(rng: &mut ChaCha8Rng) -> World {
    let mut w = World::default();
    for &(city, country) in CITIES {
        w.entity(&camel(country), country, "country", &["location", "country"]);
        w.entity(&camel(city), city, "city", &["location", "city"]);
        w.fact(&camel(city), "located_in", &camel(country));
    }
    for g in BOOK_GENRES.iter().chain(FILM_GENRES).chain(ALBUM_GENRES) {
        w.entity(&camel(g), g, "genre", &["genre"]);
    }

    // People: (id, role).
    let mut names: Vec<(usize, usize)> = (0..FIRST.len()).flat_map(|f| (0..LAST.len()).map(move |l| (f, l))).collect();
    names.shuffle(rng);
    let roles = [("author", 16), ("director", 10), ("actor", 14), ("musician", 10)];
    let mut people: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut next = 0;
    for (role, n) in roles {
        for _ in 0..n {
            let (f, l) = names[next];
            next += 1;
            let display = format!("{} {}", FIRST[f], LAST[l]);
            let id = camel(&display);
            w.entity(&id, &display, "person", &["person", role]);
            w.aliases.push((id.clone(), LAST[l].to_owned()));
            people.entry(role).or_default().push(id);
        }
    }
    w.entity("JKRowling", "jk rowling", "person", &["person", "author"]);
    w.aliases.push(("JKRowling".into(), "rowling".into()));
    people.get_mut("author").expect("authors").push("JKRowling".into());

    let all_people: Vec<String> = people.values().flatten().cloned().collect();
    for p in &all_people {
        let (city, country) = *pick(rng, CITIES);
        w.fact(p, "born_in", &camel(city));
        w.fact(p, "nationality", &camel(country));
    }

    let mut titles: Vec<(usize, usize)> = (0..ADJ.len()).flat_map(|a| (0..NOUN.len()).map(move |n| (a, n))).collect();
    titles.shuffle(rng);
    let mut title_iter = titles.into_iter();
    let mut books = Vec::new();
    for _ in 0..30 {
        let (a, n) = title_iter.next().expect("title pool");
        let display = format!("the {} {}", ADJ[a], NOUN[n]);
        let id = camel(&display);
        w.entity(&id, &display, "book", &["creative_work", "book"]);
        w.fact(&id, "written_by", pick(rng, &people["author"]));
        w.fact(&id, "genre", &camel(pick(rng, BOOK_GENRES)));
        let y = year(&mut w, rng.gen_range(1950..2000));
        w.fact(&id, "published_in", &y);
        books.push(id);
    }
    w.entity("HarryPotterAndTheHiddenStone", "harry potter and the hidden stone", "book", &["creative_work", "book"]);
    w.fact("HarryPotterAndTheHiddenStone", "written_by", "JKRowling");
    w.fact("HarryPotterAndTheHiddenStone", "genre", "Fantasy");
    let y = year(&mut w, 1997);
    w.fact("HarryPotterAndTheHiddenStone", "published_in", &y);

    for i in 0..30 {
        // The first few films adapt a book and keep its title.
        let (id, display) = if i < 6 {
            let book = &books[i];
            (format!("{book}Film"), w.display[book].clone())
        } else {
            let (a, n) = title_iter.next().expect("title pool");
            let d = format!("{} {}", ADJ[a], NOUN[n]);
            (camel(&d), d)
        };
        w.entity(&id, &display, "film", &["creative_work", "film"]);
        w.fact(&id, "directed_by", pick(rng, &people["director"]));
        let lead = pick(rng, &people["actor"]).clone();
        w.fact(&id, "starring", &lead);
        if rng.gen_bool(0.4) {
            let second = pick(rng, &people["actor"]).clone();
            w.fact(&id, "starring", &second);
        }
        w.fact(&id, "genre", &camel(pick(rng, FILM_GENRES)));
        let y = year(&mut w, rng.gen_range(1970..2020));
        w.fact(&id, "release_year", &y);
    }

    let mut bands = Vec::new();
    for noun in BAND_NOUN {
        let display = format!("the {noun}");
        let id = camel(&display);
        w.entity(&id, &display, "band", &["band", "artist"]);
        w.fact(&id, "formed_in", &camel(pick(rng, CITIES).0));
        bands.push(id);
    }
    let mut artists = bands.clone();
    artists.extend(people["musician"].iter().cloned());
    let mut album_titles: Vec<(usize, usize)> = (0..NOUN.len()).flat_map(|a| (0..NOUN.len()).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
    album_titles.shuffle(rng);
    for &(a, b) in album_titles.iter().take(20) {
        let display = format!("{} of the {}", NOUN[a], NOUN[b]);
        let id = camel(&display);
        w.entity(&id, &display, "album", &["creative_work", "album"]);
        w.fact(&id, "performed_by", pick(rng, &artists));
        w.fact(&id, "genre", &camel(pick(rng, ALBUM_GENRES)));
        let y = year(&mut w, rng.gen_range(1960..2020));
        w.fact(&id, "release_year", &y);
    }

    w.entity("HarryPotter", "harry potter", "character", &["character"]);
    w.fact("HarryPotter", "character_created_by", "JKRowling");
    w.fact("HarryPotter", "appears_in", "HarryPotterAndTheHiddenStone");
    let mut chars: Vec<(usize, usize)> = (0..CHARACTER_FIRST.len())
        .flat_map(|a| (0..CHARACTER_LAST.len()).map(move |b| (a, b)))
        .collect();
    chars.shuffle(rng);
    for &(a, b) in chars.iter().take(16) {
        let display = format!("{} {}", CHARACTER_FIRST[a], CHARACTER_LAST[b]);
        let id = camel(&display);
        w.entity(&id, &display, "character", &["character"]);
        let book = pick(rng, &books).clone();
        let author = w
            .triples
            .iter()
            .find(|t| t.0 == book && t.1 == "written_by")
            .map(|t| t.2.clone())
            .expect("every book has an author");
        w.fact(&id, "character_created_by", &author);
        w.fact(&id, "appears_in", &book);
    }
    w
}

fn templates_for(relation: &str, kind: &str) -> &'static [&'static str] {
    let table = match relation {
        "genre" => GENRE_TEMPLATES,
        "release_year" => RELEASE_TEMPLATES,
        _ => {
            return KINDS
                .iter()
                .find(|(r, _)| *r == relation)
                .map(|(_, t)| *t)
                .expect("templates for every relation")
        }
    };
    table.iter().find(|(k, _)| *k == kind).map(|(_, t)| *t).expect("templates for kind")
}

fn surface(rng: &mut ChaCha8Rng, template: &str, mention: &str) -> String {
    let mut q = template.replace("{}", mention);
    if rng.gen_bool(0.5) {
        let mut c = q.chars();
        if let Some(f) = c.next() {
            q = f.to_uppercase().chain(c).collect();
        }
    }
    if rng.gen_bool(0.7) {
        q.push('?');
    }
    q
}

/// Generates a corpus with `num_questions` questions split 80/20.
pub fn generate(seed: u64, num_questions: usize) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = build_world(&mut rng);

    let mut by_relation: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in w.triples.iter().enumerate() {
        by_relation.entry(t.1.as_str()).or_default().push(i);
    }
    let relations: Vec<&str> = by_relation.keys().copied().collect();
    let mut seen = BTreeSet::new();
    let mut questions = Vec::new();
    let anchor = ToyQuestion {
        question: "Who created the character Harry Potter".into(),
        subject: "HarryPotter".into(),
        relation: "character_created_by".into(),
        object: "JKRowling".into(),
    };
    seen.insert(anchor.question.to_lowercase());
    questions.push(anchor);
    let mut attempts = 0;
    while questions.len() < num_questions && attempts < num_questions * 50 {
        attempts += 1;
        let r = *pick(&mut rng, &relations);
        let &fi = pick(&mut rng, &by_relation[r]);
        let (s, rel, o) = &w.triples[fi];
        let template = *pick(&mut rng, templates_for(rel, w.kind[s]));
        let q = surface(&mut rng, template, &w.display[s]);
        let key = q.to_lowercase().trim_end_matches('?').to_owned();
        if !seen.insert(key) {
            continue;
        }
        questions.push(ToyQuestion {
            question: q,
            subject: s.clone(),
            relation: rel.clone(),
            object: o.clone(),
        });
    }
    questions.shuffle(&mut rng);
    let cut = questions.len() * 4 / 5;
    let test = questions.split_off(cut);
    let mut triples = w.triples;
    let mut dedup = BTreeSet::new();
    triples.retain(|t| dedup.insert(t.clone()));
    ToyCorpus {
        triples,
        aliases: w.aliases,
        types: w.types,
        train: questions,
        test,
    }
}

fn tsv<const N: usize>(rows: impl Iterator<Item = [String; N]>) -> String {
    let mut s = String::new();
    for row in rows {
        let _ = writeln!(s, "{}", row.join("\t"));
    }
    s
}

fn questions_tsv(qs: &[ToyQuestion]) -> String {
    tsv(qs.iter().map(|q| [q.question.clone(), q.subject.clone(), q.relation.clone(), q.object.clone()]))
}

impl ToyCorpus {
    pub fn triples_tsv(&self) -> String {
        tsv(self.triples.iter().map(|(s, r, o)| [s.clone(), r.clone(), o.clone()]))
    }

    pub fn aliases_tsv(&self) -> String {
        tsv(self.aliases.iter().map(|(e, a)| [e.clone(), a.clone()]))
    }

    pub fn types_tsv(&self) -> String {
        tsv(self.types.iter().map(|(e, t)| [e.clone(), t.clone()]))
    }

    pub fn train_tsv(&self) -> String {
        questions_tsv(&self.train)
    }

    pub fn test_tsv(&self) -> String {
        questions_tsv(&self.test)
    }

    /// Builds the knowledge base in memory.
    pub fn knowledge_base(&self) -> KnowledgeBase {
        let mut b = KbBuilder::new();
        for (s, r, o) in &self.triples {
            b.add_fact(s, r, o);
        }
        for (e, a) in &self.aliases {
            b.add_alias(e, a);
        }
        for (e, t) in &self.types {
            b.add_type(e, t);
        }
        b.build()
    }

    /// Resolves questions against `kb`, which must be this corpus's KB.
    pub fn samples(kb: &KnowledgeBase, questions: &[ToyQuestion]) -> Result<Vec<Sample>> {
        questions
            .iter()
            .map(|q| {
                let s = kb.require_entity(&q.subject)?;
                let r = kb.require_relation(&q.relation)?;
                let o = kb.require_entity(&q.object)?;
                Sample::new(kb, &q.question, s, r, Some(o))
            })
            .collect()
    }

    /// Writes `triples.tsv`, `aliases.tsv`, `types.tsv`, `train.tsv` and
    /// `test.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("triples.tsv"), self.triples_tsv())?;
        fs::write(dir.join("aliases.tsv"), self.aliases_tsv())?;
        fs::write(dir.join("types.tsv"), self.types_tsv())?;
        fs::write(dir.join("train.tsv"), self.train_tsv())?;
        fs::write(dir.join("test.tsv"), self.test_tsv())?;
        Ok(())
    }
}
