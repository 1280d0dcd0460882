//! In-memory knowledge base: interned entities, relations and types, the fact
//! set, and the alias / type / adjacency indexes used by pruning and scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Cap on entities returned by an approximate alias match.
pub const APPROXIMATE_MATCH_CAP: usize = 20;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// Dense handle of an entity.
    EntityId
);
id_type!(
    /// Dense handle of a relation.
    RelationId
);
id_type!(
    /// Dense handle of an entity type.
    TypeId
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    Strict,
    Approximate,
}

#[derive(Clone, Debug, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// Case-fold, trim, collapse internal whitespace and strip leading/trailing
/// ASCII punctuation. Idempotent.
pub fn normalize_alias(text: &str) -> String {
    let lowered = text.to_lowercase();
    let trimmed =
        lowered.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `a` and `b` are within one edit: a substitution, insertion,
/// deletion, or swap of two adjacent characters.
fn within_one_edit(a: &[char], b: &[char]) -> bool {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    match long.len() - short.len() {
        0 => {
            let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
            match diffs[..] {
                [] | [_] => true,
                [i, j] => j == i + 1 && a[i] == b[j] && a[j] == b[i],
                _ => false,
            }
        }
        1 => {
            let prefix = short.iter().zip(long).take_while(|(x, y)| x == y).count();
            short[prefix..] == long[prefix + 1..]
        }
        _ => false,
    }
}

/// Summary counts reported by `build-kb`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KbStats {
    pub entities: usize,
    pub relations: usize,
    pub facts: usize,
    pub types: usize,
    pub aliases: usize,
    pub subjects: usize,
}

/// Accumulates facts, aliases and types, then freezes into a [`KnowledgeBase`].
#[derive(Clone, Debug, Default)]
pub struct KbBuilder {
    entities: Interner,
    relations: Interner,
    types: Interner,
    facts: Vec<Fact>,
    seen: HashSet<Fact>,
    aliases: Vec<(EntityId, String)>,
    entity_types: Vec<(EntityId, TypeId)>,
}

impl KbBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        EntityId(self.entities.intern(name))
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        RelationId(self.relations.intern(name))
    }

    /// Adds a fact; duplicates are dropped silently.
    pub fn add_fact(&mut self, subject: &str, relation: &str, object: &str) -> &mut Self {
        let fact = Fact {
            subject: self.entity(subject),
            relation: self.relation(relation),
            object: self.entity(object),
        };
        if self.seen.insert(fact) {
            self.facts.push(fact);
        }
        self
    }

    pub fn add_alias(&mut self, entity: &str, alias: &str) -> &mut Self {
        let id = self.entity(entity);
        self.aliases.push((id, alias.to_owned()));
        self
    }

    pub fn add_type(&mut self, entity: &str, type_name: &str) -> &mut Self {
        let id = self.entity(entity);
        let ty = TypeId(self.types.intern(type_name));
        self.entity_types.push((id, ty));
        self
    }

    pub fn build(self) -> KnowledgeBase {
        let n = self.entities.len();
        let mut adjacency: Vec<Vec<RelationId>> = vec![Vec::new(); n];
        let mut degree = vec![0u32; n];
        let mut objects: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for fact in &self.facts {
            adjacency[fact.subject.index()].push(fact.relation);
            degree[fact.subject.index()] += 1;
            objects
                .entry((fact.subject, fact.relation))
                .or_default()
                .push(fact.object);
        }
        for rels in &mut adjacency {
            rels.sort_unstable();
            rels.dedup();
        }
        for objs in objects.values_mut() {
            objs.sort_by(|a, b| {
                degree[b.index()]
                    .cmp(&degree[a.index()])
                    .then(a.cmp(b))
            });
        }

        let mut types_of: Vec<Vec<TypeId>> = vec![Vec::new(); n];
        for (e, t) in self.entity_types {
            types_of[e.index()].push(t);
        }
        for ts in &mut types_of {
            ts.sort_unstable();
            ts.dedup();
        }

        let mut alias_index: HashMap<String, Vec<EntityId>> = HashMap::new();
        let mut aliases_of: Vec<Vec<String>> = vec![Vec::new(); n];
        for (e, raw) in self.aliases {
            let alias = normalize_alias(&raw);
            if alias.is_empty() {
                continue;
            }
            let entry = alias_index.entry(alias.clone()).or_default();
            if !entry.contains(&e) {
                entry.push(e);
            }
            if !aliases_of[e.index()].contains(&alias) {
                aliases_of[e.index()].push(alias);
            }
        }
        for ents in alias_index.values_mut() {
            ents.sort_unstable();
        }
        let mut aliases_by_len: BTreeMap<usize, Vec<(Vec<char>, String)>> = BTreeMap::new();
        let mut sorted_aliases: Vec<&String> = alias_index.keys().collect();
        sorted_aliases.sort();
        for alias in sorted_aliases {
            let chars: Vec<char> = alias.chars().collect();
            aliases_by_len
                .entry(chars.len())
                .or_default()
                .push((chars, alias.clone()));
        }

        KnowledgeBase {
            entities: self.entities,
            relations: self.relations,
            types: self.types,
            facts: self.facts,
            adjacency,
            degree,
            objects,
            types_of,
            alias_index,
            aliases_of,
            aliases_by_len,
        }
    }
}

/// Immutable knowledge base. Safe for concurrent readers after construction.
#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    entities: Interner,
    relations: Interner,
    types: Interner,
    facts: Vec<Fact>,
    adjacency: Vec<Vec<RelationId>>,
    degree: Vec<u32>,
    objects: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    types_of: Vec<Vec<TypeId>>,
    alias_index: HashMap<String, Vec<EntityId>>,
    aliases_of: Vec<Vec<String>>,
    aliases_by_len: BTreeMap<usize, Vec<(Vec<char>, String)>>,
}

fn split_fields<'a>(
    line: &'a str,
    want: usize,
    path: &Path,
    line_no: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != want || fields.iter().any(|f| f.trim().is_empty()) {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message: format!(
                "expected {want} non-empty tab-separated fields, found {}",
                fields.len()
            ),
        });
    }
    Ok(fields.into_iter().map(str::trim).collect())
}

fn for_each_record(
    reader: impl BufRead,
    path: &Path,
    fields: usize,
    mut f: impl FnMut(&[&str]),
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parts = split_fields(line, fields, path, i + 1)?;
        f(&parts);
    }
    Ok(())
}

impl KnowledgeBase {
    /// Loads `triples.tsv`, `aliases.tsv` and `types.tsv`. Missing alias or
    /// type paths are treated as empty tables.
    pub fn load(
        triples: &Path,
        aliases: Option<&Path>,
        types: Option<&Path>,
    ) -> Result<Self> {
        let mut builder = KbBuilder::new();
        let open = |p: &Path| -> Result<BufReader<File>> {
            File::open(p)
                .map(BufReader::new)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
        };
        builder.read_triples(open(triples)?, triples)?;
        if let Some(p) = aliases {
            builder.read_aliases(open(p)?, p)?;
        }
        if let Some(p) = types {
            builder.read_types(open(p)?, p)?;
        }
        Ok(builder.build())
    }

    pub fn from_readers(
        triples: impl BufRead,
        aliases: impl BufRead,
        types: impl BufRead,
    ) -> Result<Self> {
        let mut builder = KbBuilder::new();
        builder.read_triples(triples, Path::new("<triples>"))?;
        builder.read_aliases(aliases, Path::new("<aliases>"))?;
        builder.read_types(types, Path::new("<types>"))?;
        Ok(builder.build())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// K, the dimension of type vectors.
    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn stats(&self) -> KbStats {
        KbStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            facts: self.facts.len(),
            types: self.num_types(),
            aliases: self.alias_index.len(),
            subjects: self.degree.iter().filter(|&&d| d > 0).count(),
        }
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.types.get(name).map(TypeId)
    }

    pub fn require_entity(&self, name: &str) -> Result<EntityId> {
        self.entity_id(name).ok_or_else(|| Error::Lookup {
            kind: "entity",
            name: name.to_owned(),
        })
    }

    pub fn require_relation(&self, name: &str) -> Result<RelationId> {
        self.relation_id(name).ok_or_else(|| Error::Lookup {
            kind: "relation",
            name: name.to_owned(),
        })
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities.names[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations.names[id.index()]
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.types.names[id.index()]
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.num_entities() as u32).map(EntityId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.num_relations() as u32).map(RelationId)
    }

    pub fn check_entity(&self, id: EntityId) -> Result<()> {
        if id.index() < self.num_entities() {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "entity id",
                name: id.0.to_string(),
            })
        }
    }

    pub fn check_relation(&self, id: RelationId) -> Result<()> {
        if id.index() < self.num_relations() {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "relation id",
                name: id.0.to_string(),
            })
        }
    }

    /// Relations `r` with `s -> r`, sorted by id.
    pub fn adjacency(&self, s: EntityId) -> &[RelationId] {
        self.adjacency.get(s.index()).map_or(&[], Vec::as_slice)
    }

    /// Number of facts with `s` as subject.
    pub fn degree(&self, s: EntityId) -> u32 {
        self.degree.get(s.index()).copied().unwrap_or(0)
    }

    pub fn types_of(&self, s: EntityId) -> &[TypeId] {
        self.types_of.get(s.index()).map_or(&[], Vec::as_slice)
    }

    /// Normalized aliases attached to `s`.
    pub fn aliases_of(&self, s: EntityId) -> &[String] {
        self.aliases_of.get(s.index()).map_or(&[], Vec::as_slice)
    }

    /// The indicator `s -> r`.
    pub fn has_relation(&self, s: EntityId, r: RelationId) -> Result<bool> {
        self.check_entity(s)?;
        self.check_relation(r)?;
        Ok(self.adjacency[s.index()].binary_search(&r).is_ok())
    }

    /// Binary bag-of-types vector of length K.
    pub fn type_vector(&self, s: EntityId) -> Vec<u8> {
        let mut v = vec![0u8; self.num_types()];
        for t in self.types_of(s) {
            v[t.index()] = 1;
        }
        v
    }

    /// Objects of `(s, r)` ordered by descending degree, then id.
    pub fn lookup_objects(&self, s: EntityId, r: RelationId) -> &[EntityId] {
        self.objects.get(&(s, r)).map_or(&[], Vec::as_slice)
    }

    /// Entities whose alias matches `text`. Results are sorted by id, except
    /// for approximate fallbacks which are ordered by descending degree.
    pub fn match_alias(&self, text: &str, mode: MatchMode) -> Vec<EntityId> {
        let key = normalize_alias(text);
        if key.is_empty() {
            return Vec::new();
        }
        if let Some(hits) = self.alias_index.get(&key) {
            return hits.clone();
        }
        match mode {
            MatchMode::Strict => Vec::new(),
            MatchMode::Approximate => self.approximate_match(&key),
        }
    }

    fn approximate_match(&self, key: &str) -> Vec<EntityId> {
        let query: Vec<char> = key.chars().collect();
        let lo = query.len().saturating_sub(1);
        let hi = query.len() + 1;
        let mut hits: Vec<EntityId> = Vec::new();
        for (_, bucket) in self.aliases_by_len.range(lo..=hi) {
            for (chars, alias) in bucket {
                if within_one_edit(&query, chars) {
                    hits.extend_from_slice(&self.alias_index[alias]);
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits.sort_by(|a, b| {
            self.degree(*b)
                .cmp(&self.degree(*a))
                .then(a.cmp(b))
        });
        hits.truncate(APPROXIMATE_MATCH_CAP);
        hits
    }
}

impl KbBuilder {
    pub fn read_triples(&mut self, reader: impl BufRead, path: &Path) -> Result<()> {
        for_each_record(reader, path, 3, |f| {
            self.add_fact(f[0], f[1], f[2]);
        })
    }

    pub fn read_aliases(&mut self, reader: impl BufRead, path: &Path) -> Result<()> {
        for_each_record(reader, path, 2, |f| {
            self.add_alias(f[0], f[1]);
        })
    }

    pub fn read_types(&mut self, reader: impl BufRead, path: &Path) -> Result<()> {
        for_each_record(reader, path, 2, |f| {
            self.add_type(f[0], f[1]);
        })
    }
}
