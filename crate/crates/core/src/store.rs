//! In-memory knowledge-graph store.
//!
//! Loads Wikidata5M-style tab-separated dumps: a triples file with
//! `head<TAB>relation<TAB>tail` lines and alias files with
//! `id<TAB>label<TAB>alias...` lines. Every triple is indexed from both
//! endpoints so that neighbor expansion is a single slice lookup.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// How malformed or dangling input lines are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    /// Reject the first malformed line, and triples whose ids are not known.
    Strict,
    /// Skip malformed lines and create empty-label stubs for dangling ids.
    #[default]
    Lenient,
}

impl FromStr for IngestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Self::Strict),
            "lenient" => Ok(Self::Lenient),
            other => Err(format!("unknown ingest mode `{other}` (expected strict|lenient)")),
        }
    }
}

/// Line accounting for a single ingest call.
///
/// `loaded + skipped + duplicates` equals the number of lines read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: usize,
    /// Lines that repeated an already stored triple or record id.
    pub duplicates: usize,
}

impl IngestReport {
    pub fn lines(&self) -> usize {
        self.loaded + self.skipped + self.duplicates
    }
}

impl std::ops::Add for IngestReport {
    type Output = IngestReport;

    fn add(self, rhs: Self) -> Self {
        IngestReport {
            loaded: self.loaded + rhs.loaded,
            skipped: self.skipped + rhs.skipped,
            duplicates: self.duplicates + rhs.duplicates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub label: String,
    pub description: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub label: String,
    pub description: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Orientation of a traversed edge relative to the entity it was reached from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The entity is the head of the stored triple.
    Outgoing,
    /// The entity is the tail of the stored triple.
    Incoming,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Entity,
    Relation,
}

/// A borrowed view of a stored entity or relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record<'a> {
    Entity(&'a Entity),
    Relation(&'a Relation),
}

impl Record<'_> {
    pub fn label(&self) -> &str {
        match self {
            Record::Entity(e) => &e.label,
            Record::Relation(r) => &r.label,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub entity_count: usize,
    pub relation_count: usize,
    pub triple_count: usize,
    pub max_degree: usize,
}

/// One incident edge as returned by [`KgStore::neighbors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor<'a> {
    pub relation: &'a str,
    pub neighbor: &'a str,
    pub direction: Direction,
}

/// Compact adjacency entry; indices point into the store's entity and
/// relation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Edge {
    pub relation: u32,
    pub neighbor: u32,
    pub direction: Direction,
}

#[derive(Debug, Default)]
pub struct KgStore {
    entities: Vec<Entity>,
    entity_ix: HashMap<String, u32>,
    relations: Vec<Relation>,
    relation_ix: HashMap<String, u32>,
    triples: Vec<(u32, u32, u32)>,
    triple_set: HashSet<(u32, u32, u32)>,
    adjacency: Vec<Vec<Edge>>,
    label_ix: HashMap<String, Vec<u32>>,
}

fn open_lines(path: &Path) -> Result<BufReader<File>, StoreError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Iterates over the lines of a dump file, calling `handle` with the
/// 1-based line number and the line stripped of its terminator.
fn for_each_line<F>(path: &Path, mut handle: F) -> Result<(), StoreError>
where
    F: FnMut(usize, &str) -> Result<(), StoreError>,
{
    let mut reader = open_lines(path)?;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 0 {
            return Ok(());
        }
        line_no += 1;
        handle(line_no, buf.trim_end_matches(['\n', '\r']))?;
    }
}

impl KgStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `head<TAB>relation<TAB>tail` lines.
    pub fn ingest_triples(&mut self, path: &Path, mode: IngestMode) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        for_each_line(path, |line_no, line| {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let malformed = if line.trim().is_empty() {
                Some("empty line".to_string())
            } else if fields.len() != 3 {
                Some(format!("expected 3 tab-separated fields, found {}", fields.len()))
            } else if fields.iter().any(|f| f.is_empty()) {
                Some("empty id field".to_string())
            } else {
                None
            };
            if let Some(message) = malformed {
                return match mode {
                    IngestMode::Strict if !line.trim().is_empty() => Err(StoreError::Format {
                        path: path.to_path_buf(),
                        line: line_no,
                        message,
                    }),
                    _ => {
                        report.skipped += 1;
                        Ok(())
                    }
                };
            }
            let (head, relation, tail) = (fields[0], fields[1], fields[2]);
            if mode == IngestMode::Strict {
                let unknown = [(head, "entity"), (relation, "relation"), (tail, "entity")]
                    .into_iter()
                    .find(|(id, kind)| match *kind {
                        "relation" => !self.relation_ix.contains_key(*id),
                        _ => !self.entity_ix.contains_key(*id),
                    });
                if let Some((id, kind)) = unknown {
                    return Err(StoreError::Format {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!("unknown {kind} id `{id}`"),
                    });
                }
            }
            if self.insert_triple(head, relation, tail) {
                report.loaded += 1;
            } else {
                report.duplicates += 1;
            }
            Ok(())
        })?;
        Ok(report)
    }

    /// Loads entity and relation alias files (`id<TAB>label<TAB>alias...`).
    ///
    /// The first name on a line becomes the label when the record has none
    /// yet; every other name is kept as an alias.
    pub fn ingest_labels(
        &mut self,
        entities_path: &Path,
        relations_path: &Path,
        mode: IngestMode,
    ) -> Result<IngestReport, StoreError> {
        let entities = self.ingest_alias_file(entities_path, RecordKind::Entity, mode)?;
        let relations = self.ingest_alias_file(relations_path, RecordKind::Relation, mode)?;
        Ok(entities + relations)
    }

    fn ingest_alias_file(
        &mut self,
        path: &Path,
        kind: RecordKind,
        mode: IngestMode,
    ) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        for_each_line(path, |line_no, line| {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
                if mode == IngestMode::Strict && !line.trim().is_empty() {
                    return Err(StoreError::Format {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: "expected `id<TAB>label[<TAB>alias...]`".into(),
                    });
                }
                report.skipped += 1;
                return Ok(());
            }
            let names: Vec<&str> = fields[1..].iter().copied().filter(|n| !n.is_empty()).collect();
            let (existed, labeled) = match kind {
                RecordKind::Entity => {
                    let existed = self.entity_ix.contains_key(fields[0]);
                    let ix = self.intern_entity(fields[0]);
                    let labeled = !self.entities[ix as usize].label.is_empty();
                    let entity = &mut self.entities[ix as usize];
                    let added = merge_names(&mut entity.label, &mut entity.aliases, &names);
                    for name in added {
                        let bucket = self.label_ix.entry(name.to_lowercase()).or_default();
                        if !bucket.contains(&ix) {
                            bucket.push(ix);
                        }
                    }
                    (existed, labeled)
                }
                RecordKind::Relation => {
                    let existed = self.relation_ix.contains_key(fields[0]);
                    let ix = self.intern_relation(fields[0]) as usize;
                    let labeled = !self.relations[ix].label.is_empty();
                    let rel = &mut self.relations[ix];
                    merge_names(&mut rel.label, &mut rel.aliases, &names);
                    (existed, labeled)
                }
            };
            // a stub created by a lenient triple ingest counts as a fresh record
            if existed && labeled {
                report.duplicates += 1;
            } else {
                report.loaded += 1;
            }
            Ok(())
        })?;
        Ok(report)
    }

    /// Loads optional `id<TAB>description` lines for known entities or relations.
    pub fn ingest_descriptions(&mut self, path: &Path, mode: IngestMode) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        for_each_line(path, |line_no, line| {
            let (id, description) = match line.split_once('\t') {
                Some((id, d)) if !id.trim().is_empty() => (id.trim(), d.trim()),
                _ => {
                    if mode == IngestMode::Strict && !line.trim().is_empty() {
                        return Err(StoreError::Format {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: "expected `id<TAB>description`".into(),
                        });
                    }
                    report.skipped += 1;
                    return Ok(());
                }
            };
            if let Some(&ix) = self.entity_ix.get(id) {
                self.entities[ix as usize].description = description.to_string();
            } else if let Some(&ix) = self.relation_ix.get(id) {
                self.relations[ix as usize].description = description.to_string();
            } else if mode == IngestMode::Strict {
                return Err(StoreError::Format {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("description for unknown id `{id}`"),
                });
            } else {
                report.skipped += 1;
                return Ok(());
            }
            report.loaded += 1;
            Ok(())
        })?;
        Ok(report)
    }

    /// Adds a triple, creating stubs for unseen ids. Returns false when the
    /// triple was already stored.
    pub fn insert_triple(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        if !self.triple_set.insert((h, r, t)) {
            return false;
        }
        self.triples.push((h, r, t));
        self.adjacency[h as usize].push(Edge {
            relation: r,
            neighbor: t,
            direction: Direction::Outgoing,
        });
        self.adjacency[t as usize].push(Edge {
            relation: r,
            neighbor: h,
            direction: Direction::Incoming,
        });
        true
    }

    fn intern_entity(&mut self, id: &str) -> u32 {
        if let Some(&ix) = self.entity_ix.get(id) {
            return ix;
        }
        let ix = self.entities.len() as u32;
        self.entities.push(Entity {
            id: id.to_string(),
            label: String::new(),
            description: String::new(),
            aliases: Vec::new(),
        });
        self.adjacency.push(Vec::new());
        self.entity_ix.insert(id.to_string(), ix);
        ix
    }

    fn intern_relation(&mut self, id: &str) -> u32 {
        if let Some(&ix) = self.relation_ix.get(id) {
            return ix;
        }
        let ix = self.relations.len() as u32;
        self.relations.push(Relation {
            id: id.to_string(),
            label: String::new(),
            description: String::new(),
            aliases: Vec::new(),
        });
        self.relation_ix.insert(id.to_string(), ix);
        ix
    }

    /// Every triple incident to `entity_id`. Unknown ids have no neighbors.
    pub fn neighbors(&self, entity_id: &str) -> Vec<Neighbor<'_>> {
        let Some(&ix) = self.entity_ix.get(entity_id) else {
            return Vec::new();
        };
        self.adjacency[ix as usize]
            .iter()
            .map(|e| Neighbor {
                relation: &self.relations[e.relation as usize].id,
                neighbor: &self.entities[e.neighbor as usize].id,
                direction: e.direction,
            })
            .collect()
    }

    pub fn degree(&self, entity_id: &str) -> usize {
        self.entity_ix
            .get(entity_id)
            .map_or(0, |&ix| self.adjacency[ix as usize].len())
    }

    /// Case-insensitive match against entity labels and aliases, ids sorted.
    pub fn resolve_label(&self, label: &str) -> Vec<String> {
        let key = label.trim().to_lowercase();
        let mut ids: Vec<String> = self
            .label_ix
            .get(&key)
            .into_iter()
            .flatten()
            .map(|&ix| self.entities[ix as usize].id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn lookup(&self, id: &str, kind: RecordKind) -> Option<Record<'_>> {
        match kind {
            RecordKind::Entity => self.entity(id).map(Record::Entity),
            RecordKind::Relation => self.relation(id).map(Record::Relation),
        }
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entity_ix.get(id).map(|&ix| &self.entities[ix as usize])
    }

    pub fn relation(&self, id: &str) -> Option<&Relation> {
        self.relation_ix.get(id).map(|&ix| &self.relations[ix as usize])
    }

    pub fn contains_triple(&self, head: &str, relation: &str, tail: &str) -> bool {
        match (
            self.entity_ix.get(head),
            self.relation_ix.get(relation),
            self.entity_ix.get(tail),
        ) {
            (Some(&h), Some(&r), Some(&t)) => self.triple_set.contains(&(h, r, t)),
            _ => false,
        }
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter()
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.iter()
    }

    /// Stored triples in insertion order.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.triples.iter().map(|&(h, r, t)| Triple {
            head: self.entities[h as usize].id.clone(),
            relation: self.relations[r as usize].id.clone(),
            tail: self.entities[t as usize].id.clone(),
        })
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            entity_count: self.entities.len(),
            relation_count: self.relations.len(),
            triple_count: self.triples.len(),
            max_degree: self.adjacency.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// Label of an entity or relation id, falling back to the id itself.
    pub fn display_label<'a>(&'a self, id: &'a str) -> &'a str {
        let label = self
            .entity(id)
            .map(|e| e.label.as_str())
            .or_else(|| self.relation(id).map(|r| r.label.as_str()))
            .unwrap_or("");
        if label.is_empty() {
            id
        } else {
            label
        }
    }

    pub(crate) fn entity_index(&self, id: &str) -> Option<u32> {
        self.entity_ix.get(id).copied()
    }

    pub(crate) fn edges(&self, ix: u32) -> &[Edge] {
        &self.adjacency[ix as usize]
    }

    pub(crate) fn entity_id(&self, ix: u32) -> &str {
        &self.entities[ix as usize].id
    }

    pub(crate) fn relation_id(&self, ix: u32) -> &str {
        &self.relations[ix as usize].id
    }
}

/// Folds `names` into a label/alias pair. Returns every name that was newly
/// attached so the caller can index it.
fn merge_names(label: &mut String, aliases: &mut Vec<String>, names: &[&str]) -> Vec<String> {
    let mut added = Vec::new();
    for name in names {
        if label.is_empty() {
            *label = name.to_string();
            added.push(name.to_string());
        } else if label != name && !aliases.iter().any(|a| a == name) {
            aliases.push(name.to_string());
            added.push(name.to_string());
        }
    }
    added
}
