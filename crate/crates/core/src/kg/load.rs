//! TSV dataset loading.
//!
//! A dataset directory holds `train.tsv`, `valid.tsv` (or `dev.tsv`) and
//! `test.tsv` with one `head<TAB>relation<TAB>tail` record per line, using raw
//! identifiers. Optional `entities.tsv` rows are `raw_id<TAB>surface[<TAB>definition]`
//! and optional `relations.tsv` rows are `raw_id[<TAB>surface]`. Without an
//! entity or relation file the catalog is collected from the triple files in
//! order of first appearance.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clean::{clean_relation, clean_synset, normalize_whitespace};
use super::split::UnseenManifest;
use super::{Entity, EntityId, KnowledgeGraph, Relation, RelationId, Triple, UnseenEntities};
use crate::error::{Error, Result};

pub const UNSEEN_MANIFEST: &str = "unseen.json";

/// How entity surface strings are derived from the entity file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceStyle {
    /// WordNet synset names (`dog.n.01` becomes `dog noun 1`).
    Synset,
    /// Used as given, with whitespace normalized.
    #[default]
    Verbatim,
}

#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub entities: Option<PathBuf>,
    pub relations: Option<PathBuf>,
}

impl DatasetPaths {
    /// Split files are looked up as `.tsv`, then `.txt`; `dev` stands in
    /// for a missing `valid`.
    pub fn in_dir(dir: &Path) -> Self {
        let find = |names: &[&str]| {
            names
                .iter()
                .flat_map(|n| [format!("{n}.tsv"), format!("{n}.txt")])
                .map(|f| dir.join(f))
                .find(|p| p.exists())
                .unwrap_or_else(|| dir.join(format!("{}.tsv", names[0])))
        };
        let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        DatasetPaths {
            train: find(&["train"]),
            valid: find(&["valid", "dev"]),
            test: find(&["test"]),
            entities: optional("entities.tsv"),
            relations: optional("relations.tsv"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

struct RawTriple<'a> {
    line: usize,
    head: &'a str,
    rel: &'a str,
    tail: &'a str,
}

fn parse_triples<'a>(path: &Path, text: &'a str) -> Result<Vec<RawTriple<'a>>> {
    lines(text)
        .map(|(line, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            match cols.as_slice() {
                [h, r, t] => Ok(RawTriple {
                    line,
                    head: h.trim(),
                    rel: r.trim(),
                    tail: t.trim(),
                }),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
                }),
            }
        })
        .collect()
}

fn entity_surface(style: SurfaceStyle, raw: &str) -> Result<String> {
    match style {
        SurfaceStyle::Synset => clean_synset(raw),
        SurfaceStyle::Verbatim => Ok(normalize_whitespace(raw)),
    }
}

fn load_entities(path: &Path, style: SurfaceStyle) -> Result<Vec<Entity>> {
    let text = read(path)?;
    let mut out: Vec<Entity> = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    for (line, l) in lines(&text) {
        let cols: Vec<&str> = l.split('\t').collect();
        if cols.len() > 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected at most 3 columns, found {}", cols.len()),
            });
        }
        let raw_id = cols[0].trim();
        let surface_src = cols
            .get(1)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .unwrap_or(raw_id);
        let definition = cols
            .get(2)
            .map(|d| normalize_whitespace(d))
            .unwrap_or_default();
        if !ids.insert(raw_id.to_string()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("duplicate entity id `{raw_id}`"),
            });
        }
        let surface = entity_surface(style, surface_src)?;
        if surface.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("entity `{raw_id}` has an empty surface string"),
            });
        }
        out.push(Entity {
            id: EntityId(out.len() as u32),
            raw_id: raw_id.to_string(),
            surface,
            definition,
        });
    }
    Ok(out)
}

fn load_relations(path: &Path) -> Result<Vec<Relation>> {
    let text = read(path)?;
    let mut out: Vec<Relation> = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    for (line, l) in lines(&text) {
        let cols: Vec<&str> = l.split('\t').collect();
        if cols.len() > 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected at most 2 columns, found {}", cols.len()),
            });
        }
        let raw_id = cols[0].trim();
        if !ids.insert(raw_id.to_string()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("duplicate relation id `{raw_id}`"),
            });
        }
        let src = cols
            .get(1)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .unwrap_or(raw_id);
        out.push(Relation {
            id: RelationId(out.len() as u32),
            raw_id: raw_id.to_string(),
            surface: clean_relation(src)?,
        });
    }
    Ok(out)
}

/// Loads a dataset from explicit file paths.
pub fn load_dataset(paths: &DatasetPaths, style: SurfaceStyle) -> Result<KnowledgeGraph> {
    let texts = [read(&paths.train)?, read(&paths.valid)?, read(&paths.test)?];
    let split_paths = [&paths.train, &paths.valid, &paths.test];
    let raw: Vec<Vec<RawTriple<'_>>> = texts
        .iter()
        .zip(split_paths)
        .map(|(t, p)| parse_triples(p, t))
        .collect::<Result<_>>()?;

    let entities = match &paths.entities {
        Some(p) => load_entities(p, style)?,
        None => {
            let mut order: Vec<&str> = Vec::new();
            let mut seen: HashSet<&str> = HashSet::new();
            for t in raw.iter().flatten() {
                for id in [t.head, t.tail] {
                    if seen.insert(id) {
                        order.push(id);
                    }
                }
            }
            order
                .into_iter()
                .enumerate()
                .map(|(i, raw_id)| {
                    Ok(Entity {
                        id: EntityId(i as u32),
                        raw_id: raw_id.to_string(),
                        surface: entity_surface(style, raw_id)?,
                        definition: String::new(),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let relations = match &paths.relations {
        Some(p) => load_relations(p)?,
        None => {
            let mut order: Vec<&str> = Vec::new();
            let mut seen: HashSet<&str> = HashSet::new();
            for t in raw.iter().flatten() {
                if seen.insert(t.rel) {
                    order.push(t.rel);
                }
            }
            order
                .into_iter()
                .enumerate()
                .map(|(i, raw_id)| {
                    Ok(Relation {
                        id: RelationId(i as u32),
                        raw_id: raw_id.to_string(),
                        surface: clean_relation(raw_id)?,
                    })
                })
                .collect::<Result<_>>()?
        }
    };

    let ent_ix: HashMap<&str, EntityId> =
        entities.iter().map(|e| (e.raw_id.as_str(), e.id)).collect();
    let rel_ix: HashMap<&str, RelationId> = relations
        .iter()
        .map(|r| (r.raw_id.as_str(), r.id))
        .collect();

    let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for (records, path) in raw.iter().zip(split_paths) {
        let unknown = |line: usize, kind: &'static str, id: &str| Error::UnknownId {
            path: path.to_path_buf(),
            line,
            kind,
            id: id.to_string(),
        };
        let mut seen: HashSet<Triple> = HashSet::with_capacity(records.len());
        let mut out = Vec::with_capacity(records.len());
        let mut dups = 0usize;
        for r in records {
            let head = *ent_ix
                .get(r.head)
                .ok_or_else(|| unknown(r.line, "entity", r.head))?;
            let rel = *rel_ix
                .get(r.rel)
                .ok_or_else(|| unknown(r.line, "relation", r.rel))?;
            let tail = *ent_ix
                .get(r.tail)
                .ok_or_else(|| unknown(r.line, "entity", r.tail))?;
            let t = Triple { head, rel, tail };
            if seen.insert(t) {
                out.push(t);
            } else {
                dups += 1;
            }
        }
        if dups > 0 {
            log::warn!(
                "{}: dropped {dups} duplicate triple line(s)",
                path.display()
            );
        }
        splits.push(out);
    }
    let test = splits.pop().unwrap_or_default();
    let valid = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    KnowledgeGraph::new(entities, relations, train, valid, test)
}

/// Loads a dataset directory, attaching the unseen-entity manifest when the
/// directory was produced by an unseen split.
pub fn load_dataset_dir(dir: &Path, style: SurfaceStyle) -> Result<KnowledgeGraph> {
    let kg = load_dataset(&DatasetPaths::in_dir(dir), style)?;
    let manifest_path = dir.join(UNSEEN_MANIFEST);
    if !manifest_path.exists() {
        return Ok(kg);
    }
    let manifest: UnseenManifest = serde_json::from_str(&read(&manifest_path)?)?;
    let index = kg.entity_by_raw_id();
    let resolve = |ids: &[String]| -> Result<BTreeSet<EntityId>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownId {
                        path: manifest_path.clone(),
                        line: 0,
                        kind: "entity",
                        id: id.clone(),
                    })
            })
            .collect()
    };
    let unseen = UnseenEntities {
        seed: manifest.seed,
        valid: resolve(&manifest.valid_entities)?,
        test: resolve(&manifest.test_entities)?,
    };
    Ok(kg.with_unseen(unseen))
}
