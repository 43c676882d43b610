use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TokenId, Tokenizer, Vocabulary};
use crate::error::{Error, Result};
use crate::kg::{Entity, KnowledgeGraph};

/// Every entity as a row of token ids right-padded to the longest entity.
///
/// All rows share the width `l_max`, so a masked span of `l_max` tokens can
/// stand for any entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityCatalog {
    tokens: Vec<TokenId>,
    lengths: Vec<u32>,
    l_max: usize,
    pad: TokenId,
    vocab_size: usize,
}

impl EntityCatalog {
    /// Builds a catalog from unpadded rows. Rows must be non-empty, must not
    /// contain the pad id and must only use ids below `vocab_size`.
    pub fn from_rows<R: AsRef<[TokenId]>>(
        rows: &[R],
        pad: TokenId,
        vocab_size: usize,
    ) -> Result<Self> {
        let l_max = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(rows.len() * l_max);
        let mut lengths = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.is_empty() {
                return Err(Error::EmptyEntity {
                    id: i as u32,
                    surface: String::new(),
                });
            }
            if let Some(&bad) = row.iter().find(|&&t| t == pad || t as usize >= vocab_size) {
                return Err(Error::Vocab(format!(
                    "entity {i}: token id {bad} is pad or outside a vocabulary of {vocab_size}"
                )));
            }
            tokens.extend_from_slice(row);
            tokens.resize(tokens.len() + l_max - row.len(), pad);
            lengths.push(row.len() as u32);
        }
        Ok(EntityCatalog {
            tokens,
            lengths,
            l_max,
            pad,
            vocab_size,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    /// The row-major `len() x l_max` id matrix.
    pub fn token_matrix(&self) -> &[TokenId] {
        &self.tokens
    }

    /// Padded row `i`.
    pub fn row(&self, i: usize) -> &[TokenId] {
        &self.tokens[i * self.l_max..(i + 1) * self.l_max]
    }

    /// Row `i` without padding.
    pub fn entity_tokens(&self, i: usize) -> &[TokenId] {
        &self.row(i)[..self.lengths[i] as usize]
    }

    /// Same entities padded to a wider `l_max`.
    pub fn widened(&self, l_max: usize) -> Self {
        assert!(l_max >= self.l_max, "cannot narrow a catalog");
        let rows: Vec<&[TokenId]> = (0..self.len()).map(|i| self.entity_tokens(i)).collect();
        let mut tokens = Vec::with_capacity(rows.len() * l_max);
        for r in &rows {
            tokens.extend_from_slice(r);
            tokens.resize(tokens.len() + l_max - r.len(), self.pad);
        }
        EntityCatalog {
            tokens,
            l_max,
            ..self.clone()
        }
    }

    /// Writes one `{entity_id, token_ids}` JSON line per entity.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for i in 0..self.len() {
            let rec = CatalogRecord {
                entity_id: i as u32,
                token_ids: self.entity_tokens(i).to_vec(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub entity_id: u32,
    pub token_ids: Vec<TokenId>,
}

/// Builds the catalog by tokenizing every entity surface string.
pub fn build_catalog(
    tokenizer: &dyn Tokenizer,
    vocab: &Vocabulary,
    entities: &[Entity],
) -> Result<EntityCatalog> {
    let rows: Vec<Vec<TokenId>> = entities
        .iter()
        .map(|e| {
            let ids = tokenizer.tokenize(&e.surface);
            if ids.is_empty() {
                Err(Error::EmptyEntity {
                    id: e.id.0,
                    surface: e.surface.clone(),
                })
            } else {
                Ok(ids)
            }
        })
        .collect::<Result<_>>()?;
    EntityCatalog::from_rows(&rows, Vocabulary::PAD, vocab.len())
}

/// One line of a pre-tokenized catalog produced by an external tokenizer.
///
/// Entity lines carry the surface ids used as the catalog row, and optionally
/// the ids of the surface when it follows other text (`inner_ids`) and of the
/// definition. Relation lines carry the relation ids at the start of a
/// segment and optionally after other text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PretokenizedRecord {
    Entity {
        entity_id: u32,
        token_ids: Vec<TokenId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner_ids: Option<Vec<TokenId>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        definition_ids: Vec<TokenId>,
    },
    Relation {
        relation_id: u32,
        token_ids: Vec<TokenId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner_ids: Option<Vec<TokenId>>,
    },
}

/// Lead ids, optional inner ids and definition ids of one entity.
type EntityIds = (Vec<TokenId>, Option<Vec<TokenId>>, Vec<TokenId>);

/// Token ids for every string a prompt can contain.
///
/// "Lead" forms start a text segment, "inner" forms follow earlier text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedKg {
    pub surfaces: Vec<Vec<TokenId>>,
    pub surfaces_inner: Vec<Vec<TokenId>>,
    pub definitions: Vec<Vec<TokenId>>,
    pub relations: Vec<Vec<TokenId>>,
    pub relations_inner: Vec<Vec<TokenId>>,
    pub vocab_size: usize,
}

impl TokenizedKg {
    pub fn from_tokenizer(
        tokenizer: &dyn Tokenizer,
        vocab: &Vocabulary,
        kg: &KnowledgeGraph,
    ) -> Self {
        let ents = kg.entities();
        let rels = kg.relations();
        TokenizedKg {
            surfaces: ents
                .iter()
                .map(|e| tokenizer.tokenize(&e.surface))
                .collect(),
            surfaces_inner: ents
                .iter()
                .map(|e| tokenizer.tokenize_inner(&e.surface))
                .collect(),
            definitions: ents
                .iter()
                .map(|e| tokenizer.tokenize_inner(&e.definition))
                .collect(),
            relations: rels
                .iter()
                .map(|r| tokenizer.tokenize(&r.surface))
                .collect(),
            relations_inner: rels
                .iter()
                .map(|r| tokenizer.tokenize_inner(&r.surface))
                .collect(),
            vocab_size: vocab.len(),
        }
    }

    /// Loads externally tokenized ids. Every entity and relation of `kg`
    /// needs a record.
    pub fn load_pretokenized(path: &Path, vocab: &Vocabulary, kg: &KnowledgeGraph) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ents: HashMap<u32, EntityIds> = HashMap::new();
        let mut rels: HashMap<u32, (Vec<TokenId>, Option<Vec<TokenId>>)> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: PretokenizedRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            match rec {
                PretokenizedRecord::Entity {
                    entity_id,
                    token_ids,
                    inner_ids,
                    definition_ids,
                } => {
                    ents.insert(entity_id, (token_ids, inner_ids, definition_ids));
                }
                PretokenizedRecord::Relation {
                    relation_id,
                    token_ids,
                    inner_ids,
                } => {
                    rels.insert(relation_id, (token_ids, inner_ids));
                }
            }
        }
        let v = vocab.len();
        let check = |what: String, ids: &[TokenId]| -> Result<()> {
            match ids.iter().find(|&&t| t as usize >= v) {
                Some(t) => Err(Error::Vocab(format!(
                    "{what}: token id {t} outside vocabulary of {v}"
                ))),
                None => Ok(()),
            }
        };

        let mut out = TokenizedKg {
            surfaces: Vec::with_capacity(kg.num_entities()),
            surfaces_inner: Vec::with_capacity(kg.num_entities()),
            definitions: Vec::with_capacity(kg.num_entities()),
            relations: Vec::with_capacity(kg.num_relations()),
            relations_inner: Vec::with_capacity(kg.num_relations()),
            vocab_size: v,
        };
        for e in kg.entities() {
            let (lead, inner, def) = ents.remove(&e.id.0).ok_or_else(|| {
                Error::MissingTokens(format!("entity {} (`{}`)", e.id, e.surface))
            })?;
            let inner = inner.unwrap_or_else(|| lead.clone());
            for ids in [&lead, &inner, &def] {
                check(format!("entity {}", e.id), ids)?;
            }
            out.surfaces.push(lead);
            out.surfaces_inner.push(inner);
            out.definitions.push(def);
        }
        for r in kg.relations() {
            let (lead, inner) = rels.remove(&r.id.0).ok_or_else(|| {
                Error::MissingTokens(format!("relation {} (`{}`)", r.id, r.surface))
            })?;
            let inner = inner.unwrap_or_else(|| lead.clone());
            check(format!("relation {}", r.id), &lead)?;
            check(format!("relation {}", r.id), &inner)?;
            out.relations.push(lead);
            out.relations_inner.push(inner);
        }
        Ok(out)
    }

    /// The padded entity catalog over the surface ids.
    pub fn catalog(&self, kg: &KnowledgeGraph) -> Result<EntityCatalog> {
        if let Some((i, _)) = self.surfaces.iter().enumerate().find(|(_, s)| s.is_empty()) {
            return Err(Error::EmptyEntity {
                id: i as u32,
                surface: kg
                    .entities()
                    .get(i)
                    .map(|e| e.surface.clone())
                    .unwrap_or_default(),
            });
        }
        EntityCatalog::from_rows(&self.surfaces, Vocabulary::PAD, self.vocab_size)
    }
}
