//! Queries and the masked-LM input layout.
//!
//! Predicting a tail feeds `<s> head-surface head-definition relation <mask>×L </s>`;
//! predicting a head feeds `<s> <mask>×L relation tail-surface tail-definition </s>`,
//! where `L` is the catalog width. When a prompt exceeds the sequence
//! budget, the known entity's definition is cut from its end.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, SplitKind, Triple};
use crate::tokenizer::{EntityCatalog, TokenId, TokenizedKg, Vocabulary};

pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    PredictHead,
    PredictTail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Both directions for every triple.
    Standard,
    /// Only the sides holding a held-out entity.
    Unseen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    pub triple: Triple,
    pub direction: Direction,
}

/// Mixed-radix id `((head * R + rel) * N + tail) * 2 + direction`, unique per
/// (triple, direction) for a fixed catalog size.
pub fn query_id(
    triple: &Triple,
    direction: Direction,
    n_entities: usize,
    n_relations: usize,
) -> Result<u64> {
    let overflow = || Error::QueryIdOverflow {
        entities: n_entities,
        relations: n_relations,
    };
    let (n, m) = (n_entities as u64, n_relations as u64);
    let dir = match direction {
        Direction::PredictHead => 0,
        Direction::PredictTail => 1,
    };
    (triple.head.0 as u64)
        .checked_mul(m)
        .and_then(|x| x.checked_add(triple.rel.0 as u64))
        .and_then(|x| x.checked_mul(n))
        .and_then(|x| x.checked_add(triple.tail.0 as u64))
        .and_then(|x| x.checked_mul(2))
        .and_then(|x| x.checked_add(dir))
        .ok_or_else(overflow)
}

impl Query {
    pub fn new(triple: Triple, direction: Direction, kg: &KnowledgeGraph) -> Result<Self> {
        Ok(Query {
            query_id: query_id(&triple, direction, kg.num_entities(), kg.num_relations())?,
            triple,
            direction,
        })
    }

    /// The entity being predicted.
    pub fn gold(&self) -> EntityId {
        match self.direction {
            Direction::PredictHead => self.triple.head,
            Direction::PredictTail => self.triple.tail,
        }
    }

    /// The entity given in the prompt.
    pub fn known(&self) -> EntityId {
        match self.direction {
            Direction::PredictHead => self.triple.tail,
            Direction::PredictTail => self.triple.head,
        }
    }
}

/// Queries evaluated for one split.
pub fn queries_for_split(
    kg: &KnowledgeGraph,
    split: SplitKind,
    mode: EvalMode,
) -> Result<Vec<Query>> {
    let triples = kg.split(split);
    let mut out = Vec::with_capacity(triples.len() * 2);
    match mode {
        EvalMode::Standard => {
            for t in triples {
                out.push(Query::new(*t, Direction::PredictTail, kg)?);
                out.push(Query::new(*t, Direction::PredictHead, kg)?);
            }
        }
        EvalMode::Unseen => {
            let unseen = kg.unseen().ok_or_else(|| {
                Error::Config("unseen mode needs a dataset produced by an unseen split".into())
            })?;
            for t in triples {
                let (head, tail) = unseen.unseen_sides(split, t);
                if tail {
                    out.push(Query::new(*t, Direction::PredictTail, kg)?);
                }
                if head {
                    out.push(Query::new(*t, Direction::PredictHead, kg)?);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PromptConfig {
    pub max_seq_len: usize,
    /// Right-pad every prompt to exactly `max_seq_len`.
    pub pad_to_max: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            pad_to_max: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub query_id: u64,
    pub tokens: Vec<TokenId>,
    pub mask_start: usize,
    pub mask_len: usize,
}

impl Prompt {
    pub fn mask_span(&self) -> std::ops::Range<usize> {
        self.mask_start..self.mask_start + self.mask_len
    }
}

pub fn build_prompt(
    tokens: &TokenizedKg,
    catalog: &EntityCatalog,
    query: &Query,
    config: &PromptConfig,
) -> Result<Prompt> {
    let l_max = catalog.l_max();
    let known = query.known().index();
    let rel = query.triple.rel.index();
    let (surface, relation) = match query.direction {
        Direction::PredictTail => (&tokens.surfaces[known], &tokens.relations_inner[rel]),
        Direction::PredictHead => (&tokens.surfaces_inner[known], &tokens.relations[rel]),
    };
    let definition = &tokens.definitions[known];

    let fixed = 2 + l_max + surface.len() + relation.len();
    if fixed > config.max_seq_len {
        return Err(Error::PromptOverflow {
            query_id: query.query_id,
            needed: fixed,
            max: config.max_seq_len,
        });
    }
    let definition = &definition[..definition.len().min(config.max_seq_len - fixed)];

    let mut ids = Vec::with_capacity(if config.pad_to_max {
        config.max_seq_len
    } else {
        fixed + definition.len()
    });
    ids.push(Vocabulary::BOS);
    let mask_start = match query.direction {
        Direction::PredictTail => {
            ids.extend_from_slice(surface);
            ids.extend_from_slice(definition);
            ids.extend_from_slice(relation);
            let start = ids.len();
            ids.resize(start + l_max, Vocabulary::MASK);
            start
        }
        Direction::PredictHead => {
            ids.resize(1 + l_max, Vocabulary::MASK);
            ids.extend_from_slice(relation);
            ids.extend_from_slice(surface);
            ids.extend_from_slice(definition);
            1
        }
    };
    ids.push(Vocabulary::EOS);
    if config.pad_to_max {
        ids.resize(config.max_seq_len, Vocabulary::PAD);
    }
    Ok(Prompt {
        query_id: query.query_id,
        tokens: ids,
        mask_start,
        mask_len: l_max,
    })
}

/// Human-readable prompt with `<s>`, `<mask>`, `</s>` and `<pad>` markers.
pub fn render_prompt(vocab: &Vocabulary, prompt: &Prompt) -> String {
    vocab.render(&prompt.tokens)
}

/// One line of the prompt file handed to the masked LM.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub query_id: u64,
    pub direction: Direction,
    pub triple: Triple,
    pub token_ids: Vec<TokenId>,
    pub mask_start: usize,
}

impl PromptRecord {
    pub fn new(query: &Query, prompt: &Prompt) -> Self {
        PromptRecord {
            query_id: query.query_id,
            direction: query.direction,
            triple: query.triple,
            token_ids: prompt.tokens.clone(),
            mask_start: prompt.mask_start,
        }
    }
}

pub fn write_prompts_jsonl(path: &Path, records: &[PromptRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_prompts_jsonl(path: &Path) -> Result<Vec<PromptRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, Relation, RelationId};
    use crate::tokenizer::{GreedyTokenizer, TokenizedKg};
    use std::collections::HashSet;

    /// The two worked WordNet examples plus padding entities to widen the catalog.
    fn wordnet_kg() -> KnowledgeGraph {
        let ents = [
            (
                "matchmaker.n.01",
                "matchmaker noun 1",
                "someone who arranges marriages",
            ),
            (
                "mediator.n.01",
                "mediator noun 1",
                "a negotiator who acts as a link between parties",
            ),
            ("grant.n.01", "grant noun 1", "any monetary aid"),
            (
                "aid.n.03",
                "aid noun 3",
                "money to support a worthy person or cause",
            ),
            ("long.n.01", "a b c d e f g h", ""),
        ];
        let entities = ents
            .iter()
            .enumerate()
            .map(|(i, (raw, s, d))| Entity {
                id: EntityId(i as u32),
                raw_id: raw.to_string(),
                surface: s.to_string(),
                definition: d.to_string(),
            })
            .collect();
        let relations = vec![Relation {
            id: RelationId(0),
            raw_id: "_hypernym".into(),
            surface: "hypernym".into(),
        }];
        KnowledgeGraph::new(
            entities,
            relations,
            vec![],
            vec![],
            vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)],
        )
        .unwrap()
    }

    fn setup() -> (KnowledgeGraph, Vocabulary, TokenizedKg, EntityCatalog) {
        let kg = wordnet_kg();
        let texts = kg
            .entities()
            .iter()
            .flat_map(|e| [e.surface.as_str(), e.definition.as_str()])
            .chain(kg.relations().iter().map(|r| r.surface.as_str()));
        let vocab = Vocabulary::word_level(texts);
        let tok = GreedyTokenizer::new(&vocab).unwrap();
        let tk = TokenizedKg::from_tokenizer(&tok, &vocab, &kg);
        let catalog = tk.catalog(&kg).unwrap();
        (kg, vocab, tk, catalog)
    }

    #[test]
    fn predict_head_layout() {
        let (kg, vocab, tk, catalog) = setup();
        assert_eq!(catalog.l_max(), 8);
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictHead, &kg).unwrap();
        let cfg = PromptConfig {
            max_seq_len: 40,
            pad_to_max: true,
        };
        let p = build_prompt(&tk, &catalog, &q, &cfg).unwrap();
        assert_eq!(p.tokens.len(), 40);
        assert_eq!(p.mask_span(), 1..9);
        let text = render_prompt(&vocab, &p);
        let expected = format!(
            "<s>{}hypernym mediator noun 1 a negotiator who acts as a link between parties</s>",
            "<mask>".repeat(8)
        );
        assert!(text.starts_with(&expected), "{text}");
        assert!(text[expected.len()..].chars().count() > 0);
        assert_eq!(
            text[expected.len()..],
            "<pad>".repeat(40 - vocab.encode_with_markers(&expected).len())
        );
    }

    #[test]
    fn predict_tail_layout() {
        let (kg, vocab, tk, catalog) = setup();
        let q = Query::new(Triple::new(2, 0, 3), Direction::PredictTail, &kg).unwrap();
        let p = build_prompt(&tk, &catalog, &q, &PromptConfig::default()).unwrap();
        let text = render_prompt(&vocab, &p);
        assert_eq!(
            text,
            format!(
                "<s>grant noun 1 any monetary aid hypernym{}</s>",
                "<mask>".repeat(8)
            )
        );
        assert_eq!(&p.tokens[p.mask_span()], &[Vocabulary::MASK; 8]);
        assert_eq!(vocab.encode_with_markers(&text), p.tokens);
    }

    #[test]
    fn empty_definition_contributes_nothing() {
        let (kg, _, tk, catalog) = setup();
        let q = Query::new(Triple::new(4, 0, 0), Direction::PredictTail, &kg).unwrap();
        let p = build_prompt(&tk, &catalog, &q, &PromptConfig::default()).unwrap();
        let expected = 1 + tk.surfaces[4].len() + tk.relations_inner[0].len() + 8 + 1;
        assert_eq!(p.tokens.len(), expected);
    }

    #[test]
    fn truncates_definition_only() {
        let (kg, _, tk, catalog) = setup();
        let q = Query::new(Triple::new(2, 0, 3), Direction::PredictTail, &kg).unwrap();
        let full = build_prompt(&tk, &catalog, &q, &PromptConfig::default()).unwrap();
        let fixed = full.tokens.len() - tk.definitions[2].len();
        let cfg = PromptConfig {
            max_seq_len: fixed + 1,
            pad_to_max: false,
        };
        let p = build_prompt(&tk, &catalog, &q, &cfg).unwrap();
        assert_eq!(p.tokens.len(), fixed + 1);
        // head surface intact, one definition token kept
        assert_eq!(
            &p.tokens[1..1 + tk.surfaces[2].len()],
            tk.surfaces[2].as_slice()
        );
        assert_eq!(p.tokens[1 + tk.surfaces[2].len()], tk.definitions[2][0]);
        assert_eq!(&p.tokens[p.mask_span()], &[Vocabulary::MASK; 8]);

        let cfg = PromptConfig {
            max_seq_len: fixed - 1,
            pad_to_max: false,
        };
        assert!(matches!(
            build_prompt(&tk, &catalog, &q, &cfg),
            Err(Error::PromptOverflow { .. })
        ));
    }

    #[test]
    fn direction_swap_moves_mask_and_definition() {
        let (kg, _, tk, catalog) = setup();
        let t = Triple::new(2, 0, 3);
        let tail = build_prompt(
            &tk,
            &catalog,
            &Query::new(t, Direction::PredictTail, &kg).unwrap(),
            &PromptConfig::default(),
        )
        .unwrap();
        let head = build_prompt(
            &tk,
            &catalog,
            &Query::new(t, Direction::PredictHead, &kg).unwrap(),
            &PromptConfig::default(),
        )
        .unwrap();
        assert_eq!(head.mask_start, 1);
        assert_eq!(tail.mask_start + tail.mask_len + 1, tail.tokens.len());
        let contains =
            |hay: &[TokenId], needle: &[TokenId]| hay.windows(needle.len()).any(|w| w == needle);
        assert!(contains(&tail.tokens, &tk.definitions[2]));
        assert!(contains(&head.tokens, &tk.definitions[3]));
        assert!(!contains(&head.tokens, &tk.definitions[2]));
        for p in [&head, &tail] {
            let masks = p.tokens.iter().filter(|&&t| t == Vocabulary::MASK).count();
            assert_eq!(masks, catalog.l_max());
        }
    }

    #[test]
    fn query_ids_are_unique() {
        let kg = crate::kg::testutil::toy_kg(7, 3, vec![], vec![], vec![]);
        let mut ids = HashSet::new();
        for h in 0..7 {
            for r in 0..3 {
                for t in 0..7 {
                    for d in [Direction::PredictHead, Direction::PredictTail] {
                        assert!(
                            ids.insert(Query::new(Triple::new(h, r, t), d, &kg).unwrap().query_id)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn standard_mode_two_queries_per_triple() {
        let (kg, ..) = setup();
        let qs = queries_for_split(&kg, SplitKind::Test, EvalMode::Standard).unwrap();
        assert_eq!(qs.len(), 4);
        assert!(queries_for_split(&kg, SplitKind::Test, EvalMode::Unseen).is_err());
    }

    #[test]
    fn unseen_mode_queries_only_unseen_sides() {
        use std::collections::BTreeSet;
        let triples = vec![
            Triple::new(0, 0, 1),
            Triple::new(0, 0, 2),
            Triple::new(0, 0, 3),
            Triple::new(1, 0, 2),
        ];
        let kg = crate::kg::testutil::toy_kg(4, 1, triples, vec![], vec![]);
        let s = crate::kg::split_by_entities(
            &kg,
            BTreeSet::from([EntityId(1)]),
            BTreeSet::from([EntityId(2)]),
            0,
        )
        .unwrap();
        let v = queries_for_split(&s, SplitKind::Valid, EvalMode::Unseen).unwrap();
        let dirs: Vec<(Triple, Direction)> = v.iter().map(|q| (q.triple, q.direction)).collect();
        assert_eq!(
            dirs,
            vec![
                (Triple::new(0, 0, 1), Direction::PredictTail),
                (Triple::new(1, 0, 2), Direction::PredictHead)
            ]
        );
        let t = queries_for_split(&s, SplitKind::Test, EvalMode::Unseen).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].gold(), EntityId(2));
    }

    #[test]
    fn prompt_records_round_trip_through_jsonl() {
        let (kg, _, tk, catalog) = setup();
        let q = Query::new(Triple::new(0, 0, 1), Direction::PredictHead, &kg).unwrap();
        let p = build_prompt(&tk, &catalog, &q, &PromptConfig::default()).unwrap();
        let rec = PromptRecord::new(&q, &p);
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains(r#""direction":"predict-head""#), "{line}");
        assert!(
            line.contains(r#""triple":{"head":0,"rel":0,"tail":1}"#),
            "{line}"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_prompts_jsonl(&path, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_prompts_jsonl(&path).unwrap(), vec![rec]);
    }
}
