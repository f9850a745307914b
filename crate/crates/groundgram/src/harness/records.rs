//! On-disk record formats: JSONL artifact files with a version header,
//! the grammar TSV dump, sampler checkpoints, and run manifests.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::category::CombinatorKind;
use crate::chart::Derivation;
use crate::corpus::TaggedCorpus;
use crate::grounding::Scene;
use crate::hdp::{GrammarRule, HdpState};

pub const RECORD_FORMAT_VERSION: u32 = 1;

/// First line of every JSONL artifact.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_tags: Option<usize>,
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn record_err(path: &Path, line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Record {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    kind: &str,
    n_tags: Option<usize>,
    items: &[T],
) -> Result<(), HarnessError> {
    let header = Header {
        format_version: RECORD_FORMAT_VERSION,
        kind: kind.to_string(),
        count: items.len(),
        n_tags,
    };
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
) -> Result<(Vec<T>, Option<usize>), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| record_err(path, 1, "missing header line"))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| record_err(path, 1, format!("bad header: {e}")))?;
    if header.format_version != RECORD_FORMAT_VERSION {
        return Err(record_err(
            path,
            1,
            format!(
                "format_version {} is not the supported {}",
                header.format_version, RECORD_FORMAT_VERSION
            ),
        ));
    }
    if header.kind != kind {
        return Err(record_err(
            path,
            1,
            format!("file holds `{}` records, expected `{kind}`", header.kind),
        ));
    }
    let mut items = Vec::with_capacity(header.count);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line)
            .map_err(|e| record_err(path, i + 1, format!("bad record: {e}")))?;
        items.push(item);
    }
    if items.len() != header.count {
        return Err(record_err(
            path,
            1,
            format!("header declares {} records, found {}", header.count, items.len()),
        ));
    }
    Ok((items, header.n_tags))
}

pub fn write_tagged_corpus(path: &Path, corpus: &TaggedCorpus) -> Result<(), HarnessError> {
    write_jsonl(path, "tagged_corpus", Some(corpus.n_tags), &corpus.sentences)
}

pub fn read_tagged_corpus(path: &Path) -> Result<TaggedCorpus, HarnessError> {
    let (sentences, n_tags) = read_jsonl(path, "tagged_corpus")?;
    let n_tags = n_tags.ok_or_else(|| record_err(path, 1, "header is missing n_tags"))?;
    for (i, s) in sentences.iter().enumerate() {
        let s: &crate::corpus::TaggedSentence = s;
        if s.tokens.len() != s.tags.len() {
            return Err(record_err(path, i + 2, "tokens and tags differ in length"));
        }
        if let Some(&t) = s.tags.iter().find(|&&t| t >= n_tags) {
            return Err(record_err(path, i + 2, format!("tag {t} >= n_tags {n_tags}")));
        }
    }
    Ok(TaggedCorpus { sentences, n_tags })
}

pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<(), HarnessError> {
    write_jsonl(path, "scenes", None, scenes)
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>, HarnessError> {
    Ok(read_jsonl(path, "scenes")?.0)
}

pub fn write_trees(path: &Path, trees: &[Derivation]) -> Result<(), HarnessError> {
    write_jsonl(path, "trees", None, trees)
}

pub fn read_trees(path: &Path) -> Result<Vec<Derivation>, HarnessError> {
    Ok(read_jsonl(path, "trees")?.0)
}

/// Grammar dump, one rule per line:
/// parent TAB kind TAB argument TAB count TAB prob.
pub fn write_grammar_tsv(path: &Path, rules: &[GrammarRule]) -> Result<(), HarnessError> {
    let mut out = String::new();
    for r in rules {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6}\n",
            r.parent,
            r.kind.label(),
            r.argument,
            r.count,
            r.prob
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_grammar_tsv(path: &Path) -> Result<Vec<GrammarRule>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(record_err(path, i + 1, "expected 5 tab-separated fields"));
        }
        let parent = fields[0]
            .parse()
            .map_err(|e| record_err(path, i + 1, format!("bad parent: {e}")))?;
        let kind = CombinatorKind::ALL
            .into_iter()
            .find(|k| k.label() == fields[1])
            .ok_or_else(|| record_err(path, i + 1, format!("unknown kind `{}`", fields[1])))?;
        let argument = fields[2]
            .parse()
            .map_err(|e| record_err(path, i + 1, format!("bad argument: {e}")))?;
        let count = fields[3]
            .parse()
            .map_err(|e| record_err(path, i + 1, format!("bad count: {e}")))?;
        let prob = fields[4]
            .parse()
            .map_err(|e| record_err(path, i + 1, format!("bad prob: {e}")))?;
        rules.push(GrammarRule {
            parent,
            kind,
            argument,
            count,
            prob,
        });
    }
    Ok(rules)
}

/// Full sampler checkpoint: seated counts, current derivations, and the
/// generator state, so a resumed run continues the exact same chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_sha256: String,
    pub iteration: usize,
    pub state: HdpState,
    pub rng: ChaCha8Rng,
}

pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), HarnessError> {
    let text = serde_json::to_string(cp).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cp: Checkpoint =
        serde_json::from_str(&text).map_err(|e| record_err(path, 1, e.to_string()))?;
    if cp.format_version != RECORD_FORMAT_VERSION {
        return Err(record_err(
            path,
            1,
            format!("unsupported checkpoint version {}", cp.format_version),
        ));
    }
    Ok(cp)
}

/// Run manifest written next to every output set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(seed: u64, config_sha256: String, outputs: Vec<String>) -> Self {
        Manifest {
            format_version: RECORD_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256,
            outputs,
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), HarnessError> {
    let mut out = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    out.push(b'\n');
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&out).map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| record_err(path, 1, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::Category;
    use crate::corpus::TaggedSentence;
    use crate::grounding::SceneObject;
    use rand::{RngCore, SeedableRng};
    use std::collections::BTreeMap;

    fn cat(s: &str) -> Category {
        s.parse().unwrap()
    }

    #[test]
    fn tagged_corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let corpus = TaggedCorpus {
            sentences: vec![TaggedSentence {
                tokens: vec!["the".into(), "dog".into()],
                tags: vec![0, 1],
            }],
            n_tags: 2,
        };
        write_tagged_corpus(&p, &corpus).unwrap();
        assert_eq!(read_tagged_corpus(&p).unwrap(), corpus);
    }

    #[test]
    fn corrupted_line_names_path_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let corpus = TaggedCorpus {
            sentences: vec![
                TaggedSentence {
                    tokens: vec!["a".into()],
                    tags: vec![0],
                },
                TaggedSentence {
                    tokens: vec!["b".into()],
                    tags: vec![0],
                },
            ],
            n_tags: 1,
        };
        write_tagged_corpus(&p, &corpus).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let broken = text.replace("\"b\"", "\"b");
        std::fs::write(&p, broken).unwrap();
        match read_tagged_corpus(&p) {
            Err(HarnessError::Record { path, line, .. }) => {
                assert!(path.ends_with("c.jsonl"));
                assert_eq!(line, 3);
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn count_and_kind_mismatches_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let corpus = TaggedCorpus {
            sentences: vec![TaggedSentence {
                tokens: vec!["a".into()],
                tags: vec![0],
            }],
            n_tags: 1,
        };
        write_tagged_corpus(&p, &corpus).unwrap();
        // Drop the record but keep the header count.
        let text = std::fs::read_to_string(&p).unwrap();
        let header_only = text.lines().next().unwrap().to_string() + "\n";
        std::fs::write(&p, header_only).unwrap();
        assert!(matches!(
            read_tagged_corpus(&p),
            Err(HarnessError::Record { line: 1, .. })
        ));
        // Reading a corpus file as scenes fails on the kind field.
        write_tagged_corpus(&p, &corpus).unwrap();
        assert!(read_scenes(&p).is_err());
    }

    #[test]
    fn scenes_round_trip_with_spatial_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let scene = Scene {
            action_sym: 1,
            objects: vec![
                SceneObject {
                    color_sym: 0,
                    geom_sym: 2,
                    position: vec![0.1, 0.9],
                },
                SceneObject {
                    color_sym: 1,
                    geom_sym: 0,
                    position: vec![0.5, 0.5],
                },
            ],
            spatial: [((0, 1), 3), ((1, 0), 1)].into_iter().collect(),
        };
        write_scenes(&p, &[scene.clone()]).unwrap();
        assert_eq!(read_scenes(&p).unwrap(), vec![scene]);
    }

    #[test]
    fn trees_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        use crate::chart::{build_chart, Lexicon, UniformScorer};
        use crate::category::RuleConfig;
        let mut lex = Lexicon::new();
        lex.insert("the", cat("NP/N"), 1.0);
        lex.insert("dog", cat("N"), 1.0);
        lex.insert("sleeps", cat("S\\NP"), 1.0);
        let toks: Vec<String> = ["the", "dog", "sleeps"].iter().map(|s| s.to_string()).collect();
        let chart = build_chart(&toks, &lex, &RuleConfig::app_only(), &cat("S")).unwrap();
        let tree = chart.viterbi_derivation(&cat("S"), &UniformScorer).unwrap();
        write_trees(&p, &[tree.clone()]).unwrap();
        assert_eq!(read_trees(&p).unwrap(), vec![tree]);
    }

    #[test]
    fn grammar_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        let rules = vec![GrammarRule {
            parent: cat("S"),
            kind: CombinatorKind::BwdApp,
            argument: cat("NP"),
            count: 12,
            prob: 0.75,
        }];
        write_grammar_tsv(&p, &rules).unwrap();
        let back = read_grammar_tsv(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].parent, rules[0].parent);
        assert_eq!(back[0].kind, rules[0].kind);
        assert_eq!(back[0].argument, rules[0].argument);
        assert_eq!(back[0].count, 12);
        assert!((back[0].prob - 0.75).abs() < 1e-9);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap().split('\t').count(), 5);
    }

    #[test]
    fn checkpoint_resumes_the_same_rng_stream() {
        use crate::corpus::TaggedSentence;
        use crate::hdp::{hdp_init, HdpConfig, BaseDistribution};
        use crate::category::RuleConfig;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cp.json");
        let config = HdpConfig {
            alpha_dp: 1.0,
            gamma: 1.0,
            kind_prior: 1.0,
            emit_prior: 0.1,
            base: BaseDistribution::uniform(vec!["S".to_string(), "NP".to_string()], 0.4),
            rules: RuleConfig::app_only(),
            root: cat("S"),
            n_tags: 2,
            max_leaf_pool: 10,
        };
        let corpus = TaggedCorpus {
            sentences: vec![TaggedSentence {
                tokens: vec!["a".into(), "b".into()],
                tags: vec![0, 1],
            }],
            n_tags: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = hdp_init(&corpus, config, &mut rng).unwrap();
        let cp = Checkpoint {
            format_version: RECORD_FORMAT_VERSION,
            config_sha256: "deadbeef".into(),
            iteration: 7,
            state,
            rng: rng.clone(),
        };
        write_checkpoint(&p, &cp).unwrap();
        let mut back = read_checkpoint(&p).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.state.log_joint(), cp.state.log_joint());
        back.state.audit().unwrap();
        // The restored rng continues the original stream exactly.
        let mut orig = rng;
        for _ in 0..16 {
            assert_eq!(back.rng.next_u64(), orig.next_u64());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let m = Manifest::new(42, "ff00".into(), vec!["grammar.tsv".into()]);
        write_manifest(&p, &m).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.config_sha256, "ff00");
        assert_eq!(back.outputs, vec!["grammar.tsv".to_string()]);
        assert_eq!(back.format_version, RECORD_FORMAT_VERSION);
    }

    #[test]
    fn header_line_is_first_and_versioned() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        write_scenes(
            &p,
            &[Scene {
                action_sym: 0,
                objects: vec![SceneObject {
                    color_sym: 0,
                    geom_sym: 0,
                    position: vec![],
                }],
                spatial: BTreeMap::new(),
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let header: serde_json::Value =
            serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(header["format_version"], 1);
        assert_eq!(header["kind"], "scenes");
        assert_eq!(header["count"], 1);
    }
}
