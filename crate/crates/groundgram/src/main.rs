//! Command line pipeline driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 audit failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use groundgram::category::Category;
use groundgram::chart::{build_chart, Derivation};
use groundgram::grounding::{ground_init, resolve_instruction, GroundingState};
use groundgram::harness::config::PipelineConfig;
use groundgram::harness::eval::{eval_brackets, eval_tags, EvalReport, EVAL_FORMAT_VERSION};
use groundgram::harness::records::{
    read_checkpoint, read_scenes, read_tagged_corpus, read_trees, write_checkpoint,
    write_grammar_tsv, write_manifest, write_scenes, write_tagged_corpus, write_trees, Checkpoint,
    Manifest, RECORD_FORMAT_VERSION,
};
use groundgram::harness::synth::synth_corpus;
use groundgram::harness::{load_corpus, HarnessError};
use groundgram::hdp::{
    hdp_gibbs_iteration, hdp_init, pool_lexicon, tag_tokens, HdpScorer, HdpState,
};
use groundgram::pos::{pos_init, pos_train};

#[derive(Parser)]
#[command(name = "groundgram", version, about = "Grounded grammar induction pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus from the [synth] section of the config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Induce POS tags over a raw text corpus (one sentence per line).
    Tag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground word types against paired scenes.
    Ground {
        #[arg(long)]
        config: PathBuf,
        /// Tagged corpus (tagged.jsonl).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Induce a grammar over a tagged corpus.
    Induce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume a single chain from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Viterbi-parse a tagged corpus under an induced grammar checkpoint.
    Parse {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resolve instructions against scenes using a grounding state.
    Resolve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// grounding_state.json from `ground`.
        #[arg(long)]
        grounding: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted trees (and optionally tags) against gold.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred_tags: Option<PathBuf>,
        #[arg(long)]
        gold_tags: Option<PathBuf>,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct AppError {
    code: u8,
    msg: String,
}

impl AppError {
    fn usage(msg: impl Into<String>) -> Self {
        AppError {
            code: 1,
            msg: msg.into(),
        }
    }

    fn data(msg: impl Into<String>) -> Self {
        AppError {
            code: 2,
            msg: msg.into(),
        }
    }

    fn audit(msg: impl Into<String>) -> Self {
        AppError {
            code: 3,
            msg: msg.into(),
        }
    }
}

impl From<HarnessError> for AppError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Spec(_) => AppError::usage(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help and --version go to stdout and exit cleanly.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::data(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| AppError::data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

fn finish(
    dir: &Path,
    cfg_sha: String,
    seed: u64,
    outputs: Vec<&str>,
) -> Result<(), AppError> {
    let manifest = Manifest::new(seed, cfg_sha, outputs.iter().map(|s| s.to_string()).collect());
    write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Synth { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let spec = cfg
                .synth
                .as_ref()
                .ok_or_else(|| AppError::usage("config has no [synth] section"))?;
            ensure_dir(&out)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let data = synth_corpus(spec, spec.n_sentences, &mut rng)?;
            write_tagged_corpus(&out.join("tagged.jsonl"), &data.tagged)?;
            write_trees(&out.join("gold_trees.jsonl"), &data.gold_trees)?;
            let mut outputs = vec!["tagged.jsonl", "gold_trees.jsonl"];
            if let Some(scenes) = &data.scenes {
                write_scenes(&out.join("scenes.jsonl"), scenes)?;
                outputs.push("scenes.jsonl");
            }
            let text = data
                .sentences
                .iter()
                .map(|s| s.join(" "))
                .collect::<Vec<_>>()
                .join("\n")
                + "\n";
            std::fs::write(out.join("corpus.txt"), text)
                .map_err(|e| AppError::data(e.to_string()))?;
            outputs.push("corpus.txt");
            finish(&out, cfg.sha256(), cfg.seed, outputs)
        }
        Cmd::Tag {
            config,
            corpus,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let sentences = load_corpus(&corpus, cfg.lowercase)?;
            ensure_dir(&out)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut state = pos_init(&sentences, cfg.pos.k, cfg.pos.alpha_t, cfg.pos.alpha_e, &mut rng)
                .map_err(|e| AppError::data(e.to_string()))?;
            pos_train(
                &mut state,
                cfg.pos.sweeps,
                cfg.pos.burn_in,
                cfg.pos.thinning,
                &mut rng,
            );
            state.audit().map_err(AppError::audit)?;
            let tagged = state.decode();
            write_tagged_corpus(&out.join("tagged.jsonl"), &tagged)?;
            finish(&out, cfg.sha256(), cfg.seed, vec!["tagged.jsonl"])
        }
        Cmd::Ground {
            config,
            corpus,
            scenes,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let tagged = read_tagged_corpus(&corpus)?;
            let scenes = read_scenes(&scenes)?;
            ensure_dir(&out)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let priors = cfg.grounding.priors(tagged.n_tags);
            let mut state = ground_init(
                &tagged.sentences,
                &scenes,
                cfg.grounding.alphabets,
                priors,
                &mut rng,
            )
            .map_err(|e| AppError::data(e.to_string()))?;
            for _ in 0..cfg.grounding.sweeps {
                state.gibbs_sweep(&mut rng);
            }
            state.audit().map_err(AppError::audit)?;
            write_json(&out.join("grounding_state.json"), &state)?;
            write_json(&out.join("grounded_lexicon.json"), &state.grounded_lexicon())?;
            finish(
                &out,
                cfg.sha256(),
                cfg.seed,
                vec!["grounding_state.json", "grounded_lexicon.json"],
            )
        }
        Cmd::Induce {
            config,
            corpus,
            out,
            resume,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let tagged = read_tagged_corpus(&corpus)?;
            let hdp_cfg = cfg
                .hdp_config(tagged.n_tags)
                .map_err(|e| AppError::usage(e.to_string()))?;
            ensure_dir(&out)?;

            let mut best: Option<(f64, HdpState, ChaCha8Rng)> = None;
            if let Some(cp_path) = resume {
                let cp = read_checkpoint(&cp_path)?;
                if cp.config_sha256 != cfg.sha256() {
                    return Err(AppError::usage(
                        "checkpoint was produced under a different config",
                    ));
                }
                let mut state = cp.state;
                let mut rng = cp.rng;
                let mut lj = state.log_joint();
                for _ in 0..cfg.hdp.iterations {
                    lj = hdp_gibbs_iteration(&mut state, &tagged, &mut rng)
                        .map_err(|e| AppError::data(e.to_string()))?;
                }
                best = Some((lj, state, rng));
            } else {
                for chain in 0..cfg.hdp.chains {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(chain as u64));
                    let mut state = hdp_init(&tagged, hdp_cfg.clone(), &mut rng)
                        .map_err(|e| AppError::data(e.to_string()))?;
                    let mut lj = state.log_joint();
                    for _ in 0..cfg.hdp.iterations {
                        lj = hdp_gibbs_iteration(&mut state, &tagged, &mut rng)
                            .map_err(|e| AppError::data(e.to_string()))?;
                    }
                    if best.as_ref().map_or(true, |(b, ..)| lj > *b) {
                        best = Some((lj, state, rng));
                    }
                }
            }
            let (_, state, rng) = best.expect("at least one chain");
            state.audit().map_err(AppError::audit)?;
            write_grammar_tsv(
                &out.join("grammar.tsv"),
                &state.extract_grammar(cfg.hdp.min_rule_count),
            )?;
            write_trees(&out.join("trees.jsonl"), state.derivations())?;
            let cp = Checkpoint {
                format_version: RECORD_FORMAT_VERSION,
                config_sha256: cfg.sha256(),
                iteration: cfg.hdp.iterations,
                state,
                rng,
            };
            write_checkpoint(&out.join("checkpoint.json"), &cp)?;
            finish(
                &out,
                cfg.sha256(),
                cfg.seed,
                vec!["grammar.tsv", "trees.jsonl", "checkpoint.json"],
            )
        }
        Cmd::Parse {
            config,
            corpus,
            checkpoint,
            out,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let tagged = read_tagged_corpus(&corpus)?;
            let cp = read_checkpoint(&checkpoint)?;
            ensure_dir(&out)?;
            let state = cp.state;
            let pool = state.leaf_pool();
            let lex = pool_lexicon(&pool, state.config.n_tags);
            let scorer = HdpScorer::new(&state);
            let root: Category = state.config.root.clone();
            let mut trees: Vec<Derivation> = Vec::with_capacity(tagged.sentences.len());
            for (i, sent) in tagged.sentences.iter().enumerate() {
                let tokens = tag_tokens(sent);
                let chart = build_chart(&tokens, &lex, &state.config.rules, &root)
                    .map_err(|e| AppError::data(format!("sentence {i}: {e}")))?;
                let tree = chart
                    .viterbi_derivation(&root, &scorer)
                    .ok_or_else(|| AppError::data(format!("sentence {i}: no parse")))?;
                trees.push(tree);
            }
            write_trees(&out.join("trees.jsonl"), &trees)?;
            finish(&out, cfg.sha256(), cfg.seed, vec!["trees.jsonl"])
        }
        Cmd::Resolve {
            corpus,
            scenes,
            grounding,
            out,
        } => {
            let tagged = read_tagged_corpus(&corpus)?;
            let scenes = read_scenes(&scenes)?;
            if tagged.sentences.len() != scenes.len() {
                return Err(AppError::data(format!(
                    "{} sentences but {} scenes",
                    tagged.sentences.len(),
                    scenes.len()
                )));
            }
            let state: GroundingState = read_json(&grounding)?;
            state.audit().map_err(AppError::audit)?;
            ensure_dir(&out)?;
            let resolutions: Vec<_> = tagged
                .sentences
                .iter()
                .zip(&scenes)
                .map(|(s, sc)| resolve_instruction(s, sc, &state))
                .collect();
            write_json(&out.join("resolutions.json"), &resolutions)?;
            Ok(())
        }
        Cmd::Eval {
            pred,
            gold,
            pred_tags,
            gold_tags,
            out,
        } => {
            let pred_trees = read_trees(&pred)?;
            let gold_trees = read_trees(&gold)?;
            let (p, r, f1, matched, n_pred, n_gold) = eval_brackets(&pred_trees, &gold_trees)?;
            let mut report = EvalReport {
                format_version: EVAL_FORMAT_VERSION,
                bracket_precision: p,
                bracket_recall: r,
                bracket_f1: f1,
                matched_brackets: matched,
                predicted_brackets: n_pred,
                gold_brackets: n_gold,
                ..EvalReport::default()
            };
            match (pred_tags, gold_tags) {
                (Some(pt), Some(gt)) => {
                    let pt = read_tagged_corpus(&pt)?;
                    let gt = read_tagged_corpus(&gt)?;
                    let flat = |c: &groundgram::corpus::TaggedCorpus| -> Vec<usize> {
                        c.sentences.iter().flat_map(|s| s.tags.clone()).collect()
                    };
                    let (m2o, v) = eval_tags(&flat(&pt), &flat(&gt))?;
                    report.many_to_one = m2o;
                    report.v_measure = v;
                    report.token_count = flat(&gt).len();
                }
                (None, None) => {}
                _ => {
                    return Err(AppError::usage(
                        "--pred-tags and --gold-tags must be given together",
                    ))
                }
            }
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{text}");
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(())
        }
    }
}
