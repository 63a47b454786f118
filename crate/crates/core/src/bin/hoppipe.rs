use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use hoppipe::answer::{
    decode_answer, FileSpanBackend, NdjsonSpanBackend, OracleSpanBackend, RandomSpanBackend, SpanBackend,
};
use hoppipe::artifacts::{sha256_hex, write_atomic, ArtifactStore};
use hoppipe::context::{assemble_qa_context, write_context_dump, ContextConfig};
use hoppipe::corpus::{attach_retrieval_scores, load_dataset, load_retrieval_scores, validate_training_record, QuestionRecord, Setting};
use hoppipe::metrics::{ablation_report, evaluate, Predictions};
use hoppipe::pipeline::{self, predictions_json, unix_now, Backends, Caches, PipelineConfig, RunManifest};
use hoppipe::scoring::{
    build_training_instances, pack_training_batches, read_score_tables, score_sentences, training::write_batches,
    write_score_tables, LexicalBackend, NdjsonScorer, ScoreCache, ScoreTable, ScorerBackend, ScorerVariant,
};
use hoppipe::support::select_support;
use hoppipe::tokenization::Vocabulary;

#[derive(Parser)]
#[command(name = "hoppipe", version, about = "Multi-hop QA pipeline over HotpotQA-format data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Take dataset, backends and settings from a previous run's manifest.
    #[arg(long, global = true)]
    from_manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["distractor", "fullwiki"])]
    setting: Option<String>,
    /// Word-piece vocabulary, one token per line.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Fullwiki paragraph threshold; paragraphs scoring below it are dropped.
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// JSON lines of `{"qid","title","score"}` for fullwiki runs.
    #[arg(long, global = true)]
    retrieval_scores: Option<PathBuf>,
    /// `lexical` or `tcp://host:port`.
    #[arg(long, global = true)]
    scorer_endpoint: Option<String>,
    /// `oracle`, `random`, `file:PATH` or `tcp://host:port`.
    #[arg(long, global = true)]
    span_endpoint: Option<String>,
    #[arg(long, global = true, env = "HOPPIPE_CACHE")]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    max_span_len: Option<usize>,
    /// Output file, or directory for `run`. Defaults to stdout where that makes sense.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Score every sentence (JSON lines of logits).
    Score {
        #[arg(long, default_value = "no_answer")]
        variant: ScorerVariant,
        /// Prediction file supplying answers for the with-answer variant.
        #[arg(long)]
        answers: Option<PathBuf>,
    },
    /// Pack QA contexts from no-answer scores.
    Assemble {
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Decode answers from span logits.
    Answer {
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Select support sets conditioned on the answers in a prediction file.
    Support {
        #[arg(long)]
        answers: PathBuf,
        /// Precomputed with-answer scores.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Score a prediction file against the dataset's gold fields.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Full pipeline; writes predictions.json, manifest.json and report.json.
    Run,
    /// Coverage ranks of gold support and the top-n needed to cover it.
    Ablate {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long = "fraction", default_values_t = [0.9])]
        fractions: Vec<f64>,
    },
    /// Scorer training instances packed into batches (JSON lines).
    BuildInstances {
        #[arg(long, default_value = "no_answer")]
        variant: ScorerVariant,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    setting: Option<Setting>,
    vocab: Option<PathBuf>,
    tau: Option<f64>,
    retrieval_scores: Option<PathBuf>,
    scorer_endpoint: Option<String>,
    span_endpoint: Option<String>,
    cache_dir: Option<PathBuf>,
    seed: Option<u64>,
    budget: Option<usize>,
    max_span_len: Option<usize>,
}

struct Settings {
    dataset: Option<PathBuf>,
    vocab: Option<PathBuf>,
    retrieval_scores: Option<PathBuf>,
    scorer_endpoint: String,
    span_endpoint: String,
    cache_dir: Option<PathBuf>,
    seed: Option<u64>,
    pipeline: PipelineConfig,
    expected_dataset_sha: Option<String>,
}

impl Settings {
    /// Flags win over the manifest, which wins over the config file.
    fn resolve(c: &Common) -> Result<Self> {
        let file: FileConfig = match &c.config {
            Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => FileConfig::default(),
        };
        let manifest: Option<RunManifest> = match &c.from_manifest {
            Some(p) => Some(serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?),
            None => None,
        };
        let m = manifest.as_ref();
        let defaults = PipelineConfig::default();
        let setting = match &c.setting {
            Some(s) => s.parse().map_err(|e: String| anyhow!(e))?,
            None => m.map(|m| m.config.setting).or(file.setting).unwrap_or(defaults.setting),
        };
        let seed = c.seed.or(m.map(|m| m.config.seed)).or(file.seed);
        let pipeline = PipelineConfig {
            setting,
            tau: c.tau.or(m.map(|m| m.config.tau)).or(file.tau).unwrap_or(defaults.tau),
            seed: seed.unwrap_or(0),
            budget: c.budget.or(m.map(|m| m.config.budget)).or(file.budget).unwrap_or(defaults.budget),
            max_span_len: c.max_span_len.or(m.map(|m| m.config.max_span_len)).or(file.max_span_len).unwrap_or(defaults.max_span_len),
        };
        Ok(Settings {
            dataset: c.dataset.clone().or(m.map(|m| PathBuf::from(&m.dataset_path))).or(file.dataset),
            vocab: c.vocab.clone().or(m.map(|m| PathBuf::from(&m.vocab_path))).or(file.vocab),
            retrieval_scores: c
                .retrieval_scores
                .clone()
                .or(m.and_then(|m| m.retrieval_scores.as_ref().map(|(p, _)| PathBuf::from(p))))
                .or(file.retrieval_scores),
            scorer_endpoint: c
                .scorer_endpoint
                .clone()
                .or(m.map(|m| m.scorer_endpoint.clone()))
                .or(file.scorer_endpoint)
                .unwrap_or_else(|| "lexical".into()),
            span_endpoint: c
                .span_endpoint
                .clone()
                .or(m.map(|m| m.span_endpoint.clone()))
                .or(file.span_endpoint)
                .unwrap_or_else(|| "oracle".into()),
            cache_dir: c.cache_dir.clone().or(file.cache_dir),
            seed,
            pipeline,
            expected_dataset_sha: m.map(|m| m.dataset_sha256.clone()),
        })
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| anyhow!("a seed is required: pass --seed or set `seed` in the config file"))
    }

    fn dataset_path(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| anyhow!("--dataset is required"))
    }

    fn load_records(&self) -> Result<Vec<QuestionRecord>> {
        let path = self.dataset_path()?;
        if let Some(expected) = &self.expected_dataset_sha {
            let actual = sha256_hex(&fs::read(path)?);
            if &actual != expected {
                bail!("dataset {} has hash {actual}, manifest recorded {expected}", path.display());
            }
        }
        let mut records = load_dataset(path, self.pipeline.setting)?;
        if let Some(p) = &self.retrieval_scores {
            attach_retrieval_scores(&mut records, &load_retrieval_scores(p)?);
        }
        Ok(records)
    }

    fn load_vocab(&self) -> Result<Vocabulary> {
        let path = self.vocab.as_deref().ok_or_else(|| anyhow!("--vocab is required"))?;
        Vocabulary::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
    }

    fn scorer(&self) -> Result<Box<dyn ScorerBackend>> {
        match self.scorer_endpoint.as_str() {
            "lexical" => Ok(Box::new(LexicalBackend)),
            e if e.starts_with("tcp://") => Ok(Box::new(NdjsonScorer::new(e))),
            e => bail!("unknown scorer endpoint `{e}` (expected `lexical` or `tcp://host:port`)"),
        }
    }

    fn span(&self) -> Result<Box<dyn SpanBackend>> {
        let e = self.span_endpoint.as_str();
        Ok(match e {
            "oracle" => Box::new(OracleSpanBackend::new(self.pipeline.max_span_len)),
            "random" => Box::new(RandomSpanBackend { seed: self.require_seed()? }),
            _ if e.starts_with("file:") => Box::new(FileSpanBackend::load(Path::new(&e["file:".len()..]))?),
            _ if e.starts_with("tcp://") => Box::new(NdjsonSpanBackend::new(e)),
            _ => bail!("unknown span endpoint `{e}` (expected oracle, random, file:PATH or tcp://host:port)"),
        })
    }

    fn score_cache(&self) -> Result<Option<(ScoreCache, ArtifactStore)>> {
        match &self.cache_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(Some((ScoreCache::load(&dir.join("scores.jsonl"))?, ArtifactStore::new(dir))))
            }
            None => Ok(None),
        }
    }
}

fn save_cache(cache: &Option<(ScoreCache, ArtifactStore)>) -> Result<()> {
    if let Some((scores, store)) = cache {
        scores.save(&store.root().join("scores.jsonl"))?;
    }
    Ok(())
}

fn caches(cache: &Option<(ScoreCache, ArtifactStore)>) -> Caches<'_> {
    match cache {
        Some((s, a)) => Caches { scores: Some(s), artifacts: Some(a) },
        None => Caches::default(),
    }
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn read_tables(path: &Path) -> Result<BTreeMap<String, ScoreTable>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_score_tables(BufReader::new(file))?.into_iter().map(|t| (t.qid.clone(), t)).collect())
}

fn report_failures(failures: &[(String, String)]) {
    for (qid, msg) in failures {
        eprintln!("{qid}: {msg}");
    }
    if !failures.is_empty() {
        eprintln!("{} question(s) failed", failures.len());
    }
}

/// No-answer tables from a file when given, else from the scorer.
fn no_answer_tables(
    s: &Settings,
    records: &[QuestionRecord],
    scores: &Option<PathBuf>,
    vocab: &Vocabulary,
    cache: &Option<(ScoreCache, ArtifactStore)>,
    failures: &mut Vec<(String, String)>,
) -> Result<BTreeMap<String, ScoreTable>> {
    if let Some(p) = scores {
        return read_tables(p);
    }
    let scorer = s.scorer()?;
    let mut tables = BTreeMap::new();
    for r in records {
        match score_sentences(r, ScorerVariant::NoAnswer, None, &*scorer, vocab, caches(cache).scores) {
            Ok(t) => {
                tables.insert(r.qid.clone(), t);
            }
            Err(e) => failures.push((r.qid.clone(), e.to_string())),
        }
    }
    Ok(tables)
}

fn prepared(s: &Settings) -> Result<Vec<QuestionRecord>> {
    let records = s.load_records()?;
    if s.pipeline.setting == Setting::Fullwiki {
        return records
            .iter()
            .map(|r| pipeline::run_fullwiki_filter(r, s.pipeline.tau).map_err(Into::into))
            .collect();
    }
    Ok(records)
}

fn main() -> Result<()> {
    match run_cli() {
        // a closed stdout (e.g. piped into `head`) is not a failure
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => Ok(()),
        r => r,
    }
}

fn run_cli() -> Result<()> {
    let cli = Cli::parse();
    let s = Settings::resolve(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::Score { variant, answers } => {
            let records = prepared(&s)?;
            let vocab = s.load_vocab()?;
            let scorer = s.scorer()?;
            let cache = s.score_cache()?;
            let answers = answers.map(|p| Predictions::load(&p)).transpose()?;
            let mut tables = Vec::new();
            let mut failures = Vec::new();
            for r in &records {
                let answer = answers.as_ref().and_then(|a| a.answer.get(&r.qid)).map(String::as_str);
                if variant == ScorerVariant::WithAnswer && answer.is_none() {
                    failures.push((r.qid.clone(), "no answer supplied".to_string()));
                    continue;
                }
                match score_sentences(r, variant, answer, &*scorer, &vocab, caches(&cache).scores) {
                    Ok(t) => tables.push(t),
                    Err(e) => failures.push((r.qid.clone(), e.to_string())),
                }
            }
            write_score_tables(&tables, output(out)?)?;
            save_cache(&cache)?;
            report_failures(&failures);
        }
        Command::Assemble { scores } => {
            let records = prepared(&s)?;
            let vocab = s.load_vocab()?;
            let cache = s.score_cache()?;
            let mut failures = Vec::new();
            let tables = no_answer_tables(&s, &records, &scores, &vocab, &cache, &mut failures)?;
            let mut contexts = Vec::new();
            for r in &records {
                let Some(t) = tables.get(&r.qid) else { continue };
                match assemble_qa_context(r, t, &vocab, ContextConfig { budget: s.pipeline.budget }) {
                    Ok(c) => contexts.push((r, c)),
                    Err(e) => failures.push((r.qid.clone(), e.to_string())),
                }
            }
            write_context_dump(contexts.iter().map(|(r, c)| (*r, c)), output(out)?)?;
            save_cache(&cache)?;
            report_failures(&failures);
        }
        Command::Answer { scores } => {
            let records = prepared(&s)?;
            let vocab = s.load_vocab()?;
            let span = s.span()?;
            let cache = s.score_cache()?;
            let mut failures = Vec::new();
            let tables = no_answer_tables(&s, &records, &scores, &vocab, &cache, &mut failures)?;
            let mut predictions = Predictions::default();
            for r in &records {
                let Some(t) = tables.get(&r.qid) else { continue };
                let decoded = assemble_qa_context(r, t, &vocab, ContextConfig { budget: s.pipeline.budget })
                    .map_err(|e| e.to_string())
                    .and_then(|ctx| {
                        let logits = span.span_logits(r, &ctx).map_err(|e| e.to_string())?;
                        decode_answer(r, &ctx, &logits, s.pipeline.max_span_len).map_err(|e| e.to_string())
                    });
                match decoded {
                    Ok(a) => {
                        predictions.answer.insert(r.qid.clone(), a.answer_string().to_owned());
                    }
                    Err(e) => failures.push((r.qid.clone(), e)),
                }
            }
            writeln!(output(out)?, "{}", predictions_json(&predictions))?;
            save_cache(&cache)?;
            report_failures(&failures);
        }
        Command::Support { answers, scores } => {
            let records = prepared(&s)?;
            let vocab = s.load_vocab()?;
            let cache = s.score_cache()?;
            let mut predictions = Predictions::load(&answers)?;
            let given = match &scores {
                Some(p) => Some(read_tables(p)?),
                None => None,
            };
            let scorer = s.scorer()?;
            let mut failures = Vec::new();
            for r in &records {
                let Some(answer) = predictions.answer.get(&r.qid).cloned() else {
                    failures.push((r.qid.clone(), "no answer supplied".to_string()));
                    continue;
                };
                let table = match given.as_ref().map(|g| g.get(&r.qid).cloned()) {
                    Some(Some(t)) => Ok(t),
                    Some(None) => Err("no with-answer scores".to_string()),
                    None => score_sentences(r, ScorerVariant::WithAnswer, Some(&answer), &*scorer, &vocab, caches(&cache).scores)
                        .map_err(|e| e.to_string()),
                };
                match table.and_then(|t| select_support(&t).map_err(|e| e.to_string())) {
                    Ok(sup) => {
                        let facts = sup.members.iter().map(|&m| {
                            let f = r.ref_to_fact(m);
                            (f.title, f.sentence_index)
                        });
                        predictions.sp.insert(r.qid.clone(), facts.collect());
                    }
                    Err(e) => failures.push((r.qid.clone(), e)),
                }
            }
            writeln!(output(out)?, "{}", predictions_json(&predictions))?;
            save_cache(&cache)?;
            report_failures(&failures);
        }
        Command::Evaluate { predictions } => {
            let records = s.load_records()?;
            let report = evaluate(&Predictions::load(&predictions)?, &records);
            eprintln!(
                "questions {}  ans em {:.4} f1 {:.4}  sup em {:.4} f1 {:.4}  joint em {:.4} f1 {:.4}",
                report.count, report.ans_em, report.ans_f1, report.sup_em, report.sup_f1, report.joint_em, report.joint_f1
            );
            let mut w = output(out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
        }
        Command::Run => {
            let seed = s.require_seed()?;
            let dir = out.clone().ok_or_else(|| anyhow!("`run` needs --out DIR"))?;
            let started = unix_now();
            let dataset = s.dataset_path()?.to_path_buf();
            let records = s.load_records()?;
            let vocab_path = s.vocab.clone().ok_or_else(|| anyhow!("--vocab is required"))?;
            let vocab = s.load_vocab()?;
            let scorer = s.scorer()?;
            let span = s.span()?;
            let cache = s.score_cache()?;
            let config = PipelineConfig { seed, ..s.pipeline.clone() };
            let backends = Backends { scorer: &*scorer, span: &*span, vocab: &vocab };
            let result = pipeline::run(&records, backends, &config, caches(&cache));
            save_cache(&cache)?;

            fs::create_dir_all(&dir)?;
            write_atomic(&dir.join("predictions.json"), predictions_json(&result.predictions).as_bytes())?;
            if let Some(report) = &result.report {
                write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
                eprintln!(
                    "ans f1 {:.4}  sup f1 {:.4}  joint f1 {:.4}",
                    report.ans_f1, report.sup_f1, report.joint_f1
                );
            }
            let manifest = RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                dataset_path: dataset.display().to_string(),
                dataset_sha256: sha256_hex(&fs::read(&dataset)?),
                vocab_path: vocab_path.display().to_string(),
                vocab_sha256: sha256_hex(&fs::read(&vocab_path)?),
                retrieval_scores: match &s.retrieval_scores {
                    Some(p) => Some((p.display().to_string(), sha256_hex(&fs::read(p)?))),
                    None => None,
                },
                scorer_endpoint: s.scorer_endpoint.clone(),
                scorer_backend: scorer.identity(),
                span_endpoint: s.span_endpoint.clone(),
                span_backend: span.identity(),
                config_revision: config.revision(),
                config,
                started_at_unix: started,
                finished_at_unix: unix_now(),
                questions: records.len(),
                answered: result.outcomes.len(),
                failures: result.failures.clone(),
            };
            write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
            for f in &result.failures {
                eprintln!("{}: {:?}: {}", f.qid, f.stage, f.message);
            }
            eprintln!("{} of {} questions answered", result.outcomes.len(), records.len());
        }
        Command::Ablate { scores, fractions } => {
            let records = prepared(&s)?;
            let tables: Vec<ScoreTable> = match &scores {
                Some(p) => read_tables(p)?.into_values().collect(),
                None => {
                    let vocab = s.load_vocab()?;
                    let cache = s.score_cache()?;
                    let mut failures = Vec::new();
                    let t = no_answer_tables(&s, &records, &None, &vocab, &cache, &mut failures)?;
                    save_cache(&cache)?;
                    report_failures(&failures);
                    t.into_values().collect()
                }
            };
            let report = ablation_report(&records, &tables, &fractions)?;
            for (f, n) in &report.top_n {
                println!("top-n@{f}: {n}");
            }
            println!("questions: {}  mean rank: {:.3}", report.questions, report.mean_rank);
            if let Some(p) = out {
                write_atomic(p, &serde_json::to_vec_pretty(&report)?)?;
            }
        }
        Command::BuildInstances { variant } => {
            let seed = s.require_seed()?;
            let records = s.load_records()?;
            let vocab = s.load_vocab()?;
            let mut instances = Vec::new();
            let mut skipped = 0usize;
            for r in &records {
                let violations = validate_training_record(r);
                if !violations.is_empty() {
                    eprintln!("{}: skipped ({} violation(s))", r.qid, violations.len());
                    skipped += 1;
                    continue;
                }
                instances.extend(build_training_instances(r, variant, seed, &vocab)?);
            }
            let batches = pack_training_batches(instances, seed);
            let dropped: usize = batches.iter().map(|b| b.dropped.len()).sum();
            write_batches(&batches, output(out)?)?;
            eprintln!("{} batches, {dropped} instance(s) dropped for the token cap, {skipped} record(s) skipped", batches.len());
        }
    }
    Ok(())
}
