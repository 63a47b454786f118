//! C ABI over the `hoppipe` library.
//!
//! Every function returns an [`HpStatus`]; on failure [`hp_last_error`] gives
//! a message for the calling thread. Strings handed out by this library must
//! be released with [`hp_string_free`]; handles with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hoppipe::answer::{FileSpanBackend, OracleSpanBackend, RandomSpanBackend, SpanBackend};
use hoppipe::corpus::{load_dataset, QuestionRecord, SentenceRef, Setting};
use hoppipe::metrics::{self, Predictions};
use hoppipe::pipeline::{self, predictions_json, Backends, Caches, PipelineConfig};
use hoppipe::scoring::{LexicalBackend, NdjsonScorer, ScoreTable, ScorerBackend, ScorerVariant};
use hoppipe::support::{select_support, SupportError};
use hoppipe::tokenization::{self, Vocabulary};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    BufferTooSmall = 5,
    Infeasible = 6,
    Pipeline = 7,
    Panic = 8,
}

/// Opaque vocabulary handle.
pub struct HpVocab(Vocabulary);

/// Opaque handle to a loaded, validated dataset.
pub struct HpDataset(Vec<QuestionRecord>);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HpAnswerScores {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Fail(HpStatus, String);

impl Fail {
    fn new(status: HpStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(HpStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(HpStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::new(HpStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(HpStatus::NullPointer, format!("`{name}` is null")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hp_vocab_load(path: *const c_char, out: *mut *mut HpVocab) -> HpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let v = Vocabulary::load(path).map_err(|e| Fail::new(HpStatus::Io, e))?;
        *out = Box::into_raw(Box::new(HpVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` must be null or a handle from [`hp_vocab_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn hp_vocab_free(vocab: *mut HpVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Word-piece ids of `text`. `*out_len` always receives the full length; if
/// it exceeds `capacity` nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `ids` must hold `capacity` elements (may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn hp_tokenize(
    vocab: *const HpVocab,
    text: *const c_char,
    ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> HpStatus {
    guard(|| {
        let vocab = vocab.as_ref().ok_or_else(|| Fail::new(HpStatus::NullPointer, "`vocab` is null"))?;
        let text = str_arg(text, "text")?;
        let out_len = out_arg(out_len, "out_len")?;
        let pieces = tokenization::tokenize(text, &vocab.0);
        *out_len = pieces.len();
        if pieces.len() > capacity {
            return Err(Fail::new(HpStatus::BufferTooSmall, format!("need {} ids, capacity {capacity}", pieces.len())));
        }
        if !pieces.is_empty() {
            if ids.is_null() {
                return Err(Fail::new(HpStatus::NullPointer, "`ids` is null"));
            }
            ptr::copy_nonoverlapping(pieces.as_ptr(), ids, pieces.len());
        }
        Ok(())
    })
}

/// # Safety
/// `path` and `setting` (`"distractor"` or `"fullwiki"`) must be valid C
/// strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hp_dataset_load(path: *const c_char, setting: *const c_char, out: *mut *mut HpDataset) -> HpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let setting: Setting = str_arg(setting, "setting")?.parse().map_err(|e: String| Fail::new(HpStatus::InvalidArgument, e))?;
        let records = load_dataset(path, setting).map_err(|e| Fail::new(HpStatus::Io, e))?;
        *out = Box::into_raw(Box::new(HpDataset(records)));
        Ok(())
    })
}

/// Number of questions, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hp_dataset_len(dataset: *const HpDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be null or a handle from [`hp_dataset_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn hp_dataset_free(dataset: *mut HpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// A table laid out flat: `paragraph_lens[p]` consecutive logits per
/// paragraph.
unsafe fn flat_table(logits: *const f64, paragraph_lens: *const usize, n_paragraphs: usize) -> Result<ScoreTable, Fail> {
    let lens = slice_arg(paragraph_lens, n_paragraphs, "paragraph_lens")?;
    let total: usize = lens.iter().sum();
    let flat = slice_arg(logits, total, "logits")?;
    let mut rows = Vec::with_capacity(lens.len());
    let mut at = 0;
    for &n in lens {
        rows.push(flat[at..at + n].to_vec());
        at += n;
    }
    ScoreTable::from_nested("ffi", ScorerVariant::WithAnswer, &rows).map_err(|e| Fail::new(HpStatus::InvalidArgument, e))
}

fn flat_index(lens: &[usize], r: SentenceRef) -> usize {
    lens[..r.paragraph].iter().sum::<usize>() + r.sentence
}

/// Best support set over a flat table. `selected` (one byte per sentence) is
/// set to 1 for members and 0 otherwise.
///
/// # Safety
/// `logits` holds the sum of `paragraph_lens` values; `selected` has the same
/// length; `total` is writable.
#[no_mangle]
pub unsafe extern "C" fn hp_select_support(
    logits: *const f64,
    paragraph_lens: *const usize,
    n_paragraphs: usize,
    selected: *mut u8,
    total: *mut f64,
) -> HpStatus {
    guard(|| {
        let table = flat_table(logits, paragraph_lens, n_paragraphs)?;
        let lens = slice_arg(paragraph_lens, n_paragraphs, "paragraph_lens")?;
        let total = out_arg(total, "total")?;
        let n: usize = lens.iter().sum();
        if selected.is_null() {
            return Err(Fail::new(HpStatus::NullPointer, "`selected` is null"));
        }
        let set = select_support(&table).map_err(|e| match e {
            SupportError::Infeasible(_) => Fail::new(HpStatus::Infeasible, e),
            SupportError::TooLarge(_) => Fail::new(HpStatus::InvalidArgument, e),
        })?;
        let out = std::slice::from_raw_parts_mut(selected, n);
        out.fill(0);
        for &m in &set.members {
            out[flat_index(lens, m)] = 1;
        }
        *total = set.total;
        Ok(())
    })
}

/// # Safety
/// `prediction` and `gold` must be valid C strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hp_answer_scores(prediction: *const c_char, gold: *const c_char, out: *mut HpAnswerScores) -> HpStatus {
    guard(|| {
        let s = metrics::answer_scores(str_arg(prediction, "prediction")?, str_arg(gold, "gold")?);
        *out_arg(out, "out")? = HpAnswerScores { em: s.em, f1: s.f1, precision: s.precision, recall: s.recall };
        Ok(())
    })
}

/// # Safety
/// `text` must be a valid C string; `out` receives a string to release with
/// [`hp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn hp_normalize_answer(text: *const c_char, out: *mut *mut c_char) -> HpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(metrics::normalize_answer(str_arg(text, "text")?));
        Ok(())
    })
}

/// Coverage rank over a flat table; `gold` has one byte per sentence,
/// nonzero for gold support.
///
/// # Safety
/// Buffers as for [`hp_select_support`]; `rank` writable.
#[no_mangle]
pub unsafe extern "C" fn hp_coverage_rank(
    logits: *const f64,
    paragraph_lens: *const usize,
    n_paragraphs: usize,
    gold: *const u8,
    rank: *mut usize,
) -> HpStatus {
    guard(|| {
        let table = flat_table(logits, paragraph_lens, n_paragraphs)?;
        let lens = slice_arg(paragraph_lens, n_paragraphs, "paragraph_lens")?;
        let flags = slice_arg(gold, lens.iter().sum(), "gold")?;
        let rank = out_arg(rank, "rank")?;
        let gold = table.scores().iter().map(|s| s.reference).filter(|&r| flags[flat_index(lens, r)] != 0).collect();
        *rank = metrics::coverage_rank(&table, &gold).map_err(|e| Fail::new(HpStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// # Safety
/// `ranks` holds `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hp_top_n_at(ranks: *const usize, n: usize, fraction: f64, out: *mut usize) -> HpStatus {
    guard(|| {
        let ranks = slice_arg(ranks, n, "ranks")?;
        let out = out_arg(out, "out")?;
        *out = metrics::top_n_at(ranks, fraction).map_err(|e| Fail::new(HpStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Evaluate a prediction file; `out_json` receives the report as JSON.
///
/// # Safety
/// `dataset` is a live handle, `predictions_path` a valid C string, `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hp_evaluate(dataset: *const HpDataset, predictions_path: *const c_char, out_json: *mut *mut c_char) -> HpStatus {
    guard(|| {
        let dataset = dataset.as_ref().ok_or_else(|| Fail::new(HpStatus::NullPointer, "`dataset` is null"))?;
        let path = str_arg(predictions_path, "predictions_path")?;
        let out = out_arg(out_json, "out_json")?;
        let predictions = Predictions::load(Path::new(path)).map_err(|e| Fail::new(HpStatus::Io, e))?;
        let report = metrics::evaluate(&predictions, &dataset.0);
        *out = into_c_string(serde_json::to_string(&report).expect("report serializes"));
        Ok(())
    })
}

fn backends_from(config: &serde_json::Value, pipeline: &PipelineConfig) -> Result<(Box<dyn ScorerBackend>, Box<dyn SpanBackend>), Fail> {
    let field = |k: &str, default: &str| config.get(k).and_then(|v| v.as_str()).unwrap_or(default).to_owned();
    let scorer: Box<dyn ScorerBackend> = match field("scorer_endpoint", "lexical").as_str() {
        "lexical" => Box::new(LexicalBackend),
        e if e.starts_with("tcp://") => Box::new(NdjsonScorer::new(e)),
        e => return Err(Fail::new(HpStatus::InvalidArgument, format!("unknown scorer endpoint `{e}`"))),
    };
    let span: Box<dyn SpanBackend> = match field("span_endpoint", "oracle").as_str() {
        "oracle" => Box::new(OracleSpanBackend::new(pipeline.max_span_len)),
        "random" => Box::new(RandomSpanBackend { seed: pipeline.seed }),
        e if e.starts_with("file:") => {
            Box::new(FileSpanBackend::load(Path::new(&e["file:".len()..])).map_err(|e| Fail::new(HpStatus::Io, e))?)
        }
        e => return Err(Fail::new(HpStatus::InvalidArgument, format!("unknown span endpoint `{e}`"))),
    };
    Ok((scorer, span))
}

/// Run the full pipeline. `config_json` holds the pipeline settings
/// (`setting`, `tau`, `seed`, `budget`, `max_span_len`) plus optional
/// `scorer_endpoint` and `span_endpoint`; `seed` is required. `out_json`
/// receives `{"predictions":…,"failures":[…]}`.
///
/// # Safety
/// Handles must be live; `config_json` a valid C string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn hp_run_pipeline(
    dataset: *const HpDataset,
    vocab: *const HpVocab,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> HpStatus {
    guard(|| {
        let dataset = dataset.as_ref().ok_or_else(|| Fail::new(HpStatus::NullPointer, "`dataset` is null"))?;
        let vocab = vocab.as_ref().ok_or_else(|| Fail::new(HpStatus::NullPointer, "`vocab` is null"))?;
        let out = out_arg(out_json, "out_json")?;
        let mut raw: serde_json::Value =
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| Fail::new(HpStatus::InvalidArgument, e))?;
        let obj = raw.as_object_mut().ok_or_else(|| Fail::new(HpStatus::InvalidArgument, "config must be a JSON object"))?;
        if !obj.contains_key("seed") {
            return Err(Fail::new(HpStatus::InvalidArgument, "config needs a `seed`"));
        }
        let endpoints = serde_json::json!({
            "scorer_endpoint": obj.remove("scorer_endpoint"),
            "span_endpoint": obj.remove("span_endpoint"),
        });
        let config: PipelineConfig = serde_json::from_value(raw).map_err(|e| Fail::new(HpStatus::InvalidArgument, e))?;
        let (scorer, span) = backends_from(&endpoints, &config)?;
        let backends = Backends { scorer: &*scorer, span: &*span, vocab: &vocab.0 };
        let result = pipeline::run(&dataset.0, backends, &config, Caches::default());
        let predictions: serde_json::Value = serde_json::from_str(&predictions_json(&result.predictions)).expect("valid JSON");
        let body = serde_json::json!({ "predictions": predictions, "failures": result.failures });
        *out = into_c_string(body.to_string());
        if !result.failures.is_empty() && result.outcomes.is_empty() {
            return Err(Fail::new(HpStatus::Pipeline, format!("all {} questions failed", result.failures.len())));
        }
        Ok(())
    })
}
