use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScorerVariant;
use crate::corpus::Paragraph;

fn feed(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

/// Content hash of everything a sentence logit may depend on.
pub fn cache_key(
    backend: &str,
    variant: ScorerVariant,
    question: &str,
    paragraph: &Paragraph,
    sentence: usize,
    answer: Option<&str>,
) -> String {
    let mut h = Sha256::new();
    feed(&mut h, backend.as_bytes());
    feed(&mut h, variant.as_str().as_bytes());
    feed(&mut h, question.as_bytes());
    feed(&mut h, paragraph.title.as_bytes());
    h.update((paragraph.sentences.len() as u64).to_le_bytes());
    for s in &paragraph.sentences {
        feed(&mut h, s.as_bytes());
    }
    h.update((sentence as u64).to_le_bytes());
    match answer {
        None => h.update([0u8]),
        Some(a) => {
            h.update([1u8]);
            feed(&mut h, a.as_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Sentence-logit cache keyed by [`cache_key`]. Reads run concurrently;
/// writes are serialized.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<String, f64>>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    logit: f64,
}

impl ScoreCache {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.read().expect("score cache poisoned").get(key).copied()
    }

    pub fn insert(&self, key: String, logit: f64) {
        self.entries.write().expect("score cache poisoned").insert(key, logit);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Load a cache previously written by [`ScoreCache::save`]. A missing file
    /// yields an empty cache.
    pub fn load(path: &Path) -> io::Result<Self> {
        let cache = ScoreCache::default();
        let file = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(e),
        };
        {
            let mut map = cache.entries.write().expect("score cache poisoned");
            for line in BufReader::new(file).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: Entry = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                map.insert(e.key, e.logit);
            }
        }
        Ok(cache)
    }

    /// Write all entries, sorted by key, via a temporary file and rename.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let map = self.entries.read().expect("score cache poisoned");
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            for k in keys {
                serde_json::to_writer(&mut w, &Entry { key: k.clone(), logit: map[k] })?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        fs::rename(tmp, path)
    }
}
