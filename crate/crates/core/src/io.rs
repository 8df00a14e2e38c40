//! Newline-delimited JSON helpers, atomic writes and content hashing.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Parse one object per non-blank line. Errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(path, &text)
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        // Serializing plain data structs cannot fail.
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(items).as_bytes())
}

/// Write to a temporary sibling file and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Stable 64-bit hash of a sequence of byte strings. Used wherever the
/// pipeline needs platform-independent pseudo-randomness.
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Map a hash to a float in [0, 1).
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Serialize, serde::Deserialize)]
struct LogHeader {
    key: String,
}

/// Append-only JSONL progress log for long backend runs. The first line
/// records a key derived from the run's inputs; a log written under another
/// key is ignored, so stale progress is never reused.
pub struct ProgressLog {
    path: PathBuf,
    key: String,
}

impl ProgressLog {
    pub fn new(path: impl Into<PathBuf>, key: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            key: key.into(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries logged under this key, indexed by `id_of`.
    pub fn load<T: DeserializeOwned>(&self, id_of: impl Fn(&T) -> String) -> Result<HashMap<String, T>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let mut lines = BufReader::new(file).lines();
        let header: LogHeader = match lines.next() {
            Some(l) => match serde_json::from_str(&l.map_err(|e| Error::io(&self.path, e))?) {
                Ok(h) => h,
                Err(_) => return Ok(HashMap::new()),
            },
            None => return Ok(HashMap::new()),
        };
        if header.key != self.key {
            log::warn!("progress log {} belongs to another run; starting over", self.path.display());
            return Ok(HashMap::new());
        }
        let mut done = HashMap::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            // A crash can leave a torn final line; everything before it is kept.
            match serde_json::from_str::<T>(&line) {
                Ok(entry) => {
                    done.insert(id_of(&entry), entry);
                }
                Err(e) => {
                    log::warn!("{}:{}: ignoring torn progress line: {e}", self.path.display(), i + 2);
                    break;
                }
            }
        }
        Ok(done)
    }

    /// Open for appending; `fresh` truncates and writes the header.
    pub fn open_for_append(&self, fresh: bool) -> Result<File> {
        if fresh {
            let mut f = File::create(&self.path).map_err(|e| Error::io(&self.path, e))?;
            let header = serde_json::to_string(&LogHeader { key: self.key.clone() }).unwrap();
            writeln!(f, "{header}").map_err(|e| Error::io(&self.path, e))?;
            Ok(f)
        } else {
            OpenOptions::new()
                .append(true)
                .open(&self.path)
                .map_err(|e| Error::io(&self.path, e))
        }
    }

    pub fn append<T: Serialize>(&self, file: &mut File, entry: &T) -> Result<()> {
        let line = serde_json::to_string(entry).expect("serializable entry");
        writeln!(file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        file.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn remove(self) -> Result<()> {
        match fs::remove_file(&self.path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Row {
        a: u32,
    }

    #[test]
    fn jsonl_reports_line_number() {
        let err = parse_jsonl::<Row>(Path::new("x.jsonl"), "{\"a\":1}\n\n{\"a\":").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        write_jsonl(&p, &[Row { a: 1 }]).unwrap();
        write_jsonl(&p, &[Row { a: 2 }, Row { a: 3 }]).unwrap();
        assert_eq!(read_jsonl::<Row>(&p).unwrap(), vec![Row { a: 2 }, Row { a: 3 }]);
    }

    #[test]
    fn stable_hash_is_length_prefixed() {
        assert_ne!(stable_hash64(&[b"ab", b"c"]), stable_hash64(&[b"a", b"bc"]));
        assert!(unit_interval(u64::MAX) < 1.0);
    }
}
