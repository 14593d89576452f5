//! JSONL and TREC run serialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{RunRanking, RunRecord};

/// A decoded record together with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Located<T> {
    pub line: usize,
    pub record: T,
}

/// Streaming reader over a JSON-lines file. Blank lines are skipped and
/// unknown fields are ignored.
pub struct JsonlReader<T> {
    path: PathBuf,
    reader: BufReader<File>,
    line: usize,
    offset: u64,
    buf: String,
    _kind: PhantomData<fn() -> T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonlReader {
            path,
            reader: BufReader::new(file),
            line: 0,
            offset: 0,
            buf: String::new(),
            _kind: PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<Located<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            let start = self.offset;
            let n = match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(n) => n,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line += 1;
            self.offset += n as u64;
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str::<T>(text)
                    .map(|record| Located {
                        line: self.line,
                        record,
                    })
                    .map_err(|e| Error::Parse {
                        path: self.path.clone(),
                        line: self.line,
                        offset: start,
                        message: e.to_string(),
                    }),
            );
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<JsonlReader<T>> {
    JsonlReader::open(path)
}

/// Reads a whole JSONL file, dropping line numbers.
pub fn read_jsonl_vec<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_jsonl(path)?.map(|r| r.map(|l| l.record)).collect()
}

pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends records to `path`, creating it if needed.
pub fn append_jsonl<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::invalid(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Writes rankings in the 6-column `qid Q0 docid rank score tag` format.
pub fn write_trec_run(runs: &[RunRanking], tag: &str, path: impl AsRef<Path>) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::invalid("run tag must be a nonempty token without whitespace"));
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for run in runs {
        for (rank, (doc, score)) in run.ranked().iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {} {}", run.query_id, doc, rank + 1, score, tag)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a TREC run back into flat records. The rank column is ignored; order
/// is re-derived from scores.
pub fn read_trec_run(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let start = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            offset: start,
            message,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(parse_err(format!("expected 6 columns, found {}", cols.len())));
        }
        cols[3]
            .parse::<u64>()
            .map_err(|e| parse_err(format!("bad rank {:?}: {e}", cols[3])))?;
        let score = cols[4]
            .parse::<f64>()
            .map_err(|e| parse_err(format!("bad score {:?}: {e}", cols[4])))?;
        out.push(RunRecord {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            score,
        });
    }
    Ok(out)
}

/// Reads a run file in either format, chosen by content: a first non-blank
/// line starting with `{` is JSONL, anything else TREC.
pub fn read_run_any(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = None;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            first = Some(line);
            break;
        }
    }
    match first {
        Some(l) if l.trim_start().starts_with('{') => read_jsonl_vec(path),
        Some(_) => read_trec_run(path),
        None => Ok(Vec::new()),
    }
}
