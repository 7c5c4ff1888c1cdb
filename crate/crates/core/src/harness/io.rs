//! CSV and JSON artifacts.
//!
//! Datasets are stored as CSV with header `s,a,r,s_next,done` (`done` is 0 or
//! 1) next to a `<file>.meta.json` sidecar holding the source seed and the
//! behaviour-policy id.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Transition, TransitionDataset};
use crate::error::{Result, XqlError};
use crate::xql::TrainTrace;

pub const DATASET_HEADER: [&str; 5] = ["s", "a", "r", "s_next", "done"];
pub const TRACE_HEADER: [&str; 5] = ["step", "v_loss", "q_loss", "policy_return", "oracle_gap"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    source_seed: u64,
    behavior_policy_id: String,
    rows: usize,
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Write the transitions as CSV with LF line endings.
pub fn write_transitions<W: Write>(transitions: &[Transition], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for t in transitions {
        w.write_record([
            t.s.to_string(),
            t.a.to_string(),
            format_f64(t.r),
            t.s_next.to_string(),
            u8::from(t.done).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse CSV written by [`write_transitions`]. Errors carry the 1-based line
/// and, for bad fields, the 1-based column.
pub fn read_transitions<R: Read>(input: R) -> Result<Vec<Transition>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();
    let parse_err = |line: usize, column: Option<usize>, message: String| XqlError::Parse { line, column, message };
    match records.next() {
        None => return Err(parse_err(1, None, "missing header".into())),
        Some(header) => {
            let header = header?;
            if header.iter().ne(DATASET_HEADER) {
                return Err(parse_err(1, None, format!("missing header, expected `{}`", DATASET_HEADER.join(","))));
            }
        }
    }
    let mut out = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != DATASET_HEADER.len() {
            return Err(parse_err(line, None, format!("expected 5 fields, found {}", record.len())));
        }
        let index = |col: usize| -> Result<usize> {
            record[col]
                .parse()
                .map_err(|_| parse_err(line, Some(col + 1), format!("`{}` is not a valid {}", &record[col], DATASET_HEADER[col])))
        };
        let r: f64 = record[2]
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| parse_err(line, Some(3), format!("`{}` is not a finite reward", &record[2])))?;
        let done = match &record[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, Some(5), format!("done must be 0 or 1, got `{other}`"))),
        };
        out.push(Transition { s: index(0)?, a: index(1)?, r, s_next: index(3)?, done });
    }
    Ok(out)
}

pub fn save_dataset(ds: &TransitionDataset, path: &Path) -> Result<()> {
    write_transitions(&ds.transitions, BufWriter::new(File::create(path)?))?;
    let meta = DatasetMeta {
        source_seed: ds.source_seed,
        behavior_policy_id: ds.behavior_policy_id.clone(),
        rows: ds.len(),
    };
    write_json(&meta_path(path), &meta)
}

/// Load a dataset saved by [`save_dataset`]. Without a sidecar the seed is 0
/// and the behaviour-policy id is `"unknown"`.
pub fn load_dataset(path: &Path) -> Result<TransitionDataset> {
    let transitions = read_transitions(File::open(path)?)?;
    let meta_file = meta_path(path);
    if !meta_file.exists() {
        return Ok(TransitionDataset::new(transitions, 0, "unknown"));
    }
    let meta: DatasetMeta = serde_json::from_reader(File::open(&meta_file)?)?;
    if meta.rows != transitions.len() {
        return Err(XqlError::Config(format!(
            "{} lists {} rows but the CSV has {}",
            meta_file.display(),
            meta.rows,
            transitions.len()
        )));
    }
    Ok(TransitionDataset::new(transitions, meta.source_seed, meta.behavior_policy_id))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV with an explicit header; rows are serialised field by field.
pub fn write_csv<S: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    write_csv(
        path,
        &TRACE_HEADER,
        trace.records().iter().map(|r| (r.step, r.v_loss, r.q_loss, r.policy_return, r.oracle_gap)),
    )
}

/// Shortest text that parses back to the same `f64`.
fn format_f64(x: f64) -> String {
    let s = x.to_string();
    if s.contains(['.', 'e', 'E', 'N', 'i']) {
        s
    } else {
        s + ".0"
    }
}
