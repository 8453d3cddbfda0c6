//! Row files, bitext, corpus statistics, splits and evaluation sheets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BookVolume, Idiom, ModelError, MultiParallelRow, SegmentId};
use crate::report::{self, Warning};
use crate::text::sanitize_cell;

pub const SPLIT_NAMES: [&str; 4] = ["train", "validation", "test", "extra"];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("idiom {0} does not occur in the corpus")]
    UnknownIdiom(Idiom),
    #[error("row {row} references {segment}, which is not in the corpus")]
    DanglingReference { row: String, segment: SegmentId },
    #[error("split file line {line}: {message}")]
    SplitFile { line: usize, message: String },
    #[error("volume {volume} (row {row}) has no split assignment")]
    Unassigned { volume: String, row: String },
    #[error("cannot sample {requested} rows from {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.display().to_string(), source }
}

pub fn export_rows(path: &Path, rows: &[MultiParallelRow]) -> Result<(), ExportError> {
    report::write_jsonl(path, rows).map_err(io_err(path))
}

pub fn read_rows(path: &Path) -> Result<Vec<MultiParallelRow>, ExportError> {
    report::read_jsonl(path).map_err(io_err(path))
}

/// Two-column TSV of the rows where both idioms have a cell.
pub fn bitext(rows: &[MultiParallelRow], a: &Idiom, b: &Idiom, known: &BTreeSet<Idiom>) -> Result<String, ExportError> {
    for idiom in [a, b] {
        if !known.contains(idiom) {
            return Err(ExportError::UnknownIdiom(idiom.clone()));
        }
    }
    let mut out = String::new();
    for row in rows {
        if let (Some(x), Some(y)) = (row.cell(a), row.cell(b)) {
            let _ = writeln!(out, "{}\t{}", sanitize_cell(&x.text), sanitize_cell(&y.text));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdiomStats {
    pub volumes: usize,
    pub segments: usize,
    pub aligned_segments: usize,
    pub tokens: usize,
    pub aligned_tokens: usize,
}

impl std::ops::AddAssign for IdiomStats {
    fn add_assign(&mut self, o: Self) {
        self.volumes += o.volumes;
        self.segments += o.segments;
        self.aligned_segments += o.aligned_segments;
        self.tokens += o.tokens;
        self.aligned_tokens += o.aligned_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_idiom: BTreeMap<Idiom, IdiomStats>,
    pub total: IdiomStats,
}

/// Overall counts cover every ingested segment; aligned counts cover the
/// distinct segments of rows with at least two cells.
pub fn stats(volumes: &[BookVolume], rows: &[MultiParallelRow]) -> Result<StatsReport, ExportError> {
    let mut per_idiom: BTreeMap<Idiom, IdiomStats> = BTreeMap::new();
    let mut tokens: HashMap<&SegmentId, usize> = HashMap::new();
    for volume in volumes {
        let entry = per_idiom.entry(volume.idiom.clone()).or_default();
        entry.volumes += 1;
        for segment in volume.segments() {
            entry.segments += 1;
            entry.tokens += segment.token_count;
            tokens.insert(&segment.id, segment.token_count);
        }
    }
    let mut counted = BTreeSet::new();
    for row in rows.iter().filter(|r| r.is_aligned()) {
        for (idiom, cell) in row.filled() {
            let id = &cell.segment_id;
            let n = *tokens.get(id).ok_or_else(|| ExportError::DanglingReference {
                row: row.row_id.clone(),
                segment: id.clone(),
            })?;
            if counted.insert(id) {
                let entry = per_idiom.entry(idiom.clone()).or_default();
                entry.aligned_segments += 1;
                entry.aligned_tokens += n;
            }
        }
    }
    let mut total = IdiomStats::default();
    for s in per_idiom.values() {
        total += *s;
    }
    Ok(StatsReport { per_idiom, total })
}

impl StatsReport {
    /// Right-aligned text table, one line per idiom plus a total line.
    pub fn to_table(&self) -> String {
        let header = ["Idiom", "Volumes", "Segments", "Aligned", "Tokens", "Aligned"];
        let mut lines: Vec<[String; 6]> = vec![header.map(String::from)];
        let line = |name: &str, s: &IdiomStats| {
            [
                name.to_string(),
                s.volumes.to_string(),
                s.segments.to_string(),
                s.aligned_segments.to_string(),
                s.tokens.to_string(),
                s.aligned_tokens.to_string(),
            ]
        };
        lines.extend(self.per_idiom.iter().map(|(i, s)| line(i.as_str(), s)));
        lines.push(line("total", &self.total));
        let widths: Vec<usize> = (0..6).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for l in &lines {
            let _ = write!(out, "{:<w$}", l[0], w = widths[0]);
            for c in 1..6 {
                let _ = write!(out, "  {:>w$}", l[c], w = widths[c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Volume id to split name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment(pub BTreeMap<String, String>);

impl SplitAssignment {
    /// Two tab-separated columns, `volume_id` and split; an optional header
    /// line starting with `volume_id` is skipped.
    pub fn parse(tsv: &str) -> Result<Self, ExportError> {
        let mut map = BTreeMap::new();
        for (n, raw) in tsv.lines().enumerate() {
            let line = n + 1;
            if raw.trim().is_empty() || (line == 1 && raw.starts_with("volume_id")) {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            let [volume, split] = fields[..] else {
                return Err(ExportError::SplitFile { line, message: format!("expected 2 fields, got {}", fields.len()) });
            };
            if !SPLIT_NAMES.contains(&split) {
                return Err(ExportError::SplitFile { line, message: format!("unknown split {split:?}") });
            }
            if map.insert(volume.to_string(), split.to_string()).is_some() {
                return Err(ExportError::SplitFile { line, message: format!("volume {volume} assigned twice") });
            }
        }
        Ok(Self(map))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitOutput {
    pub splits: BTreeMap<String, Vec<MultiParallelRow>>,
    /// One warning per row whose volumes fall in different splits.
    pub conflicts: Vec<Warning>,
}

pub fn split_rows(rows: &[MultiParallelRow], assignment: &SplitAssignment) -> Result<SplitOutput, ExportError> {
    let mut out = SplitOutput::default();
    for row in rows {
        let mut splits = BTreeSet::new();
        for (_, cell) in row.filled() {
            let volume = cell.segment_id.volume_id()?;
            let split = assignment.0.get(volume).ok_or_else(|| ExportError::Unassigned {
                volume: volume.to_string(),
                row: row.row_id.clone(),
            })?;
            splits.insert(split.as_str());
        }
        match splits.len() {
            0 => {}
            1 => out.splits.entry(splits.first().unwrap().to_string()).or_default().push(row.clone()),
            _ => out.conflicts.push(Warning::new(
                "export",
                "split_conflict",
                &row.row_id,
                format!("volumes span splits {}", splits.into_iter().collect::<Vec<_>>().join(", ")),
            )),
        }
    }
    Ok(out)
}

/// `n` rows drawn without replacement with a ChaCha8 generator seeded by
/// `seed`, as a TSV sheet with a `row_id` column and one column per idiom.
pub fn sample_rows(rows: &[MultiParallelRow], n: usize, seed: u64) -> Result<String, ExportError> {
    if n > rows.len() {
        return Err(ExportError::SampleTooLarge { requested: n, available: rows.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let (picked, _) = order.partial_shuffle(&mut rng, n);
    let idioms: BTreeSet<&Idiom> = rows.iter().flat_map(|r| r.cells.keys()).collect();
    let mut out = String::from("row_id");
    for i in &idioms {
        out.push('\t');
        out.push_str(i.as_str());
    }
    out.push('\n');
    for &k in picked.iter() {
        let row = &rows[k];
        out.push_str(&sanitize_cell(&row.row_id));
        for i in &idioms {
            out.push('\t');
            if let Some(c) = row.cell(i) {
                out.push_str(&sanitize_cell(&c.text));
            }
        }
        out.push('\n');
    }
    Ok(out)
}
