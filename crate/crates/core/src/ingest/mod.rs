//! Raw volume ingestion and cross-idiom chapter grouping.

mod html;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

pub use html::{segment_html, MarkupIssue, SegmentText};

use crate::model::{
    validate_volume_id, BookVolume, Chapter, ChapterGroup, ChapterRef, Corpus, GroupMember, Idiom, IdiomSet,
    ModelError, Segment, VolumeKind,
};
use crate::report::Warning;
use crate::text::normalize_chapter_key;

const STAGE: &str = "ingest";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}: malformed volume document at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{source_name}: unknown idiom code {code:?}")]
    UnknownIdiom { source_name: String, code: String },
    #[error("{source_name}: {message}")]
    InvalidVolume { source_name: String, message: String },
    #[error("mapping line {line}: {message}")]
    Mapping { line: usize, message: String },
    #[error("mapping line {line}, column {idiom}: no chapter {cell:?}")]
    DanglingReference { line: usize, idiom: String, cell: String },
    #[error("duplicate volume {idiom}/{volume_id}")]
    DuplicateVolume { idiom: String, volume_id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVolume {
    idiom: String,
    volume_id: String,
    grade: u8,
    kind: VolumeKind,
    #[serde(default)]
    chapters: Vec<RawChapter>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChapter {
    title: String,
    #[serde(default)]
    elements: Vec<RawElement>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    html: String,
}

/// Parses one raw volume document. `source_name` only labels errors and warnings.
pub fn parse_volume(raw: &[u8], source_name: &str, idioms: &IdiomSet) -> Result<(BookVolume, Vec<Warning>), IngestError> {
    let doc: RawVolume = serde_json::from_slice(raw).map_err(|e| IngestError::Parse {
        source_name: source_name.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let unknown = || IngestError::UnknownIdiom {
        source_name: source_name.to_string(),
        code: doc.idiom.clone(),
    };
    let idiom = Idiom::new(doc.idiom.clone()).map_err(|_| unknown())?;
    if !idioms.contains(&idiom) {
        return Err(unknown());
    }
    validate_volume_id(&doc.volume_id)?;

    let mut warnings = Vec::new();
    let mut keys = HashSet::new();
    let mut chapters = Vec::with_capacity(doc.chapters.len());
    for raw_chapter in doc.chapters {
        let key = normalize_chapter_key(&raw_chapter.title);
        let invalid = |message: String| IngestError::InvalidVolume {
            source_name: source_name.to_string(),
            message,
        };
        if key.is_empty() {
            return Err(invalid(format!("chapter title {:?} has no usable key", raw_chapter.title)));
        }
        if !keys.insert(key.clone()) {
            return Err(invalid(format!("two chapters normalize to key {key:?}")));
        }
        let chapter_ref = ChapterRef {
            idiom: idiom.clone(),
            volume_id: doc.volume_id.clone(),
            chapter_key: key.clone(),
        };
        let mut segments = Vec::new();
        for (n, element) in raw_chapter.elements.iter().enumerate() {
            let (pieces, issues) = segment_html(&element.html);
            for issue in issues {
                warnings.push(Warning::new(
                    STAGE,
                    "unbalanced_markup",
                    format!("{chapter_ref} element {n} byte {}", issue.byte_offset),
                    issue.message,
                ));
            }
            for piece in pieces {
                let position = segments.len();
                segments.push(Segment::new(&chapter_ref, position, piece.text, piece.html));
            }
        }
        chapters.push(Chapter {
            key,
            title: raw_chapter.title,
            segments,
        });
    }
    Ok((
        BookVolume {
            idiom,
            volume_id: doc.volume_id,
            grade: doc.grade,
            kind: doc.kind,
            chapters,
        },
        warnings,
    ))
}

/// One row of the chapter mapping file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRow {
    pub line: usize,
    pub group_id: String,
    pub cells: BTreeMap<Idiom, (String, String)>,
}

/// Chapter mapping TSV: a header of idiom codes (optionally led by a
/// `group_id` column), then one row per chapter group with cells
/// `volume_id#chapter_key` or empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChapterMapping {
    pub rows: Vec<MappingRow>,
}

impl ChapterMapping {
    pub fn parse(tsv: &str, idioms: &IdiomSet) -> Result<Self, IngestError> {
        let mut lines = tsv.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, header)) = lines.next() else {
            return Ok(Self { rows: Vec::new() });
        };
        let mut columns: Vec<Option<Idiom>> = Vec::new();
        let mut has_group_column = false;
        for (c, name) in header.split('\t').map(str::trim).enumerate() {
            if c == 0 && name == "group_id" {
                has_group_column = true;
                columns.push(None);
                continue;
            }
            let idiom = Idiom::new(name)
                .ok()
                .filter(|i| idioms.contains(i))
                .ok_or_else(|| IngestError::Mapping {
                    line: 1,
                    message: format!("unknown idiom column {name:?}"),
                })?;
            if columns.iter().flatten().any(|i| *i == idiom) {
                return Err(IngestError::Mapping { line: 1, message: format!("idiom column {idiom} repeated") });
            }
            columns.push(Some(idiom));
        }

        let mut rows = Vec::new();
        for (n, (idx, line)) in lines.enumerate() {
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() > columns.len() {
                return Err(IngestError::Mapping {
                    line: line_no,
                    message: format!("{} fields for {} columns", fields.len(), columns.len()),
                });
            }
            let mut group_id = format!("g{:04}", n + 1);
            let mut cells = BTreeMap::new();
            for (field, column) in fields.iter().map(|f| f.trim()).zip(&columns) {
                let Some(idiom) = column else {
                    if !field.is_empty() {
                        group_id = field.to_string();
                    }
                    continue;
                };
                if field.is_empty() {
                    continue;
                }
                let (volume, key) = field.split_once('#').ok_or_else(|| IngestError::Mapping {
                    line: line_no,
                    message: format!("cell {field:?} in column {idiom} is not volume_id#chapter_key"),
                })?;
                cells.insert(idiom.clone(), (volume.to_string(), normalize_chapter_key(key)));
            }
            if has_group_column && rows.iter().any(|r: &MappingRow| r.group_id == group_id) {
                return Err(IngestError::Mapping { line: line_no, message: format!("group id {group_id} repeated") });
            }
            rows.push(MappingRow { line: line_no, group_id, cells });
        }
        Ok(Self { rows })
    }
}

/// Resolves each mapping row to a chapter group. Rows with fewer than two
/// filled cells are skipped with a warning.
pub fn build_chapter_groups(
    volumes: &[BookVolume],
    mapping: &ChapterMapping,
) -> Result<(Vec<ChapterGroup>, Vec<Warning>), IngestError> {
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for row in &mapping.rows {
        let mut members = BTreeMap::new();
        for (idiom, (volume_id, key)) in &row.cells {
            let chapter = volumes
                .iter()
                .find(|v| &v.idiom == idiom && &v.volume_id == volume_id)
                .and_then(|v| v.chapter(key))
                .ok_or_else(|| IngestError::DanglingReference {
                    line: row.line,
                    idiom: idiom.to_string(),
                    cell: format!("{volume_id}#{key}"),
                })?;
            members.insert(
                idiom.clone(),
                GroupMember {
                    volume_id: volume_id.clone(),
                    chapter: chapter.clone(),
                },
            );
        }
        if members.len() < 2 {
            warnings.push(Warning::new(
                STAGE,
                "group_below_minimum",
                format!("mapping line {}", row.line),
                format!("group {} has {} chapter(s); needs 2 to align", row.group_id, members.len()),
            ));
            continue;
        }
        groups.push(ChapterGroup::new(row.group_id.clone(), members)?);
    }
    Ok((groups, warnings))
}

/// Result of ingesting a directory of raw volumes.
#[derive(Debug)]
pub struct IngestOutput {
    pub corpus: Corpus,
    pub warnings: Vec<Warning>,
}

/// Parses every `*.json` file in `raw_dir` in parallel, then groups chapters
/// per the mapping file. Volumes are ordered by (idiom, volume_id).
pub fn ingest_dir(raw_dir: &Path, mapping_path: &Path, idioms: &IdiomSet) -> Result<IngestOutput, IngestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let mut files: Vec<PathBuf> = fs::read_dir(raw_dir)
        .map_err(io(raw_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();

    let parsed: Vec<(BookVolume, Vec<Warning>)> = files
        .par_iter()
        .map(|path| {
            let bytes = fs::read(path).map_err(io(path))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            parse_volume(&bytes, &name, idioms)
        })
        .collect::<Result<_, _>>()?;

    let mut parsed = parsed;
    parsed.sort_by(|a, b| (&a.0.idiom, &a.0.volume_id).cmp(&(&b.0.idiom, &b.0.volume_id)));
    let mut warnings = Vec::new();
    let mut volumes: Vec<BookVolume> = Vec::with_capacity(parsed.len());
    for (volume, w) in parsed {
        if volumes.last().is_some_and(|v| v.idiom == volume.idiom && v.volume_id == volume.volume_id) {
            return Err(IngestError::DuplicateVolume {
                idiom: volume.idiom.to_string(),
                volume_id: volume.volume_id,
            });
        }
        warnings.extend(w);
        volumes.push(volume);
    }

    let tsv = fs::read_to_string(mapping_path).map_err(io(mapping_path))?;
    let mapping = ChapterMapping::parse(&tsv, idioms)?;
    let (groups, group_warnings) = build_chapter_groups(&volumes, &mapping)?;
    warnings.extend(group_warnings);
    Ok(IngestOutput {
        corpus: Corpus::new(volumes, &groups),
        warnings,
    })
}
