//! Corpus data model: idioms, volumes, chapters, segments, chapter groups and
//! multi-parallel rows.
//!
//! Every value here is immutable once built and is `Send + Sync`, so worker
//! pools share them by reference.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Version of the on-disk corpus and row formats.
pub const FORMAT_VERSION: u32 = 1;

/// The five regional standard varieties of Romansh.
pub const CANONICAL_IDIOMS: [&str; 5] = ["sursilvan", "sutsilvan", "surmiran", "puter", "vallader"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid idiom code {0:?}: must be non-empty lowercase ASCII letters, digits, '-' or '_'")]
    InvalidIdiom(String),
    #[error("invalid volume id {0:?}: must be non-empty and contain no '/', '#', or whitespace")]
    InvalidVolumeId(String),
    #[error("malformed segment id {0:?}")]
    MalformedSegmentId(String),
    #[error("chapter group {group}: {reason}")]
    InvalidGroup { group: String, reason: String },
}

/// Short identifier of a language variety.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Idiom(String);

impl Idiom {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        let ok = !code.is_empty()
            && code
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
        if ok {
            Ok(Self(code))
        } else {
            Err(ModelError::InvalidIdiom(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Idiom {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Idiom> for String {
    fn from(value: Idiom) -> Self {
        value.0
    }
}

impl fmt::Display for Idiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The set of idiom codes a build accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdiomSet(BTreeSet<Idiom>);

impl IdiomSet {
    pub fn canonical() -> Self {
        Self(
            CANONICAL_IDIOMS
                .iter()
                .map(|c| Idiom::new(*c).expect("canonical codes are valid"))
                .collect(),
        )
    }

    pub fn from_codes<I, S>(codes: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        codes
            .into_iter()
            .map(Idiom::new)
            .collect::<Result<BTreeSet<_>, _>>()
            .map(Self)
    }

    pub fn with(mut self, idiom: Idiom) -> Self {
        self.0.insert(idiom);
        self
    }

    pub fn contains(&self, idiom: &Idiom) -> bool {
        self.0.contains(idiom)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Idiom> {
        self.0.iter()
    }
}

impl Default for IdiomSet {
    fn default() -> Self {
        Self::canonical()
    }
}

pub fn validate_volume_id(volume_id: &str) -> Result<(), ModelError> {
    if volume_id.is_empty() || volume_id.contains(['/', '#']) || volume_id.contains(char::is_whitespace) {
        Err(ModelError::InvalidVolumeId(volume_id.to_string()))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Workbook,
    Commentary,
}

/// Stable segment identifier `idiom/volume_id/chapter_key/position`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(idiom: &Idiom, volume_id: &str, chapter_key: &str, position: usize) -> Self {
        Self(format!("{idiom}/{volume_id}/{chapter_key}/{position}"))
    }

    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let id = Self(raw.to_string());
        id.parts()?;
        Ok(id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn parts(&self) -> Result<(Idiom, &str, &str, usize), ModelError> {
        let bad = || ModelError::MalformedSegmentId(self.0.clone());
        let (head, position) = self.0.rsplit_once('/').ok_or_else(bad)?;
        let position = position.parse().map_err(|_| bad())?;
        let (idiom, rest) = head.split_once('/').ok_or_else(bad)?;
        let (volume, key) = rest.split_once('/').ok_or_else(bad)?;
        let idiom = Idiom::new(idiom).map_err(|_| bad())?;
        if volume.is_empty() || key.is_empty() {
            return Err(bad());
        }
        Ok((idiom, volume, key, position))
    }

    pub fn idiom(&self) -> Result<Idiom, ModelError> {
        self.parts().map(|p| p.0)
    }

    pub fn volume_id(&self) -> Result<&str, ModelError> {
        self.parts().map(|p| p.1)
    }

    pub fn chapter(&self) -> Result<ChapterRef, ModelError> {
        let (idiom, volume, key, _) = self.parts()?;
        Ok(ChapterRef {
            idiom,
            volume_id: volume.to_string(),
            chapter_key: key.to_string(),
        })
    }

    pub fn position(&self) -> Result<usize, ModelError> {
        self.parts().map(|p| p.3)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One extracted text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub idiom: Idiom,
    pub position: usize,
    /// Original element markup.
    pub html: String,
    /// Escaped plain text keeping only `<strong>` markup.
    pub text: String,
    pub token_count: usize,
}

impl Segment {
    pub fn new(chapter: &ChapterRef, position: usize, text: String, html: String) -> Self {
        Self {
            id: chapter.segment_id(position),
            idiom: chapter.idiom.clone(),
            position,
            token_count: text::token_count(&text),
            html,
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chapter {
    pub key: String,
    pub title: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookVolume {
    pub idiom: Idiom,
    pub volume_id: String,
    pub grade: u8,
    pub kind: VolumeKind,
    pub chapters: Vec<Chapter>,
}

impl BookVolume {
    pub fn chapter(&self, key: &str) -> Option<&Chapter> {
        self.chapters.iter().find(|c| c.key == key)
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.chapters.iter().flat_map(|c| c.segments.iter())
    }
}

/// Locates one chapter of one idiom's volume.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChapterRef {
    pub idiom: Idiom,
    pub volume_id: String,
    pub chapter_key: String,
}

impl ChapterRef {
    pub fn segment_id(&self, position: usize) -> SegmentId {
        SegmentId::new(&self.idiom, &self.volume_id, &self.chapter_key, position)
    }
}

impl fmt::Display for ChapterRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}#{}", self.idiom, self.volume_id, self.chapter_key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterLocator {
    pub volume_id: String,
    pub chapter_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMember {
    pub volume_id: String,
    pub chapter: Chapter,
}

/// Chapters of different idioms that cover the same content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChapterGroup {
    pub group_id: String,
    pub members: BTreeMap<Idiom, GroupMember>,
}

impl ChapterGroup {
    pub fn new(group_id: impl Into<String>, members: BTreeMap<Idiom, GroupMember>) -> Result<Self, ModelError> {
        let group_id = group_id.into();
        if members.len() < 2 {
            return Err(ModelError::InvalidGroup {
                group: group_id,
                reason: format!("needs at least 2 members, got {}", members.len()),
            });
        }
        Ok(Self { group_id, members })
    }

    pub fn idioms(&self) -> Vec<Idiom> {
        self.members.keys().cloned().collect()
    }

    pub fn chapter_ref(&self, idiom: &Idiom) -> Option<ChapterRef> {
        self.members.get(idiom).map(|m| ChapterRef {
            idiom: idiom.clone(),
            volume_id: m.volume_id.clone(),
            chapter_key: m.chapter.key.clone(),
        })
    }

    pub fn chapter(&self, idiom: &Idiom) -> Option<&Chapter> {
        self.members.get(idiom).map(|m| &m.chapter)
    }

    pub fn spec(&self) -> GroupSpec {
        GroupSpec {
            group_id: self.group_id.clone(),
            members: self
                .members
                .iter()
                .map(|(idiom, m)| {
                    (
                        idiom.clone(),
                        ChapterLocator {
                            volume_id: m.volume_id.clone(),
                            chapter_key: m.chapter.key.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Serialized form of a chapter group: references into the corpus volumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group_id: String,
    pub members: BTreeMap<Idiom, ChapterLocator>,
}

/// The ingested corpus as written to `corpus.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub format_version: u32,
    pub volumes: Vec<BookVolume>,
    pub groups: Vec<GroupSpec>,
}

impl Corpus {
    pub fn new(volumes: Vec<BookVolume>, groups: &[ChapterGroup]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            volumes,
            groups: groups.iter().map(ChapterGroup::spec).collect(),
        }
    }

    pub fn volume(&self, idiom: &Idiom, volume_id: &str) -> Option<&BookVolume> {
        self.volumes
            .iter()
            .find(|v| &v.idiom == idiom && v.volume_id == volume_id)
    }

    /// Resolves the stored group references against the volumes.
    pub fn chapter_groups(&self) -> Result<Vec<ChapterGroup>, ModelError> {
        self.groups
            .iter()
            .map(|spec| {
                let mut members = BTreeMap::new();
                for (idiom, loc) in &spec.members {
                    let chapter = self
                        .volume(idiom, &loc.volume_id)
                        .and_then(|v| v.chapter(&loc.chapter_key))
                        .ok_or_else(|| ModelError::InvalidGroup {
                            group: spec.group_id.clone(),
                            reason: format!("no chapter {}/{}#{}", idiom, loc.volume_id, loc.chapter_key),
                        })?;
                    members.insert(
                        idiom.clone(),
                        GroupMember {
                            volume_id: loc.volume_id.clone(),
                            chapter: chapter.clone(),
                        },
                    );
                }
                ChapterGroup::new(spec.group_id.clone(), members)
            })
            .collect()
    }

    pub fn segment_index(&self) -> HashMap<&SegmentId, &Segment> {
        self.volumes
            .iter()
            .flat_map(|v| v.segments())
            .map(|s| (&s.id, s))
            .collect()
    }

    pub fn idioms(&self) -> BTreeSet<Idiom> {
        self.volumes.iter().map(|v| v.idiom.clone()).collect()
    }
}

/// One cell of a multi-parallel row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellRef {
    pub segment_id: SegmentId,
    pub text: String,
}

impl CellRef {
    pub fn from_segment(segment: &Segment) -> Self {
        Self {
            segment_id: segment.id.clone(),
            text: segment.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowFlag {
    /// A cell was removed because its length deviated from the row average.
    LengthFiltered { idiom: Idiom, segment_id: SegmentId },
}

/// One aligned tuple across idioms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiParallelRow {
    pub row_id: String,
    pub cells: BTreeMap<Idiom, Option<CellRef>>,
    /// Chapter group the row was built from.
    pub provenance: String,
    #[serde(default)]
    pub flags: BTreeSet<RowFlag>,
}

impl MultiParallelRow {
    pub fn filled(&self) -> impl Iterator<Item = (&Idiom, &CellRef)> {
        self.cells.iter().filter_map(|(i, c)| c.as_ref().map(|c| (i, c)))
    }

    pub fn filled_count(&self) -> usize {
        self.cells.values().filter(|c| c.is_some()).count()
    }

    pub fn is_aligned(&self) -> bool {
        self.filled_count() >= 2
    }

    pub fn cell(&self, idiom: &Idiom) -> Option<&CellRef> {
        self.cells.get(idiom).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiParallelAlignment {
    pub rows: Vec<MultiParallelRow>,
}

impl MultiParallelAlignment {
    pub fn new(rows: Vec<MultiParallelRow>) -> Self {
        Self { rows }
    }

    /// Segment ids that occur in more than one row.
    pub fn repeated_segments(&self) -> Vec<SegmentId> {
        let mut seen = HashSet::new();
        let mut repeated = BTreeSet::new();
        for row in &self.rows {
            for (_, cell) in row.filled() {
                if !seen.insert(&cell.segment_id) {
                    repeated.insert(cell.segment_id.clone());
                }
            }
        }
        repeated.into_iter().collect()
    }

    pub fn aligned(&self) -> impl Iterator<Item = &MultiParallelRow> {
        self.rows.iter().filter(|r| r.is_aligned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    InvalidVolumeId,
    DuplicateVolume,
    EmptyChapterKey,
    DuplicateChapterKey,
    DuplicatePosition,
    PositionGap,
    SegmentIdMismatch,
    DuplicateSegmentId,
    IdiomMismatch,
    EmptyText,
    TokenCount,
    ForbiddenTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Segment id, or `idiom/volume#chapter` for chapter-level findings.
    pub location: String,
    pub message: String,
}

/// Checks the model invariants, returning one entry per violation.
pub fn validate_corpus(volumes: &[BookVolume]) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |kind, location: String, message: String| {
        report.push(Violation { kind, location, message })
    };
    let mut volume_ids = HashSet::new();
    let mut segment_ids: HashMap<&SegmentId, String> = HashMap::new();

    for volume in volumes {
        let vloc = format!("{}/{}", volume.idiom, volume.volume_id);
        if validate_volume_id(&volume.volume_id).is_err() {
            push(ViolationKind::InvalidVolumeId, vloc.clone(), "volume id is not usable in segment ids".into());
        }
        if !volume_ids.insert((&volume.idiom, &volume.volume_id)) {
            push(ViolationKind::DuplicateVolume, vloc.clone(), "volume id repeated for this idiom".into());
        }
        let mut keys = HashSet::new();
        for chapter in &volume.chapters {
            let cloc = format!("{vloc}#{}", chapter.key);
            if chapter.key.is_empty() {
                push(ViolationKind::EmptyChapterKey, cloc.clone(), format!("title {:?} has an empty key", chapter.title));
            } else if !keys.insert(&chapter.key) {
                push(ViolationKind::DuplicateChapterKey, cloc.clone(), "chapter key repeated in volume".into());
            }

            let mut positions: BTreeMap<usize, usize> = BTreeMap::new();
            for segment in &chapter.segments {
                *positions.entry(segment.position).or_default() += 1;
            }
            let duplicated: Vec<_> = positions.iter().filter(|(_, n)| **n > 1).map(|(p, _)| *p).collect();
            for p in &duplicated {
                push(ViolationKind::DuplicatePosition, cloc.clone(), format!("position {p} used more than once"));
            }
            if duplicated.is_empty() && positions.keys().copied().ne(0..chapter.segments.len()) {
                push(ViolationKind::PositionGap, cloc.clone(), "positions are not 0..len-1".into());
            }

            let reference = ChapterRef {
                idiom: volume.idiom.clone(),
                volume_id: volume.volume_id.clone(),
                chapter_key: chapter.key.clone(),
            };
            for segment in &chapter.segments {
                let sloc = segment.id.to_string();
                if segment.idiom != volume.idiom {
                    push(ViolationKind::IdiomMismatch, sloc.clone(), format!("segment idiom {} in {} volume", segment.idiom, volume.idiom));
                }
                if segment.id != reference.segment_id(segment.position) {
                    push(ViolationKind::SegmentIdMismatch, sloc.clone(), "id does not encode idiom/volume/chapter/position".into());
                }
                // Ids repeated inside one chapter are already covered by DuplicatePosition.
                if let Some(prev) = segment_ids.insert(&segment.id, cloc.clone()) {
                    if prev != cloc || !duplicated.contains(&segment.position) {
                        push(ViolationKind::DuplicateSegmentId, sloc.clone(), format!("id also used in {prev}"));
                    }
                }
                if text::collapse_whitespace(&text::strip_strong(&segment.text)).is_empty() {
                    push(ViolationKind::EmptyText, sloc.clone(), "text is empty after collapsing whitespace".into());
                } else if segment.token_count != text::token_count(&segment.text) || segment.token_count == 0 {
                    push(ViolationKind::TokenCount, sloc.clone(), format!("token_count {} does not match text", segment.token_count));
                }
                if let Some(tag) = text::tag_names(&segment.text).into_iter().find(|t| t != "strong") {
                    push(ViolationKind::ForbiddenTag, sloc, format!("tag <{tag}> in text"));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idiom(code: &str) -> Idiom {
        Idiom::new(code).unwrap()
    }

    fn volume(texts: &[&str]) -> BookVolume {
        let chapter_ref = ChapterRef {
            idiom: idiom("puter"),
            volume_id: "v1".into(),
            chapter_key: "intro".into(),
        };
        let segments = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Segment::new(&chapter_ref, i, t.to_string(), format!("<p>{t}</p>")))
            .collect();
        BookVolume {
            idiom: idiom("puter"),
            volume_id: "v1".into(),
            grade: 3,
            kind: VolumeKind::Workbook,
            chapters: vec![Chapter {
                key: "intro".into(),
                title: "Intro".into(),
                segments,
            }],
        }
    }

    #[test]
    fn idiom_codes() {
        assert!(Idiom::new("vallader").is_ok());
        assert!(Idiom::new("rm-surmiran").is_ok());
        assert!(Idiom::new("").is_err());
        assert!(Idiom::new("Puter").is_err());
        assert!(serde_json::from_str::<Idiom>("\"PUTER\"").is_err());
    }

    #[test]
    fn segment_id_roundtrip() {
        let id = SegmentId::new(&idiom("puter"), "v-3", "unit 1 animals", 12);
        assert_eq!(id.as_str(), "puter/v-3/unit 1 animals/12");
        let parsed = SegmentId::parse(id.as_str()).unwrap();
        assert_eq!(parsed.position().unwrap(), 12);
        assert_eq!(parsed.volume_id().unwrap(), "v-3");
        assert_eq!(parsed.chapter().unwrap().chapter_key, "unit 1 animals");
        assert!(SegmentId::parse("puter/v1/7").is_err());
        assert!(SegmentId::parse("puter/v1/k/x").is_err());
    }

    #[test]
    fn well_formed_volume_has_empty_report() {
        assert!(validate_corpus(&[volume(&["a b", "<strong>c</strong>"])]).is_empty());
    }

    #[test]
    fn empty_text_is_reported_once() {
        let mut v = volume(&["a", "b"]);
        v.chapters[0].segments[1].text = "   ".into();
        let report = validate_corpus(&[v]);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, ViolationKind::EmptyText);
        assert_eq!(report[0].location, "puter/v1/intro/1");
    }

    #[test]
    fn duplicate_position_is_reported_once() {
        let mut v = volume(&["a", "b"]);
        let first = v.chapters[0].segments[0].clone();
        v.chapters[0].segments[1] = Segment { text: "b".into(), ..first };
        let report = validate_corpus(&[v]);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].kind, ViolationKind::DuplicatePosition);
    }

    #[test]
    fn other_violations() {
        let mut v = volume(&["a", "b", "c"]);
        v.chapters[0].segments[0].text = "<em>a</em>".into();
        v.chapters[0].segments[1].token_count = 4;
        v.chapters[0].segments.remove(2);
        v.chapters[0].segments[1].position = 2;
        let kinds: Vec<_> = validate_corpus(&[v]).into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::ForbiddenTag));
        assert!(kinds.contains(&ViolationKind::TokenCount));
        assert!(kinds.contains(&ViolationKind::PositionGap));
        assert!(kinds.contains(&ViolationKind::SegmentIdMismatch));
    }

    #[test]
    fn groups_need_two_members() {
        assert!(ChapterGroup::new("g", BTreeMap::new()).is_err());
    }

    #[test]
    fn row_flags_serialize_tagged() {
        let flag = RowFlag::LengthFiltered {
            idiom: idiom("puter"),
            segment_id: SegmentId::parse("puter/v/k/0").unwrap(),
        };
        let json = serde_json::to_string(&flag).unwrap();
        assert_eq!(json, r#"{"kind":"length_filtered","idiom":"puter","segment_id":"puter/v/k/0"}"#);
    }
}
