//! Lifts bilingual chapter alignments to multi-parallel rows.
//!
//! For idioms `i`, `j` and pivot `p`, the pivot alignment `A_ij^(p)` links
//! `s_i` to `s_j` whenever both are aligned to the same pivot segment, and
//! keeps segments without such a partner as one-sided pairs. The consensus
//! for `(i, j)` is the intersection of the pivot alignments over every pivot,
//! where `p = i` or `p = j` contributes the direct alignment `A_ij`. Consensus
//! pairs of all idiom pairs are then merged into rows through connected
//! components; a component holding two segments of one idiom is dropped.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bialign::BilingualAlignment;
use crate::model::{
    CellRef, ChapterGroup, Idiom, MultiParallelAlignment, MultiParallelRow, RowFlag, SegmentId,
};
use crate::text;

#[derive(Debug, Error, PartialEq)]
pub enum MultiAlignError {
    #[error("alignments do not share the pivot chapter: {0} vs {1}")]
    PivotMismatch(String, String),
    #[error("consensus for {0}-{1} is missing pivot(s): {2}")]
    MissingPivots(Idiom, Idiom, String),
    #[error("consensus inputs concern different idiom pairs: {0}")]
    PairMismatch(String),
    #[error("group {group}: no alignment for {a}-{b}")]
    MissingAlignment { group: String, a: Idiom, b: Idiom },
    #[error("group {group}: alignment {which} does not match the group's chapters")]
    ForeignAlignment { group: String, which: String },
    #[error("length filter ratios must satisfy 0 < lower < 1 < upper, got {0} and {1}")]
    InvalidRatios(f64, f64),
}

/// An unordered pair of (optional) segments.
pub type SegmentPair = (Option<SegmentId>, Option<SegmentId>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Direct,
    Pivot(Idiom),
    Consensus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLinkSet {
    pub idiom_a: Idiom,
    pub idiom_b: Idiom,
    pub pairs: BTreeSet<SegmentPair>,
    pub origin: Origin,
}

impl PairLinkSet {
    /// The direct alignment viewed as a set of segment pairs.
    pub fn from_alignment(alignment: &BilingualAlignment) -> Self {
        let pairs = alignment
            .links
            .iter()
            .map(|l| {
                (
                    l.src.map(|i| alignment.src.segment_id(i)),
                    l.tgt.map(|j| alignment.tgt.segment_id(j)),
                )
            })
            .collect();
        Self {
            idiom_a: alignment.src.idiom.clone(),
            idiom_b: alignment.tgt.idiom.clone(),
            pairs,
            origin: Origin::Direct,
        }
    }

    /// Pairs with both sides present.
    pub fn full_pairs(&self) -> impl Iterator<Item = (&SegmentId, &SegmentId)> {
        self.pairs.iter().filter_map(|(a, b)| Some((a.as_ref()?, b.as_ref()?)))
    }

    /// True when no pair is empty and no segment occurs twice.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.pairs.iter().all(|(a, b)| {
            (a.is_some() || b.is_some()) && [a, b].into_iter().flatten().all(|s| seen.insert(s.clone()))
        })
    }
}

/// Joins `a_ip` (i to pivot) and `a_pj` (pivot to j) on the pivot chapter.
pub fn pivot_join(a_ip: &BilingualAlignment, a_pj: &BilingualAlignment) -> Result<PairLinkSet, MultiAlignError> {
    if a_ip.tgt != a_pj.src {
        return Err(MultiAlignError::PivotMismatch(a_ip.tgt.to_string(), a_pj.src.to_string()));
    }
    let to_j: HashMap<usize, Option<usize>> = a_pj.links.iter().filter_map(|l| Some((l.src?, l.tgt))).collect();
    let mut joined_j = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for link in &a_ip.links {
        let Some(i) = link.src else { continue };
        let partner = link.tgt.and_then(|p| to_j.get(&p).copied().flatten());
        if let Some(j) = partner {
            joined_j.insert(j);
        }
        pairs.insert((Some(a_ip.src.segment_id(i)), partner.map(|j| a_pj.tgt.segment_id(j))));
    }
    for j in a_pj.links.iter().filter_map(|l| l.tgt) {
        if !joined_j.contains(&j) {
            pairs.insert((None, Some(a_pj.tgt.segment_id(j))));
        }
    }
    Ok(PairLinkSet {
        idiom_a: a_ip.src.idiom.clone(),
        idiom_b: a_pj.tgt.idiom.clone(),
        pairs,
        origin: Origin::Pivot(a_ip.tgt.idiom.clone()),
    })
}

/// Pairs present in every pivot's set; one-sided pairs never survive.
pub fn consensus(
    pair_sets: &BTreeMap<Idiom, PairLinkSet>,
    pivots: &[Idiom],
    idiom_a: &Idiom,
    idiom_b: &Idiom,
) -> Result<PairLinkSet, MultiAlignError> {
    let missing: Vec<&str> = pivots.iter().filter(|p| !pair_sets.contains_key(*p)).map(Idiom::as_str).collect();
    if !missing.is_empty() {
        return Err(MultiAlignError::MissingPivots(idiom_a.clone(), idiom_b.clone(), missing.join(", ")));
    }
    if let Some(bad) = pair_sets.values().find(|s| (&s.idiom_a, &s.idiom_b) != (idiom_a, idiom_b)) {
        return Err(MultiAlignError::PairMismatch(format!(
            "expected {idiom_a}-{idiom_b}, got {}-{}",
            bad.idiom_a, bad.idiom_b
        )));
    }
    let mut sets = pivots.iter().map(|p| &pair_sets[p]);
    let pairs = match sets.next() {
        None => BTreeSet::new(),
        Some(first) => {
            let rest: Vec<_> = sets.collect();
            first
                .pairs
                .iter()
                .filter(|pair| pair.0.is_some() && pair.1.is_some())
                .filter(|pair| rest.iter().all(|s| s.pairs.contains(*pair)))
                .cloned()
                .collect()
        }
    };
    Ok(PairLinkSet {
        idiom_a: idiom_a.clone(),
        idiom_b: idiom_b.clone(),
        pairs,
        origin: Origin::Consensus,
    })
}

/// Why segments were left out of the aligned rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub group_id: String,
    pub reason: DropReason,
    pub segments: Vec<SegmentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// A connected component held two segments of one idiom.
    ConflictingComponent,
    /// Fewer than two cells survived the length filter.
    DemotedRow,
    /// The group does not contain the requested pivot idiom.
    PivotAbsent,
}

fn cell_for(group: &ChapterGroup, id: &SegmentId) -> Option<CellRef> {
    let idiom = id.idiom().ok()?;
    let position = id.position().ok()?;
    group.chapter(&idiom)?.segments.get(position).map(CellRef::from_segment)
}

fn empty_cells(group: &ChapterGroup) -> BTreeMap<Idiom, Option<CellRef>> {
    group.members.keys().map(|i| (i.clone(), None)).collect()
}

/// Sort key: smallest position in the row, then the idiom holding it.
fn row_key(row: &MultiParallelRow) -> (usize, Idiom) {
    row.filled()
        .filter_map(|(i, c)| Some((c.segment_id.position().ok()?, i.clone())))
        .min()
        .expect("rows have at least one cell")
}

fn number_rows(group_id: &str, rows: &mut [MultiParallelRow]) {
    for (n, row) in rows.iter_mut().enumerate() {
        row.row_id = format!("{group_id}/{n:04}");
    }
}

/// Full outer join of the pivot's bilingual alignments: one row per pivot
/// segment plus one single-cell row per segment not matched to the pivot.
/// Each alignment must run from the pivot chapter to another member chapter.
pub fn pivot_multialign(
    group: &ChapterGroup,
    pivot: &Idiom,
    alignments: &BTreeMap<Idiom, BilingualAlignment>,
) -> Result<MultiParallelAlignment, MultiAlignError> {
    let pivot_ref = group.chapter_ref(pivot).ok_or_else(|| MultiAlignError::ForeignAlignment {
        group: group.group_id.clone(),
        which: format!("pivot {pivot}"),
    })?;
    let pivot_chapter = group.chapter(pivot).expect("pivot is a member");
    let mut rows: Vec<MultiParallelRow> = pivot_chapter
        .segments
        .iter()
        .map(|s| {
            let mut cells = empty_cells(group);
            cells.insert(pivot.clone(), Some(CellRef::from_segment(s)));
            MultiParallelRow {
                row_id: String::new(),
                cells,
                provenance: group.group_id.clone(),
                flags: BTreeSet::new(),
            }
        })
        .collect();
    let mut singletons = Vec::new();
    for (idiom, alignment) in alignments {
        if alignment.src != pivot_ref {
            return Err(MultiAlignError::PivotMismatch(pivot_ref.to_string(), alignment.src.to_string()));
        }
        if Some(&alignment.tgt) != group.chapter_ref(idiom).as_ref() {
            return Err(MultiAlignError::ForeignAlignment {
                group: group.group_id.clone(),
                which: format!("{pivot}-{idiom}"),
            });
        }
        let other = group.chapter(idiom).expect("checked above");
        for link in &alignment.links {
            let cell = link.tgt.and_then(|j| other.segments.get(j)).map(CellRef::from_segment);
            match (link.src, cell) {
                (Some(k), cell) => {
                    if let Some(row) = rows.get_mut(k) {
                        row.cells.insert(idiom.clone(), cell);
                    }
                }
                (None, Some(cell)) => {
                    let mut cells = empty_cells(group);
                    cells.insert(idiom.clone(), Some(cell));
                    singletons.push(MultiParallelRow {
                        row_id: String::new(),
                        cells,
                        provenance: group.group_id.clone(),
                        flags: BTreeSet::new(),
                    });
                }
                (None, None) => {}
            }
        }
    }
    rows.extend(singletons);
    number_rows(&group.group_id, &mut rows);
    Ok(MultiParallelAlignment::new(rows))
}

/// Builds rows from the consensus pairs of every idiom pair of one group.
/// Returns the rows with at least two segments and a record per dropped component.
pub fn assemble_rows(group: &ChapterGroup, consensus_sets: &[PairLinkSet]) -> (MultiParallelAlignment, Vec<DropRecord>) {
    let mut index: BTreeMap<&SegmentId, usize> = BTreeMap::new();
    let mut edges = Vec::new();
    for set in consensus_sets {
        for (a, b) in set.full_pairs() {
            let next = index.len();
            let ia = *index.entry(a).or_insert(next);
            let next = index.len();
            let ib = *index.entry(b).or_insert(next);
            edges.push((ia, ib));
        }
    }
    let mut parent: Vec<usize> = (0..index.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut components: BTreeMap<usize, Vec<&SegmentId>> = BTreeMap::new();
    for (id, &k) in &index {
        let root = find(&mut parent, k);
        components.entry(root).or_default().push(id);
    }

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for members in components.into_values() {
        let mut cells = empty_cells(group);
        let mut conflict = false;
        for id in &members {
            let idiom = id.idiom().expect("segment ids in alignments are well-formed");
            let slot = cells.entry(idiom).or_insert(None);
            if slot.is_some() {
                conflict = true;
            }
            *slot = cell_for(group, id);
        }
        if conflict {
            dropped.push(DropRecord {
                group_id: group.group_id.clone(),
                reason: DropReason::ConflictingComponent,
                segments: members.into_iter().cloned().collect(),
            });
            continue;
        }
        let row = MultiParallelRow {
            row_id: String::new(),
            cells,
            provenance: group.group_id.clone(),
            flags: BTreeSet::new(),
        };
        if row.is_aligned() {
            rows.push(row);
        }
    }
    rows.sort_by_key(row_key);
    number_rows(&group.group_id, &mut rows);
    (MultiParallelAlignment::new(rows), dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Tokens,
    Characters,
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Tokens => text::token_count(text),
            LengthUnit::Characters => text::char_count(text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LengthFilterConfig {
    pub upper_ratio: f64,
    pub lower_ratio: f64,
    pub unit: LengthUnit,
}

impl Default for LengthFilterConfig {
    fn default() -> Self {
        Self {
            upper_ratio: 1.5,
            lower_ratio: 0.67,
            unit: LengthUnit::Tokens,
        }
    }
}

impl LengthFilterConfig {
    pub fn validate(&self) -> Result<(), MultiAlignError> {
        if 0.0 < self.lower_ratio && self.lower_ratio < 1.0 && 1.0 < self.upper_ratio && self.upper_ratio.is_finite() {
            Ok(())
        } else {
            Err(MultiAlignError::InvalidRatios(self.lower_ratio, self.upper_ratio))
        }
    }
}

/// A ratio as the exact decimal fraction of its shortest printed form, so
/// that 0.67 means 67/100 and boundary lengths compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DecimalRatio {
    num: u128,
    den: u128,
}

impl DecimalRatio {
    fn new(x: f64) -> Self {
        let printed = format!("{x}");
        let (int, frac) = printed.split_once('.').unwrap_or((&printed, ""));
        let den = 10u128.pow(frac.len() as u32);
        let num = format!("{int}{frac}").parse::<u128>().expect("finite positive ratio");
        Self { num, den }
    }
}

/// Removes cells whose length is strictly above `upper_ratio` times, or
/// strictly below `lower_ratio` times, the mean length of the row's cells.
/// The mean is taken once over the original row.
pub fn length_filter(row: &MultiParallelRow, config: &LengthFilterConfig) -> MultiParallelRow {
    let lengths: Vec<(Idiom, SegmentId, u128)> = row
        .filled()
        .map(|(i, c)| (i.clone(), c.segment_id.clone(), config.unit.measure(&c.text) as u128))
        .collect();
    if lengths.len() < 2 {
        return row.clone();
    }
    let count = lengths.len() as u128;
    let sum: u128 = lengths.iter().map(|l| l.2).sum();
    let (upper, lower) = (DecimalRatio::new(config.upper_ratio), DecimalRatio::new(config.lower_ratio));
    let mut out = row.clone();
    for (idiom, segment_id, len) in lengths {
        // len > r * sum / count  <=>  len * count * den > num * sum
        let too_long = len * count * upper.den > upper.num * sum;
        let too_short = len * count * lower.den < lower.num * sum;
        if too_long || too_short {
            out.cells.insert(idiom.clone(), None);
            out.flags.insert(RowFlag::LengthFiltered { idiom, segment_id });
        }
    }
    out
}

/// Which pivots contribute rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotMode {
    /// Consensus over every idiom of each group.
    All,
    /// Consensus over the listed idioms that a group contains.
    Consensus(Vec<Idiom>),
    /// Full outer join on one pivot, without consensus.
    Single(Idiom),
}

/// Where the length heuristic runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStage {
    /// On the assembled rows.
    #[default]
    AfterAssembly,
    /// On every pivot's outer-join rows, before taking the consensus.
    PerPivot,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiAlignConfig {
    pub pivots: PivotMode,
    pub filter: LengthFilterConfig,
    pub filter_stage: FilterStage,
}

impl Default for MultiAlignConfig {
    fn default() -> Self {
        Self {
            pivots: PivotMode::All,
            filter: LengthFilterConfig::default(),
            filter_stage: FilterStage::AfterAssembly,
        }
    }
}

/// Bilingual alignments of one group, stored once per unordered idiom pair.
#[derive(Debug, Clone, Default)]
pub struct PairAlignments {
    by_pair: BTreeMap<(Idiom, Idiom), BilingualAlignment>,
}

impl PairAlignments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, alignment: BilingualAlignment) {
        let key = (alignment.src.idiom.clone(), alignment.tgt.idiom.clone());
        if key.0 <= key.1 {
            self.by_pair.insert(key, alignment);
        } else {
            self.by_pair.insert((key.1, key.0), alignment.transposed());
        }
    }

    /// Alignment from `a` to `b`, transposing the stored one if needed.
    pub fn get(&self, a: &Idiom, b: &Idiom) -> Option<Cow<'_, BilingualAlignment>> {
        if a <= b {
            self.by_pair.get(&(a.clone(), b.clone())).map(Cow::Borrowed)
        } else {
            self.by_pair.get(&(b.clone(), a.clone())).map(|x| Cow::Owned(x.transposed()))
        }
    }

    pub fn len(&self) -> usize {
        self.by_pair.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_pair.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BilingualAlignment> {
        self.by_pair.values()
    }
}

/// Rows of one group plus everything that was left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupRows {
    pub rows: Vec<MultiParallelRow>,
    pub dropped: Vec<DropRecord>,
}

fn require<'a>(group: &ChapterGroup, alignments: &'a PairAlignments, a: &Idiom, b: &Idiom) -> Result<Cow<'a, BilingualAlignment>, MultiAlignError> {
    let alignment = alignments.get(a, b).ok_or_else(|| MultiAlignError::MissingAlignment {
        group: group.group_id.clone(),
        a: a.clone(),
        b: b.clone(),
    })?;
    if Some(&alignment.src) != group.chapter_ref(a).as_ref() || Some(&alignment.tgt) != group.chapter_ref(b).as_ref() {
        return Err(MultiAlignError::ForeignAlignment {
            group: group.group_id.clone(),
            which: format!("{a}-{b}"),
        });
    }
    Ok(alignment)
}

/// Outer-join rows for one pivot.
pub fn group_pivot_rows(group: &ChapterGroup, alignments: &PairAlignments, pivot: &Idiom) -> Result<MultiParallelAlignment, MultiAlignError> {
    let mut per_idiom = BTreeMap::new();
    for idiom in group.members.keys().filter(|i| *i != pivot) {
        per_idiom.insert(idiom.clone(), require(group, alignments, pivot, idiom)?.into_owned());
    }
    pivot_multialign(group, pivot, &per_idiom)
}

/// `A_ij^(p)`: the direct alignment when `p` is `i` or `j`, the pivot join otherwise.
pub fn pivot_pair_set(
    group: &ChapterGroup,
    alignments: &PairAlignments,
    i: &Idiom,
    j: &Idiom,
    p: &Idiom,
) -> Result<PairLinkSet, MultiAlignError> {
    if p == i || p == j {
        let mut set = PairLinkSet::from_alignment(&*require(group, alignments, i, j)?);
        set.origin = Origin::Pivot(p.clone());
        Ok(set)
    } else {
        pivot_join(&*require(group, alignments, i, p)?, &*require(group, alignments, p, j)?)
    }
}

/// Projects rows onto the (i, j) pairs they contain.
fn project_rows(rows: &[MultiParallelRow], i: &Idiom, j: &Idiom, origin: Origin) -> PairLinkSet {
    let pairs = rows
        .iter()
        .filter_map(|r| Some((Some(r.cell(i)?.segment_id.clone()), Some(r.cell(j)?.segment_id.clone()))))
        .collect();
    PairLinkSet { idiom_a: i.clone(), idiom_b: j.clone(), pairs, origin }
}

fn filter_rows(rows: Vec<MultiParallelRow>, config: &MultiAlignConfig, group_id: &str, out: &mut GroupRows) {
    for row in rows {
        let row = if config.filter_stage == FilterStage::AfterAssembly {
            length_filter(&row, &config.filter)
        } else {
            row
        };
        if row.is_aligned() {
            out.rows.push(row);
        } else {
            let mut segments: Vec<SegmentId> = row.filled().map(|(_, c)| c.segment_id.clone()).collect();
            segments.extend(row.flags.iter().map(|RowFlag::LengthFiltered { segment_id, .. }| segment_id.clone()));
            segments.sort();
            out.dropped.push(DropRecord {
                group_id: group_id.to_string(),
                reason: DropReason::DemotedRow,
                segments,
            });
        }
    }
}

/// Aligned rows for one chapter group.
pub fn align_group(group: &ChapterGroup, alignments: &PairAlignments, config: &MultiAlignConfig) -> Result<GroupRows, MultiAlignError> {
    if config.filter_stage != FilterStage::Off {
        config.filter.validate()?;
    }
    let idioms = group.idioms();
    let mut out = GroupRows::default();

    let pivots: Vec<Idiom> = match &config.pivots {
        PivotMode::Single(pivot) => {
            if !group.members.contains_key(pivot) {
                out.dropped.push(DropRecord {
                    group_id: group.group_id.clone(),
                    reason: DropReason::PivotAbsent,
                    segments: Vec::new(),
                });
                return Ok(out);
            }
            let mut rows = group_pivot_rows(group, alignments, pivot)?.rows;
            if config.filter_stage == FilterStage::PerPivot {
                rows = rows.iter().map(|r| length_filter(r, &config.filter)).collect();
            }
            filter_rows(rows, config, &group.group_id, &mut out);
            number_rows(&group.group_id, &mut out.rows);
            return Ok(out);
        }
        PivotMode::All => idioms.clone(),
        PivotMode::Consensus(list) => list.iter().filter(|p| group.members.contains_key(*p)).cloned().collect(),
    };

    let pivot_rows: BTreeMap<Idiom, Vec<MultiParallelRow>> = if config.filter_stage == FilterStage::PerPivot {
        pivots
            .iter()
            .map(|p| {
                let rows = group_pivot_rows(group, alignments, p)?.rows;
                Ok((p.clone(), rows.iter().map(|r| length_filter(r, &config.filter)).collect()))
            })
            .collect::<Result<_, MultiAlignError>>()?
    } else {
        BTreeMap::new()
    };

    let mut consensus_sets = Vec::new();
    for (a, i) in idioms.iter().enumerate() {
        for j in &idioms[a + 1..] {
            let mut sets = BTreeMap::new();
            for p in &pivots {
                let set = match pivot_rows.get(p) {
                    Some(rows) => project_rows(rows, i, j, Origin::Pivot(p.clone())),
                    None => pivot_pair_set(group, alignments, i, j, p)?,
                };
                sets.insert(p.clone(), set);
            }
            consensus_sets.push(consensus(&sets, &pivots, i, j)?);
        }
    }
    let (assembled, dropped) = assemble_rows(group, &consensus_sets);
    out.dropped.extend(dropped);
    filter_rows(assembled.rows, config, &group.group_id, &mut out);
    number_rows(&group.group_id, &mut out.rows);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bialign::Link;
    use crate::model::{Chapter, ChapterRef, GroupMember, Segment};

    fn idiom(s: &str) -> Idiom {
        Idiom::new(s).unwrap()
    }

    fn chapter_ref(i: &str) -> ChapterRef {
        ChapterRef { idiom: idiom(i), volume_id: "v".into(), chapter_key: "k".into() }
    }

    fn sid(i: &str, k: usize) -> SegmentId {
        chapter_ref(i).segment_id(k)
    }

    fn alignment(src: &str, tgt: &str, links: &[(Option<usize>, Option<usize>)]) -> BilingualAlignment {
        BilingualAlignment {
            src: chapter_ref(src),
            tgt: chapter_ref(tgt),
            links: links.iter().map(|&(src, tgt)| Link { src, tgt, cost: 0.0 }).collect(),
            total_cost: 0.0,
        }
    }

    fn group(spec: &[(&str, &[&str])]) -> ChapterGroup {
        let members = spec
            .iter()
            .map(|(i, texts)| {
                let r = chapter_ref(i);
                let segments = texts
                    .iter()
                    .enumerate()
                    .map(|(k, t)| Segment::new(&r, k, t.to_string(), t.to_string()))
                    .collect();
                (
                    idiom(i),
                    GroupMember {
                        volume_id: "v".into(),
                        chapter: Chapter { key: "k".into(), title: "K".into(), segments },
                    },
                )
            })
            .collect();
        ChapterGroup::new("g", members).unwrap()
    }

    #[test]
    fn pivot_join_example() {
        // a_ip = {(a1,p1),(a2,p2),(a3,-)}, a_pj = {(p1,b1),(p2,-),(-,b3)}
        let a_ip = alignment("aa", "pp", &[(Some(1), Some(1)), (Some(2), Some(2)), (Some(3), None)]);
        let a_pj = alignment("pp", "bb", &[(Some(1), Some(1)), (Some(2), None), (None, Some(3))]);
        let joined = pivot_join(&a_ip, &a_pj).unwrap();
        let expected: BTreeSet<SegmentPair> = [
            (Some(sid("aa", 1)), Some(sid("bb", 1))),
            (Some(sid("aa", 2)), None),
            (Some(sid("aa", 3)), None),
            (None, Some(sid("bb", 3))),
        ]
        .into_iter()
        .collect();
        assert_eq!(joined.pairs, expected);
        assert_eq!(joined.origin, Origin::Pivot(idiom("pp")));
        assert!(joined.is_well_formed());
    }

    #[test]
    fn pivot_join_edge_cases() {
        let empty = pivot_join(&alignment("aa", "pp", &[]), &alignment("pp", "bb", &[])).unwrap();
        assert!(empty.pairs.is_empty());
        let id: Vec<_> = (0..3).map(|k| (Some(k), Some(k))).collect();
        let joined = pivot_join(&alignment("aa", "pp", &id), &alignment("pp", "bb", &id)).unwrap();
        let expected: BTreeSet<_> = (0..3).map(|k| (Some(sid("aa", k)), Some(sid("bb", k)))).collect();
        assert_eq!(joined.pairs, expected);
        assert!(matches!(
            pivot_join(&alignment("aa", "pp", &[]), &alignment("qq", "bb", &[])),
            Err(MultiAlignError::PivotMismatch(..))
        ));
    }

    fn set(pairs: &[(usize, usize)]) -> PairLinkSet {
        PairLinkSet {
            idiom_a: idiom("aa"),
            idiom_b: idiom("bb"),
            pairs: pairs.iter().map(|&(a, b)| (Some(sid("aa", a)), Some(sid("bb", b)))).collect(),
            origin: Origin::Direct,
        }
    }

    fn pivots() -> Vec<Idiom> {
        ["p1", "p2", "p3", "p4", "p5"].map(idiom).to_vec()
    }

    #[test]
    fn consensus_examples() {
        let same: BTreeMap<_, _> = pivots().into_iter().map(|p| (p, set(&[(0, 0), (1, 1)]))).collect();
        let c = consensus(&same, &pivots(), &idiom("aa"), &idiom("bb")).unwrap();
        assert_eq!(c.pairs, set(&[(0, 0), (1, 1)]).pairs);
        assert_eq!(c.origin, Origin::Consensus);

        let mut one_missing = same.clone();
        one_missing.insert(idiom("p3"), set(&[(1, 1)]));
        let c = consensus(&one_missing, &pivots(), &idiom("aa"), &idiom("bb")).unwrap();
        assert_eq!(c.pairs, set(&[(1, 1)]).pairs);

        let disjoint: BTreeMap<_, _> = pivots().into_iter().enumerate().map(|(k, p)| (p, set(&[(k, k)]))).collect();
        assert!(consensus(&disjoint, &pivots(), &idiom("aa"), &idiom("bb")).unwrap().pairs.is_empty());

        let mut absent = same.clone();
        absent.remove(&idiom("p2"));
        absent.remove(&idiom("p4"));
        let err = consensus(&absent, &pivots(), &idiom("aa"), &idiom("bb")).unwrap_err();
        assert_eq!(err.to_string(), "consensus for aa-bb is missing pivot(s): p2, p4");
    }

    #[test]
    fn consensus_ignores_one_sided_pairs() {
        let mut s = set(&[(0, 0)]);
        s.pairs.insert((Some(sid("aa", 1)), None));
        let sets: BTreeMap<_, _> = pivots().into_iter().map(|p| (p, s.clone())).collect();
        let c = consensus(&sets, &pivots(), &idiom("aa"), &idiom("bb")).unwrap();
        assert_eq!(c.pairs, set(&[(0, 0)]).pairs);
    }

    fn consensus_set(a: &str, b: &str, pairs: &[(usize, usize)]) -> PairLinkSet {
        PairLinkSet {
            idiom_a: idiom(a),
            idiom_b: idiom(b),
            pairs: pairs.iter().map(|&(x, y)| (Some(sid(a, x)), Some(sid(b, y)))).collect(),
            origin: Origin::Consensus,
        }
    }

    #[test]
    fn assemble_triangle_into_one_row() {
        let g = group(&[("aa", &["a0"]), ("bb", &["b0"]), ("cc", &["c0"])]);
        let sets = [consensus_set("aa", "bb", &[(0, 0)]), consensus_set("bb", "cc", &[(0, 0)]), consensus_set("aa", "cc", &[(0, 0)])];
        let (rows, dropped) = assemble_rows(&g, &sets);
        assert!(dropped.is_empty());
        assert_eq!(rows.rows.len(), 1);
        assert_eq!(rows.rows[0].filled_count(), 3);
        assert_eq!(rows.rows[0].row_id, "g/0000");
        assert_eq!(rows.rows[0].cell(&idiom("cc")).unwrap().text, "c0");
    }

    #[test]
    fn assemble_drops_conflicting_component() {
        let g = group(&[("aa", &["a0"]), ("bb", &["b0", "b1"])]);
        let (rows, dropped) = assemble_rows(&g, &[consensus_set("aa", "bb", &[(0, 0), (0, 1)])]);
        assert!(rows.rows.is_empty());
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].reason, DropReason::ConflictingComponent);
        assert_eq!(dropped[0].segments.len(), 3);
        let (rows, dropped) = assemble_rows(&g, &[]);
        assert!(rows.rows.is_empty() && dropped.is_empty());
    }

    fn row_with_lengths(lengths: &[usize]) -> MultiParallelRow {
        let cells = lengths
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let i = idiom(&format!("i{k}"));
                let text = vec!["w"; n].join(" ");
                (i.clone(), Some(CellRef { segment_id: SegmentId::new(&i, "v", "k", 0), text }))
            })
            .collect();
        MultiParallelRow { row_id: "r".into(), cells, provenance: "g".into(), flags: BTreeSet::new() }
    }

    fn kept(row: &MultiParallelRow) -> Vec<usize> {
        row.cells.values().map(|c| c.as_ref().map_or(0, |c| text::token_count(&c.text))).collect()
    }

    #[test]
    fn length_filter_examples() {
        let cfg = LengthFilterConfig::default();
        let out = length_filter(&row_with_lengths(&[4, 4, 4, 10]), &cfg);
        assert_eq!(kept(&out), [4, 4, 4, 0]);
        assert_eq!(out.flags.len(), 1);
        let same = row_with_lengths(&[7, 7, 7]);
        assert_eq!(length_filter(&same, &cfg), same);
        assert_eq!(kept(&length_filter(&row_with_lengths(&[3, 9]), &cfg)), [0, 9]);
    }

    #[test]
    fn length_filter_keeps_exact_bounds() {
        let cfg = LengthFilterConfig::default();
        // mean 4: 6 is exactly 1.5x and stays; 2 is below 2.68 and goes
        assert_eq!(kept(&length_filter(&row_with_lengths(&[2, 6, 4]), &cfg)), [0, 6, 4]);
        // mean 100: 67 is exactly 0.67x
        assert_eq!(kept(&length_filter(&row_with_lengths(&[67, 133]), &cfg)), [67, 133]);
        assert_eq!(DecimalRatio::new(0.67), DecimalRatio { num: 67, den: 100 });
        assert_eq!(DecimalRatio::new(1.5), DecimalRatio { num: 15, den: 10 });
        assert_eq!(DecimalRatio::new(2.0), DecimalRatio { num: 2, den: 1 });
    }

    #[test]
    fn length_filter_in_characters() {
        let cfg = LengthFilterConfig { unit: LengthUnit::Characters, ..LengthFilterConfig::default() };
        // one token each; characters 5, 5, 5, 12 with mean 6.75
        let mut row = row_with_lengths(&[1, 1, 1, 1]);
        for (k, word) in ["abcde", "fghij", "klmno", "pqrstuvwxyza"].iter().enumerate() {
            row.cells.get_mut(&idiom(&format!("i{k}"))).unwrap().as_mut().unwrap().text = word.to_string();
        }
        let out = length_filter(&row, &cfg);
        assert_eq!(out.filled_count(), 3);
        assert!(out.cell(&idiom("i3")).is_none());
        assert_eq!(length_filter(&row, &LengthFilterConfig::default()), row);
        assert!(cfg.validate().is_ok());
        assert!(LengthFilterConfig { lower_ratio: 1.2, ..cfg }.validate().is_err());
    }

    #[test]
    fn pivot_outer_join() {
        let g = group(&[("aa", &["a0", "a1"]), ("bb", &["b0", "b1"]), ("cc", &["c0", "c1", "c2"])]);
        let mut alignments = BTreeMap::new();
        alignments.insert(idiom("bb"), alignment("aa", "bb", &[(Some(0), Some(0)), (Some(1), None), (None, Some(1))]));
        alignments.insert(idiom("cc"), alignment("aa", "cc", &[(Some(0), Some(0)), (Some(1), Some(1)), (None, Some(2))]));
        let rows = pivot_multialign(&g, &idiom("aa"), &alignments).unwrap().rows;
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].filled_count(), 3);
        // a1 lost its bb partner: one null cell
        assert_eq!(rows[1].filled_count(), 2);
        assert!(rows[1].cell(&idiom("bb")).is_none());
        // b1 and c2 are unmatched: single-cell rows
        assert_eq!(rows[2].filled_count(), 1);
        assert_eq!(rows[3].filled_count(), 1);
        assert_eq!(rows[3].cell(&idiom("cc")).unwrap().text, "c2");
    }

    #[test]
    fn identity_outer_join_over_five_idioms() {
        let names = ["aa", "bb", "cc", "dd", "ee"];
        let spec: Vec<(&str, &[&str])> = names.iter().map(|n| (*n, &["x", "y"][..])).collect();
        let g = group(&spec);
        let id = [(Some(0), Some(0)), (Some(1), Some(1))];
        let alignments = names[1..].iter().map(|n| (idiom(n), alignment("aa", n, &id))).collect();
        let rows = pivot_multialign(&g, &idiom("aa"), &alignments).unwrap().rows;
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.filled_count() == 5));
    }

    #[test]
    fn align_group_consensus_and_single_pivot() {
        let texts: &[&str] = &["uno dus", "trais quatter", "tschinch"];
        let g = group(&[("aa", texts), ("bb", texts), ("cc", texts)]);
        let id: Vec<_> = (0..3).map(|k| (Some(k), Some(k))).collect();
        let mut pa = PairAlignments::new();
        pa.insert(alignment("aa", "bb", &id));
        pa.insert(alignment("cc", "bb", &id));
        // aa-cc disagrees on the last two segments
        pa.insert(alignment("aa", "cc", &[(Some(0), Some(0)), (Some(1), Some(2)), (Some(2), None), (None, Some(1))]));
        let out = align_group(&g, &pa, &MultiAlignConfig::default()).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].filled_count(), 3);

        let single = MultiAlignConfig { pivots: PivotMode::Single(idiom("bb")), ..MultiAlignConfig::default() };
        let out = align_group(&g, &pa, &single).unwrap();
        assert_eq!(out.rows.len(), 3);
        let absent = MultiAlignConfig { pivots: PivotMode::Single(idiom("zz")), ..MultiAlignConfig::default() };
        let out = align_group(&g, &pa, &absent).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.dropped[0].reason, DropReason::PivotAbsent);

        let per_pivot = MultiAlignConfig { filter_stage: FilterStage::PerPivot, ..MultiAlignConfig::default() };
        assert_eq!(align_group(&g, &pa, &per_pivot).unwrap().rows, align_group(&g, &pa, &MultiAlignConfig::default()).unwrap().rows);
    }

    #[test]
    fn missing_alignment_is_an_error() {
        let g = group(&[("aa", &["x"]), ("bb", &["x"])]);
        let err = align_group(&g, &PairAlignments::new(), &MultiAlignConfig::default()).unwrap_err();
        assert!(matches!(err, MultiAlignError::MissingAlignment { .. }));
    }

    #[test]
    fn pair_alignments_transpose_on_lookup() {
        let mut pa = PairAlignments::new();
        pa.insert(alignment("cc", "aa", &[(Some(0), None), (None, Some(0))]));
        let forward = pa.get(&idiom("aa"), &idiom("cc")).unwrap();
        assert_eq!(forward.src.idiom, idiom("aa"));
        assert_eq!(forward.links[0].src, None);
        let back = pa.get(&idiom("cc"), &idiom("aa")).unwrap();
        assert_eq!(back.src.idiom, idiom("cc"));
    }
}
