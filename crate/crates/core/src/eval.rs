//! Strict precision/recall/F1 against gold rows, and the greedy
//! nearest-neighbour accuracy used to compare embedding inputs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, EmbeddingMatrix};
use crate::model::{Idiom, ModelError, MultiParallelRow, SegmentId};
use crate::multialign::PairLinkSet;
use crate::report::Warning;

const STAGE: &str = "evaluate";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold line {line}: {message}")]
    Gold { line: usize, message: String },
    #[error("segment {segment} appears in gold rows at lines {first} and {second}")]
    DuplicateGoldSegment { segment: SegmentId, first: usize, second: usize },
    #[error("link sets concern different idiom pairs: {0}")]
    PairMismatch(String),
    #[error("segment {segment} is on the {side} side of a {a}-{b} link")]
    WrongSide { segment: SegmentId, side: &'static str, a: Idiom, b: Idiom },
    #[error("greedy accuracy needs at least one gold pair")]
    EmptyGold,
    #[error("gold pair ({0}, {1}) is out of range")]
    OutOfRange(usize, usize),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero denominators give zero.
    pub fn from_counts(correct: usize, hypothesis: usize, gold: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self::new(ratio(correct, hypothesis), ratio(correct, gold))
    }

    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// A many-to-many link between the two sides of an idiom pair.
pub type SetLink = (BTreeSet<SegmentId>, BTreeSet<SegmentId>);

/// Links between idiom `a` (source side) and idiom `b` (target side).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualLinks {
    pub idiom_a: Idiom,
    pub idiom_b: Idiom,
    pub links: BTreeSet<SetLink>,
}

impl BilingualLinks {
    pub fn new(idiom_a: Idiom, idiom_b: Idiom) -> Self {
        Self { idiom_a, idiom_b, links: BTreeSet::new() }
    }

    pub fn from_pair_set(set: &PairLinkSet) -> Self {
        let one = |s: &Option<SegmentId>| s.iter().cloned().collect();
        Self {
            idiom_a: set.idiom_a.clone(),
            idiom_b: set.idiom_b.clone(),
            links: set.pairs.iter().map(|(a, b)| (one(a), one(b))).collect(),
        }
    }

    /// Both-sided links only.
    pub fn non_null(&self) -> impl Iterator<Item = &SetLink> {
        self.links.iter().filter(|(a, b)| !a.is_empty() && !b.is_empty())
    }

    fn check_sides(&self) -> Result<(), EvalError> {
        for (src, tgt) in &self.links {
            for (ids, side, idiom) in [(src, "source", &self.idiom_a), (tgt, "target", &self.idiom_b)] {
                for id in ids {
                    if &id.idiom()? != idiom {
                        return Err(EvalError::WrongSide {
                            segment: id.clone(),
                            side,
                            a: self.idiom_a.clone(),
                            b: self.idiom_b.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub correct: usize,
    pub hypothesis: usize,
    pub gold: usize,
}

/// A hypothesis link is correct only when both of its segment sets equal
/// those of a gold link. One-sided links count nowhere.
pub fn strict_prf(hypothesis: &BilingualLinks, gold: &BilingualLinks) -> Result<(Prf, Counts, Vec<Warning>), EvalError> {
    if (&hypothesis.idiom_a, &hypothesis.idiom_b) != (&gold.idiom_a, &gold.idiom_b) {
        return Err(EvalError::PairMismatch(format!(
            "hypothesis {}-{}, gold {}-{}",
            hypothesis.idiom_a, hypothesis.idiom_b, gold.idiom_a, gold.idiom_b
        )));
    }
    hypothesis.check_sides()?;
    gold.check_sides()?;
    let gold_links: BTreeSet<&SetLink> = gold.non_null().collect();
    let counts = Counts {
        correct: hypothesis.non_null().filter(|l| gold_links.contains(l)).count(),
        hypothesis: hypothesis.non_null().count(),
        gold: gold_links.len(),
    };
    let location = format!("{}-{}", gold.idiom_a, gold.idiom_b);
    let mut warnings = Vec::new();
    if counts.hypothesis == 0 {
        warnings.push(Warning::new(STAGE, "empty_hypothesis", &location, "no hypothesis links; precision set to 0"));
    }
    if counts.gold == 0 {
        warnings.push(Warning::new(STAGE, "empty_gold", &location, "no gold links; recall set to 0"));
    }
    Ok((Prf::from_counts(counts.correct, counts.hypothesis, counts.gold), counts, warnings))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldRow {
    /// 1-based line in the source file.
    pub line: usize,
    /// Empty cells are deletions.
    pub cells: BTreeMap<Idiom, Vec<SegmentId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldAlignment {
    pub idioms: Vec<Idiom>,
    pub rows: Vec<GoldRow>,
}

impl GoldAlignment {
    /// Tab-separated: a header of idiom codes, then one row per line with
    /// `;`-separated segment ids per cell. Blank lines are skipped.
    pub fn parse(tsv: &str) -> Result<Self, EvalError> {
        let mut lines = tsv.lines().enumerate().map(|(n, l)| (n + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        let (header_line, header) = lines.next().ok_or(EvalError::Gold { line: 1, message: "missing header".into() })?;
        let idioms = header
            .split('\t')
            .map(|c| {
                Idiom::new(c.trim()).map_err(|e| EvalError::Gold { line: header_line, message: e.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if idioms.iter().collect::<BTreeSet<_>>().len() != idioms.len() {
            return Err(EvalError::Gold { line: header_line, message: "repeated idiom in header".into() });
        }

        let mut seen: HashMap<SegmentId, usize> = HashMap::new();
        let mut rows = Vec::new();
        for (line, raw) in lines {
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != idioms.len() {
                return Err(EvalError::Gold {
                    line,
                    message: format!("{} fields, header has {}", fields.len(), idioms.len()),
                });
            }
            let mut cells = BTreeMap::new();
            for (idiom, field) in idioms.iter().zip(fields) {
                let mut ids = Vec::new();
                for part in field.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                    let id = SegmentId::parse(part).map_err(|e| EvalError::Gold { line, message: e.to_string() })?;
                    if &id.idiom()? != idiom {
                        return Err(EvalError::Gold { line, message: format!("{id} is not a {idiom} segment") });
                    }
                    if let Some(&first) = seen.get(&id) {
                        return Err(EvalError::DuplicateGoldSegment { segment: id, first, second: line });
                    }
                    seen.insert(id.clone(), line);
                    ids.push(id);
                }
                cells.insert(idiom.clone(), ids);
            }
            if cells.values().all(Vec::is_empty) {
                return Err(EvalError::Gold { line, message: "row has no segments".into() });
            }
            rows.push(GoldRow { line, cells });
        }
        Ok(Self { idioms, rows })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.idioms.iter().map(Idiom::as_str).collect::<Vec<_>>().join("\t");
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = self
                .idioms
                .iter()
                .map(|i| row.cells.get(i).map(|ids| ids.iter().map(SegmentId::as_str).collect::<Vec<_>>().join(";")).unwrap_or_default())
                .collect();
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Gold links between `a` and `b`; rows empty on either side are deletions.
    pub fn project(&self, a: &Idiom, b: &Idiom) -> BilingualLinks {
        let mut links = BilingualLinks::new(a.clone(), b.clone());
        for row in &self.rows {
            let side = |i: &Idiom| -> BTreeSet<SegmentId> { row.cells.get(i).into_iter().flatten().cloned().collect() };
            let (src, tgt) = (side(a), side(b));
            if !src.is_empty() || !tgt.is_empty() {
                links.links.insert((src, tgt));
            }
        }
        links
    }
}

pub fn load_gold(path: &Path) -> Result<GoldAlignment, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    GoldAlignment::parse(&text)
}

/// Hypothesis rows projected onto one idiom pair; both cells must be filled.
pub fn project_rows<'a, I>(rows: I, a: &Idiom, b: &Idiom) -> BilingualLinks
where
    I: IntoIterator<Item = &'a MultiParallelRow>,
{
    let mut links = BilingualLinks::new(a.clone(), b.clone());
    for row in rows {
        if let (Some(x), Some(y)) = (row.cell(a), row.cell(b)) {
            links.links.insert((BTreeSet::from([x.segment_id.clone()]), BTreeSet::from([y.segment_id.clone()])));
        }
    }
    links
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub idiom_a: Idiom,
    pub idiom_b: Idiom,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPrf {
    pub pairs: Vec<PairScore>,
    /// Unweighted mean over idiom pairs.
    pub macro_average: Prf,
    pub warnings: Vec<Warning>,
}

/// Strict scores for every unordered pair of gold idioms plus their mean.
pub fn multi_prf(hypothesis: &[MultiParallelRow], gold: &GoldAlignment) -> Result<MultiPrf, EvalError> {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    let idioms: BTreeSet<&Idiom> = gold.idioms.iter().collect();
    let idioms: Vec<&Idiom> = idioms.into_iter().collect();
    for (k, a) in idioms.iter().enumerate() {
        for b in &idioms[k + 1..] {
            let hyp = project_rows(hypothesis, a, b);
            let (prf, counts, w) = strict_prf(&hyp, &gold.project(a, b))?;
            warnings.extend(w);
            pairs.push(PairScore { idiom_a: (*a).clone(), idiom_b: (*b).clone(), counts, prf });
        }
    }
    let n = pairs.len().max(1) as f64;
    let mean = |f: fn(&Prf) -> f64| pairs.iter().map(|p| f(&p.prf)).sum::<f64>() / n;
    let macro_average = Prf {
        precision: mean(|p| p.precision),
        recall: mean(|p| p.recall),
        f1: mean(|p| p.f1),
    };
    Ok(MultiPrf { pairs, macro_average, warnings })
}

/// Fraction of gold pairs whose source vector has the gold target as its
/// most cosine-similar target row. Ties go to the lowest target index.
pub fn greedy_accuracy(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, gold: &[(usize, usize)]) -> Result<f64, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let mut hits = 0usize;
    for &(s, t) in gold {
        if s >= src.len() || t >= tgt.len() {
            return Err(EvalError::OutOfRange(s, t));
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, v) in tgt.vectors.iter().enumerate() {
            let c = cosine(&src.vectors[s], v)?;
            if c > best.1 {
                best = (j, c);
            }
        }
        if best.0 == t {
            hits += 1;
        }
    }
    Ok(hits as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingMode;
    use crate::model::CellRef;

    fn idiom(s: &str) -> Idiom {
        Idiom::new(s).unwrap()
    }

    fn sid(i: &str, k: usize) -> SegmentId {
        SegmentId::new(&idiom(i), "v", "k", k)
    }

    fn links(pairs: &[(usize, usize)]) -> BilingualLinks {
        let mut l = BilingualLinks::new(idiom("aa"), idiom("bb"));
        for &(x, y) in pairs {
            l.links.insert((BTreeSet::from([sid("aa", x)]), BTreeSet::from([sid("bb", y)])));
        }
        l
    }

    #[test]
    fn worked_example() {
        let (prf, counts, warnings) = strict_prf(&links(&[(0, 0), (1, 1), (2, 3)]), &links(&[(0, 0), (1, 2), (2, 3)])).unwrap();
        assert_eq!(counts, Counts { correct: 2, hypothesis: 3, gold: 3 });
        for x in [prf.precision, prf.recall, prf.f1] {
            assert!((x - 2.0 / 3.0).abs() < 1e-12);
        }
        assert!(warnings.is_empty());
    }

    #[test]
    fn identity_disjoint_and_empty() {
        let x = links(&[(0, 0), (1, 1)]);
        assert_eq!(strict_prf(&x, &x).unwrap().0, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(strict_prf(&links(&[(0, 1)]), &links(&[(0, 0)])).unwrap().0, Prf::default());
        let (prf, _, warnings) = strict_prf(&links(&[]), &x).unwrap();
        assert_eq!(prf, Prf::default());
        assert_eq!(warnings[0].kind, "empty_hypothesis");
    }

    #[test]
    fn deletions_are_ignored() {
        let mut h = links(&[(0, 0)]);
        h.links.insert((BTreeSet::from([sid("aa", 5)]), BTreeSet::new()));
        let (prf, counts, _) = strict_prf(&h, &links(&[(0, 0)])).unwrap();
        assert_eq!(counts.hypothesis, 1);
        assert_eq!(prf.f1, 1.0);
    }

    #[test]
    fn many_to_one_gold_needs_exact_sets() {
        let mut g = BilingualLinks::new(idiom("aa"), idiom("bb"));
        g.links.insert((BTreeSet::from([sid("aa", 0), sid("aa", 1)]), BTreeSet::from([sid("bb", 0)])));
        let (prf, ..) = strict_prf(&links(&[(0, 0)]), &g).unwrap();
        assert_eq!(prf, Prf::default());
    }

    #[test]
    fn mismatched_sides_are_errors() {
        let other = BilingualLinks::new(idiom("bb"), idiom("aa"));
        assert!(matches!(strict_prf(&links(&[]), &other), Err(EvalError::PairMismatch(_))));
        let mut bad = links(&[]);
        bad.links.insert((BTreeSet::from([sid("bb", 0)]), BTreeSet::from([sid("aa", 0)])));
        assert!(matches!(strict_prf(&bad, &links(&[])), Err(EvalError::WrongSide { .. })));
    }

    const GOLD: &str = "aa\tbb\tcc\naa/v/k/0\tbb/v/k/0\tcc/v/k/0\naa/v/k/1\t\tcc/v/k/1\naa/v/k/2\tbb/v/k/1;bb/v/k/2\tcc/v/k/2\n";

    #[test]
    fn gold_parsing() {
        let gold = GoldAlignment::parse(GOLD).unwrap();
        assert_eq!(gold.rows.len(), 3);
        assert!(gold.rows[1].cells[&idiom("bb")].is_empty());
        assert_eq!(gold.rows[2].cells[&idiom("bb")].len(), 2);
        assert_eq!(GoldAlignment::parse(&gold.to_tsv()).unwrap(), gold);
        let ab = gold.project(&idiom("aa"), &idiom("bb"));
        assert_eq!(ab.non_null().count(), 2);
        assert_eq!(ab.links.len(), 3);
    }

    #[test]
    fn gold_errors() {
        let dup = format!("{GOLD}aa/v/k/9\tbb/v/k/0\t\n");
        let err = GoldAlignment::parse(&dup).unwrap_err();
        assert_eq!(err.to_string(), "segment bb/v/k/0 appears in gold rows at lines 2 and 5");
        assert!(GoldAlignment::parse("aa\tbb\nbb/v/k/0\t\n").is_err());
        assert!(GoldAlignment::parse("aa\tbb\n;\t\n").is_err());
        assert!(GoldAlignment::parse("aa\tbb\naa/v/k/0\n").is_err());
        assert!(GoldAlignment::parse("").is_err());
    }

    fn row(cells: &[(&str, usize)]) -> MultiParallelRow {
        MultiParallelRow {
            row_id: String::new(),
            cells: cells
                .iter()
                .map(|&(i, k)| (idiom(i), Some(CellRef { segment_id: sid(i, k), text: String::new() })))
                .collect(),
            provenance: String::new(),
            flags: BTreeSet::new(),
        }
    }

    #[test]
    fn multi_prf_examples() {
        let gold = GoldAlignment::parse("aa\tbb\tcc\naa/v/k/0\tbb/v/k/0\tcc/v/k/0\naa/v/k/1\tbb/v/k/1\tcc/v/k/1\n").unwrap();
        let perfect = [row(&[("aa", 0), ("bb", 0), ("cc", 0)]), row(&[("aa", 1), ("bb", 1), ("cc", 1)])];
        let m = multi_prf(&perfect, &gold).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert_eq!(m.macro_average, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });

        // aa-bb gets one of its two links wrong
        let one_wrong = [row(&[("aa", 0), ("bb", 0), ("cc", 0)]), row(&[("aa", 1), ("cc", 1)]), row(&[("bb", 1)]), row(&[("aa", 9), ("bb", 1)])];
        let m = multi_prf(&one_wrong, &gold).unwrap();
        let ab = &m.pairs[0];
        assert_eq!((ab.prf.precision, ab.prf.recall), (0.5, 0.5));
        assert_eq!(m.pairs[1].prf, Prf::new(1.0, 1.0));
        // bb-cc keeps one of two gold links: P 1, R 1/2, F1 2/3
        assert_eq!((m.pairs[2].prf.precision, m.pairs[2].prf.recall), (1.0, 0.5));
        assert!((m.macro_average.f1 - (0.5 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);

        let empty = multi_prf(&[], &gold).unwrap();
        assert!(empty.pairs.iter().all(|p| p.prf.precision == 0.0));
        assert_eq!(empty.warnings.len(), 3);
    }

    fn matrix(vectors: Vec<Vec<f32>>) -> EmbeddingMatrix {
        EmbeddingMatrix { dim: vectors[0].len(), vectors, provider: "test".into(), mode: EmbeddingMode::Text }
    }

    #[test]
    fn greedy_examples() {
        let src = matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let id = [(0, 0), (1, 1), (2, 2)];
        assert_eq!(greedy_accuracy(&src, &src, &id).unwrap(), 1.0);
        // source 1 is nearer target 0 than target 1
        let tgt = matrix(vec![vec![0.1, 1.0], vec![1.0, 0.2]]);
        assert_eq!(greedy_accuracy(&src, &tgt, &[(0, 1), (1, 1)]).unwrap(), 0.5);
        assert!(matches!(greedy_accuracy(&src, &src, &[]), Err(EvalError::EmptyGold)));
        assert!(matches!(greedy_accuracy(&src, &src, &[(0, 7)]), Err(EvalError::OutOfRange(0, 7))));
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        let src = matrix(vec![vec![1.0, 0.0]]);
        let tgt = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(greedy_accuracy(&src, &tgt, &[(0, 1)]).unwrap(), 1.0);
        assert_eq!(greedy_accuracy(&src, &tgt, &[(0, 2)]).unwrap(), 0.0);
    }
}
