//! Monotone bilingual segment alignment restricted to 1-1 links and deletions.
//!
//! The recurrence over an `n x m` cost matrix is
//!
//! ```text
//! D[0][0] = 0
//! D[i][j] = min(D[i-1][j-1] + c[i-1][j-1],   // substitute
//!               D[i-1][j]   + skip,           // skip source segment
//!               D[i][j-1]   + skip)           // skip target segment
//! ```
//!
//! The backtrace walks from `D[n][m]` and takes the first move of the tie
//! policy whose predecessor reproduces the cell value exactly, which picks the
//! optimal path whose reversed move sequence is lexicographically smallest.
//! `brute_force_align` applies the same rule by enumeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, EmbeddingMatrix};
use crate::model::ChapterRef;

/// Largest side length `brute_force_align` enumerates.
pub const BRUTE_FORCE_LIMIT: usize = 8;

const SAMPLE_SIZE: usize = 128;
const SAMPLE_SEED: u64 = 0x00c0_ffee_5eed;
const SAMPLE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("skip cost must be a non-negative finite number, got {0}")]
    NegativeSkipCost(f64),
    #[error("cost matrix contains a non-finite entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("embedding matrices are incompatible: {0}")]
    Incompatible(String),
    #[error("brute force is limited to {BRUTE_FORCE_LIMIT}x{BRUTE_FORCE_LIMIT}, got {0}x{1}")]
    TooLarge(usize, usize),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

/// Preference among equally cheap moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// substitute, then skip-source, then skip-target
    #[default]
    SourceFirst,
    /// substitute, then skip-target, then skip-source
    TargetFirst,
}

impl TiePolicy {
    pub fn swapped(self) -> Self {
        match self {
            TiePolicy::SourceFirst => TiePolicy::TargetFirst,
            TiePolicy::TargetFirst => TiePolicy::SourceFirst,
        }
    }

    fn order(self) -> [Move; 3] {
        match self {
            TiePolicy::SourceFirst => [Move::Substitute, Move::SkipSource, Move::SkipTarget],
            TiePolicy::TargetFirst => [Move::Substitute, Move::SkipTarget, Move::SkipSource],
        }
    }

    fn rank(self, m: Move) -> usize {
        self.order().iter().position(|x| *x == m).expect("all moves ranked")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostNormalization {
    #[default]
    Raw,
    /// Divide by the mean cost over a seeded sample of cells.
    SampledMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    /// Cost of leaving one segment unaligned.
    pub skip_cost: f64,
    pub tie_policy: TiePolicy,
    pub normalization: CostNormalization,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            skip_cost: 0.15,
            tie_policy: TiePolicy::default(),
            normalization: CostNormalization::default(),
        }
    }
}

impl AlignConfig {
    pub fn with_skip_cost(skip_cost: f64) -> Self {
        Self { skip_cost, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if self.skip_cost.is_finite() && self.skip_cost >= 0.0 {
            Ok(())
        } else {
            Err(AlignError::NegativeSkipCost(self.skip_cost))
        }
    }
}

/// Dense row-major cost matrix; may have zero rows or columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self::new(self.cols, self.rows, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.rows, self.cols, self.data.iter().map(|x| f(*x)).collect())
    }

    fn check_finite(&self) -> Result<(), AlignError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(k) => Err(AlignError::NonFiniteCost(k / self.cols, k % self.cols)),
            None => Ok(()),
        }
    }
}

/// `1 - cosine` between every source and target row, optionally rescaled.
pub fn cost_matrix(src: &EmbeddingMatrix, tgt: &EmbeddingMatrix, config: &AlignConfig) -> Result<CostMatrix, AlignError> {
    if src.provider != tgt.provider || src.mode != tgt.mode {
        return Err(AlignError::Incompatible(format!(
            "{}/{} vs {}/{}",
            src.provider, src.mode, tgt.provider, tgt.mode
        )));
    }
    if !src.is_empty() && !tgt.is_empty() && src.dim != tgt.dim {
        return Err(AlignError::Incompatible(format!("dimension {} vs {}", src.dim, tgt.dim)));
    }
    let mut data = Vec::with_capacity(src.len() * tgt.len());
    for s in &src.vectors {
        for t in &tgt.vectors {
            data.push(1.0 - cosine(s, t)?);
        }
    }
    let costs = CostMatrix::new(src.len(), tgt.len(), data);
    Ok(match config.normalization {
        CostNormalization::Raw => costs,
        CostNormalization::SampledMean => normalize_by_sample(&costs),
    })
}

fn normalize_by_sample(costs: &CostMatrix) -> CostMatrix {
    let cells = costs.rows * costs.cols;
    if cells == 0 {
        return costs.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let picked = rand::seq::index::sample(&mut rng, cells, SAMPLE_SIZE.min(cells));
    let mean = picked.iter().map(|k| costs.data[k]).sum::<f64>() / picked.len() as f64;
    let scale = mean + SAMPLE_EPSILON;
    costs.map(|c| c / scale)
}

/// One step of a monotone alignment. Deletions have exactly one side set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub src: Option<usize>,
    pub tgt: Option<usize>,
    pub cost: f64,
}

impl Link {
    pub fn is_pair(&self) -> bool {
        self.src.is_some() && self.tgt.is_some()
    }

    fn transposed(self) -> Self {
        Self { src: self.tgt, tgt: self.src, cost: self.cost }
    }
}

/// Links in path order together with their summed cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPath {
    pub links: Vec<Link>,
    pub total_cost: f64,
}

impl LinkPath {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().filter_map(|l| Some((l.src?, l.tgt?)))
    }

    pub fn transposed(&self) -> Self {
        Self {
            links: self.links.iter().map(|l| l.transposed()).collect(),
            total_cost: self.total_cost,
        }
    }
}

/// Alignment of two chapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilingualAlignment {
    pub src: ChapterRef,
    pub tgt: ChapterRef,
    pub links: Vec<Link>,
    pub total_cost: f64,
}

impl BilingualAlignment {
    pub fn new(src: ChapterRef, tgt: ChapterRef, path: LinkPath) -> Self {
        Self { src, tgt, links: path.links, total_cost: path.total_cost }
    }

    /// The same alignment seen from the target side.
    pub fn transposed(&self) -> Self {
        Self {
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            links: self.links.iter().map(|l| l.transposed()).collect(),
            total_cost: self.total_cost,
        }
    }

    pub fn source_len(&self) -> usize {
        self.links.iter().filter(|l| l.src.is_some()).count()
    }

    pub fn target_len(&self) -> usize {
        self.links.iter().filter(|l| l.tgt.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Substitute,
    SkipSource,
    SkipTarget,
}

impl Move {
    fn step(self, i: usize, j: usize) -> Option<(usize, usize)> {
        match self {
            Move::Substitute if i > 0 && j > 0 => Some((i - 1, j - 1)),
            Move::SkipSource if i > 0 => Some((i - 1, j)),
            Move::SkipTarget if j > 0 => Some((i, j - 1)),
            _ => None,
        }
    }

    /// Link and cost of taking this move into cell (i, j).
    fn link(self, i: usize, j: usize, costs: &CostMatrix, skip: f64) -> Link {
        match self {
            Move::Substitute => Link { src: Some(i - 1), tgt: Some(j - 1), cost: costs.get(i - 1, j - 1) },
            Move::SkipSource => Link { src: Some(i - 1), tgt: None, cost: skip },
            Move::SkipTarget => Link { src: None, tgt: Some(j - 1), cost: skip },
        }
    }
}

/// Minimum-cost monotone full cover of both chapters.
pub fn align_chapter(costs: &CostMatrix, config: &AlignConfig) -> Result<LinkPath, AlignError> {
    config.validate()?;
    costs.check_finite()?;
    let (n, m) = (costs.rows, costs.cols);
    let skip = config.skip_cost;
    let width = m + 1;
    let mut d = vec![0f64; (n + 1) * width];
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            if i > 0 && j > 0 {
                best = best.min(d[(i - 1) * width + j - 1] + costs.get(i - 1, j - 1));
            }
            if i > 0 {
                best = best.min(d[(i - 1) * width + j] + skip);
            }
            if j > 0 {
                best = best.min(d[i * width + j - 1] + skip);
            }
            d[i * width + j] = best;
        }
    }

    let order = config.tie_policy.order();
    let mut links = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        let (link, prev) = order
            .iter()
            .find_map(|&mv| {
                let (pi, pj) = mv.step(i, j)?;
                let link = mv.link(i, j, costs, skip);
                (d[pi * width + pj] + link.cost == here).then_some((link, (pi, pj)))
            })
            .expect("some predecessor reproduces every cell");
        links.push(link);
        (i, j) = prev;
    }
    links.reverse();
    Ok(LinkPath { links, total_cost: d[n * width + m] })
}

/// Enumerates every monotone full cover and keeps the cheapest, breaking ties
/// exactly as `align_chapter` does. Exponential; for testing.
pub fn brute_force_align(costs: &CostMatrix, config: &AlignConfig) -> Result<LinkPath, AlignError> {
    config.validate()?;
    costs.check_finite()?;
    let (n, m) = (costs.rows, costs.cols);
    if n > BRUTE_FORCE_LIMIT || m > BRUTE_FORCE_LIMIT {
        return Err(AlignError::TooLarge(n, m));
    }

    struct Search<'a> {
        costs: &'a CostMatrix,
        config: &'a AlignConfig,
        moves: Vec<Move>,
        best: Option<(f64, Vec<Move>)>,
    }

    impl Search<'_> {
        fn path_cost(&self) -> f64 {
            let (mut i, mut j, mut total) = (0usize, 0usize, 0f64);
            for mv in &self.moves {
                let (ni, nj) = match mv {
                    Move::Substitute => (i + 1, j + 1),
                    Move::SkipSource => (i + 1, j),
                    Move::SkipTarget => (i, j + 1),
                };
                total += mv.link(ni, nj, self.costs, self.config.skip_cost).cost;
                (i, j) = (ni, nj);
            }
            total
        }

        /// True when `self.moves` should replace `best` among equal-cost paths.
        fn preferred(&self, other: &[Move]) -> bool {
            let policy = self.config.tie_policy;
            let ours = self.moves.iter().rev().map(|m| policy.rank(*m));
            let theirs = other.iter().rev().map(|m| policy.rank(*m));
            ours.lt(theirs)
        }

        fn walk(&mut self, i: usize, j: usize) {
            let (n, m) = (self.costs.rows, self.costs.cols);
            if i == n && j == m {
                let cost = self.path_cost();
                let better = match &self.best {
                    None => true,
                    Some((best, moves)) => cost < *best || (cost == *best && self.preferred(moves)),
                };
                if better {
                    self.best = Some((cost, self.moves.clone()));
                }
                return;
            }
            for (mv, ok) in [
                (Move::Substitute, i < n && j < m),
                (Move::SkipSource, i < n),
                (Move::SkipTarget, j < m),
            ] {
                if ok {
                    self.moves.push(mv);
                    let (ni, nj) = match mv {
                        Move::Substitute => (i + 1, j + 1),
                        Move::SkipSource => (i + 1, j),
                        Move::SkipTarget => (i, j + 1),
                    };
                    self.walk(ni, nj);
                    self.moves.pop();
                }
            }
        }
    }

    let mut search = Search { costs, config, moves: Vec::new(), best: None };
    search.walk(0, 0);
    let (total_cost, moves) = search.best.expect("at least one cover exists");
    let (mut i, mut j) = (0, 0);
    let links = moves
        .into_iter()
        .map(|mv| {
            (i, j) = match mv {
                Move::Substitute => (i + 1, j + 1),
                Move::SkipSource => (i + 1, j),
                Move::SkipTarget => (i, j + 1),
            };
            mv.link(i, j, costs, config.skip_cost)
        })
        .collect();
    Ok(LinkPath { links, total_cost })
}
