//! Stage functions and the end-to-end run driven by one configuration file.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bialign::{align_chapter, cost_matrix, AlignConfig, AlignError, BilingualAlignment};
use crate::embedding::{EmbedError, Embedder, EmbeddingCache, EmbeddingMatrix, EmbeddingMode, ProviderConfig};
use crate::eval::{load_gold, multi_prf};
use crate::export::{self, SplitAssignment};
use crate::ingest::ingest_dir;
use crate::model::{ChapterGroup, ChapterRef, Corpus, Idiom, IdiomSet, MultiParallelRow, FORMAT_VERSION};
use crate::multialign::{align_group, DropRecord, MultiAlignConfig, MultiAlignError, PairAlignments, PivotMode};
use crate::report;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            PipelineError::Config(_) => None,
        }
    }
}

fn at<E: Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// Segment vectors of a whole corpus; each chapter owns a contiguous range.
#[derive(Debug, Clone)]
pub struct CorpusEmbeddings {
    pub matrix: EmbeddingMatrix,
    pub chapters: HashMap<ChapterRef, Range<usize>>,
}

impl CorpusEmbeddings {
    pub fn chapter(&self, chapter: &ChapterRef) -> Option<EmbeddingMatrix> {
        self.chapters.get(chapter).map(|r| self.matrix.slice(r.clone()))
    }
}

pub fn embed_corpus(corpus: &Corpus, embedder: &Embedder, mode: EmbeddingMode) -> Result<CorpusEmbeddings, EmbedError> {
    let mut chapters = HashMap::new();
    let mut segments = Vec::new();
    for volume in &corpus.volumes {
        for chapter in &volume.chapters {
            let start = segments.len();
            segments.extend(chapter.segments.iter());
            let key = ChapterRef {
                idiom: volume.idiom.clone(),
                volume_id: volume.volume_id.clone(),
                chapter_key: chapter.key.clone(),
            };
            chapters.insert(key, start..segments.len());
        }
    }
    let matrix = embedder.embed_segments(segments, mode)?;
    Ok(CorpusEmbeddings { matrix, chapters })
}

/// Bilingual alignments of one group, one per unordered idiom pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAlignments {
    pub group_id: String,
    pub alignments: Vec<BilingualAlignment>,
}

/// Aligns every unordered idiom pair of every group, or only `only` when given.
/// Groups run in parallel; output keeps group order.
pub fn align_groups(
    groups: &[ChapterGroup],
    embeddings: &CorpusEmbeddings,
    config: &AlignConfig,
    only: Option<(&Idiom, &Idiom)>,
) -> Result<Vec<GroupAlignments>, AlignError> {
    config.validate()?;
    groups
        .par_iter()
        .map(|group| {
            let idioms = group.idioms();
            let mut alignments = Vec::new();
            for (k, a) in idioms.iter().enumerate() {
                for b in &idioms[k + 1..] {
                    let (src, tgt) = match only {
                        None => (a, b),
                        Some((x, y)) if (x, y) == (a, b) || (y, x) == (a, b) => (x, y),
                        Some(_) => continue,
                    };
                    let (src_ref, tgt_ref) = (group.chapter_ref(src).unwrap(), group.chapter_ref(tgt).unwrap());
                    let missing = |r: &ChapterRef| AlignError::Incompatible(format!("no embeddings for chapter {r}"));
                    let s = embeddings.chapter(&src_ref).ok_or_else(|| missing(&src_ref))?;
                    let t = embeddings.chapter(&tgt_ref).ok_or_else(|| missing(&tgt_ref))?;
                    let path = align_chapter(&cost_matrix(&s, &t, config)?, config)?;
                    alignments.push(BilingualAlignment::new(src_ref, tgt_ref, path));
                }
            }
            Ok(GroupAlignments { group_id: group.group_id.clone(), alignments })
        })
        .collect()
}

/// Multi-parallel rows for every group, in group order.
pub fn multialign_groups(
    groups: &[ChapterGroup],
    alignments: &[GroupAlignments],
    config: &MultiAlignConfig,
) -> Result<(Vec<MultiParallelRow>, Vec<DropRecord>), MultiAlignError> {
    let by_group: HashMap<&str, &GroupAlignments> = alignments.iter().map(|g| (g.group_id.as_str(), g)).collect();
    let per_group: Vec<_> = groups
        .par_iter()
        .map(|group| {
            let mut pairs = PairAlignments::new();
            if let Some(g) = by_group.get(group.group_id.as_str()) {
                for a in &g.alignments {
                    pairs.insert(a.clone());
                }
            }
            align_group(group, &pairs, config)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for g in per_group {
        rows.extend(g.rows);
        dropped.extend(g.dropped);
    }
    Ok((rows, dropped))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub raw_dir: PathBuf,
    pub mapping: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub gold: Option<PathBuf>,
    #[serde(default)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub mode: EmbeddingMode,
    /// Provider calls allowed in flight at once.
    pub max_in_flight: usize,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self { mode: EmbeddingMode::Text, max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub stats: bool,
    /// Runs when `paths.gold` is set.
    pub evaluate: bool,
    /// Runs when `paths.splits` is set.
    pub split: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self { stats: true, evaluate: true, split: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Accepted idiom codes; defaults to the five canonical ones.
    #[serde(default)]
    pub idioms: Option<Vec<String>>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub embedding: EmbeddingSettings,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub multialign: MultiAlignConfig,
    #[serde(default)]
    pub stages: Stages,
}

impl PipelineConfig {
    pub fn new(raw_dir: PathBuf, mapping: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            paths: Paths { raw_dir, mapping, out_dir, cache: None, gold: None, splits: None },
            idioms: None,
            provider: ProviderConfig::default(),
            embedding: EmbeddingSettings::default(),
            align: AlignConfig::default(),
            multialign: MultiAlignConfig::default(),
            stages: Stages::default(),
        }
    }

    /// Reads TOML; relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut config.paths;
        for slot in [&mut p.raw_dir, &mut p.mapping, &mut p.out_dir] {
            if slot.is_relative() {
                *slot = base.join(&*slot);
            }
        }
        for slot in [&mut p.cache, &mut p.gold, &mut p.splits].into_iter().flatten() {
            if slot.is_relative() {
                *slot = base.join(&*slot);
            }
        }
        Ok(config)
    }

    pub fn idiom_set(&self) -> Result<IdiomSet, PipelineError> {
        match &self.idioms {
            None => Ok(IdiomSet::canonical()),
            Some(codes) => IdiomSet::from_codes(codes).map_err(|e| PipelineError::Config(e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn Display| PipelineError::Config(e.to_string());
        self.idiom_set()?;
        self.provider.validate().map_err(|e| cfg(&e))?;
        self.align.validate().map_err(|e| cfg(&e))?;
        self.multialign.filter.validate().map_err(|e| cfg(&e))?;
        if self.embedding.max_in_flight == 0 {
            return Err(PipelineError::Config("embedding.max_in_flight must be at least 1".into()));
        }
        let p = &self.paths;
        for path in [Some(&p.raw_dir), Some(&p.mapping), p.gold.as_ref(), p.splits.as_ref()].into_iter().flatten() {
            if !path.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub stage: String,
    pub kind: String,
    pub counts: BTreeMap<String, usize>,
}

fn event(stage: &str, counts: &[(&str, usize)]) -> Event {
    Event {
        stage: stage.into(),
        kind: "completed".into(),
        counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub volumes: usize,
    pub groups: usize,
    pub segments: BTreeMap<String, usize>,
    pub alignments: usize,
    pub rows: usize,
    pub dropped: usize,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub format_version: u32,
    pub config: PipelineConfig,
    pub config_sha256: String,
    /// Input file (relative to its root) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Every artifact under the output directory except this manifest.
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<String>,
    pub counts: RunCounts,
    /// The only field that differs between identical runs.
    pub wall_time_ms: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Sorted relative paths and SHA-256 of every file below `root`.
pub fn hash_tree(root: &Path, skip: &[&str]) -> std::io::Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, skip: &[&str], out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, skip, out)?;
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                if !skip.contains(&rel.as_str()) {
                    out.insert(rel, sha256_hex(&fs::read(&path)?));
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    if root.is_file() {
        let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.insert(name, sha256_hex(&fs::read(root)?));
    } else {
        walk(root, root, skip, &mut out)?;
    }
    Ok(out)
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

/// Runs every enabled stage into a staging directory. On success the staging
/// directory replaces `paths.out_dir`; on failure it is kept as
/// `<out_dir>.quarantine` and the error names the failing stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let out_dir = &config.paths.out_dir;
    let staging = sibling(out_dir, ".partial");
    let quarantine = sibling(out_dir, ".quarantine");
    for dir in [&staging, &quarantine] {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::create_dir_all(&staging).map_err(|e| PipelineError::Config(format!("{}: {e}", staging.display())))?;

    match run_stages(config, &staging) {
        Ok(manifest) => {
            if out_dir.exists() {
                fs::remove_dir_all(out_dir).map_err(at("publish"))?;
            }
            fs::rename(&staging, out_dir).map_err(at("publish"))?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::rename(&staging, &quarantine);
            Err(e)
        }
    }
}

fn run_stages(config: &PipelineConfig, out: &Path) -> Result<Manifest, PipelineError> {
    let started = Instant::now();
    let mut events = Vec::new();
    let mut stages = Vec::new();
    let mut counts = RunCounts::default();
    let p = &config.paths;

    stages.push("ingest".to_string());
    let ingested = ingest_dir(&p.raw_dir, &p.mapping, &config.idiom_set()?).map_err(at("ingest"))?;
    let corpus = ingested.corpus;
    let mut warnings = ingested.warnings;
    let groups = corpus.chapter_groups().map_err(at("ingest"))?;
    counts.volumes = corpus.volumes.len();
    counts.groups = groups.len();
    for v in &corpus.volumes {
        *counts.segments.entry(v.idiom.to_string()).or_default() += v.segments().count();
    }
    report::write_json_compact(&out.join("corpus.json"), &corpus).map_err(at("ingest"))?;
    events.push(event("ingest", &[("volumes", counts.volumes), ("groups", counts.groups), ("warnings", warnings.len())]));

    stages.push("embed".to_string());
    let mut embedder = Embedder::from_config(&config.provider)
        .map_err(at("embed"))?
        .with_max_in_flight(config.embedding.max_in_flight);
    if let Some(dir) = &p.cache {
        embedder = embedder.with_cache(Arc::new(EmbeddingCache::open(dir).map_err(at("embed"))?));
    }
    let embeddings = embed_corpus(&corpus, &embedder, config.embedding.mode).map_err(at("embed"))?;
    let descriptor = EmbeddingDescriptor {
        provider: config.provider.clone(),
        mode: config.embedding.mode,
        dim: embeddings.matrix.dim,
        segments: embeddings.matrix.len(),
    };
    report::write_json_pretty(&out.join(EMBEDDINGS_FILE), &descriptor).map_err(at("embed"))?;
    events.push(event("embed", &[("segments", embeddings.matrix.len()), ("dim", embeddings.matrix.dim)]));

    stages.push("bialign".to_string());
    let alignments = align_groups(&groups, &embeddings, &config.align, None).map_err(at("bialign"))?;
    write_alignments(&out.join("alignments"), &alignments).map_err(at("bialign"))?;
    counts.alignments = alignments.iter().map(|g| g.alignments.len()).sum();
    events.push(event("bialign", &[("chapter_pairs", counts.alignments)]));

    stages.push("multialign".to_string());
    let present = corpus.idioms();
    let requested: Vec<&Idiom> = match &config.multialign.pivots {
        PivotMode::All => Vec::new(),
        PivotMode::Consensus(list) => list.iter().collect(),
        PivotMode::Single(p) => vec![p],
    };
    if let Some(absent) = requested.iter().find(|p| !present.contains(**p)) {
        return Err(PipelineError::Stage { stage: "multialign", message: format!("pivot {absent} is not in the corpus") });
    }
    let (rows, dropped) = multialign_groups(&groups, &alignments, &config.multialign).map_err(at("multialign"))?;
    export::export_rows(&out.join("rows.jsonl"), &rows).map_err(at("multialign"))?;
    report::write_jsonl(&out.join("dropped.jsonl"), &dropped).map_err(at("multialign"))?;
    counts.rows = rows.len();
    counts.dropped = dropped.len();
    events.push(event("multialign", &[("rows", rows.len()), ("dropped", dropped.len())]));

    if config.stages.stats {
        stages.push("stats".to_string());
        let s = export::stats(&corpus.volumes, &rows).map_err(at("stats"))?;
        report::write_json_pretty(&out.join("stats.json"), &s).map_err(at("stats"))?;
        fs::write(out.join("stats.txt"), s.to_table()).map_err(at("stats"))?;
        events.push(event("stats", &[("aligned_segments", s.total.aligned_segments)]));
    }

    if let (true, Some(gold_path)) = (config.stages.evaluate, &p.gold) {
        stages.push("evaluate".to_string());
        let gold = load_gold(gold_path).map_err(at("evaluate"))?;
        let prf = multi_prf(&rows, &gold).map_err(at("evaluate"))?;
        report::write_json_pretty(&out.join("prf.json"), &prf).map_err(at("evaluate"))?;
        warnings.extend(prf.warnings.iter().cloned());
        events.push(event("evaluate", &[("idiom_pairs", prf.pairs.len())]));
    }

    if let (true, Some(splits_path)) = (config.stages.split, &p.splits) {
        stages.push("split".to_string());
        let text = fs::read_to_string(splits_path).map_err(at("split"))?;
        let assignment = SplitAssignment::parse(&text).map_err(at("split"))?;
        let split = export::split_rows(&rows, &assignment).map_err(at("split"))?;
        let dir = out.join("splits");
        fs::create_dir_all(&dir).map_err(at("split"))?;
        for (name, rows) in &split.splits {
            export::export_rows(&dir.join(format!("{name}.jsonl")), rows).map_err(at("split"))?;
        }
        events.push(event("split", &[("conflicts", split.conflicts.len())]));
        warnings.extend(split.conflicts);
    }

    counts.warnings = warnings.len();
    report::write_jsonl(&out.join("warnings.jsonl"), &warnings).map_err(at("report"))?;
    report::write_jsonl(&out.join("events.jsonl"), &events).map_err(at("report"))?;

    let mut inputs = BTreeMap::new();
    for (label, path) in [("raw", Some(&p.raw_dir)), ("mapping", Some(&p.mapping)), ("gold", p.gold.as_ref()), ("splits", p.splits.as_ref())] {
        if let Some(path) = path {
            for (rel, hash) in hash_tree(path, &[]).map_err(at("report"))? {
                inputs.insert(format!("{label}/{rel}"), hash);
            }
        }
    }
    let manifest = Manifest {
        toolkit_version: TOOLKIT_VERSION.into(),
        format_version: FORMAT_VERSION,
        config: config.clone(),
        config_sha256: config.digest(),
        inputs,
        artifacts: hash_tree(out, &[MANIFEST_FILE]).map_err(at("report"))?,
        stages,
        counts,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    report::write_json_pretty(&out.join(MANIFEST_FILE), &manifest).map_err(at("report"))?;
    Ok(manifest)
}

pub const EMBEDDINGS_FILE: &str = "embeddings.json";

/// Written next to an embedding cache so later stages can rebuild the embedder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDescriptor {
    pub provider: ProviderConfig,
    pub mode: EmbeddingMode,
    pub dim: usize,
    pub segments: usize,
}

/// One `<group_id>.jsonl` per group, one alignment per line.
pub fn write_alignments(dir: &Path, alignments: &[GroupAlignments]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for g in alignments {
        report::write_jsonl(&dir.join(format!("{}.jsonl", file_stem(&g.group_id))), &g.alignments)?;
    }
    Ok(())
}

pub fn read_alignments(dir: &Path) -> std::io::Result<Vec<BilingualAlignment>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(report::read_jsonl::<BilingualAlignment>(&f)?);
    }
    Ok(out)
}

/// Regroups loose alignments under the group whose chapters they join.
pub fn group_alignments(groups: &[ChapterGroup], alignments: Vec<BilingualAlignment>) -> Vec<GroupAlignments> {
    let mut owner: HashMap<(ChapterRef, ChapterRef), &str> = HashMap::new();
    for g in groups {
        for a in g.members.keys() {
            for b in g.members.keys() {
                owner.insert((g.chapter_ref(a).unwrap(), g.chapter_ref(b).unwrap()), &g.group_id);
            }
        }
    }
    let mut by_group: BTreeMap<&str, Vec<BilingualAlignment>> = BTreeMap::new();
    for a in alignments {
        if let Some(g) = owner.get(&(a.src.clone(), a.tgt.clone())) {
            by_group.entry(g).or_default().push(a);
        }
    }
    by_group
        .into_iter()
        .map(|(g, alignments)| GroupAlignments { group_id: g.to_string(), alignments })
        .collect()
}

fn file_stem(group_id: &str) -> String {
    group_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, write_fixture, SynthConfig};

    fn fixture(dir: &Path) -> PipelineConfig {
        let cfg = SynthConfig { groups: 4, segments_min: 6, segments_max: 9, chapters_per_volume: 2, ..SynthConfig::default() };
        let fx = generate(&cfg);
        write_fixture(dir, &fx).unwrap();
        let mut config = PipelineConfig::new(dir.join("raw"), dir.join("mapping.tsv"), dir.join("out"));
        config.paths.gold = Some(dir.join("gold.tsv"));
        config.paths.splits = Some(dir.join("splits.tsv"));
        config.paths.cache = Some(dir.join("cache"));
        config
    }

    #[test]
    fn end_to_end_and_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let config = fixture(dir.path());
        let first = run_pipeline(&config).unwrap();
        for name in ["corpus.json", "rows.jsonl", "dropped.jsonl", "stats.json", "stats.txt", "prf.json", "warnings.jsonl", "events.jsonl", "embeddings.json"] {
            assert!(first.artifacts.contains_key(name), "{name}");
        }
        assert!(first.counts.rows > 0);
        assert_eq!(first.counts.groups, 4);
        let second = run_pipeline(&config).unwrap();
        assert_eq!(first.artifacts, second.artifacts);
        assert_eq!(first.config_sha256, second.config_sha256);
        assert!(!sibling(&config.paths.out_dir, ".partial").exists());
    }

    #[test]
    fn failed_stage_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = fixture(dir.path());
        config.multialign.pivots = PivotMode::Single(Idiom::new("ladin").unwrap());
        let err = run_pipeline(&config).unwrap_err();
        assert_eq!(err.stage(), Some("multialign"));
        let q = sibling(&config.paths.out_dir, ".quarantine");
        assert!(q.join("corpus.json").exists());
        assert!(!config.paths.out_dir.exists());
    }

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
[paths]
raw_dir = "raw"
mapping = "mapping.tsv"
out_dir = "out"

[align]
skip_cost = 0.2

[multialign]
pivots = { single = "puter" }
filter_stage = "per-pivot"

[multialign.filter]
unit = "characters"
"#;
        let path = dir.path().join("run.toml");
        fs::write(&path, text).unwrap();
        let config = PipelineConfig::load(&path).unwrap();
        assert_eq!(config.paths.raw_dir, dir.path().join("raw"));
        assert_eq!(config.align.skip_cost, 0.2);
        assert_eq!(config.multialign.pivots, PivotMode::Single(Idiom::new("puter").unwrap()));
        assert_eq!(config.multialign.filter.upper_ratio, 1.5);
        let back: PipelineConfig = toml::from_str(&toml::to_string(&config).unwrap()).unwrap();
        assert_eq!(back, config);
        assert!(matches!(config.validate(), Err(PipelineError::Config(_))));
        fs::write(&path, "[paths]\nraw_dir='r'\nmapping='m'\nout_dir='o'\n[nope]\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }

    #[test]
    fn empty_corpus_runs() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("raw")).unwrap();
        fs::write(dir.path().join("mapping.tsv"), "sursilvan\tputer\n").unwrap();
        let config = PipelineConfig::new(dir.path().join("raw"), dir.path().join("mapping.tsv"), dir.path().join("out"));
        let manifest = run_pipeline(&config).unwrap();
        assert_eq!(manifest.counts.rows, 0);
        assert_eq!(fs::read(dir.path().join("out/rows.jsonl")).unwrap(), b"");
    }
}
