//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bialign::{AlignConfig, CostNormalization};
use crate::embedding::{Embedder, EmbeddingCache, EmbeddingMode, ProviderConfig};
use crate::eval::{load_gold, multi_prf};
use crate::export::{self, SplitAssignment};
use crate::ingest::ingest_dir;
use crate::model::{Corpus, Idiom, IdiomSet};
use crate::multialign::{FilterStage, LengthUnit, MultiAlignConfig, PivotMode};
use crate::pipeline::{self, EmbeddingDescriptor, PipelineConfig, EMBEDDINGS_FILE};
use crate::report;
use crate::synth::{self, SynthConfig};

type CliResult = Result<(), String>;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (format 1)");

#[derive(Debug, Parser)]
#[command(name = "polyalign", version = VERSION, about = "Multi-parallel segment alignment for comparable document collections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage from one configuration file.
    Run(RunArgs),
    /// Parse raw volumes and the chapter mapping into corpus.json.
    Ingest(IngestArgs),
    /// Embed every segment into a cache directory.
    Embed(EmbedArgs),
    /// Align chapter pairs.
    Bialign(BialignArgs),
    /// Build multi-parallel rows from chapter-pair alignments.
    Multialign(MultialignArgs),
    /// Strict precision, recall and F1 against a gold file.
    Evaluate(EvaluateArgs),
    #[command(subcommand)]
    Export(ExportCommand),
    /// Write a synthetic fixture corpus with its gold alignment.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// `all`, one idiom, or a comma-separated pivot set.
    #[arg(long)]
    pub pivot: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub filter_stage: Option<StageArg>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub raw_dir: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Comma-separated idiom codes to accept; defaults to the canonical five.
    #[arg(long)]
    pub idioms: Option<String>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Provider name; `hash` needs no further settings.
    #[arg(long, default_value = "hash")]
    pub provider: String,
    /// TOML file with a full provider configuration; overrides --provider.
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub mode: ModeArg,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
}

#[derive(Debug, Args)]
pub struct BialignArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Cache directory written by `embed`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Restrict to one idiom pair, `SRC:TGT`.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, default_value_t = 0.15)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "raw")]
    pub normalization: NormArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MultialignArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub alignments: PathBuf,
    #[arg(long, default_value = "all")]
    pub pivot: String,
    #[arg(long, value_enum, default_value = "after-assembly")]
    pub filter_stage: StageArg,
    #[arg(long, value_enum, default_value = "tokens")]
    pub length_unit: UnitArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dropped: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    /// Copy the aligned rows (two or more cells) to a new row file.
    Rows {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-column TSV for one idiom pair.
    Bitext {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// `A:B`
        #[arg(long)]
        pair: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-idiom segment and token counts.
    Stats {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the text table here.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// One row file per split.
    Split {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random evaluation sheet.
    Sample {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Text,
    Html,
    Concat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Raw,
    SampledMean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    AfterAssembly,
    PerPivot,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UnitArg {
    Tokens,
    Characters,
}

impl From<ModeArg> for EmbeddingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Text => EmbeddingMode::Text,
            ModeArg::Html => EmbeddingMode::Html,
            ModeArg::Concat => EmbeddingMode::Concat,
        }
    }
}

impl From<StageArg> for FilterStage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::AfterAssembly => FilterStage::AfterAssembly,
            StageArg::PerPivot => FilterStage::PerPivot,
            StageArg::Off => FilterStage::Off,
        }
    }
}

fn err(context: impl std::fmt::Display) -> impl Fn(&dyn std::fmt::Display) -> String {
    move |e| format!("{context}: {e}")
}

/// `all`, a single idiom, or a comma-separated consensus set.
pub fn parse_pivot(spec: &str) -> Result<PivotMode, String> {
    if spec == "all" {
        return Ok(PivotMode::All);
    }
    let idioms = spec
        .split(',')
        .map(|s| Idiom::new(s.trim()).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match idioms.len() {
        1 => PivotMode::Single(idioms.into_iter().next().unwrap()),
        _ => PivotMode::Consensus(idioms),
    })
}

fn parse_pair(spec: &str) -> Result<(Idiom, Idiom), String> {
    let (a, b) = spec.split_once(':').ok_or_else(|| format!("pair {spec:?} is not of the form A:B"))?;
    let a = Idiom::new(a).map_err(|e| e.to_string())?;
    let b = Idiom::new(b).map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn read_corpus(path: &Path) -> Result<Corpus, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_warnings(warnings: &[report::Warning]) {
    if !warnings.is_empty() {
        eprintln!("{} warning(s)", warnings.len());
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run(a) => run_config(a),
        Command::Ingest(a) => {
            let idioms = match &a.idioms {
                None => IdiomSet::canonical(),
                Some(list) => IdiomSet::from_codes(list.split(',').map(str::trim)).map_err(|e| e.to_string())?,
            };
            let out = ingest_dir(&a.raw_dir, &a.mapping, &idioms).map_err(|e| format!("ingest: {e}"))?;
            report::write_json_compact(&a.out, &out.corpus).map_err(|e| err(a.out.display())(&e))?;
            if let Some(path) = &a.report {
                report::write_jsonl(path, &out.warnings).map_err(|e| err(path.display())(&e))?;
            }
            print_warnings(&out.warnings);
            eprintln!("{} volumes, {} chapter groups", out.corpus.volumes.len(), out.corpus.groups.len());
            Ok(())
        }
        Command::Embed(a) => {
            let corpus = read_corpus(&a.corpus)?;
            let provider = match &a.provider_config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| err(path.display())(&e))?;
                    toml::from_str::<ProviderConfig>(&text).map_err(|e| err(path.display())(&e))?
                }
                None if a.provider == crate::embedding::HASH_PROVIDER => ProviderConfig::hash(a.dim.unwrap_or(crate::embedding::DEFAULT_DIM)),
                None => return Err(format!("provider {} needs --provider-config", a.provider)),
            };
            let cache = Arc::new(EmbeddingCache::open(&a.cache).map_err(|e| err(a.cache.display())(&e))?);
            let embedder = Embedder::from_config(&provider)
                .map_err(|e| format!("embed: {e}"))?
                .with_cache(cache)
                .with_max_in_flight(a.max_in_flight.max(1));
            let mode = EmbeddingMode::from(a.mode);
            let emb = pipeline::embed_corpus(&corpus, &embedder, mode).map_err(|e| format!("embed: {e}"))?;
            let descriptor = EmbeddingDescriptor { provider, mode, dim: emb.matrix.dim, segments: emb.matrix.len() };
            let path = a.cache.join(EMBEDDINGS_FILE);
            report::write_json_pretty(&path, &descriptor).map_err(|e| err(path.display())(&e))?;
            eprintln!("{} segments embedded (dim {})", emb.matrix.len(), emb.matrix.dim);
            Ok(())
        }
        Command::Bialign(a) => {
            let corpus = read_corpus(&a.corpus)?;
            let groups = corpus.chapter_groups().map_err(|e| format!("bialign: {e}"))?;
            let path = a.embeddings.join(EMBEDDINGS_FILE);
            let text = fs::read(&path).map_err(|e| err(path.display())(&e))?;
            let descriptor: EmbeddingDescriptor = serde_json::from_slice(&text).map_err(|e| err(path.display())(&e))?;
            let cache = Arc::new(EmbeddingCache::open(&a.embeddings).map_err(|e| err(a.embeddings.display())(&e))?);
            let embedder = Embedder::from_config(&descriptor.provider).map_err(|e| format!("bialign: {e}"))?.with_cache(cache);
            let emb = pipeline::embed_corpus(&corpus, &embedder, descriptor.mode).map_err(|e| format!("bialign: {e}"))?;
            let config = AlignConfig {
                normalization: match a.normalization {
                    NormArg::Raw => CostNormalization::Raw,
                    NormArg::SampledMean => CostNormalization::SampledMean,
                },
                ..AlignConfig::with_skip_cost(a.lambda)
            };
            let pair = a.pair.as_deref().map(parse_pair).transpose()?;
            let only = pair.as_ref().map(|(x, y)| (x, y));
            let out = pipeline::align_groups(&groups, &emb, &config, only).map_err(|e| format!("bialign: {e}"))?;
            pipeline::write_alignments(&a.out, &out).map_err(|e| err(a.out.display())(&e))?;
            eprintln!("{} chapter pairs aligned", out.iter().map(|g| g.alignments.len()).sum::<usize>());
            Ok(())
        }
        Command::Multialign(a) => {
            let corpus = read_corpus(&a.corpus)?;
            let groups = corpus.chapter_groups().map_err(|e| format!("multialign: {e}"))?;
            let loose = pipeline::read_alignments(&a.alignments).map_err(|e| err(a.alignments.display())(&e))?;
            let alignments = pipeline::group_alignments(&groups, loose);
            let mut config = MultiAlignConfig { pivots: parse_pivot(&a.pivot)?, filter_stage: a.filter_stage.into(), ..MultiAlignConfig::default() };
            config.filter.unit = match a.length_unit {
                UnitArg::Tokens => LengthUnit::Tokens,
                UnitArg::Characters => LengthUnit::Characters,
            };
            let (rows, dropped) = pipeline::multialign_groups(&groups, &alignments, &config).map_err(|e| format!("multialign: {e}"))?;
            export::export_rows(&a.out, &rows).map_err(|e| e.to_string())?;
            if let Some(path) = &a.dropped {
                report::write_jsonl(path, &dropped).map_err(|e| err(path.display())(&e))?;
            }
            eprintln!("{} rows, {} dropped components or rows", rows.len(), dropped.len());
            Ok(())
        }
        Command::Evaluate(a) => {
            let rows = export::read_rows(&a.hyp).map_err(|e| e.to_string())?;
            let gold = load_gold(&a.gold).map_err(|e| format!("evaluate: {e}"))?;
            let prf = multi_prf(&rows, &gold).map_err(|e| format!("evaluate: {e}"))?;
            match &a.report {
                Some(path) => report::write_json_pretty(path, &prf).map_err(|e| err(path.display())(&e))?,
                None => println!("{}", serde_json::to_string_pretty(&prf).unwrap()),
            }
            print_warnings(&prf.warnings);
            let m = prf.macro_average;
            eprintln!("precision {:.4}  recall {:.4}  f1 {:.4}", m.precision, m.recall, m.f1);
            Ok(())
        }
        Command::Export(e) => run_export(e),
        Command::Synth(a) => {
            let mut config = SynthConfig::default();
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            if let Some(groups) = a.groups {
                config.groups = groups;
            }
            let fixture = synth::generate(&config);
            synth::write_fixture(&a.out, &fixture).map_err(|e| err(a.out.display())(&e))?;
            eprintln!("{} groups, {} gold rows", fixture.counts.groups, fixture.counts.gold_rows);
            Ok(())
        }
    }
}

fn run_config(a: RunArgs) -> CliResult {
    let mut config = PipelineConfig::load(&a.config).map_err(|e| e.to_string())?;
    if let Some(out) = a.out {
        config.paths.out_dir = out;
    }
    if let Some(cache) = a.cache {
        config.paths.cache = Some(cache);
    }
    if let Some(pivot) = &a.pivot {
        config.multialign.pivots = parse_pivot(pivot)?;
    }
    if let Some(lambda) = a.lambda {
        config.align.skip_cost = lambda;
    }
    if let Some(stage) = a.filter_stage {
        config.multialign.filter_stage = stage.into();
    }
    let manifest = pipeline::run_pipeline(&config).map_err(|e| e.to_string())?;
    eprintln!(
        "{} rows from {} groups ({} warnings); outputs in {}",
        manifest.counts.rows,
        manifest.counts.groups,
        manifest.counts.warnings,
        config.paths.out_dir.display()
    );
    Ok(())
}

fn run_export(cmd: ExportCommand) -> CliResult {
    match cmd {
        ExportCommand::Rows { rows, out } => {
            let rows = export::read_rows(&rows).map_err(|e| e.to_string())?;
            let aligned: Vec<_> = rows.into_iter().filter(|r| r.is_aligned()).collect();
            export::export_rows(&out, &aligned).map_err(|e| e.to_string())
        }
        ExportCommand::Bitext { rows, corpus, pair, out } => {
            let rows = export::read_rows(&rows).map_err(|e| e.to_string())?;
            let corpus = read_corpus(&corpus)?;
            let (a, b) = parse_pair(&pair)?;
            let text = export::bitext(&rows, &a, &b, &corpus.idioms()).map_err(|e| e.to_string())?;
            fs::write(&out, text).map_err(|e| err(out.display())(&e))
        }
        ExportCommand::Stats { rows, corpus, out, table } => {
            let rows = export::read_rows(&rows).map_err(|e| e.to_string())?;
            let corpus = read_corpus(&corpus)?;
            let s = export::stats(&corpus.volumes, &rows).map_err(|e| e.to_string())?;
            report::write_json_pretty(&out, &s).map_err(|e| err(out.display())(&e))?;
            match table {
                Some(path) => fs::write(&path, s.to_table()).map_err(|e| err(path.display())(&e)),
                None => {
                    print!("{}", s.to_table());
                    Ok(())
                }
            }
        }
        ExportCommand::Split { rows, splits, out } => {
            let rows = export::read_rows(&rows).map_err(|e| e.to_string())?;
            let text = fs::read_to_string(&splits).map_err(|e| err(splits.display())(&e))?;
            let assignment = SplitAssignment::parse(&text).map_err(|e| e.to_string())?;
            let result = export::split_rows(&rows, &assignment).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out).map_err(|e| err(out.display())(&e))?;
            for (name, rows) in &result.splits {
                export::export_rows(&out.join(format!("{name}.jsonl")), rows).map_err(|e| e.to_string())?;
            }
            report::write_jsonl(&out.join("conflicts.jsonl"), &result.conflicts).map_err(|e| err(out.display())(&e))?;
            print_warnings(&result.conflicts);
            Ok(())
        }
        ExportCommand::Sample { rows, n, seed, out } => {
            let rows = export::read_rows(&rows).map_err(|e| e.to_string())?;
            let sheet = export::sample_rows(&rows, n, seed).map_err(|e| e.to_string())?;
            fs::write(&out, sheet).map_err(|e| err(out.display())(&e))
        }
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
        assert_eq!(VERSION, format!("{} (format {})", crate::pipeline::TOOLKIT_VERSION, crate::model::FORMAT_VERSION));
    }

    #[test]
    fn pivot_specs() {
        assert_eq!(parse_pivot("all").unwrap(), PivotMode::All);
        assert_eq!(parse_pivot("puter").unwrap(), PivotMode::Single(Idiom::new("puter").unwrap()));
        assert!(matches!(parse_pivot("puter,vallader").unwrap(), PivotMode::Consensus(v) if v.len() == 2));
        assert!(parse_pivot("Puter").is_err());
        assert!(parse_pair("puter").is_err());
    }
}
