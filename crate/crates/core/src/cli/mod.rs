//! The `lnprobe` command line.
//!
//! Every subcommand validates its input paths before computing, writes its
//! report (provenance header included) to stdout or `--output`, and exits with
//! 0 on success, 1 on usage errors and 2 on data errors.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::embstore::ReprSource;
use crate::qe::FeatureMode;
use crate::report::Format;
use crate::retrieval::Transform;

#[derive(Debug, Parser)]
#[command(
    name = "lnprobe",
    version,
    about = "Probe the language neutrality of multilingual contextual embeddings"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Encoder layer, 0-based. Defaults to the last layer of the input.
    #[arg(long, global = true)]
    pub layer: Option<usize>,
    /// Sentence representation.
    #[arg(long, global = true, value_enum, default_value_t = SourceArg::Mean)]
    pub source: SourceArg,
    #[arg(long, global = true, value_enum, default_value_t = TransformArg::Plain)]
    pub transform: TransformArg,
    /// Run every layer and add the best-over-layers row.
    #[arg(long, global = true)]
    pub all_layers: bool,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(short = 'o', long, global = true)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Ridge penalty for least-squares fits.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub lambda: f64,
    /// Worker thread cap.
    #[arg(long, global = true, env = "LNPROBE_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceArg {
    Cls,
    Mean,
}

impl From<SourceArg> for ReprSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Cls => ReprSource::Cls,
            SourceArg::Mean => ReprSource::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformArg {
    Plain,
    Centered,
    Projected,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Plain => Transform::Plain,
            TransformArg::Centered => Transform::Centered,
            TransformArg::Projected => Transform::Projected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Json,
    Text,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Text => Format::Text,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Src,
    Mt,
    Both,
}

impl From<ModeArg> for FeatureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Src => FeatureMode::Src,
            ModeArg::Mt => FeatureMode::Mt,
            ModeArg::Both => FeatureMode::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the manifest and shape of an EMB1 file.
    Info(InfoArgs),
    /// Compute a language centroid.
    Centroid(CentroidArgs),
    /// Subtract a centroid from the states of an EMB1 file.
    Center(CenterArgs),
    /// Fit a linear map between the sentence vectors of two parallel files.
    FitProj(FitProjArgs),
    /// Parallel sentence retrieval over every ordered language pair.
    Retrieve(RetrieveArgs),
    /// Word alignment by minimum-weight edge cover.
    Align(AlignArgs),
    /// Score predicted alignments against a gold standard.
    AlignEval(AlignEvalArgs),
    /// Alternate alignment and projection fitting.
    EmAlign(EmAlignArgs),
    /// Average-linkage clustering of language centroids.
    Cluster(ClusterArgs),
    /// V-measure of a centroid clustering against language families.
    Vmeasure(VmeasureArgs),
    /// Write centroids as CSV.
    ExportCentroids(ExportArgs),
    /// Train a language identification classifier.
    LangidTrain(LangidTrainArgs),
    /// Evaluate a language identification classifier.
    LangidEval(LangidEvalArgs),
    /// Correlate source/MT distance with quality labels.
    QeScore(QeScoreArgs),
    /// Train a supervised quality estimation regressor.
    QeTrain(QeTrainArgs),
    /// Evaluate a quality estimation regressor.
    QeEval(QeEvalArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Info(_) => "info",
            Command::Centroid(_) => "centroid",
            Command::Center(_) => "center",
            Command::FitProj(_) => "fit-proj",
            Command::Retrieve(_) => "retrieve",
            Command::Align(_) => "align",
            Command::AlignEval(_) => "align-eval",
            Command::EmAlign(_) => "em-align",
            Command::Cluster(_) => "cluster",
            Command::Vmeasure(_) => "vmeasure",
            Command::ExportCentroids(_) => "export-centroids",
            Command::LangidTrain(_) => "langid-train",
            Command::LangidEval(_) => "langid-eval",
            Command::QeScore(_) => "qe-score",
            Command::QeTrain(_) => "qe-train",
            Command::QeEval(_) => "qe-eval",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InfoArgs {
    pub file: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CentroidArgs {
    #[arg(long)]
    pub emb: PathBuf,
    /// Centroid JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CenterArgs {
    #[arg(long)]
    pub emb: PathBuf,
    /// Its layer and source select which states are shifted.
    #[arg(long)]
    pub centroid: PathBuf,
    /// EMB1 file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitProjArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Basename of the map's `.json`/`.bin` pair.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrieveArgs {
    /// One EMB1 file per language of a multi-parallel corpus.
    #[arg(long, num_args = 1.., required = true)]
    pub corpus: Vec<PathBuf>,
    /// Held-out parallel files for fitting projections.
    #[arg(long, num_args = 1..)]
    pub dev: Vec<PathBuf>,
    /// Language whose space the projections target.
    #[arg(long)]
    pub pivot: Option<String>,
    /// Precomputed centroids for centering; computed from the corpus otherwise.
    #[arg(long = "centroid", num_args = 1..)]
    pub centroids: Vec<PathBuf>,
    /// Report only this direction, given as `SRC:TGT`.
    #[arg(long)]
    pub pair: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AlignArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Alignment file to write; with --all-layers one `<out>.layer<N>` per layer.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Linear map applied to source word vectors with --transform projected.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AlignEvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmAlignArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Basename for the final map.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClusterArgs {
    /// Centroid JSON files, one per language.
    #[arg(required = true)]
    pub centroids: Vec<PathBuf>,
    /// Number of flat clusters to cut; defaults to the number of families.
    #[arg(long)]
    pub k: Option<usize>,
    /// `lang<TAB>family` file.
    #[arg(long)]
    pub families: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VmeasureArgs {
    #[arg(required = true)]
    pub centroids: Vec<PathBuf>,
    #[arg(long)]
    pub families: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportArgs {
    #[arg(required = true)]
    pub centroids: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LangidTrainArgs {
    /// `lang<TAB>emb1-path` listing; relative paths resolve against its directory.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Listing evaluated after training.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LangidEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QeScoreArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub mt: PathBuf,
    /// One label per line, aligned with the sentences.
    #[arg(long)]
    pub labels: PathBuf,
    /// Precomputed source-to-MT map for --transform projected.
    #[arg(long, conflicts_with_all = ["fit_src", "fit_mt"])]
    pub map: Option<PathBuf>,
    /// Held-out source file to fit the map on.
    #[arg(long, requires = "fit_mt")]
    pub fit_src: Option<PathBuf>,
    #[arg(long, requires = "fit_src")]
    pub fit_mt: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QeTrainArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub mt: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Validation split; when given, the ridge penalty is chosen on it from
    /// 1e-3..1e3 and --lambda is ignored.
    #[arg(long, requires_all = ["val_mt", "val_labels"])]
    pub val_src: Option<PathBuf>,
    #[arg(long, requires = "val_src")]
    pub val_mt: Option<PathBuf>,
    #[arg(long, requires = "val_src")]
    pub val_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QeEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub mt: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug)]
pub(crate) enum Failure {
    Usage(String),
    Data(crate::Error),
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Data(e) => write!(f, "{e}"),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = cli.global.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_DATA;
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            match f {
                Failure::Usage(_) => EXIT_USAGE,
                Failure::Data(_) => EXIT_DATA,
            }
        }
    }
}
