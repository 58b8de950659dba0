use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use facegraph::manifest::{self, ManifestHeader, ManifestReader};
use facegraph::metrics::evaluate;
use facegraph::pipeline::{self, CleanMode, VideoSummary};
use facegraph::sampling::{plan_frames, DEFAULT_BBOX_FACTOR, DEFAULT_EVAL_RATE};
use facegraph::synth::{self, FalsePositiveMode, FalsePositiveSpec, SuiteSpec};
use facegraph::{AggregationScheme, SimilarityThreshold, SizeFraction};

#[derive(Parser)]
#[command(
    name = "facegraph",
    version,
    about = "Face-graph cleaning and video-level score aggregation"
)]
struct Cli {
    /// Worker threads for per-video processing (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build face graphs, compute components and flag small ones.
    Clean(CleanArgs),
    /// Collapse per-face scores of a cleaned manifest into video verdicts.
    Aggregate(AggregateArgs),
    /// Score verdicts against video labels.
    Evaluate(EvaluateArgs),
    /// Evaluate a grid of similarity thresholds and size fractions.
    Sweep(SweepArgs),
    /// Generate a synthetic manifest with a ground-truth sidecar.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CleanOpts {
    /// Edge threshold on embedding similarity.
    #[arg(long, default_value_t = 0.8)]
    theta: f64,
    /// Prune components of size <= N_F * fraction.
    #[arg(long = "size-frac", default_value = "1/2", value_parser = parse_frac)]
    size_frac: SizeFraction,
    /// Skip cleaning: all detections form one kept pseudo-component per video.
    #[arg(long, conflicts_with = "no_prune")]
    no_clean: bool,
    /// Compute components but keep all of them.
    #[arg(long)]
    no_prune: bool,
}

impl CleanOpts {
    fn mode(&self) -> Result<CleanMode> {
        let theta = SimilarityThreshold::new(self.theta)?;
        Ok(if self.no_clean {
            CleanMode::Baseline
        } else if self.no_prune {
            CleanMode::ComponentsOnly { theta }
        } else {
            CleanMode::Proposed {
                theta,
                frac: self.size_frac,
            }
        })
    }
}

#[derive(Args)]
struct CleanArgs {
    /// Input manifest ("-" for stdin).
    input: PathBuf,
    #[command(flatten)]
    opts: CleanOpts,
    /// Output manifest (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-video summary CSV (stderr when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Avg,
    Median,
    Max,
    Face,
    All,
}

impl SchemeArg {
    fn schemes(self) -> Vec<AggregationScheme> {
        match self {
            SchemeArg::Avg => vec![AggregationScheme::Avg],
            SchemeArg::Median => vec![AggregationScheme::Median],
            SchemeArg::Max => vec![AggregationScheme::Max],
            SchemeArg::Face => vec![AggregationScheme::Face],
            SchemeArg::All => AggregationScheme::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct AggregateArgs {
    /// Cleaned manifest ("-" for stdin). Rows without component annotations
    /// are aggregated as one pseudo-component per video.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "face")]
    scheme: SchemeArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Verdict CSV ("-" for stdin).
    verdicts: PathBuf,
    /// Manifest whose rows carry the video labels.
    #[arg(long)]
    labels: PathBuf,
    /// Scheme to evaluate when the verdicts hold several.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<AggregationScheme>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepFormat {
    Csv,
    Table,
}

#[derive(Args)]
struct SweepArgs {
    /// Manifest with embeddings, scores and labels ("-" for stdin).
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.7, 0.8, 0.9])]
    thetas: Vec<f64>,
    #[arg(long = "size-fracs", value_delimiter = ',', value_parser = parse_frac, default_value = "1/4,1/2,3/4")]
    size_fracs: Vec<SizeFraction>,
    #[arg(long, value_parser = parse_scheme, default_value = "face")]
    scheme: AggregationScheme,
    #[arg(long, value_enum, default_value = "csv")]
    format: SweepFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Manifest output path (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Ground-truth sidecar path.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    videos: usize,
    /// Sampled frames per video. Ignored when --total-frames is given.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Source frame count; frames are then planned from --fps-source and --rate.
    #[arg(long)]
    total_frames: Option<u64>,
    #[arg(long, default_value_t = 30.0)]
    fps_source: f64,
    #[arg(long, default_value_t = DEFAULT_EVAL_RATE)]
    rate: f64,
    #[arg(long, default_value_t = DEFAULT_BBOX_FACTOR)]
    bbox_factor: f64,
    #[arg(long, default_value_t = 1)]
    identities: usize,
    /// Fraction of frames each identity appears in.
    #[arg(long, default_value_t = 1.0)]
    presence: f64,
    #[arg(long, default_value_t = 0)]
    fp_count: usize,
    /// Frames per scattered false positive.
    #[arg(long, default_value_t = 1)]
    fp_occurrences: usize,
    /// False positives repeat in every frame.
    #[arg(long)]
    persistent_fp: bool,
    /// Cosine between each false positive and an identity.
    #[arg(long)]
    fp_anchor: Option<f64>,
    #[arg(long, default_value_t = synth::DEFAULT_NOISE_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = facegraph::model::DEFAULT_EMBEDDING_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    fake_ratio: f64,
    /// Do not enforce the similarity margin between groups.
    #[arg(long)]
    no_margin: bool,
    #[arg(long, env = "FACEGRAPH_SEED", default_value_t = 0)]
    seed: u64,
}

fn parse_frac(s: &str) -> Result<SizeFraction, String> {
    s.parse().map_err(|e: facegraph::Error| e.to_string())
}

fn parse_scheme(s: &str) -> Result<AggregationScheme, String> {
    s.parse()
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(io::stdin().lock())))
    } else {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

fn read_groups(path: &Path) -> Result<(ManifestHeader, Vec<facegraph::VideoGroup>)> {
    let (header, rows) = manifest::read_manifest(open_input(path)?)?;
    Ok((header, manifest::group_by_video(rows)?))
}

fn cmd_clean(args: &CleanArgs) -> Result<()> {
    let mode = args.opts.mode()?;
    let (header, groups) = read_groups(&args.input)?;
    let sets = pipeline::clean_all(&groups, mode)?;
    let mut out = open_output(args.output.as_deref())?;
    pipeline::write_cleaned(&mut out, header, &groups, &sets)?;
    out.flush()?;

    let summaries: Vec<VideoSummary> = sets.iter().map(VideoSummary::of).collect();
    match &args.report {
        Some(p) => {
            let mut w = open_output(Some(p))?;
            pipeline::write_summary(&mut w, &summaries)?;
            w.flush()?;
        }
        None => pipeline::write_summary(&mut io::stderr().lock(), &summaries)?,
    }
    Ok(())
}

fn cmd_aggregate(args: &AggregateArgs) -> Result<()> {
    let reader = ManifestReader::new(open_input(&args.input)?)?;
    let pairs = pipeline::from_annotated(reader)?;
    let verdicts = pipeline::aggregate_videos(&pairs, &args.scheme.schemes())?;
    let mut out = open_output(args.output.as_deref())?;
    pipeline::write_verdicts(&mut out, &verdicts)?;
    out.flush()?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let verdicts = pipeline::read_verdicts(open_input(&args.verdicts)?)?;
    let (_, rows) = manifest::read_manifest(open_input(&args.labels)?)?;
    let records = rows.collect::<facegraph::Result<Vec<_>>>()?;
    let labels = pipeline::labels_of(&records)?;
    let selected = pipeline::select_scheme(&verdicts, args.scheme)?;
    let report = evaluate(&pipeline::join_labels(&selected, &labels)?)?;
    let mut out = open_output(args.output.as_deref())?;
    pipeline::write_metrics(&mut out, &report)?;
    out.flush()?;
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let thetas = args
        .thetas
        .iter()
        .map(|&t| SimilarityThreshold::new(t))
        .collect::<facegraph::Result<Vec<_>>>()?;
    let (_, groups) = read_groups(&args.input)?;
    let cells = pipeline::sweep(&groups, &thetas, &args.size_fracs, args.scheme)?;
    let mut out = open_output(args.output.as_deref())?;
    match args.format {
        SweepFormat::Csv => pipeline::write_sweep_csv(&mut out, &cells)?,
        SweepFormat::Table => pipeline::write_sweep_table(&mut out, &cells)?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    anyhow::ensure!(
        args.fps_source > 0.0 && args.rate > 0.0,
        "--fps-source and --rate must be positive"
    );
    let (n_frames, frame_indices) = match args.total_frames {
        Some(total) => {
            let plan = plan_frames(total, args.fps_source, args.rate);
            (plan.len(), Some(plan.frame_indices))
        }
        None => (args.frames, None),
    };
    let suite = SuiteSpec {
        videos: args.videos,
        n_frames,
        identities: args.identities,
        presence: args.presence,
        fp_spec: FalsePositiveSpec {
            count: args.fp_count,
            mode: if args.persistent_fp {
                FalsePositiveMode::Persistent
            } else {
                FalsePositiveMode::Scattered
            },
            occurrences: args.fp_occurrences,
            anchor_similarity: args.fp_anchor,
            ..FalsePositiveSpec::none()
        },
        noise_sigma: args.sigma,
        embedding_dim: args.dim,
        guaranteed_margin: !args.no_margin,
        fake_ratio: args.fake_ratio,
        frame_indices,
        bbox_factor: args.bbox_factor,
        seed: args.seed,
        ..SuiteSpec::default()
    };
    let scenario = suite.generate()?;
    let mut out = open_output(args.output.as_deref())?;
    manifest::write_manifest(ManifestHeader::new(args.dim), &scenario.records, &mut out)?;
    out.flush()?;
    if let Some(p) = &args.truth {
        let mut w = open_output(Some(p))?;
        synth::write_truth(&mut w, &scenario.truth)?;
        w.flush()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<facegraph::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("facegraph: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Clean(a) => cmd_clean(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("facegraph: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
