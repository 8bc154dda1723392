mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser)]
#[command(name = "skullbase", version)]
#[command(about = "Keros, Gera and TMS skull-base risk scoring from landmark heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with a manifest
    Synth(SynthArgs),
    /// Score ground-truth annotations into a report
    Score(ScoreArgs),
    /// Run inference over every sample of a manifest
    Run(RunArgs),
    /// Compare predicted reports against the manifest's annotations
    Eval(EvalArgs),
    /// Patient-grouped split into a test group and five folds
    Split(SplitArgs),
    /// Draw landmarks and measurements onto a slice
    Overlay(OverlayArgs),
    /// Heatmap container utilities
    #[command(subcommand)]
    Hmap(HmapCommand),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of slices
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Master seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Keros class probabilities I,II,III
    #[arg(long, value_name = "A,B,C")]
    mix_keros: Option<String>,
    /// Gera class probabilities I,II,III
    #[arg(long, value_name = "A,B,C")]
    mix_gera: Option<String>,
    /// TMS class probabilities I,II,III
    #[arg(long, value_name = "A,B,C")]
    mix_tms: Option<String>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Annotation file
    #[arg(long)]
    annotations: PathBuf,
    /// Report path (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    G2l,
}

#[derive(Args)]
struct RunArgs {
    /// Inference mode
    #[arg(long, value_enum, default_value = "g2l")]
    mode: ModeArg,
    /// Heatmap producer for every stage: oracle, noisy:STD or files:DIR
    #[arg(long, default_value = "oracle", value_parser = commands::parse_predictor)]
    predictor: commands::PredictorArg,
    /// Producer for the global (or direct) stage, overriding --predictor
    #[arg(long, value_parser = commands::parse_predictor)]
    global_predictor: Option<commands::PredictorArg>,
    /// Producer for both local stages, overriding --predictor
    #[arg(long, value_parser = commands::parse_predictor)]
    local_predictor: Option<commands::PredictorArg>,
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for per-sample reports and index.json
    #[arg(long)]
    out: PathBuf,
    /// Seed of the noisy oracle
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep existing reports made with the same mode and predictor
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of `<sample_id>.report.json` files
    #[arg(long)]
    pred: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Metrics output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Shuffle seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fold plan output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OverlayArgs {
    /// Annotation file or slice report
    #[arg(long)]
    annotations: PathBuf,
    /// Slice image (8- or 16-bit grayscale PNG or PGM)
    #[arg(long)]
    image: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum HmapCommand {
    /// Render named points into a heatmap stack
    Encode {
        /// JSON object of name -> [x, y], or an annotation file
        #[arg(long)]
        points: PathBuf,
        /// Frame width
        #[arg(long, default_value_t = 96)]
        width: usize,
        /// Frame height
        #[arg(long, default_value_t = 96)]
        height: usize,
        /// Gaussian standard deviation in pixels
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        /// Channel order (default: every point, sorted by name)
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        /// Output HMAP file
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode every channel to a sub-pixel point
    Decode {
        /// HMAP file
        #[arg(long)]
        input: PathBuf,
        /// Center-of-mass window
        #[arg(long, default_value_t = 13)]
        window: usize,
        /// Output JSON (standard output when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the header and per-channel peaks
    Inspect {
        /// HMAP file
        #[arg(long)]
        input: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(
            a.n,
            a.seed,
            &a.out,
            [a.mix_keros, a.mix_gera, a.mix_tms],
        ),
        Command::Score(a) => commands::score(&a.annotations, a.out.as_deref()),
        Command::Run(a) => commands::run(commands::RunOptions {
            mode: match a.mode {
                ModeArg::Direct => skullbase::Mode::Direct,
                ModeArg::G2l => skullbase::Mode::G2l,
            },
            global: a.global_predictor.unwrap_or_else(|| a.predictor.clone()),
            local: a.local_predictor.unwrap_or(a.predictor),
            manifest: a.manifest,
            out: a.out,
            seed: a.seed,
            jobs: a.jobs,
            resume: a.resume,
        }),
        Command::Eval(a) => commands::eval(&a.pred, &a.manifest, &a.out),
        Command::Split(a) => commands::split(&a.manifest, a.seed, &a.out),
        Command::Overlay(a) => commands::overlay(&a.annotations, &a.image, &a.out),
        Command::Hmap(HmapCommand::Encode {
            points,
            width,
            height,
            sigma,
            channels,
            out,
        }) => commands::hmap_encode(&points, height, width, sigma, &channels, &out),
        Command::Hmap(HmapCommand::Decode { input, window, out }) => {
            commands::hmap_decode(&input, window, out.as_deref())
        }
        Command::Hmap(HmapCommand::Inspect { input }) => commands::hmap_inspect(&input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
