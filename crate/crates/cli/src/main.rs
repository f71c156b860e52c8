//! `avd`: extract features, cross-validate, train, predict and serve.

mod commands;
mod error;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "avd", version, about = "Audio violence detection toolkit")]
struct Cli {
    /// Seed for every randomized step; printed in report headers.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ProviderArgs {
    /// mfcc, mock:<seed>, xvector, ecapa, wavlm, unispeech_sat or precomputed:<file>.
    #[arg(long, default_value = "mfcc")]
    pub provider: String,
    /// Output dimension (required for ecapa and precomputed sources of unknown shape).
    #[arg(long)]
    pub dim: Option<usize>,
    /// External model endpoint: an http(s) base URL or a command line.
    #[arg(long, env = "AVD_PROVIDER_ENDPOINT")]
    pub endpoint: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Resample, chunk and embed every file of a manifest.
    Extract {
        /// CSV with columns path,label[,group].
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        provider: ProviderArgs,
        /// Embedding file to write.
        #[arg(long)]
        out: PathBuf,
        /// Labels sidecar; defaults to the output path with extension `labels.csv`.
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[arg(long, default_value_t = avd_core::audio_io::DEFAULT_CHUNK_SECONDS)]
        chunk_seconds: f64,
        /// A trailing partial chunk is padded and kept when at least this fraction long.
        #[arg(long, default_value_t = avd_core::audio_io::DEFAULT_MIN_KEEP_FRACTION)]
        min_keep_fraction: f64,
        /// Fail on the first unreadable or undecodable file.
        #[arg(long)]
        strict: bool,
    },
    /// k-fold cross-validation of a classifier over an embedding file.
    Crossval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(short, long, default_value_t = avd_core::evaluation::DEFAULT_FOLDS)]
        k: usize,
        /// Keep chunks sharing a group (by default the source file) in one fold.
        #[arg(long, conflicts_with = "unstratified")]
        group_split: bool,
        /// Plain shuffled folds instead of per-class balanced ones.
        #[arg(long)]
        unstratified: bool,
        /// Accepted for explicitness; stratified folds are the default.
        #[arg(long, conflicts_with_all = ["unstratified", "group_split"])]
        stratified: bool,
        /// Detailed report; JSON when the extension is .json, CSV otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Writes the fold of every chunk as JSON.
        #[arg(long)]
        assignment_out: Option<PathBuf>,
    },
    /// Train on all data and save a pipeline artifact.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Artifact path (.avdm).
        #[arg(long)]
        out: PathBuf,
        /// Also run k-fold cross-validation and store its summary in the artifact.
        #[arg(long)]
        cv_folds: Option<usize>,
    },
    /// Classify one audio file; prints the same JSON as POST /predict.
    Predict {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long, env = "ARTIFACT_PATH")]
        artifact: PathBuf,
        #[arg(long, env = "RULE", default_value = "any")]
        rule: String,
        #[arg(long, env = "AVD_PROVIDER_ENDPOINT")]
        endpoint: Option<String>,
    },
    /// Run the HTTP prediction service.
    Serve {
        #[arg(long, env = "ADDR", default_value = avd_service::http::DEFAULT_ADDR)]
        addr: String,
        #[arg(long, env = "ARTIFACT_PATH")]
        artifact: PathBuf,
        #[arg(long, env = "RULE", default_value = "any")]
        rule: String,
        #[arg(long, env = "MAX_UPLOAD_BYTES", default_value_t = avd_service::DEFAULT_MAX_UPLOAD_BYTES)]
        max_upload_bytes: usize,
        /// Comma-separated allowed origins, or `*`.
        #[arg(long, env = "CORS_ORIGINS", default_value = avd_service::http::DEFAULT_CORS_ORIGIN)]
        cors_origins: String,
        #[arg(long, env = "AVD_PROVIDER_ENDPOINT")]
        endpoint: Option<String>,
    },
    /// Serve a provider over the external-provider protocol.
    #[command(hide = true)]
    Provide {
        #[command(flatten)]
        provider: ProviderArgs,
        /// Listen for POST /embed here instead of speaking line JSON on stdio.
        #[arg(long)]
        http: Option<String>,
    },
}

#[derive(Args)]
pub struct DataArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Labels CSV with columns chunk_id,label[,group].
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "rf")]
    pub classifier: String,
    /// Number of trees for rf.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Soft-margin penalty for svm.
    #[arg(long)]
    pub svm_c: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let seed = cli.seed;
    let result = match cli.command {
        Command::Extract {
            manifest,
            provider,
            out,
            labels_out,
            chunk_seconds,
            min_keep_fraction,
            strict,
        } => commands::extract(commands::ExtractArgs {
            manifest,
            provider,
            out,
            labels_out,
            chunk_seconds,
            min_keep_fraction,
            strict,
        }),
        Command::Crossval {
            data,
            k,
            group_split,
            unstratified,
            stratified: _,
            out,
            assignment_out,
        } => commands::crossval(&data, k, seed, group_split, !unstratified, out, assignment_out),
        Command::Train { data, out, cv_folds } => commands::train(&data, seed, &out, cv_folds),
        Command::Predict {
            audio,
            artifact,
            rule,
            endpoint,
        } => commands::predict(&audio, &artifact, &rule, endpoint.as_deref()),
        Command::Serve {
            addr,
            artifact,
            rule,
            max_upload_bytes,
            cors_origins,
            endpoint,
        } => commands::serve(&addr, artifact, &rule, max_upload_bytes, &cors_origins, endpoint.as_deref()),
        Command::Provide { provider, http } => commands::provide(&provider, http.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
