use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use avd_core::audio_io::{self, ChunkOptions, TARGET_SAMPLE_RATE_HZ};
use avd_core::classifiers::{ClassifierSpec, RfConfig, SvmConfig};
use avd_core::evaluation::{self, CvOptions, ReportFormat};
use avd_core::features::{
    self, open_provider, EmbeddingProvider, Endpoint, FeatureVector, MfccConfig, ProviderDescriptor, ProviderOptions,
};
use avd_core::model_store;
use avd_core::PipelineArtifact;
use avd_service::{AggregationRule, LoadedModel, ServiceConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::{self, LabelRow, ManifestRow};
use crate::{DataArgs, ProviderArgs};

fn provider_options(endpoint: Option<&str>) -> Result<ProviderOptions, CliError> {
    Ok(ProviderOptions {
        mfcc: None,
        endpoint: endpoint.map(Endpoint::parse).transpose()?,
    })
}

fn open(args: &ProviderArgs) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    let descriptor = ProviderDescriptor::parse(&args.provider, args.dim)?;
    Ok(open_provider(&descriptor, &provider_options(args.endpoint.as_deref())?)?)
}

pub struct ExtractArgs {
    pub manifest: PathBuf,
    pub provider: ProviderArgs,
    pub out: PathBuf,
    pub labels_out: Option<PathBuf>,
    pub chunk_seconds: f64,
    pub min_keep_fraction: f64,
    pub strict: bool,
}

struct FileOutcome {
    vectors: Vec<FeatureVector>,
    dropped_tail: bool,
}

fn extract_file(
    row: &ManifestRow,
    provider: &dyn EmbeddingProvider,
    opts: &ChunkOptions,
) -> Result<FileOutcome, CliError> {
    let bytes = fs::read(&row.resolved).map_err(|e| CliError::io(format!("{}: {e}", row.resolved.display())))?;
    let decoded = audio_io::decode_wav(&bytes).map_err(|e| CliError::io(format!("{}: {e}", row.path)))?;
    let buf = audio_io::resample(&decoded, TARGET_SAMPLE_RATE_HZ)?;
    let chunks = audio_io::chunk_audio(&buf, &row.path, opts)?;
    let chunk_len = opts.chunk_len(TARGET_SAMPLE_RATE_HZ);
    let dropped_tail = buf.len() % chunk_len != 0 && chunks.len() == buf.len() / chunk_len;
    let vectors = chunks
        .iter()
        .map(|c| provider.embed(c))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::from(e).with_context(&row.path))?;
    Ok(FileOutcome { vectors, dropped_tail })
}

impl CliError {
    fn with_context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

pub fn extract(args: ExtractArgs) -> Result<(), CliError> {
    let rows = manifest::read_manifest(&args.manifest)?;
    let opts = ChunkOptions {
        chunk_seconds: args.chunk_seconds,
        min_keep_fraction: args.min_keep_fraction,
    };
    opts.validate()?;
    let provider = open(&args.provider)?;
    let provider = provider.as_ref();
    let work = |row: &ManifestRow| extract_file(row, provider, &opts);
    let outcomes: Vec<Result<FileOutcome, CliError>> = if provider.descriptor().single_consumer {
        rows.iter().map(work).collect()
    } else {
        rows.par_iter().map(work).collect()
    };

    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    let mut failures = Vec::new();
    for (row, outcome) in rows.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                dropped += usize::from(o.dropped_tail);
                for v in o.vectors {
                    labels.push(LabelRow {
                        chunk_id: v.chunk_id.clone(),
                        label: row.label,
                        group: row.group.clone(),
                    });
                    records.push(v);
                }
            }
            Err(e) if args.strict => return Err(e),
            Err(e) => failures.push(e),
        }
    }
    for f in &failures {
        eprintln!("skipped: {f}");
    }
    if records.is_empty() {
        return Err(if failures.is_empty() {
            CliError::empty("no chunks retained; nothing to write")
        } else {
            CliError::io(format!("all {} files failed", failures.len()))
        });
    }
    features::write_embedding_file(&records, &args.out)?;
    let labels_path = args.labels_out.unwrap_or_else(|| args.out.with_extension("labels.csv"));
    manifest::write_labels(&labels, &labels_path)?;
    println!(
        "provider {} (dim {}): retained {} chunks from {} files, dropped {} partial tails, skipped {} files",
        provider.descriptor().provider_id,
        provider.descriptor().dim,
        records.len(),
        rows.len() - failures.len(),
        dropped,
        failures.len()
    );
    println!("embeddings: {}", args.out.display());
    println!("labels: {}", labels_path.display());
    if !failures.is_empty() {
        return Err(CliError::io(format!("{} of {} files could not be processed", failures.len(), rows.len())));
    }
    Ok(())
}

fn classifier_spec(args: &DataArgs) -> Result<ClassifierSpec, CliError> {
    match args.classifier.as_str() {
        "rf" => {
            if args.svm_c.is_some() {
                return Err(CliError::data("--svm-c applies to svm only"));
            }
            let mut cfg = RfConfig::default();
            if let Some(t) = args.trees {
                cfg.n_trees = t;
            }
            Ok(ClassifierSpec::Rf(cfg))
        }
        "svm" => {
            if args.trees.is_some() {
                return Err(CliError::data("--trees applies to rf only"));
            }
            let mut cfg = SvmConfig::default();
            if let Some(c) = args.svm_c {
                cfg.c = c;
            }
            Ok(ClassifierSpec::Svm(cfg))
        }
        other => Err(CliError::data(format!("unknown classifier {other:?} (expected rf or svm)"))),
    }
}

type Loaded = (
    BTreeMap<String, FeatureVector>,
    BTreeMap<String, evaluation::ChunkLabel>,
    features::EmbeddingSet,
);

fn load_data(args: &DataArgs) -> Result<Loaded, CliError> {
    let set = features::read_embedding_set(&args.embeddings)?;
    let labels = manifest::read_labels(&args.labels)?;
    let map = set.clone().into_map()?;
    if map.is_empty() {
        return Err(CliError::empty(format!("{} holds no records", args.embeddings.display())));
    }
    Ok((map, labels, set))
}

#[derive(Serialize)]
struct AssignmentDump<'a> {
    k: usize,
    seed: u64,
    stratified: bool,
    chunks: Vec<AssignmentRow<'a>>,
}

#[derive(Serialize)]
struct AssignmentRow<'a> {
    chunk_id: &'a str,
    group: Option<&'a str>,
    fold: usize,
}

pub fn crossval(
    args: &DataArgs,
    k: usize,
    seed: u64,
    group_split: bool,
    stratified: bool,
    out: Option<PathBuf>,
    assignment_out: Option<PathBuf>,
) -> Result<(), CliError> {
    let spec = classifier_spec(args)?;
    let (features, labels, _) = load_data(args)?;
    let opts = CvOptions {
        k,
        seed,
        stratified,
        group_split,
    };
    let report = evaluation::cross_validate(&features, &labels, &spec, &opts)?;
    io::stdout().write_all(&evaluation::render_report(&report, ReportFormat::Text))?;

    if let Some(path) = out {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        };
        fs::write(&path, evaluation::render_report(&report, format))
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = assignment_out {
        let a = &report.assignment;
        let dump = AssignmentDump {
            k: a.k,
            seed: a.seed,
            stratified: a.stratified,
            chunks: report
                .chunk_ids
                .iter()
                .enumerate()
                .map(|(i, id)| AssignmentRow {
                    chunk_id: id,
                    group: a.group_ids.as_ref().map(|g| g[i].as_str()),
                    fold: a.fold_of[i],
                })
                .collect(),
        };
        let file = fs::File::create(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &dump).map_err(|e| CliError::io(e.to_string()))?;
    }
    Ok(())
}

pub fn train(args: &DataArgs, seed: u64, out: &Path, cv_folds: Option<usize>) -> Result<(), CliError> {
    let spec = classifier_spec(args)?;
    let (features, labels, set) = load_data(args)?;
    let descriptor = ProviderDescriptor::parse(&set.provider_id, Some(set.dim))?;
    let mfcc_config = (descriptor.provider_id == "mfcc")
        .then(|| MfccConfig::for_dim(set.dim))
        .flatten();
    let (_, data, _, _) = evaluation::align(&features, &labels)?;
    let model = spec.train(&data, seed)?;
    let mut artifact = PipelineArtifact::new(descriptor, mfcc_config, model, seed);
    if let Some(k) = cv_folds {
        let opts = CvOptions {
            k,
            seed,
            ..Default::default()
        };
        artifact.metrics_snapshot = Some(evaluation::cross_validate(&features, &labels, &spec, &opts)?.summary());
    }
    let id = model_store::save_pipeline(&artifact, out)?;
    println!("# seed {seed}");
    println!(
        "trained {} on {} chunks from {} (dim {})",
        spec.id(),
        data.len(),
        set.provider_id,
        set.dim
    );
    println!("artifact: {}", out.display());
    println!("model_id: {id}");
    Ok(())
}

pub fn predict(audio: &Path, artifact: &Path, rule: &str, endpoint: Option<&str>) -> Result<(), CliError> {
    let rule: AggregationRule = rule.parse().map_err(CliError::data)?;
    let model = LoadedModel::load(artifact, &provider_options(endpoint)?)
        .map_err(|e| CliError::from(e).with_context(&artifact.display().to_string()))?;
    let bytes = fs::read(audio).map_err(|e| CliError::io(format!("{}: {e}", audio.display())))?;
    let response = model.predict_wav(&bytes, rule, audio_io::DEFAULT_MAX_WAV_BYTES)?;
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &response).map_err(|e| CliError::io(e.to_string()))?;
    writeln!(stdout)?;
    Ok(())
}

pub fn serve(
    addr: &str,
    artifact: PathBuf,
    rule: &str,
    max_upload_bytes: usize,
    cors_origins: &str,
    endpoint: Option<&str>,
) -> Result<(), CliError> {
    let shown = artifact.display().to_string();
    let mut cfg = ServiceConfig::new(artifact);
    cfg.addr = addr
        .parse()
        .map_err(|e| CliError::data(format!("bad listen address {addr:?}: {e}")))?;
    cfg.rule = rule.parse().map_err(CliError::data)?;
    cfg.max_upload_bytes = max_upload_bytes;
    cfg.cors_origins = cors_origins
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    cfg.provider = provider_options(endpoint)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(avd_service::serve(cfg, |bound| {
        println!("listening on http://{bound}");
        let _ = io::stdout().flush();
    }))
    .map_err(|e| match e {
        avd_service::ServeError::Load(l) => CliError::from(l).with_context(&shown),
        other => CliError::io(other.to_string()),
    })
}

pub fn provide(args: &ProviderArgs, http: Option<&str>) -> Result<(), CliError> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::from(open(args)?);
    match http {
        None => {
            let stdin = io::stdin();
            features::serve_stdio(provider.as_ref(), stdin.lock(), io::stdout().lock())?;
            Ok(())
        }
        Some(addr) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .map_err(|e| CliError::io(format!("cannot bind {addr}: {e}")))?;
                println!("listening on http://{}", listener.local_addr()?);
                let _ = io::stdout().flush();
                avd_service::serve_embed(listener, provider)
                    .await
                    .map_err(|e| CliError::io(e.to_string()))
            })
        }
    }
}
