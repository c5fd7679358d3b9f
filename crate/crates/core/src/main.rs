use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use srdvc::convert::{synthesize_audio, AspectSet, ConversionRequest, Converter, UtteranceInput};
use srdvc::eval::{embed_and_plot, evaluate_pair, write_report, EmbedInput, TsneConfig};
use srdvc::features::cache::FeatureRecord;
use srdvc::features::corpus::{ingest_corpus, CorpusIndex, Split, SplitSpec, INDEX_FILE};
use srdvc::features::toy::write_toy_corpus;
use srdvc::features::wav::{read_wav, write_wav};
use srdvc::features::extract_features;
use srdvc::train::{train, RunConfig, TrainData};
use srdvc::{Error, Result};

#[derive(Parser)]
#[command(name = "srdvc", version, about = "Disentangled one-shot voice conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feature extraction and caching.
    Features {
        #[command(subcommand)]
        action: FeaturesCmd,
    },
    /// Write a synthetic multi-speaker corpus of WAV files.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 10)]
        utterances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a run configuration with every key set to its default.
    Config {
        /// Compact widths for CPU-scale runs.
        #[arg(long)]
        desk: bool,
    },
    /// Train on a feature cache.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Convert one utterance toward a target on the selected aspects.
    Convert {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Comma-separated subset of timbre, pitch, rhythm (or none / all).
        #[arg(long, default_value = "timbre")]
        aspects: String,
        /// `.wav` for audio, anything else for a feature record.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        iterations: usize,
    },
    /// Score conversion pairs listed in a CSV manifest.
    Evaluate {
        /// CSV with columns pair_id, source, target, aspects and optional reference.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Project timbre codes of cached utterances to 2-D.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        png: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Scan root/<speaker>/*.wav, split speakers and cache features.
    Extract {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, validation and test speaker counts.
        #[arg(long, default_value = "100,3,6")]
        split: SplitSpec,
    },
}

#[derive(Deserialize)]
struct PairRow {
    pair_id: String,
    source: PathBuf,
    #[serde(default)]
    target: Option<PathBuf>,
    #[serde(default)]
    aspects: String,
    #[serde(default)]
    reference: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Features {
            action: FeaturesCmd::Extract { root, out, seed, split },
        } => {
            let index = ingest_corpus(&root, &out, split, seed)?;
            println!(
                "cached {} utterances, {} training speakers, index at {}",
                index.entries.len(),
                index.num_speakers,
                out.join(INDEX_FILE).display()
            );
        }
        Command::Toy {
            out,
            speakers,
            utterances,
            seed,
        } => {
            let files = write_toy_corpus(&out, speakers, utterances, seed)?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
        Command::Config { desk } => {
            let cfg = if desk { RunConfig::desk(5000) } else { RunConfig::default() };
            print!("{}", cfg.to_toml()?);
        }
        Command::Train {
            config,
            cache,
            out,
            resume,
        } => {
            let run = RunConfig::load(&config)?;
            let data = TrainData::from_cache(&cache)?;
            let last = train(&run, &data, &out, resume.as_deref())?;
            println!("{}", last.display());
        }
        Command::Convert {
            ckpt,
            source,
            target,
            aspects,
            out,
            iterations,
        } => {
            let converter = Converter::from_checkpoint(&ckpt)?;
            let aspects: AspectSet = aspects.parse()?;
            let src = extract_features(&read_wav(&source)?)?;
            let tgt = target.map(|t| read_wav(&t).and_then(|w| extract_features(&w))).transpose()?;
            let req = ConversionRequest {
                source: UtteranceInput::from_features(&src),
                target: tgt.as_ref().map(UtteranceInput::from_features),
                aspects,
            };
            let conv = converter.convert(&req)?;
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                write_wav(&out, &synthesize_audio(&conv.mel, iterations))?;
            } else {
                FeatureRecord::from_mel(&conv.mel).write(&out)?;
            }
            println!("{} frames -> {}", conv.mel.num_frames(), out.display());
        }
        Command::Evaluate { pairs, ckpt, report } => {
            let converter = Converter::from_checkpoint(&ckpt)?;
            let base = pairs.parent().unwrap_or(Path::new(".")).to_path_buf();
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&pairs)?;
            let mut rows = Vec::new();
            for row in reader.deserialize() {
                let row: PairRow = row?;
                let load = |p: &Option<PathBuf>| p.as_ref().filter(|p| !p.as_os_str().is_empty()).map(|p| read_wav(&resolve(&base, p))).transpose();
                let source = read_wav(&resolve(&base, &row.source))?;
                let target = load(&row.target)?;
                let reference = load(&row.reference)?;
                let aspects: AspectSet = row.aspects.parse()?;
                let r = evaluate_pair(&converter, &row.pair_id, &source, target.as_ref(), reference.as_ref(), aspects)?;
                log::info!("{} mcd_db={:.3} logf0_pcc={:?}", r.pair_id, r.mcd_db, r.logf0_pcc);
                rows.push(r);
            }
            write_report(&report, &rows)?;
            println!("{} pairs -> {}", rows.len(), report.display());
        }
        Command::Embed {
            ckpt,
            cache,
            split,
            png,
            csv,
            seed,
        } => {
            let (model, _) = srdvc::train::TrainState::load_model(&ckpt)?;
            let split: Split = serde_json::from_value(serde_json::Value::String(split.to_lowercase()))
                .map_err(|_| Error::InvalidArgument("split must be train, val or test".into()))?;
            let index = CorpusIndex::load(&cache.join(INDEX_FILE))?;
            let inputs: Vec<EmbedInput> = index
                .load_features(&cache, split)?
                .into_iter()
                .map(|(e, f)| EmbedInput {
                    id: e.utterance_id,
                    speaker: e.speaker,
                    mel: f.mel,
                })
                .collect();
            let cfg = TsneConfig { seed, ..TsneConfig::default() };
            let emb = embed_and_plot(&model, &inputs, &png, &csv, &cfg)?;
            println!("{} points, silhouette {:.3}", emb.ids.len(), emb.silhouette);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
