use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pkt_pcqa::cloud::{load_ply, write_ply, PlyEncoding};
use pkt_pcqa::distortion::{generate_references, synthesize_corpus, CorpusSpec, DistortionKind};
use pkt_pcqa::eval::{evaluate, ModelPredictor};
use pkt_pcqa::kce::{KceConfig, DEFAULT_BETA, DEFAULT_K};
use pkt_pcqa::manifest::{load_manifest, Split};
use pkt_pcqa::nn::{Checkpoint, Task};
use pkt_pcqa::settings::{Settings, Source};
use pkt_pcqa::train::{
    initial_prediction_model, load_samples, log_to_csv, prepare_samples, train_classification, train_prediction,
    KceCache,
};

const MODEL_FILE: &str = "model.ckpt";
const LOG_FILE: &str = "train_log.csv";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "pkt-pcqa", version, about = "No-reference point cloud quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Cls,
    Reg,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Test,
    Train,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Extract key clusters from one PLY file.
    Keyclusters {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write procedural reference clouds.
    MakeRefs {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 20_000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write ASCII PLY instead of binary.
        #[arg(long)]
        ascii: bool,
    },
    /// Distort every reference in a directory into a labeled corpus.
    Synth {
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated distortion kinds.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        levels: Vec<u8>,
        /// Distortion seeds; defaults to `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Drives the train/test split and, unless `--seeds` is given, the distortions.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ascii: bool,
    },
    /// Train one stage and write a checkpoint, a log and the effective config.
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long)]
        manifest: PathBuf,
        /// Classification checkpoint whose trunk initializes regression.
        #[arg(long)]
        init: Option<PathBuf>,
        /// File of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one setting, e.g. `--set epochs=20`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the predicted MOS and quality level of one cloud.
    Score {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
    },
    /// Score a manifest split and write report, summary and scatter files.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
    },
}

fn encoding(ascii: bool) -> PlyEncoding {
    if ascii {
        PlyEncoding::Ascii
    } else {
        PlyEncoding::BinaryLittleEndian
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn keyclusters(input: &Path, beta: usize, k: usize, out: &Path) -> Result<()> {
    let cfg = KceConfig { beta, k, ..KceConfig::default() };
    let set = KceCache::from_env()
        .key_clusters(input, &cfg)
        .with_context(|| format!("extracting key clusters from {}", input.display()))?;
    set.save(out)?;
    println!("wrote {} beta={} k={}", out.display(), set.beta, set.k);
    Ok(())
}

fn make_refs(out: &Path, count: usize, points: usize, seed: u64, ascii: bool) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for pc in generate_references(count, points, seed)? {
        write_ply(out.join(format!("{}.ply", pc.name)), &pc, encoding(ascii))?;
    }
    println!("wrote {count} references to {}", out.display());
    Ok(())
}

fn synth(refs_dir: &Path, out: &Path, spec: CorpusSpec) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(refs_dir)
        .with_context(|| format!("listing {}", refs_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ply files in {}", refs_dir.display());
    }
    let refs = paths.iter().map(load_ply).collect::<pkt_pcqa::Result<Vec<_>>>()?;
    let manifest = synthesize_corpus(&refs, &spec, out)?;
    println!(
        "wrote {} entries ({} train, {} test) to {}",
        manifest.entries.len(),
        manifest.split(Split::Train).count(),
        manifest.split(Split::Test).count(),
        out.display()
    );
    Ok(())
}

struct TrainArgs {
    stage: Stage,
    manifest: PathBuf,
    init: Option<PathBuf>,
    config: Option<PathBuf>,
    set: Vec<String>,
    seed: Option<u64>,
    out: PathBuf,
}

fn train(a: TrainArgs) -> Result<()> {
    let mut settings = Settings::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        settings.apply_file(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for s in &a.set {
        settings.apply_flag(s)?;
    }
    if let Some(seed) = a.seed {
        settings.set("seed", &seed.to_string(), Source::Flag)?;
    }
    let net = settings.network()?;
    let tc = settings.train()?;
    let task = match a.stage {
        Stage::Cls => Task::Classification,
        Stage::Reg => Task::Prediction,
    };
    let init = match (&a.init, a.stage) {
        (Some(_), Stage::Cls) => bail!("--init only applies to --stage reg"),
        (Some(p), Stage::Reg) => Some(load_checkpoint(p)?),
        (None, _) => None,
    };
    if let Some(ck) = &init {
        // fail before the expensive extraction if the trunks differ
        initial_prediction_model(net.clone(), Some(ck), tc.seed)?;
    }
    let manifest = load_manifest(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let kce = KceConfig {
        beta: net.beta,
        k: net.k,
        ..KceConfig::default()
    };
    let samples = load_samples(&manifest, &kce, &KceCache::from_env())?;
    let tr = prepare_samples(&samples, Split::Train, &net, task)?;
    let va = prepare_samples(&samples, Split::Test, &net, task)?;
    let outcome = match task {
        Task::Classification => train_classification(&tr, &va, net.clone(), &tc, manifest.mos_scale)?,
        Task::Prediction => train_prediction(&tr, &va, init.as_ref(), net.clone(), &tc, manifest.mos_scale)?,
    };

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    outcome.checkpoint.save(a.out.join(MODEL_FILE))?;
    std::fs::write(a.out.join(LOG_FILE), log_to_csv(&outcome.log))?;
    let mut cfg_text = String::new();
    cfg_text.push_str(&format!("stage = {}  # flag\n", task));
    cfg_text.push_str(&format!("manifest = {}  # flag\n", a.manifest.display()));
    match &a.init {
        Some(p) => cfg_text.push_str(&format!("init = {}  # flag\n", p.display())),
        None => cfg_text.push_str("init = random  # default\n"),
    }
    cfg_text.push_str(&settings.render());
    cfg_text.push_str(&format!("# network: {}\n", net.describe()));
    std::fs::write(a.out.join(CONFIG_FILE), cfg_text)?;

    let best = outcome
        .log
        .iter()
        .rev()
        .find(|r| r.epoch == outcome.best_epoch)
        .expect("selected epoch is logged");
    let metric = match task {
        Task::Classification => "accuracy",
        Task::Prediction => "plcc",
    };
    println!(
        "stage={} best_epoch={} split={} {metric}={} srocc={} degenerate_batches={}",
        task, outcome.best_epoch, best.split, best.acc_or_plcc, best.srocc, outcome.degenerate_batches
    );
    Ok(())
}

fn score(model: &Path, input: &Path) -> Result<()> {
    let predictor = ModelPredictor::new(load_checkpoint(model)?, KceCache::from_env());
    let (mos, level) = predictor
        .score(input)
        .with_context(|| format!("scoring {}", input.display()))?;
    println!("mos={mos} level={level}");
    Ok(())
}

fn eval(model: &Path, manifest: &Path, out: &Path, split: EvalSplit) -> Result<()> {
    let predictor = ModelPredictor::new(load_checkpoint(model)?, KceCache::from_env());
    let manifest = load_manifest(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let split = match split {
        EvalSplit::Test => Some(Split::Test),
        EvalSplit::Train => Some(Split::Train),
        EvalSplit::All => None,
    };
    let report = evaluate(&predictor, &manifest, split)?;
    report.write(out)?;
    println!(
        "items={} plcc={} srocc={} accuracy={}",
        report.rows.len(),
        report.plcc,
        report.srocc,
        report.accuracy
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Keyclusters { input, beta, k, out } => keyclusters(&input, beta, k, &out),
        Command::MakeRefs {
            out,
            count,
            points,
            seed,
            ascii,
        } => make_refs(&out, count, points, seed, ascii),
        Command::Synth {
            refs,
            out,
            kinds,
            levels,
            seeds,
            seed,
            ascii,
        } => {
            let kinds = match kinds {
                Some(names) => names
                    .iter()
                    .map(|n| n.trim().parse())
                    .collect::<pkt_pcqa::Result<Vec<DistortionKind>>>()?,
                None => DistortionKind::ALL.to_vec(),
            };
            let spec = CorpusSpec {
                kinds,
                levels,
                seeds: seeds.unwrap_or_else(|| vec![seed]),
                split_seed: seed,
                encoding: encoding(ascii),
            };
            synth(&refs, &out, spec)
        }
        Command::Train {
            stage,
            manifest,
            init,
            config,
            set,
            seed,
            out,
        } => train(TrainArgs {
            stage,
            manifest,
            init,
            config,
            set,
            seed,
            out,
        }),
        Command::Score { model, input } => score(&model, &input),
        Command::Eval {
            model,
            manifest,
            out,
            split,
        } => eval(&model, &manifest, &out, split),
    }
}
