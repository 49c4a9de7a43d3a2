use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use tcae::codec::{self, CodecHeader};
use tcae::corpus::{self, CorpusKind};
use tcae::inpaint::{inpaint, Region};
use tcae::pgm::{read_pgm, write_pgm};
use tcae::tensor::Rng;
use tcae::train::{train_with, TrainConfig};
use tcae::{from_bitplanes, to_bitplanes, ContextModel, ModelConfig, Schedule};

#[derive(Parser)]
#[command(name = "tcae", version, about = "Trimmed-convolution arithmetic encoder for gray images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of PGM images.
    GenCorpus(GenArgs),
    /// Train a bit-plane context model on a directory of PGM images.
    Train(TrainArgs),
    /// Compress a PGM image into a container file.
    Compress(CompressArgs),
    /// Restore the PGM image from a container file.
    Decompress(DecompressArgs),
    /// Fill a rectangle of an image by sampling from the model.
    Inpaint(InpaintArgs),
    /// Time both schedules and report model-pass counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// constant, iid-uniform or markov-texture
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Flip probability of the Markov texture.
    #[arg(long, default_value_t = 0.1)]
    flip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of PGM images.
    #[arg(long)]
    input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "raster")]
    schedule: Schedule,
    #[arg(long, default_value_t = 8)]
    groups: usize,
    #[arg(long, default_value_t = 4)]
    residual_blocks: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    eval_interval: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Train on random square crops of this side.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics log path; defaults to standard output.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Coding schedule; defaults to the one the model was trained with.
    #[arg(long)]
    schedule: Option<Schedule>,
    /// Tile side, 0 for untiled.
    #[arg(long, default_value_t = codec::DEFAULT_TILE)]
    tile: usize,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// x,y,w,h; defaults to the bottom-right ninth of the image.
    #[arg(long)]
    region: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    tile: usize,
}

fn positive(name: &str, v: usize) -> Result<()> {
    ensure!(v > 0, "--{name} must be positive");
    Ok(())
}

fn load_model(path: &Path) -> Result<ContextModel> {
    let bytes = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(ContextModel::from_bytes(&bytes)?)
}

fn bitplane_model(model: ContextModel, schedule: Option<Schedule>) -> Result<ContextModel> {
    let cfg = model.config();
    ensure!(
        cfg.depth == 8 && cfg.alphabet == 2,
        "model codes C={}, m={}; gray images need C=8, m=2",
        cfg.depth,
        cfg.alphabet
    );
    match schedule {
        Some(s) if s != cfg.schedule => Ok(model.with_schedule(s)?),
        _ => Ok(model),
    }
}

fn gen_corpus(a: GenArgs) -> Result<()> {
    positive("count", a.count)?;
    positive("size", a.size)?;
    let kind = CorpusKind::parse(&a.kind, a.flip)?;
    let images = corpus::generate(kind, a.count, a.size, a.seed)?;
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    for (n, img) in images.iter().enumerate() {
        write_pgm(a.output.join(format!("img_{n:04}.pgm")), img)?;
    }
    println!("wrote={} kind={} size={}", images.len(), a.kind, a.size);
    Ok(())
}

fn read_corpus(dir: &Path) -> Result<Vec<tcae::SymbolCuboid>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading corpus directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .pgm images in {}", dir.display());
    paths
        .iter()
        .map(|p| Ok(to_bitplanes(&read_pgm(p).with_context(|| format!("reading {}", p.display()))?)))
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    for (name, v) in [("groups", a.groups), ("steps", a.steps), ("batch", a.batch), ("eval-interval", a.eval_interval), ("patience", a.patience)] {
        positive(name, v)?;
    }
    if let Some(c) = a.crop {
        positive("crop", c)?;
    }
    let corpus = read_corpus(&a.input)?;
    let cfg = ModelConfig::new(2, 8, a.schedule).with_groups(a.groups).with_residual_blocks(a.residual_blocks);
    let model = ContextModel::init(cfg, a.seed)?;
    let tc = TrainConfig {
        batch_size: a.batch,
        max_steps: a.steps,
        eval_interval: a.eval_interval,
        patience: a.patience,
        crop: a.crop,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut sink: Box<dyn Write> = match &a.metrics {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut io_err = None;
    let out = train_with(model, &corpus, &tc, |r| {
        if io_err.is_none() {
            io_err = writeln!(sink, "{}", r.to_line()).err();
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing metrics");
    }
    fs::write(&a.model, out.model.to_bytes()).with_context(|| format!("writing {}", a.model.display()))?;
    Ok(())
}

fn compress(a: CompressArgs) -> Result<()> {
    let model = bitplane_model(load_model(&a.model)?, a.schedule)?;
    let img = read_pgm(&a.input)?;
    let x = to_bitplanes(&img);
    let schedule = model.config().schedule;
    let (bytes, stats) = codec::encode(&x, &model, schedule, a.tile)?;
    fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;
    let ratio = (8 * img.width * img.height) as f64 / stats.payload_bits as f64;
    println!("schedule={schedule} payload_bits={} file_bytes={} ratio={ratio:.6}", stats.payload_bits, bytes.len());
    Ok(())
}

fn decompress(a: DecompressArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let header = CodecHeader::parse(&bytes)?;
    let model = bitplane_model(load_model(&a.model)?, Some(header.schedule))?;
    let (x, _) = codec::decode(&bytes, &model)?;
    write_pgm(&a.output, &from_bitplanes(&x)?)?;
    Ok(())
}

fn inpaint_cmd(a: InpaintArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let img = read_pgm(&a.input)?;
    let region = match &a.region {
        Some(s) => Region::parse(s)?,
        None => Region::bottom_right_ninth(img.width, img.height),
    };
    let out = inpaint(&img, region, &model, &mut Rng::new(a.seed))?;
    write_pgm(&a.output, &out)?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let model = bitplane_model(load_model(&a.model)?, None)?;
    let x = to_bitplanes(&read_pgm(&a.input)?);
    println!("width={}", x.width());
    println!("height={}", x.height());
    println!("depth={}", x.depth());
    let mut passes = Vec::new();
    for schedule in [Schedule::Raster, Schedule::Slope] {
        let m = bitplane_model(model.clone(), Some(schedule))?;
        let t = Instant::now();
        let (bytes, stats) = codec::encode(&x, &m, schedule, a.tile)?;
        let enc_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let (y, dec) = codec::decode(&bytes, &m)?;
        let dec_ms = t.elapsed().as_secs_f64() * 1e3;
        if y != x || dec.pmf_digest != stats.pmf_digest {
            bail!("{schedule} round trip failed");
        }
        println!("{schedule}_encode_ms={enc_ms:.3}");
        println!("{schedule}_decode_ms={dec_ms:.3}");
        println!("{schedule}_passes={}", dec.passes);
        println!("{schedule}_payload_bits={}", stats.payload_bits);
        passes.push(dec.passes);
    }
    println!("pass_ratio={:.3}", passes[0] as f64 / passes[1] as f64);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var("TCAE_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).context("TCAE_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Train(a) => train(a),
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::Inpaint(a) => inpaint_cmd(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() || e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
        Err(e) => {
            // first line only, without clap's "error: " prefix and usage hints
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default();
            eprintln!("tcae: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("tcae: {msg}");
            ExitCode::FAILURE
        }
    }
}
