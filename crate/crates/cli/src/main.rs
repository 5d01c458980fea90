use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kaem::config::{Config, Criterion};
use kaem::io::{
    emit_prior_plot, load_idx, samples_csv, slerp, synth2d, write_png_grid, Checkpoint, Dataset,
};
use kaem::rng::{self, tag};
use kaem::trainer::{StepReport, TrainObserver, Trainer, METRICS_HEADER, TRACE_HEADER};
use kaem::validate::{run_suite, Suite};
use kaem::KaemError;

const DEFAULT_SYNTH_SIZE: usize = 10_000;

#[derive(Parser, Debug)]
#[command(
    name = "kaem",
    version,
    about = "Train and sample Kolmogorov-Arnold energy models"
)]
struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics, traces and checkpoints.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Decode spherical interpolations between prior draws.
    Interpolate(InterpolateArgs),
    /// Write learned and reference prior curves as CSV and SVG.
    PlotPrior(PlotPriorArgs),
    /// Run oracle checks and print PASS/FAIL lines.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key = value config file; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `rings8`, `moons` (optionally `name:N`), or an IDX image file.
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    out: PathBuf,
    /// Use at most this many examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Override a config key, e.g. `--set train.epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Png,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    num: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 4)]
    pairs: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlotPriorArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated component indices.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    dims: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Its,
    Gradients,
    Ti,
    Resampling,
    All,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(KaemError),
    Failed(usize),
}

impl From<KaemError> for CliError {
    fn from(e: KaemError) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `kaem --help` for usage");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(n)) => {
            eprintln!("{n} check(s) failed");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => train(a, seed),
        Command::Sample(a) => sample(a, seed),
        Command::Interpolate(a) => interpolate(a, seed),
        Command::PlotPrior(a) => plot_prior(a),
        Command::Validate(a) => validate(a, seed),
    }
}

fn load_dataset(spec: &str, seed: u64, limit: Option<usize>) -> CliResult<Dataset> {
    let (name, count) = match spec.split_once(':') {
        Some((n, c)) => {
            let c = c
                .parse()
                .map_err(|_| CliError::Usage(format!("bad example count in '{spec}'")))?;
            (n, Some(c))
        }
        None => (spec, None),
    };
    let mut data = match name {
        "rings8" | "moons" => {
            let n = count.or(limit).unwrap_or(DEFAULT_SYNTH_SIZE);
            synth2d(name, n, &mut rng::stream(seed, &[tag::DATA]))?
        }
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "dataset '{path}' is neither rings8, moons nor an existing IDX file"
                )));
            }
            load_idx(p)?
        }
    };
    if let Some(n) = limit {
        data.truncate(n);
    }
    if data.is_empty() {
        return Err(CliError::Runtime(KaemError::EmptyBatch));
    }
    Ok(data)
}

/// Streams the metrics log, tempering trace and checkpoints to disk.
struct FileObserver {
    metrics: BufWriter<File>,
    trace: Option<BufWriter<File>>,
    ckpt_dir: PathBuf,
}

impl FileObserver {
    fn new(out: &Path, thermo: bool, append: bool) -> std::io::Result<Self> {
        let open = |name: &str, header: &str| -> std::io::Result<BufWriter<File>> {
            let path = out.join(name);
            let fresh = !append || !path.exists();
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&path)?;
            let mut w = BufWriter::new(f);
            if fresh {
                writeln!(w, "{header}")?;
            }
            Ok(w)
        };
        let ckpt_dir = out.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        Ok(Self {
            metrics: open("metrics.csv", METRICS_HEADER)?,
            trace: if thermo {
                Some(open("tempering_trace.csv", TRACE_HEADER)?)
            } else {
                None
            },
            ckpt_dir,
        })
    }

    fn save(&mut self, t: &Trainer, label: &str) -> kaem::Result<()> {
        self.metrics.flush()?;
        if let Some(tr) = &mut self.trace {
            tr.flush()?;
        }
        Checkpoint::from_trainer(t).save(&self.ckpt_dir.join(format!("{label}.ckpt")))
    }
}

impl TrainObserver for FileObserver {
    fn on_step(&mut self, _t: &Trainer, r: &StepReport, log: bool) -> kaem::Result<()> {
        if log {
            writeln!(self.metrics, "{}", r.metrics.csv())?;
            if let Some(tr) = &mut self.trace {
                for row in &r.trace {
                    writeln!(tr, "{}", row.csv())?;
                }
            }
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, t: &Trainer, label: &str) -> kaem::Result<()> {
        self.save(t, label)
    }

    fn on_abort(&mut self, t: &Trainer) -> kaem::Result<()> {
        self.save(t, "abort")
    }
}

fn train(a: TrainArgs, seed: Option<u64>) -> CliResult<()> {
    let (mut trainer, data) = match &a.resume {
        Some(path) => {
            if a.config.is_some() || !a.overrides.is_empty() || seed.is_some() {
                return Err(CliError::Usage(
                    "--resume takes its configuration and seed from the checkpoint".into(),
                ));
            }
            let trainer = Checkpoint::load(path)?.into_trainer()?;
            let data = load_dataset(&a.dataset, trainer.config.seed, a.limit)?;
            (trainer, data)
        }
        None => {
            let mut cfg = match &a.config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            for kv in &a.overrides {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'"))
                })?;
                cfg.set(k.trim(), v.trim())?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let data = load_dataset(&a.dataset, cfg.seed, a.limit)?;
            (Checkpoint::fresh(&cfg, data.dim())?.into_trainer()?, data)
        }
    };
    if data.dim() != trainer.model.generator.output_dim() {
        return Err(CliError::Usage(format!(
            "dataset has dimension {}, model expects {}",
            data.dim(),
            trainer.model.generator.output_dim()
        )));
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.txt"), trainer.config.to_text())?;
    let thermo = trainer.config.criterion == Criterion::Thermo;
    let mut obs = FileObserver::new(&a.out, thermo, a.resume.is_some())?;
    let total = trainer.total_updates(data.len());
    eprintln!(
        "training {} on {} examples of dimension {}: {} updates, {} parameters",
        trainer.config.criterion.name(),
        data.len(),
        data.dim(),
        total,
        trainer.model.num_params()
    );
    trainer.train(&data.examples, &mut obs)?;
    obs.metrics.flush()?;
    if let Some(t) = &mut obs.trace {
        t.flush()?;
    }
    let final_path = a.out.join("checkpoints").join("final.ckpt");
    println!("{}", final_path.display());
    Ok(())
}

/// (height, width, channels) when a flat output looks like a square image.
fn image_shape(dim: usize) -> Option<(usize, usize, usize)> {
    let square = |n: usize| {
        let r = (n as f64).sqrt().round() as usize;
        (r * r == n && r > 1).then_some(r)
    };
    if let Some(r) = square(dim) {
        return Some((r, r, 1));
    }
    if dim % 3 == 0 {
        if let Some(r) = square(dim / 3) {
            return Some((r, r, 3));
        }
    }
    None
}

fn load_model(path: &Path) -> CliResult<(Checkpoint, kaem::model::Kaem)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.model()?;
    Ok((ckpt, model))
}

fn sample(a: SampleArgs, seed: Option<u64>) -> CliResult<()> {
    if a.num == 0 {
        return Err(CliError::Usage("--num must be positive".into()));
    }
    let (ckpt, model) = load_model(&a.checkpoint)?;
    let seed = seed.unwrap_or(ckpt.config.seed);
    let (_, xs) = model.sample(a.num, seed)?;
    fs::create_dir_all(&a.out)?;
    match a.format {
        Format::Csv => {
            let p = a.out.join("samples.csv");
            fs::write(&p, samples_csv(&xs))?;
            println!("{}", p.display());
        }
        Format::Png => {
            let (h, w, c) = image_shape(ckpt.output_dim).ok_or_else(|| {
                CliError::Usage(format!(
                    "png output needs square image data, model outputs {} values",
                    ckpt.output_dim
                ))
            })?;
            for (i, x) in xs.iter().enumerate() {
                write_png_grid(
                    &a.out.join(format!("sample_{i:05}.png")),
                    std::slice::from_ref(x),
                    h,
                    w,
                    c,
                    1,
                )?;
            }
            let cols = (a.num as f64).sqrt().ceil() as usize;
            let grid = a.out.join("samples_grid.png");
            write_png_grid(&grid, &xs, h, w, c, cols)?;
            println!("{}", grid.display());
        }
    }
    Ok(())
}

fn interpolate(a: InterpolateArgs, seed: Option<u64>) -> CliResult<()> {
    if a.pairs == 0 || a.steps < 2 {
        return Err(CliError::Usage("need --pairs ≥ 1 and --steps ≥ 2".into()));
    }
    let (ckpt, model) = load_model(&a.checkpoint)?;
    let seed = seed.unwrap_or(ckpt.config.seed);
    let mut csv = String::from("pair,step,t");
    let latent = model.latent_dim();
    for i in 0..latent {
        csv.push_str(&format!(",z{i}"));
    }
    for i in 0..ckpt.output_dim {
        csv.push_str(&format!(",x{i}"));
    }
    csv.push('\n');
    let mut images = Vec::new();
    for pair in 0..a.pairs {
        let mut r = rng::stream(seed, &[tag::GENERATE, u64::MAX, pair as u64]);
        let za = model.prior.sample_prior(&mut r)?;
        let zb = model.prior.sample_prior(&mut r)?;
        for (s, z) in slerp(&za, &zb, a.steps)?.into_iter().enumerate() {
            let x = model.generator.forward(&z)?;
            let t = s as f64 / (a.steps - 1) as f64;
            csv.push_str(&format!("{pair},{s},{t}"));
            for v in z.iter().chain(&x) {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
            images.push(x);
        }
    }
    fs::create_dir_all(&a.out)?;
    let p = a.out.join("interpolation.csv");
    fs::write(&p, csv)?;
    println!("{}", p.display());
    if let Some((h, w, c)) = image_shape(ckpt.output_dim) {
        let g = a.out.join("interpolation.png");
        write_png_grid(&g, &images, h, w, c, a.steps)?;
        println!("{}", g.display());
    }
    Ok(())
}

fn plot_prior(a: PlotPriorArgs) -> CliResult<()> {
    let (_, model) = load_model(&a.checkpoint)?;
    for p in emit_prior_plot(&model.prior, &a.dims, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn validate(a: ValidateArgs, seed: Option<u64>) -> CliResult<()> {
    let suite = match a.suite {
        SuiteArg::Its => Suite::Its,
        SuiteArg::Gradients => Suite::Gradients,
        SuiteArg::Ti => Suite::Ti,
        SuiteArg::Resampling => Suite::Resampling,
        SuiteArg::All => Suite::All,
    };
    let reports = run_suite(suite, seed.unwrap_or(0));
    let mut failed = 0;
    for r in &reports {
        println!("{r}");
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Failed(failed));
    }
    Ok(())
}
