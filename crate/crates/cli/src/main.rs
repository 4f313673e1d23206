use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evsurf::classifier::{accuracy, train};
use evsurf::cwts::{measure_host_throughput, write_scores_csv};
use evsurf::events::{
    dat_header_geometry, decode_csv, decode_dat, encode_csv, encode_dat, synthetic_suite,
    MotionSpec,
};
use evsurf::fixedpoint::{aae_sweep, default_sweep_formats, write_aae_csv};
use evsurf::hats::batch_features;
use evsurf::pesim::{write_report_csv, DEFAULT_OVERHEAD_CYCLES};
use evsurf::{
    cwts_run, cwts_run_fixed, simulate, EventStream, FixedPointFormat, GridParams, Kernel,
    MemoryMode, ModelFingerprint, PeConfig, PeReport, SensorGeometry, SvmModel, TrainConfig,
};

#[derive(Parser)]
#[command(name = "evsurf", version, about = "Event-camera time-surface features and streaming classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an event file between DAT and CSV
    Convert(ConvertArgs),
    /// Generate a labeled synthetic dataset
    Gen(GenArgs),
    /// Train a linear classifier on a dataset directory
    Train(TrainArgs),
    /// Per-window class scores for one event file
    Infer(InferArgs),
    /// Fixed-point error sweep over a dataset
    Sweep(SweepArgs),
    /// PE cost model report and host throughput
    Bench(BenchArgs),
}

#[derive(Args)]
struct GeometryArgs {
    /// Sensor width; defaults to the DAT header, then 120
    #[arg(long)]
    width: Option<u16>,
    /// Sensor height; defaults to the DAT header, then 100
    #[arg(long)]
    height: Option<u16>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Exp,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Reset,
    Sliding,
}

impl From<ModeArg> for MemoryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Reset => MemoryMode::Reset,
            ModeArg::Sliding => MemoryMode::Sliding,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    /// Cell side K in pixels
    #[arg(long, default_value_t = 10)]
    cell_size: u16,
    /// Neighborhood radius
    #[arg(long, default_value_t = 3)]
    rho: u16,
    /// Window length in microseconds
    #[arg(long, default_value_t = 100_000)]
    delta_t_us: u64,
    /// Decay constant in microseconds
    #[arg(long, default_value_t = 1e9)]
    tau_us: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Linear)]
    kernel: KernelArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Reset)]
    memory_mode: ModeArg,
}

impl GridArgs {
    fn params(&self) -> Result<GridParams, CliError> {
        let p = GridParams {
            cell_size: self.cell_size,
            rho: self.rho,
            delta_t_us: self.delta_t_us,
            tau_us: self.tau_us,
            kernel: match self.kernel {
                KernelArg::Exp => Kernel::Exponential,
                KernelArg::Linear => Kernel::LinearDecay,
            },
            memory_mode: self.memory_mode.into(),
            memory_capacity: None,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    output: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct GenArgs {
    /// Motion classes (right, left, up, down); one subdirectory each
    #[arg(long = "class", required = true)]
    classes: Vec<String>,
    /// Samples per class
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 100_000)]
    duration_us: u64,
    #[arg(long, env = "EVSURF_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory laid out as <dir>/<class>/*.dat|csv
    #[arg(long)]
    data: PathBuf,
    /// Optional held-out dataset with the same class directories
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, env = "EVSURF_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct InferArgs {
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Quantized path in the given format, e.g. 24,12
    #[arg(long, conflicts_with = "float")]
    fixed: Option<String>,
    /// Full-precision path (default unless --fixed or --pes)
    #[arg(long)]
    float: bool,
    /// Run the quantized path through the PE model with this many PEs
    #[arg(long, conflicts_with = "float")]
    pes: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Reset)]
    memory_mode: ModeArg,
    /// Scores CSV destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Formats to evaluate; defaults to <24,12> down to <19,12>
    #[arg(long = "format")]
    formats: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Event files or dataset directories
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// PE counts to report
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_OVERHEAD_CYCLES)]
    overhead_cycles: u64,
    /// Host timing repetitions
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Report CSV destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<evsurf::Error> for CliError {
    fn from(e: evsurf::Error) -> Self {
        let code = match e {
            evsurf::Error::Invariant(_) => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn explicit_geometry(g: &GeometryArgs) -> CliResult<Option<SensorGeometry>> {
    match (g.width, g.height) {
        (None, None) => Ok(None),
        (Some(w), Some(h)) => Ok(Some(SensorGeometry::new(w, h)?)),
        _ => Err(CliError::usage("--width and --height go together")),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum FileKind {
    Dat,
    Csv,
}

fn file_kind(path: &Path) -> CliResult<FileKind> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("dat") => Ok(FileKind::Dat),
        Some("csv") => Ok(FileKind::Csv),
        _ => Err(CliError::usage(format!(
            "{}: unknown event file type (expected .dat or .csv)",
            path.display()
        ))),
    }
}

/// Reads an event file. Geometry comes from the DAT header when present,
/// else `fallback`, else 120x100. An explicit geometry smaller than the
/// header's is refused.
fn read_stream(path: &Path, explicit: Option<SensorGeometry>) -> CliResult<EventStream> {
    let kind = file_kind(path)?;
    let bytes = fs::read(path).map_err(|e| CliError::from(e).context(path))?;
    let load = || -> CliResult<EventStream> {
        match kind {
            FileKind::Dat => {
                let header = dat_header_geometry(&bytes);
                let g = match (header, explicit) {
                    (Some(h), Some(e)) if e.width < h.width || e.height < h.height => {
                        return Err(CliError::usage(format!(
                            "refusing to narrow geometry {}x{} to {}x{}",
                            h.width, h.height, e.width, e.height
                        )))
                    }
                    (_, Some(e)) => e,
                    (Some(h), None) => h,
                    (None, None) => SensorGeometry::ncars(),
                };
                Ok(decode_dat(&bytes, g)?)
            }
            FileKind::Csv => {
                let text = String::from_utf8(bytes.clone())
                    .map_err(|_| CliError::usage("file is not UTF-8 text"))?;
                Ok(decode_csv(&text, explicit.unwrap_or_else(SensorGeometry::ncars))?)
            }
        }
    };
    load().map_err(|e| e.context(path))
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::from(e).context(path))?;
    tmp.write_all(contents).map_err(|e| CliError::from(e).context(path))?;
    tmp.persist(path)
        .map_err(|e| CliError::from(e.error).context(path))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, contents),
        None => {
            io::stdout().write_all(contents)?;
            Ok(())
        }
    }
}

struct Dataset {
    classes: Vec<String>,
    streams: Vec<EventStream>,
}

fn event_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::from(e).context(dir))? {
        let p = entry?.path();
        if p.is_file() && file_kind(&p).is_ok() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// `<dir>/<class>/*.dat|csv`; classes are numbered in name order.
fn load_dataset(dir: &Path, explicit: Option<SensorGeometry>) -> CliResult<Dataset> {
    let mut classes = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::from(e).context(dir))? {
        let p = entry?.path();
        if p.is_dir() {
            classes.push(p);
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(CliError::usage(format!("{}: no class subdirectories", dir.display())));
    }
    let mut streams = Vec::new();
    for (label, class_dir) in classes.iter().enumerate() {
        for f in event_files(class_dir)? {
            streams.push(read_stream(&f, explicit)?.with_label(label as u32));
        }
    }
    let names = classes
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    Ok(Dataset {
        classes: names,
        streams,
    })
}

/// Event files given directly, or every file under the given directories.
fn load_inputs(inputs: &[PathBuf], explicit: Option<SensorGeometry>) -> CliResult<Vec<EventStream>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let nested = fs::read_dir(input)?.filter_map(|e| e.ok()).any(|e| e.path().is_dir());
            if nested {
                out.extend(load_dataset(input, explicit)?.streams);
            } else {
                for f in event_files(input)? {
                    out.push(read_stream(&f, explicit)?);
                }
            }
        } else {
            out.push(read_stream(input, explicit)?);
        }
    }
    if out.is_empty() {
        return Err(CliError::usage("no event files found"));
    }
    Ok(out)
}

fn load_model(path: &Path) -> CliResult<SvmModel> {
    let bytes = fs::read(path).map_err(|e| CliError::from(e).context(path))?;
    SvmModel::from_bytes(&bytes).map_err(|e| CliError::from(e).context(path))
}

fn model_params(model: &SvmModel, mode: MemoryMode) -> GridParams {
    GridParams {
        memory_mode: mode,
        ..model.fingerprint().grid_params()
    }
}

fn features(streams: &[EventStream], params: &GridParams) -> CliResult<Vec<(Vec<f64>, u32)>> {
    let f = batch_features(streams, params)?;
    Ok(f.into_iter()
        .zip(streams)
        .map(|(v, s)| (v, s.label.unwrap_or(0)))
        .collect())
}

fn cmd_convert(a: &ConvertArgs) -> CliResult<()> {
    let stream = read_stream(&a.input, explicit_geometry(&a.geometry)?)?;
    let bytes = match file_kind(&a.output)? {
        FileKind::Dat => encode_dat(&stream).map_err(|e| CliError::from(e).context(&a.output))?,
        FileKind::Csv => encode_csv(&stream).into_bytes(),
    };
    write_atomic(&a.output, &bytes)?;
    eprintln!("{} events written to {}", stream.len(), a.output.display());
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let g = explicit_geometry(&a.geometry)?.unwrap_or_else(SensorGeometry::ncars);
    let specs = a
        .classes
        .iter()
        .map(|name| {
            MotionSpec::preset(name).ok_or_else(|| {
                CliError::usage(format!("unknown class {name:?} (right, left, up, down)"))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if (1..a.classes.len()).any(|i| a.classes[..i].contains(&a.classes[i])) {
        return Err(CliError::usage("duplicate --class"));
    }
    let suite = synthetic_suite(&specs, a.count, g, a.duration_us, a.seed)?;
    for name in &a.classes {
        let dir = a.out.join(name);
        fs::create_dir_all(&dir).map_err(|e| CliError::from(e).context(&dir))?;
    }
    let total = suite.len();
    for (i, s) in suite.iter().enumerate() {
        let name = &a.classes[s.label.unwrap_or(0) as usize];
        let path = a.out.join(name).join(format!("sample_{}.dat", i % a.count.max(1)));
        write_atomic(&path, &encode_dat(s)?)?;
    }
    eprintln!("{total} samples written under {}", a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let params = a.grid.params()?;
    let explicit = explicit_geometry(&a.geometry)?;
    let data = load_dataset(&a.data, explicit)?;
    let g = data.streams[0].geometry();
    if let Some(s) = data.streams.iter().find(|s| s.geometry() != g) {
        return Err(CliError::usage(format!(
            "mixed sensor sizes in dataset: {}x{} and {}x{}",
            g.width,
            g.height,
            s.geometry().width,
            s.geometry().height
        )));
    }
    let train_set = features(&data.streams, &params)?;
    let config = TrainConfig {
        lambda: a.lambda,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let model = train(&train_set, &config, ModelFingerprint::new(g, &params))?;
    for (i, c) in data.classes.iter().enumerate() {
        println!("class {i}: {c}");
    }
    println!("train accuracy {:.4} ({} samples)", accuracy(&model, &train_set)?, train_set.len());
    if let Some(test_dir) = &a.test {
        let test = load_dataset(test_dir, explicit)?;
        if test.classes != data.classes {
            return Err(CliError::usage("test set class directories differ from training set"));
        }
        let test_set = features(&test.streams, &params)?;
        println!("test accuracy {:.4} ({} samples)", accuracy(&model, &test_set)?, test_set.len());
    }
    write_atomic(&a.model, &model.to_bytes())
}

fn cmd_infer(a: &InferArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let stream = read_stream(&a.input, explicit_geometry(&a.geometry)?)?;
    let params = model_params(&model, a.memory_mode.into());
    let format = a.fixed.as_deref().map(FixedPointFormat::parse).transpose()?;
    let scores = match (a.pes, format) {
        (Some(pes), f) => {
            let config = PeConfig {
                format: f.unwrap_or(PeConfig::default().format),
                ..PeConfig::with_pes(pes)
            };
            simulate(&stream, &model, &params, &config)?.run.windows
        }
        (None, Some(f)) => cwts_run_fixed(&stream, &model, &params, f)?.windows,
        (None, None) => cwts_run(&stream, &model, &params)?,
    };
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, &scores, model.num_classes())?;
    emit(a.out.as_deref(), &buf)
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let streams = load_inputs(std::slice::from_ref(&a.data), explicit_geometry(&a.geometry)?)?;
    let params = model_params(&model, MemoryMode::Reset);
    let formats = if a.formats.is_empty() {
        default_sweep_formats()
    } else {
        a.formats
            .iter()
            .map(|f| FixedPointFormat::parse(f))
            .collect::<Result<_, _>>()?
    };
    let reports = aae_sweep(&streams, &model, &params, &formats)?;
    let mut buf = Vec::new();
    write_aae_csv(&mut buf, &reports)?;
    emit(a.out.as_deref(), &buf)
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let streams = load_inputs(&a.inputs, explicit_geometry(&a.geometry)?)?;
    let params = model_params(&model, MemoryMode::Reset);
    let mut reports = Vec::new();
    for &pes in &a.pes {
        let config = PeConfig {
            overhead_cycles: a.overhead_cycles,
            ..PeConfig::with_pes(pes)
        };
        let per_sample = streams
            .iter()
            .map(|s| simulate(s, &model, &params, &config).map(|sim| sim.report))
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(PeReport::aggregate(&per_sample)?);
    }
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &reports)?;
    emit(a.out.as_deref(), &buf)?;
    let host = measure_host_throughput(&streams, &model, &params, a.runs)?;
    eprintln!(
        "host: {:.3} Mevents/s, {:.3} ms/sample over {} runs of {} samples ({} events)",
        host.mevents_per_s, host.ms_per_sample, host.runs, host.samples_per_run, host.events_per_run
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Convert(a) => cmd_convert(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
