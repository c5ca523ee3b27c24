use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use hqarf::analysis::{self, FigureData, FigureKind};
use hqarf::codec::{self, CompressedBlob, RateReport};
use hqarf::hae::{LevelSpec, ModelStack, Stage};
use hqarf::modrec::{self, Classifier, ClassifierConfig, EvalResult};
use hqarf::sigsynth::{self, IqFrame, LabeledDataset, ModClass, SynthConfig};
use hqarf::training::{self, TrainConfig, TrainReport};
use hqarf::Error;

#[derive(Parser)]
#[command(
    name = "hqarf",
    version,
    about = "Hierarchical vector-quantized compression of baseband RF frames"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled six-class dataset.
    Synth(SynthCmd),
    /// Train one stage of the model stack.
    Train(TrainCmd),
    /// Compress one frame into a blob.
    Compress(CompressCmd),
    /// Reconstruct a frame from a blob.
    Decompress(DecompressCmd),
    /// Compression ratio table per level.
    Rates(RatesCmd),
    /// Singular-value energy rank of a dataset.
    Svd(SvdCmd),
    /// Train the modulation classifier on clean frames.
    ClfTrain(ClfTrainCmd),
    /// Evaluate the classifier on original or reconstructed frames.
    ClfEval(ClfEvalCmd),
    /// Accuracy of reconstructions at every level, for one or more stacks.
    Sweep(SweepCmd),
    /// Figure data as CSV and SVG.
    Plot(PlotCmd),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory, or a file path carrying the command's artifact extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat TOML settings file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: SynthFlags,
}

#[derive(Args, Serialize)]
struct SynthFlags {
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    frame_len: Option<usize>,
    #[arg(long)]
    snr_db: Option<f64>,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Stack from the previous stage (required for vq and kl).
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    codebook_size: Option<usize>,
    #[arg(long)]
    epochs_hae: Option<usize>,
    #[arg(long)]
    epochs_vq: Option<usize>,
    #[arg(long)]
    epochs_kl: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct CompressCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// A dataset file (frame chosen by --index) or a raw `.iq` frame.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    flags: CompressFlags,
}

#[derive(Args, Serialize)]
struct CompressFlags {
    #[arg(long)]
    level: Option<usize>,
    #[arg(long)]
    index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
struct CompressSettings {
    seed: u64,
    level: usize,
    index: usize,
}

#[derive(Args)]
struct DecompressCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SeedOnly {
    seed: u64,
}

#[derive(Args)]
struct RatesCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: RatesFlags,
}

#[derive(Args, Serialize)]
struct RatesFlags {
    /// Frame length.
    #[arg(long)]
    p: Option<usize>,
    /// Codebook size.
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RatesSettings {
    seed: u64,
    p: usize,
    nc: usize,
    levels: usize,
}

impl Default for RatesSettings {
    fn default() -> Self {
        RatesSettings {
            seed: 0,
            p: sigsynth::FRAME_LEN,
            nc: 64,
            levels: 5,
        }
    }
}

#[derive(Args)]
struct SvdCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    flags: SvdFlags,
}

#[derive(Args, Serialize)]
struct SvdFlags {
    #[arg(long)]
    energy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SvdSettings {
    seed: u64,
    energy: f64,
}

impl Default for SvdSettings {
    fn default() -> Self {
        SvdSettings {
            seed: 0,
            energy: 0.99,
        }
    }
}

#[derive(Args)]
struct ClfTrainCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    flags: ClfTrainFlags,
}

#[derive(Args, Serialize)]
struct ClfTrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Fraction of each class used for training; the rest is held out.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ClfTrainSettings {
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f32,
    target_loss: f64,
    train_fraction: f64,
}

impl Default for ClfTrainSettings {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        ClfTrainSettings {
            seed: c.seed,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            target_loss: c.target_loss,
            train_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Args)]
struct ClfEvalCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Evaluate reconstructions through this stack instead of the originals.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    flags: ClfEvalFlags,
}

#[derive(Args, Serialize)]
struct ClfEvalFlags {
    #[arg(long)]
    level: Option<usize>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ClfEvalSettings {
    seed: u64,
    level: usize,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    classifier: PathBuf,
    /// Evaluation frames, disjoint from the classifier's training frames.
    #[arg(long)]
    data: PathBuf,
    /// Trained stacks, one series each.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[command(flatten)]
    flags: SweepFlags,
}

#[derive(Args, Serialize)]
struct SweepFlags {
    /// Codebook size used for the rates of stacks without codebooks.
    #[arg(long)]
    nc: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepSettings {
    seed: u64,
    nc: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { seed: 0, nc: 64 }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum PlotKind {
    Scatter,
    Spectrogram,
    Accuracy,
}

#[derive(Args)]
struct PlotCmd {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Plot reconstructions through this stack.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Accuracy CSV written by `sweep` (accuracy plots only).
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    flags: PlotFlags,
}

#[derive(Args, Serialize)]
struct PlotFlags {
    /// Modulation scheme for scatter plots.
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    level: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlotSettings {
    seed: u64,
    class: String,
    frames: usize,
    index: usize,
    level: usize,
}

impl Default for PlotSettings {
    fn default() -> Self {
        PlotSettings {
            seed: 0,
            class: ModClass::Psk16.name().to_string(),
            frames: 20,
            index: 0,
            level: 0,
        }
    }
}

struct CliError {
    code: &'static str,
    exit: u8,
    msg: String,
}

impl CliError {
    fn new(code: &'static str, exit: u8, msg: impl Into<String>) -> Self {
        CliError {
            code,
            exit,
            msg: msg.into(),
        }
    }

    fn config(msg: impl Into<String>) -> Self {
        CliError::new("config", 8, msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit = match &e {
            Error::Io(_) => 3,
            Error::Format(_) | Error::Corruption { .. } | Error::Dimension { .. } => 4,
            Error::State(_) => 5,
            Error::Integrity(_) => 6,
            Error::Divergence { .. } | Error::NonFinite { .. } => 7,
            Error::Config(_) => 8,
            _ => 1,
        };
        CliError::new(e.code(), exit, e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new("io", 3, e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Flag values overlaid on the config file, then decoded into `S`.
fn resolve<S: DeserializeOwned>(common: &Common, flags: &impl Serialize) -> CliResult<S> {
    let mut map = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            match serde_json::to_value(table).map_err(|e| CliError::config(e.to_string()))? {
                Value::Object(m) => m,
                _ => Map::new(),
            }
        }
        None => Map::new(),
    };
    if let Some(seed) = common.seed {
        map.insert("seed".into(), json!(seed));
    }
    if let Ok(Value::Object(f)) = serde_json::to_value(flags) {
        map.extend(f.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::config(e.to_string()))
}

/// Output location and bookkeeping for one command invocation.
struct Run {
    command: &'static str,
    dir: PathBuf,
    /// Set when `--out` named the primary artifact itself.
    file: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(command: &'static str, out: &Option<PathBuf>, primary_ext: &str) -> CliResult<Self> {
        let out = out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("run-{command}")));
        let is_file = out.extension().is_some_and(|e| e == primary_ext);
        let dir = if is_file {
            out.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            out.clone()
        };
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(&dir)?;
        }
        Ok(Run {
            command,
            dir,
            file: is_file.then_some(out),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    /// Path of an artifact; the primary one takes `--out` in file mode.
    fn path(&self, name: &str, primary: bool) -> PathBuf {
        match &self.file {
            Some(f) if primary => f.clone(),
            Some(f) => {
                let stem = f
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                self.dir.join(format!("{stem}.{name}"))
            }
            None => self.dir.join(name),
        }
    }

    fn write(&mut self, name: &str, primary: bool, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.path(name, primary);
        if self.inputs.iter().any(|i| same_file(i, &path)) {
            return Err(CliError::config(format!(
                "output {} would overwrite an input",
                path.display()
            )));
        }
        fs::write(&path, bytes)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self, settings: &impl Serialize) -> CliResult<()> {
        let manifest = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": settings,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "wall_clock_secs": self.started.elapsed().as_secs_f64(),
        });
        let path = match &self.file {
            Some(f) => {
                let mut name = f.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                f.with_file_name(name)
            }
            None => self.dir.join("manifest.json"),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::new("io", 3, e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn load_dataset(run: &mut Run, path: &Path) -> CliResult<LabeledDataset> {
    Ok(LabeledDataset::load(run.input(path))?)
}

fn load_stack(run: &mut Run, path: &Path) -> CliResult<ModelStack> {
    Ok(ModelStack::load(run.input(path))?)
}

/// Raw frame: `2·p` little-endian f32, channel 0 then channel 1.
fn frame_bytes(frame: &IqFrame) -> Vec<u8> {
    frame
        .as_slice()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

fn frame_from_bytes(bytes: &[u8]) -> CliResult<IqFrame> {
    if !bytes.len().is_multiple_of(8) || bytes.is_empty() {
        return Err(Error::Format(format!(
            "raw frame of {} bytes is not 2·p f32 values",
            bytes.len()
        ))
        .into());
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(IqFrame::from_channels(data)?)
}

fn cmd_synth(c: SynthCmd) -> CliResult<()> {
    let cfg: SynthConfig = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("synth", &c.common.out, "rfds")?;
    let ds = sigsynth::synth_dataset(&cfg)?;
    let path = run.write("dataset.rfds", true, ds.to_bytes()?)?;
    println!(
        "{} frames ({} per class, p = {}) -> {}",
        ds.len(),
        cfg.per_class,
        cfg.frame_len,
        path.display()
    );
    run.finish(&cfg)
}

#[derive(Serialize)]
struct Architecture<'a> {
    level: &'a [LevelSpec],
}

fn cmd_train(c: TrainCmd) -> CliResult<()> {
    let mut cfg: TrainConfig = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("train", &c.common.out, "ck")?;
    cfg.dataset = Some(c.data.display().to_string());
    cfg.validate()?;
    let data = load_dataset(&mut run, &c.data)?;
    let prior = match (&c.init, cfg.stage) {
        (None, Stage::Hae) => None,
        (Some(p), _) => Some(load_stack(&mut run, p)?),
        (None, s) => {
            return Err(Error::State(format!(
                "stage {} needs --init with the previous stage's stack",
                s.name()
            ))
            .into())
        }
    };
    let (stack, mut report): (ModelStack, TrainReport) = match (cfg.stage, prior) {
        (Stage::Hae, None) => training::train_stage1_hae(&cfg, &data)?,
        (Stage::Hae, Some(_)) => {
            return Err(Error::State("stage hae starts from scratch; drop --init".into()).into())
        }
        (Stage::Vq, Some(hae)) => training::train_stage2_vq(&cfg, &data, &hae)?,
        (Stage::VqKl, Some(vq)) => training::train_stage3_kl(&cfg, &data, &vq)?,
        _ => unreachable!("init checked above"),
    };
    let ck = run.write("model.ck", true, stack.to_bytes())?;
    report.checkpoint = Some(ck.display().to_string());
    run.write("report.csv", false, report.to_csv())?;
    if !report.usage_histograms.is_empty() {
        run.write("usage.csv", false, report.usage_csv())?;
    }
    run.write("summary.txt", false, report.summary())?;
    let specs: Vec<LevelSpec> = stack.levels.iter().map(|l| l.spec).collect();
    let arch = toml::to_string(&Architecture { level: &specs })
        .map_err(|e| CliError::config(e.to_string()))?;
    run.write("architecture.toml", false, arch)?;
    print!("{}", report.summary());
    println!("model {} -> {}", codec::hex(&stack.digest()), ck.display());
    run.finish(&cfg)
}

fn cmd_compress(c: CompressCmd) -> CliResult<()> {
    let s: CompressSettings = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("compress", &c.common.out, "rfcz")?;
    let stack = load_stack(&mut run, &c.model)?;
    let bytes = fs::read(run.input(&c.input))?;
    let frame = if bytes.starts_with(sigsynth::DATASET_MAGIC) {
        let ds = LabeledDataset::from_bytes(&bytes)?;
        let n = ds.len();
        ds.frames
            .into_iter()
            .nth(s.index)
            .ok_or_else(|| {
                CliError::config(format!("index {} out of range for {n} frames", s.index))
            })?
            .0
    } else {
        frame_from_bytes(&bytes)?
    };
    let blob = codec::compress(&frame, &stack, s.level)?;
    let path = run.write("frame.rfcz", true, blob.to_bytes()?)?;
    println!(
        "level {} width {} payload {} bytes ({} bits) -> {}",
        blob.header.level,
        blob.header.width,
        blob.header.payload_len(),
        blob.payload_bits(),
        path.display()
    );
    run.finish(&s)
}

fn cmd_decompress(c: DecompressCmd) -> CliResult<()> {
    let s: SeedOnly = resolve(&c.common, &json!({}))?;
    let mut run = Run::new("decompress", &c.common.out, "iq")?;
    let stack = load_stack(&mut run, &c.model)?;
    let blob = CompressedBlob::from_bytes(&fs::read(run.input(&c.input))?)?;
    let frame = codec::decompress(&blob, &stack)?;
    let path = run.write("recon.iq", true, frame_bytes(&frame))?;
    println!("reconstruction [2, {}] -> {}", frame.len(), path.display());
    run.finish(&s)
}

fn rate_table(rates: &[RateReport]) -> String {
    let mut out = String::from("level  width  payload_bits  source_bits       CR        r\n");
    for r in rates {
        out.push_str(&format!(
            "{:>5}  {:>5}  {:>12}  {:>11}  {:>7.2}  {:>7.4}\n",
            r.level, r.width, r.payload_bits, r.source_bits, r.cr, r.r
        ));
    }
    out
}

fn cmd_rates(c: RatesCmd) -> CliResult<()> {
    let s: RatesSettings = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("rates", &c.common.out, "csv")?;
    let rates: Vec<RateReport> = (0..s.levels)
        .map(|i| codec::compression_ratio(i, s.p, s.nc))
        .collect::<hqarf::Result<_>>()?;
    run.write("rates.csv", true, codec::rates_csv(&rates))?;
    print!("{}", rate_table(&rates));
    run.finish(&s)
}

fn cmd_svd(c: SvdCmd) -> CliResult<()> {
    let s: SvdSettings = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("svd", &c.common.out, "csv")?;
    let ds = load_dataset(&mut run, &c.data)?;
    let report = analysis::svd_rank(&ds, s.energy)?;
    run.write("svd.csv", true, report.to_csv())?;
    let summary = json!({
        "rank": report.rank,
        "threshold": report.threshold,
        "total_dims": report.total_dims,
        "rows": report.rows,
    });
    run.write("svd.json", false, summary.to_string() + "\n")?;
    println!(
        "rank at {:.2}% energy: {} of {} ({} frames, mean frame removed)",
        100.0 * report.threshold,
        report.rank,
        report.total_dims,
        report.rows
    );
    run.finish(&s)
}

fn history_csv(clf: &Classifier) -> String {
    let mut out = String::from("epoch,loss,train_accuracy,heldout_accuracy\n");
    for e in &clf.history {
        let held = e
            .heldout_accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{held}\n",
            e.epoch, e.loss, e.train_accuracy
        ));
    }
    out
}

fn cmd_clf_train(c: ClfTrainCmd) -> CliResult<()> {
    let s: ClfTrainSettings = resolve(&c.common, &c.flags)?;
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(CliError::config("train_fraction must lie in (0, 1)"));
    }
    let mut run = Run::new("clf-train", &c.common.out, "ck")?;
    let ds = load_dataset(&mut run, &c.data)?;
    let (train, heldout) = ds.split_stratified(s.train_fraction, s.seed);
    let cfg = ClassifierConfig {
        seed: s.seed,
        epochs: s.epochs,
        batch_size: s.batch_size,
        learning_rate: s.learning_rate,
        target_loss: s.target_loss,
    };
    let clf = modrec::train_classifier(&train, Some(&heldout), &cfg)?;
    let result = modrec::evaluate(&clf, &heldout)?;
    run.write("classifier.ck", true, clf.to_checkpoint().to_bytes())?;
    run.write("history.csv", false, history_csv(&clf))?;
    run.write("eval.rfds", false, heldout.to_bytes()?)?;
    run.write(
        "eval.csv",
        false,
        modrec::eval_csv(std::slice::from_ref(&result)),
    )?;
    run.write("confusion.csv", false, result.confusion_csv())?;
    println!(
        "{} train / {} held-out frames, {} epochs, held-out accuracy {:.4}",
        train.len(),
        heldout.len(),
        clf.history.len(),
        result.accuracy
    );
    run.finish(&s)
}

fn reconstruct_all(
    stack: &ModelStack,
    ds: &LabeledDataset,
    level: usize,
) -> CliResult<Vec<(IqFrame, ModClass)>> {
    ds.frames
        .iter()
        .map(|(f, c)| {
            let r = if stack.stage.quantized() {
                codec::decompress(&codec::compress(f, stack, level)?, stack)?
            } else {
                stack.reconstruct(f, level, false)?
            };
            Ok((r, *c))
        })
        .collect()
}

fn cmd_clf_eval(c: ClfEvalCmd) -> CliResult<()> {
    let s: ClfEvalSettings = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("clf-eval", &c.common.out, "csv")?;
    let clf = Classifier::load(run.input(&c.classifier))?;
    let ds = load_dataset(&mut run, &c.data)?;
    let result: EvalResult = match &c.model {
        None => modrec::evaluate(&clf, &ds)?,
        Some(m) => {
            let stack = load_stack(&mut run, m)?;
            let recon = reconstruct_all(&stack, &ds, s.level)?;
            let source = format!("L{}-{}", s.level, stack.stage.name());
            modrec::evaluate_frames(&clf, &source, recon.iter().map(|(f, c)| (f, *c)))?
        }
    };
    run.write(
        "eval.csv",
        true,
        modrec::eval_csv(std::slice::from_ref(&result)),
    )?;
    run.write("confusion.csv", false, result.confusion_csv())?;
    println!(
        "{}: accuracy {:.4} over {} frames",
        result.source, result.accuracy, result.total
    );
    run.finish(&s)
}

fn cmd_sweep(c: SweepCmd) -> CliResult<()> {
    let s: SweepSettings = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("sweep", &c.common.out, "csv")?;
    let clf = Classifier::load(run.input(&c.classifier))?;
    let ds = load_dataset(&mut run, &c.data)?;
    let mut all = Vec::new();
    let mut series = Vec::new();
    let mut rates = Vec::new();
    for m in &c.models {
        let stack = load_stack(&mut run, m)?;
        let sweep = modrec::eval_reconstruction_sweep(&clf, &stack, &ds, s.nc)?;
        if rates.is_empty() {
            rates = sweep.rates.clone();
        } else if rates.len() != sweep.rates.len() {
            return Err(CliError::config(
                "stacks in one sweep must have the same depth",
            ));
        }
        series.push((sweep.stage.clone(), sweep.level_accuracies()));
        if all.is_empty() {
            all.push(sweep.results[0].clone());
        }
        all.extend(sweep.results[1..].iter().cloned());
    }
    let fig = analysis::accuracy_curve(&series, &rates)?;
    run.write("accuracy.csv", true, fig.to_csv())?;
    run.write("accuracy.svg", false, fig.to_svg())?;
    run.write("sweep.csv", false, modrec::eval_csv(&all))?;
    run.write("rates.csv", false, codec::rates_csv(&rates))?;
    print!("{}", modrec::eval_csv(&all));
    run.finish(&s)
}

fn accuracy_from_csv(text: &str) -> CliResult<FigureData> {
    let mut lines = text.lines();
    let columns: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::new("format", 4, "empty accuracy CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    if columns.len() < 3 || columns[0] != "level" || columns[1] != "cr" {
        return Err(CliError::new(
            "format",
            4,
            "accuracy CSV must start with level,cr columns",
        ));
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                CliError::new("format", 4, format!("bad accuracy CSV row {line:?}: {e}"))
            })?;
        if row.len() != columns.len() {
            return Err(CliError::new(
                "format",
                4,
                format!("row {line:?} has the wrong width"),
            ));
        }
        rows.push(row);
    }
    Ok(FigureData {
        kind: FigureKind::AccuracyCurve,
        title: "accuracy vs compression ratio".into(),
        x_label: "compression ratio".into(),
        y_label: "accuracy".into(),
        columns,
        rows,
        notes: vec!["HAE has no quantizer; its points sit at the level's nominal ratio".into()],
    })
}

fn cmd_plot(c: PlotCmd) -> CliResult<()> {
    let s: PlotSettings = resolve(&c.common, &c.flags)?;
    let mut run = Run::new("plot", &c.common.out, "svg")?;
    let need_data = |run: &mut Run| -> CliResult<LabeledDataset> {
        let p = c
            .data
            .as_ref()
            .ok_or_else(|| CliError::new("usage", 2, "--data is required for this plot"))?;
        load_dataset(run, p)
    };
    let fig = match c.kind {
        PlotKind::Accuracy => {
            let p = c.input.as_ref().ok_or_else(|| {
                CliError::new("usage", 2, "--input is required for accuracy plots")
            })?;
            accuracy_from_csv(&fs::read_to_string(run.input(p))?)?
        }
        PlotKind::Scatter | PlotKind::Spectrogram => {
            let ds = need_data(&mut run)?;
            let stack = match &c.model {
                Some(m) => Some(load_stack(&mut run, m)?),
                None => None,
            };
            let source = |f: &IqFrame| -> CliResult<IqFrame> {
                match &stack {
                    None => Ok(f.clone()),
                    Some(st) if st.stage.quantized() => {
                        Ok(codec::decompress(&codec::compress(f, st, s.level)?, st)?)
                    }
                    Some(st) => Ok(st.reconstruct(f, s.level, false)?),
                }
            };
            let tag = match &stack {
                None => "original".to_string(),
                Some(st) => format!("L{} {}", s.level, st.stage.name()),
            };
            if matches!(c.kind, PlotKind::Scatter) {
                let class: ModClass = s.class.parse()?;
                let frames: Vec<IqFrame> = ds
                    .frames_of(class)
                    .take(s.frames)
                    .map(source)
                    .collect::<CliResult<_>>()?;
                if frames.is_empty() {
                    return Err(CliError::config(format!("dataset has no {class} frames")));
                }
                let refs: Vec<&IqFrame> = frames.iter().collect();
                analysis::scatter_data(&refs, &format!("{class} ({tag})"))
            } else {
                let (frame, class) = ds
                    .frames
                    .get(s.index)
                    .ok_or_else(|| CliError::config(format!("index {} out of range", s.index)))?;
                analysis::spectrogram(
                    &source(frame)?,
                    &format!("{class} frame {} ({tag})", s.index),
                )
            }
        }
    };
    run.write("figure.svg", true, fig.to_svg())?;
    run.write("figure.csv", false, fig.to_csv())?;
    println!(
        "{} rows -> {}",
        fig.rows.len(),
        run.path("figure.svg", true).display()
    );
    run.finish(&s)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Train(c) => cmd_train(c),
        Command::Compress(c) => cmd_compress(c),
        Command::Decompress(c) => cmd_decompress(c),
        Command::Rates(c) => cmd_rates(c),
        Command::Svd(c) => cmd_svd(c),
        Command::ClfTrain(c) => cmd_clf_train(c),
        Command::ClfEval(c) => cmd_clf_eval(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Plot(c) => cmd_plot(c),
    }
}

fn fail(e: CliError) -> ExitCode {
    let msg = e.msg.replace(['\n', '\r'], " ");
    eprintln!("error: code={} msg={}", e.code, msg.trim());
    ExitCode::from(e.exit)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(CliError::new(
                "usage",
                2,
                first.trim_start_matches("error: "),
            ));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
