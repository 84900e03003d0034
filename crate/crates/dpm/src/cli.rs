//! Command-line pipeline: detection, model compilation, codebook training,
//! prune calibration, and baseline/optimized benchmarking.
//!
//! Every knob of the detector is a flag so any measured configuration can be
//! reproduced exactly; identical inputs and seeds produce byte-identical
//! output files.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bytes::write_file_atomic;
use crate::engine::{
    self, calibrate_prune_threshold, detect, DeformMode, DetectorConfig, EngineError, PruneMode,
};
use crate::frontend::{load_image, pyramid_features, FrontendError, Image, PyramidConfig};
use crate::math::Vec13;
use crate::metrics::{CostLedger, CostReport};
use crate::model::{
    compile, load_compiled, load_model, serialize_compiled, CompiledModel, ModelError,
    DEFAULT_MIN_ZEROS,
};
use crate::oracle::dense_scores;
use crate::vq::{train_codebook_traced, Codebook, VqError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Image(#[from] crate::frontend::ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "dpm",
    about = "Multi-scale deformable-parts-model detector with pruning, feature vector quantization, sparse projected classifiers, and cost accounting"
)]
pub struct RunConfig {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect objects in an image with one or more compiled models.
    Detect(DetectArgs),
    /// Compile a source model: choose a basis, sparsify, write the compiled file.
    Compile(CompileArgs),
    /// Train a feature codebook from sample images.
    TrainCodebook(TrainCodebookArgs),
    /// Compute the prune threshold for a target keep fraction on an image.
    CalibratePrune(CalibratePruneArgs),
    /// Run the dense reference and the optimized pipeline; report equivalence
    /// and cost ratios.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DeformArg {
    Exhaustive,
    C2f,
}

impl From<DeformArg> for DeformMode {
    fn from(d: DeformArg) -> DeformMode {
        match d {
            DeformArg::Exhaustive => DeformMode::Exhaustive,
            DeformArg::C2f => DeformMode::CoarseToFine,
        }
    }
}

#[derive(Debug, Args)]
struct DetectorFlags {
    /// Fraction of root placements whose parts are pruned away.
    #[arg(long, default_value_t = 0.97)]
    prune_fraction: f64,
    /// Fixed prune threshold on bias-free root scores; overrides the fraction.
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    parts: Switch,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    projection: Switch,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    vq: Switch,
    #[arg(long, value_enum, default_value_t = DeformArg::C2f)]
    deform: DeformArg,
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
}

impl DetectorFlags {
    fn to_config(&self) -> DetectorConfig {
        DetectorConfig {
            prune: match self.prune_threshold {
                Some(t) => PruneMode::Threshold(t),
                None => PruneMode::Fraction(self.prune_fraction),
            },
            parts_enabled: self.parts.is_on(),
            vq_enabled: self.vq.is_on(),
            projection_enabled: self.projection.is_on(),
            deform_mode: self.deform.into(),
            nms_iou: self.nms_iou,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Input frame (binary PGM or PPM).
    #[arg(long)]
    image: PathBuf,
    /// Compiled model file; repeat to detect several classes over shared
    /// features.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Codebook file, required when --vq on.
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[command(flatten)]
    flags: DetectorFlags,
    /// Write detections as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a PPM copy of the frame with detection boxes drawn in.
    #[arg(long)]
    annotate: Option<PathBuf>,
    /// Write the cost report as JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompileArgs {
    /// Source model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Optional codebook to check feature compatibility against.
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Output compiled model file.
    #[arg(long)]
    out: PathBuf,
    /// Minimum zero coefficients per projected cell.
    #[arg(long, default_value_t = DEFAULT_MIN_ZEROS)]
    min_zeros: usize,
}

#[derive(Debug, Args)]
struct TrainCodebookArgs {
    /// Sample image; repeatable.
    #[arg(long, required = true)]
    image: Vec<PathBuf>,
    /// Number of centers.
    #[arg(short, long, default_value_t = 256)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output codebook file.
    #[arg(long)]
    out: PathBuf,
    /// Cap on training samples; cells are taken at a uniform stride.
    #[arg(long, default_value_t = 16_384)]
    max_samples: usize,
}

#[derive(Debug, Args)]
struct CalibratePruneArgs {
    #[arg(long)]
    image: PathBuf,
    /// Compiled model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.97)]
    prune_fraction: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    projection: Switch,
    /// Write the threshold as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    image: PathBuf,
    /// Source model (JSON); the bench compiles it itself.
    #[arg(long)]
    model: PathBuf,
    /// Codebook for the optimized run, required when --vq on.
    #[arg(long)]
    codebook: Option<PathBuf>,
    #[command(flatten)]
    flags: DetectorFlags,
    /// Minimum zero coefficients for the optimized compile.
    #[arg(long, default_value_t = DEFAULT_MIN_ZEROS)]
    min_zeros: usize,
    /// Write the cost report as JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

/// Parse the process arguments and run the selected command.
pub fn run() -> Result<(), CliError> {
    dispatch(RunConfig::parse())
}

fn dispatch(cfg: RunConfig) -> Result<(), CliError> {
    match cfg.command {
        Command::Detect(args) => cmd_detect(args),
        Command::Compile(args) => cmd_compile(args),
        Command::TrainCodebook(args) => cmd_train_codebook(args),
        Command::CalibratePrune(args) => cmd_calibrate_prune(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn load_codebook_arg(path: &Option<PathBuf>) -> Result<Option<Codebook>, CliError> {
    Ok(match path {
        Some(p) => Some(Codebook::load(p)?),
        None => None,
    })
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let img = load_image(&args.image)?;
    let models = args
        .model
        .iter()
        .map(|p| load_compiled(p))
        .collect::<Result<Vec<CompiledModel>, _>>()?;
    let codebook = load_codebook_arg(&args.codebook)?;
    let cfg = args.flags.to_config();

    let output = detect(&img, &models, codebook.as_ref(), &cfg)?;

    println!(
        "{} detection(s) over {} model(s), {} of {} candidates kept",
        output.detections.len(),
        models.len(),
        output.ledger.candidates_kept,
        output.ledger.candidates_total
    );
    for d in &output.detections {
        println!(
            "  {} score {:.4} level {} bbox [{}, {}, {}, {}]{}",
            d.class_name,
            d.score,
            d.level,
            d.bbox[0],
            d.bbox[1],
            d.bbox[2],
            d.bbox[3],
            if d.root_only { " (root only)" } else { "" }
        );
    }

    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&output.detections)
            .expect("detection serialization cannot fail");
        write_file_atomic(out, json.as_bytes())?;
    }
    if let Some(path) = &args.annotate {
        let class_order: Vec<String> = models.iter().map(|m| m.class_name.clone()).collect();
        let annotated = annotate(&img, &output.detections, &class_order);
        annotated.save_pnm(path)?;
    }
    if let Some(path) = &args.metrics {
        write_file_atomic(path, output.report.to_json_pretty().as_bytes())?;
    }
    Ok(())
}

fn cmd_compile(args: CompileArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    // A codebook argument only validates compatibility; the load rejects any
    // dimensionality mismatch.
    let _ = load_codebook_arg(&args.codebook)?;
    let cm = compile(&model, args.min_zeros)?;
    serialize_compiled(&cm, &args.out)?;
    println!(
        "compiled {}: {} weight cells, zero fraction {:.1}%, max {} nonzero/cell, {} -> {} weight bytes",
        cm.class_name,
        cm.total_weight_cells(),
        cm.zero_fraction() * 100.0,
        cm.max_nonzeros_per_cell(),
        cm.dense_weight_bytes(),
        cm.sparse_weight_bytes(),
    );
    Ok(())
}

fn cmd_train_codebook(args: TrainCodebookArgs) -> Result<(), CliError> {
    let mut samples: Vec<Vec13> = Vec::new();
    let mut total_cells = 0usize;
    for path in &args.image {
        let img = load_image(path)?;
        let mut ledger = CostLedger::new();
        let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger)?;
        for level in &fp.levels {
            for i in 0..level.grid.cell_count() {
                total_cells += 1;
                samples.push(level.grid.cell_array(i % level.grid.cols, i / level.grid.cols));
            }
        }
    }
    if samples.len() > args.max_samples {
        let stride = samples.len() as f64 / args.max_samples as f64;
        samples = (0..args.max_samples)
            .map(|i| samples[(i as f64 * stride) as usize])
            .collect();
    }
    let (cb, trace) = train_codebook_traced(&samples, args.k, args.seed)?;
    cb.save(&args.out)?;
    println!(
        "trained {} centers from {} samples ({} cells seen), {} iterations, final distortion {:.6e}",
        cb.k(),
        samples.len(),
        total_cells,
        trace.len(),
        trace.last().unwrap_or(&0.0)
    );
    Ok(())
}

fn cmd_calibrate_prune(args: CalibratePruneArgs) -> Result<(), CliError> {
    let img = load_image(&args.image)?;
    let cm = load_compiled(&args.model)?;
    let mut ledger = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger)?;
    let sm = engine::root_scores(&fp, &cm, true, args.projection.is_on(), &mut ledger);
    let threshold = calibrate_prune_threshold(&sm, args.prune_fraction)?;
    println!(
        "prune_threshold {:.17e} keeps {} of {} placements at fraction {}",
        threshold,
        sm.iter_scores().filter(|&s| s >= threshold).count(),
        sm.placement_count(),
        args.prune_fraction
    );
    if let Some(out) = &args.out {
        let json = format!(
            "{{\n  \"prune_fraction\": {},\n  \"prune_threshold\": {}\n}}\n",
            args.prune_fraction, threshold
        );
        write_file_atomic(out, json.as_bytes())?;
    }
    Ok(())
}

const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let img = load_image(&args.image)?;
    let model = load_model(&args.model)?;
    let codebook = load_codebook_arg(&args.codebook)?;

    let mut frame_ledger = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame_ledger)?;

    // Dense reference scores.
    let mut oracle_ledger = CostLedger::new();
    let dense = dense_scores(&fp, &model, &mut oracle_ledger);

    // Reference engine configuration: lossless compile, nothing optimized.
    let reference = compile(&model, 0)?;
    let mut reference_ledger = frame_ledger.clone();
    let ref_scores = engine::total_scores(
        &fp,
        &reference,
        None,
        None,
        &DetectorConfig::reference(),
        &mut reference_ledger,
    )?;

    let mut max_rel = 0.0f64;
    let mut compared = 0usize;
    for (level, x, y, w) in ref_scores.iter_windows() {
        let expect = dense
            .total_at(level, x, y)
            .expect("dense result covers every engine window");
        let rel = (w.total - expect).abs() / expect.abs().max(w.total.abs()).max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
        compared += 1;
    }

    // Optimized run over the same pyramid.
    let optimized = compile(&model, args.min_zeros)?;
    let cfg = args.flags.to_config();
    let mut optimized_ledger = frame_ledger;
    let detections = engine::detect_on_pyramid(
        &fp,
        (img.width, img.height),
        std::slice::from_ref(&optimized),
        codebook.as_ref(),
        &cfg,
        &mut optimized_ledger,
    )?;

    let report = CostReport::compare(&reference_ledger, &optimized_ledger);
    println!(
        "equivalence: {} windows compared, max relative deviation {:.3e}",
        compared, max_rel
    );
    println!("optimized run: {} detection(s)", detections.len());
    println!("{}", report.to_json_pretty());
    if let Some(path) = &args.metrics {
        write_file_atomic(path, report.to_json_pretty().as_bytes())?;
    }

    if max_rel > EQUIVALENCE_TOLERANCE {
        return Err(CliError::Invalid(format!(
            "equivalence FAIL: max relative deviation {max_rel:.3e} exceeds {EQUIVALENCE_TOLERANCE:.0e}"
        )));
    }
    println!("equivalence verdict: PASS");
    Ok(())
}

const PALETTE: [[u8; 3]; 6] = [
    [255, 64, 64],
    [64, 220, 64],
    [80, 120, 255],
    [240, 220, 40],
    [230, 60, 230],
    [40, 230, 230],
];

/// Copy the frame to RGB and burn in detection rectangles, colored by class.
fn annotate(img: &Image, detections: &[engine::Detection], class_order: &[String]) -> Image {
    let mut rgb = img.to_rgb();
    for d in detections {
        let class_idx = class_order
            .iter()
            .position(|c| *c == d.class_name)
            .unwrap_or(0);
        let color = PALETTE[class_idx % PALETTE.len()];
        draw_box(&mut rgb, &d.bbox, color);
    }
    rgb
}

fn draw_box(img: &mut Image, bbox: &[i64; 4], color: [u8; 3]) {
    let (w, h) = (img.width as i64, img.height as i64);
    let x0 = bbox[0].clamp(0, w - 1);
    let y0 = bbox[1].clamp(0, h - 1);
    let x1 = (bbox[0] + bbox[2] - 1).clamp(0, w - 1);
    let y1 = (bbox[1] + bbox[3] - 1).clamp(0, h - 1);
    let mut put = |x: i64, y: i64| {
        let base = (y as usize * img.width + x as usize) * 3;
        img.data[base..base + 3].copy_from_slice(&color);
    };
    for t in 0..2i64 {
        for x in x0..=x1 {
            put(x, (y0 + t).min(y1));
            put(x, (y1 - t).max(y0));
        }
        for y in y0..=y1 {
            put((x0 + t).min(x1), y);
            put((x1 - t).max(x0), y);
        }
    }
}
