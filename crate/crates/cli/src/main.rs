use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pedfuse_core::anchors::{default_box_layout, AnchorConfig, LayerSpec};
use pedfuse_core::eval::{compute_curve, Corpus, EvalSetting, DEFAULT_MATCH_IOU};
use pedfuse_core::fusion::{
    passes_collection, FusionParams, MissingVerdictPolicy, Prefilter, HARD_CLASSIFIER_THRESHOLD,
    HARD_MIN_COVERAGE,
};
use pedfuse_core::io::{self as formats, LabelRecord};
use pedfuse_core::pipeline::{run_pipeline, PipelineOptions, Rejection, RunConfig};
use pedfuse_core::sim::{
    generate_corpus, simulate_verdict_set, synthesize_mask, CorpusConfig, SceneConfig, SimClassifierSpec,
};
use pedfuse_core::{label_candidates, Candidate};

mod classifier;

#[derive(Parser, Debug)]
#[command(
    name = "pedfuse",
    version,
    about = "Soft-rejection detection fusion and Caltech-style evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuse candidate scores with classifier verdicts and segmentation masks.
    Fuse(FuseArgs),
    /// Fuse, then report log-average miss rate per evaluation setting.
    Eval(EvalArgs),
    /// Write the FPPI / miss-rate curve of a detection file as CSV.
    Curve(CurveArgs),
    /// Label candidates against ground truth for classifier training.
    Label(LabelArgs),
    /// Emit the default-box grid of one output layer as detections.
    Anchors(AnchorArgs),
    /// Generate a seeded synthetic corpus with simulated classifiers and masks.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
struct FusionFlags {
    /// Classifier probability that leaves a score unchanged.
    #[arg(long = "a-c", default_value_t = 0.7)]
    a_c: f64,
    /// Lower bound of a classifier factor.
    #[arg(long = "b-c", default_value_t = 0.1)]
    b_c: f64,
    /// Slope of the segmentation factor.
    #[arg(long = "a-ss", default_value_t = 4.0)]
    a_ss: f64,
    /// Lower bound of the segmentation factor.
    #[arg(long = "b-ss", default_value_t = 0.35)]
    b_ss: f64,
    /// Mask coverage above which the segmentation vote accepts unchanged.
    #[arg(long = "ss-accept", default_value_t = 0.2)]
    ss_accept: f64,
    /// Candidates need a generator score strictly above this to be collected.
    #[arg(long = "min-score", default_value_t = 0.01)]
    min_score: f64,
    /// Candidates need a box height strictly above this to be collected.
    #[arg(long = "min-height", default_value_t = 40.0)]
    min_height: f64,
}

impl FusionFlags {
    fn params(&self) -> FusionParams {
        FusionParams {
            a_c: self.a_c,
            b_c: self.b_c,
            a_ss: self.a_ss,
            b_ss: self.b_ss,
            ss_accept_ratio: self.ss_accept,
            collect_min_score: self.min_score,
            collect_min_height_px: self.min_height,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PrefilterArg {
    Off,
    Drop,
    Skip,
}

#[derive(Args, Debug, Clone)]
struct PipelineFlags {
    /// Candidate detections (JSON Lines).
    #[arg(long, short)]
    detections: PathBuf,
    /// Classifier verdict files (JSON Lines); repeatable.
    #[arg(long = "verdicts", short)]
    verdicts: Vec<PathBuf>,
    /// Directory of `<frame>.pgm` segmentation masks.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Greedy NMS IoU threshold applied after fusion.
    #[arg(long)]
    nms: Option<f64>,
    /// Hard rejection instead of soft fusion.
    #[arg(long)]
    hard: bool,
    #[arg(long, default_value_t = HARD_CLASSIFIER_THRESHOLD)]
    hard_threshold: f64,
    #[arg(long, default_value_t = HARD_MIN_COVERAGE)]
    hard_min_coverage: f64,
    /// Treat missing verdicts as neutral instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Collection-threshold gating of classifier fusion.
    #[arg(long, value_enum, default_value_t = PrefilterArg::Off)]
    prefilter: PrefilterArg,
    #[command(flatten)]
    fusion: FusionFlags,
}

impl PipelineFlags {
    fn run_config(&self, annotations: Option<PathBuf>, setting: EvalSetting) -> RunConfig {
        RunConfig {
            detections: self.detections.clone(),
            annotations,
            verdict_files: self.verdicts.clone(),
            mask_dir: self.masks.clone(),
            options: PipelineOptions {
                fusion: self.fusion.params(),
                missing: if self.lenient {
                    MissingVerdictPolicy::Lenient
                } else {
                    MissingVerdictPolicy::Strict
                },
                prefilter: match self.prefilter {
                    PrefilterArg::Off => Prefilter::Off,
                    PrefilterArg::Drop => Prefilter::Drop,
                    PrefilterArg::Skip => Prefilter::Skip,
                },
                rejection: if self.hard {
                    Rejection::Hard
                } else {
                    Rejection::Soft
                },
                hard_threshold: self.hard_threshold,
                hard_min_coverage: self.hard_min_coverage,
                nms_iou: self.nms,
                setting,
                match_iou: DEFAULT_MATCH_IOU,
            },
        }
    }
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    pipeline: PipelineFlags,
    /// Ground-truth annotations (JSON Lines).
    #[arg(long, short)]
    annotations: PathBuf,
    /// Evaluation settings; all eight standard settings when omitted.
    #[arg(long = "setting", short)]
    settings: Vec<String>,
    /// Write the curve of the (single) requested setting as CSV.
    #[arg(long)]
    curve_out: Option<PathBuf>,
    /// Write the fused detections.
    #[arg(long)]
    fused_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[arg(long, short)]
    detections: PathBuf,
    #[arg(long, short)]
    annotations: PathBuf,
    #[arg(long, short, default_value = "reasonable")]
    setting: String,
    #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
    iou: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long, short)]
    detections: PathBuf,
    #[arg(long, short)]
    annotations: PathBuf,
    /// Label every candidate, ignoring the collection thresholds.
    #[arg(long)]
    all: bool,
    #[arg(long = "min-score", default_value_t = 0.01)]
    min_score: f64,
    #[arg(long = "min-height", default_value_t = 40.0)]
    min_height: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnchorArgs {
    /// Feature-map grid as WxH, e.g. 38x38.
    #[arg(long, value_parser = parse_grid)]
    grid: (usize, usize),
    /// Output layer index, 0..=6.
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value_t = 640.0)]
    image_w: f64,
    #[arg(long, default_value_t = 480.0)]
    image_h: f64,
    /// Frame id written on every box.
    #[arg(long, default_value = "anchors")]
    frame: String,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    min_pedestrians: usize,
    #[arg(long, default_value_t = 3)]
    max_pedestrians: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Background candidates per pedestrian.
    #[arg(long, default_value_t = 2.4)]
    fp_ratio: f64,
    /// Relative jitter of true-positive candidate boxes.
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
    /// Simulated classifiers: `oracle`, `noisy:TPR:FPR`, optionally `NAME=` prefixed.
    #[arg(long = "classifier", short)]
    classifiers: Vec<String>,
    /// Also write masks with this coverage quality in [0, 1].
    #[arg(long)]
    mask_quality: Option<f64>,
    /// Confidence threshold the noisy classifiers are calibrated against.
    #[arg(long = "a-c", default_value_t = 0.7)]
    a_c: f64,
    #[arg(long, short)]
    out_dir: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad grid size '{v}': {e}"))
    };
    Ok((parse(w)?, parse(h)?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn fuse(args: FuseArgs) -> Result<()> {
    let config = args.pipeline.run_config(None, EvalSetting::reasonable());
    let result = run_pipeline(&config)?;
    let mut out = output(args.out.as_deref())?;
    formats::write_detections(&mut out, &result.detections)?;
    out.flush()?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let settings = if args.settings.is_empty() {
        EvalSetting::standard().to_vec()
    } else {
        args.settings
            .iter()
            .map(|s| EvalSetting::from_name(s))
            .collect::<Result<_, _>>()?
    };
    if args.curve_out.is_some() && settings.len() != 1 {
        bail!("--curve-out needs exactly one --setting");
    }

    // Fuse once; every setting only changes ground-truth filtering.
    let config = args.pipeline.run_config(None, settings[0].clone());
    let fused = run_pipeline(&config)?.detections;
    let gt = formats::read_annotations(&args.annotations)?;
    let input_frames: Vec<String> = formats::read_detections(&args.pipeline.detections)?
        .into_iter()
        .map(|c| c.frame_id)
        .collect();
    let corpus = Corpus::new(fused.clone(), gt).with_frames(input_frames);

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "setting\tlamr")?;
    for setting in &settings {
        match compute_curve(&corpus, setting, DEFAULT_MATCH_IOU) {
            Ok(curve) => {
                writeln!(stdout, "{}\t{:.6}", setting.name, curve.lamr())?;
                if let Some(path) = &args.curve_out {
                    formats::write_curve(path, &curve)?;
                }
            }
            Err(pedfuse_core::Error::NoEvaluatedGroundTruth(_)) if settings.len() > 1 => {
                writeln!(stdout, "{}\tn/a", setting.name)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(path) = &args.fused_out {
        formats::write_detections_file(path, &fused)?;
    }
    Ok(())
}

fn curve(args: CurveArgs) -> Result<()> {
    let setting = EvalSetting::from_name(&args.setting)?;
    let dets = formats::read_detections(&args.detections)?;
    let gt = formats::read_annotations(&args.annotations)?;
    let corpus = Corpus::new(dets, gt);
    let curve = compute_curve(&corpus, &setting, args.iou)?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(curve.to_csv().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn label(args: LabelArgs) -> Result<()> {
    let params = FusionParams {
        collect_min_score: args.min_score,
        collect_min_height_px: args.min_height,
        ..FusionParams::default()
    };
    let dets = formats::read_detections(&args.detections)?;
    let gt = formats::read_annotations(&args.annotations)?;
    let corpus = Corpus::new(Vec::new(), gt);

    let mut records = Vec::new();
    for c in dets.iter().filter(|c| args.all || passes_collection(c, &params)) {
        let frame_gt = corpus
            .frames
            .get(&c.frame_id)
            .map(|f| f.ground_truth.as_slice())
            .unwrap_or_default();
        let positive = label_candidates(&[c.bbox], frame_gt)[0];
        records.push(LabelRecord {
            id: c.id.clone(),
            frame: c.frame_id.clone(),
            label: u8::from(positive),
        });
    }
    let mut out = output(args.out.as_deref())?;
    formats::write_labels(&mut out, &records)?;
    out.flush()?;
    Ok(())
}

fn anchors(args: AnchorArgs) -> Result<()> {
    let config = AnchorConfig::default().with_image_size(args.image_w, args.image_h)?;
    let layer = LayerSpec::new(args.grid.0, args.grid.1, args.layer)?;
    let boxes: Vec<Candidate> = default_box_layout(layer, &config)
        .into_iter()
        .map(|d| {
            let id = format!(
                "l{}-r{}-c{}-{}",
                args.layer, d.row, d.col, config.shapes[d.shape_index].name
            );
            Candidate::new(id, args.frame.clone(), d.bbox, 0.0)
        })
        .collect::<Result<_, _>>()?;
    let mut out = output(args.out.as_deref())?;
    formats::write_detections(&mut out, &boxes)?;
    out.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let specs = args
        .classifiers
        .iter()
        .enumerate()
        .map(|(i, s)| classifier::parse_classifier(s, i, args.seed))
        .collect::<Result<Vec<SimClassifierSpec>>>()?;
    let corpus = generate_corpus(&CorpusConfig {
        frames: args.frames,
        pedestrians: (args.min_pedestrians, args.max_pedestrians),
        scene: SceneConfig {
            fp_ratio: args.fp_ratio,
            jitter: args.jitter,
            ..SceneConfig::default()
        },
        seed: args.seed,
    })?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let candidates: Vec<Candidate> = corpus.iter().flat_map(|s| s.candidates.clone()).collect();
    let gt: Vec<_> = corpus.iter().flat_map(|s| s.gt.clone()).collect();
    formats::write_detections_file(args.out_dir.join("detections.jsonl"), &candidates)?;
    formats::write_annotations_file(args.out_dir.join("annotations.jsonl"), &gt)?;

    for spec in &specs {
        let set = simulate_verdict_set(&corpus, spec, args.a_c)?;
        let path = args
            .out_dir
            .join(format!("verdicts_{}.jsonl", spec.classifier_id));
        formats::write_verdicts_file(path, &set)?;
    }

    if let Some(quality) = args.mask_quality {
        let dir = args.out_dir.join("masks");
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for scene in &corpus {
            let mask = synthesize_mask(scene, quality)?;
            formats::write_mask(formats::mask_path(&dir, &scene.frame_id), &mask)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Curve(a) => curve(a),
        Command::Label(a) => label(a),
        Command::Anchors(a) => anchors(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<io::Error>()
            .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pedfuse: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
