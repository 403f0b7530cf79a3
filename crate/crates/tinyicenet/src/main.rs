use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tinyicenet::checkpoint::{Checkpoint, CheckpointModel, TrainingMeta};
use tinyicenet::pipeline::{self, DESK_SCENES, DESK_SIZE};
use tinyicenet::report;
use tinyicenet_core::dataflow::{cycle_report, minimal_configs, resource_estimate, schedule_pipeline, LayerConfigs};
use tinyicenet_core::eval::{evaluate_model, Averaging};
use tinyicenet_core::model::build_tinyicenet;
use tinyicenet_core::quant::{bitwidth_sweep, ptq_calibrate, qat_train, QuantSpec, ScaleMode};
use tinyicenet_core::train::{train_loop, TrainConfig};
use tinyicenet_core::{FixedFormat, ModelGraph, IGNORE_LABEL};

#[derive(Parser)]
#[command(name = "tinyicenet", version, about = "Sea-ice segmentation experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene corpus.
    Generate(GenerateArgs),
    /// Train a float (or quantization-aware) model; writes checkpoint.tin and history.csv.
    Train(TrainArgs),
    /// Per-scene and pooled F1; writes eval.csv.
    Eval(EvalArgs),
    /// Post-training quantization; writes quantized_<bits>.tin.
    Quantize(QuantizeArgs),
    /// F1 against weight bitwidth; writes sweep.csv.
    Sweep(SweepArgs),
    /// Label maps as binary PGM files, one per scene.
    Infer(InferArgs),
    /// Cycle and resource estimates; writes cycles.csv and resources.csv.
    Simulate(SimulateArgs),
    /// Allocate unrolling under a budget; writes dataflow.csv and cycles.csv.
    Schedule(ScheduleArgs),
    /// Merge CSV files into summary.csv together with model counts.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    num_classes: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Float,
    Pow2,
}

impl From<Mode> for ScaleMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Float => ScaleMode::FloatScale,
            Mode::Pow2 => ScaleMode::PowerOfTwo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Weighted,
    Macro,
    Micro,
}

impl From<Metric> for Averaging {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Weighted => Averaging::Weighted,
            Metric::Macro => Averaging::Macro,
            Metric::Micro => Averaging::Micro,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// 64 scenes of 64x64.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenes: PathBuf,
    /// 8 epochs x 50 steps of batch 4 instead of the full schedule.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Fine-tune with fake-quantized weights and export a quantized checkpoint.
    #[arg(long)]
    qat_bits: Option<u32>,
    /// Float checkpoint to start quantization-aware training from.
    #[arg(long, requires = "qat_bits")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Float)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Metric::Weighted)]
    metric: Metric,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Weighted)]
    metric: Metric,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, value_enum, default_value_t = Mode::Float)]
    mode: Mode,
    /// Also round activations to the 16-bit fixed-point format when evaluating.
    #[arg(long)]
    act_quant: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "7,8,9,10,12,15,20,32")]
    bits_list: Vec<u32>,
    #[arg(long, value_enum, default_value_t = Mode::Float)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Metric::Weighted)]
    metric: Metric,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataflow config CSV (from `schedule`); minimal configs when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 200.0)]
    clock_mhz: f64,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    common: Common,
    /// Architecture source; the default TinyIceNet when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    uf_budget: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    bits: u32,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// CSV files to merge.
    inputs: Vec<PathBuf>,
}

fn out_dir(common: &Common) -> anyhow::Result<&Path> {
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    Ok(&common.out)
}

fn num_classes(common: &Common) -> anyhow::Result<usize> {
    if common.num_classes < 2 {
        bail!("--num-classes must be at least 2");
    }
    Ok(common.num_classes as usize)
}

fn load_float(path: &Path) -> anyhow::Result<(ModelGraph<f32>, TrainingMeta)> {
    let cp = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
    match cp.model {
        CheckpointModel::Float(g) => Ok((g, cp.meta)),
        CheckpointModel::Quantized(_) => bail!("{} is quantized; a float checkpoint is required", path.display()),
    }
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scenes(dir: &Path) -> anyhow::Result<Vec<tinyicenet_core::Scene>> {
    pipeline::load_scenes(dir).with_context(|| format!("loading scenes from {}", dir.display()))
}

fn weight_bits(cp: &Checkpoint, fallback: u32) -> u32 {
    match &cp.model {
        CheckpointModel::Quantized(q) => q.layers().iter().flatten().map(|l| l.params.bits).max().unwrap_or(fallback),
        CheckpointModel::Float(_) => fallback,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let (count, size) = if a.desk_scale { (DESK_SCENES, DESK_SIZE) } else { (a.count, a.size) };
            let paths = pipeline::generate_corpus(out_dir(&a.common)?, a.common.seed, count, size, num_classes(&a.common)?)?;
            println!("wrote {} scenes of {size}x{size} to {}", paths.len(), a.common.out.display());
        }
        Command::Train(a) => {
            let mut cfg = if a.desk_scale {
                TrainConfig::desk(a.common.seed)
            } else {
                TrainConfig::full(a.common.seed)
            };
            cfg.num_classes = num_classes(&a.common)?;
            cfg.averaging = a.metric.into();
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            if let Some(s) = a.steps_per_epoch {
                cfg.steps_per_epoch = s;
            }
            let scenes = load_scenes(&a.scenes)?;
            let (tr, va) = pipeline::split(&scenes)?;
            let out = out_dir(&a.common)?;
            let init = a.checkpoint.as_deref().map(load_float).transpose()?.map(|(g, _)| g);
            let (cp, history) = match a.qat_bits {
                Some(bits) => {
                    let spec = QuantSpec::new(bits, a.mode.into())?;
                    let q = qat_train(&cfg, spec, init.as_ref(), tr, va, &mut |_| {})?;
                    let meta = TrainingMeta {
                        epoch: q.training.best_epoch,
                        val_f1: q.training.best_val_f1,
                        seed: cfg.seed,
                    };
                    (Checkpoint::quantized(q.quantized, meta), q.training.history)
                }
                None => {
                    let t = train_loop(&cfg, tr, va, &mut |_| {})?;
                    let meta = TrainingMeta {
                        epoch: t.best_epoch,
                        val_f1: t.best_val_f1,
                        seed: cfg.seed,
                    };
                    (Checkpoint::float(t.best, meta), t.history)
                }
            };
            cp.write(out.join("checkpoint.tin"))?;
            report::save_history(&out.join("history.csv"), &history)?;
            println!("best epoch {} val_f1 {:.4}", cp.meta.epoch, cp.meta.val_f1);
        }
        Command::Eval(a) => {
            let cp = load_checkpoint(&a.checkpoint)?;
            let scenes = load_scenes(&a.scenes)?;
            let r = evaluate_model(cp.segmenter(), &scenes, IGNORE_LABEL, a.metric.into())?;
            report::save_eval(&out_dir(&a.common)?.join("eval.csv"), &r)?;
            println!("f1 {:.4} over {} scenes", r.aggregate.value, scenes.len());
        }
        Command::Quantize(a) => {
            let (g, meta) = load_float(&a.checkpoint)?;
            let q = ptq_calibrate(&g, QuantSpec::new(a.bits, a.mode.into())?)?.with_activation_quantization(a.act_quant);
            let path = out_dir(&a.common)?.join(format!("quantized_{}.tin", a.bits));
            Checkpoint::quantized(q, meta).write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Sweep(a) => {
            let (g, _) = load_float(&a.checkpoint)?;
            let scenes = load_scenes(&a.scenes)?;
            let rows = bitwidth_sweep(&g, &scenes, &a.bits_list, a.mode.into(), a.metric.into(), IGNORE_LABEL)?;
            report::save_sweep(&out_dir(&a.common)?.join("sweep.csv"), &rows)?;
            for r in &rows {
                println!("{:>2} bits  f1 {:.4}", r.bits, r.f1);
            }
        }
        Command::Infer(a) => {
            let cp = load_checkpoint(&a.checkpoint)?;
            let scenes = load_scenes(&a.scenes)?;
            let out = out_dir(&a.common)?;
            for s in &scenes {
                let labels = cp.segmenter().segment(&s.input_tensor())?;
                let mut pgm = format!("P5\n{} {}\n255\n", s.width, s.height).into_bytes();
                pgm.extend_from_slice(labels.data());
                let path = out.join(format!("{}.pgm", s.id));
                std::fs::write(&path, pgm).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("wrote {} label maps", scenes.len());
        }
        Command::Simulate(a) => {
            let cp = load_checkpoint(&a.checkpoint)?;
            let g = cp.graph().clone().with_input_size(a.size, a.size);
            let configs: LayerConfigs = match &a.config {
                Some(p) => report::read_configs(p)?,
                None => minimal_configs(&g, FixedFormat::ACTIVATION_DEFAULT, weight_bits(&cp, a.bits)),
            };
            let cycles = cycle_report(&g, a.size, a.size, &configs)?;
            let res = resource_estimate(&g, a.size, a.size, &configs)?;
            let out = out_dir(&a.common)?;
            report::save_cycles(&out.join("cycles.csv"), &cycles)?;
            report::save_resources(&out.join("resources.csv"), &res)?;
            println!(
                "bottleneck {} cycles, {:.2} fps at {} MHz, {} MAC units",
                cycles.bottleneck_cycles(),
                cycles.fps(a.clock_mhz),
                a.clock_mhz,
                res.total.mac_units
            );
        }
        Command::Schedule(a) => {
            let (g, bits) = match &a.checkpoint {
                Some(p) => {
                    let cp = load_checkpoint(p)?;
                    let bits = weight_bits(&cp, a.bits);
                    (cp.graph().clone(), bits)
                }
                None => (build_tinyicenet::<f32>(num_classes(&a.common)?, a.common.seed)?, a.bits),
            };
            let g = g.with_input_size(a.size, a.size);
            let s = schedule_pipeline(&g, a.size, a.size, a.uf_budget, FixedFormat::ACTIVATION_DEFAULT, bits)?;
            let out = out_dir(&a.common)?;
            report::save_configs(&out.join("dataflow.csv"), &s.configs)?;
            report::save_cycles(&out.join("cycles.csv"), &s.report)?;
            println!(
                "bottleneck {} cycles using {} of {} unroll budget",
                s.report.bottleneck_cycles(),
                s.budget_used,
                a.uf_budget
            );
        }
        Command::Report(a) => {
            let out = out_dir(&a.common)?;
            let g = build_tinyicenet::<f32>(num_classes(&a.common)?, a.common.seed)?;
            let macs = g.count_macs((2, a.size, a.size))?;
            let model_csv = out.join("model.csv");
            let mut w = csv::Writer::from_path(&model_csv)?;
            w.write_record(["params", "conv_macs", "elementwise_ops", "size"])?;
            w.write_record([g.count_params(), macs.conv_macs as usize, macs.elementwise_ops as usize, a.size].map(|v| v.to_string()))?;
            w.flush()?;
            drop(w);
            let mut inputs: Vec<&Path> = vec![&model_csv];
            inputs.extend(a.inputs.iter().map(PathBuf::as_path));
            let mut buf = Vec::new();
            report::merge(&mut buf, &inputs)?;
            let path = out.join("summary.csv");
            std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
            println!(
                "params {} conv MACs {} elementwise ops {}",
                g.count_params(),
                macs.conv_macs,
                macs.elementwise_ops
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
