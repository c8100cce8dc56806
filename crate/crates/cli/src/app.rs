use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowseg_core::association::AssocMode;
use flowseg_core::evaluation::Protocol;

use crate::commands;
use crate::config::PipelineConfig;
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "flowseg", version, about = "Flow-guided moving-object segmentation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Frame,
    Sequence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    TemporalConsistency,
    HungarianOnly,
    PropagationOnly,
}

/// Options shared by every dataset command; flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Comma-separated sequence names.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Option<Vec<String>>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Comma-separated consistency offsets, e.g. `1,2,-1,-2`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub deltas: Option<Vec<i32>>,
}

impl Common {
    pub fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.root {
            cfg.root = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.protocol {
            cfg.protocol = match v {
                ProtocolArg::Frame => Protocol::Frame,
                ProtocolArg::Sequence => Protocol::Sequence,
            };
        }
        if let Some(v) = &self.sequences {
            cfg.sequences = v.clone();
        }
        if let Some(v) = self.top_n {
            cfg.selection.top_n = v;
        }
        if let Some(v) = self.nms_iou {
            cfg.selection.nms_iou_threshold = v;
        }
        if let Some(v) = self.mode {
            cfg.assoc.mode = match v {
                ModeArg::TemporalConsistency => AssocMode::TemporalConsistency,
                ModeArg::HungarianOnly => AssocMode::HungarianOnly,
                ModeArg::PropagationOnly => AssocMode::PropagationOnly,
            };
        }
        if let Some(v) = &self.deltas {
            cfg.assoc.deltas = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sequences under the dataset root.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        num_sequences: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        num_frames: Option<usize>,
        #[arg(long)]
        num_objects: Option<usize>,
        #[arg(long)]
        permute_prob: Option<f64>,
        #[arg(long)]
        dropout_prob: Option<f64>,
        #[arg(long)]
        jitter_px: Option<u32>,
        #[arg(long)]
        flow_outlier_prob: Option<f64>,
        #[arg(long)]
        duplicates: Option<usize>,
    },
    /// Filter and layer candidate masks per frame.
    Select {
        #[command(flatten)]
        common: Common,
    },
    /// Link per-frame selections into tracks.
    Associate {
        #[command(flatten)]
        common: Common,
        /// Folder under `<out>/<seq>` holding per-frame predictions.
        #[arg(long, default_value = "frames")]
        input: String,
    },
    /// Fill gaps in one prediction set with another.
    Combine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        front: String,
        #[arg(long)]
        back: String,
    },
    /// Score predictions against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "tracks")]
        input: String,
    },
    /// select, associate and eval in one go.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Render a .flo file with the standard color wheel.
    FlowVis {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Fixed normalizer in pixels; per-frame maximum when absent.
        #[arg(long)]
        max_flow: Option<f64>,
    },
    /// Reference training losses for a JSON batch.
    Losses {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth {
            common,
            num_sequences,
            seed,
            num_frames,
            num_objects,
            permute_prob,
            dropout_prob,
            jitter_px,
            flow_outlier_prob,
            duplicates,
        } => {
            let mut cfg = common.resolve()?;
            let s = &mut cfg.synth;
            if let Some(v) = num_sequences {
                s.num_sequences = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = num_frames {
                s.num_frames = v;
            }
            if let Some(v) = num_objects {
                s.num_objects = v;
            }
            let c = &mut s.corruption;
            if let Some(v) = permute_prob {
                c.id_permute_prob = v;
            }
            if let Some(v) = dropout_prob {
                c.dropout_prob = v;
            }
            if let Some(v) = jitter_px {
                c.jitter_px = v;
            }
            if let Some(v) = flow_outlier_prob {
                c.flow_outlier_prob = v;
            }
            if let Some(v) = duplicates {
                c.duplicate_candidates = v;
            }
            cfg.validate()?;
            let names = commands::cmd_synth(&cfg)?;
            println!("wrote {} sequences to {}", names.len(), cfg.root.display());
        }
        Command::Select { common } => {
            let cfg = common.resolve()?;
            let names = commands::cmd_select(&cfg)?;
            println!("selected {} sequences", names.len());
        }
        Command::Associate { common, input } => {
            let cfg = common.resolve()?;
            let names = commands::cmd_associate(&cfg, &input)?;
            println!("associated {} sequences", names.len());
        }
        Command::Combine { common, front, back } => {
            let cfg = common.resolve()?;
            let names = commands::cmd_combine(&cfg, &front, &back)?;
            println!("combined {} sequences", names.len());
        }
        Command::Eval { common, input } => {
            let cfg = common.resolve()?;
            print_report(&commands::cmd_eval(&cfg, &input)?);
        }
        Command::Run { common } => {
            let cfg = common.resolve()?;
            print_report(&commands::cmd_run(&cfg)?);
        }
        Command::FlowVis {
            input,
            output,
            max_flow,
        } => commands::cmd_flow_vis(&input, &output, max_flow)?,
        Command::Losses { common, input } => {
            let cfg = common.resolve()?;
            let out = commands::cmd_losses(&cfg, &input)?;
            println!("{}", serde_json::to_string(&out).expect("loss output serializes"));
        }
    }
    Ok(())
}

fn print_report(r: &flowseg_core::evaluation::EvalReport) {
    println!(
        "J {:.4}  F {:.4}  J&F {:.4}  ({} sequences)",
        r.aggregate.j,
        r.aggregate.f,
        r.aggregate.jf,
        r.per_sequence.len()
    );
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
