mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridtd::io::{encode_png, encode_tensor};
use gridtd::operators::{bernoulli_masks, sample_observed};
use gridtd::rng::stream;
use gridtd::synth::{smooth_phantom, spectral_cube, MovingScene, Shape2d};
use gridtd::{Error, Tensor};

use config::{parse_config, parse_dims, RunConfig, Task};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "gridtd", version, about = "Grid-encoded tensor reconstructions for compressive imaging", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a reconstruction task or a benchmark.
    Run(RunArgs),
    /// Generate a synthetic scene or mask as a GTD1 file with PNG previews.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// inpaint, video-sci, spectral-sci, bench-dim, bench-efficiency or lipschitz-check
    task: Option<String>,
    #[arg(long = "task", value_name = "TASK")]
    task_flag: Option<String>,
    /// key = value config file with [run], [encoder], [solver] and [problem] sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// GTD1 ground-truth tensor; a synthetic scene is used otherwise
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    sr: Option<String>,
    /// Comma-separated extents, e.g. 32,32,8
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    n_min: Option<String>,
    #[arg(long)]
    n_max: Option<String>,
    #[arg(long)]
    table_len: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    rho0: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    /// on or off
    #[arg(long)]
    affine: Option<String>,
    #[arg(long)]
    inner_steps: Option<String>,
    #[arg(long)]
    outer_iters: Option<String>,
    #[arg(long)]
    lr_decay: Option<String>,
    #[arg(long)]
    early_stop: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    shift_step: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let pairs: [(&'static str, &Option<String>); 27] = [
            ("seed", &self.seed),
            ("out_dir", &self.out_dir),
            ("input", &self.input),
            ("mode", &self.mode),
            ("sr", &self.sr),
            ("dims", &self.dims),
            ("levels", &self.levels),
            ("features", &self.features),
            ("n_min", &self.n_min),
            ("n_max", &self.n_max),
            ("table_len", &self.table_len),
            ("hidden", &self.hidden),
            ("rho0", &self.rho0),
            ("kappa", &self.kappa),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("affine", &self.affine),
            ("inner_steps", &self.inner_steps),
            ("outer_iters", &self.outer_iters),
            ("lr_decay", &self.lr_decay),
            ("early_stop", &self.early_stop),
            ("noise", &self.noise),
            ("shift_step", &self.shift_step),
            ("trials", &self.trials),
            ("iters", &self.iters),
            ("steps", &self.steps),
            ("batch", &self.batch),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scene {
    MovingSquare,
    MovingDisc,
    Phantom,
    Spectral,
    /// 0/1 observation mask with exactly round(sr·N) ones
    SrMask,
    /// i.i.d. Bernoulli(p) 0/1 masks
    Bernoulli,
}

#[derive(Args)]
struct SynthArgs {
    scene: Scene,
    /// Output GTD1 file; PNG previews are written next to it
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "32,32,8")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-frame displacement as row,col
    #[arg(long, default_value = "1,1")]
    velocity: String,
    /// Object size in pixels (default: a quarter of the smaller side)
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    sr: f64,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Synth(args) => synth(args),
    }
}

fn invalid(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INVALID)
}

fn resolve(args: &RunArgs) -> Result<RunConfig, String> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("config: cannot read {}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => Vec::new(),
    };
    if let (Some(a), Some(b)) = (&args.task, &args.task_flag) {
        if a != b {
            return Err(format!("task: given as both '{a}' and '{b}'"));
        }
    }
    let task_text = args
        .task
        .clone()
        .or_else(|| args.task_flag.clone())
        .or_else(|| file.iter().find(|(k, _)| k == "task").map(|(_, v)| v.clone()))
        .ok_or("task: no task given")?;
    let task: Task = task_text.parse().map_err(|e| format!("task: {e}"))?;
    let mut cfg = RunConfig::defaults(task);
    for (k, v) in &file {
        if k != "task" {
            cfg.set(k, v).map_err(|e| e.to_string())?;
        }
    }
    for (k, v) in args.overrides() {
        cfg.set(k, v).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run(args: RunArgs) -> ExitCode {
    let cfg = match resolve(&args) {
        Ok(c) => c,
        Err(e) => return invalid(e),
    };
    let mut out = match tasks::run(&cfg) {
        Ok(o) => o,
        Err(e @ Error::NonFinite(_)) => {
            eprintln!("aborted: {e}");
            return ExitCode::from(EXIT_ABORT);
        }
        Err(e @ (Error::InvalidArgument(_) | Error::Format(_) | Error::OutOfDomain { .. })) => {
            return invalid(e)
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    out.files.push(("manifest.txt".into(), cfg.manifest().into_bytes()));
    if let Err(e) = out.write(&cfg.out_dir) {
        eprintln!("error: writing outputs: {e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    println!("{} {}", cfg.task.as_str(), out.summary);
    if out.failed_check {
        ExitCode::from(EXIT_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn pair(text: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = text.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok((
            a.trim().parse().map_err(|_| format!("velocity: cannot parse '{a}'"))?,
            b.trim().parse().map_err(|_| format!("velocity: cannot parse '{b}'"))?,
        )),
        _ => Err(format!("velocity: expected row,col, got '{text}'")),
    }
}

fn render(args: &SynthArgs) -> Result<Tensor, String> {
    let dims = parse_dims(&args.dims).map_err(|e| format!("dims: {e}"))?;
    if dims.is_empty() || dims.len() > 3 || dims.contains(&0) {
        return Err("dims: expected 1 to 3 positive extents".into());
    }
    let need3 = |what: &str| -> Result<(), String> {
        if dims.len() == 3 {
            Ok(())
        } else {
            Err(format!("dims: {what} needs three extents"))
        }
    };
    let e = |e: Error| e.to_string();
    match args.scene {
        Scene::MovingSquare | Scene::MovingDisc => {
            need3("a video")?;
            let mut scene = MovingScene::square(dims[0], dims[1], dims[2], pair(&args.velocity)?);
            if let Scene::MovingDisc = args.scene {
                scene.object = Shape2d::Disc;
            }
            if let Some(s) = args.size {
                scene.size = s;
            }
            scene.render().map_err(e)
        }
        Scene::Phantom => smooth_phantom(&dims, args.seed).map_err(e),
        Scene::Spectral => {
            need3("a spectral cube")?;
            spectral_cube(dims[0], dims[1], dims[2], args.rank, args.seed).map_err(e)
        }
        Scene::SrMask => {
            if !(0.0..=1.0).contains(&args.sr) {
                return Err(format!("sr: must be in [0, 1], got {}", args.sr));
            }
            let idx = sample_observed(&dims, args.sr, &mut stream(args.seed, "masks")).map_err(e)?;
            let mut m = Tensor::zeros(&dims).map_err(e)?;
            for i in idx {
                m.data_mut()[i] = 1.0;
            }
            Ok(m)
        }
        Scene::Bernoulli => bernoulli_masks(&dims, args.p, args.seed).map_err(e),
    }
}

fn synth(args: SynthArgs) -> ExitCode {
    let t = match render(&args) {
        Ok(t) => t,
        Err(e) => return invalid(e),
    };
    let stem = args.out.with_extension("");
    let mut files = vec![(args.out.clone(), encode_tensor(&t))];
    let frames: Vec<(String, Tensor)> = match t.order() {
        2 => vec![(String::new(), t.clone())],
        3 => (0..t.shape()[2])
            .map(|f| (format!("_t{f:02}"), t.frame(f).expect("frame index in range")))
            .collect(),
        _ => Vec::new(),
    };
    for (suffix, frame) in frames {
        match encode_png(&frame) {
            Ok((bytes, _, _)) => files.push((PathBuf::from(format!("{}{suffix}.png", stem.display())), bytes)),
            Err(e) => return invalid(e),
        }
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    for (path, bytes) in files {
        if let Err(e) = std::fs::write(&path, bytes) {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    println!("wrote {} with shape {:?}", args.out.display(), t.shape());
    ExitCode::SUCCESS
}
