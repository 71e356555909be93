//! Run configuration: defaults, then a `key = value` file with `[section]`
//! headers, then command-line flags.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gridtd::admm::SolverConfig;
use gridtd::encoding::{EncoderConfig, EncodingMode, DEFAULT_N_MIN, DEFAULT_TABLE_LEN};
use gridtd::model::{ModelConfig, DEFAULT_HIDDEN};
use gridtd::operators::DEFAULT_SHIFT_STEP;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Inpaint,
    VideoSci,
    SpectralSci,
    BenchDim,
    BenchEfficiency,
    LipschitzCheck,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Inpaint => "inpaint",
            Task::VideoSci => "video-sci",
            Task::SpectralSci => "spectral-sci",
            Task::BenchDim => "bench-dim",
            Task::BenchEfficiency => "bench-efficiency",
            Task::LipschitzCheck => "lipschitz-check",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "inpaint" => Task::Inpaint,
            "video-sci" => Task::VideoSci,
            "spectral-sci" => Task::SpectralSci,
            "bench-dim" => Task::BenchDim,
            "bench-efficiency" => Task::BenchEfficiency,
            "lipschitz-check" => Task::LipschitzCheck,
            _ => return Err(format!("unknown task '{s}'")),
        })
    }
}

/// A field-level configuration error.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every key a config file may set, by section.
const SECTIONS: &[(&str, &[&str])] = &[
    ("run", &["task", "seed", "out_dir", "input"]),
    ("encoder", &["mode", "levels", "features", "n_min", "n_max", "table_len", "hidden", "affine"]),
    (
        "solver",
        &["outer_iters", "inner_steps", "rho0", "kappa", "lambda1", "lambda2", "lr_decay", "early_stop"],
    ),
    ("problem", &["dims", "sr", "noise", "shift_step", "trials", "iters", "steps", "batch"]),
];

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS
        .iter()
        .find(|(_, keys)| keys.contains(&key))
        .map(|(s, _)| *s)
}

/// Parses `key = value` lines. Keys before the first header belong to
/// `[run]`; `#` starts a comment. Returns `(key, value)` pairs in order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut section = "run".to_string();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("line {}", n + 1);
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::new(&at, "unterminated section header"))?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::new(&at, format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new(&at, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        match section_of(key) {
            Some(s) if s == section => out.push((key.to_string(), value.to_string())),
            Some(s) => {
                return Err(ConfigError::new(
                    key,
                    format!("belongs in [{s}], found in [{section}] ({at})"),
                ))
            }
            None => return Err(ConfigError::new(key, format!("unknown key ({at})"))),
        }
    }
    Ok(out)
}

/// The fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: Option<PathBuf>,
    pub mode: EncodingMode,
    pub levels: usize,
    pub features: usize,
    pub n_min: usize,
    /// 0 means "largest tensor extent".
    pub n_max: usize,
    pub table_len: usize,
    pub hidden: usize,
    pub affine: bool,
    pub outer_iters: usize,
    pub inner_steps: usize,
    pub rho0: f64,
    pub kappa: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr_decay: f64,
    pub early_stop: bool,
    pub dims: Vec<usize>,
    pub sr: f64,
    pub noise: f64,
    pub shift_step: usize,
    pub trials: usize,
    pub iters: usize,
    pub steps: usize,
    pub batch: usize,
}

impl RunConfig {
    pub fn defaults(task: Task) -> Self {
        let solver = SolverConfig::default();
        let dims = match task {
            Task::Inpaint | Task::VideoSci => vec![32, 32, 8],
            Task::SpectralSci => vec![32, 32, 8],
            Task::BenchEfficiency => vec![100, 100, 100],
            Task::BenchDim | Task::LipschitzCheck => vec![],
        };
        let efficiency = task == Task::BenchEfficiency;
        Self {
            task,
            seed: 0,
            out_dir: PathBuf::from("out"),
            input: None,
            mode: EncodingMode::Decomposed,
            levels: if efficiency { 16 } else { 8 },
            features: 2,
            n_min: DEFAULT_N_MIN,
            n_max: 0,
            table_len: if efficiency { 1 << 20 } else { DEFAULT_TABLE_LEN },
            hidden: if efficiency { 16 } else { DEFAULT_HIDDEN },
            affine: task == Task::VideoSci,
            outer_iters: solver.outer_iters,
            inner_steps: solver.inner_steps,
            rho0: solver.rho0,
            kappa: solver.kappa,
            lambda1: solver.lambda1,
            lambda2: solver.lambda2,
            lr_decay: solver.lr_decay,
            early_stop: solver.early_stop,
            dims,
            sr: 0.1,
            noise: 0.0,
            shift_step: DEFAULT_SHIFT_STEP,
            trials: 1000,
            iters: 300,
            steps: 600,
            batch: if efficiency { 4096 } else { 0 },
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse()
                .map_err(|_| ConfigError::new(key, format!("cannot parse '{v}'")))
        }
        match key {
            "task" => self.task = value.parse().map_err(|e| ConfigError::new(key, e))?,
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "input" => self.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "mode" => {
                self.mode = value
                    .parse()
                    .map_err(|_| ConfigError::new(key, format!("expected dense or decomposed, got '{value}'")))?
            }
            "levels" => self.levels = num(key, value)?,
            "features" => self.features = num(key, value)?,
            "n_min" => self.n_min = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "table_len" => self.table_len = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "affine" => self.affine = parse_switch(key, value)?,
            "outer_iters" => self.outer_iters = num(key, value)?,
            "inner_steps" => self.inner_steps = num(key, value)?,
            "rho0" => self.rho0 = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "early_stop" => self.early_stop = parse_switch(key, value)?,
            "dims" => self.dims = parse_dims(value).map_err(|m| ConfigError::new(key, m))?,
            "sr" => self.sr = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "shift_step" => self.shift_step = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            outer_iters: self.outer_iters,
            inner_steps: self.inner_steps,
            rho0: self.rho0,
            kappa: self.kappa,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lr_decay: self.lr_decay,
            early_stop: self.early_stop,
            ..SolverConfig::default()
        }
    }

    pub fn encoder(&self, shape: &[usize]) -> EncoderConfig {
        let extent = shape.iter().copied().max().unwrap_or(1);
        EncoderConfig {
            mode: self.mode,
            dims: shape.len(),
            levels: self.levels,
            features: self.features,
            n_min: self.n_min,
            n_max: if self.n_max == 0 { extent.max(self.n_min) } else { self.n_max },
            table_len: self.table_len,
        }
    }

    pub fn model(&self, shape: &[usize]) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder(shape),
            hidden: self.hidden,
            affine: self.affine,
        }
    }

    /// Checks every field against the constraints of the module that owns it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn wrap(field: &'static str) -> impl Fn(gridtd::Error) -> ConfigError {
            move |e| ConfigError::new(field, e.to_string())
        }
        if let Some(p) = &self.input {
            if !p.is_file() {
                return Err(ConfigError::new("input", format!("file not found: {}", p.display())));
            }
        }
        if self.hidden == 0 {
            return Err(ConfigError::new("hidden", "must be at least 1"));
        }
        match self.task {
            Task::Inpaint | Task::VideoSci | Task::SpectralSci => {
                self.solver().validate().map_err(wrap("solver"))?;
                if self.input.is_none() {
                    self.check_dims()?;
                    self.encoder(&self.dims).validate().map_err(wrap("encoder"))?;
                }
                if self.input.is_none() && self.dims.len() != 3 {
                    return Err(ConfigError::new("dims", "reconstructions need three dimensions (rows, cols, frames)"));
                }
                if self.affine && self.task == Task::SpectralSci {
                    return Err(ConfigError::new("affine", "the affine adapter is for video only"));
                }
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(ConfigError::new("noise", "must be a nonnegative number"));
                }
                if self.task == Task::Inpaint && !(self.sr > 0.0 && self.sr <= 1.0) {
                    return Err(ConfigError::new("sr", format!("must be in (0, 1], got {}", self.sr)));
                }
            }
            Task::BenchDim => {
                if self.steps == 0 {
                    return Err(ConfigError::new("steps", "must be at least 1"));
                }
                self.encoder(&[8]).validate().map_err(wrap("encoder"))?;
            }
            Task::BenchEfficiency => {
                self.check_dims()?;
                if self.dims.iter().any(|&n| n != self.dims[0]) {
                    return Err(ConfigError::new("dims", "the benchmark uses a cube; all extents must match"));
                }
                if self.iters == 0 {
                    return Err(ConfigError::new("iters", "must be at least 1"));
                }
                if !(self.sr > 0.0 && self.sr <= 1.0) {
                    return Err(ConfigError::new("sr", format!("must be in (0, 1], got {}", self.sr)));
                }
                self.encoder(&self.dims).validate().map_err(wrap("encoder"))?;
            }
            Task::LipschitzCheck => {
                if self.trials == 0 {
                    return Err(ConfigError::new("trials", "must be at least 1"));
                }
                self.encoder(&[8]).validate().map_err(wrap("encoder"))?;
            }
        }
        Ok(())
    }

    fn check_dims(&self) -> Result<(), ConfigError> {
        if self.dims.is_empty() || self.dims.len() > 3 {
            return Err(ConfigError::new("dims", "expected 1 to 3 comma-separated extents"));
        }
        if self.dims.iter().any(|&n| n == 0) {
            return Err(ConfigError::new("dims", "extents must be positive"));
        }
        Ok(())
    }

    /// The effective configuration in the config-file format.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let on = |b: bool| if b { "on" } else { "off" };
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "task = {}", self.task.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "input = {}", self.input.as_deref().map(Path::display).map(|d| d.to_string()).unwrap_or_default());
        let _ = writeln!(s, "\n[encoder]");
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(s, "features = {}", self.features);
        let _ = writeln!(s, "n_min = {}", self.n_min);
        let _ = writeln!(s, "n_max = {}", self.n_max);
        let _ = writeln!(s, "table_len = {}", self.table_len);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "affine = {}", on(self.affine));
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "outer_iters = {}", self.outer_iters);
        let _ = writeln!(s, "inner_steps = {}", self.inner_steps);
        let _ = writeln!(s, "rho0 = {:e}", self.rho0);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "lambda1 = {:e}", self.lambda1);
        let _ = writeln!(s, "lambda2 = {:e}", self.lambda2);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "early_stop = {}", on(self.early_stop));
        let _ = writeln!(s, "\n[problem]");
        let _ = writeln!(s, "dims = {}", dims.join(","));
        let _ = writeln!(s, "sr = {}", self.sr);
        let _ = writeln!(s, "noise = {}", self.noise);
        let _ = writeln!(s, "shift_step = {}", self.shift_step);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "iters = {}", self.iters);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch = {}", self.batch);
        s
    }
}

pub fn parse_switch(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::new(key, format!("expected on or off, got '{v}'"))),
    }
}

pub fn parse_dims(v: &str) -> Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("cannot parse extent '{p}'")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let text = "task = inpaint # trailing\n[encoder]\nmode = dense\n\n[solver]\nrho0=0.5\n";
        let kv = parse_config(text).unwrap();
        assert_eq!(
            kv,
            vec![
                ("task".into(), "inpaint".into()),
                ("mode".into(), "dense".into()),
                ("rho0".into(), "0.5".into())
            ]
        );
    }

    #[test]
    fn misplaced_and_unknown_keys_name_the_field() {
        let e = parse_config("[solver]\nmode = dense\n").unwrap_err();
        assert_eq!(e.field, "mode");
        let e = parse_config("bogus = 1\n").unwrap_err();
        assert_eq!(e.field, "bogus");
        assert!(parse_config("[nowhere]\n").is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let mut c = RunConfig::defaults(Task::VideoSci);
        c.set("seed", "9").unwrap();
        c.set("rho0", "0.03").unwrap();
        c.set("dims", "16,16,4").unwrap();
        let mut back = RunConfig::defaults(Task::Inpaint);
        for (k, v) in parse_config(&c.manifest()).unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn validation_names_fields() {
        let mut c = RunConfig::defaults(Task::Inpaint);
        c.sr = 0.0;
        assert_eq!(c.validate().unwrap_err().field, "sr");
        let mut c = RunConfig::defaults(Task::Inpaint);
        c.kappa = 1.0;
        assert_eq!(c.validate().unwrap_err().field, "solver");
        let mut c = RunConfig::defaults(Task::VideoSci);
        c.dims = vec![8, 8];
        assert_eq!(c.validate().unwrap_err().field, "dims");
        assert!(parse_dims("32x32x8").unwrap() == vec![32, 32, 8]);
    }
}
