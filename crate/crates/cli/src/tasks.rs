//! Task runners. Each one computes everything first and returns the files
//! to write, so a failed run leaves nothing on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gridtd::admm::admm_run;
use gridtd::bench::{
    dimension_robustness_experiment, efficiency_benchmark, lipschitz_empirical_test, randomize_grids, DimensionConfig,
    EfficiencyConfig, FitConfig,
};
use gridtd::diffopt::AdamConfig;
use gridtd::encoding::EncodingMode;
use gridtd::io::{encode_png, encode_tensor, load_tensor};
use gridtd::metrics::{psnr, ssim};
use gridtd::model::{lipschitz_bound, GridTdModel, ModelConfig};
use gridtd::operators::{
    add_gaussian_noise, bernoulli_masks, sample_observed, Inpainting, Operator, SpectralSci, VideoSci,
};
use gridtd::params::ParamStore;
use gridtd::rng::stream;
use gridtd::synth::{smooth_phantom, spectral_cube, MovingScene};
use gridtd::{Result, Tensor};

use crate::config::{RunConfig, Task};

/// Files produced by a run, written only once the run has succeeded.
#[derive(Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub checkpoint: Option<ParamStore>,
    pub summary: String,
    pub failed_check: bool,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((PathBuf::from(name), bytes));
    }

    fn add_tensor(&mut self, name: &str, t: &Tensor) {
        self.add(name, encode_tensor(t));
    }

    /// PNG previews: one image for a 2D tensor, one per frame for 3D.
    fn add_previews(&mut self, stem: &str, t: &Tensor) -> Result<()> {
        match t.order() {
            2 => self.add(&format!("{stem}.png"), png_bytes(t)?),
            3 => {
                for f in 0..t.shape()[2] {
                    self.add(&format!("{stem}_t{f:02}.png"), png_bytes(&t.frame(f)?)?);
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        if let Some(store) = &self.checkpoint {
            store.save(dir, "params")?;
        }
        Ok(())
    }
}

fn png_bytes(t: &Tensor) -> Result<Vec<u8>> {
    Ok(encode_png(t)?.0)
}

pub fn run(cfg: &RunConfig) -> Result<Outputs> {
    match cfg.task {
        Task::Inpaint | Task::VideoSci | Task::SpectralSci => reconstruct(cfg),
        Task::BenchDim => bench_dim(cfg),
        Task::BenchEfficiency => bench_efficiency(cfg),
        Task::LipschitzCheck => lipschitz_check(cfg),
    }
}

fn ground_truth(cfg: &RunConfig) -> Result<Tensor> {
    if let Some(p) = &cfg.input {
        return load_tensor(p);
    }
    match cfg.task {
        Task::VideoSci => MovingScene::square(cfg.dims[0], cfg.dims[1], cfg.dims[2], (1.0, 1.0)).render(),
        Task::SpectralSci => spectral_cube(cfg.dims[0], cfg.dims[1], cfg.dims[2], 3, cfg.seed),
        _ => smooth_phantom(&cfg.dims, cfg.seed),
    }
}

fn reconstruct(cfg: &RunConfig) -> Result<Outputs> {
    let truth = ground_truth(cfg)?;
    let shape = truth.shape().to_vec();
    let mut out = Outputs::default();
    let op: Box<dyn Operator> = match cfg.task {
        Task::Inpaint => {
            let observed = sample_observed(&shape, cfg.sr, &mut stream(cfg.seed, "masks"))?;
            let mut mask = Tensor::zeros(&shape)?;
            for &i in &observed {
                mask.data_mut()[i] = 1.0;
            }
            out.add_tensor("mask.gtd", &mask);
            Box::new(Inpainting::new(&shape, observed)?)
        }
        Task::VideoSci => {
            let masks = bernoulli_masks(&shape, 0.5, cfg.seed)?;
            out.add_tensor("masks.gtd", &masks);
            Box::new(VideoSci::new(masks)?)
        }
        _ => {
            let masks = bernoulli_masks(&shape, 0.5, cfg.seed)?;
            out.add_tensor("masks.gtd", &masks);
            Box::new(SpectralSci::new(masks, cfg.shift_step)?)
        }
    };
    let y = add_gaussian_noise(&op.forward(&truth)?, cfg.noise, &mut stream(cfg.seed, "noise"))?;
    let mut store = ParamStore::new();
    let model = GridTdModel::new(cfg.model(&shape), &shape, &mut store, &mut stream(cfg.seed, "init"))?;
    let result = admm_run(&cfg.solver(), op.as_ref(), &y, &model, &mut store, Some(&truth))?;
    let x = &result.state.x;
    let (p, s) = (psnr(x, &truth, 1.0)?, ssim(x, &truth, 1.0)?);
    out.add_tensor("truth.gtd", &truth);
    out.add_tensor("measurement.gtd", &y);
    out.add_tensor("recon.gtd", x);
    out.add("log.csv", result.history.to_csv().into_bytes());
    out.add_previews("recon", x)?;
    out.add_previews("truth", &truth)?;
    out.checkpoint = Some(store);
    out.summary = format!("psnr={p:.4} ssim={s:.4} iterations={}", result.state.k);
    Ok(out)
}

fn fit_config(cfg: &RunConfig, steps: usize) -> FitConfig {
    FitConfig {
        levels: cfg.levels,
        features: cfg.features,
        n_min: cfg.n_min,
        hidden: cfg.hidden,
        table_len: cfg.table_len,
        steps,
        batch: (cfg.batch > 0).then_some(cfg.batch),
        adam: AdamConfig::default(),
    }
}

fn bench_dim(cfg: &RunConfig) -> Result<Outputs> {
    let dc = DimensionConfig {
        fit: fit_config(cfg, cfg.steps),
        ..DimensionConfig::default()
    };
    let report = dimension_robustness_experiment(&dc, cfg.seed)?;
    let mut out = Outputs::default();
    let mut summary = String::new();
    for r in &report.rows {
        let _ = write!(summary, "{}@D{}/sr{}={:.2}dB ", r.method, r.dims, r.sr, r.psnr);
    }
    out.summary = summary.trim_end().to_string();
    out.add("report.csv", report.to_csv().into_bytes());
    out.add("experiment.txt", report.manifest().into_bytes());
    Ok(out)
}

fn bench_efficiency(cfg: &RunConfig) -> Result<Outputs> {
    let ec = EfficiencyConfig {
        n: cfg.dims[0],
        dims: cfg.dims.len(),
        iters: cfg.iters,
        sr: cfg.sr,
        fit: fit_config(cfg, cfg.iters),
        count_queries: true,
    };
    let report = efficiency_benchmark(&ec, cfg.seed)?;
    let mut out = Outputs::default();
    if let [dense, dec] = report.rows.as_slice() {
        out.summary = format!(
            "time_ratio={:.2} param_ratio={:.1}",
            dense.seconds / dec.seconds,
            dense.grid_params as f64 / dec.grid_params as f64
        );
    }
    out.add("report.csv", report.to_csv().into_bytes());
    out.add("experiment.txt", report.manifest().into_bytes());
    Ok(out)
}

fn lipschitz_check(cfg: &RunConfig) -> Result<Outputs> {
    let mut csv = String::from("mode,dims,trials,max_ratio,bound,violations\n");
    let mut out = Outputs::default();
    for dims in 1..=3 {
        for mode in [EncodingMode::Dense, EncodingMode::Decomposed] {
            let shape = vec![8; dims];
            let mc = ModelConfig {
                encoder: crate::config::RunConfig { mode, ..cfg.clone() }.encoder(&shape),
                hidden: cfg.hidden,
                affine: false,
            };
            let mut store = ParamStore::new();
            let model = GridTdModel::new(mc, &shape, &mut store, &mut stream(cfg.seed, "init"))?;
            randomize_grids(&model, &mut store, 1.0, &mut stream(cfg.seed, "grids"));
            let r = lipschitz_empirical_test(&model, &store, cfg.trials, cfg.seed)?;
            out.failed_check |= !r.pass();
            let _ = writeln!(
                csv,
                "{},{},{},{:e},{:e},{}",
                mode.as_str(),
                dims,
                r.trials,
                r.max_ratio,
                r.bound,
                r.violations
            );
        }
    }
    let enc = |mode| crate::config::RunConfig { mode, ..cfg.clone() }.encoder(&[8, 8, 8]);
    let ratio = lipschitz_bound(&enc(EncodingMode::Dense), 1.0) / lipschitz_bound(&enc(EncodingMode::Decomposed), 1.0);
    out.summary = format!(
        "{} bound_ratio_d3={ratio}",
        if out.failed_check { "violations found" } else { "all trials within bound" }
    );
    out.add("lipschitz.csv", csv.into_bytes());
    Ok(out)
}
