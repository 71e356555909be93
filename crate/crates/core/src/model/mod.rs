//! The reconstruction network: grid encoder, MLP decoder over the rank
//! dimension, and the optional temporal affine adapter.

mod affine;
mod mlp;

pub use affine::{bilinear, AffineAdapter, AffineCache, FramePose, INR_HIDDEN};
pub use mlp::Mlp;

use crate::diffopt::{Objective, Record, Stage, Tape};
use crate::encoding::{
    check_coord, interp_axis, interp_dense, random_tables, scatter_axis, scatter_dense,
    EncoderConfig, EncodingMode, GridLevel, GridTable, INIT_SCALE,
};
use crate::error::{invalid, Error, Result};
use crate::params::{BlockId, ParamKind, ParamStore};
use crate::parallel;
use crate::rng::Rng;
use crate::tensor::{strides_of, uniform_coordinates, CoordinateGrid, Tensor};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub hidden: usize,
    pub affine: bool,
}

#[derive(Debug)]
pub struct EncodeCache {
    points: Option<Vec<usize>>,
    /// Decomposed mode: axis encodings, `n_d × R` per axis.
    factors: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct DecodeCache {
    h: Vec<f64>,
    act: Vec<f64>,
}

/// Temporal encoder owned by the affine adapter when the main encoder is
/// dense (the decomposed encoder shares its third axis instead).
#[derive(Debug, Clone)]
struct TemporalGrids {
    levels: Vec<GridLevel>,
    ids: Vec<BlockId>,
}

#[derive(Debug, Clone)]
pub struct GridTdModel {
    pub cfg: ModelConfig,
    shape: Vec<usize>,
    coords: CoordinateGrid,
    levels: Vec<GridLevel>,
    grid_ids: Vec<BlockId>,
    pub mlp: Mlp,
    pub affine: Option<AffineAdapter>,
    temporal: Option<TemporalGrids>,
}

impl GridTdModel {
    /// Registers every block in `store`. Grids are drawn first (in layout
    /// order), then the decoder, then the adapter.
    pub fn new(cfg: ModelConfig, shape: &[usize], store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        cfg.encoder.validate()?;
        if shape.len() != cfg.encoder.dims {
            return invalid(format!(
                "tensor order {} does not match encoder dimension {}",
                shape.len(),
                cfg.encoder.dims
            ));
        }
        if cfg.hidden == 0 {
            return invalid("decoder hidden width must be positive");
        }
        let coords = uniform_coordinates(shape)?;
        let enc = &cfg.encoder;
        let tables = random_tables(enc, INIT_SCALE, rng);
        let mut levels = Vec::with_capacity(tables.len());
        let mut grid_ids = Vec::with_capacity(tables.len());
        for (k, t) in tables.into_iter().enumerate() {
            let name = match enc.mode {
                EncodingMode::Dense => format!("grid.l{:02}", k),
                EncodingMode::Decomposed => {
                    format!("grid.axis{}.l{:02}", k / enc.levels, k % enc.levels)
                }
            };
            grid_ids.push(store.add(&name, &[t.level.rows, t.level.features], ParamKind::Grid, t.entries)?);
            levels.push(t.level);
        }
        let rank = enc.rank();
        let mlp = Mlp::register(store, "decoder", rank, cfg.hidden, ParamKind::Network, false, rng)?;
        let (affine, temporal) = if cfg.affine {
            if shape.len() != 3 {
                return invalid("the affine adapter requires 3rd-order (video) tensors");
            }
            let temporal = match enc.mode {
                EncodingMode::Decomposed => None,
                EncodingMode::Dense => {
                    let t_cfg = EncoderConfig {
                        mode: EncodingMode::Decomposed,
                        dims: 1,
                        ..enc.clone()
                    };
                    let mut levels = Vec::new();
                    let mut ids = Vec::new();
                    for (l, t) in random_tables(&t_cfg, INIT_SCALE, rng).into_iter().enumerate() {
                        ids.push(store.add(
                            &format!("affine.temporal.l{l:02}"),
                            &[t.level.rows, t.level.features],
                            ParamKind::Grid,
                            t.entries,
                        )?);
                        levels.push(t.level);
                    }
                    Some(TemporalGrids { levels, ids })
                }
            };
            (Some(AffineAdapter::register(store, shape, rank, rng)?), temporal)
        } else {
            (None, None)
        };
        Ok(Self {
            cfg,
            shape: shape.to_vec(),
            coords,
            levels,
            grid_ids,
            mlp,
            affine,
            temporal,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn point_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn rank(&self) -> usize {
        self.cfg.encoder.rank()
    }

    pub fn grid_block_ids(&self) -> &[BlockId] {
        &self.grid_ids
    }

    /// Current grid tables in layout order.
    pub fn grid_tables(&self, store: &ParamStore) -> Vec<GridTable> {
        self.levels
            .iter()
            .zip(&self.grid_ids)
            .map(|(level, &id)| GridTable {
                level: level.clone(),
                entries: store.value(id).to_vec(),
            })
            .collect()
    }

    /// Rescales every grid row to L1 norm at most 1.
    pub fn project_grids_l1(&self, store: &mut ParamStore) {
        for &id in &self.grid_ids {
            crate::encoding::project_rows_l1(store.value_mut(id), self.cfg.encoder.features);
        }
    }

    /// `2^D·γ·η·D·N` (dense) or `2·γ·η·D·N` (decomposed) with `γ = 1`,
    /// `η = ‖W1‖₁‖W2‖₁` and `N = Σ_l (N_l − 1)`.
    pub fn lipschitz_bound(&self, store: &ParamStore) -> f64 {
        lipschitz_bound(&self.cfg.encoder, self.mlp.weight_l1_product(store))
    }

    /// Encoding of one coordinate `v ∈ [0,1)^D`.
    pub fn encode_point(&self, store: &ParamStore, v: &[f64]) -> Result<Vec<f64>> {
        let enc = &self.cfg.encoder;
        if v.len() != enc.dims {
            return invalid("coordinate dimension does not match the model");
        }
        for (d, &x) in v.iter().enumerate() {
            check_coord(d, x)?;
        }
        let (f, r, nl) = (enc.features, enc.rank(), enc.levels);
        let mut out = vec![0.0; r];
        match enc.mode {
            EncodingMode::Dense => {
                for l in 0..nl {
                    interp_dense(&self.levels[l], store.value(self.grid_ids[l]), v, &mut out[l * f..(l + 1) * f]);
                }
            }
            EncodingMode::Decomposed => {
                let mut h = vec![0.0; r];
                for (d, &x) in v.iter().enumerate() {
                    let target = if d == 0 { &mut out } else { &mut h };
                    for l in 0..nl {
                        let k = d * nl + l;
                        interp_axis(&self.levels[k], store.value(self.grid_ids[k]), x, &mut target[l * f..(l + 1) * f]);
                    }
                    if d > 0 {
                        out.iter_mut().zip(&h).for_each(|(a, b)| *a *= b);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Decoder output at one coordinate (no affine adapter).
    pub fn eval_point(&self, store: &ParamStore, v: &[f64]) -> Result<f64> {
        let h = self.encode_point(store, v)?;
        Ok(self.mlp.forward(store, &h, 1)?.1[0])
    }

    fn multi_index(&self, strides: &[usize], p: usize, idx: &mut [usize]) {
        let mut rem = p;
        for (d, &s) in strides.iter().enumerate() {
            idx[d] = rem / s;
            rem %= s;
        }
    }

    fn axis_factors(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let enc = &self.cfg.encoder;
        let (f, r, nl) = (enc.features, enc.rank(), enc.levels);
        (0..enc.dims)
            .map(|d| {
                let axis = self.coords.axis(d);
                let mut fac = vec![0.0; axis.len() * r];
                for (i, &t) in axis.iter().enumerate() {
                    for l in 0..nl {
                        let k = d * nl + l;
                        let off = i * r + l * f;
                        interp_axis(&self.levels[k], store.value(self.grid_ids[k]), t, &mut fac[off..off + f]);
                    }
                }
                fac
            })
            .collect()
    }

    fn encode(&self, store: &ParamStore, points: Option<&[usize]>) -> Result<(Vec<f64>, EncodeCache)> {
        let enc = &self.cfg.encoder;
        let r = enc.rank();
        let total = self.point_count();
        if let Some(pts) = points {
            if let Some(&bad) = pts.iter().find(|&&p| p >= total) {
                return invalid(format!("point index {bad} out of range"));
            }
        }
        let count = points.map_or(total, |p| p.len());
        let strides = strides_of(&self.shape);
        let dims = enc.dims;
        let mut h = vec![0.0; count * r];
        let factors = match enc.mode {
            EncodingMode::Decomposed => {
                let factors = self.axis_factors(store);
                parallel::for_rows(&mut h, r, |start, chunk| {
                    let mut idx = vec![0usize; dims];
                    for (k, row) in chunk.chunks_mut(r).enumerate() {
                        let p = points.map_or(start + k, |pts| pts[start + k]);
                        self.multi_index(&strides, p, &mut idx);
                        row.copy_from_slice(&factors[0][idx[0] * r..(idx[0] + 1) * r]);
                        for d in 1..dims {
                            let fac = &factors[d][idx[d] * r..(idx[d] + 1) * r];
                            row.iter_mut().zip(fac).for_each(|(a, b)| *a *= b);
                        }
                    }
                });
                factors
            }
            EncodingMode::Dense => {
                let f = enc.features;
                let tables: Vec<&[f64]> = self.grid_ids.iter().map(|&id| store.value(id)).collect();
                parallel::for_rows(&mut h, r, |start, chunk| {
                    let mut idx = vec![0usize; dims];
                    let mut v = vec![0.0; dims];
                    for (k, row) in chunk.chunks_mut(r).enumerate() {
                        let p = points.map_or(start + k, |pts| pts[start + k]);
                        self.multi_index(&strides, p, &mut idx);
                        for d in 0..dims {
                            v[d] = self.coords.axis(d)[idx[d]];
                        }
                        for (l, level) in self.levels.iter().enumerate() {
                            interp_dense(level, tables[l], &v, &mut row[l * f..(l + 1) * f]);
                        }
                    }
                });
                Vec::new()
            }
        };
        Ok((
            h,
            EncodeCache {
                points: points.map(|p| p.to_vec()),
                factors,
            },
        ))
    }

    fn temporal_encoding(&self, store: &ParamStore, factors: &[Vec<f64>]) -> Vec<f64> {
        match &self.temporal {
            None => factors[2].clone(),
            Some(tg) => {
                let f = self.cfg.encoder.features;
                let r = self.rank();
                let axis = self.coords.axis(2);
                let mut h3 = vec![0.0; axis.len() * r];
                for (i, &t) in axis.iter().enumerate() {
                    for (l, level) in tg.levels.iter().enumerate() {
                        let off = i * r + l * f;
                        interp_axis(level, store.value(tg.ids[l]), t, &mut h3[off..off + f]);
                    }
                }
                h3
            }
        }
    }

    /// Forward pass over every tensor entry (`points = None`) or over the
    /// given flat indices, recording the stages on `tape`. The affine
    /// adapter, when present, needs the full tensor.
    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, points: Option<&[usize]>) -> Result<Vec<f64>> {
        tape.clear();
        if self.affine.is_some() && points.is_some() {
            return invalid("the affine adapter needs a full-tensor forward pass");
        }
        let (h, ecache) = self.encode(store, points)?;
        let h3 = match self.affine {
            Some(_) if self.temporal.is_none() => Some(self.temporal_encoding(store, &ecache.factors)),
            Some(_) => Some(self.temporal_encoding(store, &[])),
            None => None,
        };
        tape.push(Record::Encode(ecache));
        let rows = h.len() / self.rank();
        let (act, out) = self.mlp.forward(store, &h, rows)?;
        tape.push(Record::Decode(DecodeCache { h, act }));
        match (&self.affine, h3) {
            (Some(adapter), Some(h3)) => {
                let (v, cache) = adapter.forward(store, out, h3)?;
                tape.push(Record::Affine(cache));
                Ok(v)
            }
            _ => Ok(out),
        }
    }

    /// Full output as a tensor, without keeping intermediates.
    pub fn evaluate(&self, store: &ParamStore) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(store, &mut tape, None)?;
        Tensor::from_vec(&self.shape, out)
    }

    /// Seeds the reverse pass with `seed·∂loss/∂output` (the gradient
    /// recorded by the loss stage) and accumulates into `store`.
    pub fn backward(&self, store: &mut ParamStore, tape: &mut Tape, seed: f64) -> Result<()> {
        let mut grad = match tape.pop(Stage::Loss)? {
            Record::Loss(g) => g,
            _ => unreachable!(),
        };
        if seed != 1.0 {
            grad.iter_mut().for_each(|g| *g *= seed);
        }
        let mut temporal_grad = None;
        if tape.peek() == Some(Stage::Affine) {
            let Record::Affine(cache) = tape.pop(Stage::Affine)? else {
                unreachable!()
            };
            let adapter = self
                .affine
                .as_ref()
                .ok_or_else(|| Error::State("affine stage recorded without an adapter".into()))?;
            let (dinput, dh3) = adapter.backward(store, &cache, &grad);
            grad = dinput;
            temporal_grad = Some(dh3);
        }
        let Record::Decode(dcache) = tape.pop(Stage::Decode)? else {
            unreachable!()
        };
        let dh = self.mlp.backward(store, &dcache.h, &dcache.act, &grad);
        let Record::Encode(ecache) = tape.pop(Stage::Encode)? else {
            unreachable!()
        };
        self.encode_backward(store, &ecache, &dh, temporal_grad)
    }

    fn encode_backward(
        &self,
        store: &mut ParamStore,
        cache: &EncodeCache,
        dh: &[f64],
        temporal_grad: Option<Vec<f64>>,
    ) -> Result<()> {
        let enc = &self.cfg.encoder;
        let (f, r, nl, dims) = (enc.features, enc.rank(), enc.levels, enc.dims);
        let strides = strides_of(&self.shape);
        let points = cache.points.as_deref();
        let count = dh.len() / r;
        let mut idx = vec![0usize; dims];
        match enc.mode {
            EncodingMode::Decomposed => {
                let factors = &cache.factors;
                let mut dfac: Vec<Vec<f64>> = factors.iter().map(|fac| vec![0.0; fac.len()]).collect();
                for k in 0..count {
                    let p = points.map_or(k, |pts| pts[k]);
                    self.multi_index(&strides, p, &mut idx);
                    let g = &dh[k * r..(k + 1) * r];
                    for d in 0..dims {
                        let row = &mut dfac[d][idx[d] * r..(idx[d] + 1) * r];
                        for q in 0..r {
                            let mut prod = g[q];
                            for e in 0..dims {
                                if e != d {
                                    prod *= factors[e][idx[e] * r + q];
                                }
                            }
                            row[q] += prod;
                        }
                    }
                }
                if let (Some(tg), None) = (&temporal_grad, &self.temporal) {
                    dfac[2].iter_mut().zip(tg).for_each(|(a, b)| *a += b);
                }
                for d in 0..dims {
                    for (i, &t) in self.coords.axis(d).iter().enumerate() {
                        for l in 0..nl {
                            let kk = d * nl + l;
                            let off = i * r + l * f;
                            scatter_axis(&self.levels[kk], store.grad_mut(self.grid_ids[kk]), t, &dfac[d][off..off + f]);
                        }
                    }
                }
            }
            EncodingMode::Dense => {
                let mut v = vec![0.0; dims];
                for k in 0..count {
                    let p = points.map_or(k, |pts| pts[k]);
                    self.multi_index(&strides, p, &mut idx);
                    for d in 0..dims {
                        v[d] = self.coords.axis(d)[idx[d]];
                    }
                    for l in 0..nl {
                        let off = k * r + l * f;
                        scatter_dense(&self.levels[l], store.grad_mut(self.grid_ids[l]), &v, &dh[off..off + f]);
                    }
                }
            }
        }
        if let (Some(tg), Some(grids)) = (&temporal_grad, &self.temporal) {
            for (i, &t) in self.coords.axis(2).iter().enumerate() {
                for (l, level) in grids.levels.iter().enumerate() {
                    let off = i * r + l * f;
                    scatter_axis(level, store.grad_mut(grids.ids[l]), t, &tg[off..off + f]);
                }
            }
        }
        Ok(())
    }

    /// Forward, loss, and reverse pass; gradients are accumulated into
    /// `store`. Returns the loss value.
    pub fn loss_and_grad(
        &self,
        store: &mut ParamStore,
        tape: &mut Tape,
        objective: &dyn Objective,
        points: Option<&[usize]>,
    ) -> Result<f64> {
        let out = self.forward(store, tape, points)?;
        let (loss, grad) = objective.evaluate(&out)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        tape.push(Record::Loss(grad));
        self.backward(store, tape, 1.0)?;
        Ok(loss)
    }
}

/// Smoothness bound of the encoder+decoder for a given `η = ‖W1‖₁‖W2‖₁`.
pub fn lipschitz_bound(enc: &EncoderConfig, eta: f64) -> f64 {
    let gamma = 1.0;
    let n: usize = enc.resolutions().iter().map(|&nl| nl - 1).sum();
    let d = enc.dims as f64;
    let corner = match enc.mode {
        EncodingMode::Dense => 2f64.powi(enc.dims as i32),
        EncodingMode::Decomposed => 2.0,
    };
    corner * gamma * eta * d * n as f64
}

/// Applies the decoder at every multi-index of an encoding tensor whose last
/// axis is the rank.
pub fn decode(mlp: &Mlp, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
    let shape = h.shape();
    let r = *shape.last().unwrap();
    if r != mlp.input || shape.len() < 2 {
        return invalid(format!("encoding width {r} does not match decoder input {}", mlp.input));
    }
    let out_shape = &shape[..shape.len() - 1];
    let rows: usize = out_shape.iter().product();
    let (_, out) = mlp.forward(store, h.data(), rows)?;
    Tensor::from_vec(out_shape, out)
}
