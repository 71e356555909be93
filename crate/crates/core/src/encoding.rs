//! Multi-resolution grid encodings.
//!
//! Two flavors share the same level layout:
//!
//! * **dense**: one D-dimensional grid per level, each query interpolates
//!   the `2^D` surrounding vertices;
//! * **decomposed**: one 1D grid per level *per axis*; a query interpolates
//!   each axis separately and fuses the axis encodings with an elementwise
//!   product, so the encoding of a whole tensor is a CP-structured tensor
//!   whose rank is `R = L·F`.
//!
//! A level of resolution `N` has `N + 1` vertices per axis. The
//! interpolation cell of coordinate `v` starts at vertex `⌊(N − 1)v⌋`, with
//! local offset `u = (N − 1)v − ⌊(N − 1)v⌋`. Tables are either direct
//! (row-major vertex index) or hashed into `T` rows when the vertex count
//! exceeds `T`.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::rng::Rng;
use crate::tensor::{increment_index, CoordinateGrid, Tensor};

/// Multipliers of the spatial hash, one per axis.
pub const HASH_PRIMES: [u64; 8] = [
    1,
    2_654_435_761,
    805_459_861,
    3_674_653_429,
    2_097_192_037,
    1_434_869_437,
    2_165_219_737,
    3_282_624_863,
];

pub const DEFAULT_TABLE_LEN: usize = 1 << 19;
pub const DEFAULT_N_MIN: usize = 4;
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    Dense,
    Decomposed,
}

impl EncodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::Dense => "dense",
            EncodingMode::Decomposed => "decomposed",
        }
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(EncodingMode::Dense),
            "decomposed" => Ok(EncodingMode::Decomposed),
            other => invalid(format!("unknown encoding mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub mode: EncodingMode,
    /// Input dimension `D`.
    pub dims: usize,
    pub levels: usize,
    pub features: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub table_len: usize,
}

impl EncoderConfig {
    /// Defaults for a tensor of the given shape: `N_min = 4`,
    /// `N_max = max(shape)` (at least `N_min`), `T = 2^19`.
    pub fn for_shape(mode: EncodingMode, shape: &[usize], levels: usize, features: usize) -> Self {
        let extent = shape.iter().copied().max().unwrap_or(DEFAULT_N_MIN);
        Self {
            mode,
            dims: shape.len(),
            levels,
            features,
            n_min: DEFAULT_N_MIN,
            n_max: extent.max(DEFAULT_N_MIN),
            table_len: DEFAULT_TABLE_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.dims > HASH_PRIMES.len() {
            return invalid(format!(
                "input dimension must be in 1..={}, got {}",
                HASH_PRIMES.len(),
                self.dims
            ));
        }
        if self.levels == 0 {
            return invalid("level count must be at least 1");
        }
        if self.features == 0 {
            return invalid("feature width must be at least 1");
        }
        if self.n_min < 2 {
            return invalid(format!("N_min must be at least 2, got {}", self.n_min));
        }
        if self.n_max < self.n_min {
            return invalid(format!(
                "N_max ({}) must be at least N_min ({})",
                self.n_max, self.n_min
            ));
        }
        if self.table_len == 0 {
            return invalid("table length must be positive");
        }
        Ok(())
    }

    /// CP rank `R = L·F`, the encoding width.
    pub fn rank(&self) -> usize {
        self.levels * self.features
    }

    /// Geometric level schedule `N_l = round(N_min · b^l)`.
    pub fn resolutions(&self) -> Vec<usize> {
        if self.levels == 1 {
            return vec![self.n_min];
        }
        let growth = (self.n_max as f64 / self.n_min as f64).powf(1.0 / (self.levels - 1) as f64);
        (0..self.levels)
            .map(|l| (self.n_min as f64 * growth.powi(l as i32)).round() as usize)
            .collect()
    }

    /// Layouts of the tables this encoder owns: `L` D-dimensional tables in
    /// dense mode, `D·L` one-dimensional tables (axis-major) otherwise.
    pub fn level_layouts(&self) -> Vec<GridLevel> {
        let res = self.resolutions();
        match self.mode {
            EncodingMode::Dense => res
                .iter()
                .map(|&n| GridLevel::new(n, self.dims, self.features, self.table_len))
                .collect(),
            EncodingMode::Decomposed => (0..self.dims)
                .flat_map(|_| res.iter())
                .map(|&n| GridLevel::new(n, 1, self.features, self.table_len))
                .collect(),
        }
    }
}

/// Number of learnable grid entries (decoder weights excluded).
pub fn param_count(cfg: &EncoderConfig) -> usize {
    let dims = match cfg.mode {
        EncodingMode::Dense => cfg.dims,
        EncodingMode::Decomposed => 1,
    };
    let per_set: usize = cfg
        .resolutions()
        .iter()
        .map(|&n| cfg.features * GridLevel::new(n, dims, cfg.features, cfg.table_len).rows)
        .sum();
    match cfg.mode {
        EncodingMode::Dense => per_set,
        EncodingMode::Decomposed => cfg.dims * per_set,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Addressing {
    Direct,
    Hashed,
}

/// Layout of one resolution level's feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLevel {
    pub resolution: usize,
    pub dims: usize,
    pub features: usize,
    /// Rows actually stored, `min((N + 1)^D, T)`.
    pub rows: usize,
    pub addressing: Addressing,
    strides: Vec<usize>,
}

impl GridLevel {
    pub fn new(resolution: usize, dims: usize, features: usize, table_len: usize) -> Self {
        let extent = resolution + 1;
        let vertices = (0..dims).try_fold(1usize, |acc, _| acc.checked_mul(extent));
        let (rows, addressing) = match vertices {
            Some(v) if v <= table_len => (v, Addressing::Direct),
            _ => (table_len, Addressing::Hashed),
        };
        let mut strides = vec![1usize; dims];
        if addressing == Addressing::Direct {
            for d in (0..dims.saturating_sub(1)).rev() {
                strides[d] = strides[d + 1] * extent;
            }
        }
        Self {
            resolution,
            dims,
            features,
            rows,
            addressing,
            strides,
        }
    }

    /// Vertices per axis, `N + 1`.
    pub fn extent(&self) -> usize {
        self.resolution + 1
    }

    pub fn table_size(&self) -> usize {
        self.rows * self.features
    }

    /// Table row holding `vertex`.
    pub fn vertex_to_row(&self, vertex: &[usize]) -> Result<usize> {
        if vertex.len() != self.dims {
            return Err(Error::State(format!(
                "vertex has {} coordinates, level has {} axes",
                vertex.len(),
                self.dims
            )));
        }
        if let Some(d) = vertex.iter().position(|&i| i >= self.extent()) {
            return Err(Error::State(format!(
                "vertex index {} on axis {d} exceeds level extent {}",
                vertex[d],
                self.extent()
            )));
        }
        Ok(self.row_of(vertex))
    }

    #[inline]
    fn row_of(&self, vertex: &[usize]) -> usize {
        match self.addressing {
            Addressing::Direct => vertex.iter().zip(&self.strides).map(|(i, s)| i * s).sum(),
            Addressing::Hashed => spatial_hash(vertex, self.rows),
        }
    }

    #[inline]
    fn row_1d(&self, i: usize) -> usize {
        match self.addressing {
            Addressing::Direct => i,
            Addressing::Hashed => (i as u64 % self.rows as u64) as usize,
        }
    }

    /// Cell base vertex and local offset along one axis.
    #[inline]
    pub fn cell(&self, v: f64) -> (usize, f64) {
        let p = (self.resolution - 1) as f64 * v;
        let base = p.floor();
        (base as usize, p - base)
    }
}

/// XOR of `vertex[d] · π_d` (wrapping 64-bit) reduced modulo `table_len`.
pub fn spatial_hash(vertex: &[usize], table_len: usize) -> usize {
    let h = vertex
        .iter()
        .zip(HASH_PRIMES.iter())
        .fold(0u64, |acc, (&i, &p)| acc ^ (i as u64).wrapping_mul(p));
    (h % table_len as u64) as usize
}

/// Counts grid work done by the encoders: level queries and vertex rows
/// read. Shared across threads.
#[derive(Debug, Default)]
pub struct QueryCounter {
    level_queries: AtomicU64,
    corner_reads: AtomicU64,
}

impl QueryCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, queries: u64, corners: u64) {
        self.level_queries.fetch_add(queries, Ordering::Relaxed);
        self.corner_reads.fetch_add(corners, Ordering::Relaxed);
    }

    pub fn level_queries(&self) -> u64 {
        self.level_queries.load(Ordering::Relaxed)
    }

    pub fn corner_reads(&self) -> u64 {
        self.corner_reads.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.level_queries.store(0, Ordering::Relaxed);
        self.corner_reads.store(0, Ordering::Relaxed);
    }
}

pub(crate) fn check_coord(axis: usize, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { axis, value: v })
    }
}

/// Two-point interpolation of a 1D level, written into `out` (length F).
#[inline]
pub(crate) fn interp_axis(level: &GridLevel, table: &[f64], t: f64, out: &mut [f64]) {
    let f = level.features;
    let (base, u) = level.cell(t);
    let r0 = level.row_1d(base) * f;
    let r1 = level.row_1d(base + 1) * f;
    let (w0, w1) = (1.0 - u, u);
    for k in 0..f {
        let mut acc = 0.0;
        acc += w0 * table[r0 + k];
        acc += w1 * table[r1 + k];
        out[k] = acc;
    }
}

/// Adjoint of [`interp_axis`]: accumulates `grad` into the two rows.
#[inline]
pub(crate) fn scatter_axis(level: &GridLevel, table_grad: &mut [f64], t: f64, grad: &[f64]) {
    let f = level.features;
    let (base, u) = level.cell(t);
    let r0 = level.row_1d(base) * f;
    let r1 = level.row_1d(base + 1) * f;
    let (w0, w1) = (1.0 - u, u);
    for k in 0..f {
        table_grad[r0 + k] += w0 * grad[k];
    }
    for k in 0..f {
        table_grad[r1 + k] += w1 * grad[k];
    }
}

/// Per-corner rows and weights of a D-dimensional level query. Corner `c`
/// takes offset bit `D − 1 − d` on axis `d`, so corners enumerate
/// `{0,1}^D` in row-major order.
#[inline]
pub(crate) fn dense_corners(
    level: &GridLevel,
    v: &[f64],
    rows: &mut [usize],
    weights: &mut [f64],
    vertex: &mut [usize],
) {
    let dims = level.dims;
    let mut bases = [0usize; 8];
    let mut fracs = [0f64; 8];
    for d in 0..dims {
        let (b, u) = level.cell(v[d]);
        bases[d] = b;
        fracs[d] = u;
    }
    for c in 0..(1usize << dims) {
        let mut w = 1.0;
        for d in 0..dims {
            let bit = (c >> (dims - 1 - d)) & 1;
            vertex[d] = bases[d] + bit;
            w *= if bit == 1 { fracs[d] } else { 1.0 - fracs[d] };
        }
        rows[c] = level.row_of(&vertex[..dims]);
        weights[c] = w;
    }
}

#[inline]
pub(crate) fn interp_dense(level: &GridLevel, table: &[f64], v: &[f64], out: &mut [f64]) {
    let f = level.features;
    let corners = 1usize << level.dims;
    let mut rows = [0usize; 256];
    let mut weights = [0f64; 256];
    let mut vertex = [0usize; 8];
    dense_corners(level, v, &mut rows, &mut weights, &mut vertex);
    out[..f].fill(0.0);
    for c in 0..corners {
        let r = rows[c] * f;
        let w = weights[c];
        for k in 0..f {
            out[k] += w * table[r + k];
        }
    }
}

#[inline]
pub(crate) fn scatter_dense(level: &GridLevel, table_grad: &mut [f64], v: &[f64], grad: &[f64]) {
    let f = level.features;
    let corners = 1usize << level.dims;
    let mut rows = [0usize; 256];
    let mut weights = [0f64; 256];
    let mut vertex = [0usize; 8];
    dense_corners(level, v, &mut rows, &mut weights, &mut vertex);
    for c in 0..corners {
        let r = rows[c] * f;
        let w = weights[c];
        for k in 0..f {
            table_grad[r + k] += w * grad[k];
        }
    }
}

/// Interpolation weights of one level query.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationWeights {
    /// Base vertex `⌊(N − 1)v⌋` per axis.
    pub base: Vec<usize>,
    /// Corner weights in row-major order over `{0,1}^D`.
    pub corners: Vec<f64>,
}

pub fn interpolation_weights(level: &GridLevel, v: &[f64]) -> Result<InterpolationWeights> {
    if v.len() != level.dims {
        return invalid("coordinate dimension does not match level");
    }
    for (d, &x) in v.iter().enumerate() {
        check_coord(d, x)?;
    }
    let base = v.iter().map(|&x| level.cell(x).0).collect();
    let mut rows = vec![0usize; 1 << level.dims];
    let mut corners = vec![0f64; 1 << level.dims];
    let mut vertex = vec![0usize; level.dims];
    dense_corners(level, v, &mut rows, &mut corners, &mut vertex);
    Ok(InterpolationWeights { base, corners })
}

/// One level's feature table together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub level: GridLevel,
    pub entries: Vec<f64>,
}

impl GridTable {
    pub fn zeros(level: GridLevel) -> Self {
        let entries = vec![0.0; level.table_size()];
        Self { level, entries }
    }

    /// Entries uniform in `[-scale, scale]`.
    pub fn random(level: GridLevel, scale: f64, rng: &mut Rng) -> Self {
        let entries = (0..level.table_size())
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { level, entries }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let f = self.level.features;
        &self.entries[r * f..(r + 1) * f]
    }

    pub fn project_rows_l1(&mut self) {
        project_rows_l1(&mut self.entries, self.level.features);
    }
}

/// Rescales each row to `‖row‖₁ = min(‖row‖₁, 1)`.
pub fn project_rows_l1(entries: &mut [f64], features: usize) {
    for row in entries.chunks_mut(features) {
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 1.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Random tables for `cfg`, in the order of [`EncoderConfig::level_layouts`].
pub fn random_tables(cfg: &EncoderConfig, scale: f64, rng: &mut Rng) -> Vec<GridTable> {
    cfg.level_layouts()
        .into_iter()
        .map(|level| GridTable::random(level, scale, rng))
        .collect()
}

fn check_tables(cfg: &EncoderConfig, grids: &[GridTable], dims: usize) -> Result<()> {
    if grids.len() != cfg.levels {
        return invalid(format!(
            "expected {} level tables, got {}",
            cfg.levels,
            grids.len()
        ));
    }
    for g in grids {
        if g.level.dims != dims || g.level.features != cfg.features {
            return invalid("grid table layout does not match the encoder config");
        }
        if g.entries.len() != g.level.table_size() {
            return invalid("grid table entry count does not match its layout");
        }
    }
    Ok(())
}

/// Dense multi-resolution encoding of a point `v ∈ [0,1)^D`.
pub fn encode_dense(cfg: &EncoderConfig, grids: &[GridTable], v: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != cfg.dims {
        return invalid(format!(
            "coordinate has {} entries, encoder expects {}",
            v.len(),
            cfg.dims
        ));
    }
    check_tables(cfg, grids, cfg.dims)?;
    for (d, &x) in v.iter().enumerate() {
        check_coord(d, x)?;
    }
    let f = cfg.features;
    let mut out = vec![0.0; cfg.rank()];
    for (l, g) in grids.iter().enumerate() {
        interp_dense(&g.level, &g.entries, v, &mut out[l * f..(l + 1) * f]);
    }
    Ok(out)
}

/// One-dimensional multi-resolution encoding `H_d(t)`.
pub fn encode_axis(cfg: &EncoderConfig, grids_d: &[GridTable], t: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_tables(cfg, grids_d, 1)?;
    check_coord(0, t)?;
    let f = cfg.features;
    let mut out = vec![0.0; cfg.rank()];
    for (l, g) in grids_d.iter().enumerate() {
        interp_axis(&g.level, &g.entries, t, &mut out[l * f..(l + 1) * f]);
    }
    Ok(out)
}

/// Decomposed encoding: elementwise product over axes of `H_d(v[d])`.
pub fn encode_gridtd(
    cfg: &EncoderConfig,
    per_axis: &[Vec<GridTable>],
    v: &[f64],
) -> Result<Vec<f64>> {
    if per_axis.len() != cfg.dims || v.len() != cfg.dims {
        return invalid("per-axis grids and coordinate must both have D entries");
    }
    let mut out = encode_axis(cfg, &per_axis[0], v[0])
        .map_err(|e| relabel_axis(e, 0))?;
    for d in 1..cfg.dims {
        let h = encode_axis(cfg, &per_axis[d], v[d]).map_err(|e| relabel_axis(e, d))?;
        out.iter_mut().zip(&h).for_each(|(a, b)| *a *= b);
    }
    Ok(out)
}

fn relabel_axis(e: Error, axis: usize) -> Error {
    match e {
        Error::OutOfDomain { value, .. } => Error::OutOfDomain { axis, value },
        other => other,
    }
}

/// Encodes every point of `coords` at once. Each axis encoder is queried
/// once per axis coordinate (`Σ_d n_d` queries in total); the results are
/// fused by broadcast products into a tensor of shape `(n_1, …, n_D, R)`.
pub fn encode_batch_parallel(
    cfg: &EncoderConfig,
    per_axis: &[Vec<GridTable>],
    coords: &CoordinateGrid,
    counter: Option<&QueryCounter>,
) -> Result<Tensor> {
    cfg.validate()?;
    if per_axis.len() != cfg.dims || coords.dims() != cfg.dims {
        return invalid("coordinate grid dimension does not match encoder");
    }
    let r = cfg.rank();
    let f = cfg.features;
    let mut factors: Vec<Vec<f64>> = Vec::with_capacity(cfg.dims);
    for (d, grids) in per_axis.iter().enumerate() {
        check_tables(cfg, grids, 1)?;
        let axis = coords.axis(d);
        let mut enc = vec![0.0; axis.len() * r];
        for (i, &t) in axis.iter().enumerate() {
            check_coord(d, t)?;
            for (l, g) in grids.iter().enumerate() {
                let off = i * r + l * f;
                interp_axis(&g.level, &g.entries, t, &mut enc[off..off + f]);
            }
        }
        if let Some(c) = counter {
            let q = (axis.len() * cfg.levels) as u64;
            c.record(q, 2 * q);
        }
        factors.push(enc);
    }
    let shape = coords.shape();
    let mut out_shape = shape.clone();
    out_shape.push(r);
    let points = coords.point_count();
    let mut data = vec![0.0; points * r];
    let mut idx = vec![0usize; shape.len()];
    for p in 0..points {
        let row = &mut data[p * r..(p + 1) * r];
        row.copy_from_slice(&factors[0][idx[0] * r..(idx[0] + 1) * r]);
        for d in 1..shape.len() {
            let h = &factors[d][idx[d] * r..(idx[d] + 1) * r];
            row.iter_mut().zip(h).for_each(|(a, b)| *a *= b);
        }
        increment_index(&mut idx, &shape);
    }
    Tensor::from_vec(&out_shape, data)
}

/// Encodes every point of `coords` with the dense encoder, point by point.
/// Result has shape `(n_1, …, n_D, R)`.
pub fn encode_dense_batch(
    cfg: &EncoderConfig,
    grids: &[GridTable],
    coords: &CoordinateGrid,
    counter: Option<&QueryCounter>,
) -> Result<Tensor> {
    cfg.validate()?;
    if coords.dims() != cfg.dims {
        return invalid("coordinate grid dimension does not match encoder");
    }
    check_tables(cfg, grids, cfg.dims)?;
    for d in 0..cfg.dims {
        for &t in coords.axis(d) {
            check_coord(d, t)?;
        }
    }
    let (r, f) = (cfg.rank(), cfg.features);
    let shape = coords.shape();
    let points = coords.point_count();
    let mut data = vec![0.0; points * r];
    let mut idx = vec![0usize; shape.len()];
    let mut v = vec![0.0; shape.len()];
    for p in 0..points {
        for d in 0..shape.len() {
            v[d] = coords.axis(d)[idx[d]];
        }
        for (l, g) in grids.iter().enumerate() {
            let off = p * r + l * f;
            interp_dense(&g.level, &g.entries, &v, &mut data[off..off + f]);
            if let Some(c) = counter {
                c.record(1, 1 << g.level.dims);
            }
        }
        increment_index(&mut idx, &shape);
    }
    let mut out_shape = shape;
    out_shape.push(r);
    Tensor::from_vec(&out_shape, data)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GTDE";

/// Writes the encoder config (fixed-width little-endian fields) followed by
/// every level table as a `GTD1` record of shape `(rows, F)`.
pub fn write_encoder<W: Write>(w: &mut W, cfg: &EncoderConfig, tables: &[GridTable]) -> Result<()> {
    cfg.validate()?;
    let layouts = cfg.level_layouts();
    if tables.len() != layouts.len() {
        return invalid("table count does not match encoder layout");
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    let mode: u32 = match cfg.mode {
        EncodingMode::Dense => 0,
        EncodingMode::Decomposed => 1,
    };
    for v in [mode, cfg.dims as u32, cfg.levels as u32, cfg.features as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [cfg.n_min as u64, cfg.n_max as u64, cfg.table_len as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in tables {
        let tensor = Tensor::from_vec(&[t.level.rows, t.level.features], t.entries.clone())?;
        write_tensor(w, &tensor)?;
    }
    Ok(())
}

pub fn read_encoder<R: Read>(r: &mut R) -> Result<(EncoderConfig, Vec<GridTable>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an encoder checkpoint".into()));
    }
    let mut u32s = [0u32; 4];
    for v in u32s.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let mut u64s = [0u64; 3];
    for v in u64s.iter_mut() {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *v = u64::from_le_bytes(b);
    }
    let mode = match u32s[0] {
        0 => EncodingMode::Dense,
        1 => EncodingMode::Decomposed,
        m => return Err(Error::Format(format!("unknown mode tag {m}"))),
    };
    let cfg = EncoderConfig {
        mode,
        dims: u32s[1] as usize,
        levels: u32s[2] as usize,
        features: u32s[3] as usize,
        n_min: u64s[0] as usize,
        n_max: u64s[1] as usize,
        table_len: u64s[2] as usize,
    };
    cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut tables = Vec::new();
    for level in cfg.level_layouts() {
        let t = read_tensor(r)?;
        if t.shape() != [level.rows, level.features] {
            return Err(Error::Format(format!(
                "table shape {:?} does not match layout ({}, {})",
                t.shape(),
                level.rows,
                level.features
            )));
        }
        tables.push(GridTable {
            level,
            entries: t.into_data(),
        });
    }
    Ok((cfg, tables))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::uniform_coordinates;

    fn cfg1(mode: EncodingMode, n: usize) -> EncoderConfig {
        EncoderConfig {
            mode,
            dims: 1,
            levels: 1,
            features: 1,
            n_min: n,
            n_max: n,
            table_len: 1 << 10,
        }
    }

    fn table_1d(n: usize, values: &[f64]) -> GridTable {
        let level = GridLevel::new(n, 1, 1, 1 << 10);
        let mut entries = vec![0.0; level.table_size()];
        entries[..values.len()].copy_from_slice(values);
        GridTable { level, entries }
    }

    #[test]
    fn level_schedule_is_geometric() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Dense,
            dims: 2,
            levels: 3,
            features: 2,
            n_min: 4,
            n_max: 16,
            table_len: 1 << 12,
        };
        assert_eq!(cfg.resolutions(), vec![4, 8, 16]);
        assert_eq!(cfg.rank(), 6);
        let single = EncoderConfig { levels: 1, ..cfg };
        assert_eq!(single.resolutions(), vec![4]);
    }

    #[test]
    fn config_validation() {
        let ok = cfg1(EncodingMode::Dense, 3);
        assert!(ok.validate().is_ok());
        assert!(EncoderConfig { n_min: 1, ..ok.clone() }.validate().is_err());
        assert!(EncoderConfig { n_max: 2, ..ok.clone() }.validate().is_err());
        assert!(EncoderConfig { levels: 0, ..ok.clone() }.validate().is_err());
        assert!(EncoderConfig { features: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn hand_evaluated_1d_interpolation() {
        // N = 3: (N − 1)·0.25 = 0.5 → base 0, u = 0.5.
        let (g0, g1, g2) = (2.0, -4.0, 10.0);
        let t = table_1d(3, &[g0, g1, g2]);
        for mode in [EncodingMode::Dense, EncodingMode::Decomposed] {
            let cfg = cfg1(mode, 3);
            let dense = encode_dense(&cfg, &[t.clone()], &[0.25]).unwrap();
            let axis = encode_axis(&cfg, &[t.clone()], 0.25).unwrap();
            assert_eq!(dense, vec![0.5 * g0 + 0.5 * g1]);
            assert_eq!(axis, dense);
        }
    }

    #[test]
    fn vertex_queries_return_rows() {
        let t = table_1d(5, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cfg = cfg1(EncodingMode::Decomposed, 5);
        // (N − 1)·0.5 = 2 exactly.
        assert_eq!(encode_axis(&cfg, &[t.clone()], 0.5).unwrap(), vec![3.0]);
        assert_eq!(encode_axis(&cfg, &[t], 0.0).unwrap(), vec![1.0]);

        let cfg2 = EncoderConfig {
            dims: 2,
            mode: EncodingMode::Dense,
            features: 2,
            ..cfg1(EncodingMode::Dense, 5)
        };
        let level = GridLevel::new(5, 2, 2, 1 << 10);
        let entries: Vec<f64> = (0..level.table_size()).map(|k| k as f64).collect();
        let g = GridTable { level, entries };
        let out = encode_dense(&cfg2, &[g.clone()], &[0.25, 0.75]).unwrap();
        let row = g.level.vertex_to_row(&[1, 3]).unwrap();
        assert_eq!(out, g.row(row).to_vec());
    }

    #[test]
    fn constant_field_is_reproduced() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Dense,
            dims: 2,
            levels: 2,
            features: 3,
            n_min: 3,
            n_max: 9,
            table_len: 1 << 12,
        };
        let tables: Vec<GridTable> = cfg
            .level_layouts()
            .into_iter()
            .map(|level| {
                let n = level.table_size();
                GridTable {
                    level,
                    entries: vec![0.7; n],
                }
            })
            .collect();
        let mut rng = stream(3, "pts");
        for _ in 0..50 {
            let v = [rng.random::<f64>(), rng.random::<f64>()];
            let out = encode_dense(&cfg, &tables, &v).unwrap();
            for x in out {
                assert!((x - 0.7).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let t = table_1d(3, &[0.0; 4]);
        let cfg = cfg1(EncodingMode::Dense, 3);
        assert!(matches!(
            encode_dense(&cfg, &[t.clone()], &[1.0]),
            Err(Error::OutOfDomain { axis: 0, .. })
        ));
        assert!(encode_axis(&cfg, &[t], -1e-9).is_err());
    }

    #[test]
    fn axis_output_preserves_level_order() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Decomposed,
            dims: 1,
            levels: 2,
            features: 2,
            n_min: 3,
            n_max: 5,
            table_len: 1 << 10,
        };
        let tables: Vec<GridTable> = cfg
            .level_layouts()
            .into_iter()
            .enumerate()
            .map(|(l, level)| {
                let n = level.table_size();
                GridTable {
                    level,
                    entries: vec![(l + 1) as f64; n],
                }
            })
            .collect();
        let out = encode_axis(&cfg, &tables, 0.3).unwrap();
        assert_eq!(out.len(), 4);
        assert!((out[0] - 1.0).abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
        assert!((out[2] - 2.0).abs() < 1e-15 && (out[3] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gridtd_special_cases() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Decomposed,
            dims: 1,
            levels: 2,
            features: 3,
            n_min: 4,
            n_max: 8,
            table_len: 1 << 10,
        };
        let mut rng = stream(1, "grids");
        let tables = random_tables(&cfg, 1.0, &mut rng);
        let a = encode_gridtd(&cfg, &[tables.clone()], &[0.37]).unwrap();
        let b = encode_axis(&cfg, &tables, 0.37).unwrap();
        assert_eq!(a, b);

        let cfg3 = EncoderConfig { dims: 3, ..cfg };
        let ones: Vec<Vec<GridTable>> = (0..3)
            .map(|_| {
                cfg3.level_layouts()[..2]
                    .iter()
                    .cloned()
                    .map(|level| {
                        let n = level.table_size();
                        GridTable {
                            level,
                            entries: vec![1.0; n],
                        }
                    })
                    .collect()
            })
            .collect();
        let out = encode_gridtd(&cfg3, &ones, &[0.1, 0.5, 0.9]).unwrap();
        assert!(out.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    fn per_axis(cfg: &EncoderConfig, seed: u64) -> Vec<Vec<GridTable>> {
        let mut rng = stream(seed, "grids");
        let flat = random_tables(cfg, 1.0, &mut rng);
        flat.chunks(cfg.levels).map(|c| c.to_vec()).collect()
    }

    #[test]
    fn gridtd_matches_scalar_loop_oracle() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Decomposed,
            dims: 3,
            levels: 3,
            features: 2,
            n_min: 3,
            n_max: 12,
            table_len: 1 << 12,
        };
        let grids = per_axis(&cfg, 11);
        let mut rng = stream(12, "pts");
        for _ in 0..40 {
            let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let got = encode_gridtd(&cfg, &grids, &v).unwrap();
            // Scalar oracle: direct two-point lerp per axis, per entry.
            for l in 0..cfg.levels {
                for k in 0..cfg.features {
                    let mut prod = 1.0;
                    for d in 0..3 {
                        let g = &grids[d][l];
                        let n = g.level.resolution;
                        let p = (n - 1) as f64 * v[d];
                        let i = p.floor() as usize;
                        let u = p - i as f64;
                        let e = (1.0 - u) * g.entries[i * cfg.features + k]
                            + u * g.entries[(i + 1) * cfg.features + k];
                        prod *= e;
                    }
                    let diff = (got[l * cfg.features + k] - prod).abs();
                    assert!(diff < 1e-15, "diff {diff}");
                }
            }
        }
    }

    #[test]
    fn batch_matches_pointwise_and_counts_axis_queries() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Decomposed,
            dims: 3,
            levels: 2,
            features: 2,
            n_min: 3,
            n_max: 7,
            table_len: 1 << 12,
        };
        let grids = per_axis(&cfg, 5);
        let coords = uniform_coordinates(&[5, 4, 3]).unwrap();
        let counter = QueryCounter::new();
        let h = encode_batch_parallel(&cfg, &grids, &coords, Some(&counter)).unwrap();
        assert_eq!(h.shape(), &[5, 4, 3, 4]);
        assert_eq!(counter.level_queries(), ((5 + 4 + 3) * 2) as u64);
        assert_eq!(counter.corner_reads(), ((5 + 4 + 3) * 2 * 2) as u64);
        for i in 0..5 {
            for j in 0..4 {
                for k in 0..3 {
                    let v = [coords.axis(0)[i], coords.axis(1)[j], coords.axis(2)[k]];
                    let p = encode_gridtd(&cfg, &grids, &v).unwrap();
                    for r in 0..4 {
                        assert!((h.get(&[i, j, k, r]) - p[r]).abs() < 1e-12);
                    }
                }
            }
        }

        let single = CoordinateGrid::new(vec![vec![0.3], vec![0.6], vec![0.2]]).unwrap();
        let h1 = encode_batch_parallel(&cfg, &grids, &single, None).unwrap();
        let p = encode_gridtd(&cfg, &grids, &[0.3, 0.6, 0.2]).unwrap();
        assert_eq!(h1.data(), p.as_slice());
    }

    #[test]
    fn dense_batch_matches_pointwise_and_counts_corners() {
        let cfg = EncoderConfig {
            mode: EncodingMode::Dense,
            dims: 3,
            levels: 2,
            features: 2,
            n_min: 3,
            n_max: 7,
            table_len: 1 << 12,
        };
        let tables = random_tables(&cfg, 1.0, &mut stream(6, "g"));
        let coords = uniform_coordinates(&[5, 4, 3]).unwrap();
        let counter = QueryCounter::new();
        let h = encode_dense_batch(&cfg, &tables, &coords, Some(&counter)).unwrap();
        assert_eq!(counter.level_queries(), (5 * 4 * 3 * 2) as u64);
        assert_eq!(counter.corner_reads(), (5 * 4 * 3 * 2 * 8) as u64);
        let v = [coords.axis(0)[3], coords.axis(1)[1], coords.axis(2)[2]];
        let p = encode_dense(&cfg, &tables, &v).unwrap();
        for r in 0..4 {
            assert_eq!(h.get(&[3, 1, 2, r]), p[r]);
        }
    }

    #[test]
    fn direct_and_hashed_rows() {
        let direct = GridLevel::new(9, 1, 1, 64);
        assert_eq!(direct.addressing, Addressing::Direct);
        assert_eq!(direct.vertex_to_row(&[5]).unwrap(), 5);
        assert!(direct.vertex_to_row(&[10]).is_err());

        let hashed = GridLevel::new(15, 3, 1, 16);
        assert_eq!(hashed.addressing, Addressing::Hashed);
        let a = hashed.vertex_to_row(&[1, 2, 3]).unwrap();
        let b = hashed.vertex_to_row(&[1, 2, 3]).unwrap();
        assert_eq!(a, b);
        let oracle = ((1u64 * 1) ^ (2u64 * 2_654_435_761) ^ (3u64 * 805_459_861)) % 16;
        assert_eq!(a as u64, oracle);
    }

    #[test]
    fn param_counts() {
        let dec = EncoderConfig {
            mode: EncodingMode::Decomposed,
            dims: 3,
            levels: 1,
            features: 1,
            n_min: 10,
            n_max: 10,
            table_len: 1 << 20,
        };
        assert_eq!(param_count(&dec), 33);

        let d1 = EncoderConfig {
            dims: 1,
            levels: 4,
            features: 2,
            n_min: 4,
            n_max: 64,
            ..dec.clone()
        };
        let dense1 = EncoderConfig {
            mode: EncodingMode::Dense,
            ..d1.clone()
        };
        assert_eq!(param_count(&d1), param_count(&dense1));

        let big_dense = EncoderConfig {
            mode: EncodingMode::Dense,
            dims: 3,
            levels: 8,
            features: 2,
            n_min: 4,
            n_max: 100,
            table_len: 1 << 22,
        };
        let big_dec = EncoderConfig {
            mode: EncodingMode::Decomposed,
            ..big_dense.clone()
        };
        assert!(param_count(&big_dense) > 100 * param_count(&big_dec));
    }

    #[test]
    fn weights_sum_to_one() {
        let level = GridLevel::new(13, 3, 1, 1 << 20);
        let mut rng = stream(9, "w");
        for _ in 0..200 {
            let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let w = interpolation_weights(&level, &v).unwrap();
            assert!(w.corners.iter().all(|&c| c >= 0.0));
            assert!((w.corners.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        for mode in [EncodingMode::Dense, EncodingMode::Decomposed] {
            let cfg = EncoderConfig {
                mode,
                dims: 2,
                levels: 3,
                features: 2,
                n_min: 4,
                n_max: 40,
                table_len: 256,
            };
            let mut rng = stream(4, "ckpt");
            let tables = random_tables(&cfg, 0.3, &mut rng);
            let mut buf = Vec::new();
            write_encoder(&mut buf, &cfg, &tables).unwrap();
            let (cfg2, tables2) = read_encoder(&mut buf.as_slice()).unwrap();
            assert_eq!(cfg, cfg2);
            assert_eq!(tables.len(), tables2.len());
            for (a, b) in tables.iter().zip(&tables2) {
                assert_eq!(a.level, b.level);
                let ab: Vec<u64> = a.entries.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.entries.iter().map(|v| v.to_bits()).collect();
                assert_eq!(ab, bb);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lerp_cfg(dims: usize, mode: EncodingMode) -> EncoderConfig {
            EncoderConfig {
                mode,
                dims,
                levels: 3,
                features: 2,
                n_min: 3,
                n_max: 17,
                table_len: 1 << 14,
            }
        }

        proptest! {
            #[test]
            fn dense_weights_sum_to_one(v in prop::collection::vec(0.0f64..0.999_999, 1..4)) {
                let level = GridLevel::new(7, v.len(), 1, 1 << 16);
                let w = interpolation_weights(&level, &v).unwrap();
                prop_assert!((w.corners.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }

            #[test]
            fn encoding_is_linear_inside_a_cell(seed in 0u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
                let cfg = lerp_cfg(2, EncodingMode::Dense);
                let tables = random_tables(&cfg, 1.0, &mut stream(seed, "g"));
                let anchor = [0.123_456 + 0.5 * a, 0.234_567 + 0.4 * b];
                let v1 = [anchor[0], anchor[1]];
                let v2 = [anchor[0] + 1e-7, anchor[1] + 2e-7];
                let mid = [(v1[0] + v2[0]) / 2.0, (v1[1] + v2[1]) / 2.0];
                let same_cell = cfg.level_layouts().iter().all(|lv| {
                    (0..2).all(|d| lv.cell(v1[d]).0 == lv.cell(v2[d]).0)
                });
                prop_assume!(same_cell);
                let e1 = encode_dense(&cfg, &tables, &v1).unwrap();
                let e2 = encode_dense(&cfg, &tables, &v2).unwrap();
                let em = encode_dense(&cfg, &tables, &mid).unwrap();
                // Bilinear is only linear to first order along a segment;
                // the midpoint defect is O(|Δ|²).
                for k in 0..em.len() {
                    prop_assert!((em[k] - 0.5 * (e1[k] + e2[k])).abs() < 1e-10);
                }
            }

            #[test]
            fn axis_encoding_is_affine_inside_a_cell(seed in 0u64..500, a in 0.0f64..1.0, s in 0.0f64..1.0) {
                let cfg = lerp_cfg(1, EncodingMode::Decomposed);
                let tables = random_tables(&cfg, 1.0, &mut stream(seed, "g"));
                let v1 = 0.9 * a;
                let v2 = v1 + 0.05 * s;
                let same_cell = cfg.level_layouts().iter().all(|lv| lv.cell(v1).0 == lv.cell(v2).0);
                prop_assume!(same_cell);
                let e1 = encode_axis(&cfg, &tables, v1).unwrap();
                let e2 = encode_axis(&cfg, &tables, v2).unwrap();
                let em = encode_axis(&cfg, &tables, 0.5 * (v1 + v2)).unwrap();
                for k in 0..em.len() {
                    prop_assert!((em[k] - 0.5 * (e1[k] + e2[k])).abs() < 1e-12);
                }
            }

            #[test]
            fn continuous_across_vertices(seed in 0u64..500, vertex in 1usize..16) {
                let cfg = EncoderConfig { levels: 1, n_min: 17, n_max: 17, ..lerp_cfg(1, EncodingMode::Decomposed) };
                let tables = random_tables(&cfg, 1.0, &mut stream(seed, "g"));
                let at = vertex as f64 / 16.0;
                let left = encode_axis(&cfg, &tables, at - 1e-13).unwrap();
                let right = encode_axis(&cfg, &tables, at).unwrap();
                for k in 0..left.len() {
                    prop_assert!((left[k] - right[k]).abs() < 1e-10);
                }
            }

            #[test]
            fn one_dimensional_modes_agree(seed in 0u64..500, t in 0.0f64..1.0) {
                let dec = lerp_cfg(1, EncodingMode::Decomposed);
                let dense = lerp_cfg(1, EncodingMode::Dense);
                let tables = random_tables(&dec, 1.0, &mut stream(seed, "g"));
                let a = encode_gridtd(&dec, &[tables.clone()], &[t]).unwrap();
                let b = encode_dense(&dense, &tables, &[t]).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
