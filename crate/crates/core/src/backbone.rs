//! Per-point local descriptors.
//!
//! The cloud is voxelised, each voxel is embedded from simple geometric
//! features, and a stack of blocks alternates a residual per-voxel MLP with
//! windowed multi-head self-attention. Heads are split between radial
//! windows (binned on azimuth/polar angle only, so a whole ray shares a
//! window) and cubic windows (binned on x, y, z). Voxel features are finally
//! copied back to the points they contain.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SalsaError};
use crate::geometry::{to_spherical, voxelize, Point3, PointCloud, VoxelGrid, WindowKind, WindowSizes};
use crate::numeric::{AttentionLayout, Matrix, ParamId, ParamSet, Tape, Var};

/// Number of geometric input features per voxel.
pub const VOXEL_FEATURES: usize = 9;

/// Ranges are fed to the embedding in units of this many meters.
const RANGE_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub d: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub enable_radial: bool,
    pub enable_cubic: bool,
    pub windows: WindowSizes,
    pub voxel_size: f64,
    /// Hidden width of each block's MLP.
    pub mlp_hidden: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d: 16,
            num_blocks: 2,
            num_heads: 4,
            enable_radial: true,
            enable_cubic: true,
            windows: WindowSizes::default(),
            voxel_size: 0.3,
            mlp_hidden: 32,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SalsaError::InvalidArgument(m));
        if self.d == 0 || self.mlp_hidden == 0 {
            return bad("backbone widths must be positive".into());
        }
        if self.num_heads == 0 || self.d % self.num_heads != 0 {
            return bad(format!("d = {} is not divisible by {} heads", self.d, self.num_heads));
        }
        if self.enable_radial && self.enable_cubic && self.num_heads % 2 != 0 {
            return bad(format!("{} heads cannot be split between radial and cubic windows", self.num_heads));
        }
        let w = &self.windows;
        if !(w.dalpha > 0.0 && w.dbeta > 0.0 && w.cubic > 0.0 && self.voxel_size > 0.0) {
            return bad("window and voxel sizes must be positive".into());
        }
        Ok(())
    }

    /// Window kind used by each head; empty when attention is disabled.
    pub fn head_kinds(&self) -> Vec<WindowKind> {
        match (self.enable_radial, self.enable_cubic) {
            (false, false) => Vec::new(),
            (true, false) => vec![WindowKind::Radial; self.num_heads],
            (false, true) => vec![WindowKind::Cubic; self.num_heads],
            (true, true) => {
                let half = self.num_heads / 2;
                (0..self.num_heads)
                    .map(|h| if h < half { WindowKind::Radial } else { WindowKind::Cubic })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub blocks: Vec<BlockParams>,
}

pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Matrix {
    let std = gain * (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl BackboneParams {
    pub fn init<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let h = cfg.mlp_hidden;
        let embed_w = params.add("backbone.embed.w", glorot(VOXEL_FEATURES, d, 1.0, rng))?;
        let embed_b = params.add("backbone.embed.b", Matrix::zeros(1, d))?;
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for b in 0..cfg.num_blocks {
            let name = |s: &str| format!("backbone.block{b}.{s}");
            blocks.push(BlockParams {
                mlp_w1: params.add(name("mlp.w1"), glorot(d, h, 1.0, rng))?,
                mlp_b1: params.add(name("mlp.b1"), Matrix::zeros(1, h))?,
                mlp_w2: params.add(name("mlp.w2"), glorot(h, d, 0.5, rng))?,
                mlp_b2: params.add(name("mlp.b2"), Matrix::zeros(1, d))?,
                wq: params.add(name("attn.wq"), glorot(d, d, 1.0, rng))?,
                wk: params.add(name("attn.wk"), glorot(d, d, 1.0, rng))?,
                wv: params.add(name("attn.wv"), glorot(d, d, 1.0, rng))?,
                wo: params.add(name("attn.wo"), glorot(d, d, 0.5, rng))?,
            });
        }
        Ok(Self {
            embed_w,
            embed_b,
            blocks,
        })
    }
}

/// Per-point descriptors tied to the positions they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDescriptorSet {
    pub descriptors: Matrix,
    pub positions: Vec<Point3>,
}

impl LocalDescriptorSet {
    pub fn new(descriptors: Matrix, positions: Vec<Point3>) -> Result<Self> {
        if descriptors.rows() != positions.len() {
            return Err(SalsaError::InvalidArgument(format!(
                "{} descriptors for {} positions",
                descriptors.rows(),
                positions.len()
            )));
        }
        descriptors.check_finite("LocalDescriptorSet")?;
        Ok(Self {
            descriptors,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.descriptors.cols()
    }
}

/// Geometric input row of every voxel:
/// `(offset within voxel ×3, r, sin α, cos α, β, intensity, ln(1+count))`.
pub fn voxel_features(grid: &VoxelGrid) -> Matrix {
    let size = grid.voxel_size();
    let mut m = Matrix::zeros(grid.len(), VOXEL_FEATURES);
    for (i, v) in grid.cells().iter().enumerate() {
        let s = to_spherical(&v.centroid);
        let row = m.row_mut(i);
        for k in 0..3 {
            row[k] = v.centroid[k] / size - v.key[k] as f64;
        }
        row[3] = s.r / RANGE_SCALE;
        row[4] = s.alpha.sin();
        row[5] = s.alpha.cos();
        row[6] = s.beta;
        row[7] = v.mean_intensity;
        row[8] = (v.count() as f64).ln_1p();
    }
    m
}

pub fn embed_voxels(tape: &mut Tape, params: &ParamSet, bp: &BackboneParams, grid: &VoxelGrid) -> Result<Var> {
    if grid.is_empty() {
        return Err(SalsaError::InvalidArgument("cannot embed an empty voxel grid".into()));
    }
    let x = tape.constant(voxel_features(grid));
    let w = tape.param(params, bp.embed_w);
    let b = tape.param(params, bp.embed_b);
    tape.linear(x, w, b)
}

/// Groups of voxel rows sharing a window, for one window kind.
pub fn window_groups(grid: &VoxelGrid, kind: WindowKind, sizes: &WindowSizes) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, v) in grid.cells().iter().enumerate() {
        groups.entry(sizes.index(kind, &v.centroid)).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Attention layout for a grid, or `None` when both window kinds are off.
pub fn attention_layout(grid: &VoxelGrid, cfg: &BackboneConfig) -> Option<AttentionLayout> {
    let kinds = cfg.head_kinds();
    if kinds.is_empty() {
        return None;
    }
    let radial = cfg
        .enable_radial
        .then(|| window_groups(grid, WindowKind::Radial, &cfg.windows));
    let cubic = cfg
        .enable_cubic
        .then(|| window_groups(grid, WindowKind::Cubic, &cfg.windows));
    let head_groups = kinds
        .iter()
        .map(|k| match k {
            WindowKind::Radial => radial.clone().expect("radial enabled"),
            WindowKind::Cubic => cubic.clone().expect("cubic enabled"),
        })
        .collect();
    Some(AttentionLayout { head_groups })
}

/// `x + MHA(x)·wo`, attention restricted to the layout's groups.
#[allow(clippy::too_many_arguments)]
pub fn window_attention(
    tape: &mut Tape,
    x: Var,
    layout: &AttentionLayout,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
) -> Result<Var> {
    let d = tape.shape(x).1;
    let heads = layout.heads();
    if heads == 0 || d % heads != 0 {
        return Err(crate::error::shape_err(
            "window_attention",
            format!("{d} channels for {heads} heads"),
        ));
    }
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let o = tape.grouped_attention(q, k, v, layout.clone(), scale)?;
    let o = tape.matmul(o, wo)?;
    tape.add(x, o)
}

/// Records the backbone on `tape`; returns the `N × d` point descriptors and
/// the voxel grid they were computed on.
pub fn forward_local(
    tape: &mut Tape,
    params: &ParamSet,
    bp: &BackboneParams,
    cfg: &BackboneConfig,
    cloud: &PointCloud,
) -> Result<(Var, VoxelGrid)> {
    let grid = voxelize(cloud, cfg.voxel_size)?;
    let layout = attention_layout(&grid, cfg);
    let mut h = embed_voxels(tape, params, bp, &grid)?;
    for block in &bp.blocks {
        let w1 = tape.param(params, block.mlp_w1);
        let b1 = tape.param(params, block.mlp_b1);
        let w2 = tape.param(params, block.mlp_w2);
        let b2 = tape.param(params, block.mlp_b2);
        let m = tape.mlp2(h, w1, b1, w2, b2)?;
        h = tape.add(h, m)?;
        if let Some(layout) = &layout {
            let wq = tape.param(params, block.wq);
            let wk = tape.param(params, block.wk);
            let wv = tape.param(params, block.wv);
            let wo = tape.param(params, block.wo);
            h = window_attention(tape, h, layout, wq, wk, wv, wo)?;
        }
    }
    let points = tape.gather_rows(h, grid.point_to_cell().to_vec())?;
    Ok((points, grid))
}

/// Inference-only local descriptor extraction.
pub fn extract_local_descriptors(
    cloud: &PointCloud,
    cfg: &BackboneConfig,
    params: &ParamSet,
    bp: &BackboneParams,
) -> Result<LocalDescriptorSet> {
    let mut tape = Tape::new();
    let (v, _) = forward_local(&mut tape, params, bp, cfg, cloud)?;
    LocalDescriptorSet::new(tape.value(v).clone(), cloud.points().to_vec())
}
