//! Backbone and head parameters bundled together, plus the binary weights
//! container.
//!
//! Layout (little-endian): magic `SALSAw1`, `u32` record count, then per
//! record `u32` name length, name bytes, `u32` rows, `u32` cols and
//! `rows·cols` `f64` values in row-major order. An optional whitener follows
//! under the tag `PCAW`: `u32` input dim, `u32` output dim, the mean, the
//! projection (row-major) and the eigenvalues, all `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::backbone::{forward_local, BackboneConfig, BackboneParams, LocalDescriptorSet};
use crate::descriptor::{finish_descriptor, record_head, AggregatorParams, HeadConfig, SceneDescriptor};
use crate::binio::{put_f64s, put_str, put_u32, ByteReader};
use crate::error::{Result, SalsaError};
use crate::geometry::{PointCloud, VoxelGrid};
use crate::numeric::{Matrix, ParamSet, PcaWhitener, Tape, Var};

pub const WEIGHTS_MAGIC: &[u8; 7] = b"SALSAw1";
pub const WHITENER_TAG: &[u8; 4] = b"PCAW";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.head.validate()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.head.descriptor_dim()
    }
}

#[derive(Clone, Debug)]
pub struct SalsaModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub backbone: BackboneParams,
    pub head: AggregatorParams,
}

/// Output of one recorded forward pass.
pub struct ForwardPass {
    /// `N × d` point descriptors.
    pub local: Var,
    /// `1 × e` normalised scene descriptor.
    pub global: Var,
    pub grid: VoxelGrid,
}

impl SalsaModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let backbone = BackboneParams::init(&mut params, &config.backbone, rng)?;
        let head = AggregatorParams::init(&mut params, config.backbone.d, &config.head, rng)?;
        Ok(Self {
            config,
            params,
            backbone,
            head,
        })
    }

    pub fn forward(&self, tape: &mut Tape, cloud: &PointCloud) -> Result<ForwardPass> {
        let (local, grid) = forward_local(tape, &self.params, &self.backbone, &self.config.backbone, cloud)?;
        let global = record_head(tape, &self.params, &self.head, local)?;
        Ok(ForwardPass { local, global, grid })
    }

    pub fn local_descriptors(&self, cloud: &PointCloud) -> Result<LocalDescriptorSet> {
        let mut tape = Tape::new();
        let (local, _) = forward_local(&mut tape, &self.params, &self.backbone, &self.config.backbone, cloud)?;
        LocalDescriptorSet::new(tape.value(local).clone(), cloud.points().to_vec())
    }

    /// Scene descriptor and local descriptors from one pass.
    pub fn describe(
        &self,
        cloud: &PointCloud,
        whitener: Option<&PcaWhitener>,
    ) -> Result<(SceneDescriptor, LocalDescriptorSet)> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, cloud)?;
        let scene = finish_descriptor(tape.value(pass.global).as_slice().to_vec(), whitener)?;
        let local = LocalDescriptorSet::new(tape.value(pass.local).clone(), cloud.points().to_vec())?;
        Ok((scene, local))
    }

    pub fn scene_descriptor(&self, cloud: &PointCloud, whitener: Option<&PcaWhitener>) -> Result<SceneDescriptor> {
        Ok(self.describe(cloud, whitener)?.0)
    }

    /// Descriptors of many clouds, computed in parallel.
    pub fn scene_descriptors(
        &self,
        clouds: &[PointCloud],
        whitener: Option<&PcaWhitener>,
    ) -> Result<Vec<SceneDescriptor>> {
        clouds
            .par_iter()
            .map(|c| self.scene_descriptor(c, whitener))
            .collect()
    }

    pub fn save(&self, path: &Path, whitener: Option<&PcaWhitener>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_weights(&mut w, &self.params, whitener)?;
        w.flush()?;
        Ok(())
    }

    /// Loads weights saved from a model with the same configuration.
    pub fn load_weights(&mut self, path: &Path) -> Result<Option<PcaWhitener>> {
        let mut r = BufReader::new(File::open(path)?);
        read_weights(&mut r, &mut self.params)
    }
}

/// Scene descriptor of a cloud; see [`SalsaModel::scene_descriptor`].
pub fn scene_descriptor(
    cloud: &PointCloud,
    model: &SalsaModel,
    whitener: Option<&PcaWhitener>,
) -> Result<SceneDescriptor> {
    model.scene_descriptor(cloud, whitener)
}

pub fn write_weights<W: Write>(w: &mut W, params: &ParamSet, whitener: Option<&PcaWhitener>) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    put_u32(w, params.len())?;
    for p in params.iter() {
        put_str(w, &p.name)?;
        put_u32(w, p.value.rows())?;
        put_u32(w, p.value.cols())?;
        put_f64s(w, p.value.as_slice())?;
    }
    if let Some(wh) = whitener {
        w.write_all(WHITENER_TAG)?;
        put_u32(w, wh.input_dim())?;
        put_u32(w, wh.output_dim())?;
        put_f64s(w, &wh.mean)?;
        put_f64s(w, wh.projection.as_slice())?;
        put_f64s(w, &wh.eigenvalues)?;
    }
    Ok(())
}

/// Reads a weights container into `params`, which must already hold
/// parameters with the same names and shapes.
pub fn read_weights<R: Read>(r: &mut R, params: &mut ParamSet) -> Result<Option<PcaWhitener>> {
    let mut c = ByteReader::new(r);
    let magic = c.bytes(WEIGHTS_MAGIC.len(), "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(SalsaError::Format {
            offset: 0,
            detail: "not a weights file (bad magic)".into(),
        });
    }
    let count = c.u32("record count")?;
    if count != params.len() {
        return Err(SalsaError::Format {
            offset: c.offset - 4,
            detail: format!("file holds {count} parameters, model has {}", params.len()),
        });
    }
    for _ in 0..count {
        let at = c.offset;
        let name = c.string(4096, "parameter name")?;
        let rows = c.u32("rows")?;
        let cols = c.u32("cols")?;
        let id = params.id_of(&name).ok_or_else(|| SalsaError::Format {
            offset: at,
            detail: format!("unknown parameter {name}"),
        })?;
        let expected = params.get(id).value.shape();
        if expected != (rows, cols) {
            return Err(SalsaError::Format {
                offset: at,
                detail: format!("{name} is {rows}x{cols} in file, {}x{} in model", expected.0, expected.1),
            });
        }
        let vals = c.f64s(rows * cols, &name)?;
        params.get_mut(id).value = Matrix::from_vec(rows, cols, vals)?;
    }
    let Some(first) = c.next_byte()? else {
        return Ok(None);
    };
    let rest = c.bytes(WHITENER_TAG.len() - 1, "section tag")?;
    if first != WHITENER_TAG[0] || rest != WHITENER_TAG[1..] {
        return Err(SalsaError::Format {
            offset: c.offset - WHITENER_TAG.len() as u64,
            detail: "unknown trailing section".into(),
        });
    }
    let e_in = c.u32("whitener input dim")?;
    let e_out = c.u32("whitener output dim")?;
    if e_out == 0 || e_out > e_in || e_in > 1 << 20 {
        return Err(SalsaError::Format {
            offset: c.offset - 8,
            detail: format!("bad whitener dims {e_in} -> {e_out}"),
        });
    }
    let mean = c.f64s(e_in, "whitener mean")?;
    let projection = Matrix::from_vec(e_out, e_in, c.f64s(e_in * e_out, "whitener projection")?)?;
    let eigenvalues = c.f64s(e_out, "whitener eigenvalues")?;
    if c.next_byte()?.is_some() {
        return Err(SalsaError::Format {
            offset: c.offset,
            detail: "trailing bytes after whitener".into(),
        });
    }
    Ok(Some(PcaWhitener {
        mean,
        projection,
        eigenvalues,
    }))
}
