//! Run configuration: one TOML file with a section per pipeline stage.
//! Every field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use salsa_core::backbone::BackboneConfig;
use salsa_core::dataset::SyntheticConfig;
use salsa_core::descriptor::HeadConfig;
use salsa_core::geometry::WindowSizes;
use salsa_core::localization::{RansacConfig, RerankConfig};
use salsa_core::model::ModelConfig;
use salsa_core::training::{AugmentConfig, LossConfig, MiningConfig, TrainConfig};

use crate::error::CliError;

/// Descriptor and token counts the ablation settings are expected to use.
pub const ABLATION_DIMS: [usize; 4] = [256, 512, 1024, 2048];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub backbone: BackboneSection,
    pub head: HeadSection,
    pub whitening: WhiteningSection,
    pub loss: LossSection,
    pub mining: MiningSection,
    pub train: TrainSection,
    pub retrieval: RetrievalSection,
    pub rerank: RerankSection,
    pub registration: RegistrationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            data: DataSection::default(),
            synthetic: SyntheticSection::default(),
            backbone: BackboneSection::default(),
            head: HeadSection::default(),
            whitening: WhiteningSection::default(),
            loss: LossSection::default(),
            mining: MiningSection::default(),
            train: TrainSection::default(),
            retrieval: RetrievalSection::default(),
            rerank: RerankSection::default(),
            registration: RegistrationSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("salsa_out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory; `<out>/data` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_scenes: usize,
    pub points_per_scan: usize,
    pub overlap: f64,
    pub noise_sigma: f64,
    pub revisits: usize,
    pub scene_spacing: f64,
    pub scene_radius: f64,
    pub revisit_offset: f64,
    pub revisit_yaw_deg: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            num_scenes: d.num_scenes,
            points_per_scan: d.points_per_scan,
            overlap: d.overlap,
            noise_sigma: d.noise_sigma,
            revisits: d.revisits,
            scene_spacing: d.scene_spacing,
            scene_radius: d.scene_radius,
            revisit_offset: d.revisit_offset,
            revisit_yaw_deg: d.revisit_yaw_deg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    /// Local feature width d.
    pub d: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub radial_windows: bool,
    pub cubic_windows: bool,
    /// Radial window extents in degrees.
    pub window_alpha_deg: f64,
    pub window_beta_deg: f64,
    /// Cubic window edge in metres.
    pub window_cubic: f64,
    pub voxel_size: f64,
    pub mlp_hidden: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        let d = BackboneConfig::default();
        Self {
            d: d.d,
            num_blocks: d.num_blocks,
            num_heads: d.num_heads,
            radial_windows: d.enable_radial,
            cubic_windows: d.enable_cubic,
            window_alpha_deg: d.windows.dalpha.to_degrees(),
            window_beta_deg: d.windows.dbeta.to_degrees(),
            window_cubic: d.windows.cubic,
            voxel_size: d.voxel_size,
            mlp_hidden: d.mlp_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSection {
    /// Pooled token count k.
    pub tokens: usize,
    /// Scene descriptor length e; the mixer's token output is e / d_bar.
    pub descriptor_dim: usize,
    pub d_bar: usize,
    pub fuser_blocks: usize,
    pub fuser_expansion: usize,
}

impl Default for HeadSection {
    fn default() -> Self {
        let h = HeadConfig::default();
        Self {
            tokens: h.tokens,
            descriptor_dim: h.descriptor_dim(),
            d_bar: h.d_bar,
            fuser_blocks: h.fuser_blocks,
            fuser_expansion: h.fuser_expansion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteningSection {
    pub enabled: bool,
    /// Output dimension; needs more database scans than dimensions.
    pub output_dim: usize,
}

impl Default for WhiteningSection {
    fn default() -> Self {
        Self {
            enabled: false,
            output_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub margin: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub mu_n: f64,
    pub lambda_local: f64,
    pub r_corr: f64,
    pub r_neg: f64,
    pub sample_set_size: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            margin: l.margin,
            m_p: l.m_p,
            m_n: l.m_n,
            mu_n: l.mu_n,
            lambda_local: l.lambda_local,
            r_corr: l.r_corr,
            r_neg: l.r_neg,
            sample_set_size: l.sample_set_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub positive_radius: f64,
    pub negative_radius: f64,
    pub subset_size: usize,
    pub negative_samples: usize,
    pub hardness_margin: f64,
}

impl Default for MiningSection {
    fn default() -> Self {
        let m = MiningConfig::default();
        Self {
            positive_radius: m.positive_radius,
            negative_radius: m.negative_radius,
            subset_size: m.subset_size,
            negative_samples: m.negative_samples,
            hardness_margin: m.hardness_margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a mined triplet before stopping.
    pub patience: usize,
    pub lr: f64,
    pub momentum: f64,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub augment: bool,
    pub max_yaw_deg: f64,
    pub occlusion_sector_deg: f64,
    /// 0 writes only the final model.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = AugmentConfig::default();
        Self {
            steps: 500,
            max_epochs: 100,
            patience: 3,
            lr: t.lr,
            momentum: t.momentum,
            grad_clip: 0.0,
            augment: false,
            max_yaw_deg: a.max_yaw_deg,
            occlusion_sector_deg: a.occlusion_sector_deg,
            checkpoint_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    /// Neighbours kept per query.
    pub top_k: usize,
    pub recall_ks: Vec<usize>,
    pub radii: Vec<f64>,
    pub mrr_depth: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            top_k: 25,
            recall_ks: vec![1, 5, 10, 25],
            radii: vec![5.0, 20.0],
            mrr_depth: salsa_core::retrieval::MRR_DEPTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub depth: usize,
    pub max_matches: usize,
    pub sigma_c: f64,
}

impl Default for RerankSection {
    fn default() -> Self {
        let r = RerankConfig::default();
        Self {
            depth: r.depth,
            max_matches: r.max_matches,
            sigma_c: r.sigma_c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    pub max_matches: usize,
    pub ratio_tau: f64,
    pub ratio_samples: usize,
    pub inlier_thresh: f64,
    pub confidence: f64,
    pub max_iter: usize,
    pub success_rte: f64,
    pub success_rre_deg: f64,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        let r = RansacConfig::default();
        Self {
            max_matches: 512,
            ratio_tau: 0.8,
            ratio_samples: 8,
            inlier_thresh: r.inlier_thresh,
            confidence: r.confidence,
            max_iter: r.max_iter,
            success_rte: salsa_core::localization::SUCCESS_RTE,
            success_rre_deg: salsa_core::localization::SUCCESS_RRE_DEG,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("missing config file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: salsa_core::SalsaError| invalid(format!("config: {e}"));
        self.model_config()?.validate().map_err(wrap)?;
        self.train_config().validate().map_err(wrap)?;
        self.synthetic_config().validate().map_err(wrap)?;
        let r = &self.retrieval;
        if r.top_k == 0 || r.recall_ks.is_empty() || r.recall_ks.contains(&0) {
            return Err(invalid("config: retrieval.top_k and recall_ks must be positive"));
        }
        if r.radii.is_empty() || r.radii.iter().any(|x| !(*x > 0.0)) {
            return Err(invalid("config: retrieval.radii must be positive"));
        }
        if self.rerank.depth == 0 || !(self.rerank.sigma_c > 0.0) || self.rerank.max_matches == 0 {
            return Err(invalid("config: rerank depth, sigma_c and max_matches must be positive"));
        }
        let g = &self.registration;
        if !(g.inlier_thresh > 0.0) || !(g.confidence > 0.0 && g.confidence < 1.0) || g.max_iter == 0 {
            return Err(invalid("config: bad RANSAC settings"));
        }
        if !(0.0..=1.0).contains(&g.ratio_tau) || g.ratio_samples == 0 || g.max_matches == 0 {
            return Err(invalid("config: bad ratio pruning settings"));
        }
        if self.whitening.enabled && self.whitening.output_dim == 0 {
            return Err(invalid("config: whitening.output_dim must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let b = &self.backbone;
        let h = &self.head;
        if h.d_bar == 0 || h.descriptor_dim % h.d_bar != 0 {
            return Err(invalid(format!(
                "config: head.descriptor_dim {} is not a multiple of head.d_bar {}",
                h.descriptor_dim, h.d_bar
            )));
        }
        Ok(ModelConfig {
            backbone: BackboneConfig {
                d: b.d,
                num_blocks: b.num_blocks,
                num_heads: b.num_heads,
                enable_radial: b.radial_windows,
                enable_cubic: b.cubic_windows,
                windows: WindowSizes {
                    dalpha: window_radians(b.window_alpha_deg),
                    dbeta: window_radians(b.window_beta_deg),
                    cubic: b.window_cubic,
                },
                voxel_size: b.voxel_size,
                mlp_hidden: b.mlp_hidden,
            },
            head: HeadConfig {
                tokens: h.tokens,
                k_bar: h.descriptor_dim / h.d_bar,
                d_bar: h.d_bar,
                fuser_blocks: h.fuser_blocks,
                fuser_expansion: h.fuser_expansion,
            },
        })
    }

    pub fn loss_config(&self) -> LossConfig {
        let l = &self.loss;
        LossConfig {
            margin: l.margin,
            m_p: l.m_p,
            m_n: l.m_n,
            mu_n: l.mu_n,
            lambda_local: l.lambda_local,
            r_corr: l.r_corr,
            r_neg: l.r_neg,
            sample_set_size: l.sample_set_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let m = &self.mining;
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            momentum: t.momentum,
            loss: self.loss_config(),
            mining: MiningConfig {
                positive_radius: m.positive_radius,
                negative_radius: m.negative_radius,
                subset_size: m.subset_size,
                negative_samples: m.negative_samples,
                hardness_margin: m.hardness_margin,
            },
            augment: t.augment.then_some(AugmentConfig {
                max_yaw_deg: t.max_yaw_deg,
                occlusion_sector_deg: t.occlusion_sector_deg,
            }),
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let s = &self.synthetic;
        SyntheticConfig {
            num_scenes: s.num_scenes,
            points_per_scan: s.points_per_scan,
            overlap: s.overlap,
            noise_sigma: s.noise_sigma,
            seed: self.run.seed,
            scene_spacing: s.scene_spacing,
            scene_radius: s.scene_radius,
            revisits: s.revisits,
            revisit_offset: s.revisit_offset,
            revisit_yaw_deg: s.revisit_yaw_deg,
            neighbor_radius: self.mining.positive_radius,
        }
    }

    pub fn rerank_config(&self) -> RerankConfig {
        RerankConfig {
            depth: self.rerank.depth,
            max_matches: self.rerank.max_matches,
            sigma_c: self.rerank.sigma_c,
        }
    }

    pub fn ransac_config(&self) -> RansacConfig {
        RansacConfig {
            inlier_thresh: self.registration.inlier_thresh,
            confidence: self.registration.confidence,
            max_iter: self.registration.max_iter,
        }
    }
}

/// The default configuration with a short note above each section.
pub fn default_config_text() -> String {
    let body = RunConfig::default().to_toml();
    let mut out = String::from("# salsa run configuration; every key is optional.\n");
    for line in body.lines() {
        if let Some(note) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')).and_then(section_note) {
            out.push('\n');
            for n in note.lines() {
                out.push_str("# ");
                out.push_str(n);
                out.push('\n');
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn section_note(name: &str) -> Option<&'static str> {
    Some(match name {
        "run" => "seed drives every random choice; out_dir holds all artifacts.",
        "data" => "dir = \"path\" points at a dataset (scans.csv, poses.txt, scans/).\nIntensity is 0 for scans saved without it.",
        "synthetic" => "Procedural scenes written by `salsa synth`.",
        "backbone" => "Local feature extractor: d = 16 features, radial windows of\n3 x 3 degrees, 0.4 m cubic windows over 0.3 m voxels.",
        "head" => "Aggregation: k = 512 tokens, e = 512 = 128 x 4 descriptor.\nAblation values for tokens and descriptor_dim: 256, 512, 1024, 2048.",
        "whitening" => "PCA whitening fitted on the database descriptors (opt-in).",
        "loss" => "Triplet margin m = 0.1; local consistency m_p = 0.1, m_n = 2,\nmu_n = 1, weighted by lambda_local.",
        "mining" => "Positives within 5 m, negatives beyond 20 m. hardness_margin 0\nkeeps strictly hard negatives only.",
        "train" => "SGD with momentum; grad_clip 0 disables clipping.",
        "retrieval" => "Recall@k and MRR at each radius.",
        "rerank" => "Spectral re-ranking of the top 20 candidates.",
        "registration" => "RANSAC: 0.5 m inliers, 0.999 confidence, 10000 iterations.\nSuccess within 2 m and 5 degrees.",
        _ => return None,
    })
}

/// `π / (180 / deg)` is exact for whole-degree divisors of 180, so 3° maps to
/// exactly π/60.
fn window_radians(deg: f64) -> f64 {
    std::f64::consts::PI / (180.0 / deg)
}
