use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::augment::{augment_with_transform, AugmentConfig};
use super::loss::{find_correspondences, record_local_consistency_loss, record_triplet_loss, LossConfig, NegativeCandidates};
use super::mining::{mine_hard_negatives, sample_queries, MiningConfig, MiningOutcome, TrainingScan, Triplet};
use crate::error::{Result, SalsaError};
use crate::geometry::RigidTransform;
use crate::model::SalsaModel;
use crate::numeric::{Matrix, ParamSet, Tape};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(params: &ParamSet, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            for ((w, g), vel) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_slice()).zip(v.as_mut_slice()) {
                *vel = self.momentum * *vel + g;
                *w -= self.lr * *vel;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub loss: LossConfig,
    pub mining: MiningConfig,
    pub augment: Option<AugmentConfig>,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            loss: LossConfig::default(),
            mining: MiningConfig::default(),
            augment: None,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(SalsaError::InvalidArgument(format!(
                "bad optimizer settings lr={} momentum={}",
                self.lr, self.momentum
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(SalsaError::InvalidArgument(format!("gradient clip {c} must be positive")));
            }
        }
        self.loss.validate()?;
        self.mining.validate()
    }
}

/// One optimisation step, as written to the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub global: f64,
    pub local: f64,
    pub total: f64,
    pub skipped: usize,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} L_G={:.6} L_l={:.6} total={:.6} skipped={}",
            self.step, self.global, self.local, self.total, self.skipped
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub steps: usize,
    pub mean_global: f64,
    pub mean_local: f64,
    pub mean_total: f64,
    pub max_total: f64,
    pub skipped_no_positive: usize,
    pub skipped_no_hard_negative: usize,
    /// Steps whose query/positive pair had no geometric correspondences.
    pub skipped_no_correspondence: usize,
}

fn clip_gradients(params: &mut ParamSet, max_norm: f64) {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.as_slice().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Losses of one step; the local term is zero when no correspondences exist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub global: f64,
    pub local: f64,
    pub total: f64,
    pub had_correspondences: bool,
}

/// Forward, backward and one optimizer update for a single triplet.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut SalsaModel,
    opt: &mut Sgd,
    scans: &[TrainingScan],
    triplet: &Triplet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepLosses> {
    let q_scan = &scans[triplet.query];
    let p_scan = &scans[triplet.positive];
    let (q_cloud, aug) = match &cfg.augment {
        Some(a) => augment_with_transform(&q_scan.cloud, a.max_yaw_deg, a.occlusion_sector_deg, rng)?,
        None => (q_scan.cloud.clone(), RigidTransform::identity()),
    };
    let mut tape = Tape::new();
    let q = model.forward(&mut tape, &q_cloud)?;
    let p = model.forward(&mut tape, &p_scan.cloud)?;
    let n = model.forward(&mut tape, &scans[triplet.negative].cloud)?;
    let lg = record_triplet_loss(&mut tape, q.global, p.global, n.global, cfg.loss.margin)?;

    let q_to_p = p_scan.pose.inverse().compose(&q_scan.pose).compose(&aug.inverse());
    let gamma = find_correspondences(q_cloud.points(), p_scan.cloud.points(), &q_to_p, cfg.loss.r_corr);
    let (total, local) = if gamma.is_empty() || cfg.loss.lambda_local == 0.0 {
        (lg, None)
    } else {
        let cands = NegativeCandidates::sample(q_cloud.len(), p_scan.cloud.len(), cfg.loss.sample_set_size, rng);
        let ll = record_local_consistency_loss(&mut tape, q.local, p.local, &gamma, &cfg.loss, &cands)?;
        let weighted = tape.scale(ll, cfg.loss.lambda_local);
        (tape.add(lg, weighted)?, Some(ll))
    };

    model.params.zero_grad();
    tape.backward(total, &mut model.params)?;
    if let Some(c) = cfg.grad_clip {
        clip_gradients(&mut model.params, c);
    }
    opt.step(&mut model.params);
    Ok(StepLosses {
        global: tape.scalar(lg)?,
        local: local.map(|l| tape.scalar(l)).transpose()?.unwrap_or(0.0),
        total: tape.scalar(total)?,
        had_correspondences: !gamma.is_empty(),
    })
}

/// Normalised (unwhitened) scene descriptors of every scan.
pub fn scan_descriptors(model: &SalsaModel, scans: &[TrainingScan]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    scans
        .par_iter()
        .map(|s| Ok(model.scene_descriptor(&s.cloud, None)?.values))
        .collect()
}

/// Mines with the current model.
pub fn mine_epoch<R: Rng + ?Sized>(
    model: &SalsaModel,
    scans: &[TrainingScan],
    cfg: &MiningConfig,
    rng: &mut R,
) -> Result<MiningOutcome> {
    let desc = scan_descriptors(model, scans)?;
    let queries = sample_queries(scans.len(), cfg, rng);
    mine_hard_negatives(scans, &desc, &queries, cfg, rng)
}

/// Mines triplets with the current model and takes one step per triplet, at
/// most `max_steps` of them. `first_step` numbers the log lines.
pub fn train_epoch<R: Rng + ?Sized>(
    scans: &[TrainingScan],
    model: &mut SalsaModel,
    cfg: &TrainConfig,
    opt: &mut Sgd,
    rng: &mut R,
    first_step: usize,
    max_steps: usize,
    on_step: &mut dyn FnMut(&StepLog),
) -> Result<EpochStats> {
    cfg.validate()?;
    let mined = mine_epoch(model, scans, &cfg.mining, rng)?;
    let mut triplets = mined.triplets;
    triplets.shuffle(rng);
    triplets.truncate(max_steps);
    let skipped = mined.skipped_no_positive + mined.skipped_no_hard_negative;
    let mut stats = EpochStats {
        skipped_no_positive: mined.skipped_no_positive,
        skipped_no_hard_negative: mined.skipped_no_hard_negative,
        ..Default::default()
    };
    for (i, t) in triplets.iter().enumerate() {
        let l = train_step(model, opt, scans, t, cfg, rng)?;
        if !l.had_correspondences {
            stats.skipped_no_correspondence += 1;
        }
        stats.steps += 1;
        stats.mean_global += l.global;
        stats.mean_local += l.local;
        stats.mean_total += l.total;
        stats.max_total = stats.max_total.max(l.total);
        on_step(&StepLog {
            step: first_step + i,
            global: l.global,
            local: l.local,
            total: l.total,
            skipped,
        });
    }
    if stats.steps > 0 {
        let n = stats.steps as f64;
        stats.mean_global /= n;
        stats.mean_local /= n;
        stats.mean_total /= n;
    }
    Ok(stats)
}
