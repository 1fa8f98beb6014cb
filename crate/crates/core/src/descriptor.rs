//! Scene descriptor head: attention pooling of local features into a fixed
//! set of tokens, a residual token fuser, and a two-stage MLP mixer whose
//! flattened output is L2-normalised (and optionally whitened).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::glorot;
use crate::error::{shape_err, Result, SalsaError};
use crate::numeric::{
    cross_attention_forward, softmax_rows, Matrix, ParamId, ParamSet, PcaWhitener, Tape, Var, LAYER_NORM_EPS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Number of pooled tokens.
    pub tokens: usize,
    /// Token count after the first mixer stage.
    pub k_bar: usize,
    /// Channel count after the second mixer stage.
    pub d_bar: usize,
    pub fuser_blocks: usize,
    /// Hidden width of the fuser MLPs, in multiples of `d`.
    pub fuser_expansion: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            tokens: 512,
            k_bar: 128,
            d_bar: 4,
            fuser_blocks: 4,
            fuser_expansion: 4,
        }
    }
}

impl HeadConfig {
    /// Length of the flattened descriptor.
    pub fn descriptor_dim(&self) -> usize {
        self.k_bar * self.d_bar
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.k_bar == 0 || self.d_bar == 0 || self.fuser_expansion == 0 {
            return Err(SalsaError::InvalidArgument("descriptor head sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FuserBlock {
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Weights of a two-layer perceptron.
#[derive(Clone, Debug)]
pub struct Mlp2Params {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp2Params {
    fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let (i, h, o) = dims;
        Ok(Self {
            w1: params.add(format!("{prefix}.w1"), glorot(i, h, 1.0, rng))?,
            b1: params.add(format!("{prefix}.b1"), Matrix::zeros(1, h))?,
            w2: params.add(format!("{prefix}.w2"), glorot(h, o, 1.0, rng))?,
            b2: params.add(format!("{prefix}.b2"), Matrix::zeros(1, o))?,
        })
    }

    fn record(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w1 = tape.param(params, self.w1);
        let b1 = tape.param(params, self.b1);
        let w2 = tape.param(params, self.w2);
        let b2 = tape.param(params, self.b2);
        tape.mlp2(x, w1, b1, w2, b2)
    }
}

#[derive(Clone, Debug)]
pub struct AggregatorParams {
    pub q_theta: ParamId,
    pub fuser: Vec<FuserBlock>,
    pub token_mix: Mlp2Params,
    pub channel_mix: Mlp2Params,
}

impl AggregatorParams {
    pub fn init<R: Rng + ?Sized>(params: &mut ParamSet, d: usize, cfg: &HeadConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let q = Matrix::from_fn(cfg.tokens, d, |_, _| normal.sample(rng));
        let q_theta = params.add("head.q_theta", q)?;
        let hidden = cfg.fuser_expansion * d;
        let mut fuser = Vec::with_capacity(cfg.fuser_blocks);
        for b in 0..cfg.fuser_blocks {
            let name = |s: &str| format!("head.fuser{b}.{s}");
            fuser.push(FuserBlock {
                ln_gain: params.add(name("ln.gain"), Matrix::filled(1, d, 1.0))?,
                ln_bias: params.add(name("ln.bias"), Matrix::zeros(1, d))?,
                w1: params.add(name("w1"), glorot(d, hidden, 1.0, rng))?,
                b1: params.add(name("b1"), Matrix::zeros(1, hidden))?,
                w2: params.add(name("w2"), glorot(hidden, d, 0.5, rng))?,
                b2: params.add(name("b2"), Matrix::zeros(1, d))?,
            });
        }
        let token_mix = Mlp2Params::init(params, "head.token_mix", (cfg.tokens, cfg.k_bar, cfg.k_bar), rng)?;
        let channel_mix = Mlp2Params::init(params, "head.channel_mix", (d, cfg.d_bar, cfg.d_bar), rng)?;
        Ok(Self {
            q_theta,
            fuser,
            token_mix,
            channel_mix,
        })
    }
}

/// Fixed-size set of pooled tokens, `k × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    pub tokens: Matrix,
}

/// Pooling weights, `k × N`; every row is a probability distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub scores: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDescriptor {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl SceneDescriptor {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn pool_scale(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// Attention pooling `F = softmax(Qθ·Kᵀ/√d)·K`; also returns the weights.
pub fn adaptive_pool(k_feat: &Matrix, q_theta: &Matrix) -> Result<(TokenSet, AttentionMap)> {
    if k_feat.cols() != q_theta.cols() {
        return Err(shape_err(
            "adaptive_pool",
            format!("features have {} channels, queries {}", k_feat.cols(), q_theta.cols()),
        ));
    }
    if k_feat.rows() == 0 {
        return Err(SalsaError::InvalidArgument("adaptive_pool needs at least one feature".into()));
    }
    let scale = pool_scale(k_feat.cols());
    let scores = softmax_rows(&q_theta.matmul_t(k_feat)?.scale(scale))?;
    let tokens = scores.matmul(k_feat)?;
    Ok((TokenSet { tokens }, AttentionMap { scores }))
}

/// Records pooling on the tape without materialising the `k × N` weights.
pub fn record_pool(tape: &mut Tape, k_feat: Var, q_theta: Var) -> Result<Var> {
    let scale = pool_scale(tape.shape(q_theta).1);
    tape.cross_attention(q_theta, k_feat, k_feat, scale)
}

/// Forward-only pooled tokens; avoids the dense weight matrix.
pub fn pool_tokens(k_feat: &Matrix, q_theta: &Matrix) -> Result<TokenSet> {
    if k_feat.cols() != q_theta.cols() || k_feat.rows() == 0 {
        return Err(shape_err(
            "pool_tokens",
            format!("features {:?}, queries {:?}", k_feat.shape(), q_theta.shape()),
        ));
    }
    let scale = pool_scale(k_feat.cols());
    Ok(TokenSet {
        tokens: cross_attention_forward(q_theta, k_feat, k_feat, scale),
    })
}

/// `H ← H + MLP2(LayerNorm(H))` for every fuser block.
pub fn record_token_fuser(tape: &mut Tape, params: &ParamSet, blocks: &[FuserBlock], h: Var) -> Result<Var> {
    let mut h = h;
    for b in blocks {
        let g = tape.param(params, b.ln_gain);
        let beta = tape.param(params, b.ln_bias);
        let n = tape.layer_norm(h, g, beta, LAYER_NORM_EPS)?;
        let mlp = Mlp2Params {
            w1: b.w1,
            b1: b.b1,
            w2: b.w2,
            b2: b.b2,
        };
        let m = mlp.record(tape, params, n)?;
        h = tape.add(h, m)?;
    }
    Ok(h)
}

/// `k × d` tokens to a flat `1 × (k̄·d̄)` row: the token axis is mixed first
/// (per channel column), then the channel axis (per token row).
pub fn record_mixer(tape: &mut Tape, params: &ParamSet, head: &AggregatorParams, h: Var) -> Result<Var> {
    let ht = tape.transpose(h);
    let t = head.token_mix.record(tape, params, ht)?;
    let t = tape.transpose(t);
    let c = head.channel_mix.record(tape, params, t)?;
    let (r, cols) = tape.shape(c);
    tape.reshape(c, 1, r * cols)
}

/// Local features to the L2-normalised `1 × e` descriptor row.
pub fn record_head(tape: &mut Tape, params: &ParamSet, head: &AggregatorParams, k_feat: Var) -> Result<Var> {
    let q = tape.param(params, head.q_theta);
    let f = record_pool(tape, k_feat, q)?;
    let h = record_token_fuser(tape, params, &head.fuser, f)?;
    let flat = record_mixer(tape, params, head, h)?;
    Ok(tape.l2_normalize_rows(flat))
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    v
}

/// Applies the optional whitener to a normalised head output and
/// renormalises.
pub fn finish_descriptor(raw: Vec<f64>, whitener: Option<&PcaWhitener>) -> Result<SceneDescriptor> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(SalsaError::NonFinite("scene descriptor"));
    }
    let values = match whitener {
        Some(w) => unit(w.apply(&unit(raw))?),
        None => unit(raw),
    };
    Ok(SceneDescriptor {
        values,
        normalized: true,
    })
}
