//! The network: point spatial convolution over local volumes, positional
//! embedding of (x, y, z, t) references, a stack of pre-norm transformer
//! blocks with multi-head self-attention, global max pooling over tokens, and
//! an MLP regression head. A spatio-temporal convolution variant (temporal
//! kernel k_t) exists for ablations.

use crate::cloud::{Point3, PointCloudSequence};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorId};
use crate::tokenizer::{ball_group, tokenize, LocalVolume, TokenBatch};
use crate::{Result, SpikeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    PastOnly,
    PastFuture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    Spatial,
    SpatioTemporal,
}

/// Every architecture hyperparameter in one validated record.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams<S: Scalar> {
    pub t: usize,
    pub n: usize,
    pub n_v: usize,
    pub n_s: usize,
    pub r: S,
    pub c: usize,
    pub c_prime: usize,
    pub c_k: usize,
    pub c_v: usize,
    pub h: usize,
    pub m_blocks: usize,
    pub n_joints: usize,
    pub k_t: usize,
    pub window_mode: WindowMode,
    pub conv_mode: ConvMode,
}

impl<S: Scalar> Default for HyperParams<S> {
    fn default() -> Self {
        HyperParams {
            t: 3,
            n: 4096,
            n_v: 128,
            n_s: 32,
            r: S::from_f64(0.2),
            c: 1024,
            c_prime: 1024,
            c_k: 1024,
            c_v: 1024,
            h: 8,
            m_blocks: 5,
            n_joints: 15,
            k_t: 1,
            window_mode: WindowMode::PastOnly,
            conv_mode: ConvMode::Spatial,
        }
    }
}

impl<S: Scalar> HyperParams<S> {
    /// Desk-scale configuration used throughout the test suite.
    pub fn toy() -> Self {
        HyperParams {
            t: 2,
            n: 64,
            n_v: 8,
            n_s: 4,
            r: S::from_f64(0.2),
            c: 16,
            c_prime: 16,
            c_k: 16,
            c_v: 16,
            h: 2,
            m_blocks: 2,
            n_joints: 3,
            k_t: 1,
            window_mode: WindowMode::PastOnly,
            conv_mode: ConvMode::Spatial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.t, self.n, self.n_v, self.n_s, self.c, self.c_prime, self.c_k, self.c_v,
            self.h, self.m_blocks, self.n_joints, self.k_t,
        ];
        if pos.iter().any(|&v| v == 0) {
            return Err(SpikeError::Config("all hyperparameter extents must be positive".into()));
        }
        if self.r <= S::zero() {
            return Err(SpikeError::Config("radius r must be positive".into()));
        }
        if self.c_k % self.h != 0 || self.c_v % self.h != 0 {
            return Err(SpikeError::Config(format!(
                "C_k ({}) and C_v ({}) must be divisible by h ({})",
                self.c_k, self.c_v, self.h
            )));
        }
        if self.k_t % 2 == 0 {
            return Err(SpikeError::Config(format!("k_t ({}) must be odd", self.k_t)));
        }
        if self.k_t > self.t {
            return Err(SpikeError::Config(format!(
                "k_t ({}) must not exceed T ({})",
                self.k_t, self.t
            )));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        self.t * self.n_v
    }
}

/// One learnable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub grad: Vec<S>,
}

impl<S: Scalar> Param<S> {
    fn new(name: &str, shape: Vec<usize>, data: Vec<S>) -> Self {
        let n = data.len();
        Param { name: name.to_string(), shape, data, grad: vec![S::zero(); n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grad {
            *g = S::zero();
        }
    }
}

/// All model parameters in a fixed declaration order (the checkpoint order).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Scalar> {
    pub params: Vec<Param<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// Declares every tensor for the given hyperparameters, initialized
    /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); layer-norm gains start at
    /// one, biases at zero.
    pub fn init(hp: &HyperParams<S>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, cp, ck, cv, m) = (hp.c, hp.c_prime, hp.c_k, hp.c_v, hp.m_blocks);
        let half = (c / 2).max(1);
        let mut ordered: Vec<Param<S>> = Vec::new();
        let mut push_mat = |name: &str, out: usize, inp: usize, ordered: &mut Vec<Param<S>>| {
            let bound = 1.0 / (inp as f64).sqrt();
            let data: Vec<S> =
                (0..out * inp).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect();
            ordered.push(Param::new(name, vec![out, inp], data));
        };
        let push_vec = |name: &str, len: usize, value: S, ordered: &mut Vec<Param<S>>| {
            ordered.push(Param::new(name, vec![len], vec![value; len]));
        };

        push_mat("w_s", cp, 3, &mut ordered);
        // temporal displacement column, used only by the spatio-temporal variant
        push_mat("w_s_t", cp, 1, &mut ordered);
        push_mat("conv_w1", cp, cp, &mut ordered);
        push_vec("conv_b1", cp, S::zero(), &mut ordered);
        push_mat("conv_w2", c, cp, &mut ordered);
        push_vec("conv_b2", c, S::zero(), &mut ordered);
        push_mat("w_i", c, 4, &mut ordered);
        for b in 0..m {
            push_vec(&format!("block{b}.ln1_g"), c, S::one(), &mut ordered);
            push_vec(&format!("block{b}.ln1_b"), c, S::zero(), &mut ordered);
            push_mat(&format!("block{b}.w_q"), ck, c, &mut ordered);
            push_mat(&format!("block{b}.w_k"), ck, c, &mut ordered);
            push_mat(&format!("block{b}.w_v"), cv, c, &mut ordered);
            push_mat(&format!("block{b}.w_o"), c, cv, &mut ordered);
            push_vec(&format!("block{b}.ln2_g"), c, S::one(), &mut ordered);
            push_vec(&format!("block{b}.ln2_b"), c, S::zero(), &mut ordered);
            push_mat(&format!("block{b}.ff_w1"), 2 * c, c, &mut ordered);
            push_vec(&format!("block{b}.ff_b1"), 2 * c, S::zero(), &mut ordered);
            push_mat(&format!("block{b}.ff_w2"), c, 2 * c, &mut ordered);
            push_vec(&format!("block{b}.ff_b2"), c, S::zero(), &mut ordered);
        }
        // closing norm of the pre-norm residual stack; without it the head
        // sees an unbounded-scale input and its relu units die under SGD
        push_vec("ln_f_g", c, S::from_f64(0.1), &mut ordered);
        push_vec("ln_f_b", c, S::zero(), &mut ordered);
        push_mat("head_w1", half, c, &mut ordered);
        push_vec("head_b1", half, S::zero(), &mut ordered);
        push_mat("head_w2", 3 * hp.n_joints, half, &mut ordered);
        push_vec("head_b2", 3 * hp.n_joints, S::zero(), &mut ordered);

        ModelParams { params: ordered }
    }

    pub fn get(&self, name: &str) -> &Param<S> {
        self.params.iter().find(|p| p.name == name).unwrap_or_else(|| panic!("no param {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<S> {
        self.params.iter_mut().find(|p| p.name == name).unwrap_or_else(|| panic!("no param {name}"))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Flattens all parameter values in declaration order.
    pub fn flatten(&self) -> Vec<S> {
        let mut v = Vec::with_capacity(self.total_len());
        for p in &self.params {
            v.extend_from_slice(&p.data);
        }
        v
    }

    /// Writes a flat value vector back into the parameter tensors.
    pub fn unflatten(&mut self, flat: &[S]) {
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += p.data.len();
        }
        assert_eq!(off, flat.len());
    }
}

/// Regressed joint coordinates in the centered sequence frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseOutput<S: Scalar> {
    pub joints: Vec<Point3<S>>,
}

///// Forward graph handles: the output node plus one leaf per parameter in
/// declaration order, for gradient extraction after backward.
pub struct ForwardGraph {
    pub output: TensorId,
    pub leaves: Vec<TensorId>,
}

pub(crate) struct LeafMap<'a> {
    names: Vec<&'a str>,
    ids: Vec<TensorId>,
}

impl<'a> LeafMap<'a> {
    fn id(&self, name: &str) -> TensorId {
        self.ids[self.names.iter().position(|n| *n == name).unwrap_or_else(|| panic!("no leaf {name}"))]
    }
}

fn push_leaves<'a, S: Scalar>(
    tape: &mut Tape<S>,
    params: &'a ModelParams<S>,
    requires_grad: bool,
) -> LeafMap<'a> {
    let mut names = Vec::with_capacity(params.params.len());
    let mut ids = Vec::with_capacity(params.params.len());
    for p in &params.params {
        let mut t = Tensor::new(p.shape.clone(), p.data.clone()).expect("param shape");
        t.requires_grad = requires_grad;
        names.push(p.name.as_str());
        ids.push(tape.leaf(t));
    }
    LeafMap { names, ids }
}

/// x · Wᵀ for a weight stored out×in.
fn linear<S: Scalar>(tape: &mut Tape<S>, x: TensorId, w: TensorId) -> Result<TensorId> {
    let wt = tape.transpose(w)?;
    tape.matmul(x, wt)
}

fn linear_bias<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let y = linear(tape, x, w)?;
    tape.add_row(y, b)
}

/// Shared conv MLP: rows -> hidden C' (relu) -> C.
fn conv_mlp<S: Scalar>(
    tape: &mut Tape<S>,
    rows: TensorId,
    lm: &LeafMap,
) -> Result<TensorId> {
    let h = linear_bias(tape, rows, lm.id("conv_w1"), lm.id("conv_b1"))?;
    let h = tape.relu(h);
    linear_bias(tape, h, lm.id("conv_w2"), lm.id("conv_b2"))
}

/// Per-volume features from displacements: lift each displacement by W_s,
/// run the shared MLP, max-pool within the volume. Operates on all volumes
/// at once; `group` is the number of displacement rows per volume.
fn conv_features<S: Scalar>(
    tape: &mut Tape<S>,
    disp: TensorId,
    dt_col: Option<TensorId>,
    group: usize,
    lm: &LeafMap,
) -> Result<TensorId> {
    let mut lifted = linear(tape, disp, lm.id("w_s"))?;
    if let Some(dt) = dt_col {
        // temporal offsets enter through their own column of the lift
        let wt_row = tape.transpose(lm.id("w_s_t"))?;
        let dt_term = tape.matmul(dt, wt_row)?;
        lifted = tape.add(lifted, dt_term)?;
    }
    let feats = conv_mlp(tape, lifted, lm)?;
    let n_rows = tape.shape(feats)[0];
    let c = tape.shape(feats)[1];
    let volumes = n_rows / group;
    let grouped = tape.reshape(feats, vec![volumes, group, c])?;
    tape.max_reduce(grouped, 1)
}

/// Spatial convolution features for a token batch: (T*N_v) x C.
pub(crate) fn point_spatial_conv_batch<S: Scalar>(
    tape: &mut Tape<S>,
    tokens: &TokenBatch<S>,
    hp: &HyperParams<S>,
    lm: &LeafMap,
) -> Result<TensorId> {
    let mut rows = Vec::with_capacity(tokens.volumes.len() * hp.n_s * 3);
    for v in &tokens.volumes {
        if v.displacements.len() != hp.n_s {
            return Err(SpikeError::Dimension(format!(
                "volume has {} displacements, expected {}",
                v.displacements.len(),
                hp.n_s
            )));
        }
        for d in &v.displacements {
            rows.extend_from_slice(d);
        }
    }
    let disp = tape.constant(Tensor::new(vec![tokens.volumes.len() * hp.n_s, 3], rows)?);
    conv_features(tape, disp, None, hp.n_s, lm)
}

/// Standalone single-volume spatial convolution (Eq. 1 surface used by
/// oracle tests).
pub fn point_spatial_conv<S: Scalar>(
    volume: &LocalVolume<S>,
    hp: &HyperParams<S>,
    params: &ModelParams<S>,
) -> Result<Vec<S>> {
    let tokens = TokenBatch { volumes: vec![volume.clone()], volumes_per_frame: 1 };
    let mut tape = Tape::new();
    let lm = push_leaves(&mut tape, params, false);
    let f = point_spatial_conv_batch(&mut tape, &tokens, hp, &lm)?;
    Ok(tape.data(f).to_vec())
}

/// Spatio-temporal variant: for each reference, gather ball neighborhoods
/// from the k_t frames centered on its own (clamped at sequence ends) and
/// pool over all gathered points. Temporal offsets feed a dedicated lift
/// column; a zero offset contributes nothing, so k_t = 1 reproduces the
/// spatial path bit-for-bit.
pub(crate) fn point_st_conv_batch<S: Scalar>(
    tape: &mut Tape<S>,
    seq: &PointCloudSequence<S>,
    tokens: &TokenBatch<S>,
    hp: &HyperParams<S>,
    lm: &LeafMap,
) -> Result<TensorId> {
    if hp.k_t % 2 == 0 {
        return Err(SpikeError::Config(format!("k_t ({}) must be odd", hp.k_t)));
    }
    let half = (hp.k_t - 1) / 2;
    let t_len = seq.t_len() as isize;
    let group = hp.k_t * hp.n_s;
    let mut rows = Vec::with_capacity(tokens.volumes.len() * group * 3);
    let mut dts: Vec<S> = Vec::with_capacity(tokens.volumes.len() * group);
    let mut any_dt = false;
    for v in &tokens.volumes {
        for off in -(half as isize)..=(half as isize) {
            let tf = (v.frame as isize + off).clamp(0, t_len - 1) as usize;
            let vol = ball_group(&seq.frames[tf], &v.reference, tf, hp.r, hp.n_s);
            let dt = tf as isize - v.frame as isize;
            if dt != 0 {
                any_dt = true;
            }
            for d in &vol.displacements {
                rows.extend_from_slice(d);
                dts.push(S::from_f64(dt as f64));
            }
        }
    }
    let n_rows = tokens.volumes.len() * group;
    let disp = tape.constant(Tensor::new(vec![n_rows, 3], rows)?);
    let dt_col = if any_dt {
        Some(tape.constant(Tensor::new(vec![n_rows, 1], dts)?))
    } else {
        None
    };
    conv_features(tape, disp, dt_col, group, lm)
}

/// Adds the linear lift of each token's (x, y, z, t) reference to its
/// feature row.
pub(crate) fn positional_embed<S: Scalar>(
    tape: &mut Tape<S>,
    features: TensorId,
    tokens: &TokenBatch<S>,
    lm: &LeafMap,
) -> Result<TensorId> {
    let n = tokens.volumes.len();
    if tape.shape(features)[0] != n {
        return Err(SpikeError::Dimension(format!(
            "positional_embed: {} feature rows vs {} references",
            tape.shape(features)[0],
            n
        )));
    }
    let mut refs = Vec::with_capacity(n * 4);
    for v in &tokens.volumes {
        refs.extend_from_slice(&v.reference);
        refs.push(S::from_usize_(v.frame));
    }
    let r = tape.constant(Tensor::new(vec![n, 4], refs)?);
    let lift = linear(tape, r, lm.id("w_i"))?;
    tape.add(features, lift)
}

/// Scaled dot-product attention over h heads followed by the output
/// projection. The attention-times-values product uses the
/// permutation-stable matmul.
pub(crate) fn multi_head_attention<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    hp: &HyperParams<S>,
    block: usize,
    lm: &LeafMap,
) -> Result<TensorId> {
    let q_full = linear(tape, x, lm.id(&format!("block{block}.w_q")))?;
    let k_full = linear(tape, x, lm.id(&format!("block{block}.w_k")))?;
    let v_full = linear(tape, x, lm.id(&format!("block{block}.w_v")))?;
    let dk = hp.c_k / hp.h;
    let dv = hp.c_v / hp.h;
    let inv_sqrt_dk = S::from_f64(1.0 / (dk as f64).sqrt());
    let mut heads = Vec::with_capacity(hp.h);
    for i in 0..hp.h {
        let qh = tape.slice_cols(q_full, i * dk, (i + 1) * dk)?;
        let kh = tape.slice_cols(k_full, i * dk, (i + 1) * dk)?;
        let vh = tape.slice_cols(v_full, i * dv, (i + 1) * dv)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, inv_sqrt_dk);
        let attn = tape.softmax_rows(scaled)?;
        heads.push(tape.matmul_stable(attn, vh)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    linear(tape, ctx, lm.id(&format!("block{block}.w_o")))
}

/// Standalone multi-head attention on an n x C input using one block's
/// projection weights (Eq. 3 surface used by oracle tests).
pub fn attention_forward<S: Scalar>(
    x: &Tensor<S>,
    hp: &HyperParams<S>,
    params: &ModelParams<S>,
    block: usize,
) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let lm = push_leaves(&mut tape, params, false);
    let xid = tape.constant(x.clone());
    let y = multi_head_attention(&mut tape, xid, hp, block, &lm)?;
    Ok(tape.data(y).to_vec())
}

/// Pre-norm residual block: x + MHA(LN(x)), then x + FF(LN(x)).
pub(crate) fn transformer_block<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    hp: &HyperParams<S>,
    block: usize,
    lm: &LeafMap,
) -> Result<TensorId> {
    let ln1 = tape.layer_norm(
        x,
        lm.id(&format!("block{block}.ln1_g")),
        lm.id(&format!("block{block}.ln1_b")),
    )?;
    let mha = multi_head_attention(tape, ln1, hp, block, lm)?;
    let x = tape.add(x, mha)?;
    let ln2 = tape.layer_norm(
        x,
        lm.id(&format!("block{block}.ln2_g")),
        lm.id(&format!("block{block}.ln2_b")),
    )?;
    let f1 = linear_bias(
        tape,
        ln2,
        lm.id(&format!("block{block}.ff_w1")),
        lm.id(&format!("block{block}.ff_b1")),
    )?;
    let f1 = tape.relu(f1);
    let f2 = linear_bias(
        tape,
        f1,
        lm.id(&format!("block{block}.ff_w2")),
        lm.id(&format!("block{block}.ff_b2")),
    )?;
    tape.add(x, f2)
}

/// Builds the full graph from an already-tokenized batch. Returns the M x 3
/// output node and the parameter leaves in declaration order.
pub fn build_forward<S: Scalar>(
    tape: &mut Tape<S>,
    seq: &PointCloudSequence<S>,
    tokens: &TokenBatch<S>,
    hp: &HyperParams<S>,
    params: &ModelParams<S>,
    requires_grad: bool,
) -> Result<ForwardGraph> {
    hp.validate()?;
    let lm = push_leaves(tape, params, requires_grad);
    let feats = match hp.conv_mode {
        ConvMode::Spatial => point_spatial_conv_batch(tape, tokens, hp, &lm)?,
        ConvMode::SpatioTemporal => point_st_conv_batch(tape, seq, tokens, hp, &lm)?,
    };
    let mut x = positional_embed(tape, feats, tokens, &lm)?;
    for b in 0..hp.m_blocks {
        x = transformer_block(tape, x, hp, b, &lm)?;
    }
    let x = tape.layer_norm(x, lm.id("ln_f_g"), lm.id("ln_f_b"))?;
    let pooled = tape.max_reduce(x, 0)?;
    let g = tape.reshape(pooled, vec![1, hp.c])?;
    let h1 = linear_bias(tape, g, lm.id("head_w1"), lm.id("head_b1"))?;
    let h1 = tape.relu(h1);
    let out = linear_bias(tape, h1, lm.id("head_w2"), lm.id("head_b2"))?;
    let joints = tape.reshape(out, vec![hp.n_joints, 3])?;
    Ok(ForwardGraph { output: joints, leaves: lm.ids })
}

/// Tokenize-then-regress convenience for inference.
pub fn forward<S: Scalar>(
    seq: &PointCloudSequence<S>,
    hp: &HyperParams<S>,
    params: &ModelParams<S>,
    seed: u64,
) -> Result<PoseOutput<S>> {
    let tokens = tokenize(seq, hp, seed)?;
    let mut tape = Tape::new();
    let graph = build_forward(&mut tape, seq, &tokens, hp, params, false)?;
    let d = tape.data(graph.output);
    let joints = (0..hp.n_joints).map(|j| [d[j * 3], d[j * 3 + 1], d[j * 3 + 2]]).collect();
    Ok(PoseOutput { joints })
}

/// Copies tape gradients back into the parameter accumulators.
pub fn accumulate_grads<S: Scalar>(
    tape: &Tape<S>,
    graph: &ForwardGraph,
    params: &mut ModelParams<S>,
) {
    for (p, leaf) in params.params.iter_mut().zip(&graph.leaves) {
        if let Some(g) = tape.grad(*leaf) {
            for (pg, lg) in p.grad.iter_mut().zip(g) {
                *pg = *pg + *lg;
            }
        }
    }
}
