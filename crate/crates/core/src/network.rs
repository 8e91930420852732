//! ResNeXt-encoder 3D U-Net: declarative spec, parameter store, forward.
//!
//! The architecture is described by a [`ModelSpec`]; [`param_layout`] turns
//! it into one flat, ordered list of parameter definitions, and
//! [`Model::forward_from_leaves`] consumes tape leaves in exactly that
//! order. Keeping a single layout function means initialization, forward,
//! checkpointing, and weight transfer can never disagree about what the
//! parameters are.
//!
//! Every parameter carries a `stage_tag` used by the progressive-unfreezing
//! controller: `enc.stageK` for encoder stage K (including its strided
//! entry conv), `bottleneck` for the deepest stage's residual blocks,
//! `dec.stageK` for decoder stages, and `head` for the output projection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Required in pure no_std graphs; once std is linked anywhere (tests, std
// consumers) f64's inherent methods shadow the trait and this goes unused.
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::real::{real, Real};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter sets come from different specs: {0}")]
    SpecMismatch(String),
    #[error("unknown stage tag: {0}")]
    UnknownTag(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

/// One encoder stage: channel width, residual block count, and which axes
/// the stage's entry convolution downsamples by 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    /// (z, y, x) stride-2 flags for the entry conv.
    pub downsample: (bool, bool, bool),
}

/// Declarative architecture description. `stages` holds final (scaled)
/// channel counts; `base_channels`/`scale` record how they were derived.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub scale: f64,
    pub cardinality: usize,
    pub activation: Activation,
    pub leaky_slope: f64,
    pub norm_eps: f64,
    pub stages: Vec<StageSpec>,
}

/// Depth threshold below which an axis stops being downsampled.
const MIN_DOWNSAMPLE_EXTENT: usize = 8;

impl ModelSpec {
    /// Channel progression: base doubled per stage, capped at `cap`, then
    /// multiplied by `scale` (minimum 1).
    fn progression(base: usize, cap: usize, scale: f64, n_stages: usize) -> Vec<usize> {
        (0..n_stages)
            .map(|k| {
                let unscaled = (base << k.min(63)).min(cap);
                ((unscaled as f64 * scale).round() as usize).max(1)
            })
            .collect()
    }

    /// Whether stage k+1's entry conv downsamples each axis, given the dims
    /// entering it: y/x always downsample from stage 2 on, z only while the
    /// depth is at least [`MIN_DOWNSAMPLE_EXTENT`] (so a 44-deep ROI stops
    /// shrinking at 6 while 256-wide axes keep halving).
    fn downsample_flags(dims_in: (usize, usize, usize), first_stage: bool) -> (bool, bool, bool) {
        if first_stage {
            return (false, false, false);
        }
        (dims_in.0 >= MIN_DOWNSAMPLE_EXTENT, true, true)
    }

    fn with_progression(
        channels: Vec<usize>,
        input_dhw: (usize, usize, usize),
        base_channels: usize,
        scale: f64,
        cardinality: usize,
    ) -> Self {
        let mut dims = input_dhw;
        let stages = channels
            .into_iter()
            .enumerate()
            .map(|(k, ch)| {
                let down = Self::downsample_flags(dims, k == 0);
                let st = StageSpec { channels: ch, blocks: 1, downsample: down };
                dims = conv_out_dims(dims, (3, 3, 3), stride_of(down), (1, 1, 1));
                st
            })
            .collect();
        Self {
            in_channels: 1,
            out_channels: 1,
            base_channels,
            scale,
            cardinality,
            activation: Activation::LeakyRelu,
            leaky_slope: 0.01,
            norm_eps: 1e-5,
            stages,
        }
    }

    /// Paper-faithful spec: 7 stages at widths (32, 64, 128, 256, 512, 512,
    /// 512), cardinality 8, downsampling resolved for the given input dims.
    pub fn paper(input_dhw: (usize, usize, usize)) -> Self {
        let channels = Self::progression(32, 512, 1.0, 7);
        Self::with_progression(channels, input_dhw, 32, 1.0, 8)
    }

    /// Desk-scale spec: 4 stages at quarter width (8, 16, 32, 32),
    /// cardinality 2 — small enough to train on one CPU core.
    pub fn desk(input_dhw: (usize, usize, usize)) -> Self {
        let channels = Self::progression(32, 128, 0.25, 4);
        Self::with_progression(channels, input_dhw, 32, 0.25, 2)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(NetworkError::InvalidSpec("zero channel count".into()));
        }
        if self.stages.is_empty() {
            return Err(NetworkError::InvalidSpec("no stages".into()));
        }
        if self.cardinality == 0 {
            return Err(NetworkError::InvalidSpec("cardinality must be >= 1".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(NetworkError::InvalidSpec("norm_eps must be positive".into()));
        }
        for (k, st) in self.stages.iter().enumerate() {
            if st.blocks == 0 {
                return Err(NetworkError::InvalidSpec(format!("stage {} has zero blocks", k + 1)));
            }
            if st.channels % self.cardinality != 0 {
                return Err(NetworkError::InvalidSpec(format!(
                    "stage {} channels {} not divisible by cardinality {}",
                    k + 1,
                    st.channels,
                    self.cardinality
                )));
            }
            // the ResNeXt block halves the width internally
            if st.channels % 2 != 0 || (st.channels / 2) % self.cardinality != 0 {
                return Err(NetworkError::InvalidSpec(format!(
                    "stage {} channels {} must halve to a multiple of cardinality {}",
                    k + 1,
                    st.channels,
                    self.cardinality
                )));
            }
        }
        if self.stages[0].downsample != (false, false, false) {
            return Err(NetworkError::InvalidSpec("stage 1 must not downsample".into()));
        }
        Ok(())
    }

    /// Spatial dims of each encoder stage's output for a given input.
    pub fn stage_dims(
        &self,
        input_dhw: (usize, usize, usize),
    ) -> Result<Vec<(usize, usize, usize)>, NetworkError> {
        let mut dims = input_dhw;
        let mut out = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            dims = conv_out_dims(dims, (3, 3, 3), stride_of(st.downsample), (1, 1, 1));
            if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
                return Err(NetworkError::InvalidSpec(format!(
                    "input {input_dhw:?} collapses to zero voxels"
                )));
            }
            out.push(dims);
        }
        Ok(out)
    }

    /// Output dims of the full network (decoder mirrors back to stage 1's
    /// resolution, which equals the input resolution).
    pub fn output_dims(
        &self,
        input_dhw: (usize, usize, usize),
    ) -> Result<(usize, usize, usize), NetworkError> {
        self.stage_dims(input_dhw).map(|_| input_dhw)
    }
}

fn stride_of(down: (bool, bool, bool)) -> [usize; 3] {
    [
        if down.0 { 2 } else { 1 },
        if down.1 { 2 } else { 1 },
        if down.2 { 2 } else { 1 },
    ]
}

fn conv_out_dims(
    dims: (usize, usize, usize),
    k: (usize, usize, usize),
    stride: [usize; 3],
    pad: (usize, usize, usize),
) -> (usize, usize, usize) {
    (
        (dims.0 + 2 * pad.0 - k.0) / stride[0] + 1,
        (dims.1 + 2 * pad.1 - k.1) / stride[1] + 1,
        (dims.2 + 2 * pad.2 - k.2) / stride[2] + 1,
    )
}

/// One named, tagged tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub stage_tag: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f32>,
}

/// All parameters of one model, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    params: Vec<Param>,
}

impl ParameterSet {
    /// Assemble a set from raw parameters, e.g. when loading a checkpoint.
    /// Order matters: forward passes consume parameters positionally, so the
    /// caller must supply them in model layout order for the same spec.
    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// All distinct stage tags, sorted.
    pub fn tags(&self) -> BTreeSet<String> {
        self.params.iter().map(|p| p.stage_tag.clone()).collect()
    }

    /// Flip the trainable flag of every parameter carrying one of `tags`.
    pub fn set_trainable(&mut self, tags: &[&str], trainable: bool) -> Result<(), NetworkError> {
        for &tag in tags {
            if !self.params.iter().any(|p| p.stage_tag == tag) {
                return Err(NetworkError::UnknownTag(tag.into()));
            }
        }
        for p in &mut self.params {
            if tags.contains(&p.stage_tag.as_str()) {
                p.trainable = trainable;
            }
        }
        Ok(())
    }

    /// Set exactly the parameters with these tags trainable, all others
    /// frozen (the unfreeze controller's primitive).
    pub fn set_trainable_exactly(&mut self, tags: &[&str]) -> Result<(), NetworkError> {
        for &tag in tags {
            if !self.params.iter().any(|p| p.stage_tag == tag) {
                return Err(NetworkError::UnknownTag(tag.into()));
            }
        }
        for p in &mut self.params {
            p.trainable = tags.contains(&p.stage_tag.as_str());
        }
        Ok(())
    }
}

pub(crate) enum ParamKind {
    /// He-initialized convolution weight with the given fan-in.
    ConvWeight { fan_in: usize },
    NormGamma,
    NormBeta,
    Bias,
}

pub(crate) struct ParamDef {
    pub name: String,
    pub tag: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

fn conv_def(name: String, tag: &str, cout: usize, cin_g: usize, k: usize) -> ParamDef {
    ParamDef {
        name,
        tag: tag.into(),
        shape: vec![cout, cin_g, k, k, k],
        kind: ParamKind::ConvWeight { fan_in: cin_g * k * k * k },
    }
}

fn norm_defs(prefix: &str, tag: &str, c: usize) -> [ParamDef; 2] {
    [
        ParamDef {
            name: format!("{prefix}.gamma"),
            tag: tag.into(),
            shape: vec![c],
            kind: ParamKind::NormGamma,
        },
        ParamDef {
            name: format!("{prefix}.beta"),
            tag: tag.into(),
            shape: vec![c],
            kind: ParamKind::NormBeta,
        },
    ]
}

/// The ordered parameter layout of a spec. Forward consumes leaves in this
/// exact order; init, checkpoints, and transfer all follow it.
pub(crate) fn param_layout(spec: &ModelSpec) -> Vec<ParamDef> {
    let mut defs = Vec::new();
    let n_stages = spec.stages.len();
    let mut prev_ch = spec.in_channels;
    for (k, st) in spec.stages.iter().enumerate() {
        let stage_no = k + 1;
        let enc_tag = format!("enc.stage{stage_no}");
        let c = st.channels;
        let mid = c / 2;
        // entry conv (3^3, optional stride): tagged with its encoder stage
        // even at the deepest stage — only the residual blocks there are
        // "bottleneck".
        defs.push(conv_def(
            format!("enc.stage{stage_no}.entry.conv.weight"),
            &enc_tag,
            c,
            prev_ch,
            3,
        ));
        defs.extend(norm_defs(&format!("enc.stage{stage_no}.entry.norm"), &enc_tag, c));
        let block_tag = if stage_no == n_stages { "bottleneck" } else { enc_tag.as_str() };
        for b in 0..st.blocks {
            let p = format!("enc.stage{stage_no}.block{b}");
            defs.push(conv_def(format!("{p}.conv1.weight"), block_tag, mid, c, 1));
            defs.extend(norm_defs(&format!("{p}.norm1"), block_tag, mid));
            defs.push(conv_def(
                format!("{p}.conv2.weight"),
                block_tag,
                mid,
                mid / spec.cardinality,
                3,
            ));
            defs.extend(norm_defs(&format!("{p}.norm2"), block_tag, mid));
            defs.push(conv_def(format!("{p}.conv3.weight"), block_tag, c, mid, 1));
            defs.extend(norm_defs(&format!("{p}.norm3"), block_tag, c));
        }
        prev_ch = c;
    }
    // decoder: deepest-1 down to 1, two convs per stage
    for k in (0..n_stages - 1).rev() {
        let stage_no = k + 1;
        let tag = format!("dec.stage{stage_no}");
        let c_skip = spec.stages[k].channels;
        let c_below = spec.stages[k + 1].channels;
        defs.push(conv_def(
            format!("dec.stage{stage_no}.conv1.weight"),
            &tag,
            c_skip,
            c_skip + c_below,
            3,
        ));
        defs.extend(norm_defs(&format!("dec.stage{stage_no}.norm1"), &tag, c_skip));
        defs.push(conv_def(format!("dec.stage{stage_no}.conv2.weight"), &tag, c_skip, c_skip, 3));
        defs.extend(norm_defs(&format!("dec.stage{stage_no}.norm2"), &tag, c_skip));
    }
    // head: 1^3 conv to logits, with bias (no norm follows)
    defs.push(conv_def(
        "head.conv.weight".into(),
        "head",
        spec.out_channels,
        spec.stages[0].channels,
        1,
    ));
    defs.push(ParamDef {
        name: "head.conv.bias".into(),
        tag: "head".into(),
        shape: vec![spec.out_channels],
        kind: ParamKind::Bias,
    });
    defs
}

fn init_values(def: &ParamDef, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n: usize = def.shape.iter().product();
    match def.kind {
        ParamKind::ConvWeight { fan_in } => {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| dist.sample(rng) as f32).collect()
        }
        ParamKind::NormGamma => vec![1.0; n],
        ParamKind::NormBeta => vec![0.0; n],
        ParamKind::Bias => vec![0.0; n],
    }
}

/// Executable network: the spec plus nothing else — parameters travel
/// separately as a [`ParameterSet`] so the same model can run θ_cav, θ_wall,
/// or perturbed copies.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
}

impl Model {
    /// Build a model and a deterministically He-initialized parameter set.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<(Self, ParameterSet), NetworkError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(&spec)
            .iter()
            .map(|def| Param {
                name: def.name.clone(),
                stage_tag: def.tag.clone(),
                shape: def.shape.clone(),
                trainable: true,
                values: init_values(def, &mut rng),
            })
            .collect();
        Ok((Self { spec }, ParameterSet { params }))
    }

    /// Create tape leaves for every parameter (trainable ⇒ requires_grad)
    /// and run the forward pass. Returns logits plus the leaf handles in
    /// parameter order so callers can read gradients after backward.
    pub fn forward_with_bindings<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: &Tensor,
        params: &ParameterSet,
    ) -> Result<(Tensor, Vec<Tensor>), NetworkError> {
        let leaves: Result<Vec<Tensor>, AutodiffError> = params
            .params
            .iter()
            .map(|p| {
                let vals: Vec<T> = p.values.iter().map(|&v| real::<T>(v as f64)).collect();
                tape.leaf(vals, &p.shape, p.trainable)
            })
            .collect();
        let leaves = leaves?;
        let logits = self.forward_from_leaves(tape, input, &leaves)?;
        Ok((logits, leaves))
    }

    /// Forward from logits for callers that don't need gradients.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: &Tensor,
        params: &ParameterSet,
    ) -> Result<Tensor, NetworkError> {
        self.forward_with_bindings(tape, input, params).map(|(y, _)| y)
    }

    fn activate<T: Real>(&self, tape: &mut Tape<T>, x: &Tensor) -> Tensor {
        match self.spec.activation {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, real::<T>(self.spec.leaky_slope)),
        }
    }

    /// Run the network consuming pre-made leaves in [`param_layout`] order.
    /// Exposed for gradient checking, where the harness owns the leaves.
    pub fn forward_from_leaves<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: &Tensor,
        leaves: &[Tensor],
    ) -> Result<Tensor, NetworkError> {
        let spec = &self.spec;
        let eps = real::<T>(spec.norm_eps);
        let n_stages = spec.stages.len();
        let mut cur = 0usize;
        let next = |cur: &mut usize| -> Tensor {
            let t = leaves[*cur].clone();
            *cur += 1;
            t
        };

        let mut x = input.clone();
        let mut skips: Vec<Tensor> = Vec::with_capacity(n_stages);
        for st in &spec.stages {
            let w = next(&mut cur);
            let (g, b) = (next(&mut cur), next(&mut cur));
            x = tape.conv3d(&x, &w, None, stride_of(st.downsample), [1, 1, 1], 1)?;
            x = tape.instance_norm3d(&x, &g, &b, eps)?;
            x = self.activate(tape, &x);
            for _ in 0..st.blocks {
                let identity = x.clone();
                let w1 = next(&mut cur);
                let (g1, b1) = (next(&mut cur), next(&mut cur));
                x = tape.conv3d(&x, &w1, None, [1, 1, 1], [0, 0, 0], 1)?;
                x = tape.instance_norm3d(&x, &g1, &b1, eps)?;
                x = self.activate(tape, &x);
                let w2 = next(&mut cur);
                let (g2, b2) = (next(&mut cur), next(&mut cur));
                x = tape.conv3d(&x, &w2, None, [1, 1, 1], [1, 1, 1], spec.cardinality)?;
                x = tape.instance_norm3d(&x, &g2, &b2, eps)?;
                x = self.activate(tape, &x);
                let w3 = next(&mut cur);
                let (g3, b3) = (next(&mut cur), next(&mut cur));
                x = tape.conv3d(&x, &w3, None, [1, 1, 1], [0, 0, 0], 1)?;
                x = tape.instance_norm3d(&x, &g3, &b3, eps)?;
                x = tape.add(&x, &identity)?;
                x = self.activate(tape, &x);
            }
            skips.push(x.clone());
        }

        let mut y = skips[n_stages - 1].clone();
        for k in (0..n_stages - 1).rev() {
            let skip = &skips[k];
            let target = [skip.shape()[2], skip.shape()[3], skip.shape()[4]];
            y = tape.upsample_trilinear(&y, target)?;
            y = tape.concat(&[skip, &y], 1)?;
            let w1 = next(&mut cur);
            let (g1, b1) = (next(&mut cur), next(&mut cur));
            y = tape.conv3d(&y, &w1, None, [1, 1, 1], [1, 1, 1], 1)?;
            y = tape.instance_norm3d(&y, &g1, &b1, eps)?;
            y = self.activate(tape, &y);
            let w2 = next(&mut cur);
            let (g2, b2) = (next(&mut cur), next(&mut cur));
            y = tape.conv3d(&y, &w2, None, [1, 1, 1], [1, 1, 1], 1)?;
            y = tape.instance_norm3d(&y, &g2, &b2, eps)?;
            y = self.activate(tape, &y);
        }

        let wh = next(&mut cur);
        let bh = next(&mut cur);
        debug_assert_eq!(cur, leaves.len(), "leaf count must match layout");
        let logits = tape.conv3d(&y, &wh, Some(&bh), [1, 1, 1], [0, 0, 0], 1)?;
        Ok(logits)
    }
}

/// Copy weights from a source parameter set onto a freshly built target.
/// With `reinit_head` the head parameters are re-drawn from `seed` instead,
/// which is how a cavity-trained trunk acquires a new wall head.
pub fn transfer_weights(
    source: &ParameterSet,
    target: &ParameterSet,
    reinit_head: bool,
    seed: u64,
) -> Result<ParameterSet, NetworkError> {
    if source.params.len() != target.params.len() {
        return Err(NetworkError::SpecMismatch(format!(
            "parameter counts differ: {} vs {}",
            source.params.len(),
            target.params.len()
        )));
    }
    for (s, t) in source.params.iter().zip(&target.params) {
        if s.name != t.name || s.shape != t.shape {
            return Err(NetworkError::SpecMismatch(format!(
                "parameter mismatch: {} {:?} vs {} {:?}",
                s.name, s.shape, t.name, t.shape
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = source
        .params
        .iter()
        .map(|p| {
            let mut out = p.clone();
            out.trainable = true;
            if reinit_head && p.stage_tag == "head" {
                if p.name.ends_with(".bias") {
                    out.values = vec![0.0; p.values.len()];
                } else {
                    let fan_in: usize = p.shape[1..].iter().product();
                    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    out.values = p.values.iter().map(|_| dist.sample(&mut rng) as f32).collect();
                }
            }
            out
        })
        .collect();
    Ok(ParameterSet { params })
}
