//! Network configuration, parameter layout and forward pass.
//!
//! The full network is: per-subclip SPD convolution blocks, the recursive layer over
//! subclips, the diagonalizing layer and a `FC → tanh → FC → softmax` head. Ablations
//! drop the convolutions, replace the recursive layer by a temporal mean, or swap the
//! SPD path for a 1-D convolution + GRU stack on raw coordinates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamStore, Tape, Unary};
use crate::data::SpdSample;
use crate::error::{invalid, DmtError, Result};
use crate::layers::{
    diagonalize_forward, head_forward, spd_activate, spd_conv_forward, spd_gru_rollout, Activation, BiasMode,
    ChannelProjections, HeadParams, RecursiveParams, SpdKernelBank, OVERFLOW_CLAMP,
};
use crate::random::{gaussian_mat, seeded};
use crate::tensor::{Mat, McSpdTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    NoConv,
    NoRecursive,
    Euclidean,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoConv, Ablation::NoRecursive, Ablation::Euclidean];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoConv => "no-conv",
            Ablation::NoRecursive => "no-recursive",
            Ablation::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = DmtError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid(format!("unknown ablation {s:?}")))
    }
}

/// One SPD convolution layer: `out × in` kernels of size `K × K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl fmt::Display for ConvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.out_channels, self.in_channels, self.kernel)
    }
}

impl FromStr for ConvSpec {
    type Err = DmtError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| invalid(format!("conv spec {s:?} is not OUTxINxK")))?;
        match parts.as_slice() {
            [o, i, k] => Ok(ConvSpec {
                out_channels: *o,
                in_channels: *i,
                kernel: *k,
            }),
            _ => Err(invalid(format!("conv spec {s:?} is not OUTxINxK"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub joints: usize,
    pub conv: Vec<ConvSpec>,
    pub conv_activation: Activation,
    pub kernel_epsilon: f64,
    pub hidden_dim: usize,
    pub recursive_epsilon: f64,
    pub bias_mode: BiasMode,
    pub fc_units: usize,
    pub classes: usize,
    pub subclips: usize,
    /// Element-wise log after the diagonalizing layer.
    pub log_features: bool,
    pub ablation: Ablation,
    /// Std of the input-side recursive projections is `rec_init / sqrt(fan_in)`.
    pub rec_init: f64,
    /// Same for the hidden-side gate projections `W_hr`, `W_hz`. Large values let the
    /// gates close once `H` is of order one; small ones let `H` double every step.
    pub rec_hidden_init: f64,
    pub beta_init: f64,
    pub euclid_channels: usize,
    pub euclid_kernel: usize,
    pub euclid_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 15,
            conv: vec![
                ConvSpec {
                    out_channels: 4,
                    in_channels: 1,
                    kernel: 6,
                },
                ConvSpec {
                    out_channels: 8,
                    in_channels: 4,
                    kernel: 3,
                },
            ],
            conv_activation: Activation::Sinh,
            kernel_epsilon: 1e-3,
            hidden_dim: 9,
            recursive_epsilon: 1e-6,
            bias_mode: BiasMode::Ones,
            fc_units: 800,
            classes: 3,
            subclips: 12,
            log_features: false,
            ablation: Ablation::None,
            rec_init: 0.3,
            rec_hidden_init: 3.0,
            beta_init: 0.01,
            euclid_channels: 32,
            euclid_kernel: 3,
            euclid_hidden: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn uses_conv(&self) -> bool {
        matches!(self.ablation, Ablation::None | Ablation::NoRecursive)
    }

    pub fn uses_recursive(&self) -> bool {
        matches!(self.ablation, Ablation::None | Ablation::NoConv)
    }

    /// Matrix size after each active SPD convolution, starting with the input size.
    pub fn spd_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.joints];
        if self.uses_conv() {
            for c in &self.conv {
                dims.push(dims.last().unwrap() + 1 - c.kernel);
            }
        }
        dims
    }

    /// Channel count entering the recursive or pooling stage.
    pub fn spd_channels(&self) -> usize {
        match (self.uses_conv(), self.conv.last()) {
            (true, Some(c)) => c.out_channels,
            _ => 1,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self.ablation {
            Ablation::Euclidean => self.euclid_hidden,
            Ablation::NoRecursive => {
                let d = *self.spd_dims().last().unwrap();
                self.spd_channels() * d * d
            }
            Ablation::None | Ablation::NoConv => self.spd_channels() * self.hidden_dim * self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.classes < 2 || self.subclips == 0 || self.fc_units == 0 {
            return Err(invalid("joints, fc_units and subclips must be positive and classes >= 2"));
        }
        if !(self.kernel_epsilon > 0.0 && self.recursive_epsilon > 0.0) {
            return Err(invalid("epsilon values must be positive"));
        }
        if self.uses_conv() {
            let mut channels = 1;
            let mut dim = self.joints;
            for (l, c) in self.conv.iter().enumerate() {
                if c.in_channels != channels {
                    return Err(invalid(format!(
                        "conv layer {l} expects {} input channels but receives {channels}",
                        c.in_channels
                    )));
                }
                if c.kernel == 0 || c.kernel > dim || c.out_channels == 0 {
                    return Err(invalid(format!("conv layer {l}: kernel {} does not fit {dim}x{dim}", c.kernel)));
                }
                dim = dim + 1 - c.kernel;
                channels = c.out_channels;
            }
        }
        if self.uses_recursive() && self.hidden_dim == 0 {
            return Err(invalid("hidden_dim must be positive"));
        }
        if self.ablation == Ablation::Euclidean {
            let steps = self.subclips as isize - 2 * (self.euclid_kernel as isize - 1);
            if self.euclid_kernel == 0 || steps < 1 || self.euclid_channels == 0 || self.euclid_hidden == 0 {
                return Err(invalid("euclidean baseline: two 1-D convolutions must leave at least one step"));
            }
        }
        Ok(())
    }

    /// Flat `key=value` pairs, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let conv: Vec<String> = self.conv.iter().map(ToString::to_string).collect();
        vec![
            ("joints".into(), self.joints.to_string()),
            ("conv".into(), conv.join(",")),
            ("conv_activation".into(), self.conv_activation.name().into()),
            ("kernel_epsilon".into(), self.kernel_epsilon.to_string()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            ("recursive_epsilon".into(), self.recursive_epsilon.to_string()),
            ("bias_mode".into(), self.bias_mode.name().into()),
            ("fc_units".into(), self.fc_units.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("subclips".into(), self.subclips.to_string()),
            ("log_features".into(), self.log_features.to_string()),
            ("ablation".into(), self.ablation.name().into()),
            ("rec_init".into(), self.rec_init.to_string()),
            ("rec_hidden_init".into(), self.rec_hidden_init.to_string()),
            ("beta_init".into(), self.beta_init.to_string()),
            ("euclid_channels".into(), self.euclid_channels.to_string()),
            ("euclid_kernel".into(), self.euclid_kernel.to_string()),
            ("euclid_hidden".into(), self.euclid_hidden.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Sets one field from its `to_kv` key. Returns `Ok(false)` for unknown keys.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| invalid(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "joints" => self.joints = num(key, value)?,
            "conv" => {
                self.conv = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(str::parse).collect::<Result<_>>()?
                }
            }
            "conv_activation" => self.conv_activation = value.parse()?,
            "kernel_epsilon" => self.kernel_epsilon = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "recursive_epsilon" => self.recursive_epsilon = num(key, value)?,
            "bias_mode" => self.bias_mode = value.parse()?,
            "fc_units" => self.fc_units = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "subclips" => self.subclips = num(key, value)?,
            "log_features" => self.log_features = num(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "rec_init" => self.rec_init = num(key, value)?,
            "rec_hidden_init" => self.rec_hidden_init = num(key, value)?,
            "beta_init" => self.beta_init = num(key, value)?,
            "euclid_channels" => self.euclid_channels = num(key, value)?,
            "euclid_kernel" => self.euclid_kernel = num(key, value)?,
            "euclid_hidden" => self.euclid_hidden = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Indices into the [`ParamStore`] for each layer.
#[derive(Clone, Debug, Default)]
struct Layout {
    /// `conv[l][m * in + c]` is the raw factor `V` of kernel `(m, c)`.
    conv: Vec<Vec<usize>>,
    /// Per channel: `w_fr, w_hr, w_fz, w_hz, w_fh`.
    rec: Vec<[usize; 5]>,
    /// `beta_r, beta_z, beta_h`.
    beta: Option<[usize; 3]>,
    /// Per 1-D conv layer: tap weights and bias.
    euc_conv: Vec<(Vec<usize>, usize)>,
    /// `w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h`.
    euc_gru: Option<[usize; 9]>,
    /// `fc_w, fc_b, out_w, out_b`.
    head: [usize; 4],
}

/// Name, shape and init std (0 for zeros, negative for a constant `-std`) of every
/// parameter, in store order.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, usize, usize, f64)> {
    let mut specs = Vec::new();
    if cfg.ablation == Ablation::Euclidean {
        let mut ch = 3 * cfg.joints;
        for l in 0..2 {
            let std = 1.0 / ((cfg.euclid_kernel * ch) as f64).sqrt();
            for k in 0..cfg.euclid_kernel {
                specs.push((format!("euc.conv{l}.w{k}"), ch, cfg.euclid_channels, std));
            }
            specs.push((format!("euc.conv{l}.b"), 1, cfg.euclid_channels, 0.0));
            ch = cfg.euclid_channels;
        }
        let (i, h) = (cfg.euclid_channels, cfg.euclid_hidden);
        for g in ["z", "r", "h"] {
            specs.push((format!("euc.gru.w_{g}"), i, h, 1.0 / (i as f64).sqrt()));
        }
        for g in ["z", "r", "h"] {
            specs.push((format!("euc.gru.u_{g}"), h, h, 1.0 / (h as f64).sqrt()));
        }
        for g in ["z", "r", "h"] {
            specs.push((format!("euc.gru.b_{g}"), 1, h, 0.0));
        }
    } else {
        if cfg.uses_conv() {
            for (l, c) in cfg.conv.iter().enumerate() {
                let std = 1.0 / (c.kernel as f64 * (c.in_channels as f64).sqrt());
                for m in 0..c.out_channels {
                    for ch in 0..c.in_channels {
                        specs.push((format!("conv{l}.v{m}_{ch}"), c.kernel, c.kernel, std));
                    }
                }
            }
        }
        if cfg.uses_recursive() {
            let d_in = *cfg.spd_dims().last().unwrap();
            let h = cfg.hidden_dim;
            let fs = cfg.rec_init / (d_in as f64).sqrt();
            let hs = cfg.rec_hidden_init / (h as f64).sqrt();
            for c in 0..cfg.spd_channels() {
                specs.push((format!("rec.c{c}.w_fr"), d_in, h, fs));
                specs.push((format!("rec.c{c}.w_hr"), h, h, hs));
                specs.push((format!("rec.c{c}.w_fz"), d_in, h, fs));
                specs.push((format!("rec.c{c}.w_hz"), h, h, hs));
                specs.push((format!("rec.c{c}.w_fh"), d_in, h, fs));
            }
            for b in ["beta_r", "beta_z", "beta_h"] {
                specs.push((format!("rec.{b}"), 1, 1, -cfg.beta_init));
            }
        }
    }
    let f = cfg.feature_len();
    let u = cfg.fc_units;
    let k = cfg.classes;
    specs.push(("head.fc_w".into(), f, u, (2.0 / (f + u) as f64).sqrt()));
    specs.push(("head.fc_b".into(), 1, u, 0.0));
    specs.push(("head.out_w".into(), u, k, (2.0 / (u + k) as f64).sqrt()));
    specs.push(("head.out_b".into(), 1, k, 0.0));
    specs
}

fn layout_for(cfg: &ModelConfig, store: &ParamStore) -> Layout {
    let idx = |n: String| store.index_of(&n).expect("layout follows param_specs");
    let mut lay = Layout::default();
    if cfg.ablation == Ablation::Euclidean {
        for l in 0..2 {
            let taps = (0..cfg.euclid_kernel).map(|k| idx(format!("euc.conv{l}.w{k}"))).collect();
            lay.euc_conv.push((taps, idx(format!("euc.conv{l}.b"))));
        }
        let names = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];
        lay.euc_gru = Some(names.map(|n| idx(format!("euc.gru.{n}"))));
    } else {
        if cfg.uses_conv() {
            for (l, c) in cfg.conv.iter().enumerate() {
                let mut v = Vec::new();
                for m in 0..c.out_channels {
                    for ch in 0..c.in_channels {
                        v.push(idx(format!("conv{l}.v{m}_{ch}")));
                    }
                }
                lay.conv.push(v);
            }
        }
        if cfg.uses_recursive() {
            for c in 0..cfg.spd_channels() {
                lay.rec.push(["w_fr", "w_hr", "w_fz", "w_hz", "w_fh"].map(|n| idx(format!("rec.c{c}.{n}"))));
            }
            lay.beta = Some(["beta_r", "beta_z", "beta_h"].map(|n| idx(format!("rec.{n}"))));
        }
    }
    lay.head = ["fc_w", "fc_b", "out_w", "out_b"].map(|n| idx(format!("head.{n}")));
    lay
}

/// A configured network with its parameters.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Network {
    /// Fresh parameters drawn from a generator seeded with `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let mut params = ParamStore::new();
        for (name, r, c, std) in param_specs(&config) {
            let value = if std > 0.0 {
                gaussian_mat(&mut rng, r, c, std)
            } else {
                Mat::filled(r, c, -std)
            };
            params.push(name, value);
        }
        let layout = layout_for(&config, &params);
        if config.uses_recursive() {
            let input = *config.spd_dims().last().expect("at least the joint dimension");
            if config.hidden_dim > input {
                log::warn!(
                    "hidden size {} exceeds recursive input size {input}: input projections are rank deficient, εI and the biases keep states PD",
                    config.hidden_dim
                );
            }
        }
        Ok(Self { config, params, layout })
    }

    /// Wraps existing parameters, checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        let mut diff = Vec::new();
        for (name, r, c, _) in &specs {
            match params.by_name(name) {
                None => diff.push(format!("missing {name} ({r}x{c})")),
                Some(m) if m.shape() != (*r, *c) => {
                    diff.push(format!("{name}: expected {r}x{c}, found {}x{}", m.rows(), m.cols()))
                }
                Some(_) => {}
            }
        }
        for name in params.names() {
            if !specs.iter().any(|s| &s.0 == name) {
                diff.push(format!("unexpected {name}"));
            }
        }
        if !diff.is_empty() {
            return Err(DmtError::Checkpoint(format!(
                "parameters do not match the model config: {}",
                diff.join("; ")
            )));
        }
        let mut ordered = ParamStore::new();
        for (name, ..) in &specs {
            ordered.push(name.clone(), params.by_name(name).unwrap().clone());
        }
        let layout = layout_for(&config, &ordered);
        Ok(Self {
            config,
            params: ordered,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameter count per layer group (`conv0`, `rec`, `head`, ...).
    pub fn layer_sizes(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (name, m) in self.params.iter() {
            *out.entry(layer_of(name).to_string()).or_insert(0) += m.len();
        }
        out
    }

    pub fn check_sample(&self, s: &SpdSample) -> Result<()> {
        let cfg = &self.config;
        if s.label >= cfg.classes {
            return Err(invalid(format!("label {} out of range for {} classes", s.label, cfg.classes)));
        }
        if s.descriptors.is_empty() {
            return Err(invalid("sample has no subclips"));
        }
        if cfg.ablation == Ablation::Euclidean {
            if s.coords.shape() != (cfg.subclips, 3 * cfg.joints) {
                return Err(DmtError::Shape {
                    op: "euclidean input",
                    left: (cfg.subclips, 3 * cfg.joints),
                    right: s.coords.shape(),
                });
            }
            return Ok(());
        }
        for d in &s.descriptors {
            if d.dim() != cfg.joints || d.channels() != 1 {
                return Err(invalid(format!(
                    "descriptor is {}x{}x{}, expected 1x{}x{}",
                    d.channels(),
                    d.dim(),
                    d.dim(),
                    cfg.joints,
                    cfg.joints
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the `1 × classes` logit node.
    pub fn forward(&self, tape: &mut Tape<'_>, s: &SpdSample) -> Result<NodeId> {
        self.check_sample(s)?;
        let feat = match self.config.ablation {
            Ablation::Euclidean => self.euclidean_features(tape, &s.coords)?,
            _ => self.spd_features(tape, &s.descriptors)?,
        };
        let [fc_w, fc_b, out_w, out_b] = self.layout.head.map(|i| tape.param(i));
        let a = tape.matmul(feat, fc_w)?;
        let a = tape.add_row(a, fc_b)?;
        let a = tape.map(a, Unary::Tanh);
        let l = tape.matmul(a, out_w)?;
        tape.add_row(l, out_b)
    }

    /// Forward pass plus softmax cross-entropy. Returns `(loss node, probabilities)`.
    pub fn loss(&self, tape: &mut Tape<'_>, s: &SpdSample) -> Result<(NodeId, Vec<f64>)> {
        let logits = self.forward(tape, s)?;
        let loss = tape.softmax_ce(logits, s.label)?;
        let probs = tape.probabilities(loss).expect("softmax node").to_vec();
        Ok((loss, probs))
    }

    pub fn predict(&self, s: &SpdSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let logits = self.forward(&mut tape, s)?;
        Ok(crate::layers::softmax(tape.value(logits).data()))
    }

    fn spd_features(&self, tape: &mut Tape<'_>, descriptors: &[McSpdTensor]) -> Result<NodeId> {
        let cfg = &self.config;
        let kernels = self.kernel_nodes(tape)?;
        let act = Unary::from(cfg.conv_activation);
        let mut seq: Vec<Vec<NodeId>> = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            let mut x: Vec<NodeId> = d.mats().iter().map(|m| tape.leaf(m.clone())).collect();
            for (l, spec) in cfg.conv.iter().enumerate().take(kernels.len()) {
                let mut out = Vec::with_capacity(spec.out_channels);
                for m in 0..spec.out_channels {
                    let parts = (0..spec.in_channels)
                        .map(|c| tape.conv2d(x[c], kernels[l][m * spec.in_channels + c]))
                        .collect::<Result<Vec<_>>>()?;
                    let f = tape.sum(&parts)?;
                    let f = tape.symmetrize(f)?;
                    let f = tape.guard(f, OVERFLOW_CLAMP);
                    out.push(tape.map(f, act));
                }
                x = out;
            }
            seq.push(x);
        }
        let z = if cfg.uses_recursive() {
            self.recursive(tape, &seq)?
        } else {
            let t = seq.len() as f64;
            (0..seq[0].len())
                .map(|c| {
                    let items: Vec<NodeId> = seq.iter().map(|x| x[c]).collect();
                    let s = tape.sum(&items)?;
                    Ok(tape.scale(s, 1.0 / t))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let mut flat = Vec::with_capacity(z.len());
        for c in z {
            let g = tape.guard(c, OVERFLOW_CLAMP);
            let e = tape.map(g, Unary::Exp);
            flat.push(if cfg.log_features { tape.map(e, Unary::Ln) } else { e });
        }
        Ok(tape.concat(&flat))
    }

    /// Materialized kernels `VᵀV + εI` per conv layer.
    fn kernel_nodes(&self, tape: &mut Tape<'_>) -> Result<Vec<Vec<NodeId>>> {
        let eps = self.config.kernel_epsilon;
        self.layout
            .conv
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&i| {
                        let v = tape.param(i);
                        let vtv = tape.t_matmul(v, v)?;
                        let w = tape.add_identity(vtv, eps)?;
                        tape.symmetrize(w)
                    })
                    .collect()
            })
            .collect()
    }

    fn recursive(&self, tape: &mut Tape<'_>, seq: &[Vec<NodeId>]) -> Result<Vec<NodeId>> {
        let cfg = &self.config;
        let eps = cfg.recursive_epsilon;
        let mode = cfg.bias_mode;
        let betas = self.layout.beta.expect("recursive layout").map(|i| tape.param(i));
        let [br, bz, bh] = betas.map(|b| tape.hadamard(b, b).expect("1x1"));
        let mut out = Vec::with_capacity(self.layout.rec.len());
        for (c, idx) in self.layout.rec.iter().enumerate() {
            let [w_fr, w_hr, w_fz, w_hz, w_fh] = idx.map(|i| tape.param(i));
            let mut h: Option<NodeId> = None;
            for x in seq {
                let f = x[c];
                let pre_h = tape.congruence(f, w_fh)?;
                let Some(hp) = h else {
                    // Zero initial state: H ⊙ R and Z ⊙ H vanish.
                    let cand = candidate(tape, pre_h, bh, mode, eps)?;
                    h = Some(tape.symmetrize(cand)?);
                    continue;
                };
                let r = {
                    let a = tape.congruence(f, w_fr)?;
                    let b = tape.congruence(hp, w_hr)?;
                    let s = tape.add(a, b)?;
                    gate(tape, s, br, mode, eps)?
                };
                let z = {
                    let a = tape.congruence(f, w_fz)?;
                    let b = tape.congruence(hp, w_hz)?;
                    let s = tape.add(a, b)?;
                    gate(tape, s, bz, mode, eps)?
                };
                let hr = tape.hadamard(hp, r)?;
                let pre = tape.add(pre_h, hr)?;
                let cand = candidate(tape, pre, bh, mode, eps)?;
                let zh = tape.hadamard(z, hp)?;
                let next = tape.add(zh, cand)?;
                h = Some(tape.symmetrize(next)?);
            }
            out.push(h.expect("at least one subclip"));
        }
        Ok(out)
    }

    fn euclidean_features(&self, tape: &mut Tape<'_>, coords: &Mat) -> Result<NodeId> {
        let mut y = tape.leaf(coords.clone());
        for (taps, bias) in &self.layout.euc_conv {
            let steps = tape.value(y).rows() + 1 - taps.len();
            let mut parts = Vec::with_capacity(taps.len());
            for (k, &w) in taps.iter().enumerate() {
                let slice = tape.row_slice(y, k, steps)?;
                let w = tape.param(w);
                parts.push(tape.matmul(slice, w)?);
            }
            let s = tape.sum(&parts)?;
            let b = tape.param(*bias);
            let s = tape.add_row(s, b)?;
            y = tape.map(s, Unary::Tanh);
        }
        let [w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h] = self.layout.euc_gru.expect("euclidean layout").map(|i| tape.param(i));
        let mut h: Option<NodeId> = None;
        for t in 0..tape.value(y).rows() {
            let x = tape.row_slice(y, t, 1)?;
            let lin = |tape: &mut Tape<'_>, w: NodeId, b: NodeId, rec: Option<(NodeId, NodeId)>| -> Result<NodeId> {
                let a = tape.matmul(x, w)?;
                let a = match rec {
                    Some((hv, u)) => {
                        let r = tape.matmul(hv, u)?;
                        tape.add(a, r)?
                    }
                    None => a,
                };
                tape.add_row(a, b)
            };
            let z_pre = lin(tape, w_z, b_z, h.map(|hv| (hv, u_z)))?;
            let z = tape.map(z_pre, Unary::Sigmoid);
            let n = match h {
                Some(hv) => {
                    let r_pre = lin(tape, w_r, b_r, Some((hv, u_r)))?;
                    let r = tape.map(r_pre, Unary::Sigmoid);
                    let rh = tape.hadamard(r, hv)?;
                    let n_pre = lin(tape, w_h, b_h, Some((rh, u_h)))?;
                    tape.map(n_pre, Unary::Tanh)
                }
                None => {
                    let n_pre = lin(tape, w_h, b_h, None)?;
                    tape.map(n_pre, Unary::Tanh)
                }
            };
            // h' = n + z ⊙ (h − n)
            let diff = match h {
                Some(hv) => tape.sub(hv, n)?,
                None => tape.scale(n, -1.0),
            };
            let zd = tape.hadamard(z, diff)?;
            h = Some(tape.add(n, zd)?);
        }
        Ok(h.expect("at least one step"))
    }

    /// Kernel bank of SPD conv layer `l`.
    pub fn conv_bank(&self, l: usize) -> Result<SpdKernelBank> {
        let spec = self.config.conv[l];
        let raw = self.layout.conv[l].iter().map(|&i| self.params.get(i).clone()).collect();
        SpdKernelBank::new(
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            raw,
            self.config.kernel_epsilon,
        )
    }

    /// Recursive-layer parameters with `β` values read from the store.
    pub fn recursive_params(&self) -> Option<RecursiveParams> {
        let beta = self.layout.beta?;
        let get = |i: usize| self.params.get(i).clone();
        Some(RecursiveParams {
            channels: self
                .layout
                .rec
                .iter()
                .map(|w| ChannelProjections {
                    w_fr: get(w[0]),
                    w_hr: get(w[1]),
                    w_fz: get(w[2]),
                    w_hz: get(w[3]),
                    w_fh: get(w[4]),
                })
                .collect(),
            beta_r: self.params.get(beta[0]).get(0, 0),
            beta_z: self.params.get(beta[1]).get(0, 0),
            beta_h: self.params.get(beta[2]).get(0, 0),
            epsilon: self.config.recursive_epsilon,
            bias_mode: self.config.bias_mode,
        })
    }

    pub fn head_params(&self) -> HeadParams {
        let [a, b, c, d] = self.layout.head.map(|i| self.params.get(i).clone());
        HeadParams {
            fc_weight: a,
            fc_bias: b,
            out_weight: c,
            out_bias: d,
        }
    }

    /// Class probabilities computed with the standalone layer functions instead of the
    /// tape. SPD configurations only, and only without the log flag.
    pub fn forward_layers(&self, s: &SpdSample) -> Result<Vec<f64>> {
        if self.config.ablation == Ablation::Euclidean || self.config.log_features {
            return Err(invalid("layer-level forward covers SPD configurations without log features"));
        }
        self.check_sample(s)?;
        let mut seq = Vec::with_capacity(s.descriptors.len());
        for d in &s.descriptors {
            let mut x = d.clone();
            for l in 0..self.layout.conv.len() {
                x = spd_activate(&spd_conv_forward(&x, &self.conv_bank(l)?)?, self.config.conv_activation);
            }
            seq.push(x);
        }
        let z = match self.recursive_params() {
            Some(p) => spd_gru_rollout(&seq, &p)?.hidden(),
            None => {
                let t = seq.len() as f64;
                let mats = (0..seq[0].channels())
                    .map(|c| {
                        let mut acc = Mat::zeros(seq[0].dim(), seq[0].dim());
                        for x in &seq {
                            acc.add_assign(x.channel(c))?;
                        }
                        Ok(acc.scale(1.0 / t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                McSpdTensor::new(mats)?
            }
        };
        head_forward(&diagonalize_forward(&z), &self.head_params())
    }
}

/// `σ_g(sym(pre + b·B + εI))` with the overflow guard.
fn gate(tape: &mut Tape<'_>, pre: NodeId, b: NodeId, mode: BiasMode, eps: f64) -> Result<NodeId> {
    let x = tape.add_scalar(pre, b, mode)?;
    let x = tape.add_identity(x, eps)?;
    let x = tape.symmetrize(x)?;
    let x = tape.guard(x, OVERFLOW_CLAMP);
    Ok(tape.gate(x))
}

/// `sinh(sym(pre + b·B + εI))` with the overflow guard.
fn candidate(tape: &mut Tape<'_>, pre: NodeId, b: NodeId, mode: BiasMode, eps: f64) -> Result<NodeId> {
    let x = tape.add_scalar(pre, b, mode)?;
    let x = tape.add_identity(x, eps)?;
    let x = tape.symmetrize(x)?;
    let x = tape.guard(x, OVERFLOW_CLAMP);
    Ok(tape.map(x, Unary::Sinh))
}

/// Layer group of a parameter name: the part before the first dot.
pub fn layer_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}
