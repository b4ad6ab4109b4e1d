//! Coordinate MLP: optional Fourier positional encoding, affine layers,
//! optional normalization before each ReLU, and an affine output layer.
//!
//! Activations are stored as `channels × samples` matrices, one column per
//! coordinate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{gemm_nn, DenseMatrix};
use crate::norm::{self, NormKind, Standardized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Which affine layers are followed by a normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPlacement {
    /// Every hidden layer, between the affine map and the ReLU.
    AllHidden,
    /// Only the output layer; the network output is `norm(W^L H + b^L)`.
    LastLayerOnly,
}

impl FromStr for NormPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all_hidden" => Ok(NormPlacement::AllHidden),
            "last_layer_only" => Ok(NormPlacement::LastLayerOnly),
            other => Err(Error::InvalidArgument(format!("unknown placement '{other}'"))),
        }
    }
}

impl fmt::Display for NormPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormPlacement::AllHidden => "all_hidden",
            NormPlacement::LastLayerOnly => "last_layer_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Coordinate dimension before encoding.
    pub input_dim: usize,
    /// Number of ReLU layers; the network has `hidden_layers + 1` affine maps.
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Fourier bases per input dimension; 0 disables the encoding.
    pub pe_bases: usize,
    pub norm_kind: NormKind,
    pub norm_placement: NormPlacement,
    pub norm_eps: f64,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim,
            activation: Activation::Relu,
            pe_bases: 0,
            norm_kind: NormKind::None,
            norm_placement: NormPlacement::AllHidden,
            norm_eps: norm::DEFAULT_EPS,
            seed: 0,
        }
    }

    pub fn with_norm(mut self, kind: NormKind) -> Self {
        self.norm_kind = kind;
        self
    }

    pub fn with_placement(mut self, placement: NormPlacement) -> Self {
        self.norm_placement = placement;
        self
    }

    pub fn with_pe(mut self, bases: usize) -> Self {
        self.pe_bases = bases;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "layers, width and output must be >= 1 (got {}x{} -> {})",
                self.hidden_layers, self.hidden_width, self.output_dim
            )));
        }
        if !(self.norm_eps >= 0.0) {
            return Err(Error::Config("norm_eps must be >= 0".into()));
        }
        Ok(())
    }

    /// Rows of the first layer's input.
    pub fn encoded_dim(&self) -> usize {
        if self.pe_bases > 0 {
            self.input_dim * 2 * self.pe_bases
        } else {
            self.input_dim
        }
    }

    pub fn layer_count(&self) -> usize {
        self.hidden_layers + 1
    }

    /// `(fan_out, fan_in)` of affine layer `l` (0-based).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 { self.encoded_dim() } else { self.hidden_width };
        let fan_out = if l == self.hidden_layers { self.output_dim } else { self.hidden_width };
        (fan_out, fan_in)
    }

    pub fn is_normalized(&self, l: usize) -> bool {
        if self.norm_kind == NormKind::None {
            return false;
        }
        match self.norm_placement {
            NormPlacement::AllHidden => l < self.hidden_layers,
            NormPlacement::LastLayerOnly => l == self.hidden_layers,
        }
    }

    pub fn is_activated(&self, l: usize) -> bool {
        l < self.hidden_layers
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of every parameter block in the flat parameter vector.
///
/// Order: for each layer, `W` (row-major), `b`, then `γ`, `β` when the layer
/// is normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub layers: Vec<LayerSlots>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSlots {
    pub fan_out: usize,
    pub fan_in: usize,
    pub weight: usize,
    pub bias: usize,
    pub gamma: Option<usize>,
    pub beta: Option<usize>,
}

impl LayerSlots {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight..self.weight + self.fan_out * self.fan_in
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias..self.bias + self.fan_out
    }

    pub fn gamma_range(&self) -> Option<std::ops::Range<usize>> {
        self.gamma.map(|g| g..g + self.fan_out)
    }

    pub fn beta_range(&self) -> Option<std::ops::Range<usize>> {
        self.beta.map(|b| b..b + self.fan_out)
    }
}

impl ParamLayout {
    fn new(config: &NetworkConfig) -> Self {
        let mut offset = 0;
        let mut layers = Vec::with_capacity(config.layer_count());
        for l in 0..config.layer_count() {
            let (fan_out, fan_in) = config.layer_shape(l);
            let weight = offset;
            offset += fan_out * fan_in;
            let bias = offset;
            offset += fan_out;
            let (gamma, beta) = if config.is_normalized(l) {
                let g = offset;
                let b = offset + fan_out;
                offset += 2 * fan_out;
                (Some(g), Some(b))
            } else {
                (None, None)
            };
            layers.push(LayerSlots { fan_out, fan_in, weight, bias, gamma, beta });
        }
        Self { layers, total: offset }
    }

    /// Whether flat index `p` is a normalization scale or shift.
    pub fn is_norm_affine(&self, p: usize) -> bool {
        self.layers.iter().any(|s| {
            s.gamma_range().is_some_and(|r| r.contains(&p))
                || s.beta_range().is_some_and(|r| r.contains(&p))
        })
    }
}

/// Network parameters stored as one flat vector in [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn from_flat(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let layout = config.layout();
        if values.len() != layout.total {
            return dim_err(format!("{} values for {} parameters", values.len(), layout.total));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        &self.values[self.layout.layers[l].weight_range()]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.values[self.layout.layers[l].bias_range()]
    }

    pub fn gamma(&self, l: usize) -> Option<&[f64]> {
        self.layout.layers[l].gamma_range().map(|r| &self.values[r])
    }

    pub fn beta(&self, l: usize) -> Option<&[f64]> {
        self.layout.layers[l].beta_range().map(|r| &self.values[r])
    }

    pub fn weight_matrix(&self, l: usize) -> DenseMatrix {
        let s = self.layout.layers[l];
        DenseMatrix::new(s.fan_out, s.fan_in, self.weight(l).to_vec()).expect("layout shape")
    }

    pub fn set_weight(&mut self, l: usize, w: &DenseMatrix) -> Result<()> {
        let s = self.layout.layers[l];
        if w.shape() != (s.fan_out, s.fan_in) {
            return dim_err(format!("weight {:?} for layer {l} of {:?}", w.shape(), (s.fan_out, s.fan_in)));
        }
        self.values[s.weight_range()].copy_from_slice(w.as_slice());
        Ok(())
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.layout.layers[l].bias_range();
        &mut self.values[r]
    }

    pub fn check_config(&self, config: &NetworkConfig) -> Result<()> {
        if self.layout != config.layout() {
            return dim_err("parameters do not match the network configuration");
        }
        Ok(())
    }
}

/// LeCun-normal initialization: `W ~ N(0, 1/fan_in)`, `b = 0`, `γ = 1`, `β = 0`.
///
/// Weights are drawn layer by layer in row-major order from a ChaCha8 stream
/// seeded by `config.seed`, so architectures that differ only in
/// normalization share their weights.
pub fn init_params(config: &NetworkConfig) -> Result<NetworkParams> {
    config.validate()?;
    let layout = config.layout();
    let mut values = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for slots in &layout.layers {
        let std = (1.0 / slots.fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in &mut values[slots.weight_range()] {
            *v = normal.sample(&mut rng);
        }
        if let Some(r) = slots.gamma_range() {
            values[r].fill(1.0);
        }
    }
    Ok(NetworkParams { layout, values })
}

/// Fourier features: for every input dimension the rows
/// `sin(2^0 π x), cos(2^0 π x), …, sin(2^{B-1} π x), cos(2^{B-1} π x)`.
pub fn positional_encoding(x: &DenseMatrix, bases: usize) -> Result<DenseMatrix> {
    if bases == 0 {
        return Err(Error::InvalidArgument("positional encoding needs at least one basis".into()));
    }
    let (dims, t) = x.shape();
    let mut out = DenseMatrix::zeros(dims * 2 * bases, t);
    for d in 0..dims {
        for k in 0..bases {
            let freq = (1u64 << k) as f64 * PI;
            let base = d * 2 * bases + 2 * k;
            for s in 0..t {
                let (sin, cos) = (freq * x[(d, s)]).sin_cos();
                out[(base, s)] = sin;
                out[(base + 1, s)] = cos;
            }
        }
    }
    Ok(out)
}

/// Cached intermediates of one affine layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `Z = W H^{l-1} + b`.
    pub pre_norm: DenseMatrix,
    pub norm: Option<Standardized>,
    /// `γ x̂ + β` (or `Z` when the layer is not normalized).
    pub pre_activation: DenseMatrix,
    /// `H^l`.
    pub output: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `H^0`, the encoded input.
    pub input: DenseMatrix,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// Network output `C × T`.
    pub fn output(&self) -> &DenseMatrix {
        &self.layers.last().expect("at least one layer").output
    }

    pub fn samples(&self) -> usize {
        self.input.cols()
    }

    /// Layer input `H^{l-1}`.
    pub fn layer_input(&self, l: usize) -> &DenseMatrix {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].output
        }
    }

    /// The trace restricted to sample `t`. Only meaningful when the
    /// normalization does not couple samples.
    pub(crate) fn column(&self, t: usize) -> ForwardTrace {
        let col = |m: &DenseMatrix| DenseMatrix::new(m.rows(), 1, m.column(t)).expect("column");
        ForwardTrace {
            input: col(&self.input),
            layers: self
                .layers
                .iter()
                .map(|lt| LayerTrace {
                    pre_norm: col(&lt.pre_norm),
                    norm: lt.norm.as_ref().map(|st| Standardized {
                        xhat: col(&st.xhat),
                        stats: norm::NormStats {
                            kind: st.stats.kind,
                            mean: col(&st.stats.mean),
                            std: col(&st.stats.std),
                            eps: st.stats.eps,
                        },
                    }),
                    pre_activation: col(&lt.pre_activation),
                    output: col(&lt.output),
                })
                .collect(),
        }
    }
}

/// Encode coordinates according to the configuration.
pub fn encode_input(x: &DenseMatrix, config: &NetworkConfig) -> Result<DenseMatrix> {
    if x.rows() != config.input_dim {
        return dim_err(format!("input has {} rows, network expects {}", x.rows(), config.input_dim));
    }
    if config.pe_bases > 0 {
        positional_encoding(x, config.pe_bases)
    } else {
        Ok(x.clone())
    }
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Full forward pass with every intermediate cached.
pub fn forward(params: &NetworkParams, x: &DenseMatrix, config: &NetworkConfig) -> Result<ForwardTrace> {
    params.check_config(config)?;
    let input = encode_input(x, config)?;
    let t = input.cols();
    if t == 0 {
        return Err(Error::InvalidArgument("forward on zero samples".into()));
    }
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(config.layer_count());
    for l in 0..config.layer_count() {
        let slots = params.layout().layers[l];
        let prev = if l == 0 { &input } else { &layers[l - 1].output };
        let mut z = DenseMatrix::zeros(slots.fan_out, t);
        gemm_nn(slots.fan_out, slots.fan_in, t, params.weight(l), prev.as_slice(), z.as_mut_slice());
        for (i, b) in params.bias(l).iter().enumerate() {
            for v in z.row_mut(i) {
                *v += b;
            }
        }
        let (norm_state, pre_act) = if config.is_normalized(l) {
            let st = norm::standardize(config.norm_kind, &z, config.norm_eps)?;
            let gamma = params.gamma(l).expect("normalized layer has gamma");
            let beta = params.beta(l).expect("normalized layer has beta");
            let mut y = st.xhat.clone();
            for i in 0..slots.fan_out {
                let (g, b) = (gamma[i], beta[i]);
                for v in y.row_mut(i) {
                    *v = g * *v + b;
                }
            }
            (Some(st), y)
        } else {
            (None, z.clone())
        };
        let output = if config.is_activated(l) { pre_act.map(relu) } else { pre_act.clone() };
        layers.push(LayerTrace { pre_norm: z, norm: norm_state, pre_activation: pre_act, output });
    }
    Ok(ForwardTrace { input, layers })
}

/// Network output only.
pub fn predict(params: &NetworkParams, x: &DenseMatrix, config: &NetworkConfig) -> Result<DenseMatrix> {
    let mut trace = forward(params, x, config)?;
    Ok(trace.layers.pop().expect("layers").output)
}
