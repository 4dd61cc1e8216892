//! Encoder `f`, contrastive head `g`, preference head `h` and the probe head.
//!
//! Parameters live in a [`ParamStore`] under group-prefixed names (`f.0.w`,
//! `g.b`, `h.w`, `probe.1.w`, ...). The group prefix selects the learning
//! rate in [`OptimState`](crate::numcore::OptimState).

use std::fmt;
use std::str::FromStr;

use crate::numcore::{Graph, NumError, ParamStore, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub const ENCODER: &str = "f";
pub const PROJECTION: &str = "g";
pub const PREFERENCE: &str = "h";
pub const PROBE: &str = "probe";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HeadActivation {
    #[default]
    None,
    Tanh,
}

impl FromStr for HeadActivation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "tanh" => Ok(Self::Tanh),
            other => Err(format!("expected none|tanh, got {other}")),
        }
    }
}

impl fmt::Display for HeadActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_dim: usize,
    pub head_activation: HeadActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: vec![64, 64],
            feature_dim: 64,
            proj_dim: 16,
            head_activation: HeadActivation::None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.proj_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "input, feature and projection dims must be positive".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig("hidden dims must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every encoder layer.
    pub fn encoder_layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.feature_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Glorot-uniform weight matrix `fan_in × fan_out`.
pub fn glorot_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-bound, bound) as f32)
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches length")
}

fn dense(params: &mut ParamStore, rng: &mut Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    params.insert(format!("{prefix}.w"), glorot_uniform(rng, fan_in, fan_out));
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
}

/// Registers `x·W + b` on the graph, pulling `W` and `b` from `params`.
fn linear(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<Var, NumError> {
    let w = g.param(format!("{prefix}.w"), params.require(&format!("{prefix}.w"))?)?;
    let b = g.param(format!("{prefix}.b"), params.require(&format!("{prefix}.b"))?)?;
    let xw = g.matmul(x, w)?;
    g.bias_add(xw, b)
}

/// Encoder and both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Network {
    /// Draws `f`, `g`, `h` in that order from one stream seeded by `seed`.
    pub fn init(seed: u64, config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (i, (fan_in, fan_out)) in config.encoder_layers().into_iter().enumerate() {
            dense(&mut params, &mut rng, &format!("{ENCODER}.{i}"), fan_in, fan_out);
        }
        dense(&mut params, &mut rng, PROJECTION, config.feature_dim, config.proj_dim);
        dense(&mut params, &mut rng, PREFERENCE, config.proj_dim, config.proj_dim);
        Ok(Self { config, params })
    }

    /// Checks that every tensor the forward passes need is present with the right shape.
    pub fn validate_params(&self) -> Result<(), ModelError> {
        let expect = |name: String, shape: Vec<usize>| -> Result<(), ModelError> {
            let t = self.params.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(())
        };
        for (i, (a, b)) in self.config.encoder_layers().into_iter().enumerate() {
            expect(format!("{ENCODER}.{i}.w"), vec![a, b])?;
            expect(format!("{ENCODER}.{i}.b"), vec![b])?;
        }
        let (z, c) = (self.config.feature_dim, self.config.proj_dim);
        expect(format!("{PROJECTION}.w"), vec![z, c])?;
        expect(format!("{PROJECTION}.b"), vec![c])?;
        expect(format!("{PREFERENCE}.w"), vec![c, c])?;
        expect(format!("{PREFERENCE}.b"), vec![c])?;
        Ok(())
    }

    fn check_width(&self, g: &Graph, x: Var, want: usize) -> Result<(), ModelError> {
        let (_, w) = g.value(x).dims2()?;
        if w != want {
            return Err(NumError::ShapeMismatch(format!("input width {w}, expected {want}")).into());
        }
        Ok(())
    }

    /// `z = f(x)`: tanh after every layer, including the last.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var, ModelError> {
        self.check_width(g, x, self.config.input_dim)?;
        let mut h = x;
        for i in 0..self.config.encoder_layers().len() {
            let pre = linear(g, &self.params, &format!("{ENCODER}.{i}"), h)?;
            h = g.tanh(pre)?;
        }
        Ok(h)
    }

    fn head(&self, g: &mut Graph, prefix: &str, x: Var) -> Result<Var, ModelError> {
        let y = linear(g, &self.params, prefix, x)?;
        Ok(match self.config.head_activation {
            HeadActivation::None => y,
            HeadActivation::Tanh => g.tanh(y)?,
        })
    }

    /// `c = g(z)`.
    pub fn project(&self, g: &mut Graph, z: Var) -> Result<Var, ModelError> {
        self.check_width(g, z, self.config.feature_dim)?;
        self.head(g, PROJECTION, z)
    }

    /// `ν = h(c)`.
    pub fn prefer(&self, g: &mut Graph, c: Var) -> Result<Var, ModelError> {
        self.check_width(g, c, self.config.proj_dim)?;
        self.head(g, PREFERENCE, c)
    }

    pub fn encoder_forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone())?;
        let z = self.encode(&mut g, x)?;
        Ok(g.value(z).clone())
    }

    pub fn projection_forward(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let z = g.constant(z.clone())?;
        let c = self.project(&mut g, z)?;
        Ok(g.value(c).clone())
    }

    pub fn preference_forward(&self, c: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let c = g.constant(c.clone())?;
        let v = self.prefer(&mut g, c)?;
        Ok(g.value(v).clone())
    }

    /// `(g∘f)(x)` and `(h∘g∘f)(x)` in one pass.
    pub fn embed_heads(&self, batch: &Tensor) -> Result<(Tensor, Tensor), ModelError> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone())?;
        let z = self.encode(&mut g, x)?;
        let c = self.project(&mut g, z)?;
        let v = self.prefer(&mut g, c)?;
        Ok((g.value(c).clone(), g.value(v).clone()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeKind {
    Linear,
    Mlp { hidden: usize, dropout: f32 },
}

/// Inverted-dropout mask: each entry is `1/(1−rate)` with probability `1−rate`, else 0.
pub fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, rate: f32) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.next_f64() < f64::from(keep) { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches length")
}

/// Classifier trained on frozen encoder features.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub kind: ProbeKind,
    pub in_dim: usize,
    pub classes: usize,
    pub params: ParamStore,
}

impl Probe {
    pub fn init(seed: u64, kind: ProbeKind, in_dim: usize, classes: usize) -> Result<Self, ModelError> {
        if in_dim == 0 || classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "probe needs in_dim > 0 and at least 2 classes, got {in_dim} and {classes}"
            )));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        match kind {
            ProbeKind::Linear => dense(&mut params, &mut rng, &format!("{PROBE}.0"), in_dim, classes),
            ProbeKind::Mlp { hidden, dropout } => {
                if hidden == 0 {
                    return Err(ModelError::InvalidConfig("probe hidden dim must be positive".into()));
                }
                if !(0.0..1.0).contains(&dropout) {
                    return Err(ModelError::InvalidConfig(format!(
                        "dropout rate must be in [0, 1), got {dropout}"
                    )));
                }
                dense(&mut params, &mut rng, &format!("{PROBE}.0"), in_dim, hidden);
                dense(&mut params, &mut rng, &format!("{PROBE}.1"), hidden, classes);
            }
        }
        Ok(Self {
            kind,
            in_dim,
            classes,
            params,
        })
    }

    /// Logits for `z`. In training mode the MLP variant applies inverted dropout
    /// to its hidden layer with masks drawn from `rng`.
    pub fn forward(
        &self,
        g: &mut Graph,
        z: Var,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var, ModelError> {
        let (rows, w) = g.value(z).dims2()?;
        if w != self.in_dim {
            return Err(NumError::ShapeMismatch(format!("probe input width {w}, expected {}", self.in_dim)).into());
        }
        match self.kind {
            ProbeKind::Linear => Ok(linear(g, &self.params, &format!("{PROBE}.0"), z)?),
            ProbeKind::Mlp { hidden, dropout } => {
                let pre = linear(g, &self.params, &format!("{PROBE}.0"), z)?;
                let mut h = g.relu(pre)?;
                if training && dropout > 0.0 {
                    h = g.dropout(h, dropout_mask(rng, rows, hidden, dropout))?;
                }
                Ok(linear(g, &self.params, &format!("{PROBE}.1"), h)?)
            }
        }
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let x = g.constant(z.clone())?;
        let mut unused = Rng::seed_from_u64(0);
        let out = self.forward(&mut g, x, false, &mut unused)?;
        Ok(g.value(out).clone())
    }

    /// Arg-max class per row; ties resolve to the lowest class index.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<usize>, ModelError> {
        let logits = self.logits(z)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }
}
