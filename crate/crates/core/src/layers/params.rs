use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::tasks::{head_layout, TaskKind};
use crate::topm::AuxiliaryVector;
use crate::{Error, Result};

/// How the two aggregation streams are wired across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    /// Fuse both components at every layer; the fused output feeds both.
    Tangnn,
    /// As `Tangnn`, plus a final MLP over every layer's fused output.
    Lc,
    /// Two independent stacks fused only after the last layer.
    Flc,
    /// Neighbor aggregation receives both streams; attention only its own.
    Nai,
    /// Attention receives both streams; neighbor aggregation only its own.
    Tai,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Tangnn,
        VariantKind::Lc,
        VariantKind::Flc,
        VariantKind::Nai,
        VariantKind::Tai,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Tangnn => "tangnn",
            VariantKind::Lc => "lc",
            VariantKind::Flc => "flc",
            VariantKind::Nai => "nai",
            VariantKind::Tai => "tai",
        }
    }

    /// Whether layer `i` (1-based) of an `layers`-deep model owns a fusion
    /// MLP.
    pub fn fuses_at(self, i: usize, layers: usize) -> bool {
        match self {
            VariantKind::Tangnn | VariantKind::Lc => true,
            _ => i == layers,
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let key = key.strip_prefix("tangnn-").unwrap_or(&key);
        Ok(match key {
            "tangnn" => VariantKind::Tangnn,
            "lc" => VariantKind::Lc,
            "flc" => VariantKind::Flc,
            "nai" => VariantKind::Nai,
            "tai" => VariantKind::Tai,
            _ => {
                return Err(Error::Config(format!(
                    "unknown variant '{s}' (expected tangnn, lc, flc, nai or tai)"
                )))
            }
        })
    }
}

/// Role of a tensor, which decides its initialization and whether it is
/// regularized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: (usize, usize),
}

impl ParamSpec {
    pub(crate) fn new(name: impl Into<String>, kind: ParamKind, shape: (usize, usize)) -> Self {
        ParamSpec {
            name: name.into(),
            kind,
            shape,
        }
    }
}

/// Architecture hyperparameters; everything needed to lay out the tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: VariantKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Attention heads; must divide `hidden`.
    pub heads: usize,
    pub task: TaskKind,
    /// Output classes for classification heads; ignored otherwise.
    pub classes: usize,
}

impl ModelConfig {
    pub fn new(variant: VariantKind, input_dim: usize, task: TaskKind, classes: usize) -> Self {
        ModelConfig {
            variant,
            input_dim,
            hidden: 64,
            layers: 2,
            heads: 1,
            task,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Config(
                "input_dim, hidden, layers and heads must be positive".into(),
            ));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide hidden width {}",
                self.heads, self.hidden
            )));
        }
        if self.task == TaskKind::Node && self.classes < 2 {
            return Err(Error::Config("node classification needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Input width of layer `i` (1-based).
    pub fn layer_input(&self, i: usize) -> usize {
        if i == 1 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    /// Tensor layout in declaration order.
    pub fn layout(&self) -> Result<Vec<ParamSpec>> {
        self.validate()?;
        use ParamKind::*;
        let d = self.hidden;
        let mut specs = Vec::new();
        for i in 1..=self.layers {
            let din = self.layer_input(i);
            let p = |s: &str| format!("layer{i}.{s}");
            specs.push(ParamSpec::new(p("neigh.w"), Weight, (2 * din, d)));
            for w in ["attn.wq", "attn.wk", "attn.wv"] {
                specs.push(ParamSpec::new(p(w), Weight, (din, d)));
            }
            specs.push(ParamSpec::new(p("attn.wo"), Weight, (d, d)));
            if din != d {
                specs.push(ParamSpec::new(p("attn.wres"), Weight, (din, d)));
            }
            specs.push(ParamSpec::new(p("attn.ln1.gain"), Gain, (1, d)));
            specs.push(ParamSpec::new(p("attn.ln1.bias"), Bias, (1, d)));
            specs.push(ParamSpec::new(p("attn.ffn.w1"), Weight, (d, 4 * d)));
            specs.push(ParamSpec::new(p("attn.ffn.b1"), Bias, (1, 4 * d)));
            specs.push(ParamSpec::new(p("attn.ffn.w2"), Weight, (4 * d, d)));
            specs.push(ParamSpec::new(p("attn.ffn.b2"), Bias, (1, d)));
            specs.push(ParamSpec::new(p("attn.ln2.gain"), Gain, (1, d)));
            specs.push(ParamSpec::new(p("attn.ln2.bias"), Bias, (1, d)));
            if self.variant.fuses_at(i, self.layers) {
                specs.extend(mlp_layout(&p("fuse"), 2 * d, d, d));
            }
            if i < self.layers && matches!(self.variant, VariantKind::Nai | VariantKind::Tai) {
                specs.push(ParamSpec::new(p("proj.w"), Weight, (2 * d, d)));
            }
        }
        if self.variant == VariantKind::Lc {
            specs.extend(mlp_layout("lc", self.layers * d, d, d));
        }
        specs.extend(head_layout(self.task, d, self.classes));
        Ok(specs)
    }

    /// Width of the Top-m input at layer `i`, which sizes its auxiliary
    /// vector.
    pub fn aux_dim(&self, i: usize) -> usize {
        self.layer_input(i)
    }
}

/// Two-layer perceptron `in → hidden (relu) → out`.
pub(crate) fn mlp_layout(prefix: &str, input: usize, hidden: usize, out: usize) -> Vec<ParamSpec> {
    use ParamKind::*;
    vec![
        ParamSpec::new(format!("{prefix}.w1"), Weight, (input, hidden)),
        ParamSpec::new(format!("{prefix}.b1"), Bias, (1, hidden)),
        ParamSpec::new(format!("{prefix}.w2"), Weight, (hidden, out)),
        ParamSpec::new(format!("{prefix}.b2"), Bias, (1, out)),
    ]
}

/// All trainable tensors of a model plus one auxiliary vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    values: Vec<Array2<f64>>,
    aux: Vec<AuxiliaryVector>,
    ids: HashMap<String, usize>,
}

impl ModelParams {
    /// Assembles parameters, checking every shape against the layout.
    pub fn from_parts(
        config: ModelConfig,
        values: Vec<Array2<f64>>,
        aux: Vec<AuxiliaryVector>,
    ) -> Result<Self> {
        let specs = config.layout()?;
        if values.len() != specs.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                specs.len(),
                values.len()
            )));
        }
        for (s, v) in specs.iter().zip(&values) {
            if v.dim() != s.shape {
                return Err(Error::Shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    v.dim(),
                    s.shape
                )));
            }
        }
        if aux.len() != config.layers
            || aux.iter().enumerate().any(|(i, a)| a.dim() != config.aux_dim(i + 1))
        {
            return Err(Error::Shape("auxiliary vectors do not match the layer widths".into()));
        }
        let ids = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(ModelParams {
            config,
            specs,
            values,
            aux,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn aux(&self) -> &[AuxiliaryVector] {
        &self.aux
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.id(name).map(|i| &mut self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }

    /// Records every tensor as a constant, for inference.
    pub fn bind_constants(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.values.iter().map(|v| tape.constant(v.clone())).collect()
    }

    pub(crate) fn variant_code(&self) -> u8 {
        self.config.variant.code()
    }
}

/// Name-based access to tensors bound on a tape.
#[derive(Clone, Copy)]
pub struct Bound<'a> {
    params: &'a ModelParams,
    vars: &'a [Var],
}

impl<'a> Bound<'a> {
    pub fn new(params: &'a ModelParams, vars: &'a [Var]) -> Result<Self> {
        if vars.len() != params.values.len() {
            return Err(Error::Shape(format!(
                "{} bound variables for {} tensors",
                vars.len(),
                params.values.len()
            )));
        }
        Ok(Bound { params, vars })
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .id(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::State(format!("model has no tensor '{name}'")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.id(name).is_some()
    }

    /// Weight tensors, the ones subject to L2 regularization.
    pub fn weights(&self) -> impl Iterator<Item = Var> + 'a {
        let vars = self.vars;
        self.params
            .specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == ParamKind::Weight)
            .map(move |(i, _)| vars[i])
    }
}
