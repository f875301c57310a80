use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffkernel::{Array, Scalar};
use crate::kg::{RelationId, RelationSpace};

use super::ModelError;

/// Std of the normal init for relation embeddings.
const RELATION_STD: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
        }
    }
}

impl FromStr for Activation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "id" | "none" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(ModelError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

/// Which attention/readout form the encoder uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Attention conditioned on the query relation; score `wᵀh`.
    Full,
    /// Attention without the query relation; score `wᵀ(h ⊕ h_rq)`.
    AttnWithoutQuery,
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "attn-wo-rq" | "attn-without-query" => Ok(Variant::AttnWithoutQuery),
            other => Err(ModelError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::AttnWithoutQuery => "attn-wo-rq",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub attn_dim: usize,
    pub depth: usize,
    pub activation: Activation,
    pub variant: Variant,
    /// Edge-message dropout rate, used only in training mode.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 48,
            attn_dim: 5,
            depth: 3,
            activation: Activation::Tanh,
            variant: Variant::Full,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 1 {
            return Err(ModelError::Config("depth must be at least 1".into()));
        }
        if self.dim == 0 || self.attn_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Rows of the attention input matrix: source state, edge relation and,
    /// for the full variant, the query relation.
    pub fn attn_inputs(&self) -> usize {
        match self.variant {
            Variant::Full => 3 * self.dim,
            Variant::AttnWithoutQuery => 2 * self.dim,
        }
    }

    pub fn readout_dim(&self) -> usize {
        match self.variant {
            Variant::Full => self.dim,
            Variant::AttnWithoutQuery => 2 * self.dim,
        }
    }
}

/// Learnable arrays of one layer. Matrices are stored for right
/// multiplication by row vectors: `h · weight`, `[h_s | h_r | h_rq] · attn_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    /// `d × d`.
    pub weight: Array<T>,
    /// `3d × d_α` (or `2d × d_α` without the query relation).
    pub attn_in: Array<T>,
    /// `d_α × 1`.
    pub attn_out: Array<T>,
    /// `(2|R|+1) × d`; query relations index the same table.
    pub relations: Array<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    pub config: ModelConfig,
    pub relation_space: RelationSpace,
    pub layers: Vec<LayerParams<T>>,
    /// `d × 1` (or `2d × 1`).
    pub readout: Array<T>,
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array::from_fn(rows, cols, |_, _| T::from_f64(rng.gen_range(-bound..=bound)))
}

impl<T: Scalar> ParameterSet<T> {
    pub fn init(config: ModelConfig, relation_space: RelationSpace, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, da) = (config.dim, config.attn_dim);
        let nrel = relation_space.num_augmented();
        let layers = (0..config.depth)
            .map(|_| {
                let weight = xavier(&mut rng, d, d, d, d);
                let attn_in = xavier(&mut rng, config.attn_inputs(), da, config.attn_inputs(), da);
                let attn_out = xavier(&mut rng, da, 1, da, 1);
                let relations =
                    Array::from_fn(nrel, d, |_, _| T::from_f64(RELATION_STD * rng.sample::<f64, _>(StandardNormal)));
                LayerParams {
                    weight,
                    attn_in,
                    attn_out,
                    relations,
                }
            })
            .collect();
        Ok(Self {
            config,
            relation_space,
            layers,
            readout: Array::zeros(config.readout_dim(), 1),
        })
    }

    /// Named arrays in a fixed order; the order is the optimizer slot order
    /// and the checkpoint order.
    pub fn named_arrays(&self) -> Vec<(String, &Array<T>)> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 1);
        for (l, p) in self.layers.iter().enumerate() {
            let l = l + 1;
            out.push((format!("layer{l}.weight"), &p.weight));
            out.push((format!("layer{l}.attn_in"), &p.attn_in));
            out.push((format!("layer{l}.attn_out"), &p.attn_out));
            out.push((format!("layer{l}.relations"), &p.relations));
        }
        out.push(("readout".to_string(), &self.readout));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array<T>> {
        let mut out = Vec::with_capacity(4 * self.layers.len() + 1);
        for p in &mut self.layers {
            out.push(&mut p.weight);
            out.push(&mut p.attn_in);
            out.push(&mut p.attn_out);
            out.push(&mut p.relations);
        }
        out.push(&mut self.readout);
        out
    }

    pub fn num_values(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    /// Shapes implied by the config, in [`named_arrays`](Self::named_arrays) order.
    pub fn expected_shapes(config: &ModelConfig, relation_space: RelationSpace) -> Vec<(usize, usize)> {
        let d = config.dim;
        let mut out = Vec::new();
        for _ in 0..config.depth {
            out.push((d, d));
            out.push((config.attn_inputs(), config.attn_dim));
            out.push((config.attn_dim, 1));
            out.push((relation_space.num_augmented(), d));
        }
        out.push((config.readout_dim(), 1));
        out
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let want = Self::expected_shapes(&self.config, self.relation_space);
        let have = self.named_arrays();
        if want.len() != have.len() {
            return Err(ModelError::Shape(format!(
                "expected {} arrays, found {}",
                want.len(),
                have.len()
            )));
        }
        for (w, (name, a)) in want.iter().zip(&have) {
            if a.shape() != *w {
                return Err(ModelError::Shape(format!(
                    "{name}: expected {w:?}, found {:?}",
                    a.shape()
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds a set of the same layout from arrays in `named_arrays` order.
    pub fn from_arrays(
        config: ModelConfig,
        relation_space: RelationSpace,
        arrays: Vec<Array<T>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut it = arrays.into_iter();
        let mut layers = Vec::with_capacity(config.depth);
        let missing = || ModelError::Shape("too few arrays".into());
        for _ in 0..config.depth {
            layers.push(LayerParams {
                weight: it.next().ok_or_else(missing)?,
                attn_in: it.next().ok_or_else(missing)?,
                attn_out: it.next().ok_or_else(missing)?,
                relations: it.next().ok_or_else(missing)?,
            });
        }
        let readout = it.next().ok_or_else(missing)?;
        if it.next().is_some() {
            return Err(ModelError::Shape("too many arrays".into()));
        }
        let set = Self {
            config,
            relation_space,
            layers,
            readout,
        };
        set.check_shapes()?;
        Ok(set)
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            config: self.config,
            relation_space: self.relation_space,
            layers: self
                .layers
                .iter()
                .map(|p| LayerParams {
                    weight: p.weight.cast(),
                    attn_in: p.attn_in.cast(),
                    attn_out: p.attn_out.cast(),
                    relations: p.relations.cast(),
                })
                .collect(),
            readout: self.readout.cast(),
        }
    }

    /// Attention weight of one edge at `layer` (1-based), evaluated directly
    /// from the arrays.
    pub fn attention(&self, layer: usize, h_src: &[T], rel: RelationId, query_rel: RelationId) -> T {
        assert!((1..=self.layers.len()).contains(&layer), "layer {layer} out of range");
        let p = &self.layers[layer - 1];
        let d = self.config.dim;
        let mut input: Vec<T> = Vec::with_capacity(3 * d);
        input.extend_from_slice(h_src);
        input.extend_from_slice(p.relations.row(rel as usize));
        if self.config.variant == Variant::Full {
            input.extend_from_slice(p.relations.row(query_rel as usize));
        }
        let mut logit = T::zero();
        for k in 0..self.config.attn_dim {
            let mut z = T::zero();
            for (i, &x) in input.iter().enumerate() {
                z = z + x * p.attn_in.get(i, k);
            }
            logit = logit + z.max(T::zero()) * p.attn_out.get(k, 0);
        }
        T::one() / (T::one() + (-logit).exp())
    }
}
