use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::tensor::Tensor;

use super::model::pos_embed_2d;
use super::spec::{BlockSpec, DiTSpec};

const INIT_STD: f32 = 0.02;

/// Dense layer stored as `weight[in, out]` and `bias[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut StreamRng) -> Self {
        Self {
            weight: Tensor::trunc_normal(&[fan_in, fan_out], INIT_STD, rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn numel(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        let put = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LinearVars {
            w: put(tape, &self.weight),
            b: put(tape, &self.bias),
        }
    }

    fn push_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    fn push_ref<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, Some(self.b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    pub spec: BlockSpec,
    /// Conditioning → (shift, scale, gate) for attention then MLP, `[d, 6d]`.
    pub ada: Linear,
    pub qkv: Linear,
    pub proj: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl BlockWeights {
    /// Truncated-normal weights, zero biases, zeroed gate columns.
    pub fn init(spec: BlockSpec, width: usize, rng: &mut StreamRng) -> Self {
        let d = width;
        let di = spec.inner_dim;
        let hidden = spec.mlp_ratio * d;
        let mut ada = Linear::init(d, 6 * d, rng);
        {
            let w = ada.weight.data_mut();
            for row in w.chunks_exact_mut(6 * d) {
                row[2 * d..3 * d].fill(0.0);
                row[5 * d..6 * d].fill(0.0);
            }
        }
        Self {
            spec,
            ada,
            qkv: Linear::init(d, 3 * di, rng),
            proj: Linear::init(di, d, rng),
            fc1: Linear::init(d, hidden, rng),
            fc2: Linear::init(hidden, d, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.ada.in_dim()
    }

    pub fn numel(&self) -> usize {
        [&self.ada, &self.qkv, &self.proj, &self.fc1, &self.fc2]
            .iter()
            .map(|l| l.numel())
            .sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BlockVars {
        BlockVars {
            spec: self.spec,
            ada: self.ada.bind(tape, trainable),
            qkv: self.qkv.bind(tape, trainable),
            proj: self.proj.bind(tape, trainable),
            fc1: self.fc1.bind(tape, trainable),
            fc2: self.fc2.bind(tape, trainable),
        }
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(10);
        self.ada.push_mut(&format!("{prefix}.ada"), &mut out);
        self.qkv.push_mut(&format!("{prefix}.qkv"), &mut out);
        self.proj.push_mut(&format!("{prefix}.proj"), &mut out);
        self.fc1.push_mut(&format!("{prefix}.fc1"), &mut out);
        self.fc2.push_mut(&format!("{prefix}.fc2"), &mut out);
        out
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(10);
        self.ada.push_ref(&format!("{prefix}.ada"), &mut out);
        self.qkv.push_ref(&format!("{prefix}.qkv"), &mut out);
        self.proj.push_ref(&format!("{prefix}.proj"), &mut out);
        self.fc1.push_ref(&format!("{prefix}.fc1"), &mut out);
        self.fc2.push_ref(&format!("{prefix}.fc2"), &mut out);
        out
    }

    /// Rebuilds a block from `(name, tensor)` pairs as written by [`Self::params`].
    pub fn from_named(spec: BlockSpec, width: usize, prefix: &str, lookup: &dyn Fn(&str) -> Option<Tensor>) -> Result<Self> {
        let get = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let full = format!("{prefix}.{name}");
            let t = lookup(&full).ok_or_else(|| Error::Parse(format!("missing tensor `{full}`")))?;
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    lhs: t.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Ok(t)
        };
        let lin = |name: &str, i: usize, o: usize| -> Result<Linear> {
            Ok(Linear {
                weight: get(&format!("{name}.weight"), &[i, o])?,
                bias: get(&format!("{name}.bias"), &[o])?,
            })
        };
        let d = width;
        let di = spec.inner_dim;
        let h = spec.mlp_ratio * d;
        Ok(Self {
            spec,
            ada: lin("ada", d, 6 * d)?,
            qkv: lin("qkv", d, 3 * di)?,
            proj: lin("proj", di, d)?,
            fc1: lin("fc1", d, h)?,
            fc2: lin("fc2", h, d)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub spec: BlockSpec,
    pub ada: LinearVars,
    pub qkv: LinearVars,
    pub proj: LinearVars,
    pub fc1: LinearVars,
    pub fc2: LinearVars,
}

impl BlockVars {
    /// Same order as [`BlockWeights::params_mut`].
    pub fn params(&self) -> Vec<Var> {
        [self.ada, self.qkv, self.proj, self.fc1, self.fc2]
            .iter()
            .flat_map(|l| [l.w, l.b])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub spec: DiTSpec,
    pub patch_embed: Linear,
    /// Fixed 2-D sin-cos table `[N, d]`; stored and counted but never trained.
    pub pos_embed: Tensor,
    pub t_fc1: Linear,
    pub t_fc2: Linear,
    /// `num_classes + 1` rows; the last row is the null class used for guidance.
    pub class_embed: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub final_ada: Linear,
    pub final_linear: Linear,
}

/// Initializes a model for `spec` from the `dit/build` stream of `seed`.
pub fn build(spec: &DiTSpec, seed: u64) -> Result<ModelWeights> {
    spec.validate_teacher()?;
    let mut rng = rng::stream(seed, "dit/build");
    Ok(ModelWeights::init(spec, &mut rng))
}

impl ModelWeights {
    /// Initializes any structurally valid spec (odd depth allowed).
    pub fn init(spec: &DiTSpec, rng: &mut StreamRng) -> Self {
        let d = spec.width;
        let (gh, gw) = spec.grid();
        let patch_embed = Linear::init(spec.patch_dim(), d, rng);
        let t_fc1 = Linear::init(spec.freq_dim, d, rng);
        let t_fc2 = Linear::init(d, d, rng);
        let class_embed = Tensor::trunc_normal(&[spec.num_classes + 1, d], INIT_STD, rng);
        let blocks = spec.blocks.iter().map(|&b| BlockWeights::init(b, d, rng)).collect();
        let final_ada = Linear::init(d, 2 * d, rng);
        // zero head: a fresh model predicts exactly zero
        let final_linear = Linear::zeros(d, spec.patch * spec.patch * spec.out_channels());
        Self {
            spec: spec.clone(),
            patch_embed,
            pos_embed: pos_embed_2d(d, gh, gw),
            t_fc1,
            t_fc2,
            class_embed,
            blocks,
            final_ada,
            final_linear,
        }
    }

    /// Every stored scalar, including the frozen positional table.
    pub fn num_scalars(&self) -> usize {
        self.pos_embed.numel() + self.num_trainable()
    }

    pub fn num_trainable(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable tensors in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.patch_embed.push_ref("patch_embed", &mut out);
        self.t_fc1.push_ref("t_embed.fc1", &mut out);
        self.t_fc2.push_ref("t_embed.fc2", &mut out);
        out.push(("class_embed".to_string(), &self.class_embed));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.params(&format!("blocks.{i}")));
        }
        self.final_ada.push_ref("final.ada", &mut out);
        self.final_linear.push_ref("final.linear", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.patch_embed.push_mut("patch_embed", &mut out);
        self.t_fc1.push_mut("t_embed.fc1", &mut out);
        self.t_fc2.push_mut("t_embed.fc2", &mut out);
        out.push(("class_embed".to_string(), &mut self.class_embed));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.params_mut(&format!("blocks.{i}")));
        }
        self.final_ada.push_mut("final.ada", &mut out);
        self.final_linear.push_mut("final.linear", &mut out);
        out
    }

    /// All stored tensors, for persistence.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("pos_embed".to_string(), &self.pos_embed)];
        out.extend(self.params());
        out
    }

    /// Inverse of [`Self::named_tensors`] given the spec.
    pub fn from_named(spec: &DiTSpec, lookup: &dyn Fn(&str) -> Option<Tensor>) -> Result<Self> {
        spec.validate()?;
        let d = spec.width;
        let get = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = lookup(name).ok_or_else(|| Error::Parse(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    lhs: t.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            Ok(t)
        };
        let lin = |name: &str, i: usize, o: usize| -> Result<Linear> {
            Ok(Linear {
                weight: get(&format!("{name}.weight"), &[i, o])?,
                bias: get(&format!("{name}.bias"), &[o])?,
            })
        };
        let blocks = spec
            .blocks
            .iter()
            .enumerate()
            .map(|(i, &b)| BlockWeights::from_named(b, d, &format!("blocks.{i}"), lookup))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            patch_embed: lin("patch_embed", spec.patch_dim(), d)?,
            pos_embed: get("pos_embed", &[spec.tokens(), d])?,
            t_fc1: lin("t_embed.fc1", spec.freq_dim, d)?,
            t_fc2: lin("t_embed.fc2", d, d)?,
            class_embed: get("class_embed", &[spec.num_classes + 1, d])?,
            blocks,
            final_ada: lin("final.ada", d, 2 * d)?,
            final_linear: lin("final.linear", d, spec.patch * spec.patch * spec.out_channels())?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let patch_embed = self.patch_embed.bind(tape, trainable);
        let t_fc1 = self.t_fc1.bind(tape, trainable);
        let t_fc2 = self.t_fc2.bind(tape, trainable);
        let class_embed = if trainable {
            tape.param(self.class_embed.clone())
        } else {
            tape.constant(self.class_embed.clone())
        };
        let blocks = self.blocks.iter().map(|b| b.bind(tape, trainable)).collect();
        let final_ada = self.final_ada.bind(tape, trainable);
        let final_linear = self.final_linear.bind(tape, trainable);
        ModelVars {
            patch_embed,
            t_fc1,
            t_fc2,
            class_embed,
            blocks,
            final_ada,
            final_linear,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub patch_embed: LinearVars,
    pub t_fc1: LinearVars,
    pub t_fc2: LinearVars,
    pub class_embed: Var,
    pub blocks: Vec<BlockVars>,
    pub final_ada: LinearVars,
    pub final_linear: LinearVars,
}

impl ModelVars {
    /// Same order as [`ModelWeights::params_mut`].
    pub fn params(&self) -> Vec<Var> {
        let mut out = vec![
            self.patch_embed.w,
            self.patch_embed.b,
            self.t_fc1.w,
            self.t_fc1.b,
            self.t_fc2.w,
            self.t_fc2.b,
            self.class_embed,
        ];
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend([self.final_ada.w, self.final_ada.b, self.final_linear.w, self.final_linear.b]);
        out
    }
}
