//! Central finite-difference gradient checks against the tape.
//!
//! The loss is `Σ out ⊙ R` for a fixed random `R`; analytic gradients come from
//! one backward pass, numeric ones from re-running the forward at `x ± h` and
//! reducing in f64. Errors are norm-wise over the probed coordinates.

#![allow(dead_code)]

use edgenas_core::autograd::{Tape, Var};
use edgenas_core::dit::{block_forward, BlockSpec, BlockVars, BlockWeights, LinearVars};
use edgenas_core::rng;
use edgenas_core::{Result, Tensor};

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Box<Build>,
    /// Probe at most this many coordinates per input.
    pub probes: usize,
    pub h: f32,
}

impl Case {
    pub fn new(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            name: name.into(),
            inputs,
            build: Box::new(build),
            probes: 64,
            h: 1e-2,
        }
    }
}

fn weighted_output(case: &Case, inputs: &[Tensor], r: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).expect("forward");
    let v = tape.value(out).expect("value");
    v.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Worst norm-wise relative error over the inputs of `case`.
pub fn max_rel_error(case: &Case, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).expect("forward");
    let shape = tape.shape(out).unwrap().to_vec();
    let mut r = rng::stream(seed, &format!("gradcheck/{}", case.name));
    let weights = Tensor::randn(&shape, 1.0, &mut r);
    let wv = tape.constant(weights.clone());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, x) in case.inputs.iter().enumerate() {
        let g = grads.wrt(vars[i]).unwrap();
        let n = x.numel();
        let probes = case.probes.min(n);
        // spread probes over the tensor with a stride coprime to most sizes
        let idx: Vec<usize> = (0..probes).map(|k| (k * 7919 + i * 31) % n).collect();
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for &j in &idx {
            let mut plus = case.inputs.clone();
            let mut minus = case.inputs.clone();
            plus[i].data_mut()[j] += case.h;
            minus[i].data_mut()[j] -= case.h;
            let step = (plus[i].data()[j] as f64) - (minus[i].data()[j] as f64);
            let fd = (weighted_output(case, &plus, &weights) - weighted_output(case, &minus, &weights)) / step;
            let an = g.data()[j] as f64;
            diff += (an - fd).powi(2);
            na += an * an;
            nn += fd * fd;
        }
        let denom = na.sqrt().max(nn.sqrt()).max(1e-8);
        worst = worst.max(diff.sqrt() / denom);
    }
    worst
}

fn randn(shape: &[usize], std: f32, name: &str) -> Tensor {
    let mut r = rng::stream(11, name);
    Tensor::randn(shape, std, &mut r)
}

/// One case per differentiable tape op.
pub fn op_cases() -> Vec<Case> {
    let mut v = vec![
        Case::new("matmul", vec![randn(&[7, 5], 1.0, "a"), randn(&[5, 3], 1.0, "b")], |t, x| {
            t.matmul(x[0], x[1])
        }),
        Case::new(
            "linear",
            vec![randn(&[2, 3, 5], 1.0, "x"), randn(&[5, 4], 1.0, "w"), randn(&[4], 1.0, "b")],
            |t, x| t.linear(x[0], x[1], Some(x[2])),
        ),
        Case::new(
            "batch_matmul",
            vec![randn(&[2, 3, 4], 1.0, "a"), randn(&[2, 4, 5], 1.0, "b")],
            |t, x| t.batch_matmul(x[0], x[1], false),
        ),
        Case::new(
            "batch_matmul_t",
            vec![randn(&[2, 3, 4], 1.0, "a"), randn(&[2, 5, 4], 1.0, "b")],
            |t, x| t.batch_matmul(x[0], x[1], true),
        ),
        Case::new("add", vec![randn(&[3, 4], 1.0, "a"), randn(&[3, 4], 1.0, "b")], |t, x| {
            t.add(x[0], x[1])
        }),
        Case::new("sub", vec![randn(&[3, 4], 1.0, "a"), randn(&[3, 4], 1.0, "b")], |t, x| {
            t.sub(x[0], x[1])
        }),
        Case::new("mul", vec![randn(&[3, 4], 1.0, "a"), randn(&[3, 4], 1.0, "b")], |t, x| {
            t.mul(x[0], x[1])
        }),
        Case::new("scale", vec![randn(&[3, 4], 1.0, "a")], |t, x| t.scale(x[0], -1.7)),
        Case::new("gelu", vec![randn(&[64], 1.5, "g")], |t, x| t.gelu(x[0])),
        Case::new("silu", vec![randn(&[64], 1.5, "s")], |t, x| t.silu(x[0])),
        Case::new("layernorm", vec![randn(&[3, 8], 1.0, "ln")], |t, x| t.layernorm(x[0])),
        Case::new("softmax", vec![randn(&[3, 6], 1.0, "sm")], |t, x| t.softmax(x[0])),
        Case::new("expand", vec![randn(&[2, 5], 1.0, "e")], |t, x| t.expand(x[0], 3)),
        Case::new(
            "modulate",
            vec![
                randn(&[2, 3, 4], 1.0, "x"),
                randn(&[2, 4], 1.0, "sh"),
                randn(&[2, 4], 1.0, "sc"),
            ],
            |t, x| t.modulate(x[0], x[1], x[2]),
        ),
        Case::new(
            "scale_tokens",
            vec![randn(&[2, 3, 4], 1.0, "x"), randn(&[2, 4], 1.0, "g")],
            |t, x| t.scale_tokens(x[0], x[1]),
        ),
        Case::new("narrow", vec![randn(&[2, 6, 3], 1.0, "n")], |t, x| t.narrow(x[0], 1, 2, 3)),
        Case::new("reshape", vec![randn(&[2, 6], 1.0, "r")], |t, x| t.reshape(x[0], &[3, 4])),
        Case::new("permute", vec![randn(&[2, 3, 4], 1.0, "p")], |t, x| {
            t.permute(x[0], &[2, 0, 1])
        }),
        Case::new("embedding", vec![randn(&[5, 3], 1.0, "emb")], |t, x| {
            t.embedding(x[0], &[4, 0, 4, 2])
        }),
        Case::new("mse", vec![randn(&[3, 4], 1.0, "p"), randn(&[3, 4], 1.0, "q")], |t, x| {
            t.mse(x[0], x[1])
        }),
        Case::new("sum", vec![randn(&[3, 4], 1.0, "s")], |t, x| t.sum(x[0])),
        Case::new("mean", vec![randn(&[3, 4], 1.0, "m")], |t, x| t.mean(x[0])),
    ];
    // a composite chain exercising gradient accumulation through shared operands
    v.push(Case::new("shared_operand", vec![randn(&[4, 4], 0.7, "sh")], |t, x| {
        let a = t.matmul(x[0], x[0])?;
        let b = t.gelu(a)?;
        t.mul(b, x[0])
    }));
    v
}

/// A toy-width block with every gate open, as a function of its inputs and all its weights.
pub fn block_case(spec: BlockSpec) -> Case {
    let width = 64;
    let heads = 4;
    let mut r = rng::stream(3, "gradcheck/block");
    let mut w = BlockWeights::init(spec, width, &mut r);
    for (_, t) in w.params_mut("b") {
        let n = Tensor::randn(t.shape(), 0.05, &mut r);
        for (a, b) in t.data_mut().iter_mut().zip(n.data()) {
            *a += b;
        }
    }
    let mut inputs = vec![
        Tensor::randn(&[2, 16, width], 1.0, &mut r),
        Tensor::randn(&[2, width], 1.0, &mut r),
    ];
    inputs.extend(w.params("b").into_iter().map(|(_, t)| t.clone()));
    let mut c = Case::new(
        &format!("block_r{}_d{}", spec.mlp_ratio, spec.inner_dim),
        inputs,
        move |t, x| {
            let lin = |i: usize| LinearVars {
                w: x[2 + 2 * i],
                b: x[3 + 2 * i],
            };
            let vars = BlockVars {
                spec,
                ada: lin(0),
                qkv: lin(1),
                proj: lin(2),
                fc1: lin(3),
                fc2: lin(4),
            };
            block_forward(t, &vars, heads, x[0], x[1])
        },
    );
    c.probes = 20;
    c.h = 1e-2;
    c
}
