use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{permute_data, Tensor};

use super::spec::DiTSpec;
use super::weights::{BlockVars, LinearVars, ModelVars, ModelWeights};

const MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal timestep features `[B, dim]`: cosines in the first half, sines in the second.
pub fn timestep_frequencies(t: &[usize], dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) || t.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "timestep feature dim {dim} must be even and positive"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let args: Vec<f64> = (0..half)
            .map(|i| ti as f64 * (-MAX_PERIOD.ln() * i as f64 / half as f64).exp())
            .collect();
        out.extend(args.iter().map(|a| a.cos() as f32));
        out.extend(args.iter().map(|a| a.sin() as f32));
    }
    Tensor::new(&[t.len(), dim], out)
}

fn check_image(op: &'static str, shape: &[usize], p: usize) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 || p == 0 || !shape[2].is_multiple_of(p) || !shape[3].is_multiple_of(p) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![p, p],
        });
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

/// `[B,C,H,W] -> [B, N, p·p·C]`, tokens in row-major grid order, features ordered `(pi, pj, c)`.
pub fn patchify(z: &Tensor, p: usize) -> Result<Tensor> {
    let (b, c, h, w) = check_image("patchify", z.shape(), p)?;
    let (gh, gw) = (h / p, w / p);
    let (_, data) = permute_data(&[b, c, gh, p, gw, p], z.data(), &[0, 2, 4, 3, 5, 1]);
    Tensor::new(&[b, gh * gw, p * p * c], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, p: usize, channels: usize, height: usize, width: usize) -> Result<Tensor> {
    check_image("unpatchify", &[1, channels, height, width], p)?;
    let (gh, gw) = (height / p, width / p);
    let s = tokens.shape();
    if s.len() != 3 || s[1] != gh * gw || s[2] != p * p * channels {
        return Err(Error::ShapeMismatch {
            op: "unpatchify",
            lhs: s.to_vec(),
            rhs: vec![gh * gw, p * p * channels],
        });
    }
    let b = s[0];
    let (_, data) = permute_data(&[b, gh, gw, p, p, channels], tokens.data(), &[0, 5, 1, 3, 2, 4]);
    Tensor::new(&[b, channels, height, width], data)
}

fn sincos_1d(dim: usize, pos: f64, out: &mut Vec<f32>) {
    let half = dim / 2;
    let omegas: Vec<f64> = (0..half).map(|i| 1.0 / MAX_PERIOD.powf(i as f64 / half as f64)).collect();
    out.extend(omegas.iter().map(|o| (pos * o).sin() as f32));
    out.extend(omegas.iter().map(|o| (pos * o).cos() as f32));
}

/// Fixed 2-D sin-cos table `[gh·gw, d]`; half the width encodes the row, half the column.
pub fn pos_embed_2d(d: usize, gh: usize, gw: usize) -> Tensor {
    assert!(d.is_multiple_of(4), "positional width must be a multiple of 4");
    let mut out = Vec::with_capacity(gh * gw * d);
    for i in 0..gh {
        for j in 0..gw {
            sincos_1d(d / 2, i as f64, &mut out);
            sincos_1d(d / 2, j as f64, &mut out);
        }
    }
    Tensor::from_parts(vec![gh * gw, d], out)
}

/// Multi-head self-attention over `x[B,N,d]` with inner width `inner`.
///
/// Returns the projected output `[B,N,d]` and the attention probabilities `[B·heads, N, N]`.
pub fn mhsa(tape: &mut Tape, x: Var, qkv: &LinearVars, proj: &LinearVars, heads: usize, inner: usize) -> Result<(Var, Var)> {
    let s = tape.shape(x)?.to_vec();
    if s.len() != 3 || heads == 0 || !inner.is_multiple_of(heads) {
        return Err(Error::ShapeMismatch {
            op: "mhsa",
            lhs: s,
            rhs: vec![heads, inner],
        });
    }
    let (b, n) = (s[0], s[1]);
    let dh = inner / heads;
    let packed = qkv.apply(tape, x)?;
    let packed = tape.reshape(packed, &[b, n, 3, heads, dh])?;
    let packed = tape.permute(packed, &[2, 0, 3, 1, 4])?;
    let split = |tape: &mut Tape, i: usize| -> Result<Var> {
        let part = tape.narrow(packed, 0, i, 1)?;
        tape.reshape(part, &[b * heads, n, dh])
    };
    let q = split(tape, 0)?;
    let k = split(tape, 1)?;
    let v = split(tape, 2)?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt())?;
    let probs = tape.softmax(scores)?;
    let o = tape.batch_matmul(probs, v, false)?;
    let o = tape.reshape(o, &[b, heads, n, dh])?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, &[b, n, inner])?;
    Ok((proj.apply(tape, o)?, probs))
}

/// One block: `h + g₁ ⊙ MHSA(mod₁(LN h)) + g₂ ⊙ FFN(mod₂(LN h))`, modulation from `SiLU(cond)`.
pub fn block_forward(tape: &mut Tape, bv: &BlockVars, heads: usize, h: Var, cond: Var) -> Result<Var> {
    let sh = tape.shape(h)?.to_vec();
    let sc = tape.shape(cond)?.to_vec();
    if sh.len() != 3 || sc.len() != 2 || sh[0] != sc[0] || sh[2] != sc[1] {
        return Err(Error::ShapeMismatch {
            op: "block_forward",
            lhs: sh,
            rhs: sc,
        });
    }
    let d = sh[2];
    let act = tape.silu(cond)?;
    let ada = bv.ada.apply(tape, act)?;
    let mut chunk = |i: usize| tape.narrow(ada, 1, i * d, d);
    let (shift1, scale1, gate1) = (chunk(0)?, chunk(1)?, chunk(2)?);
    let (shift2, scale2, gate2) = (chunk(3)?, chunk(4)?, chunk(5)?);

    let x = tape.layernorm(h)?;
    let a_in = tape.modulate(x, shift1, scale1)?;
    let (attn, _) = mhsa(tape, a_in, &bv.qkv, &bv.proj, heads, bv.spec.inner_dim)?;
    let attn = tape.scale_tokens(attn, gate1)?;

    let m_in = tape.modulate(x, shift2, scale2)?;
    let m = bv.fc1.apply(tape, m_in)?;
    let m = tape.gelu(m)?;
    let m = bv.fc2.apply(tape, m)?;
    let m = tape.scale_tokens(m, gate2)?;

    let out = tape.add(h, attn)?;
    tape.add(out, m)
}

/// Result of a taped forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Prediction `[B, out_channels, H, W]`.
    pub out: Var,
    /// Conditioning vector `[B, d]` before the SiLU.
    pub cond: Var,
    /// Token streams `h_0 … h_L` when taps were requested, else empty.
    pub taps: Vec<Var>,
}

fn check_ids(spec: &DiTSpec, batch: usize, t: &[usize], y: &[usize]) -> Result<()> {
    if t.len() != batch || y.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "forward ids",
            lhs: vec![batch],
            rhs: vec![t.len(), y.len()],
        });
    }
    if let Some(&bad) = t.iter().find(|&&v| v >= spec.num_timesteps) {
        return Err(Error::OutOfRange {
            what: "timestep",
            value: bad as u128,
            limit: spec.num_timesteps as u128,
        });
    }
    if let Some(&bad) = y.iter().find(|&&v| v > spec.num_classes) {
        return Err(Error::OutOfRange {
            what: "class id",
            value: bad as u128,
            limit: spec.num_classes as u128 + 1,
        });
    }
    Ok(())
}

/// Conditioning vector `t_emb + y_emb` on the tape.
pub fn condition(tape: &mut Tape, vars: &ModelVars, spec: &DiTSpec, t: &[usize], y: &[usize]) -> Result<Var> {
    let freqs = tape.constant(timestep_frequencies(t, spec.freq_dim)?);
    let te = vars.t_fc1.apply(tape, freqs)?;
    let te = tape.silu(te)?;
    let te = vars.t_fc2.apply(tape, te)?;
    let ye = tape.embedding(vars.class_embed, y)?;
    tape.add(te, ye)
}

/// Patch embedding plus positional table: the stream `h_0`.
pub fn embed_tokens(tape: &mut Tape, vars: &ModelVars, w: &ModelWeights, z: &Tensor) -> Result<Var> {
    let spec = &w.spec;
    let s = z.shape();
    let want = [spec.latent.channels, spec.latent.height, spec.latent.width];
    if s.len() != 4 || s[1..] != want {
        return Err(Error::ShapeMismatch {
            op: "forward input",
            lhs: s.to_vec(),
            rhs: want.to_vec(),
        });
    }
    let b = s[0];
    let tokens = tape.constant(patchify(z, spec.patch)?);
    let h = vars.patch_embed.apply(tape, tokens)?;
    let mut pos = Vec::with_capacity(b * w.pos_embed.numel());
    for _ in 0..b {
        pos.extend_from_slice(w.pos_embed.data());
    }
    let pos = tape.constant(Tensor::from_parts(vec![b, spec.tokens(), spec.width], pos));
    tape.add(h, pos)
}

/// Final adaLN, linear head and unpatchify on the tape.
pub fn head(tape: &mut Tape, vars: &ModelVars, spec: &DiTSpec, h: Var, cond: Var) -> Result<Var> {
    let d = spec.width;
    let b = tape.shape(h)?[0];
    let act = tape.silu(cond)?;
    let ada = vars.final_ada.apply(tape, act)?;
    let shift = tape.narrow(ada, 1, 0, d)?;
    let scale = tape.narrow(ada, 1, d, d)?;
    let x = tape.layernorm(h)?;
    let x = tape.modulate(x, shift, scale)?;
    let x = vars.final_linear.apply(tape, x)?;
    let (gh, gw) = spec.grid();
    let p = spec.patch;
    let oc = spec.out_channels();
    let x = tape.reshape(x, &[b, gh, gw, p, p, oc])?;
    let x = tape.permute(x, &[0, 5, 1, 3, 2, 4])?;
    tape.reshape(x, &[b, oc, spec.latent.height, spec.latent.width])
}

/// Full taped forward pass of `w` (bound as `vars`) on latents `z[B,C,H,W]`.
pub fn forward(
    tape: &mut Tape,
    vars: &ModelVars,
    w: &ModelWeights,
    z: &Tensor,
    t: &[usize],
    y: &[usize],
    taps: bool,
) -> Result<ForwardOutput> {
    let spec = &w.spec;
    check_ids(spec, z.shape().first().copied().unwrap_or(0), t, y)?;
    let mut h = embed_tokens(tape, vars, w, z)?;
    let cond = condition(tape, vars, spec, t, y)?;
    let mut recorded = Vec::new();
    if taps {
        recorded.push(h);
    }
    for bv in &vars.blocks {
        h = block_forward(tape, bv, spec.heads, h, cond)?;
        if taps {
            recorded.push(h);
        }
    }
    let out = head(tape, vars, spec, h, cond)?;
    Ok(ForwardOutput {
        out,
        cond,
        taps: recorded,
    })
}

/// Activations captured by [`ModelWeights::forward_with_taps`].
#[derive(Clone, Debug)]
pub struct Taps {
    pub out: Tensor,
    pub cond: Tensor,
    /// `h_0 … h_L`, each `[B, N, d]`.
    pub states: Vec<Tensor>,
}

impl ModelWeights {
    /// Inference forward pass; returns `[B, out_channels, H, W]`.
    pub fn predict(&self, z: &Tensor, t: &[usize], y: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let fo = forward(&mut tape, &vars, self, z, t, y, false)?;
        Ok(tape.value(fo.out)?.clone())
    }

    pub fn forward_with_taps(&self, z: &Tensor, t: &[usize], y: &[usize]) -> Result<Taps> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let fo = forward(&mut tape, &vars, self, z, t, y, true)?;
        Ok(Taps {
            out: tape.value(fo.out)?.clone(),
            cond: tape.value(fo.cond)?.clone(),
            states: fo.taps.iter().map(|&v| tape.value(v).cloned()).collect::<Result<_>>()?,
        })
    }
}
