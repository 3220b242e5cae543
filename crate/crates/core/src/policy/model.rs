//! Forward pass, sampling, teacher-forced log-probabilities and backpropagation
//! through time for the Elman recurrence
//!
//! ```text
//! h_t      = tanh(W_x e(x_t) + W_h h_{t-1} + b_h),   h_0 = 0
//! logits_t = W_o h_t + b_o
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::PolicyParameters;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vocab::tok;

impl PolicyParameters {
    fn check_tokens(&self, tokens: &[u32], what: &str) -> Result<()> {
        let v = self.dims().vocab;
        if let Some((i, t)) = tokens.iter().enumerate().find(|(_, &t)| t as usize >= v) {
            return Err(Error::Contract(format!(
                "{what} token {t} at position {i} outside vocabulary of {v}"
            )));
        }
        Ok(())
    }

    /// One recurrence step: writes `tanh(W_x e(token) + W_h h_prev + b_h)` into `out`.
    fn step_into(&self, h_prev: &[f64], token: u32, out: &mut [f64]) {
        let d = self.dims().hidden;
        let e = &self.emb()[token as usize * d..(token as usize + 1) * d];
        let (w_x, w_h, b_h) = (self.w_x(), self.w_h(), self.b_h());
        for (i, o) in out.iter_mut().enumerate() {
            let rx = &w_x[i * d..(i + 1) * d];
            let rh = &w_h[i * d..(i + 1) * d];
            let mut acc = b_h[i];
            for j in 0..d {
                acc += rx[j] * e[j] + rh[j] * h_prev[j];
            }
            *o = acc.tanh();
        }
    }

    fn logits_into(&self, h: &[f64], out: &mut [f64]) {
        let d = self.dims().hidden;
        let (w_o, b_o) = (self.w_o(), self.b_o());
        for (k, o) in out.iter_mut().enumerate() {
            let row = &w_o[k * d..(k + 1) * d];
            *o = b_o[k] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Hidden state after reading `prompt` (zeros for an empty prompt).
    pub fn prompt_state(&self, prompt: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(prompt, "prompt")?;
        let d = self.dims().hidden;
        let mut h = vec![0.0; d];
        let mut next = vec![0.0; d];
        for &t in prompt {
            self.step_into(&h, t, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
        Ok(h)
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for (o, x) in out.iter_mut().zip(logits) {
        *o = x - lse;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax(logits, &mut out);
    out.iter_mut().for_each(|x| *x = x.exp());
    out
}

/// Next-token logits after every position of `context`.
pub fn forward_logits(params: &PolicyParameters, context: &[u32]) -> Result<Vec<Vec<f64>>> {
    if context.is_empty() {
        return Err(Error::Contract("context must be non-empty".into()));
    }
    params.check_tokens(context, "context")?;
    let d = params.dims().hidden;
    let mut h = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut rows = Vec::with_capacity(context.len());
    for &t in context {
        params.step_into(&h, t, &mut next);
        std::mem::swap(&mut h, &mut next);
        let mut logits = vec![0.0; params.dims().vocab];
        params.logits_into(&h, &mut logits);
        rows.push(logits);
    }
    Ok(rows)
}

/// How tokens are chosen during generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    /// Ancestral sampling from `softmax(logits / temperature)`.
    Sample { temperature: f64 },
    /// Argmax, lowest id on ties.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
}

/// One generated continuation with its temperature-1 token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub prompt: Vec<u32>,
    pub output: Vec<u32>,
    pub logprobs: Vec<f64>,
    pub termination: Termination,
}

impl GenerationTrace {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Generates up to `max_len` tokens after `prompt`, stopping after `EOS`.
pub fn sample_sequence(
    params: &PolicyParameters,
    prompt: &[u32],
    decoding: Decoding,
    max_len: usize,
    rng: &mut Rng,
) -> Result<GenerationTrace> {
    let h = params.prompt_state(prompt)?;
    sample_from_state(params, prompt, h, decoding, max_len, rng)
}

/// Same as [`sample_sequence`] but continues from a precomputed prompt state.
pub fn sample_from_state(
    params: &PolicyParameters,
    prompt: &[u32],
    mut h: Vec<f64>,
    decoding: Decoding,
    max_len: usize,
    rng: &mut Rng,
) -> Result<GenerationTrace> {
    if max_len < 1 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    if let Decoding::Sample { temperature } = decoding {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Contract(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
    }
    let v = params.dims().vocab;
    let mut logits = vec![0.0; v];
    let mut logp = vec![0.0; v];
    let mut scaled = vec![0.0; v];
    let mut next = vec![0.0; h.len()];
    let mut output = Vec::new();
    let mut logprobs = Vec::new();
    let mut termination = Termination::MaxLen;
    for _ in 0..max_len {
        params.logits_into(&h, &mut logits);
        log_softmax(&logits, &mut logp);
        let token = match decoding {
            Decoding::Greedy => {
                let mut best = 0;
                for (k, &x) in logits.iter().enumerate() {
                    if x > logits[best] {
                        best = k;
                    }
                }
                best
            }
            Decoding::Sample { temperature } => {
                let probs: &[f64] = if temperature == 1.0 {
                    &logp
                } else {
                    let t: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
                    log_softmax(&t, &mut scaled);
                    &scaled
                };
                let mut u = rng.gen::<f64>();
                let mut pick = v - 1;
                for (k, lp) in probs.iter().enumerate() {
                    let p = lp.exp();
                    if u < p {
                        pick = k;
                        break;
                    }
                    u -= p;
                }
                pick
            }
        };
        if !logp[token].is_finite() {
            return Err(Error::numerical(
                format!("output position {}", output.len()),
                "non-finite log-probability",
            ));
        }
        output.push(token as u32);
        logprobs.push(logp[token]);
        if token as u32 == tok::EOS {
            termination = Termination::Eos;
            break;
        }
        if output.len() < max_len {
            params.step_into(&h, token as u32, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
    }
    Ok(GenerationTrace {
        prompt: prompt.to_vec(),
        output,
        logprobs,
        termination,
    })
}

/// Per-token teacher-forced log-probabilities of `output` continuing `h`.
pub fn continuation_logprobs(
    params: &PolicyParameters,
    h: &[f64],
    output: &[u32],
) -> Result<Vec<f64>> {
    params.check_tokens(output, "output")?;
    let v = params.dims().vocab;
    let mut h = h.to_vec();
    let mut next = vec![0.0; h.len()];
    let mut logits = vec![0.0; v];
    let mut logp = vec![0.0; v];
    let mut out = Vec::with_capacity(output.len());
    for (k, &t) in output.iter().enumerate() {
        params.logits_into(&h, &mut logits);
        log_softmax(&logits, &mut logp);
        if !logp[t as usize].is_finite() {
            return Err(Error::numerical(
                format!("output position {k}"),
                "non-finite log-probability",
            ));
        }
        out.push(logp[t as usize]);
        if k + 1 < output.len() {
            params.step_into(&h, t, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
    }
    Ok(out)
}

/// Teacher-forced `(sum, per-token)` log-probability of `output` given `prompt`.
pub fn sequence_log_prob(
    params: &PolicyParameters,
    prompt: &[u32],
    output: &[u32],
) -> Result<(f64, Vec<f64>)> {
    let h = params.prompt_state(prompt)?;
    let per_token = continuation_logprobs(params, &h, output)?;
    Ok((per_token.iter().sum(), per_token))
}

/// Gradient of the summed log-probability of `output` with respect to every parameter.
pub fn grad_log_prob(
    params: &PolicyParameters,
    prompt: &[u32],
    output: &[u32],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.dims().flat_len()];
    let weights = vec![1.0; output.len()];
    accumulate_weighted_grad(params, prompt, &[(output, &weights)], &mut grad)?;
    Ok(grad)
}

/// Adds `d/dθ Σ_traces Σ_t w_t log π(o_t | prompt, o_<t)` into `grad` and returns the
/// per-token log-probabilities of every continuation.
///
/// All continuations share `prompt`, so the prompt is run forward once and its
/// backward pass receives the summed hidden-state gradient.
pub fn accumulate_weighted_grad(
    params: &PolicyParameters,
    prompt: &[u32],
    continuations: &[(&[u32], &[f64])],
    grad: &mut [f64],
) -> Result<Vec<Vec<f64>>> {
    for (out, w) in continuations {
        if out.len() != w.len() {
            return Err(Error::Contract(
                "one weight per output token required".into(),
            ));
        }
    }
    let outputs: Vec<&[u32]> = continuations.iter().map(|(o, _)| *o).collect();
    backprop_continuations(
        params,
        prompt,
        &outputs,
        |i, _| Ok(continuations[i].1.to_vec()),
        grad,
    )
}

/// Like [`accumulate_weighted_grad`], but the per-token weights of continuation `i`
/// are computed by `weights(i, logprobs_i)` from its forward log-probabilities.
pub fn backprop_continuations<W>(
    params: &PolicyParameters,
    prompt: &[u32],
    outputs: &[&[u32]],
    mut weights: W,
    grad: &mut [f64],
) -> Result<Vec<Vec<f64>>>
where
    W: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let dims = params.dims();
    let (v, d) = (dims.vocab, dims.hidden);
    if grad.len() != dims.flat_len() {
        return Err(Error::Contract(
            "gradient buffer has the wrong length".into(),
        ));
    }
    params.check_tokens(prompt, "prompt")?;
    for out in outputs {
        params.check_tokens(out, "output")?;
    }

    // Prompt states: hs[i*d..] is the state after i prompt tokens.
    let p_len = prompt.len();
    let mut hs = vec![0.0; (p_len + 1) * d];
    for (i, &t) in prompt.iter().enumerate() {
        let (prev, rest) = hs.split_at_mut((i + 1) * d);
        params.step_into(&prev[i * d..], t, &mut rest[..d]);
    }
    let h_prompt = hs[p_len * d..].to_vec();

    let mut grads = GradView::new(grad, dims);
    let mut dh_prompt = vec![0.0; d];
    let mut logits = vec![0.0; v];
    let mut logp = vec![0.0; v];
    let mut all_logps = Vec::with_capacity(outputs.len());
    let mut probs = Vec::new();

    for (index, out) in outputs.iter().enumerate() {
        let len = out.len();
        if len == 0 {
            all_logps.push(Vec::new());
            continue;
        }
        // states[k] predicts out[k]; states[0] is the prompt state.
        let mut states = vec![0.0; len * d];
        states[..d].copy_from_slice(&h_prompt);
        for k in 1..len {
            let (prev, rest) = states.split_at_mut(k * d);
            params.step_into(&prev[(k - 1) * d..], out[k - 1], &mut rest[..d]);
        }
        probs.clear();
        probs.resize(len * v, 0.0);
        let mut lps = Vec::with_capacity(len);
        for k in 0..len {
            params.logits_into(&states[k * d..(k + 1) * d], &mut logits);
            log_softmax(&logits, &mut logp);
            let target = out[k] as usize;
            if !logp[target].is_finite() {
                return Err(Error::numerical(
                    format!("output position {k}"),
                    "non-finite log-probability",
                ));
            }
            lps.push(logp[target]);
            for (p, lp) in probs[k * v..(k + 1) * v].iter_mut().zip(&logp) {
                *p = lp.exp();
            }
        }
        let w = weights(index, &lps)?;
        if w.len() != len {
            return Err(Error::Contract(
                "one weight per output token required".into(),
            ));
        }
        let mut dstates = vec![0.0; len * d];
        for k in 0..len {
            if w[k] == 0.0 {
                continue;
            }
            if !w[k].is_finite() {
                return Err(Error::numerical(
                    format!("output position {k}"),
                    "non-finite token weight",
                ));
            }
            let h = &states[k * d..(k + 1) * d];
            let dh = &mut dstates[k * d..(k + 1) * d];
            let target = out[k] as usize;
            for c in 0..v {
                let dlogit = w[k] * (f64::from(u8::from(c == target)) - probs[k * v + c]);
                if dlogit == 0.0 {
                    continue;
                }
                grads.b_o[c] += dlogit;
                let row = &params.w_o()[c * d..(c + 1) * d];
                let grow = &mut grads.w_o[c * d..(c + 1) * d];
                for j in 0..d {
                    grow[j] += dlogit * h[j];
                    dh[j] += dlogit * row[j];
                }
            }
        }
        for k in (1..len).rev() {
            let (prev, cur) = dstates.split_at_mut(k * d);
            backprop_step(
                params,
                &mut grads,
                &states[k * d..(k + 1) * d],
                &states[(k - 1) * d..k * d],
                out[k - 1],
                &cur[..d],
                &mut prev[(k - 1) * d..],
                k,
            )?;
        }
        for j in 0..d {
            dh_prompt[j] += dstates[j];
        }
        all_logps.push(lps);
    }

    let mut dh = dh_prompt;
    let mut dprev = vec![0.0; d];
    for i in (1..=p_len).rev() {
        dprev.iter_mut().for_each(|x| *x = 0.0);
        backprop_step(
            params,
            &mut grads,
            &hs[i * d..(i + 1) * d],
            &hs[(i - 1) * d..i * d],
            prompt[i - 1],
            &dh,
            &mut dprev,
            i,
        )?;
        std::mem::swap(&mut dh, &mut dprev);
    }
    Ok(all_logps)
}

struct GradView<'a> {
    emb: &'a mut [f64],
    w_x: &'a mut [f64],
    w_h: &'a mut [f64],
    b_h: &'a mut [f64],
    w_o: &'a mut [f64],
    b_o: &'a mut [f64],
}

impl<'a> GradView<'a> {
    fn new(grad: &'a mut [f64], dims: super::params::Dims) -> Self {
        let (emb, rest) = grad.split_at_mut(dims.emb().len());
        let (w_x, rest) = rest.split_at_mut(dims.w_x().len());
        let (w_h, rest) = rest.split_at_mut(dims.w_h().len());
        let (b_h, rest) = rest.split_at_mut(dims.b_h().len());
        let (w_o, b_o) = rest.split_at_mut(dims.w_o().len());
        Self {
            emb,
            w_x,
            w_h,
            b_h,
            w_o,
            b_o,
        }
    }
}

/// Backpropagates `dh` through `h = tanh(W_x e(token) + W_h h_prev + b_h)`,
/// accumulating into `grads` and adding the gradient w.r.t. `h_prev` into `dh_prev`.
#[allow(clippy::too_many_arguments)]
fn backprop_step(
    params: &PolicyParameters,
    grads: &mut GradView<'_>,
    h: &[f64],
    h_prev: &[f64],
    token: u32,
    dh: &[f64],
    dh_prev: &mut [f64],
    position: usize,
) -> Result<()> {
    let d = h.len();
    let t = token as usize;
    let e = &params.emb()[t * d..(t + 1) * d];
    let (w_x, w_h) = (params.w_x(), params.w_h());
    for i in 0..d {
        let da = dh[i] * (1.0 - h[i] * h[i]);
        if !da.is_finite() {
            return Err(Error::numerical(
                format!("recurrence step {position}, unit {i}"),
                "non-finite pre-activation gradient",
            ));
        }
        if da == 0.0 {
            continue;
        }
        grads.b_h[i] += da;
        let (rx, rh) = (&w_x[i * d..(i + 1) * d], &w_h[i * d..(i + 1) * d]);
        let (gx, gh) = (
            &mut grads.w_x[i * d..(i + 1) * d],
            &mut grads.w_h[i * d..(i + 1) * d],
        );
        let ge = &mut grads.emb[t * d..(t + 1) * d];
        for j in 0..d {
            gx[j] += da * e[j];
            gh[j] += da * h_prev[j];
            ge[j] += da * rx[j];
            dh_prev[j] += da * rh[j];
        }
    }
    Ok(())
}
