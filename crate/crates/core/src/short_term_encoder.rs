//! Single-head self-attention over the prefix with a residual connection and
//! a two-layer head on the most recent position.

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::ItemId;
use crate::error::Result;
use crate::params::ModelParams;
use crate::proxy_selector::check_len;

/// Positional rows for a prefix of length `n`: the most recent item gets row 0.
fn reverse_positions(n: usize) -> Vec<usize> {
    (0..n).rev().collect()
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub x: Var,
    pub attention: Var,
    pub z: Var,
    pub output: Var,
}

pub fn build_encoder(g: &mut Graph, params: &ModelParams, prefix: &[ItemId]) -> Result<EncoderVars> {
    build_encoder_with(g, params, prefix, true)
}

fn build_encoder_with(
    g: &mut Graph,
    params: &ModelParams,
    prefix: &[ItemId],
    attend: bool,
) -> Result<EncoderVars> {
    check_len(prefix.len(), params.dims.max_len)?;
    let ids = &params.ids;
    let n = prefix.len();
    let emb = g.gather(ids.items, prefix.iter().map(|i| i.index()).collect())?;
    let pos = g.gather(ids.enc_pos, reverse_positions(n))?;
    let x = g.add(emb, pos)?;

    let wq = g.param(ids.enc_wq);
    let wk = g.param(ids.enc_wk);
    let q = g.matmul(x, wq)?;
    let q = g.relu(q);
    let k = g.matmul(x, wk)?;
    let k = g.relu(k);
    let logits = g.matmul_t(q, k)?;
    let logits = g.scale(logits, 1.0 / (params.dims.dim as f64).sqrt());
    let attention = g.softmax_rows(logits);
    let z = if attend {
        let ax = g.matmul(attention, x)?;
        g.add(ax, x)?
    } else {
        x
    };

    let last = g.select_row(z, n - 1)?;
    let w1 = g.param(ids.enc_w1);
    let b1 = g.param(ids.enc_b1);
    let w2 = g.param(ids.enc_w2);
    let b2 = g.param(ids.enc_b2);
    let h = g.matmul(last, w1)?;
    let h = g.add(h, b1)?;
    let h = g.relu(h);
    let out = g.matmul(h, w2)?;
    let output = g.add(out, b2)?;
    Ok(EncoderVars {
        x,
        attention,
        z,
        output,
    })
}

/// Short-term interest vector of a prefix.
pub fn encode_short_term(prefix: &[ItemId], params: &ModelParams) -> Result<Vec<f64>> {
    let mut g = Graph::new(&params.set);
    let v = build_encoder(&mut g, params, prefix)?;
    Ok(g.value(v.output).data().to_vec())
}

/// Intermediate tensors of one encoder pass, for inspection.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub x: Tensor,
    pub attention: Tensor,
    pub z: Tensor,
    pub output: Vec<f64>,
}

/// Like [`encode_short_term`], keeping intermediates. With `attend == false`
/// the attention term is dropped from the residual sum, leaving `Z = X`.
pub fn trace_encoder(prefix: &[ItemId], params: &ModelParams, attend: bool) -> Result<EncoderTrace> {
    let mut g = Graph::new(&params.set);
    let v = build_encoder_with(&mut g, params, prefix, attend)?;
    Ok(EncoderTrace {
        x: g.value(v.x).clone(),
        attention: g.value(v.attention).clone(),
        z: g.value(v.z).clone(),
        output: g.value(v.output).data().to_vec(),
    })
}
