use rand::Rng;

use super::config::ModelConfig;
use super::pe::{fourier_pe, positional_embedding, SceneBounds};
use crate::error::{Error, Result};
use crate::geometry::dist2;
use crate::numerics::{init_linear, layer_norm_params, linear_params, Eager, Mask, MlpSpec, Ops, ParamStore, Tensor};

/// Keep `(i, j)` iff both tokens are valid and, with a radius, lie within it.
pub fn build_attention_mask(coords: &[[f64; 3]], valid: &[bool], radius: Option<f64>) -> Mask {
    let n = coords.len();
    let r2 = radius.map(|r| r * r);
    Mask::from_fn(n, n, |i, j| {
        valid[i]
            && valid[j]
            && (i == j || r2.is_none_or(|r2| dist2(&coords[i], &coords[j]).sqrt() <= r2.sqrt()))
    })
}

/// Rows are queries, columns are valid memory tokens.
pub fn cross_attention_mask(queries: usize, memory_valid: &[bool]) -> Mask {
    Mask::from_fn(queries, memory_valid.len(), |_, j| memory_valid[j])
}

pub(crate) fn attention_init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) {
    for p in ["q", "k", "v", "o"] {
        init_linear(store, &format!("{prefix}.{p}"), d, d, rng);
    }
    // a key bias only shifts each softmax row by a constant
    store.remove(&format!("{prefix}.k.bias"));
}

pub(crate) fn ffn_spec(d: usize, hidden: usize) -> MlpSpec {
    MlpSpec::head(vec![d, hidden, d])
}

pub(crate) fn head_specs(cfg: &ModelConfig) -> [(&'static str, MlpSpec); 3] {
    let d = cfg.model_dim();
    [
        ("center", MlpSpec::head(vec![d, d, d, 3])),
        ("size", MlpSpec::head(vec![d, d, d, 3])),
        ("class", MlpSpec::head(vec![d, d, d, cfg.logits()])),
    ]
}

/// Multi-head scaled dot-product attention with output projection.
/// Returns the projected output and each head's attention matrix.
pub fn multi_head_attention<O: Ops>(
    ops: &mut O,
    query: &O::V,
    key: &O::V,
    value: &O::V,
    mask: &Mask,
    heads: usize,
    prefix: &str,
) -> Result<(O::V, Vec<O::V>)> {
    let q = linear_params(ops, query, &format!("{prefix}.q"))?;
    let kw = ops.param(&format!("{prefix}.k.weight"))?;
    let k = ops.linear(key, &kw, None)?;
    let v = linear_params(ops, value, &format!("{prefix}.v"))?;
    let d = ops.value(&q).cols();
    if d % heads != 0 {
        return Err(Error::dim("attention", format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut alphas = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            (ops.slice_cols(&q, a, b)?, ops.slice_cols(&k, a, b)?, ops.slice_cols(&v, a, b)?)
        };
        let logits = ops.matmul(&qh, &kh, true)?;
        let logits = ops.scale(&logits, scale);
        let alpha = ops.masked_softmax(&logits, mask)?;
        outs.push(ops.matmul(&alpha, &vh, false)?);
        alphas.push(alpha);
    }
    let cat = if heads == 1 { outs.pop().unwrap() } else { ops.concat_cols(&outs)? };
    let out = linear_params(ops, &cat, &format!("{prefix}.o"))?;
    Ok((out, alphas))
}

fn validity(valid: &[bool]) -> Vec<f64> {
    valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
}

/// `x + attention(x)` with invalid rows zeroed. The mask diagonal marks the
/// valid tokens.
pub fn self_attention(
    tokens: &Tensor,
    mask: &Mask,
    weights: &ParamStore,
    heads: usize,
    prefix: &str,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut ops = Eager::new(weights);
    let x = ops.constant(tokens.clone());
    let valid: Vec<bool> = (0..tokens.rows()).map(|i| mask.get(i, i)).collect();
    let out = self_attention_apply(&mut ops, &x, mask, &valid, heads, prefix)?;
    Ok((out.0.as_ref().clone(), out.1.iter().map(|a| a.as_ref().clone()).collect()))
}

pub fn self_attention_apply<O: Ops>(
    ops: &mut O,
    x: &O::V,
    mask: &Mask,
    valid: &[bool],
    heads: usize,
    prefix: &str,
) -> Result<(O::V, Vec<O::V>)> {
    let (a, alphas) = multi_head_attention(ops, x, x, x, mask, heads, prefix)?;
    let y = ops.add(x, &a)?;
    Ok((ops.row_scale(&y, &validity(valid))?, alphas))
}

/// Pre-norm encoder layer: masked self-attention then feed-forward, each
/// residual; invalid rows leave every layer as zeros.
pub fn encoder_layer<O: Ops>(
    ops: &mut O,
    x: &O::V,
    mask: &Mask,
    valid: &[bool],
    heads: usize,
    prefix: &str,
) -> Result<O::V> {
    let keep = validity(valid);
    let h = layer_norm_params(ops, x, &format!("{prefix}.norm1"))?;
    let (a, _) = multi_head_attention(ops, &h, &h, &h, mask, heads, &format!("{prefix}.attn"))?;
    let x = ops.add(x, &a)?;
    let h = layer_norm_params(ops, &x, &format!("{prefix}.norm2"))?;
    let f = ffn_forward(ops, &h, &format!("{prefix}.ffn"))?;
    let x = ops.add(&x, &f)?;
    ops.row_scale(&x, &keep)
}

/// Two-layer feed-forward block, widths read from the registered weights.
fn ffn_forward<O: Ops>(ops: &mut O, x: &O::V, prefix: &str) -> Result<O::V> {
    let h = linear_params(ops, x, &format!("{prefix}.0"))?;
    let h = ops.relu(&h);
    linear_params(ops, &h, &format!("{prefix}.1"))
}

/// Encoder result: refined tokens and the positional embedding that was
/// added to the input (reused as memory keys' position by the decoder).
pub struct EncoderOutput<V> {
    pub tokens: V,
    pub pos: V,
}

/// Adds the positional embedding, runs every layer with its radius mask and
/// applies the final normalization.
pub fn encoder_apply<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    feats: &O::V,
    coords: &[[f64; 3]],
    valid: &[bool],
    bounds: &SceneBounds,
) -> Result<EncoderOutput<O::V>> {
    if !valid.iter().any(|v| *v) {
        return Err(Error::EmptyScene);
    }
    let n = coords.len();
    if ops.value(feats).rows() != n || valid.len() != n {
        return Err(Error::dim("encoder_forward", "token, coordinate and validity counts differ"));
    }
    let keep = validity(valid);
    let pos = positional_embedding(ops, cfg, coords, bounds)?;
    let pos = ops.row_scale(&pos, &keep)?;
    let mut x = ops.add(feats, &pos)?;
    for (l, r) in cfg.encoder.radii.iter().enumerate() {
        let mask = build_attention_mask(coords, valid, Some(*r));
        x = encoder_layer(ops, &x, &mask, valid, cfg.encoder.heads, &format!("encoder.layer{l}"))?;
    }
    let x = layer_norm_params(ops, &x, "encoder.norm")?;
    let tokens = ops.row_scale(&x, &keep)?;
    Ok(EncoderOutput { tokens, pos })
}

/// Eager encoder over concatenated world-frame proxy tokens.
pub fn encoder_forward(
    feats: &Tensor,
    coords: &[[f64; 3]],
    valid: &[bool],
    bounds: &SceneBounds,
    cfg: &ModelConfig,
    weights: &ParamStore,
) -> Result<Tensor> {
    let mut ops = Eager::new(weights);
    let f = ops.constant(feats.clone());
    let out = encoder_apply(&mut ops, cfg, &f, coords, valid, bounds)?;
    Ok(out.tokens.as_ref().clone())
}

/// `M(F(q))`: Fourier features of normalized query coordinates through the
/// query MLP.
pub fn query_embedding<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    coords: &[[f64; 3]],
    bounds: &SceneBounds,
) -> Result<O::V> {
    let normalized: Vec<[f64; 3]> = coords.iter().map(|c| bounds.normalize(*c)).collect();
    let f = ops.constant(fourier_pe(&normalized, &cfg.fourier)?);
    MlpSpec::head(vec![cfg.fourier.dim(), cfg.model_dim(), cfg.model_dim()]).forward(ops, &f, "query_mlp")
}

/// Pre-norm decoder layer: query self-attention, cross-attention to the
/// memory, feed-forward.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer<O: Ops>(
    ops: &mut O,
    t: &O::V,
    query_pos: &O::V,
    memory_keys: &O::V,
    memory: &O::V,
    cross_mask: &Mask,
    heads: usize,
    prefix: &str,
) -> Result<O::V> {
    let q = ops.value(t).rows();
    let h = layer_norm_params(ops, t, &format!("{prefix}.norm1"))?;
    let qk = ops.add(&h, query_pos)?;
    let (a, _) = multi_head_attention(ops, &qk, &qk, &h, &Mask::all(q, q), heads, &format!("{prefix}.self_attn"))?;
    let t = ops.add(t, &a)?;
    let h = layer_norm_params(ops, &t, &format!("{prefix}.norm2"))?;
    let hq = ops.add(&h, query_pos)?;
    let (a, _) = multi_head_attention(ops, &hq, memory_keys, memory, cross_mask, heads, &format!("{prefix}.cross_attn"))?;
    let t = ops.add(&t, &a)?;
    let h = layer_norm_params(ops, &t, &format!("{prefix}.norm3"))?;
    let f = ffn_forward(ops, &h, &format!("{prefix}.ffn"))?;
    ops.add(&t, &f)
}

/// Refines the object queries layer by layer, starting from the query
/// embeddings themselves, and returns each layer's normalized output.
pub fn decoder_apply<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    query_pos: &O::V,
    memory: &EncoderOutput<O::V>,
    memory_valid: &[bool],
) -> Result<Vec<O::V>> {
    let q = ops.value(query_pos).rows();
    let keys = ops.add(&memory.tokens, &memory.pos)?;
    let mask = cross_attention_mask(q, memory_valid);
    let mut t = query_pos.clone();
    let mut outs = Vec::with_capacity(cfg.decoder.num_layers);
    for l in 0..cfg.decoder.num_layers {
        t = decoder_layer(ops, &t, query_pos, &keys, &memory.tokens, &mask, cfg.decoder.heads, &format!("decoder.layer{l}"))?;
        outs.push(layer_norm_params(ops, &t, "decoder.norm")?);
    }
    Ok(outs)
}

/// Raw head outputs for one decoder stage.
pub struct HeadOutput<V> {
    /// Query coordinate plus predicted offset, meters.
    pub center: V,
    /// Softplus-positive full extents, meters.
    pub size: V,
    pub logits: V,
}

pub fn box_head_apply<O: Ops>(
    ops: &mut O,
    cfg: &ModelConfig,
    feats: &O::V,
    query_coords: &[[f64; 3]],
) -> Result<HeadOutput<O::V>> {
    let [(_, c), (_, s), (_, k)] = head_specs(cfg);
    let offset = c.forward(ops, feats, "box_head.center")?;
    let anchors = ops.constant(Tensor::matrix(query_coords.len(), 3, query_coords.iter().flatten().copied().collect())?);
    let center = ops.add(&anchors, &offset)?;
    let raw = s.forward(ops, feats, "box_head.size")?;
    let size = ops.softplus(&raw);
    let logits = k.forward(ops, feats, "box_head.class")?;
    Ok(HeadOutput { center, size, logits })
}

/// One decoded query.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrediction {
    pub center: [f64; 3],
    pub size: [f64; 3],
    /// Classes then background.
    pub logits: Vec<f64>,
}

impl BoxPrediction {
    pub fn probabilities(&self) -> Vec<f64> {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Most likely foreground class and its probability.
    pub fn best_class(&self) -> (usize, f64) {
        let p = self.probabilities();
        let fg = &p[..p.len() - 1];
        let mut best = 0;
        for (i, v) in fg.iter().enumerate() {
            if *v > fg[best] {
                best = i;
            }
        }
        (best, fg[best])
    }
}

pub fn head_predictions(center: &Tensor, size: &Tensor, logits: &Tensor) -> Vec<BoxPrediction> {
    (0..center.rows())
        .map(|r| BoxPrediction {
            center: [center.at(r, 0), center.at(r, 1), center.at(r, 2)],
            size: [size.at(r, 0), size.at(r, 1), size.at(r, 2)],
            logits: logits.row(r).to_vec(),
        })
        .collect()
}

/// Eager box head.
pub fn box_head(
    feats: &Tensor,
    query_coords: &[[f64; 3]],
    cfg: &ModelConfig,
    weights: &ParamStore,
) -> Result<Vec<BoxPrediction>> {
    let mut ops = Eager::new(weights);
    let f = ops.constant(feats.clone());
    let out = box_head_apply(&mut ops, cfg, &f, query_coords)?;
    Ok(head_predictions(&out.center, &out.size, &out.logits))
}
