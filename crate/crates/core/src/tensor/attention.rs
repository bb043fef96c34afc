use super::{shape_err, Result, Tape, Var};

/// Projection parameters of one multi-head self-attention layer. Weight
/// matrices are `(D, D)` and applied as `x · W + b`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `(N, T, D)`
    pub output: Var,
    /// Attention weights `(N·heads, T, T)`; each row sums to 1.
    pub weights: Var,
}

fn project(tape: &mut Tape, x2: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x2, w)?;
    tape.add_bias(y, b)
}

/// Splits `(N·T, D)` into per-head `(N·H, T, dh)`.
fn split_heads(
    tape: &mut Tape,
    x2: Var,
    n: usize,
    t: usize,
    heads: usize,
    dh: usize,
) -> Result<Var> {
    let r = tape.reshape(x2, &[n, t, heads, dh])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    tape.reshape(p, &[n * heads, t, dh])
}

/// Scaled dot-product self-attention with `heads` heads over `x: (N, T, D)`.
pub fn multihead_attention(
    tape: &mut Tape,
    x: Var,
    heads: usize,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let shape = tape.shape(x).to_vec();
    let [n, t, d] = <[usize; 3]>::try_from(shape.as_slice()).map_err(|_| {
        shape_err(
            "attention",
            format!("input must be (N, T, D), got {shape:?}"),
        )
    })?;
    if heads == 0 || d % heads != 0 {
        return Err(shape_err(
            "attention",
            format!("embedding {d} not divisible by {heads} heads"),
        ));
    }
    let dh = d / heads;
    let x2 = tape.reshape(x, &[n * t, d])?;
    let q = project(tape, x2, params.wq, params.bq)?;
    let k = project(tape, x2, params.wk, params.bk)?;
    let v = project(tape, x2, params.wv, params.bv)?;
    let q = split_heads(tape, q, n, t, heads, dh)?;
    let k = split_heads(tape, k, n, t, heads, dh)?;
    let v = split_heads(tape, v, n, t, heads, dh)?;

    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let ctx = tape.matmul(weights, v)?;

    let ctx = tape.reshape(ctx, &[n, heads, t, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n * t, d])?;
    let out = project(tape, ctx, params.wo, params.bo)?;
    let output = tape.reshape(out, &[n, t, d])?;
    Ok(AttentionOutput { output, weights })
}
