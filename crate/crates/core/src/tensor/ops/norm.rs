use crate::tensor::tape::{Tape, Var};
use crate::tensor::{shape_err, Result, TensorError};

/// Batch-norm behaviour for one call.
#[derive(Debug, Clone)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics; a per-sample affine map.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics of a training batch. `var` is the unbiased
/// estimate used to update running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Splits a tensor of shape `(N, C, ...)` or `(N, C)` into the channel
/// count and the length of each contiguous per-(sample, channel) run.
fn channel_layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match shape {
        [n, c] => Some((*n, *c, 1)),
        [n, c, rest @ ..] => Some((*n, *c, rest.iter().product())),
        _ => None,
    }
}

impl Tape {
    /// Batch normalization over the channel axis (axis 1).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        let (n, c, inner) = channel_layout(&shape)
            .ok_or_else(|| shape_err("batch_norm", format!("input {shape:?}")))?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(
                "batch_norm",
                format!("affine params for {c} channels"),
            ));
        }
        let count = n * inner;
        if count == 0 {
            return Err(TensorError::EmptyAxis("batch_norm"));
        }
        let xv = self.value(x);
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();

        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * inner;
                        s += xv[base..base + inner].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut ss = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * inner;
                        ss += xv[base..base + inner]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ci] = mu;
                    var[ci] = ss / count as f64;
                }
                let unbiased = if count > 1 {
                    var.iter()
                        .map(|v| v * count as f64 / (count - 1) as f64)
                        .collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err("batch_norm", "running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let train = stats.is_some();
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                for t in base..base + inner {
                    let h = (xv[t] - mean[ci]) * inv_std[ci];
                    xhat[t] = h;
                    out[t] = gv[ci] * h + bv[ci];
                }
            }
        }

        let var_out = self.push(
            shape,
            out,
            "batch_norm",
            vec![x, gamma, beta],
            Box::new(move |ctx, g, sink| {
                let gam = ctx.value(gamma);
                if sink.wants(gamma) || sink.wants(beta) {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * inner;
                            for t in base..base + inner {
                                dg[ci] += g[t] * xhat[t];
                                db[ci] += g[t];
                            }
                        }
                    }
                    sink.accumulate(gamma, &dg);
                    sink.accumulate(beta, &db);
                }
                if let Some(gx) = sink.slot(x) {
                    if train {
                        let m = count as f64;
                        let mut sum_dxhat = vec![0.0; c];
                        let mut sum_dxhat_xhat = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * inner;
                                for t in base..base + inner {
                                    let d = g[t] * gam[ci];
                                    sum_dxhat[ci] += d;
                                    sum_dxhat_xhat[ci] += d * xhat[t];
                                }
                            }
                        }
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * inner;
                                let k = inv_std[ci] / m;
                                for t in base..base + inner {
                                    let d = g[t] * gam[ci];
                                    gx[t] +=
                                        k * (m * d - sum_dxhat[ci] - xhat[t] * sum_dxhat_xhat[ci]);
                                }
                            }
                        }
                    } else {
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * inner;
                                let k = gam[ci] * inv_std[ci];
                                for t in base..base + inner {
                                    gx[t] += g[t] * k;
                                }
                            }
                        }
                    }
                }
            }),
        );
        Ok((var_out, stats))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        if d == 0 {
            return Err(TensorError::EmptyAxis("layer_norm"));
        }
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err(
                "layer_norm",
                format!("affine params for width {d}"),
            ));
        }
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        Ok(self.push(
            shape,
            out,
            "layer_norm",
            vec![x, gamma, beta],
            Box::new(move |ctx, g, sink| {
                let gam = ctx.value(gamma);
                if sink.wants(gamma) || sink.wants(beta) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                            db[j] += g[r * d + j];
                        }
                    }
                    sink.accumulate(gamma, &dg);
                    sink.accumulate(beta, &db);
                }
                if let Some(gx) = sink.slot(x) {
                    let m = d as f64;
                    for r in 0..rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dx = g[r * d + j] * gam[j];
                            s1 += dx;
                            s2 += dx * xhat[r * d + j];
                        }
                        let k = inv_std[r] / m;
                        for j in 0..d {
                            let dx = g[r * d + j] * gam[j];
                            gx[r * d + j] += k * (m * dx - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }),
        ))
    }
}
