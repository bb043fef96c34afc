use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use statrs::function::erf::erf;

use crate::tensor::rng::RngState;
use crate::tensor::tape::{BackwardMode, Tape, Var};
use crate::tensor::{shape_err, Result, TensorError};

impl Tape {
    /// ELU with `alpha = 1`. Under [`BackwardMode::Guided`] the backward
    /// pass gates on positive input and positive incoming gradient.
    pub fn elu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp_m1() })
            .collect();
        self.push(
            shape,
            data,
            "elu",
            vec![x],
            Box::new(move |ctx, g, sink| {
                let xv = ctx.value(x);
                let guided = ctx.mode == BackwardMode::Guided;
                if let Some(gx) = sink.slot(x) {
                    for ((s, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if guided {
                            if xi > 0.0 && gi > 0.0 {
                                *s += gi;
                            }
                        } else if xi > 0.0 {
                            *s += gi;
                        } else {
                            *s += gi * xi.exp();
                        }
                    }
                }
            }),
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self
            .value(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + erf(v * FRAC_1_SQRT_2)))
            .collect();
        self.push(
            shape,
            data,
            "gelu",
            vec![x],
            Box::new(move |ctx, g, sink| {
                let xv = ctx.value(x);
                if let Some(gx) = sink.slot(x) {
                    let norm = 1.0 / (2.0 * PI).sqrt();
                    for ((s, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        let cdf = 0.5 * (1.0 + erf(xi * FRAC_1_SQRT_2));
                        let pdf = norm * (-0.5 * xi * xi).exp();
                        *s += gi * (cdf + xi * pdf);
                    }
                }
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| shape_err("softmax", "scalar input"))?;
        if d == 0 {
            return Err(TensorError::EmptyAxis("softmax"));
        }
        let data = softmax_rows(self.value(x), d);
        let out = self.next_var();
        Ok(self.push(
            shape,
            data,
            "softmax",
            vec![x],
            Box::new(move |ctx, g, sink| {
                let y = ctx.value(out);
                if let Some(gx) = sink.slot(x) {
                    for ((yr, gr), sr) in y
                        .chunks_exact(d)
                        .zip(g.chunks_exact(d))
                        .zip(gx.chunks_exact_mut(d))
                    {
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            sr[j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
            }),
        ))
    }

    /// Inverted dropout. With `rng == None` (eval mode) this is the identity
    /// and adds no node. The mask is drawn from `rng` and recorded on the
    /// tape, so replaying the same state reproduces it exactly.
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<RngState>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(shape_err(
                "dropout",
                format!("probability {p} outside [0, 1)"),
            ));
        }
        let Some(state) = rng else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mut draws = state.rng();
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if draws.random::<f64>() >= p {
                    keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        self.record_dropout_mask(mask.clone());
        Ok(self.push(
            shape,
            data,
            "dropout",
            vec![x],
            Box::new(move |_, g, sink| {
                if let Some(gx) = sink.slot(x) {
                    for ((s, gi), m) in gx.iter_mut().zip(g).zip(&mask) {
                        *s += gi * m;
                    }
                }
            }),
        ))
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(values: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (row, o) in values.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (oj, &v) in o.iter_mut().zip(row) {
            *oj = (v - max).exp();
            total += *oj;
        }
        for oj in o.iter_mut() {
            *oj /= total;
        }
    }
    out
}
