use crate::tensor::tape::{Tape, Var};
use crate::tensor::{shape_err, Result};

impl Tape {
    /// Average pooling over `(ph, pw)` windows with stride `(sh, sw)`, no padding.
    pub fn avg_pool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [n, c, h, w] = <[usize; 4]>::try_from(s.as_slice())
            .map_err(|_| shape_err("avg_pool2d", format!("input must be 4-D, got {s:?}")))?;
        let (ph, pw) = window;
        let (sh, sw) = stride;
        if ph == 0 || pw == 0 || sh == 0 || sw == 0 || ph > h || pw > w {
            return Err(shape_err(
                "avg_pool2d",
                format!("window {window:?} stride {stride:?} on {h}x{w}"),
            ));
        }
        let ho = (h - ph) / sh + 1;
        let wo = (w - pw) / sw + 1;
        let inv = 1.0 / (ph * pw) as f64;
        let xv = self.value(x);
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            let xp = &xv[plane * h * w..(plane + 1) * h * w];
            let op = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for r in 0..ho {
                for q in 0..wo {
                    let mut acc = 0.0;
                    for i in 0..ph {
                        let row = &xp[(r * sh + i) * w + q * sw..(r * sh + i) * w + q * sw + pw];
                        acc += row.iter().sum::<f64>();
                    }
                    op[r * wo + q] = acc * inv;
                }
            }
        }
        Ok(self.push(
            vec![n, c, ho, wo],
            out,
            "avg_pool2d",
            vec![x],
            Box::new(move |_, g, sink| {
                if let Some(gx) = sink.slot(x) {
                    for plane in 0..n * c {
                        let gp = &g[plane * ho * wo..(plane + 1) * ho * wo];
                        let xp = &mut gx[plane * h * w..(plane + 1) * h * w];
                        for r in 0..ho {
                            for q in 0..wo {
                                let share = gp[r * wo + q] * inv;
                                for i in 0..ph {
                                    let base = (r * sh + i) * w + q * sw;
                                    for v in &mut xp[base..base + pw] {
                                        *v += share;
                                    }
                                }
                            }
                        }
                    }
                }
            }),
        ))
    }
}
