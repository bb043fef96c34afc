use crate::tensor::tape::{Tape, Var};
use crate::tensor::{axpy, dot, shape_err, Result};

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
    groups: usize,
}

impl ConvGeom {
    fn in_channel(&self, out_channel: usize, ci: usize) -> usize {
        let per_group = self.k / self.groups;
        (out_channel / per_group) * self.cg + ci
    }
}

/// Strided gather of `len` elements starting at `start`.
#[inline]
fn strided<'a>(
    src: &'a [f64],
    start: usize,
    step: usize,
    len: usize,
    buf: &'a mut Vec<f64>,
) -> &'a [f64] {
    if step == 1 {
        &src[start..start + len]
    } else {
        buf.clear();
        buf.extend((0..len).map(|i| src[start + i * step]));
        buf.as_slice()
    }
}

impl Tape {
    /// Valid (unpadded) 2-D cross-correlation, NCHW layout.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: (usize, usize)) -> Result<Var> {
        self.conv2d_grouped(input, kernel, stride, 1)
    }

    /// Grouped valid cross-correlation. `kernel` has shape
    /// `(K, C/groups, kh, kw)`; `groups == C == K` gives a depthwise conv.
    pub fn conv2d_grouped(
        &mut self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        groups: usize,
    ) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let ([n, c, h, w], [k, cg, kh, kw]) = (
            <[usize; 4]>::try_from(si.as_slice())
                .map_err(|_| shape_err("conv2d", format!("input must be 4-D, got {si:?}")))?,
            <[usize; 4]>::try_from(sk.as_slice())
                .map_err(|_| shape_err("conv2d", format!("kernel must be 4-D, got {sk:?}")))?,
        );
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 || groups == 0 {
            return Err(shape_err("conv2d", "stride and groups must be >= 1"));
        }
        if c % groups != 0 || k % groups != 0 || cg != c / groups {
            return Err(shape_err(
                "conv2d",
                format!("channel mismatch: input {c} channels, kernel {sk:?}, groups {groups}"),
            ));
        }
        if kh > h || kw > w {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than input {h}x{w}"),
            ));
        }
        let g = ConvGeom {
            n,
            c,
            h,
            w,
            k,
            cg,
            kh,
            kw,
            sh,
            sw,
            ho: (h - kh) / sh + 1,
            wo: (w - kw) / sw + 1,
            groups,
        };

        let mut out = vec![0.0; n * k * g.ho * g.wo];
        {
            let x = self.value(input);
            let wt = self.value(kernel);
            let mut buf = Vec::new();
            for ni in 0..n {
                for ko in 0..k {
                    let obase = (ni * k + ko) * g.ho * g.wo;
                    for ci in 0..cg {
                        let cin = g.in_channel(ko, ci);
                        let xbase = (ni * c + cin) * h * w;
                        for i in 0..kh {
                            for j in 0..kw {
                                let wv = wt[((ko * cg + ci) * kh + i) * kw + j];
                                for r in 0..g.ho {
                                    let start = xbase + (r * sh + i) * w + j;
                                    let xs = strided(x, start, sw, g.wo, &mut buf);
                                    let orow = &mut out[obase + r * g.wo..obase + (r + 1) * g.wo];
                                    axpy(wv, xs, orow);
                                }
                            }
                        }
                    }
                }
            }
        }

        Ok(self.push(
            vec![n, k, g.ho, g.wo],
            out,
            "conv2d",
            vec![input, kernel],
            Box::new(move |ctx, grad, sink| {
                if sink.wants(kernel) {
                    let x = ctx.value(input);
                    let gk = sink.slot(kernel).expect("wanted");
                    let mut buf = Vec::new();
                    for ni in 0..g.n {
                        for ko in 0..g.k {
                            let obase = (ni * g.k + ko) * g.ho * g.wo;
                            for ci in 0..g.cg {
                                let cin = g.in_channel(ko, ci);
                                let xbase = (ni * g.c + cin) * g.h * g.w;
                                for i in 0..g.kh {
                                    for j in 0..g.kw {
                                        let mut acc = 0.0;
                                        for r in 0..g.ho {
                                            let start = xbase + (r * g.sh + i) * g.w + j;
                                            let xs = strided(x, start, g.sw, g.wo, &mut buf);
                                            let grow =
                                                &grad[obase + r * g.wo..obase + (r + 1) * g.wo];
                                            acc += dot(grow, xs);
                                        }
                                        gk[((ko * g.cg + ci) * g.kh + i) * g.kw + j] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                if sink.wants(input) {
                    let wt = ctx.value(kernel);
                    let gx = sink.slot(input).expect("wanted");
                    for ni in 0..g.n {
                        for ko in 0..g.k {
                            let obase = (ni * g.k + ko) * g.ho * g.wo;
                            for ci in 0..g.cg {
                                let cin = g.in_channel(ko, ci);
                                let xbase = (ni * g.c + cin) * g.h * g.w;
                                for i in 0..g.kh {
                                    for j in 0..g.kw {
                                        let wv = wt[((ko * g.cg + ci) * g.kh + i) * g.kw + j];
                                        for r in 0..g.ho {
                                            let grow =
                                                &grad[obase + r * g.wo..obase + (r + 1) * g.wo];
                                            let start = xbase + (r * g.sh + i) * g.w + j;
                                            if g.sw == 1 {
                                                axpy(wv, grow, &mut gx[start..start + g.wo]);
                                            } else {
                                                for (q, gv) in grow.iter().enumerate() {
                                                    gx[start + q * g.sw] += wv * gv;
                                                }
                                            }
                                        }
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
