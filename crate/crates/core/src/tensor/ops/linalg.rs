use crate::tensor::tape::{Tape, Var};
use crate::tensor::{axpy, dot, shape_err, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

impl Tape {
    /// Matrix product. Accepts `(M,K)·(K,N)` or batched `(B,M,K)·(B,K,N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
            _ => return Err(shape_err("matmul", format!("{sa:?} · {sb:?}"))),
        };
        let out_shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let mut data = vec![0.0; batch * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for t in 0..batch {
                gemm_acc(
                    &av[t * m * k..(t + 1) * m * k],
                    &bv[t * k * n..(t + 1) * k * n],
                    &mut data[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(self.push(
            out_shape,
            data,
            "matmul",
            vec![a, b],
            Box::new(move |ctx, g, sink| {
                if sink.wants(a) {
                    let bv = ctx.value(b);
                    let ga = sink.slot(a).expect("wanted");
                    // dA = dC · Bᵀ
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &bv[t * k * n..(t + 1) * k * n];
                        let gat = &mut ga[t * m * k..(t + 1) * m * k];
                        for i in 0..m {
                            let grow = &gt[i * n..(i + 1) * n];
                            for p in 0..k {
                                gat[i * k + p] += dot(grow, &bt[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                if sink.wants(b) {
                    let av = ctx.value(a);
                    let gb = sink.slot(b).expect("wanted");
                    // dB = Aᵀ · dC
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &av[t * m * k..(t + 1) * m * k];
                        let gbt = &mut gb[t * k * n..(t + 1) * k * n];
                        for i in 0..m {
                            let grow = &gt[i * n..(i + 1) * n];
                            for p in 0..k {
                                let coeff = at[i * k + p];
                                if coeff != 0.0 {
                                    axpy(coeff, grow, &mut gbt[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    }
                }
            }),
        ))
    }
}
