use crate::tensor::tape::{Tape, Var};
use crate::tensor::{shape_err, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (with shape `shape`) into the axis order `perm`.
fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(src[offset]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), shape),
            ));
        }
        let data = self.value(x).to_vec();
        Ok(self.push(
            shape.to_vec(),
            data,
            "reshape",
            vec![x],
            Box::new(move |_, g, sink| sink.accumulate(x, g)),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(shape_err(
                "permute",
                format!("perm {perm:?} for shape {shape:?}"),
            ));
        }
        let (out_shape, data) = permute_data(self.value(x), &shape, perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(self.push(
            out_shape,
            data,
            "permute",
            vec![x],
            Box::new(move |_, g, sink| {
                if sink.wants(x) {
                    let (_, back) = permute_data(g, &out_shape_c, &inverse);
                    sink.accumulate(x, &back);
                }
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(shape_err("transpose", "needs at least 2 axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(x, &perm)
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(
                "concat",
                format!("axis {axis} for shape {base:?}"),
            ));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(shape_err(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            widths.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total_width: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total_width * inner);
        for o in 0..outer {
            for (&p, &wd) in parts.iter().zip(&widths) {
                let v = self.value(p);
                data.extend_from_slice(&v[o * wd * inner..(o + 1) * wd * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total_width;
        let parts_owned = parts.to_vec();
        Ok(self.push(
            shape,
            data,
            "concat",
            parts_owned.clone(),
            Box::new(move |_, g, sink| {
                let mut offset = 0;
                for (&p, &wd) in parts_owned.iter().zip(&widths) {
                    if let Some(gp) = sink.slot(p) {
                        for o in 0..outer {
                            let src = &g[o * total_width * inner + offset * inner
                                ..o * total_width * inner + (offset + wd) * inner];
                            for (s, v) in
                                gp[o * wd * inner..(o + 1) * wd * inner].iter_mut().zip(src)
                            {
                                *s += v;
                            }
                        }
                    }
                    offset += wd;
                }
            }),
        ))
    }
}
