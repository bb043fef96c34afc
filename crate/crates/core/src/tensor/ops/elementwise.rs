use crate::tensor::tape::{Tape, Var};
use crate::tensor::{shape_err, Result};

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(
            shape,
            data,
            "add",
            vec![a, b],
            Box::new(move |_, g, sink| {
                sink.accumulate(a, g);
                sink.accumulate(b, g);
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(
            shape,
            data,
            "sub",
            vec![a, b],
            Box::new(move |_, g, sink| {
                sink.accumulate(a, g);
                if let Some(gb) = sink.slot(b) {
                    for (s, x) in gb.iter_mut().zip(g) {
                        *s -= x;
                    }
                }
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(
            shape,
            data,
            "mul",
            vec![a, b],
            Box::new(move |ctx, g, sink| {
                if sink.wants(a) {
                    let other = ctx.value(b);
                    let ga = sink.slot(a).expect("wanted");
                    for ((s, gi), o) in ga.iter_mut().zip(g).zip(other) {
                        *s += gi * o;
                    }
                }
                if sink.wants(b) {
                    let other = ctx.value(a);
                    let gb = sink.slot(b).expect("wanted");
                    for ((s, gi), o) in gb.iter_mut().zip(g).zip(other) {
                        *s += gi * o;
                    }
                }
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let data = self.value(a).iter().map(|x| x * factor).collect();
        self.push(
            shape,
            data,
            "scale",
            vec![a],
            Box::new(move |_, g, sink| {
                if let Some(ga) = sink.slot(a) {
                    for (s, gi) in ga.iter_mut().zip(g) {
                        *s += gi * factor;
                    }
                }
            }),
        )
    }

    /// Adds `bias` (length = last dimension of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().unwrap_or(&0);
        if self.shape(bias).iter().product::<usize>() != width || width == 0 {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} for input {:?}", self.shape(bias), shape),
            ));
        }
        let b = self.value(bias).to_vec();
        let mut data = self.value(x).to_vec();
        for row in data.chunks_exact_mut(width) {
            for (v, bi) in row.iter_mut().zip(&b) {
                *v += bi;
            }
        }
        Ok(self.push(
            shape,
            data,
            "add_bias",
            vec![x, bias],
            Box::new(move |_, g, sink| {
                sink.accumulate(x, g);
                if let Some(gb) = sink.slot(bias) {
                    for row in g.chunks_exact(width) {
                        for (s, gi) in gb.iter_mut().zip(row) {
                            *s += gi;
                        }
                    }
                }
            }),
        ))
    }

    /// Sum of all elements, as a shape-[1] node.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).iter().sum();
        let n = self.value(a).len();
        self.push(
            vec![1],
            vec![total],
            "sum",
            vec![a],
            Box::new(move |_, g, sink| {
                if let Some(ga) = sink.slot(a) {
                    debug_assert_eq!(ga.len(), n);
                    for s in ga.iter_mut() {
                        *s += g[0];
                    }
                }
            }),
        )
    }

    /// Mean of all elements, as a shape-[1] node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(crate::tensor::TensorError::EmptyAxis("mean"));
        }
        let total: f64 = self.value(a).iter().sum();
        let inv = 1.0 / n as f64;
        Ok(self.push(
            vec![1],
            vec![total * inv],
            "mean",
            vec![a],
            Box::new(move |_, g, sink| {
                if let Some(ga) = sink.slot(a) {
                    for s in ga.iter_mut() {
                        *s += g[0] * inv;
                    }
                }
            }),
        ))
    }
}
