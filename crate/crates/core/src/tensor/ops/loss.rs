use super::activation::softmax_rows;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{shape_err, Result, TensorError};

impl Tape {
    /// Mean cross-entropy of softmax(`logits`) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let [n, c] = <[usize; 2]>::try_from(shape.as_slice()).map_err(|_| {
            shape_err(
                "cross_entropy",
                format!("logits must be (N, C), got {shape:?}"),
            )
        })?;
        if targets.len() != n {
            return Err(shape_err(
                "cross_entropy",
                format!("{n} rows, {} targets", targets.len()),
            ));
        }
        if n == 0 || c == 0 {
            return Err(TensorError::EmptyAxis("cross_entropy"));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(shape_err(
                "cross_entropy",
                format!("target {bad} >= {c} classes"),
            ));
        }
        let probs = softmax_rows(self.value(logits), c);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -probs[i * c + t].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n as f64;
        let targets = targets.to_vec();
        Ok(self.push(
            vec![1],
            vec![loss],
            "cross_entropy",
            vec![logits],
            Box::new(move |_, g, sink| {
                if let Some(gl) = sink.slot(logits) {
                    let scale = g[0] / n as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }),
        ))
    }
}
