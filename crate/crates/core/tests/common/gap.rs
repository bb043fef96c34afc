//! Oracle network for Grad-CAM: with a global-average-pool head the
//! class-map weights are known in closed form.

use neurocam::edf::ClassLabel;
use neurocam::explain::{grad_cam, ClassScorer, Result};
use neurocam::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// x → temporal conv (k maps, length l) → [ELU] → hook "feat" → global
/// average pool → linear (k × 2). With the GAP head, Grad-CAM weights are
/// the classifier column divided by the pooled area.
pub struct GapScorer {
    pub c: usize,
    pub t: usize,
    pub kernel: Tensor,
    pub classifier: Tensor,
    pub elu: bool,
}

impl GapScorer {
    pub fn random(c: usize, t: usize, k: usize, l: usize, elu: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| {
            (0..n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        Self {
            c,
            t,
            kernel: Tensor::new(vec![k, 1, 1, l], draw(k * l)).unwrap(),
            classifier: Tensor::new(vec![k, 2], draw(2 * k)).unwrap(),
            elu,
        }
    }

    pub fn k(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn t1(&self) -> usize {
        self.t - self.kernel.shape()[3] + 1
    }
}

impl ClassScorer for GapScorer {
    fn input_dims(&self) -> (usize, usize) {
        (self.c, self.t)
    }

    fn scores(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let w = tape.constant(self.kernel.clone());
        let mut a = tape.conv2d(input, w, (1, 1))?;
        if self.elu {
            a = tape.elu(a);
        }
        tape.hook("feat", a);
        let pooled = tape.avg_pool2d(a, (self.c, self.t1()), (1, 1))?;
        let flat = tape.reshape(pooled, &[1, self.k()])?;
        let fc = tape.constant(self.classifier.clone());
        Ok(tape.matmul(flat, fc)?)
    }
}

/// Worst |w_k·Z − classifier column| and worst |coarse − ReLU(Σ w_k A^k)|
/// over both classes of one random GAP network.
pub fn gap_oracle_errors(seed: u64) -> (f64, f64) {
    let s = GapScorer::random(4, 20, 3, 5, false, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let x: Vec<f64> = (0..4 * 20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut w_err, mut map_err) = (0.0f64, 0.0f64);
    for class in ClassLabel::ALL {
        let cam = grad_cam(&s, &x, class, "feat").unwrap();
        let z = (4 * s.t1()) as f64;
        assert_eq!((cam.height, cam.width), (4, s.t1()));
        for k in 0..s.k() {
            let expect = s.classifier.data()[k * 2 + class.index()];
            w_err = w_err.max((cam.weights[k] * z - expect).abs());
        }
        // Coarse map is ReLU of the weighted activation sum, recomputed here.
        let mut tape = Tape::new();
        let xi = tape.constant(Tensor::new(vec![1, 1, 4, 20], x.clone()).unwrap());
        s.scores(&mut tape, xi).unwrap();
        let a = tape.value(tape.hooked("feat").unwrap()).to_vec();
        let plane = cam.z;
        for i in 0..plane {
            let lin: f64 = (0..s.k()).map(|k| cam.weights[k] * a[k * plane + i]).sum();
            map_err = map_err.max((cam.coarse[i] - lin.max(0.0)).abs());
        }
    }
    (w_err, map_err)
}
