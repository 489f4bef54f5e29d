use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gradient::Scalar;

/// Hidden widths: seven layers, 5745 parameters with 37 inputs.
pub const DEFAULT_HIDDEN: [usize; 7] = [52, 32, 32, 16, 16, 8, 8];

/// Fully connected ReLU network with one linear output.
///
/// Parameters are stored layer by layer, each as a row-major weight matrix
/// (`out x in`) followed by its bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Input width, hidden widths, then 1.
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
}

fn count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let n = count(&widths);
        Mlp {
            widths,
            params: vec![0.0; n],
        }
    }

    /// He-normal weights and zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden);
        let mut off = 0;
        for w in m.widths.clone().windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            for p in &mut m.params[off..off + w[0] * w[1]] {
                *p = normal.sample(rng);
            }
            off += w[0] * w[1] + w[1];
        }
        m
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Output for `x` with parameters `params` laid out as in [`Mlp`].
    pub fn forward<S: Scalar>(widths: &[usize], params: &[S], x: &[S]) -> S {
        assert_eq!(x.len(), widths[0], "input width");
        assert_eq!(params.len(), count(widths), "parameter count");
        let mut h: Vec<S> = x.to_vec();
        let mut off = 0;
        let last = widths.len() - 2;
        for (layer, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            h = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut acc = bias[o];
                    for (wi, hi) in row.iter().zip(&h) {
                        acc = acc + *wi * *hi;
                    }
                    if layer == last {
                        acc
                    } else {
                        acc.max_const(0.0)
                    }
                })
                .collect();
        }
        h[0]
    }

    /// Output with this network's weights held constant.
    pub fn forward_const<S: Scalar>(&self, x: &[S]) -> S {
        let params: Vec<S> = self.params.iter().map(|&p| S::constant(p)).collect();
        Self::forward(&self.widths, &params, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::NUM_FEATURES;

    #[test]
    fn default_size() {
        let m = Mlp::zeros(NUM_FEATURES, &DEFAULT_HIDDEN);
        assert_eq!(m.widths.len(), 9);
        assert_eq!(m.num_params(), 5745);
    }

    #[test]
    fn hand_computed_forward() {
        // 2 -> 2 -> 1; hidden = relu([x0 - x1, x0 + x1]), out = h0 + 2 h1 + 0.5
        let m = Mlp {
            widths: vec![2, 2, 1],
            params: vec![1.0, -1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 2.0, 0.5],
        };
        assert_eq!(m.forward_const(&[1.0, 3.0]), 0.0 + 8.0 + 0.5);
        assert_eq!(m.forward_const(&[3.0, 1.0]), 2.0 + 8.0 + 0.5);
    }
}
