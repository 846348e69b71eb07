use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use super::{activation, NnError};
use crate::codec::{CodecError, Decoder, Encoder};

/// Dense feed-forward network: tanh on hidden layers, linear output.
///
/// Parameters live in one flat buffer. Layer `l` stores its weight matrix
/// `(in_l, out_l)` row-major followed by its bias `(out_l)`, layers in order.
/// The same layout is used for gradients, optimizer moments and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer outputs of a batched forward pass, kept for backprop.
/// `outputs[0]` is the input batch; `outputs[l + 1]` is layer `l`'s output.
#[derive(Debug, Clone)]
pub struct Activations {
    outputs: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

const MLP_MAGIC: &[u8; 8] = b"TRAYMLP\0";
const MLP_VERSION: u32 = 1;

impl Mlp {
    /// Uniform fan-in initialization: weights and biases of layer `l` drawn
    /// from `U(-1/sqrt(in_l), 1/sqrt(in_l))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        let net = Self::zeros(sizes);
        if params.len() != net.params.len() {
            return Err(NnError::ShapeMismatch {
                what: "parameter vector",
                expected: net.params.len(),
                found: params.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }
    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// Weight `(in, out)` and bias `(out)` views for one layer.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.offset(l);
        let w = ArrayView2::from_shape((i, o), &self.params[off..off + i * o]).unwrap();
        let b = ArrayView1::from(&self.params[off + i * o..off + i * o + o]);
        (w, b)
    }

    fn check_input(&self, n: usize) -> Result<(), NnError> {
        if n != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "input",
                expected: self.input_dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward_batch(x)?.output().row(0).to_vec())
    }

    /// Batched forward pass over rows of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Activations, NnError> {
        self.check_input(x.ncols())?;
        let mut outputs = Vec::with_capacity(self.sizes.len());
        outputs.push(x.to_owned());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let mut z = outputs[l].dot(&w);
            z += &b;
            if l < last {
                activation::tanh_in_place(z.as_slice_mut().expect("fresh dot output is contiguous"));
            }
            outputs.push(z);
        }
        Ok(Activations { outputs })
    }

    /// Reverse-mode pass for a batch.
    ///
    /// `out_grad` is dL/d(output) per row. When `param_grads` is given it is
    /// overwritten with dL/d(params) summed over the batch. Returns
    /// dL/d(input) when `want_input_grad` is set.
    pub fn backward_batch(
        &self,
        acts: &Activations,
        out_grad: ArrayView2<'_, f64>,
        mut param_grads: Option<&mut [f64]>,
        want_input_grad: bool,
    ) -> Result<Option<Array2<f64>>, NnError> {
        let batch = acts.outputs[0].nrows();
        if out_grad.dim() != (batch, self.output_dim()) {
            return Err(NnError::ShapeMismatch {
                what: "output gradient",
                expected: batch * self.output_dim(),
                found: out_grad.len(),
            });
        }
        if let Some(g) = param_grads.as_deref() {
            if g.len() != self.n_params() {
                return Err(NnError::ShapeMismatch {
                    what: "gradient buffer",
                    expected: self.n_params(),
                    found: g.len(),
                });
            }
        }
        let last = self.num_layers() - 1;
        let mut delta = out_grad.to_owned();
        for l in (0..self.num_layers()).rev() {
            if l < last {
                // tanh'(z) = 1 - tanh(z)^2, and outputs[l + 1] holds tanh(z)
                ndarray::Zip::from(&mut delta)
                    .and(&acts.outputs[l + 1])
                    .for_each(|d, &a| *d *= 1.0 - a * a);
            }
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            if let Some(g) = param_grads.as_deref_mut() {
                let off = self.offset(l);
                let (gw, gb) = g[off..off + i * o + o].split_at_mut(i * o);
                let mut gw = ArrayViewMut2::from_shape((i, o), gw).unwrap();
                general_mat_mul(1.0, &acts.outputs[l].t(), &delta, 0.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb.assign(&delta.sum_axis(Axis(0)));
            }
            if l > 0 || want_input_grad {
                let (w, _) = self.layer(l);
                delta = delta.dot(&w.t());
            }
        }
        Ok(want_input_grad.then_some(delta))
    }

    /// Single-sample reverse pass: (dL/d(params), dL/d(input)).
    pub fn backward(
        &self,
        input: &[f64],
        output_grad: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        self.check_input(input.len())?;
        if output_grad.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch {
                what: "output gradient",
                expected: self.output_dim(),
                found: output_grad.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let acts = self.forward_batch(x)?;
        let og = ArrayView2::from_shape((1, output_grad.len()), output_grad).unwrap();
        let mut grads = vec![0.0; self.n_params()];
        let dx = self
            .backward_batch(&acts, og, Some(&mut grads), true)?
            .expect("input grad requested");
        Ok((grads, dx.row(0).to_vec()))
    }

    /// `self <- (1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.sizes, source.sizes, "polyak update between different shapes");
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }

    /// Writes `TRAYMLP\0`, version (u32), layer sizes, then the flat
    /// parameters as little-endian f64.
    pub fn encode(&self, enc: &mut Encoder) {
        enc.magic(MLP_MAGIC, MLP_VERSION);
        enc.usizes(&self.sizes);
        enc.f64s(&self.params);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.expect_version(MLP_MAGIC, "mlp", MLP_VERSION)?;
        let sizes = dec.usizes()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(CodecError::Invalid(format!("layer sizes {sizes:?}")));
        }
        let params = dec.f64s()?;
        Mlp::from_params(&sizes, params).map_err(|e| CodecError::Invalid(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        Self::decode(&mut Decoder::new(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    /// Plain nested-loop forward pass, independent of the ndarray path.
    fn oracle_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let sizes = net.sizes();
        let p = net.params();
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let mut y = vec![0.0; o];
            for j in 0..o {
                let mut acc = p[off + i * o + j];
                for k in 0..i {
                    acc += x[k] * p[off + k * o + j];
                }
                y[j] = if l + 2 < sizes.len() { acc.tanh() } else { acc };
            }
            off += i * o + o;
            x = y;
        }
        x
    }

    #[test]
    fn zero_net_gives_zero() {
        let net = Mlp::zeros(&[6, 64, 64, 2]);
        assert_eq!(net.forward(&[0.3; 6]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_one_by_one() {
        let net = Mlp::from_params(&[1, 1], vec![1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.5]).unwrap(), vec![0.5]);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = seeded(11);
        for _ in 0..5 {
            let net = Mlp::new(&[6, 64, 64, 2], &mut rng);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = net.forward(&x).unwrap();
            let slow = oracle_forward(&net, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let net = Mlp::zeros(&[3, 2]);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            net.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_output_grad_zero_gradients() {
        let mut rng = seeded(2);
        let net = Mlp::new(&[4, 8, 3], &mut rng);
        let (g, dx) = net.backward(&[0.1, -0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_grad() {
        let mut rng = seeded(3);
        let net = Mlp::new(&[4, 8, 3], &mut rng);
        let x = [0.1, -0.2, 0.3, 0.4];
        let (g1, d1) = net.backward(&x, &[0.5, -1.0, 2.0]).unwrap();
        let (g2, d2) = net.backward(&x, &[1.0, -2.0, 4.0]).unwrap();
        for (a, b) in g1.iter().zip(&g2).chain(d1.iter().zip(&d2)) {
            assert!((2.0 * a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_rows() {
        let mut rng = seeded(4);
        let net = Mlp::new(&[3, 5, 2], &mut rng);
        let xs = [[0.1, 0.2, 0.3], [-0.5, 0.4, 0.0]];
        let gs = [[1.0, -0.5], [0.25, 2.0]];
        let flat_x: Vec<f64> = xs.iter().flatten().copied().collect();
        let flat_g: Vec<f64> = gs.iter().flatten().copied().collect();
        let acts = net
            .forward_batch(ArrayView2::from_shape((2, 3), &flat_x).unwrap())
            .unwrap();
        let mut batch = vec![0.0; net.n_params()];
        net.backward_batch(
            &acts,
            ArrayView2::from_shape((2, 2), &flat_g).unwrap(),
            Some(&mut batch),
            false,
        )
        .unwrap();
        let (a, _) = net.backward(&xs[0], &gs[0]).unwrap();
        let (b, _) = net.backward(&xs[1], &gs[1]).unwrap();
        for k in 0..batch.len() {
            assert!((batch[k] - a[k] - b[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn codec_round_trip_is_bit_exact() {
        let mut rng = seeded(5);
        let net = Mlp::new(&[7, 64, 64, 1], &mut rng);
        let back = Mlp::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back.sizes(), net.sizes());
        assert!(back
            .params()
            .iter()
            .zip(net.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn polyak_extremes() {
        let mut rng = seeded(6);
        let a = Mlp::new(&[2, 3, 1], &mut rng);
        let mut b = Mlp::new(&[2, 3, 1], &mut rng);
        let orig = b.clone();
        b.soft_update_from(&a, 0.0);
        assert_eq!(b, orig);
        b.soft_update_from(&a, 1.0);
        assert_eq!(b, a);
    }
}
