//! Dense feed-forward network: leaky-rectified hidden layers, linear output.
//!
//! Batches are row-major, one instance per row. Weight matrices are stored
//! fan-in × fan-out so a layer is `z = a·W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DrnError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
    pub leaky_slope: T,
}

/// Per-parameter derivatives, shape-congruent with [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

/// Inverted-dropout masks for the hidden layers of one batch.
///
/// Each entry is `0` for a dropped unit and `1/(1 - rate)` for a survivor.
#[derive(Debug, Clone)]
pub struct DropoutMasks<T> {
    layers: Vec<Array2<T>>,
}

/// Activations retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Input to each layer (post-activation, post-mask of the previous one).
    inputs: Vec<Array2<T>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<T>>,
    output: Array2<T>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>, leaky_slope: T) -> Result<Self> {
        if weights.is_empty() {
            return Err(DrnError::invalid("an MLP needs at least one layer"));
        }
        if weights.len() != biases.len() {
            return Err(DrnError::Dimension {
                context: "MLP bias vectors",
                expected: weights.len(),
                found: biases.len(),
            });
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != b.len() {
                return Err(DrnError::Dimension {
                    context: "MLP bias width",
                    expected: w.ncols(),
                    found: b.len(),
                });
            }
            if l + 1 < weights.len() && w.ncols() != weights[l + 1].nrows() {
                return Err(DrnError::Dimension {
                    context: "MLP adjacent layers",
                    expected: w.ncols(),
                    found: weights[l + 1].nrows(),
                });
            }
        }
        let params = Self {
            weights,
            biases,
            leaky_slope,
        };
        if !params.is_finite() {
            return Err(DrnError::invalid("MLP parameters must be finite"));
        }
        Ok(params)
    }

    /// Glorot-uniform weights on `±sqrt(6/(fan_in + fan_out))`, zero biases.
    ///
    /// `sizes` lists every layer width, input first and output last.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                T::c(rng.random_range(-limit..limit))
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Self {
            weights,
            biases,
            leaky_slope: T::c(DEFAULT_LEAKY_SLOPE),
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            weights: sizes
                .windows(2)
                .map(|p| Array2::zeros((p[0], p[1])))
                .collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            leaky_slope: T::c(DEFAULT_LEAKY_SLOPE),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].ncols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1]
            .iter()
            .map(|w| w.ncols())
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// All parameters in a fixed order: weights layer by layer, then biases.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.biases.iter_mut().flat_map(|b| b.iter_mut()))
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(DrnError::Dimension {
                context: "MLP input",
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn check_masks(&self, n: usize, masks: &DropoutMasks<T>) -> Result<()> {
        let widths = self.hidden_widths();
        if masks.layers.len() != widths.len() {
            return Err(DrnError::Dimension {
                context: "dropout mask layers",
                expected: widths.len(),
                found: masks.layers.len(),
            });
        }
        for (m, &w) in masks.layers.iter().zip(&widths) {
            if m.dim() != (n, w) {
                return Err(DrnError::Dimension {
                    context: "dropout mask width",
                    expected: w,
                    found: m.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Raw network outputs for every row of `x`.
    pub fn forward(&self, x: ArrayView2<T>, masks: Option<&DropoutMasks<T>>) -> Result<Array2<T>> {
        Ok(self.forward_trace(x, masks)?.output)
    }

    /// Raw outputs for a single instance.
    pub fn forward_one(&self, x: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.forward(view, None)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_trace(&self, x: ArrayView2<T>, masks: Option<&DropoutMasks<T>>) -> Result<Trace<T>> {
        self.check_input(&x)?;
        if let Some(m) = masks {
            self.check_masks(x.nrows(), m)?;
        }
        let last = self.weights.len() - 1;
        let slope = self.leaky_slope;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            inputs.push(a);
            if l == last {
                return Ok(Trace {
                    inputs,
                    pre,
                    output: z,
                });
            }
            let mut h = z.mapv(|v| if v >= T::zero() { v } else { slope * v });
            if let Some(m) = masks {
                h *= &m.layers[l];
            }
            pre.push(z);
            a = h;
        }
        unreachable!("loop returns at the output layer")
    }

    /// Reverse-mode pass: parameter gradients given `∂loss/∂outputs`.
    pub fn backward(&self, trace: &Trace<T>, d_out: ArrayView2<T>, masks: Option<&DropoutMasks<T>>) -> Gradients<T> {
        let n_layers = self.weights.len();
        let slope = self.leaky_slope;
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        let mut delta = d_out.to_owned();
        for l in (0..n_layers).rev() {
            gw.push(trace.inputs[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if l == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.weights[l].t());
            if let Some(m) = masks {
                upstream *= &m.layers[l - 1];
            }
            Zip::from(&mut upstream)
                .and(&trace.pre[l - 1])
                .for_each(|d, &z| {
                    if z < T::zero() {
                        *d = *d * slope;
                    }
                });
            delta = upstream;
        }
        gw.reverse();
        gb.reverse();
        Gradients {
            weights: gw,
            biases: gb,
        }
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .chain(self.biases.iter_mut().flat_map(|b| b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_congruent(&self, params: &MlpParams<T>) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.dim() == w.dim())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(g, b)| g.len() == b.len())
    }
}

impl<T: Scalar> DropoutMasks<T> {
    /// Draws Bernoulli keep/drop decisions for each hidden unit of `n` rows.
    pub fn sample<R: Rng + ?Sized>(params: &MlpParams<T>, n: usize, rate: f64, rng: &mut R) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        let keep = T::c(1.0 / (1.0 - rate));
        let layers = params
            .hidden_widths()
            .into_iter()
            .map(|w| {
                Array2::from_shape_simple_fn((n, w), || {
                    if rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
            })
            .collect();
        Self { layers }
    }

    /// Masks from explicit keep flags (`true` keeps the unit).
    pub fn from_keep_flags(flags: &[Array2<bool>], rate: f64) -> Self {
        let keep = T::c(1.0 / (1.0 - rate));
        Self {
            layers: flags
                .iter()
                .map(|f| f.mapv(|k| if k { keep } else { T::zero() }))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::<f64>::zeros(&[3, 4, 2]);
        let out = p.forward(array![[1.0, -2.0, 3.0]].view(), None).unwrap();
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    #[test]
    fn leaky_hidden_value() {
        // One hidden unit with weight 1: the hidden value is exposed through an
        // identity output layer.
        let p = MlpParams::new(
            vec![array![[1.0]], array![[1.0]]],
            vec![array![0.0], array![0.0]],
            0.01,
        )
        .unwrap();
        assert_eq!(p.forward_one(&[-1.0]).unwrap(), vec![-0.01]);
        assert_eq!(p.forward_one(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = MlpParams::<f64>::init(&[3, 5, 4, 2], &mut rng);
        for b in p.biases.iter_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = [0.3, -1.1, 0.7];
        let out = p.forward_one(&x).unwrap();
        // Independent recomputation with explicit index loops.
        let mut a: Vec<f64> = x.to_vec();
        for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
            let mut z = vec![0.0; w.ncols()];
            for j in 0..w.ncols() {
                let mut s = b[j];
                for i in 0..w.nrows() {
                    s += a[i] * w[[i, j]];
                }
                z[j] = if l + 1 < p.weights.len() && s < 0.0 { 0.01 * s } else { s };
            }
            a = z;
        }
        for (o, e) in out.iter().zip(&a) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_shape_mismatches() {
        assert!(MlpParams::new(
            vec![Array2::<f64>::zeros((2, 3)), Array2::zeros((4, 1))],
            vec![Array1::zeros(3), Array1::zeros(1)],
            0.01
        )
        .is_err());
        let p = MlpParams::<f64>::zeros(&[2, 3, 1]);
        assert!(matches!(
            p.forward(array![[1.0, 2.0, 3.0]].view(), None),
            Err(DrnError::Dimension { .. })
        ));
        let masks = DropoutMasks::<f64>::from_keep_flags(&[Array2::from_elem((1, 4), true)], 0.5);
        assert!(p.forward(array![[1.0, 2.0]].view(), Some(&masks)).is_err());
    }

    #[test]
    fn masks_zero_and_rescale() {
        let p = MlpParams::new(
            vec![array![[1.0, 1.0]], array![[1.0], [1.0]]],
            vec![array![0.0, 0.0], array![0.0]],
            0.01,
        )
        .unwrap();
        let flags = [array![[true, false]]];
        let masks = DropoutMasks::from_keep_flags(&flags, 0.5);
        let out = p.forward(array![[3.0]].view(), Some(&masks)).unwrap();
        assert_eq!(out[[0, 0]], 6.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::<f64>::init(&[4, 16, 16, 3], &mut rng);
        let x = Array2::from_shape_fn((7, 4), |(i, j)| (i as f64 - 3.0) * 0.3 + j as f64 * 0.1);
        let masks = DropoutMasks::sample(&p, 7, 0.3, &mut rng);
        let a = p.forward(x.view(), Some(&masks)).unwrap();
        let b = p.forward(x.view(), Some(&masks)).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
