//! Batched forward and reverse-mode passes over a [`ParamVector`].

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::{OutputActivation, ParamVector};
use crate::error::{Error, Result};

/// Activations recorded by [`forward_batch_taped`] for a later backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input of every layer: the batch itself, then each rectified hidden output.
    layer_inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

fn check_input(params: &ParamVector, input: &ArrayView2<f64>) -> Result<()> {
    let expected = params.spec().input_dim;
    if input.ncols() != expected {
        return Err(Error::Shape(format!("network expects input dim {expected}, got {}", input.ncols())));
    }
    Ok(())
}

fn weight_view(params: &ParamVector, offset: usize, fan_out: usize, fan_in: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((fan_out, fan_in), &params.values()[offset..offset + fan_out * fan_in])
        .expect("layout computed from spec")
}

fn run_forward(params: &ParamVector, input: ArrayView2<f64>, keep: bool) -> (Array2<f64>, Vec<Array2<f64>>) {
    let layers = params.spec().layers();
    let last = layers.len() - 1;
    let mut kept = Vec::with_capacity(if keep { layers.len() } else { 0 });
    let mut current = input.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        let w = weight_view(params, layer.weight_offset, layer.fan_out, layer.fan_in);
        let bias = ArrayView1::from(&params.values()[layer.bias_offset..layer.end()]);
        let mut z = Array2::from_shape_fn((current.nrows(), layer.fan_out), |(_, j)| bias[j]);
        general_mat_mul(1.0, &current, &w.t(), 1.0, &mut z);
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        } else if let OutputActivation::BoundedSquash { bound } = params.spec().output_activation {
            z.mapv_inplace(|v| bound * v.tanh());
        }
        if keep {
            kept.push(std::mem::replace(&mut current, z));
        } else {
            current = z;
        }
    }
    (current, kept)
}

/// Forward pass over a `[batch, input_dim]` matrix.
pub fn forward_batch(params: &ParamVector, input: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(params, &input)?;
    Ok(run_forward(params, input, false).0)
}

pub fn forward_batch_taped(params: &ParamVector, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
    check_input(params, &input)?;
    let (output, layer_inputs) = run_forward(params, input, true);
    Ok((output.clone(), Tape { layer_inputs, output }))
}

/// Reverse-mode pass for a taped forward.
///
/// Parameter gradients of `sum(upstream * output)` are *accumulated* into
/// `param_grads` when given; the gradient with respect to the network input
/// is always returned.
pub fn backward_batch(
    params: &ParamVector,
    tape: &Tape,
    upstream: ArrayView2<f64>,
    mut param_grads: Option<&mut [f64]>,
) -> Result<Array2<f64>> {
    let spec = params.spec();
    if upstream.dim() != tape.output.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.dim(),
            tape.output.dim()
        )));
    }
    if let Some(g) = param_grads.as_deref() {
        if g.len() != params.len() {
            return Err(Error::Shape(format!("gradient buffer has {} entries, expected {}", g.len(), params.len())));
        }
    }
    let layers = spec.layers();
    if tape.layer_inputs.len() != layers.len() {
        return Err(Error::Shape("tape was recorded for a different network".into()));
    }

    let mut delta = upstream.to_owned();
    if let OutputActivation::BoundedSquash { bound } = spec.output_activation {
        ndarray::Zip::from(&mut delta).and(&tape.output).for_each(|d, &y| {
            let t = y / bound;
            *d *= bound * (1.0 - t * t);
        });
    }

    for (l, layer) in layers.iter().enumerate().rev() {
        let a_in = &tape.layer_inputs[l];
        let w = weight_view(params, layer.weight_offset, layer.fan_out, layer.fan_in);
        if let Some(grads) = param_grads.as_deref_mut() {
            let (w_grad, rest) = grads[layer.weight_offset..layer.end()].split_at_mut(layer.fan_out * layer.fan_in);
            let mut w_grad = ArrayViewMut2::from_shape((layer.fan_out, layer.fan_in), w_grad)
                .expect("layout computed from spec");
            general_mat_mul(1.0, &delta.t(), a_in, 1.0, &mut w_grad);
            for (b, s) in rest.iter_mut().zip(delta.sum_axis(Axis(0))) {
                *b += s;
            }
        }
        let mut prev = delta.dot(&w);
        if l > 0 {
            ndarray::Zip::from(&mut prev).and(a_in).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        delta = prev;
    }
    Ok(delta)
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    let view = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    Ok(forward_batch(params, view)?.into_raw_vec_and_offset().0)
}

/// Single-sample reverse pass: `(parameter gradient, input gradient)` of
/// `upstream · f(input)`.
pub fn mlp_backward(params: &ParamVector, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let view = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    let (_, tape) = forward_batch_taped(params, view)?;
    let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
    let mut grads = vec![0.0; params.len()];
    let input_grad = backward_batch(params, &tape, up, Some(&mut grads))?;
    Ok((grads, input_grad.into_raw_vec_and_offset().0))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::nn::NetworkSpec;
    use crate::rng::rng_from_seed;

    fn unit_net() -> ParamVector {
        let spec = Arc::new(NetworkSpec::new(1, vec![1], 1, OutputActivation::Linear).unwrap());
        // w1, b1, w2, b2
        ParamVector::new(spec, vec![1.0, 0.0, 1.0, 0.0]).unwrap()
    }

    /// Deterministic fixture shared with the external high-precision oracle:
    /// parameter i is `0.5 * sin(1.3 * i + 0.7)` evaluated in f64.
    fn fixture_net(activation: OutputActivation) -> ParamVector {
        let spec = Arc::new(NetworkSpec::new(3, vec![5, 4], 2, activation).unwrap());
        let values = (0..spec.param_count()).map(|i| 0.5 * (1.3 * i as f64 + 0.7).sin()).collect();
        ParamVector::new(spec, values).unwrap()
    }

    const FIXTURE_INPUT: [f64; 3] = [0.3, -1.2, 0.8];

    #[test]
    fn unit_net_passes_positive_input() {
        assert_eq!(mlp_forward(&unit_net(), &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn unit_net_rectifies_negative_input() {
        assert_eq!(mlp_forward(&unit_net(), &[-1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn unit_net_backward() {
        let (grads, input_grad) = mlp_backward(&unit_net(), &[1.0], &[1.0]).unwrap();
        assert_eq!(input_grad, vec![1.0]);
        // d/dw1 = w2 * x, d/db1 = w2, d/dw2 = h, d/db2 = 1
        assert_eq!(grads, vec![1.0, 1.0, 1.0, 1.0]);

        let (grads, input_grad) = mlp_backward(&unit_net(), &[-1.0], &[1.0]).unwrap();
        assert_eq!(input_grad, vec![0.0]);
        assert_eq!(&grads[..3], &[0.0, 0.0, 0.0]);
        // output bias is outside the dead unit
        assert_eq!(grads[3], 1.0);
    }

    #[test]
    fn shape_errors() {
        let net = unit_net();
        assert!(matches!(mlp_forward(&net, &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(mlp_backward(&net, &[1.0], &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn fixture_matches_high_precision_oracle() {
        // Frozen from an independent 50-digit evaluation of the same network.
        let linear = mlp_forward(&fixture_net(OutputActivation::Linear), &FIXTURE_INPUT).unwrap();
        let squash =
            mlp_forward(&fixture_net(OutputActivation::BoundedSquash { bound: 2.0 }), &FIXTURE_INPUT).unwrap();
        let expected_linear = GOLDEN_LINEAR;
        let expected_squash = GOLDEN_SQUASH;
        for (got, want) in linear.iter().zip(expected_linear).chain(squash.iter().zip(expected_squash)) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    const GOLDEN_LINEAR: [f64; 2] = [-0.176_895_849_128_307_95, 0.221_822_507_155_847_45];
    const GOLDEN_SQUASH: [f64; 2] = [-0.350_147_011_535_252_24, 0.436_508_884_551_668_65];

    fn finite_difference_check(activation: OutputActivation, seed: u64) {
        let spec = Arc::new(NetworkSpec::new(4, vec![6, 5], 3, activation).unwrap());
        let mut rng = rng_from_seed(seed);
        let params = ParamVector::init_uniform(spec.clone(), &mut rng);
        let input: Vec<f64> = (0..4).map(|i| 0.7 * (i as f64 + seed as f64).cos()).collect();
        let upstream = [0.3, -1.1, 0.6];
        let objective = |p: &ParamVector, x: &[f64]| -> f64 {
            mlp_forward(p, x).unwrap().iter().zip(upstream).map(|(y, u)| y * u).sum()
        };
        let (grads, input_grad) = mlp_backward(&params, &input, &upstream).unwrap();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (objective(&plus, &input) - objective(&minus, &input)) / (2.0 * h);
            assert_close(grads[i], fd, &format!("param {i}"));
        }
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus[i] += h;
            let mut minus = input.clone();
            minus[i] -= h;
            let fd = (objective(&params, &plus) - objective(&params, &minus)) / (2.0 * h);
            assert_close(input_grad[i], fd, &format!("input {i}"));
        }
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(err < 1e-4, "{what}: analytic {analytic} vs numeric {numeric}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            finite_difference_check(OutputActivation::Linear, seed);
            finite_difference_check(OutputActivation::BoundedSquash { bound: 1.5 }, seed);
        }
    }

    #[test]
    fn batched_matches_per_row() {
        let spec = Arc::new(NetworkSpec::new(3, vec![8], 2, OutputActivation::Linear).unwrap());
        let params = ParamVector::init_uniform(spec, &mut rng_from_seed(11));
        let batch = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.4 + j as f64 * 0.1);
        let out = forward_batch(&params, batch.view()).unwrap();
        for (i, row) in batch.rows().into_iter().enumerate() {
            let single = mlp_forward(&params, row.as_slice().unwrap()).unwrap();
            assert_eq!(out.row(i).to_vec(), single);
        }
    }
}
