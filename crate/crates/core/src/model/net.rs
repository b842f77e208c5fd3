//! Forward pass and backpropagation for the embedding + dense stack.

use super::config::FC_LAYERS;
use super::params::{ModelParams, Tensor};
use super::ModelError;

/// Per-layer values kept for backprop. `acts[0]` is the embedding row,
/// `acts[l + 1]` the activated output of dense layer `l`; `pre[l]` its
/// pre-activation.
struct Trace {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn dense(input: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut out = b.data.clone();
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(w.row(i)) {
            *o += x * wv;
        }
    }
    out
}

fn trace(params: &ModelParams, index: usize) -> Trace {
    let mut acts = Vec::with_capacity(FC_LAYERS + 1);
    let mut pre = Vec::with_capacity(FC_LAYERS);
    acts.push(params.embedding().row(index).to_vec());
    for l in 0..FC_LAYERS {
        let z = dense(&acts[l], params.weight(l), params.bias(l));
        let a = if l + 1 < FC_LAYERS {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        acts.push(a);
    }
    Trace { acts, pre }
}

/// Network output for bin `index` in normalized label units.
pub fn forward_normalized(params: &ModelParams, index: usize) -> Result<f64, ModelError> {
    if index >= params.num_bins() {
        return Err(ModelError::IndexOutOfRange {
            index,
            len: params.num_bins(),
        });
    }
    Ok(trace(params, index).acts[FC_LAYERS][0])
}

/// Predicted value for bin `index` in label units.
pub fn forward(params: &ModelParams, index: usize) -> Result<f64, ModelError> {
    Ok(forward_normalized(params, index)? * params.label_scale)
}

/// Gradients with the embedding kept sparse: only rows touched by the batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding_rows: Vec<(usize, Vec<f64>)>,
    /// Weight and bias gradients for each dense layer, in declaration order.
    pub dense: Vec<Tensor>,
}

impl Gradients {
    fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embedding_rows: Vec::new(),
            dense: params.tensors[1..]
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    /// Dense copy shaped like the parameters, for inspection.
    pub fn to_params(&self, like: &ModelParams) -> ModelParams {
        let mut out = like.clone();
        let emb = &mut out.tensors[0];
        emb.data.iter_mut().for_each(|v| *v = 0.0);
        for (row, g) in &self.embedding_rows {
            let cols = emb.cols;
            for (v, gv) in emb.data[row * cols..(row + 1) * cols].iter_mut().zip(g) {
                *v += gv;
            }
        }
        for (t, g) in out.tensors[1..].iter_mut().zip(&self.dense) {
            t.data.copy_from_slice(&g.data);
        }
        out
    }

    /// `params -= lr * self`.
    pub fn apply(&self, params: &mut ModelParams, lr: f64) {
        let emb = &mut params.tensors[0];
        let cols = emb.cols;
        for (row, g) in &self.embedding_rows {
            for (v, gv) in emb.data[row * cols..(row + 1) * cols].iter_mut().zip(g) {
                *v -= lr * gv;
            }
        }
        for (t, g) in params.tensors[1..].iter_mut().zip(&self.dense) {
            for (v, gv) in t.data.iter_mut().zip(&g.data) {
                *v -= lr * gv;
            }
        }
    }
}

/// Mean squared error over `(index, normalized target)` pairs and its
/// gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[(usize, f64)],
) -> Result<(f64, Gradients), ModelError> {
    let mut grads = Gradients::zeros_like(params);
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(index, target) in batch {
        if index >= params.num_bins() {
            return Err(ModelError::IndexOutOfRange {
                index,
                len: params.num_bins(),
            });
        }
        let tr = trace(params, index);
        let err = tr.acts[FC_LAYERS][0] - target;
        loss += err * err * inv_b;

        // dL/d(output pre-activation); the output layer is linear.
        let mut delta = vec![2.0 * err * inv_b];
        for l in (0..FC_LAYERS).rev() {
            if l + 1 < FC_LAYERS {
                for (d, z) in delta.iter_mut().zip(&tr.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &tr.acts[l];
            let w = params.weight(l);
            {
                let gw = &mut grads.dense[2 * l];
                for (i, &x) in input.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let row = &mut gw.data[i * gw.cols..(i + 1) * gw.cols];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += x * d;
                    }
                }
            }
            for (g, d) in grads.dense[2 * l + 1].data.iter_mut().zip(&delta) {
                *g += d;
            }
            let back: Vec<f64> = (0..w.rows)
                .map(|i| w.row(i).iter().zip(&delta).map(|(a, b)| a * b).sum())
                .collect();
            delta = back;
        }
        match grads.embedding_rows.iter_mut().find(|(r, _)| *r == index) {
            Some((_, g)) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            None => grads.embedding_rows.push((index, delta)),
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_bins: 3,
            embed_dim: 1,
            hidden_dims: vec![1, 1, 1, 1],
            label_scale: 1.0,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = ModelParams::zeros(&ModelConfig::new(5));
        for j in 0..5 {
            assert_eq!(forward(&p, j).unwrap(), 0.0);
        }
    }

    #[test]
    fn hand_computed_forward() {
        let mut p = ModelParams::zeros(&tiny());
        p.tensors[0].data = vec![0.5, -1.0, 2.0];
        // weights 2, 3, 1, -4 ; biases 0.1, -0.2, 0.0, 1.0
        for (l, (w, b)) in [(2.0, 0.1), (3.0, -0.2), (1.0, 0.0), (-4.0, 1.0)]
            .iter()
            .enumerate()
        {
            p.weight_mut(l).data[0] = *w;
            p.bias_mut(l).data[0] = *b;
        }
        p.label_scale = 10.0;
        // j=0: 0.5*2+0.1=1.1 -> 1.1*3-0.2=3.1 -> 3.1 -> 3.1*-4+1 = -11.4
        assert!((forward_normalized(&p, 0).unwrap() - -11.4).abs() < 1e-12);
        assert!((forward(&p, 0).unwrap() - -114.0).abs() < 1e-9);
        // j=1: relu(-2+0.1)=0 -> relu(-0.2)=0 -> 0 -> 1.0
        assert_eq!(forward_normalized(&p, 1).unwrap(), 1.0);
        assert!(matches!(
            forward(&p, 3),
            Err(ModelError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn empty_batch_has_zero_loss() {
        let p = ModelParams::zeros(&tiny());
        let (l, g) = loss_and_grad(&p, &[]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.embedding_rows.is_empty());
    }
}
