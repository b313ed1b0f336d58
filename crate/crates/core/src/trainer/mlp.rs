//! Forward pass, mean-reduced loss, and backpropagation.
//!
//! Classification targets use softmax cross-entropy; regression targets use
//! `½(f − y)²`. Both are averaged over the batch.

use nalgebra::{DMatrix, DVector};

use super::params::{MLPArch, ParamVector};
use crate::error::{Error, Result};
use crate::tasks::{Dataset, Targets};

#[derive(Debug, Clone)]
pub struct Batch {
    /// `n × input_dim`.
    pub inputs: DMatrix<f64>,
    pub targets: Targets,
}

impl Batch {
    pub fn from_dataset(data: &Dataset) -> Self {
        Self {
            inputs: data.matrix(),
            targets: data.targets.clone(),
        }
    }

    pub fn from_rows(data: &Dataset, idx: &[usize]) -> Self {
        Self {
            inputs: data.gather_matrix(idx),
            targets: data.targets.gather(idx),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_shapes(arch: &MLPArch, params: &ParamVector, batch: &Batch) -> Result<()> {
    if !params.matches_arch(arch) {
        return Err(Error::Shape(
            "parameters do not match the architecture".into(),
        ));
    }
    if batch.inputs.ncols() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, network expects {}",
            batch.inputs.ncols(),
            arch.input_dim()
        )));
    }
    if batch.targets.len() != batch.len() {
        return Err(Error::Shape("targets and inputs differ in length".into()));
    }
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let want = batch.targets.output_width();
    if want != arch.output_dim() {
        return Err(Error::Shape(format!(
            "targets need {want} outputs, network has {}",
            arch.output_dim()
        )));
    }
    if let Targets::Classes {
        labels,
        num_classes,
    } = &batch.targets
    {
        if let Some(bad) = labels.iter().find(|&&l| l >= *num_classes) {
            return Err(Error::Shape(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
    }
    Ok(())
}

/// Pre-activations of every layer; the last entry is the network output.
fn forward_all(params: &ParamVector, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut act = inputs.clone();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = &act * &layer.weight;
        if !layer.bias.is_empty() {
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
        }
        if i < last {
            act = z.map(|v| v.max(0.0));
        }
        pre.push(z);
    }
    pre
}

/// Network outputs (logits, or the scalar prediction for regression).
pub fn predict(params: &ParamVector, inputs: &DMatrix<f64>) -> DMatrix<f64> {
    forward_all(params, inputs).pop().unwrap()
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Mean loss and the gradient of the mean loss with respect to the output.
fn loss_and_output_grad(out: &DMatrix<f64>, targets: &Targets) -> (f64, DMatrix<f64>) {
    let n = out.nrows();
    let inv_n = 1.0 / n as f64;
    let mut grad = DMatrix::zeros(n, out.ncols());
    let mut loss = 0.0;
    match targets {
        Targets::Classes { labels, .. } => {
            let mut row = vec![0.0; out.ncols()];
            let mut prob = vec![0.0; out.ncols()];
            for (i, &label) in labels.iter().enumerate() {
                row.iter_mut()
                    .enumerate()
                    .for_each(|(j, r)| *r = out[(i, j)]);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[label];
                softmax_row(&row, &mut prob);
                for (j, &p) in prob.iter().enumerate() {
                    let y = if j == label { 1.0 } else { 0.0 };
                    grad[(i, j)] = (p - y) * inv_n;
                }
            }
        }
        Targets::Values(values) => {
            for (i, &y) in values.iter().enumerate() {
                let r = out[(i, 0)] - y;
                loss += 0.5 * r * r;
                grad[(i, 0)] = r * inv_n;
            }
        }
    }
    (loss * inv_n, grad)
}

pub fn forward_loss(
    arch: &MLPArch,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, DMatrix<f64>)> {
    check_shapes(arch, params, batch)?;
    let out = predict(params, &batch.inputs);
    let (loss, _) = loss_and_output_grad(&out, &batch.targets);
    Ok((loss, out))
}

/// Loss and its gradient with respect to every parameter.
pub fn backward(arch: &MLPArch, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    check_shapes(arch, params, batch)?;
    let pre = forward_all(params, &batch.inputs);
    let (loss, mut delta) = loss_and_output_grad(pre.last().unwrap(), &batch.targets);
    let mut grad = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let grad_layer = &mut grad.layers[l];
        if l == 0 {
            grad_layer.weight = batch.inputs.tr_mul(&delta);
        } else {
            let act = pre[l - 1].map(|v| v.max(0.0));
            grad_layer.weight = act.tr_mul(&delta);
        }
        if !grad_layer.bias.is_empty() {
            grad_layer.bias =
                DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
        }
        if l > 0 {
            let mut back = &delta * params.layers[l].weight.transpose();
            back.zip_apply(&pre[l - 1], |d, z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            delta = back;
        }
    }
    Ok((loss, grad))
}

/// Accuracy for classification targets; `max(0, R²)` for regression targets.
pub fn score(params: &ParamVector, data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let out = predict(params, &data.matrix());
    match &data.targets {
        Targets::Classes { labels, .. } => {
            let correct = labels
                .iter()
                .enumerate()
                .filter(|&(i, &label)| argmax(out.row(i).iter()) == label)
                .count();
            correct as f64 / labels.len() as f64
        }
        Targets::Values(values) => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var: f64 = values.iter().map(|y| (y - mean) * (y - mean)).sum();
            let sse: f64 = values
                .iter()
                .enumerate()
                .map(|(i, y)| (out[(i, 0)] - y).powi(2))
                .sum();
            if var == 0.0 {
                return if sse == 0.0 { 1.0 } else { 0.0 };
            }
            (1.0 - sse / var).max(0.0)
        }
    }
}

/// Index of the largest value; the earliest wins ties.
pub(crate) fn argmax<'a>(it: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in it.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::params::init_params;
    use approx::assert_relative_eq;

    fn class_batch(rows: &[&[f64]], labels: &[usize], classes: usize) -> Batch {
        let dim = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Batch {
            inputs: DMatrix::from_row_slice(rows.len(), dim, &flat),
            targets: Targets::Classes {
                labels: labels.to_vec(),
                num_classes: classes,
            },
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let arch = MLPArch::new(vec![3, 4, 5]);
        let params = ParamVector::zeros(&arch);
        let batch = class_batch(&[&[1.0, 2.0, 3.0], &[0.0, -1.0, 0.5]], &[0, 4], 5);
        let (loss, _) = forward_loss(&arch, &params, &batch).unwrap();
        assert_relative_eq!(loss, 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn two_class_zero_logits() {
        let arch = MLPArch::new(vec![1, 2]);
        let params = ParamVector::zeros(&arch);
        let batch = class_batch(&[&[0.3]], &[1], 2);
        let (loss, _) = forward_loss(&arch, &params, &batch).unwrap();
        assert_relative_eq!(loss, 0.693_147_180_559_945_3, epsilon = 1e-12);
    }

    #[test]
    fn margin_drives_loss_to_zero() {
        let arch = MLPArch::new(vec![1, 2]);
        let mut params = ParamVector::zeros(&arch);
        let batch = class_batch(&[&[1.0]], &[0], 2);
        let mut last = f64::INFINITY;
        for m in [1.0, 5.0, 20.0, 50.0] {
            params.layers[0].weight[(0, 0)] = m;
            let (loss, _) = forward_loss(&arch, &params, &batch).unwrap();
            assert!(loss < last && loss >= 0.0);
            last = loss;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn zero_network_bias_gradient_is_mean_softmax_error() {
        // Hand computed: logits are 0, softmax is (1/2, 1/2), both labels are 0,
        // so the output-bias gradient is mean(p - y) = (-1/2, 1/2). Hidden ReLUs
        // are inactive, so everything else is zero.
        let arch = MLPArch::new(vec![2, 3, 2]);
        let params = ParamVector::zeros(&arch);
        let batch = class_batch(&[&[1.0, -1.0], &[-1.0, 1.0]], &[0, 0], 2);
        let (_, g) = backward(&arch, &params, &batch).unwrap();
        assert_relative_eq!(g.layers[1].bias[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g.layers[1].bias[1], 0.5, epsilon = 1e-15);
        assert_eq!(g.layers[0].weight.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        assert_eq!(g.layers[1].weight.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn duplicated_batch_has_identical_gradient() {
        let arch = MLPArch::new(vec![3, 5, 4]);
        let params = init_params(&arch, 2).unwrap();
        let rows: [&[f64]; 2] = [&[0.5, -1.0, 2.0], &[1.5, 0.2, -0.3]];
        let single = class_batch(&rows, &[1, 3], 4);
        let doubled = class_batch(&[rows[0], rows[1], rows[0], rows[1]], &[1, 3, 1, 3], 4);
        let (l1, g1) = backward(&arch, &params, &single).unwrap();
        let (l2, g2) = backward(&arch, &params, &doubled).unwrap();
        assert_relative_eq!(l1, l2, epsilon = 1e-14);
        for (a, b) in g1.values().zip(g2.values()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let arch = MLPArch::new(vec![3, 2]);
        let params = ParamVector::zeros(&arch);
        let wrong_dim = class_batch(&[&[1.0, 2.0]], &[0], 2);
        assert!(matches!(
            forward_loss(&arch, &params, &wrong_dim),
            Err(Error::Shape(_))
        ));
        let wrong_classes = class_batch(&[&[1.0, 2.0, 3.0]], &[0], 3);
        assert!(matches!(
            forward_loss(&arch, &params, &wrong_classes),
            Err(Error::Shape(_))
        ));
        let bad_label = class_batch(&[&[1.0, 2.0, 3.0]], &[2], 2);
        assert!(backward(&arch, &params, &bad_label).is_err());
    }

    #[test]
    fn regression_loss_and_score() {
        let arch = MLPArch {
            bias: false,
            ..MLPArch::new(vec![2, 1])
        };
        let mut params = ParamVector::zeros(&arch);
        params.layers[0].weight[(0, 0)] = 1.0;
        params.layers[0].weight[(1, 0)] = 2.0;
        let data = Dataset::new(
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            2,
            Targets::Values(vec![1.0, 2.0, 3.0]),
        )
        .unwrap();
        let batch = Batch::from_dataset(&data);
        let (loss, _) = forward_loss(&arch, &params, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(score(&params, &data), 1.0);
        params.set_flat(&[0.0, 0.0]);
        assert_eq!(score(&params, &data), 0.0);
    }
}
