//! GCN forward/backward passes, MSE loss and momentum SGD.
//!
//! Each layer computes `F' = ReLU([F | ÃF] · W)` where `W` has `2·d_in`
//! rows: the top half weights the vertex's own embedding, the bottom half
//! the neighborhood aggregate. A linear regressor `F_L · w + b` produces one
//! scalar per vertex with no output nonlinearity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{rejected, Error, Result};
use crate::tensor::{DenseMatrix, SparseAdjacency};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-5,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(rejected(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(rejected(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(rejected(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.epochs == 0 {
            return Err(rejected("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Weight of one graph-convolution layer, shape `(2·d_in, d_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    pub weight: DenseMatrix,
}

impl GcnLayerParams {
    pub fn input_dim(&self) -> usize {
        self.weight.rows() / 2
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Gradients (or momentum buffers) laid out like a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseMatrix>,
    pub regressor_weight: DenseMatrix,
    pub regressor_bias: f64,
}

impl Gradients {
    pub fn zeros_like(model: &GcnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            regressor_weight: DenseMatrix::zeros(model.regressor_weight.rows(), 1),
            regressor_bias: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
        self.regressor_weight.add_assign(&other.regressor_weight);
        self.regressor_bias += other.regressor_bias;
    }

    pub fn scale(&mut self, factor: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(factor));
        self.regressor_weight.scale(factor);
        self.regressor_bias *= factor;
    }

    /// Flat view in the same order as [`GcnModel::parameter`].
    pub fn get(&self, index: usize) -> f64 {
        let mut idx = index;
        for l in &self.layers {
            if idx < l.as_slice().len() {
                return l.as_slice()[idx];
            }
            idx -= l.as_slice().len();
        }
        if idx < self.regressor_weight.rows() {
            return self.regressor_weight.as_slice()[idx];
        }
        assert_eq!(idx, self.regressor_weight.rows(), "gradient index out of range");
        self.regressor_bias
    }

    fn matches(&self, model: &GcnModel) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.shape() == l.weight.shape())
            && self.regressor_weight.shape() == model.regressor_weight.shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    layers: Vec<GcnLayerParams>,
    regressor_weight: DenseMatrix,
    regressor_bias: f64,
    velocity: Option<Gradients>,
}

/// Activations retained by [`GcnModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub predictions: Vec<f64>,
    /// `[F_l | ÃF_l]` for every layer.
    layer_inputs: Vec<DenseMatrix>,
    /// `[F_l | ÃF_l] · W_l` before the ReLU.
    pre_activations: Vec<DenseMatrix>,
    embeddings: DenseMatrix,
}

impl ForwardPass {
    /// Final-layer embeddings `F_L`.
    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }
}

impl GcnModel {
    pub fn new(
        layers: Vec<GcnLayerParams>,
        regressor_weight: DenseMatrix,
        regressor_bias: f64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rows() == 0 || l.weight.rows() % 2 != 0 {
                return Err(Error::Validation(format!(
                    "layer {i} weight has {} rows; expected an even, nonzero count",
                    l.weight.rows()
                )));
            }
            if i > 0 && l.input_dim() != layers[i - 1].output_dim() {
                return Err(Error::Validation(format!(
                    "layer {i} expects width {} but layer {} outputs {}",
                    l.input_dim(),
                    i - 1,
                    layers[i - 1].output_dim()
                )));
            }
            if !l.weight.is_finite() {
                return Err(Error::Validation(format!("layer {i} has non-finite weights")));
            }
        }
        let last = layers.last().map_or(0, GcnLayerParams::output_dim);
        if regressor_weight.shape() != (last, 1) {
            return Err(Error::Validation(format!(
                "regressor weight is {:?}, expected ({last}, 1)",
                regressor_weight.shape()
            )));
        }
        if !regressor_weight.is_finite() || !regressor_bias.is_finite() {
            return Err(Error::Validation("regressor has non-finite values".into()));
        }
        Ok(Self {
            layers,
            regressor_weight,
            regressor_bias,
            velocity: None,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let vals = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            DenseMatrix::from_raw(fan_in, fan_out, vals)
        };
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            layers.push(GcnLayerParams {
                weight: glorot(2 * width, h),
            });
            width = h;
        }
        let regressor = glorot(width, 1);
        Self::new(layers, regressor, 0.0)
    }

    /// All-zero parameters.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            layers.push(GcnLayerParams {
                weight: DenseMatrix::zeros(2 * width, h),
            });
            width = h;
        }
        Self::new(layers, DenseMatrix::zeros(width, 1), 0.0)
    }

    pub fn layers(&self) -> &[GcnLayerParams] {
        &self.layers
    }

    pub fn regressor_weight(&self) -> &DenseMatrix {
        &self.regressor_weight
    }

    pub fn regressor_bias(&self) -> f64 {
        self.regressor_bias
    }

    pub fn set_regressor_bias(&mut self, bias: f64) {
        self.regressor_bias = bias;
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Momentum buffers, present once a step has been taken.
    pub fn velocity(&self) -> Option<&Gradients> {
        self.velocity.as_ref()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len()).sum::<usize>()
            + self.regressor_weight.rows()
            + 1
    }

    /// Flat parameter access: layer weights in order, then regressor weight, then bias.
    pub fn parameter(&self, index: usize) -> f64 {
        let mut idx = index;
        for l in &self.layers {
            if idx < l.weight.as_slice().len() {
                return l.weight.as_slice()[idx];
            }
            idx -= l.weight.as_slice().len();
        }
        if idx < self.regressor_weight.rows() {
            return self.regressor_weight.as_slice()[idx];
        }
        assert_eq!(idx, self.regressor_weight.rows(), "parameter index out of range");
        self.regressor_bias
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let mut idx = index;
        for l in &mut self.layers {
            let len = l.weight.as_slice().len();
            if idx < len {
                l.weight.as_mut_slice()[idx] = value;
                return;
            }
            idx -= len;
        }
        if idx < self.regressor_weight.rows() {
            self.regressor_weight.as_mut_slice()[idx] = value;
            return;
        }
        assert_eq!(idx, self.regressor_weight.rows(), "parameter index out of range");
        self.regressor_bias = value;
    }

    fn check_inputs(&self, adj: &SparseAdjacency, features: &DenseMatrix) -> Result<()> {
        if adj.n() != features.rows() {
            return Err(rejected(format!(
                "adjacency has {} vertices but features have {} rows",
                adj.n(),
                features.rows()
            )));
        }
        if features.cols() != self.input_dim() {
            return Err(rejected(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                features.cols()
            )));
        }
        Ok(())
    }

    fn regress(&self, embeddings: &DenseMatrix) -> Result<Vec<f64>> {
        let mut preds = embeddings.matmul(&self.regressor_weight)?.into_values();
        preds.iter_mut().for_each(|p| *p += self.regressor_bias);
        Ok(preds)
    }

    /// Forward pass keeping the activations needed by [`GcnModel::backward`].
    pub fn forward(&self, adj: &SparseAdjacency, features: &DenseMatrix) -> Result<ForwardPass> {
        self.check_inputs(adj, features)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = features.clone();
        for layer in &self.layers {
            let input = h.concat_cols(&adj.spmm(&h)?)?;
            let z = input.matmul(&layer.weight)?;
            h = z.relu();
            layer_inputs.push(input);
            pre_activations.push(z);
        }
        let predictions = self.regress(&h)?;
        Ok(ForwardPass {
            predictions,
            layer_inputs,
            pre_activations,
            embeddings: h,
        })
    }

    /// Inference-only forward pass: `(predictions, F_L)` without the cache.
    pub fn predict(&self, adj: &SparseAdjacency, features: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
        self.check_inputs(adj, features)?;
        let mut h = features.clone();
        for layer in &self.layers {
            let input = h.concat_cols(&adj.spmm(&h)?)?;
            h = input.matmul(&layer.weight)?.relu();
        }
        let preds = self.regress(&h)?;
        Ok((preds, h))
    }

    /// Exact gradients of a loss with respect to every parameter, given
    /// `loss_grad[i] = ∂loss/∂prediction[i]`. The ReLU derivative at 0 is 0.
    pub fn backward(
        &self,
        adj: &SparseAdjacency,
        pass: &ForwardPass,
        loss_grad: &[f64],
    ) -> Result<Gradients> {
        let n = pass.embeddings.rows();
        let consistent = pass.layer_inputs.len() == self.layers.len()
            && pass.pre_activations.len() == self.layers.len()
            && pass
                .layer_inputs
                .iter()
                .zip(&self.layers)
                .all(|(x, l)| x.rows() == n && x.cols() == l.weight.rows())
            && pass
                .pre_activations
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.rows() == n && z.cols() == l.weight.cols())
            && pass.predictions.len() == n;
        if !consistent {
            return Err(rejected("forward cache does not match this model"));
        }
        if adj.n() != n {
            return Err(rejected(format!(
                "adjacency has {} vertices, cache has {n}",
                adj.n()
            )));
        }
        if loss_grad.len() != n {
            return Err(rejected(format!(
                "loss gradient has length {}, expected {n}",
                loss_grad.len()
            )));
        }

        let g = DenseMatrix::from_raw(n, 1, loss_grad.to_vec());
        let regressor_bias = loss_grad.iter().sum();
        let regressor_weight = pass.embeddings.t_matmul(&g)?;
        let mut d_h = g.matmul_t(&self.regressor_weight)?;

        let mut layer_grads = vec![DenseMatrix::zeros(0, 0); self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut d_z = d_h;
            for (dz, &z) in d_z
                .as_mut_slice()
                .iter_mut()
                .zip(pass.pre_activations[l].as_slice())
            {
                if z <= 0.0 {
                    *dz = 0.0;
                }
            }
            layer_grads[l] = pass.layer_inputs[l].t_matmul(&d_z)?;
            if l == 0 {
                break;
            }
            let d_input = d_z.matmul_t(&layer.weight)?;
            let (mut d_self, d_agg) = d_input.split_cols(layer.input_dim());
            d_self.add_assign(&adj.spmm_transpose(&d_agg)?);
            d_h = d_self;
        }
        Ok(Gradients {
            layers: layer_grads,
            regressor_weight,
            regressor_bias,
        })
    }

    /// One momentum-SGD step with L2 weight decay:
    /// `v ← μ·v + g + λ·p`, `p ← p − lr·v`.
    pub fn sgd_step(&mut self, grads: &Gradients, cfg: &TrainConfig) -> Result<()> {
        if !grads.matches(self) {
            return Err(rejected("gradient shapes do not match model parameters"));
        }
        let mut velocity = self
            .velocity
            .take()
            .unwrap_or_else(|| Gradients::zeros_like(self));
        let (lr, mu, wd) = (cfg.learning_rate, cfg.momentum, cfg.weight_decay);
        let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        };
        for ((layer, v), g) in self
            .layers
            .iter_mut()
            .zip(velocity.layers.iter_mut())
            .zip(&grads.layers)
        {
            update(layer.weight.as_mut_slice(), v.as_mut_slice(), g.as_slice());
        }
        update(
            self.regressor_weight.as_mut_slice(),
            velocity.regressor_weight.as_mut_slice(),
            grads.regressor_weight.as_slice(),
        );
        update(
            std::slice::from_mut(&mut self.regressor_bias),
            std::slice::from_mut(&mut velocity.regressor_bias),
            std::slice::from_ref(&grads.regressor_bias),
        );
        self.velocity = Some(velocity);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReduction {
    /// `(1/N)·Σ (p − t)²`, the full-graph confidence loss.
    Mean,
    /// `Σ (p − t)²`, the per-candidate-set connectivity loss.
    Sum,
}

fn check_loss_args(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(rejected("loss over an empty vector"));
    }
    if predictions.len() != targets.len() {
        return Err(rejected(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(())
}

pub fn mse_loss(predictions: &[f64], targets: &[f64], reduction: LossReduction) -> Result<f64> {
    check_loss_args(predictions, targets)?;
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(match reduction {
        LossReduction::Mean => sum / predictions.len() as f64,
        LossReduction::Sum => sum,
    })
}

/// `∂ mse_loss / ∂ predictions`.
pub fn mse_gradient(predictions: &[f64], targets: &[f64], reduction: LossReduction) -> Result<Vec<f64>> {
    check_loss_args(predictions, targets)?;
    let scale = match reduction {
        LossReduction::Mean => 2.0 / predictions.len() as f64,
        LossReduction::Sum => 2.0,
    };
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| scale * (p - t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn ring_adjacency(n: usize) -> SparseAdjacency {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![((i + 1) % n, 0.7), ((i + n - 1) % n, 0.7)];
                r.sort_by_key(|e| e.0);
                r.dedup_by_key(|e| e.0);
                r.retain(|e| e.0 != i);
                r
            })
            .collect();
        SparseAdjacency::from_rows(rows, true)
            .unwrap()
            .normalized_with_self_loops()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        DenseMatrix::new(rows, cols, v).unwrap()
    }

    /// Straight-line scalar forward pass, independent of the matrix kernels.
    fn scalar_forward(model: &GcnModel, adj: &SparseAdjacency, x: &DenseMatrix) -> Vec<f64> {
        let n = x.rows();
        let dense_adj = adj.to_dense();
        let mut h: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).to_vec()).collect();
        for layer in model.layers() {
            let d = h[0].len();
            let w = &layer.weight;
            let mut next = vec![vec![0.0; w.cols()]; n];
            for i in 0..n {
                let mut agg = vec![0.0; d];
                for j in 0..n {
                    for t in 0..d {
                        agg[t] += dense_adj.get(i, j) * h[j][t];
                    }
                }
                for o in 0..w.cols() {
                    let mut s = 0.0;
                    for t in 0..d {
                        s += h[i][t] * w.get(t, o) + agg[t] * w.get(d + t, o);
                    }
                    next[i][o] = if s > 0.0 { s } else { 0.0 };
                }
            }
            h = next;
        }
        h.iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(t, v)| v * model.regressor_weight().get(t, 0))
                    .sum::<f64>()
                    + model.regressor_bias()
            })
            .collect()
    }

    #[test]
    fn zero_model_predicts_bias() {
        let mut m = GcnModel::zeros(3, &[4]).unwrap();
        m.set_regressor_bias(0.25);
        let pass = m
            .forward(&SparseAdjacency::identity(1), &DenseMatrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap())
            .unwrap();
        assert_eq!(pass.predictions, vec![0.25]);
    }

    #[test]
    fn identity_like_construction() {
        // single vertex: Ã = [[1]], so [f | Ãf] = [1, 1]; W = [[1],[0]] reproduces f.
        let layer = GcnLayerParams {
            weight: DenseMatrix::from_rows(&[[1.0], [0.0]]).unwrap(),
        };
        let m = GcnModel::new(vec![layer], DenseMatrix::from_rows(&[[1.0]]).unwrap(), 0.0).unwrap();
        let adj = SparseAdjacency::identity(1);
        let pass = m.forward(&adj, &DenseMatrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(pass.predictions, vec![1.0]);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let adj = ring_adjacency(6);
        let x = random_matrix(6, 3, 1);
        let m = GcnModel::init(3, &[5, 4], 9).unwrap();
        let got = m.forward(&adj, &x).unwrap().predictions;
        let want = scalar_forward(&m, &adj, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        let (p, emb) = m.predict(&adj, &x).unwrap();
        assert_eq!(p, got);
        assert_eq!(emb.shape(), (6, 4));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let m = GcnModel::init(3, &[3], 0).unwrap();
        assert!(m.forward(&SparseAdjacency::identity(2), &random_matrix(3, 3, 0)).is_err());
        assert!(m.forward(&SparseAdjacency::identity(3), &random_matrix(3, 2, 0)).is_err());
    }

    #[test]
    fn model_validation() {
        let bad = GcnModel::new(
            vec![
                GcnLayerParams { weight: DenseMatrix::zeros(4, 3) },
                GcnLayerParams { weight: DenseMatrix::zeros(4, 2) },
            ],
            DenseMatrix::zeros(2, 1),
            0.0,
        );
        assert!(bad.is_err());
        assert!(GcnModel::new(vec![], DenseMatrix::zeros(0, 1), 0.0).is_err());
        assert!(GcnModel::new(
            vec![GcnLayerParams { weight: DenseMatrix::zeros(4, 3) }],
            DenseMatrix::zeros(2, 1),
            0.0
        )
        .is_err());
    }

    #[test]
    fn loss_cases() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0], LossReduction::Mean).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0], LossReduction::Mean).unwrap(), 4.0);
        assert!(mse_loss(&[], &[], LossReduction::Sum).is_err());
        assert!(mse_loss(&[1.0], &[1.0, 2.0], LossReduction::Sum).is_err());

        let p = random_matrix(1, 7, 2).into_values();
        let t = random_matrix(1, 7, 3).into_values();
        let mut sum = 0.0;
        for i in 0..7 {
            sum += (p[i] - t[i]).powi(2);
        }
        assert!((mse_loss(&p, &t, LossReduction::Sum).unwrap() - sum).abs() < 1e-12);
        assert!((mse_loss(&p, &t, LossReduction::Mean).unwrap() - sum / 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let adj = ring_adjacency(5);
        let x = random_matrix(5, 3, 4);
        let m = GcnModel::init(3, &[3, 3], 1).unwrap();
        let pass = m.forward(&adj, &x).unwrap();
        let g = m.backward(&adj, &pass, &[0.0; 5]).unwrap();
        assert_eq!(g, Gradients::zeros_like(&m));
    }

    #[test]
    fn one_vertex_hand_derivation() {
        // f = 2, Ã = [1], W = [[a],[b]] = [[0.5],[0.25]], w = 3, bias 1.
        // z = 2a + 2b = 1.5 > 0, p = 3·1.5 + 1 = 5.5. With dL/dp = 1:
        // dw = 1.5, db = 1, dz = 3, da = dz·2 = 6, db_w = 6.
        let layer = GcnLayerParams {
            weight: DenseMatrix::from_rows(&[[0.5], [0.25]]).unwrap(),
        };
        let m = GcnModel::new(vec![layer], DenseMatrix::from_rows(&[[3.0]]).unwrap(), 1.0).unwrap();
        let adj = SparseAdjacency::identity(1);
        let pass = m.forward(&adj, &DenseMatrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(pass.predictions, vec![5.5]);
        let g = m.backward(&adj, &pass, &[1.0]).unwrap();
        assert_eq!(g.regressor_bias, 1.0);
        assert_eq!(g.regressor_weight.as_slice(), &[1.5]);
        assert_eq!(g.layers[0].as_slice(), &[6.0, 6.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let adj = ring_adjacency(7);
        let x = random_matrix(7, 4, 5);
        let targets = random_matrix(1, 7, 6).into_values();
        let m = GcnModel::init(4, &[6, 5, 3], 2).unwrap();
        let loss = |m: &GcnModel| {
            let p = m.predict(&adj, &x).unwrap().0;
            mse_loss(&p, &targets, LossReduction::Mean).unwrap()
        };
        let pass = m.forward(&adj, &x).unwrap();
        let lg = mse_gradient(&pass.predictions, &targets, LossReduction::Mean).unwrap();
        let grads = m.backward(&adj, &pass, &lg).unwrap();
        let eps = 1e-4;
        for idx in 0..m.parameter_count() {
            let mut plus = m.clone();
            plus.set_parameter(idx, m.parameter(idx) + eps);
            let mut minus = m.clone();
            minus.set_parameter(idx, m.parameter(idx) - eps);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = grads.get(idx);
            let err = (fd - an).abs();
            assert!(err <= 1e-6 || err <= 1e-4 * an.abs().max(fd.abs()), "param {idx}: {an} vs {fd}");
        }
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let adj = ring_adjacency(4);
        let x = random_matrix(4, 3, 0);
        let m = GcnModel::init(3, &[3], 0).unwrap();
        let other = GcnModel::init(3, &[3, 2], 0).unwrap();
        let pass = other.forward(&adj, &x).unwrap();
        assert!(m.backward(&adj, &pass, &[0.0; 4]).is_err());
        let pass = m.forward(&adj, &x).unwrap();
        assert!(m.backward(&adj, &pass, &[0.0; 3]).is_err());
        assert!(m.backward(&ring_adjacency(5), &pass, &[0.0; 4]).is_err());
    }

    #[test]
    fn sgd_zero_gradient_no_decay_is_noop() {
        let mut m = GcnModel::init(2, &[2], 3).unwrap();
        let before = m.clone();
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        m.sgd_step(&Gradients::zeros_like(&m), &cfg).unwrap();
        for i in 0..m.parameter_count() {
            assert_eq!(m.parameter(i), before.parameter(i));
        }
        assert_eq!(m.velocity().unwrap(), &Gradients::zeros_like(&m));
    }

    #[test]
    fn sgd_first_step_closed_form() {
        let mut m = GcnModel::init(2, &[2], 3).unwrap();
        let before = m.clone();
        let pass = m.forward(&SparseAdjacency::identity(1), &DenseMatrix::from_rows(&[[0.3, -0.4]]).unwrap()).unwrap();
        let g = m.backward(&SparseAdjacency::identity(1), &pass, &[0.7]).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, weight_decay: 0.01, ..TrainConfig::default() };
        m.sgd_step(&g, &cfg).unwrap();
        for i in 0..m.parameter_count() {
            let p = before.parameter(i);
            let want = p - 0.05 * (g.get(i) + 0.01 * p);
            assert!((m.parameter(i) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_matches_scalar_recurrence_on_quadratic() {
        // minimize (p·1 + b)² over the bias only: loss gradient on the bias is 2(b).
        let mut m = GcnModel::zeros(1, &[1]).unwrap();
        m.set_regressor_bias(1.0);
        let cfg = TrainConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.01, epochs: 3, seed: 0 };
        let (mut p, mut v) = (1.0f64, 0.0f64);
        for _ in 0..3 {
            let mut g = Gradients::zeros_like(&m);
            g.regressor_bias = 2.0 * m.regressor_bias();
            m.sgd_step(&g, &cfg).unwrap();
            v = 0.9 * v + 2.0 * p + 0.01 * p;
            p -= 0.1 * v;
        }
        assert!((m.regressor_bias() - p).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_mismatched_gradients() {
        let mut m = GcnModel::init(2, &[2], 0).unwrap();
        let other = GcnModel::init(2, &[3], 0).unwrap();
        assert!(m.sgd_step(&Gradients::zeros_like(&other), &TrainConfig::default()).is_err());
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { weight_decay: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn loss_decreases_in_first_epoch_on_linear_target() {
        let adj = SparseAdjacency::identity(8);
        let x = random_matrix(8, 3, 10);
        let w_star = [0.3, -0.2, 0.5];
        let t: Vec<f64> = (0..8).map(|i| crate::tensor::dot(x.row(i), &w_star)).collect();
        let mut m = GcnModel::init(3, &[3], 4).unwrap();
        let cfg = TrainConfig { learning_rate: 0.01, ..Default::default() };
        let pass = m.forward(&adj, &x).unwrap();
        let before = mse_loss(&pass.predictions, &t, LossReduction::Mean).unwrap();
        let g = m
            .backward(&adj, &pass, &mse_gradient(&pass.predictions, &t, LossReduction::Mean).unwrap())
            .unwrap();
        m.sgd_step(&g, &cfg).unwrap();
        let after = mse_loss(&m.predict(&adj, &x).unwrap().0, &t, LossReduction::Mean).unwrap();
        assert!(after < before);
    }
}
