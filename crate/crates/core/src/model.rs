//! The per-user recommender: two embedding towers, a fast-weight transform
//! over the concatenated embeddings, and a small rating head.
//!
//! ```text
//! e_u = user_tower(p_u)          e_i = item_tower(p_i)
//! z   = F · [e_u, e_i]           (F is the d_e × 2d_e fast-weight matrix)
//! ŷ   = head(z)
//! ```
//!
//! Every tower is a stack of fully connected layers with leaky-ReLU on the
//! hidden layers and a linear output layer. Gradients are computed by hand
//! (reverse mode over this fixed graph).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fc_backward, fc_forward, Activation, FcCache, Matrix, Params, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Per-layer caches of one [`LayerStack::forward`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct StackCache {
    layers: Vec<FcCache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("a layer stack needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape("LayerStack::new", l.output_dim(), l.bias.len()));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.input_dim() != l.output_dim() {
                    return Err(Error::shape(
                        "LayerStack::new",
                        format!("layer {} input {}", i + 1, l.output_dim()),
                        next.input_dim(),
                    ));
                }
            }
        }
        Ok(Self { layers })
    }

    /// `widths = [input, hidden..., output]`; weights fan-scaled uniform,
    /// biases zero.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("a layer stack needs input and output widths".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weights: rng.glorot(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("a layer stack needs input and output widths".into()));
        }
        Self::new(widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Layer::output_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn same_shape(&self, other: &LayerStack) -> bool {
        self.widths() == other.widths()
    }

    fn activation(&self, index: usize) -> Activation {
        if index + 1 == self.layers.len() {
            Activation::Identity
        } else {
            Activation::LeakyRelu
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, StackCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let (out, cache) = fc_forward(&x, &l.weights, &l.bias, self.activation(i))?;
            caches.push(cache);
            x = out;
        }
        Ok((x, StackCache { layers: caches }))
    }

    /// Returns `(∂L/∂input, ∂L/∂parameters)`.
    pub fn backward(&self, grad_output: &[f64], cache: &StackCache) -> Result<(Vec<f64>, LayerStack)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache has {} layers, stack has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.to_vec();
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let fg = fc_backward(&g, c, &l.weights)?;
            grads.push(Layer {
                weights: fg.weights,
                bias: fg.bias,
            });
            g = fg.input;
        }
        grads.reverse();
        Ok((g, LayerStack { layers: grads }))
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &LayerStack) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                "LayerStack::axpy",
                format!("{:?}", self.widths()),
                format!("{:?}", other.widths()),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.axpy(s, &b.weights)?;
            crate::numerics::axpy(&mut a.bias, s, &b.bias);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.scale(s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Visits every coordinate in flatten order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }
}

impl Params for LayerStack {
    fn flatten(&self) -> Vec<f64> {
        self.values().collect()
    }

    fn assign(&mut self, values: &[f64]) {
        for (dst, src) in self.values_mut().zip(values) {
            *dst = *src;
        }
    }
}

/// Dimensions of the recommender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub user_dim: usize,
    pub item_dim: usize,
    pub embed_dim: usize,
    /// Fully connected layers per tower.
    pub layers: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.user_dim == 0 || self.item_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        Ok(())
    }

    /// Hidden layers are as wide as the embedding.
    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.embed_dim, self.layers - 1));
        w.push(output);
        w
    }

    pub fn user_widths(&self) -> Vec<usize> {
        self.widths(self.user_dim, self.embed_dim)
    }

    pub fn item_widths(&self) -> Vec<usize> {
        self.widths(self.item_dim, self.embed_dim)
    }

    pub fn head_widths(&self) -> Vec<usize> {
        self.widths(self.embed_dim, 1)
    }
}

/// The three parameter groups of the recommender: user tower, item tower
/// and rating head. Used both for per-user local parameters and for the
/// shared global initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub user: LayerStack,
    pub item: LayerStack,
    pub head: LayerStack,
}

impl ParamSet {
    pub fn init(dims: &ModelDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            user: LayerStack::init(&dims.user_widths(), rng)?,
            item: LayerStack::init(&dims.item_widths(), rng)?,
            head: LayerStack::init(&dims.head_widths(), rng)?,
        })
    }

    pub fn zeros(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            user: LayerStack::zeros(&dims.user_widths())?,
            item: LayerStack::zeros(&dims.item_widths())?,
            head: LayerStack::zeros(&dims.head_widths())?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            user: self.user.zeros_like(),
            item: self.item.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            user_dim: self.user.input_dim(),
            item_dim: self.item.input_dim(),
            embed_dim: self.user.output_dim(),
            layers: self.user.layers().len(),
        }
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.user.same_shape(&other.user)
            && self.item.same_shape(&other.item)
            && self.head.same_shape(&other.head)
    }

    pub fn axpy(&mut self, s: f64, other: &ParamSet) -> Result<()> {
        self.user.axpy(s, &other.user)?;
        self.item.axpy(s, &other.item)?;
        self.head.axpy(s, &other.head)
    }

    pub fn scale(&mut self, s: f64) {
        self.user.scale(s);
        self.item.scale(s);
        self.head.scale(s);
    }

    pub fn is_finite(&self) -> bool {
        self.user.is_finite() && self.item.is_finite() && self.head.is_finite()
    }
}

impl Params for ParamSet {
    fn flatten(&self) -> Vec<f64> {
        self.user
            .values()
            .chain(self.item.values())
            .chain(self.head.values())
            .collect()
    }

    fn assign(&mut self, values: &[f64]) {
        let nu = self.user.num_params();
        let ni = self.item.num_params();
        self.user.assign(&values[..nu]);
        self.item.assign(&values[nu..nu + ni]);
        self.head.assign(&values[nu + ni..]);
    }
}

impl<A: Params, B: Params> Params for (A, B) {
    fn flatten(&self) -> Vec<f64> {
        let mut v = self.0.flatten();
        v.extend(self.1.flatten());
        v
    }

    fn assign(&mut self, values: &[f64]) {
        let n = self.0.num_params();
        self.0.assign(&values[..n]);
        self.1.assign(&values[n..]);
    }
}

/// A per-user `d_e × 2d_e` transform between embeddings and the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastWeights {
    matrix: Matrix,
}

impl FastWeights {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.cols() != 2 * matrix.rows() || matrix.rows() == 0 {
            return Err(Error::shape(
                "FastWeights::new",
                "d_e x 2d_e",
                matrix.shape_str(),
            ));
        }
        Ok(Self { matrix })
    }

    /// `[½I | ½I]`: the transform averages the two embeddings.
    pub fn averaging(embed_dim: usize) -> Self {
        let mut half = Matrix::identity(embed_dim);
        half.scale(0.5);
        Self {
            matrix: Matrix::hcat(&half, &half).expect("equal heights"),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

impl Params for FastWeights {
    fn flatten(&self) -> Vec<f64> {
        self.matrix.flatten()
    }

    fn assign(&mut self, values: &[f64]) {
        self.matrix.assign(values);
    }
}

/// A tower output together with what backward needs.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub value: Vec<f64>,
    cache: StackCache,
}

pub fn embed_user(profile: &[f64], user_tower: &LayerStack) -> Result<Embedding> {
    embed(profile, user_tower)
}

pub fn embed_item(profile: &[f64], item_tower: &LayerStack) -> Result<Embedding> {
    embed(profile, item_tower)
}

fn embed(profile: &[f64], tower: &LayerStack) -> Result<Embedding> {
    let (value, cache) = tower.forward(profile)?;
    Ok(Embedding { value, cache })
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub value: f64,
    user: Embedding,
    item: Embedding,
    concat: Vec<f64>,
    head_cache: StackCache,
}

impl Prediction {
    pub fn user_embedding(&self) -> &[f64] {
        &self.user.value
    }

    pub fn item_embedding(&self) -> &[f64] {
        &self.item.value
    }
}

/// Raw (unclamped) rating `head(F · [e_u, e_i])`.
pub fn predict(
    user: Embedding,
    item: Embedding,
    fast: &FastWeights,
    head: &LayerStack,
) -> Result<Prediction> {
    let d = fast.embed_dim();
    if user.value.len() != d || item.value.len() != d {
        return Err(Error::shape(
            "predict",
            format!("embeddings of length {d} for fast weights {}", fast.matrix.shape_str()),
            format!("{} and {}", user.value.len(), item.value.len()),
        ));
    }
    let mut concat = user.value.clone();
    concat.extend_from_slice(&item.value);
    let z = fast.matrix.matvec(&concat)?;
    let (out, head_cache) = head.forward(&z)?;
    if out.len() != 1 {
        return Err(Error::shape("predict", "scalar head output", out.len()));
    }
    Ok(Prediction {
        value: out[0],
        user,
        item,
        concat,
        head_cache,
    })
}

/// Full forward pass from raw profiles.
pub fn forward(
    params: &ParamSet,
    fast: &FastWeights,
    user_profile: &[f64],
    item_profile: &[f64],
) -> Result<Prediction> {
    let user = embed_user(user_profile, &params.user)?;
    let item = embed_item(item_profile, &params.item)?;
    predict(user, item, fast, &params.head)
}

/// Squared error `½(ŷ - y)²`.
pub fn loss(pred: &Prediction, y: f64) -> f64 {
    0.5 * (pred.value - y).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ParamSet,
    pub fast: Matrix,
}

/// Gradients of [`loss`] with respect to all three towers and the fast
/// weights.
pub fn backward_all(
    pred: &Prediction,
    y: f64,
    params: &ParamSet,
    fast: &FastWeights,
) -> Result<Gradients> {
    let d = fast.embed_dim();
    if pred.concat.len() != 2 * d
        || pred.user.value.len() != params.user.output_dim()
        || pred.item.value.len() != params.item.output_dim()
        || params.user.output_dim() != d
    {
        return Err(Error::Contract(
            "prediction cache does not match these parameters".into(),
        ));
    }
    let residual = pred.value - y;
    let (grad_z, head) = params.head.backward(&[residual], &pred.head_cache)?;
    let grad_concat = fast.matrix.matvec_t(&grad_z)?;
    let grad_fast = Matrix::outer(&grad_z, &pred.concat);
    let (_, user) = params.user.backward(&grad_concat[..d], &pred.user.cache)?;
    let (_, item) = params.item.backward(&grad_concat[d..], &pred.item.cache)?;
    Ok(Gradients {
        params: ParamSet { user, item, head },
        fast: grad_fast,
    })
}
