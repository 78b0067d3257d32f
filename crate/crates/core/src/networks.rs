//! Parameter containers and forward passes.
//!
//! The encoder `F`, the cosine prototype classifier `C`, the labeledness
//! discriminator `D` and the task model `M` all expose their tensors through
//! [`Parameters`] so the optimizer and tape binding treat them uniformly.
//! Each model has a tape-level forward (taking a [`Bound`] set of parameter
//! nodes) and a convenience forward over plain arrays for evaluation.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{NodeId, Tape};

/// Row norms below this are treated as zero by feature normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Serde adapter writing a matrix as `{"rows", "cols", "data"}` with `data`
/// in row-major order.
pub mod matrix_format {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        Array2::from_shape_vec((r.rows, r.cols), r.data).map_err(serde::de::Error::custom)
    }
}

/// Uniform access to a model's trainable tensors, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Parameter nodes of one model on a tape, in [`Parameters::tensors`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn bind<P: Parameters + ?Sized>(tape: &mut Tape, model: &P, trainable: bool) -> Self {
        let ids = model
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        Self { ids }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Gradients after a backward pass; unreached parameters get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Array2<f64>> {
        self.ids.iter().map(|&id| tape.grad_or_zeros(id)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// in × out
    #[serde(with = "matrix_format")]
    pub weight: Array2<f64>,
    /// 1 × out
    #[serde(with = "matrix_format")]
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut rng::Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight =
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound));
        Self {
            weight,
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(tape: &mut Tape, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected stack with ReLU between layers and a linear last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases, fully determined by `seed`.
    pub fn init(seed: u64, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least an input and an output size, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be >= 1, got {dims:?}"
            )));
        }
        let mut r = rng::stream(seed, &[]);
        let layers = dims
            .windows(2)
            .map(|w| Linear::xavier(w[0], w[1], &mut r))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Linear::output_dim))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: NodeId) -> Result<NodeId> {
        let cols = tape.value(x).ncols();
        if cols != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp input",
                left: tape.value(x).dim(),
                right: (self.input_dim(), self.layers[0].output_dim()),
            });
        }
        let ids = params.ids();
        let mut h = x;
        for (i, _) in self.layers.iter().enumerate() {
            h = Linear::forward(tape, ids[2 * i], ids[2 * i + 1], h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward_array(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let params = Bound::bind(&mut tape, self, false);
        let xi = tape.constant(x.clone());
        let out = self.forward(&mut tape, &params, xi)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}

/// Feature encoder `F`: input → hidden… → d, producing raw (unnormalized) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub mlp: Mlp,
}

impl Encoder {
    pub fn init(seed: u64, input_dim: usize, hidden: &[usize], latent_dim: usize) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(latent_dim))
            .collect();
        Ok(Self {
            mlp: Mlp::init(seed, &dims)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn encode(&self, tape: &mut Tape, params: &Bound, x: NodeId) -> Result<NodeId> {
        self.mlp.forward(tape, params, x)
    }

    pub fn encode_array(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.mlp.forward_array(x)
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.mlp.tensors_mut()
    }
}

/// Cosine classifier `C`: logits are `cos(feature, w_k) / T` over the
/// columns `w_k` of a d×K prototype matrix. No bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeClassifier {
    #[serde(with = "matrix_format")]
    pub weight: Array2<f64>,
    pub temperature: f64,
    /// Keep prototype columns at unit norm after every update.
    pub normalize_prototypes: bool,
}

impl PrototypeClassifier {
    pub fn init(
        seed: u64,
        latent_dim: usize,
        num_classes: usize,
        temperature: f64,
        normalize_prototypes: bool,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut r = rng::stream(seed, &[]);
        let mut c = Self {
            weight: Linear::xavier(latent_dim, num_classes, &mut r).weight,
            temperature,
            normalize_prototypes,
        };
        c.project();
        Ok(c)
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }

    /// Rescales prototype columns to unit norm when enabled. Called after
    /// every optimizer step.
    pub fn project(&mut self) {
        if !self.normalize_prototypes {
            return;
        }
        for mut col in self.weight.columns_mut() {
            let n = col.dot(&col).sqrt();
            if n > NORM_EPS {
                col /= n;
            }
        }
    }

    /// Logits for raw features; rows are ℓ2-normalized first.
    pub fn classify(&self, tape: &mut Tape, params: &Bound, feats: NodeId) -> Result<NodeId> {
        let z = tape.l2_normalize_rows(feats, NORM_EPS);
        self.classify_normalized(tape, params, z)
    }

    /// Logits for features that are already row-normalized.
    pub fn classify_normalized(
        &self,
        tape: &mut Tape,
        params: &Bound,
        z: NodeId,
    ) -> Result<NodeId> {
        let d = tape.value(z).ncols();
        if d != self.latent_dim() {
            return Err(Error::Shape {
                op: "classify",
                left: tape.value(z).dim(),
                right: self.weight.dim(),
            });
        }
        let sims = tape.matmul(z, params.ids()[0])?;
        Ok(tape.scale(sims, 1.0 / self.temperature))
    }

    pub fn classify_array(&self, feats: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let params = Bound::bind(&mut tape, self, false);
        let f = tape.constant(feats.clone());
        let out = self.classify(&mut tape, &params, f)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameters for PrototypeClassifier {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight]
    }
}

/// Labeledness discriminator `D`: d → h₁ → h₂ → 1, ReLU between, sigmoid out.
/// Output 1 means "predicted labeled".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub mlp: Mlp,
}

impl Discriminator {
    pub fn init(seed: u64, latent_dim: usize, hidden: &[usize]) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(latent_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Ok(Self {
            mlp: Mlp::init(seed, &dims)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Probabilities (n×1) for ℓ2-normalized features.
    pub fn discriminate(&self, tape: &mut Tape, params: &Bound, z: NodeId) -> Result<NodeId> {
        let logits = self.mlp.forward(tape, params, z)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn discriminate_array(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let params = Bound::bind(&mut tape, self, false);
        let zi = tape.constant(z.clone());
        let out = self.discriminate(&mut tape, &params, zi)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameters for Discriminator {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.mlp.tensors_mut()
    }
}

/// Task model `M`: an encoder-shaped backbone plus a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub backbone: Mlp,
    pub head: Linear,
}

impl TaskModel {
    pub fn init(seed: u64, backbone_dims: &[usize], num_classes: usize) -> Result<Self> {
        let backbone = Mlp::init(rng::derive_seed(seed, &[0]), backbone_dims)?;
        let mut r = rng::stream(seed, &[1]);
        let head = Linear::xavier(backbone.output_dim(), num_classes, &mut r);
        Ok(Self { backbone, head })
    }

    /// Backbone copied from a trained encoder, fresh Xavier head.
    pub fn from_encoder(encoder: &Encoder, num_classes: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[1]);
        Self {
            backbone: encoder.mlp.clone(),
            head: Linear::xavier(encoder.latent_dim(), num_classes, &mut r),
        }
    }

    /// Overwrites the backbone with `encoder`'s weights.
    pub fn load_backbone(&mut self, encoder: &Encoder) -> Result<()> {
        if self.backbone.dims() != encoder.mlp.dims() {
            return Err(Error::Contract(format!(
                "backbone shape {:?} does not match encoder shape {:?}",
                self.backbone.dims(),
                encoder.mlp.dims()
            )));
        }
        self.backbone = encoder.mlp.clone();
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn features(&self, tape: &mut Tape, params: &Bound, x: NodeId) -> Result<NodeId> {
        let n = self.backbone.layers.len() * 2;
        let backbone = Bound {
            ids: params.ids()[..n].to_vec(),
        };
        self.backbone.forward(tape, &backbone, x)
    }

    /// Class probabilities (n×K).
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: NodeId) -> Result<NodeId> {
        let h = self.features(tape, params, x)?;
        let ids = params.ids();
        let n = ids.len();
        let logits = Linear::forward(tape, ids[n - 2], ids[n - 1], h)?;
        Ok(tape.softmax_rows(logits))
    }

    pub fn forward_array(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let params = Bound::bind(&mut tape, self, false);
        let xi = tape.constant(x.clone());
        let out = self.forward(&mut tape, &params, xi)?;
        Ok(tape.value(out).clone())
    }

    pub fn features_array(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.backbone.forward_array(x)
    }
}

impl Parameters for TaskModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.backbone.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.backbone.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}
