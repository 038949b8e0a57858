//! Fully connected networks: the shared embedding `f_Θ`, and the small
//! relation and label-count modules built on the same layer stack.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numeric::{NumericError, Tape, Tensor, Var};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Identity,
    Sigmoid,
}

/// Linear layers with ReLU between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord", into = "MlpRecord")]
pub struct Mlp {
    widths: Vec<usize>,
    /// `weights[l]` has shape `[widths[l], widths[l + 1]]`.
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    output: OutputActivation,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    widths: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    #[serde(default)]
    output: OutputActivation,
}

impl From<Mlp> for MlpRecord {
    fn from(m: Mlp) -> Self {
        Self {
            widths: m.widths,
            weights: m.weights.into_iter().map(Tensor::into_data).collect(),
            biases: m.biases.into_iter().map(Tensor::into_data).collect(),
            output: m.output,
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = NumericError;

    fn try_from(r: MlpRecord) -> Result<Self, Self::Error> {
        if r.widths.len() < 2
            || r.weights.len() != r.widths.len() - 1
            || r.biases.len() != r.weights.len()
        {
            return Err(NumericError::InvalidArgument(format!(
                "layer record with widths {:?} holds {} weight and {} bias arrays",
                r.widths,
                r.weights.len(),
                r.biases.len()
            )));
        }
        let weights = r
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, w)| Tensor::matrix(r.widths[l], r.widths[l + 1], w))
            .collect::<Result<Vec<_>, _>>()?;
        let biases = r
            .biases
            .into_iter()
            .map(Tensor::vector)
            .collect::<Result<Vec<_>, _>>()?;
        Mlp::from_parts(r.widths, weights, biases, r.output)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(widths: &[usize], output: OutputActivation, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data).expect("sized above"));
            biases.push(Tensor::vector(vec![0.0; fan_out]).expect("positive width"));
        }
        Self {
            widths: widths.to_vec(),
            weights,
            biases,
            output,
        }
    }

    pub fn from_parts(
        widths: Vec<usize>,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
        output: OutputActivation,
    ) -> Result<Self, NumericError> {
        if widths.len() < 2 || weights.len() != widths.len() - 1 || biases.len() != weights.len() {
            return Err(NumericError::InvalidArgument(
                "layer count does not match widths".into(),
            ));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.shape() != [widths[l], widths[l + 1]] || b.len() != widths[l + 1] {
                return Err(NumericError::ShapeMismatch {
                    op: "mlp layer",
                    left: w.shape().to_vec(),
                    right: vec![widths[l], widths[l + 1]],
                });
            }
        }
        Ok(Self {
            widths,
            weights,
            biases,
            output,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.is_finite())
    }

    /// Places the parameters on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        BoundMlp {
            weights: self
                .weights
                .iter()
                .map(|w| tape.leaf(w.clone(), trainable))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| tape.leaf(b.clone(), trainable))
                .collect(),
            input_dim: self.input_dim(),
            output: self.output,
        }
    }

    /// Forward pass outside of any training context.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NumericError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        let y = bound.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    weights: Vec<Var>,
    biases: Vec<Var>,
    input_dim: usize,
    output: OutputActivation,
}

impl BoundMlp {
    /// Tape handles in the same order as [`Mlp::parameters`].
    pub fn parameter_vars(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericError> {
        if tape.value(x).cols() != self.input_dim {
            return Err(NumericError::ShapeMismatch {
                op: "mlp input",
                left: tape.value(x).shape().to_vec(),
                right: vec![self.input_dim],
            });
        }
        let last = self.weights.len() - 1;
        let mut h = x;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let lin = tape.matmul(h, *w)?;
            h = tape.add(lin, *b)?;
            if l < last {
                h = tape.relu(h)?;
            }
        }
        match self.output {
            OutputActivation::Identity => Ok(h),
            OutputActivation::Sigmoid => tape.sigmoid(h),
        }
    }
}

/// `f_Θ` applied to each row of `batch`, recorded on `tape`.
pub fn embed(tape: &mut Tape, net: &BoundMlp, batch: Var) -> Result<Var, NumericError> {
    net.forward(tape, batch)
}
