use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clustering::MetricWeights;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Which parameters a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Metric,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::Metric, ParamGroup::Classifier];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Metric => "metric",
            ParamGroup::Classifier => "classifier",
        }
    }
}

/// Tensor names in the fixed order used by every flat view.
pub const TENSORS: [(&str, ParamGroup); 5] = [
    ("encoder.weight", ParamGroup::Encoder),
    ("encoder.bias", ParamGroup::Encoder),
    ("metric.w", ParamGroup::Metric),
    ("classifier.weight", ParamGroup::Classifier),
    ("classifier.bias", ParamGroup::Classifier),
];

/// `x ↦ tanh(W x + b)`, mapping raw rows (dim m) to features (dim n).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    /// n×m
    pub weight: Matrix,
    pub bias: Vector,
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Encodes every row of `raw`.
    pub fn encode(&self, raw: &Matrix) -> Result<Matrix> {
        if raw.ncols() != self.input_dim() {
            return Err(Error::contract(format!(
                "encoder expects {}-dimensional rows, got {}",
                self.input_dim(),
                raw.ncols()
            )));
        }
        let mut x = raw * self.weight.transpose();
        for mut row in x.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.bias.iter()) {
                *v = (*v + b).tanh();
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// C×n
    pub weight: Matrix,
    pub bias: Vector,
}

impl Classifier {
    pub fn logits(&self, pooled: &Vector) -> Vector {
        &self.weight * pooled + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub metric: MetricWeights,
    pub classifier: Classifier,
}

impl ModelParams {
    /// Encoder weights ~ N(0, 1/m), classifier weights ~ N(0, 0.01/n), zero
    /// biases, uniform metric.
    pub fn init(raw_dim: usize, feature_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if raw_dim == 0 || feature_dim == 0 || classes < 2 {
            return Err(Error::contract(format!(
                "cannot build a model with raw dim {raw_dim}, feature dim {feature_dim}, {classes} classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Normal::new(0.0, (1.0 / raw_dim as f64).sqrt()).expect("valid normal");
        let cls = Normal::new(0.0, 0.1 / (feature_dim as f64).sqrt()).expect("valid normal");
        let weight = Matrix::from_fn(feature_dim, raw_dim, |_, _| enc.sample(&mut rng));
        let cweight = Matrix::from_fn(classes, feature_dim, |_, _| cls.sample(&mut rng));
        Ok(Self {
            encoder: Encoder {
                weight,
                bias: Vector::zeros(feature_dim),
            },
            metric: MetricWeights::uniform(feature_dim),
            classifier: Classifier {
                weight: cweight,
                bias: Vector::zeros(classes),
            },
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.weight.nrows()
    }

    pub fn raw_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.feature_dim();
        if self.encoder.bias.len() != n
            || self.metric.len() != n
            || self.classifier.weight.ncols() != n
            || self.classifier.bias.len() != self.classes()
        {
            return Err(Error::contract("model parameter shapes are inconsistent"));
        }
        for (name, values) in self.tensors() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            (TENSORS[0].0, self.encoder.weight.as_slice()),
            (TENSORS[1].0, self.encoder.bias.as_slice()),
            (TENSORS[2].0, self.metric.as_slice()),
            (TENSORS[3].0, self.classifier.weight.as_slice()),
            (TENSORS[4].0, self.classifier.bias.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 5] {
        [
            (TENSORS[0].0, self.encoder.weight.as_mut_slice()),
            (TENSORS[1].0, self.encoder.bias.as_mut_slice()),
            (TENSORS[2].0, self.metric.as_mut_slice()),
            (TENSORS[3].0, self.classifier.weight.as_mut_slice()),
            (TENSORS[4].0, self.classifier.bias.as_mut_slice()),
        ]
    }
}

/// Gradient of the loss with respect to every tensor of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder_weight: Matrix,
    pub encoder_bias: Vector,
    pub metric: Vector,
    pub classifier_weight: Matrix,
    pub classifier_bias: Vector,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            encoder_weight: Matrix::zeros(p.feature_dim(), p.raw_dim()),
            encoder_bias: Vector::zeros(p.feature_dim()),
            metric: Vector::zeros(p.feature_dim()),
            classifier_weight: Matrix::zeros(p.classes(), p.feature_dim()),
            classifier_bias: Vector::zeros(p.classes()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.encoder_weight += &other.encoder_weight;
        self.encoder_bias += &other.encoder_bias;
        self.metric += &other.metric;
        self.classifier_weight += &other.classifier_weight;
        self.classifier_bias += &other.classifier_bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.encoder_weight *= s;
        self.encoder_bias *= s;
        self.metric *= s;
        self.classifier_weight *= s;
        self.classifier_bias *= s;
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 5] {
        [
            (TENSORS[0].0, self.encoder_weight.as_slice()),
            (TENSORS[1].0, self.encoder_bias.as_slice()),
            (TENSORS[2].0, self.metric.as_slice()),
            (TENSORS[3].0, self.classifier_weight.as_slice()),
            (TENSORS[4].0, self.classifier_bias.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 5] {
        [
            (TENSORS[0].0, self.encoder_weight.as_mut_slice()),
            (TENSORS[1].0, self.encoder_bias.as_mut_slice()),
            (TENSORS[2].0, self.metric.as_mut_slice()),
            (TENSORS[3].0, self.classifier_weight.as_mut_slice()),
            (TENSORS[4].0, self.classifier_bias.as_mut_slice()),
        ]
    }

    /// Fails on the first tensor holding a NaN or infinity.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, values) in self.tensors() {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient {name}[{i}]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = ModelParams::init(8, 4, 3, 7).unwrap();
        assert_eq!(a, ModelParams::init(8, 4, 3, 7).unwrap());
        assert_ne!(a, ModelParams::init(8, 4, 3, 8).unwrap());
        assert_eq!((a.raw_dim(), a.feature_dim(), a.classes()), (8, 4, 3));
        assert!(a.metric.is_normalized());
        a.validate().unwrap();
        assert!(ModelParams::init(8, 4, 1, 0).is_err());
    }

    #[test]
    fn encoder_is_tanh_affine() {
        let enc = Encoder {
            weight: Matrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.5, 0.5, 0.0]),
            bias: Vector::from_vec(vec![0.0, 1.0]),
        };
        let x = enc.encode(&Matrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert!((x[(0, 0)] - (-2.0f64).tanh()).abs() < 1e-15);
        assert!((x[(0, 1)] - 2.5f64.tanh()).abs() < 1e-15);
        assert!(enc.encode(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn nonfinite_gradient_is_named() {
        let p = ModelParams::init(3, 2, 2, 0).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.ensure_finite().unwrap();
        g.metric[1] = f64::NAN;
        let msg = g.ensure_finite().unwrap_err().to_string();
        assert!(msg.contains("metric.w[1]"), "{msg}");
    }
}
