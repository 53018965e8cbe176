use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ValueError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            // log(1 + e^z) without overflow
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Self {
        Self {
            weights,
            bias,
            activation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// Row-major: one inner array per output unit.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    layers: Vec<LayerFile>,
}

/// Feed-forward value network with a scalar softplus output.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMlp {
    layers: Vec<DenseLayer>,
}

impl NeuralMlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ValueError> {
        let invalid = |msg: String| Err(ValueError::InvalidBackend(msg));
        let Some(last) = layers.last() else {
            return invalid("network has no layers".into());
        };
        if last.weights.nrows() != 1 {
            return invalid(format!("output layer must have one unit, has {}", last.weights.nrows()));
        }
        if last.activation != Activation::Softplus {
            return invalid("output layer must use softplus so the value stays nonnegative".into());
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.ncols() == 0 || layer.bias.len() != layer.weights.nrows() {
                return invalid(format!(
                    "layer {i}: weights {}x{} do not match bias of length {}",
                    layer.weights.nrows(),
                    layer.weights.ncols(),
                    layer.bias.len()
                ));
            }
            if i > 0 && layers[i - 1].weights.nrows() != layer.weights.ncols() {
                return invalid(format!(
                    "layer {i} expects {} inputs but layer {} has {} outputs",
                    layer.weights.ncols(),
                    i - 1,
                    layers[i - 1].weights.nrows()
                ));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return invalid(format!("layer {i} has non-finite parameters"));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let mut a = x.clone();
        for layer in &self.layers {
            a = (&layer.weights * &a + &layer.bias).map(|z| layer.activation.apply(z));
        }
        a[0]
    }

    /// Reverse-mode gradient of the scalar output.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = &layer.weights * &a + &layer.bias;
            a = z.map(|v| layer.activation.apply(v));
            pre.push(z);
        }
        let mut adjoint = DVector::from_element(1, 1.0);
        for (layer, z) in self.layers.iter().zip(&pre).rev() {
            let delta = adjoint.component_mul(&z.map(|v| layer.activation.derivative(v)));
            adjoint = layer.weights.tr_mul(&delta);
        }
        adjoint
    }

    pub fn from_json_str(text: &str) -> Result<Self, ValueError> {
        let file: WeightFile = serde_json::from_str(text).map_err(|e| ValueError::Parse {
            what: "neural weight file".into(),
            reason: e.to_string(),
        })?;
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let rows = l.weights.len();
                let cols = l.weights.first().map_or(0, Vec::len);
                if rows == 0 || l.weights.iter().any(|r| r.len() != cols) {
                    return Err(ValueError::InvalidBackend(format!("layer {i}: weights are not rectangular")));
                }
                let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
                Ok(DenseLayer::new(
                    DMatrix::from_row_slice(rows, cols, &flat),
                    DVector::from_vec(l.bias),
                    l.activation,
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(layers)
    }

    pub fn to_json_string(&self) -> String {
        let file = WeightFile {
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    bias: l.bias.iter().copied().collect(),
                    activation: l.activation,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("weight file serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ValueError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ValueError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, widths: &[usize]) -> NeuralMlp {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == widths.len() {
                    Activation::Softplus
                } else {
                    Activation::Tanh
                };
                DenseLayer::new(
                    DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-1.0..1.0)),
                    DVector::from_fn(w[1], |_, _| rng.gen_range(-0.5..0.5)),
                    act,
                )
            })
            .collect();
        NeuralMlp::new(layers).unwrap()
    }

    #[test]
    fn softplus_regime_gradient_is_weight_row() {
        let net = NeuralMlp::new(vec![DenseLayer::new(dmatrix![1.0, 0.0], dvector![0.0], Activation::Softplus)]).unwrap();
        let x = dvector![30.0, -4.0];
        let g = net.gradient(&x);
        assert!((g - dvector![1.0, 0.0]).norm() < 1e-12);
        assert!((net.value(&x) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn reverse_mode_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_net(&mut rng, &[2, 16, 16, 1]);
        let h = 1e-5;
        for _ in 0..100 {
            let x = dvector![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let g = net.gradient(&x);
            let fd = DVector::from_iterator(
                2,
                (0..2).map(|k| {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[k] += h;
                    b[k] -= h;
                    (net.value(&a) - net.value(&b)) / (2.0 * h)
                }),
            );
            assert!((&fd - &g).norm() / g.norm().max(1e-8) < 1e-5);
            assert!(net.value(&x) >= 0.0);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = random_net(&mut rng, &[2, 4, 1]);
        let back = NeuralMlp::from_json_str(&net.to_json_string()).unwrap();
        assert_eq!(back, net);

        let text = r#"{"layers":[{"weights":[[1.0,0.0]],"bias":[0.0],"activation":"tanh"}]}"#;
        assert!(matches!(NeuralMlp::from_json_str(text), Err(ValueError::InvalidBackend(_))));
        let ragged = r#"{"layers":[{"weights":[[1.0,0.0],[1.0]],"bias":[0.0,0.0],"activation":"tanh"},
                         {"weights":[[1.0,1.0]],"bias":[0.0],"activation":"softplus"}]}"#;
        assert!(NeuralMlp::from_json_str(ragged).is_err());
        assert!(matches!(NeuralMlp::from_json_str("{\"layers\": ["), Err(ValueError::Parse { .. })));
        let mismatch = r#"{"layers":[{"weights":[[1.0,0.0]],"bias":[0.0],"activation":"tanh"},
                           {"weights":[[1.0,1.0]],"bias":[0.0],"activation":"softplus"}]}"#;
        assert!(NeuralMlp::from_json_str(mismatch).is_err());
    }
}
