use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Standardization, Var};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::scalar::Scalar;

/// Encoder/decoder family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Affine layers with ReLU between consecutive layers.
    #[default]
    Mlp,
    /// The same stack without activations, i.e. one linear projection.
    Linear,
}

/// Affine map `x ↦ x·W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: DenseMatrix<T>,
    pub bias: DenseMatrix<T>,
}

impl<T: Scalar> Layer<T> {
    /// Fan-in uniform initialization: weights in ±√(6/fan_in), biases in
    /// ±1/√fan_in.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let wb = (6.0 / fan_in as f64).sqrt();
        let bb = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: DenseMatrix::from_fn(fan_in, fan_out, |_, _| T::of(rng.random_range(-wb..=wb))),
            bias: DenseMatrix::from_fn(1, fan_out, |_, _| T::of(rng.random_range(-bb..=bb))),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(fan_in, fan_out),
            bias: DenseMatrix::zeros(1, fan_out),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Encoder and optional mirrored decoder for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewNetwork<T> {
    pub variant: Variant,
    pub encoder: Vec<Layer<T>>,
    /// Empty when the view has no decoder.
    pub decoder: Vec<Layer<T>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Config(format!("layer widths must be positive: {dims:?}")));
    }
    Ok(())
}

impl<T: Scalar> ViewNetwork<T> {
    /// Encoder dims `{input, hidden.., latent}`; the decoder mirrors them.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        variant: Variant,
        with_decoder: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        check_dims(&dims)?;
        let encoder = dims.windows(2).map(|w| Layer::init(w[0], w[1], rng)).collect();
        let decoder = if with_decoder {
            dims.iter()
                .rev()
                .collect::<Vec<_>>()
                .windows(2)
                .map(|w| Layer::init(*w[0], *w[1], rng))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            variant,
            encoder,
            decoder,
        })
    }

    /// Builds the network from explicit layers.
    pub fn from_layers(variant: Variant, encoder: Vec<Layer<T>>, decoder: Vec<Layer<T>>) -> Result<Self> {
        let chained = |ls: &[Layer<T>]| ls.windows(2).all(|w| w[0].output_dim() == w[1].input_dim());
        if encoder.is_empty() || !chained(&encoder) || !chained(&decoder) {
            return Err(Error::shape("view network", "layers do not chain"));
        }
        if let (Some(first), Some(last)) = (decoder.first(), decoder.last()) {
            if first.input_dim() != encoder[encoder.len() - 1].output_dim() || last.output_dim() != encoder[0].input_dim() {
                return Err(Error::shape("view network", "decoder does not mirror the encoder ends"));
            }
        }
        Ok(Self {
            variant,
            encoder,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder[self.encoder.len() - 1].output_dim()
    }

    pub fn has_decoder(&self) -> bool {
        !self.decoder.is_empty()
    }

    /// Parameter matrices with stable names, encoder before decoder.
    pub fn parameters(&self) -> Vec<(String, &DenseMatrix<T>)> {
        let mut out = Vec::new();
        for (part, layers) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("{part}.{i}.weight"), &l.weight));
                out.push((format!("{part}.{i}.bias"), &l.bias));
            }
        }
        out
    }

    /// Same order as [`Self::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut DenseMatrix<T>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, m)| m.len()).sum()
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundNetwork {
        let mut leaves = |ls: &[Layer<T>]| -> Vec<(Var, Var)> {
            ls.iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect()
        };
        let encoder = leaves(&self.encoder);
        let decoder = leaves(&self.decoder);
        BoundNetwork {
            variant: self.variant,
            input_dim: self.input_dim(),
            encoder,
            decoder,
        }
    }

    /// Latent features `normalize(E(x))` outside of any training graph.
    pub fn encode(&self, x: &DenseMatrix<T>, mode: Standardization) -> Result<DenseMatrix<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let net = self.bind_constant(&mut g);
        let raw = net.encode_raw(&mut g, xv)?;
        let h = g.normalize(raw, mode)?;
        Ok(g.value(h).clone())
    }

    fn bind_constant(&self, g: &mut Graph<T>) -> BoundNetwork {
        let mut leaves = |ls: &[Layer<T>]| -> Vec<(Var, Var)> {
            ls.iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect()
        };
        let encoder = leaves(&self.encoder);
        let decoder = leaves(&self.decoder);
        BoundNetwork {
            variant: self.variant,
            input_dim: self.input_dim(),
            encoder,
            decoder,
        }
    }
}

/// Graph handles of one network's parameters.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    pub variant: Variant,
    input_dim: usize,
    pub encoder: Vec<(Var, Var)>,
    pub decoder: Vec<(Var, Var)>,
}

impl BoundNetwork {
    fn stack<T: Scalar>(&self, g: &mut Graph<T>, layers: &[(Var, Var)], mut x: Var) -> Result<Var> {
        for (i, &(w, b)) in layers.iter().enumerate() {
            let z = g.matmul(x, w)?;
            x = g.add_row_bias(z, b)?;
            if self.variant == Variant::Mlp && i + 1 < layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Encoder output before normalization.
    pub fn encode_raw<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let cols = g.shape(x).1;
        if cols != self.input_dim {
            return Err(Error::shape(
                "encode",
                format!("view expects {} features, got {cols}", self.input_dim),
            ));
        }
        self.stack(g, &self.encoder, x)
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        if self.decoder.is_empty() {
            return Err(Error::Contract("view network has no decoder".into()));
        }
        self.stack(g, &self.decoder, z)
    }

    /// All parameter handles, in [`ViewNetwork::parameters`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}
