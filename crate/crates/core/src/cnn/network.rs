use rand::Rng;

use super::spec::{LayerSpec, NetworkSpec, Topology};
use crate::error::{Error, Result};
use crate::nn::{
    conv3d_backward_cached, conv3d_forward, conv3d_output_shape, glorot_uniform, maxpool3d, pooled_shape, sgd_step,
    unpool3d, Activation, Conv3dLayer, DenseLayer, PoolRecord,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T: Scalar = f32> {
    Conv(Conv3dLayer<T>),
    Pool,
    Dense(DenseLayer<T>),
}

/// Learned weights of one network, one entry per [`LayerSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T: Scalar = f32> {
    pub layers: Vec<Layer<T>>,
}

/// Every intermediate value of one forward pass. `activations[0]` is the
/// input and `activations[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace<T: Scalar = f32> {
    pub activations: Vec<Tensor<T>>,
    pub pools: Vec<PoolRecord<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().unwrap()
    }

    /// Input of the score layer: the dense feature vector of a classifier.
    pub fn penultimate(&self) -> &Tensor<T> {
        &self.activations[self.activations.len() - 2]
    }
}

fn conv_init<T: Scalar, R: Rng + ?Sized>(
    m_in: usize,
    extent: [usize; 3],
    m_out: usize,
    activation: Activation,
    rng: &mut R,
) -> Conv3dLayer<T> {
    let vol: usize = extent.iter().product();
    Conv3dLayer {
        kernels: glorot_uniform(
            [m_in, extent[0], extent[1], extent[2], m_out],
            m_in * vol,
            m_out * vol,
            rng,
        ),
        biases: vec![T::default(); m_out],
        activation,
    }
}

impl<T: Scalar> NetworkParams<T> {
    /// Glorot-initialised weights and zero biases for inputs of
    /// `input_shape = (maps, x, y, z)`.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, input_shape: &[usize], rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if input_shape.len() != 4 {
            return Err(Error::shape("network input", &[0; 4], input_shape));
        }
        let mut shape = input_shape.to_vec();
        let mut flat: Option<usize> = None;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let (units, activation) = match *layer {
                LayerSpec::Conv3d {
                    kernels,
                    extent,
                    activation,
                } => {
                    layers.push(Layer::Conv(conv_init(shape[0], extent, kernels, activation, rng)));
                    shape = conv3d_output_shape(&shape, extent, kernels, spec.padding)?;
                    continue;
                }
                LayerSpec::MaxPool => {
                    layers.push(Layer::Pool);
                    shape = pooled_shape(&shape);
                    continue;
                }
                LayerSpec::FullyConnected { units } => (units, Activation::Relu),
                LayerSpec::Softmax { classes } => (classes, Activation::Identity),
            };
            match spec.topology {
                Topology::Classifier => {
                    let n_in = flat.unwrap_or_else(|| shape.iter().product());
                    let w = glorot_uniform([units, n_in], n_in, units, rng);
                    layers.push(Layer::Dense(DenseLayer::new(w, vec![T::default(); units], activation)?));
                    flat = Some(units);
                }
                Topology::FullyConvolutional => {
                    layers.push(Layer::Conv(conv_init(shape[0], [1, 1, 1], units, activation, rng)));
                    shape[0] = units;
                }
            }
        }
        Ok(NetworkParams { layers })
    }

    pub fn forward_trace(&self, spec: &NetworkSpec, input: &Tensor<T>) -> Result<Trace<T>> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::shape("network", &[spec.layers.len()], &[self.layers.len()]));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pools = Vec::new();
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let y = match layer {
                Layer::Conv(c) => conv3d_forward(x, c, spec.padding)?,
                Layer::Pool => {
                    let rec = maxpool3d(x)?;
                    let out = rec.output.clone();
                    pools.push(rec);
                    out
                }
                Layer::Dense(d) => {
                    let out = d.forward(x.data())?;
                    let n = out.len();
                    Tensor::new([n], out)?
                }
            };
            activations.push(y);
        }
        Ok(Trace { activations, pools })
    }

    pub fn forward(&self, spec: &NetworkSpec, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(spec, input)?.activations.pop().unwrap())
    }

    /// Parameter gradients and the input gradient given `d loss / d output`.
    pub fn backward(
        &self,
        spec: &NetworkSpec,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(NetworkParams<T>, Tensor<T>)> {
        grad_out.expect_shape("network backward", trace.output().shape())?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        let mut pool_idx = trace.pools.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (x, y) = (&trace.activations[i], &trace.activations[i + 1]);
            match layer {
                Layer::Conv(c) => {
                    let cg = conv3d_backward_cached(x, c, spec.padding, y, &g)?;
                    grads.push(Layer::Conv(Conv3dLayer {
                        kernels: cg.kernels,
                        biases: cg.biases,
                        activation: c.activation,
                    }));
                    g = cg.input;
                }
                Layer::Pool => {
                    pool_idx -= 1;
                    g = unpool3d(&trace.pools[pool_idx], &g)?;
                    grads.push(Layer::Pool);
                }
                Layer::Dense(d) => {
                    let dg = d.backward(x.data(), y.data(), g.data())?;
                    grads.push(Layer::Dense(DenseLayer {
                        weights: dg.weights,
                        biases: dg.biases,
                        activation: d.activation,
                    }));
                    g = Tensor::new(x.shape(), dg.input)?;
                }
            }
        }
        grads.reverse();
        Ok((NetworkParams { layers: grads }, g))
    }

    /// Parameter arrays in declaration order: kernels then biases per conv,
    /// weights then biases per dense layer.
    pub fn tensors(&self) -> Vec<(Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push((c.kernels.shape().to_vec(), c.kernels.data()));
                    out.push((vec![c.biases.len()], &c.biases[..]));
                }
                Layer::Dense(d) => {
                    out.push((d.weights.shape().to_vec(), d.weights.data()));
                    out.push((vec![d.biases.len()], &d.biases[..]));
                }
                Layer::Pool => {}
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(c.kernels.data_mut());
                    out.push(&mut c.biases[..]);
                }
                Layer::Dense(d) => {
                    out.push(d.weights.data_mut());
                    out.push(&mut d.biases[..]);
                }
                Layer::Pool => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(T::default());
        }
        z
    }

    /// `self += other`, accumulated in 64-bit.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        let theirs = other.tensors();
        let mine = self.slices_mut();
        if mine.len() != theirs.len() {
            return Err(Error::shape("add_assign", &[mine.len()], &[theirs.len()]));
        }
        for (a, (_, b)) in mine.into_iter().zip(theirs) {
            if a.len() != b.len() {
                return Err(Error::shape("add_assign", &[a.len()], &[b.len()]));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x = T::from_f64(x.to_f64() + y.to_f64());
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v = T::from_f64(v.to_f64() * factor);
            }
        }
    }

    pub fn apply_gradient(&mut self, grads: &Self, learning_rate: f64) -> Result<()> {
        let gs = grads.tensors();
        let ps = self.slices_mut();
        if ps.len() != gs.len() {
            return Err(Error::shape("apply_gradient", &[ps.len()], &[gs.len()]));
        }
        for (p, (_, g)) in ps.into_iter().zip(gs) {
            sgd_step(p, g, learning_rate)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.to_f64().is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv3dLayer {
                    kernels: c.kernels.cast(),
                    biases: c.biases.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    activation: c.activation,
                }),
                Layer::Dense(d) => Layer::Dense(DenseLayer {
                    weights: d.weights.cast(),
                    biases: d.biases.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    activation: d.activation,
                }),
                Layer::Pool => Layer::Pool,
            })
            .collect();
        NetworkParams { layers }
    }

    /// Rebuilds parameters for `spec` from arrays in [`Self::tensors`] order.
    pub fn from_tensors(spec: &NetworkSpec, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut it = tensors.into_iter();
        let mut next = |what: &str| {
            it.next()
                .ok_or_else(|| Error::Corrupt(format!("missing {what} tensor for {:?}", spec.name)))
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let activation = match *layer {
                LayerSpec::MaxPool => {
                    layers.push(Layer::Pool);
                    continue;
                }
                LayerSpec::Conv3d { activation, .. } => activation,
                LayerSpec::FullyConnected { .. } => Activation::Relu,
                LayerSpec::Softmax { .. } => Activation::Identity,
            };
            let w = next("weight")?;
            let b = next("bias")?.into_data();
            let dense = !matches!(layer, LayerSpec::Conv3d { .. }) && spec.topology == Topology::Classifier;
            layers.push(if dense {
                Layer::Dense(DenseLayer::new(w, b, activation)?)
            } else {
                Layer::Conv(Conv3dLayer::new(w, b, activation)?)
            });
        }
        if it.next().is_some() {
            return Err(Error::Corrupt(format!("extra tensors for {:?}", spec.name)));
        }
        Ok(NetworkParams { layers })
    }
}
