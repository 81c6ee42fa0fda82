use super::activation::Activation;
use crate::error::{Error, Result};
use crate::tensor::{store, Scalar, Tensor};

/// Fully connected layer with weights stored `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T: Scalar = f32> {
    pub weights: Tensor<T>,
    pub biases: Vec<T>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T: Scalar = f32> {
    pub input: Vec<T>,
    pub weights: Tensor<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, biases: Vec<T>, activation: Activation) -> Result<Self> {
        weights.expect_rank("dense layer", 2)?;
        if biases.len() != weights.shape()[0] {
            return Err(Error::shape("dense biases", &[weights.shape()[0]], &[biases.len()]));
        }
        Ok(DenseLayer {
            weights,
            biases,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.inputs() {
            return Err(Error::shape("dense", &[self.inputs()], &[input.len()]));
        }
        let w = self.weights.data();
        let n = self.inputs();
        let out = (0..self.outputs())
            .map(|o| {
                let row = &w[o * n..(o + 1) * n];
                let s: f64 = row.iter().zip(input).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
                T::from_f64(self.activation.apply(s + self.biases[o].to_f64()))
            })
            .collect();
        Ok(out)
    }

    pub fn backward(&self, input: &[T], output: &[T], grad_out: &[T]) -> Result<DenseGrads<T>> {
        if grad_out.len() != self.outputs() || output.len() != self.outputs() {
            return Err(Error::shape("dense_backward", &[self.outputs()], &[grad_out.len()]));
        }
        if input.len() != self.inputs() {
            return Err(Error::shape("dense_backward", &[self.inputs()], &[input.len()]));
        }
        let n = self.inputs();
        let pre: Vec<f64> = output
            .iter()
            .zip(grad_out)
            .map(|(y, g)| g.to_f64() * self.activation.derivative_from_output(y.to_f64()))
            .collect();
        let w = self.weights.data();
        let mut gin = vec![0.0; n];
        let mut gw = Vec::with_capacity(w.len());
        for (o, &d) in pre.iter().enumerate() {
            let row = &w[o * n..(o + 1) * n];
            for ((gi, wv), xv) in gin.iter_mut().zip(row).zip(input) {
                *gi += d * wv.to_f64();
                gw.push(d * xv.to_f64());
            }
        }
        Ok(DenseGrads {
            input: store(gin),
            weights: Tensor::new(self.weights.shape(), store(gw))?,
            biases: store(pre),
        })
    }
}
