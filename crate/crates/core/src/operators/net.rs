//! Fully connected ReLU network with spectral normalization, conjugated by
//! the metric so that it is non-expansive in `‖·‖_G`:
//!
//! `D(u) = G^{-1/2} net(G^{1/2} u)`, each weight divided by `max(1, σ̂)`.
//!
//! The normalizers `σ̂` are computed by [`ParamOperator::freeze`] and treated
//! as constants by the cotangent products.

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{spectral_norm, Matrix, Metric, Vector};

use super::{ParamLayout, ParamOperator, ParamSlot, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    // zero at the ReLU kink
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetLayer {
    pub weight: ParamSlot,
    pub bias: ParamSlot,
}

#[derive(Debug, Clone)]
pub struct SpectralNet {
    width: usize,
    batch: usize,
    layers: Vec<NetLayer>,
    metric: Metric,
    output: Activation,
    normalize: bool,
}

struct Trace {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    out: Matrix,
}

impl SpectralNet {
    /// Appends `depth` square layers named `{prefix}.w{l}` / `{prefix}.b{l}`
    /// to `layout`. Hidden layers use ReLU, the last layer `output`.
    pub fn new(
        layout: &mut ParamLayout,
        prefix: &str,
        depth: usize,
        batch: usize,
        metric: Metric,
        output: Activation,
    ) -> Result<Self> {
        if depth == 0 || batch == 0 {
            return Err(invalid("network needs at least one layer and one sample"));
        }
        if !metric.dim().is_multiple_of(batch) {
            return Err(invalid("metric length is not a multiple of the batch size"));
        }
        let width = metric.dim() / batch;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            layers.push(NetLayer {
                weight: layout.push(format!("{prefix}.w{l}"), width * width)?,
                bias: layout.push(format!("{prefix}.b{l}"), width)?,
            });
        }
        Ok(Self {
            width,
            batch,
            layers,
            metric,
            output,
            normalize: true,
        })
    }

    /// Disables spectral normalization (for ablations).
    pub fn without_normalization(mut self) -> Self {
        self.normalize = false;
        self
    }

    pub fn normalized(&self) -> bool {
        self.normalize
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layers(&self) -> &[NetLayer] {
        &self.layers
    }

    pub fn weight(&self, w: &ParamVector, layer: usize) -> Matrix {
        Matrix::from_column_slice(self.width, self.width, w.get(&self.layers[layer].weight))
    }

    /// Writes an initialization that is the identity on `{u > −shift}`:
    /// weights `scale · I`, hidden biases `+shift`, last bias `−shift`.
    /// Exact for an identity output activation when `scale = 1`, or when
    /// `scale ≥ 1` and normalization divides it back out.
    pub fn init_shifted_identity(&self, w: &mut ParamVector, shift: f64, scale: f64) -> Result<()> {
        let n = self.width;
        let eye = Matrix::identity(n, n) * scale;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            w.set(&layer.weight, eye.as_slice())?;
            let b = match (l == last, last == 0) {
                (_, true) => 0.0,
                (true, false) => -shift,
                (false, false) => shift,
            };
            w.set(&layer.bias, &vec![b; n])?;
        }
        Ok(())
    }

    fn forward(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Trace {
        let x0 = self.metric.apply_sqrt(u);
        let mut x = Matrix::from_column_slice(self.width, self.batch, x0.as_slice());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let weight = self.weight(w, l) / frozen[l];
            let bias = w.get(&layer.bias);
            let mut a = &weight * &x;
            for mut col in a.column_iter_mut() {
                for (v, b) in col.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            let act = if l == last { self.output } else { Activation::Relu };
            let next = a.map(|v| act.apply(v));
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(a);
        }
        Trace { inputs, pre, out: x }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            Activation::Relu
        }
    }
}

impl ParamOperator for SpectralNet {
    fn name(&self) -> &'static str {
        "spectral_net"
    }

    fn dim(&self) -> usize {
        self.width * self.batch
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn frozen_len(&self) -> usize {
        self.layers.len()
    }

    fn freeze(&self, w: &ParamVector) -> Result<Vec<f64>> {
        Ok((0..self.layers.len())
            .map(|l| {
                if self.normalize {
                    spectral_norm(&self.weight(w, l)).max(1.0)
                } else {
                    1.0
                }
            })
            .collect())
    }

    fn apply(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Result<Vector> {
        check_dim("network input", self.dim(), u.len())?;
        check_dim("network normalizers", self.layers.len(), frozen.len())?;
        let t = self.forward(u, w, frozen);
        Ok(self.metric.apply_inv_sqrt(&Vector::from_column_slice(t.out.as_slice())))
    }

    fn vjp(
        &self,
        u: &Vector,
        w: &ParamVector,
        frozen: &[f64],
        cot: &Vector,
        grad_w: &mut Vector,
    ) -> Result<Vector> {
        check_dim("network cotangent", self.dim(), cot.len())?;
        let t = self.forward(u, w, frozen);
        let c = self.metric.apply_inv_sqrt(cot);
        let mut x_bar = Matrix::from_column_slice(self.width, self.batch, c.as_slice());
        for l in (0..self.layers.len()).rev() {
            let act = self.activation(l);
            let a_bar = x_bar.zip_map(&t.pre[l], |g, a| g * act.derivative(a));
            let scale = frozen[l];
            let w_bar = &a_bar * t.inputs[l].transpose() / scale;
            let layer = &self.layers[l];
            for (k, g) in layer.weight.range().zip(w_bar.iter()) {
                grad_w[k] += g;
            }
            for (i, k) in layer.bias.range().enumerate() {
                grad_w[k] += a_bar.row(i).sum();
            }
            x_bar = (self.weight(w, l) / scale).tr_mul(&a_bar);
        }
        Ok(self.metric.apply_sqrt(&Vector::from_column_slice(x_bar.as_slice())))
    }

    fn contraction_bound(&self) -> f64 {
        if self.normalize {
            1.0
        } else {
            f64::INFINITY
        }
    }

    fn kink_margin(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Result<f64> {
        let t = self.forward(u, w, frozen);
        Ok((0..self.layers.len())
            .filter(|&l| self.activation(l) == Activation::Relu)
            .flat_map(|l| t.pre[l].iter().map(|a| a.abs()).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min))
    }
}
