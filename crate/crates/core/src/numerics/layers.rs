use rand::Rng;

use super::array::DenseArray;
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseArray,
    pub bias: DenseArray,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DenseArray::zeros(&[output, input]),
            bias: DenseArray::zeros(&[output]),
        }
    }

    /// Uniform init with bound `gain / sqrt(in)`.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / (input.max(1) as f64).sqrt();
        Self {
            weight: DenseArray::uniform(&[output, input], bound, rng),
            bias: DenseArray::uniform(&[output], bound, rng),
        }
    }

    pub fn from_parts(weight: DenseArray, bias: DenseArray) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "linear weight {:?} incompatible with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "linear expects input of length {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut y = vec![0.0; self.out_dim()];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.in_dim();
        let w = self.weight.values();
        for (o, (yo, b)) in y.iter_mut().zip(self.bias.values()).enumerate() {
            let row = &w[o * n..(o + 1) * n];
            *yo = b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim()];
        self.backward_into(x, dy, grad, Some(&mut dx));
        dx
    }

    pub(crate) fn backward_into(
        &self,
        x: &[f64],
        dy: &[f64],
        grad: &mut Linear,
        dx: Option<&mut [f64]>,
    ) {
        let n = self.in_dim();
        let w = self.weight.values();
        {
            let gw = grad.weight.values_mut();
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (gwi, xi) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
                    *gwi += g * xi;
                }
            }
        }
        for (gb, g) in grad.bias.values_mut().iter_mut().zip(dy) {
            *gb += g;
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (dxi, wi) in dx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                    *dxi += g * wi;
                }
            }
        }
    }

    /// Applies the layer to every row of a `[rows, in]` array.
    pub fn forward_rows(&self, x: &DenseArray) -> Result<DenseArray> {
        let n = self.in_dim();
        if x.shape().last() != Some(&n) {
            return Err(Error::Shape(format!(
                "row input {:?} does not end in {}",
                x.shape(),
                n
            )));
        }
        let rows = x.len() / n;
        let m = self.out_dim();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let mut out = DenseArray::zeros(&shape);
        let ov = out.values_mut();
        for r in 0..rows {
            self.forward_into(&x.values()[r * n..(r + 1) * n], &mut ov[r * m..(r + 1) * m]);
        }
        Ok(out)
    }

    /// Row-wise backward; returns `dL/dx` when `want_dx`.
    pub fn backward_rows(
        &self,
        x: &DenseArray,
        dy: &DenseArray,
        grad: &mut Linear,
        want_dx: bool,
    ) -> Option<DenseArray> {
        let n = self.in_dim();
        let m = self.out_dim();
        let rows = x.len() / n;
        let mut dx = want_dx.then(|| DenseArray::zeros(x.shape()));
        for r in 0..rows {
            let xr = &x.values()[r * n..(r + 1) * n];
            let dyr = &dy.values()[r * m..(r + 1) * m];
            let dxr = dx
                .as_mut()
                .map(|d| &mut d.values_mut()[r * n..(r + 1) * n]);
            self.backward_into(xr, dyr, grad, dxr);
        }
        dx
    }

    pub fn tensors(&self) -> Vec<&DenseArray> {
        vec![&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn zeroed(&self) -> Linear {
        Linear::zeros(self.in_dim(), self.out_dim())
    }
}

/// Stack of linear layers with a ramp between consecutive layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], gain: f64, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("mlp needs at least two dims".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], gain, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("mlp needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "mlp layer dims do not chain: {} -> {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h)?;
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        Ok((h, MlpCache { inputs }))
    }

    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut g = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let mut dx = self.layers[i].backward(x, &g, &mut grad.layers[i]);
            if i > 0 {
                // x is the ramp output of layer i-1; zero where it was clipped
                for (d, &xi) in dx.iter_mut().zip(x) {
                    if xi <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            g = dx;
        }
        g
    }

    pub fn tensors(&self) -> Vec<&DenseArray> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseArray> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn zeroed(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| l.zeroed()).collect(),
        }
    }
}
