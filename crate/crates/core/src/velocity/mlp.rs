//! Fully connected velocity network with hand-written reverse mode.
//!
//! Input is the state concatenated with the raw noise level `t`; output is a
//! velocity of the same dimension as the state. Hidden layers share one
//! activation, the output layer is linear.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::point::Point;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn deriv(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Domain(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths of a velocity network over `dim`-dimensional states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    dim: usize,
    hidden: Vec<usize>,
    activation: Activation,
}

impl MlpArchitecture {
    pub fn new(dim: usize, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("state dimension must be at least 1".into()));
        }
        if hidden.is_empty() {
            return Err(Error::Domain("at least one hidden layer is required".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Domain("layer widths must be at least 1".into()));
        }
        Ok(MlpArchitecture {
            dim,
            hidden,
            activation,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.dim + 1
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `[input, hidden..., output]`
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim());
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim());
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Per-layer activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> Point {
        Point(self.acts.last().unwrap().clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: MlpArchitecture,
    params: Vec<f64>,
}

impl Mlp {
    pub fn from_params(arch: MlpArchitecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::Domain(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Mlp { arch, params })
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let n = arch.param_count();
        Mlp {
            arch,
            params: vec![0.0; n],
        }
    }

    /// Weights and biases uniform in `[-a, a]`, `a = sqrt(1 / fan_in)`.
    pub fn init(arch: MlpArchitecture, rng: &mut Rng) -> Self {
        let mut params = Vec::with_capacity(arch.param_count());
        for w in arch.widths().windows(2) {
            let a = (1.0 / w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-a..=a));
            }
        }
        Mlp { arch, params }
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &Point) -> Result<()> {
        if x.dim() != self.arch.dim {
            return Err(Error::Domain(format!(
                "network expects {}-dimensional states, got {}",
                self.arch.dim,
                x.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Point, t: f64) -> Result<Point> {
        Ok(self.forward_cached(x, t)?.output())
    }

    pub fn forward_cached(&self, x: &Point, t: f64) -> Result<ForwardCache> {
        self.check_input(x)?;
        let widths = self.arch.widths();
        let n_layers = widths.len() - 1;
        let mut input = Vec::with_capacity(widths[0]);
        input.extend_from_slice(x.coords());
        input.push(t);

        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let a_in = &acts[l];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    b[o] + row.iter().zip(a_in).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let a = if l + 1 < n_layers {
                z.iter().map(|&zi| self.arch.activation.apply(zi)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Adds `(d out / d params)^T grad_out` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let widths = self.arch.widths();
        let n_layers = widths.len() - 1;

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }

        // delta holds dL/dz for the current layer.
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let a_in = &cache.acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, ai) in row.iter_mut().zip(a_in) {
                    *g += d * ai;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (n, wi) in next.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *n += d * wi;
                }
            }
            let z = &cache.pre[l - 1];
            let a = &cache.acts[l];
            for i in 0..fan_in {
                next[i] *= self.arch.activation.deriv(z[i], a[i]);
            }
            delta = next;
        }
    }
}
