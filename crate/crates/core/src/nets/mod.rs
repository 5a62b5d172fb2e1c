//! Networks: the forecasting generator, the spatiotemporal refiner and the
//! Wasserstein critics, plus shared parameter utilities.

pub mod critic;
pub mod gm;
pub mod gr;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{nn, Kind, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

pub(crate) fn lrelu(x: &Tensor) -> Tensor {
    x.maximum(&(x * LEAKY_SLOPE))
}

/// Deterministically re-initializes every variable from `seed`, independent
/// of the global torch generator.
///
/// Weights (rank ≥ 2) are drawn from a Kaiming-uniform law for leaky-ReLU
/// fan-in, biases are zeroed. Variables are visited in name order.
pub fn init_params(vs: &nn::VarStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars: BTreeMap<String, Tensor> = vs.variables().into_iter().collect();
    let gain = (6.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    tch::no_grad(|| {
        for (_, mut var) in vars {
            let size = var.size();
            let numel: i64 = size.iter().product();
            if size.len() >= 2 {
                let fan_in: i64 = size[1..].iter().product();
                let bound = gain / (fan_in as f64).sqrt();
                let data: Vec<f32> = (0..numel).map(|_| rng.random_range(-bound..bound) as f32).collect();
                let src = Tensor::from_slice(&data).view(size.as_slice()).to_kind(var.kind());
                var.copy_(&src);
            } else {
                let _ = var.zero_();
            }
        }
    });
}

/// Named copies of every variable, sorted by name.
pub fn snapshot(vs: &nn::VarStore) -> BTreeMap<String, Tensor> {
    vs.variables().into_iter().map(|(k, v)| (k, v.detach().copy())).collect()
}

/// True when both stores hold bit-identical values under identical names.
pub fn params_equal(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.size() == vb.size() && va.equal(vb))
}

pub fn param_count(vs: &nn::VarStore) -> i64 {
    vs.variables().values().map(|v| v.numel() as i64).sum()
}

pub(crate) fn conv2d(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, padding: i64) -> nn::Conv2D {
    let cfg = nn::ConvConfig {
        stride,
        padding,
        ..Default::default()
    };
    nn::conv2d(p, c_in, c_out, k, cfg)
}

pub(crate) fn conv3d(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, padding: i64) -> nn::Conv3D {
    let cfg = nn::ConvConfig {
        stride,
        padding,
        ..Default::default()
    };
    nn::conv3d(p, c_in, c_out, k, cfg)
}

pub(crate) fn conv_t3d(p: nn::Path, c_in: i64, c_out: i64, k: i64, stride: i64, padding: i64) -> nn::ConvTranspose3D {
    let cfg = nn::ConvTransposeConfig {
        stride,
        padding,
        ..Default::default()
    };
    nn::conv_transpose3d(p, c_in, c_out, k, cfg)
}

/// Sets the bias of a conv layer to a constant.
pub(crate) fn fill_bias<T: BiasLayer>(layer: &mut T, value: f64) {
    if let Some(b) = layer.bias_mut() {
        tch::no_grad(|| {
            let _ = b.fill_(value);
        });
    }
}

pub(crate) trait BiasLayer {
    fn bias_mut(&mut self) -> Option<&mut Tensor>;
}

impl BiasLayer for nn::Conv2D {
    fn bias_mut(&mut self) -> Option<&mut Tensor> {
        self.bs.as_mut()
    }
}

impl BiasLayer for nn::Conv3D {
    fn bias_mut(&mut self) -> Option<&mut Tensor> {
        self.bs.as_mut()
    }
}

pub(crate) fn float_kind(vs: &nn::VarStore) -> Kind {
    vs.variables().values().next().map(|v| v.kind()).unwrap_or(Kind::Float)
}
