use rand::Rng;

use super::params::{he_normal, ParamId, ParamStore};
use super::tape::{BnRef, Tape, Var};
use crate::error::Result;

/// Stride-one convolution with 'same' padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: [usize; 3],
    pub filters: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        kernel: [usize; 3],
        cin: usize,
        filters: usize,
    ) -> Self {
        let fan_in = kernel.iter().product::<usize>() * cin;
        let weight = store.add(
            format!("{name}.kernel"),
            vec![kernel[0], kernel[1], kernel[2], cin, filters],
            he_normal(rng, fan_in, fan_in * filters),
            true,
        );
        let bias = store.add(format!("{name}.bias"), vec![filters], vec![0.0; filters], true);
        Conv {
            weight,
            bias: Some(bias),
            kernel,
            filters,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv(x, self.weight, self.bias, self.kernel)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub handles: BnRef,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, eps: f32) -> Self {
        let gamma = store.add(format!("{name}.gamma"), vec![channels], vec![1.0; channels], true);
        let beta = store.add(format!("{name}.beta"), vec![channels], vec![0.0; channels], true);
        let moving_mean = store.add(
            format!("{name}.moving_mean"),
            vec![channels],
            vec![0.0; channels],
            false,
        );
        let moving_var = store.add(
            format!("{name}.moving_variance"),
            vec![channels],
            vec![1.0; channels],
            false,
        );
        BatchNorm {
            handles: BnRef {
                gamma,
                beta,
                moving_mean,
                moving_var,
                eps,
            },
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.batch_norm(x, &self.handles)
    }
}

/// Bias-free fully connected layer.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub units: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, units: usize) -> Self {
        let weight = store.add(
            format!("{name}.kernel"),
            vec![cin, units],
            he_normal(rng, cin, cin * units),
            true,
        );
        Dense { weight, units }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.dense(x, self.weight)
    }
}
