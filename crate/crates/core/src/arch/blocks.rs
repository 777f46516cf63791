//! Building blocks shared by the planar, volumetric and fused networks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Dense, ParamStore, Tape, Var};
use crate::tensor::Shape;

/// Spatial rank of a block: 3×3 kernels or 3×3×3 kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Planar,
    Volumetric,
}

impl Rank {
    fn cube(self, k: usize) -> [usize; 3] {
        match self {
            Rank::Planar => [k, k, 1],
            Rank::Volumetric => [k, k, k],
        }
    }
}

/// Two `conv → [BN] → ReLU` stages with 'same' padding.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    stages: Vec<(Conv, Option<BatchNorm>)>,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        rank: Rank,
        cin: usize,
        filters: usize,
        bn_eps: Option<f32>,
    ) -> Self {
        let mut stages = Vec::with_capacity(2);
        let mut c = cin;
        for j in 1..=2 {
            let conv = Conv::new(store, rng, &format!("{name}.conv{j}"), rank.cube(3), c, filters);
            let bn = bn_eps.map(|eps| BatchNorm::new(store, &format!("{name}.bn{j}"), filters, eps));
            stages.push((conv, bn));
            c = filters;
        }
        ConvBlock { stages }
    }

    pub fn filters(&self) -> usize {
        self.stages[0].0.filters
    }

    pub fn apply(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for (conv, bn) in &self.stages {
            x = conv.apply(tape, x)?;
            if let Some(bn) = bn {
                x = bn.apply(tape, x)?;
            }
            x = tape.relu(x);
        }
        Ok(x)
    }
}

/// Channel gate: global average, bottleneck `c → c/r → c`, logistic gate,
/// per-channel rescale.
#[derive(Clone, Debug)]
pub struct SeGate {
    squeeze: Dense,
    excite: Dense,
}

impl SeGate {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidSpec(format!(
                "{channels} channels not divisible by reduction {reduction}"
            )));
        }
        let width = channels / reduction;
        Ok(SeGate {
            squeeze: Dense::new(store, rng, &format!("{name}.squeeze"), channels, width),
            excite: Dense::new(store, rng, &format!("{name}.excite"), width, channels),
        })
    }

    pub fn bottleneck(&self) -> usize {
        self.squeeze.units
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.global_avg_pool(x);
        let g = self.squeeze.apply(tape, g)?;
        let g = tape.relu(g);
        let g = self.excite.apply(tape, g)?;
        let g = tape.sigmoid(g);
        tape.scale_channels(x, g)
    }
}

/// Collapses `n×h×w×d×c` to `n×h×w×c`: a pointwise volumetric conv to one
/// channel, depth moved onto the channel axis, then a 3×3 planar conv.
#[derive(Clone, Debug)]
pub struct Reduce3d {
    squeeze: Conv,
    expand: Conv,
    depth: usize,
}

impl Reduce3d {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, depth: usize, filters: usize) -> Self {
        Reduce3d {
            squeeze: Conv::new(store, rng, &format!("{name}.squeeze"), [1, 1, 1], cin, 1),
            expand: Conv::new(store, rng, &format!("{name}.expand"), [3, 3, 1], depth, filters),
            depth,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.d != self.depth {
            return Err(Error::ShapeMismatch(format!(
                "reduction expects depth {}, got {s}",
                self.depth
            )));
        }
        let y = self.squeeze.apply(tape, x)?;
        let y = tape.reshape(y, Shape::planar(s.n, s.h, s.w, s.d))?;
        self.expand.apply(tape, y)
    }
}

/// Merges a volumetric feature map into the planar stream.
#[derive(Clone, Debug)]
pub struct DimensionFusion {
    reduce: Reduce3d,
    gates: Option<(SeGate, SeGate)>,
}

impl DimensionFusion {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin3d: usize,
        depth: usize,
        channels: usize,
        se_reduction: Option<usize>,
    ) -> Result<Self> {
        let reduce = Reduce3d::new(store, rng, &format!("{name}.reduce"), cin3d, depth, channels);
        let gates = match se_reduction {
            Some(r) => Some((
                SeGate::new(store, rng, &format!("{name}.se3d"), channels, r)?,
                SeGate::new(store, rng, &format!("{name}.se2d"), channels, r)?,
            )),
            None => None,
        };
        Ok(DimensionFusion { reduce, gates })
    }

    pub fn reduce(&self, tape: &mut Tape, x3d: Var) -> Result<Var> {
        self.reduce.apply(tape, x3d)
    }

    /// Sum of the reduced volumetric map and the planar map, each gated when
    /// SE is enabled.
    pub fn fuse(&self, tape: &mut Tape, reduced: Var, planar: Var) -> Result<Var> {
        let (a, b) = (tape.shape(reduced), tape.shape(planar));
        if !a.same_extent(&b) {
            return Err(Error::ShapeMismatch(format!("fusion of {a} with {b}")));
        }
        match &self.gates {
            Some((g3, g2)) => {
                let x = g3.apply(tape, reduced)?;
                let y = g2.apply(tape, planar)?;
                tape.add(x, y)
            }
            None => tape.add(reduced, planar),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x3d: Var, planar: Var) -> Result<Var> {
        let r = self.reduce(tape, x3d)?;
        self.fuse(tape, r, planar)
    }
}

/// Nearest-neighbour upsampling, a kernel-2 up-convolution with ReLU,
/// concatenation `[skip, up]` and a conv block.
#[derive(Clone, Debug)]
pub struct UpBlock {
    factor: [usize; 3],
    up_conv: Conv,
    block: ConvBlock,
}

impl UpBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        rank: Rank,
        factor: [usize; 3],
        cin: usize,
        skip_channels: usize,
        filters: usize,
        bn_eps: Option<f32>,
    ) -> Self {
        let up_conv = Conv::new(store, rng, &format!("{name}.up"), rank.cube(2), cin, filters);
        let block = ConvBlock::new(store, rng, name, rank, skip_channels + filters, filters, bn_eps);
        UpBlock { factor, up_conv, block }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var, skip: Var) -> Result<Var> {
        let u = tape.upsample(x, self.factor);
        let u = self.up_conv.apply(tape, u)?;
        let u = tape.relu(u);
        let m = tape.concat(skip, u)?;
        self.block.apply(tape, m)
    }
}
