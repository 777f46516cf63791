#![allow(dead_code)]

use dunet_core::data::{build_stacks, phantom, PhantomParams, Preprocess, SliceStack, VolumeCase};
use dunet_core::train::{OptimizerKind, TrainConfig};
use dunet_core::losses::{evaluate, loss_with_grad, LossKind, LossParams};
use dunet_core::{ArchSpec, Preset, Shape};

pub fn phantom_cases(depth: usize) -> Vec<VolumeCase> {
    let p = PhantomParams {
        dims: [197, 233, depth],
        ..PhantomParams::default()
    };
    vec![phantom("a", &p, 1).unwrap(), phantom("b", &p, 2).unwrap()]
}

pub fn phantom_stacks(size: usize, depth: usize) -> Vec<SliceStack> {
    let prep = Preprocess::desk(size);
    phantom_cases(depth)
        .iter()
        .flat_map(|c| build_stacks(c, &prep).unwrap())
        .collect()
}

/// Reduced-width network for fast tests.
pub fn tiny(p: Preset, size: usize) -> ArchSpec {
    p.spec().with_resolution(size).with_base_filters(16)
}

pub fn adam(epochs: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 1e-3,
        epochs,
        batch_size: Some(batch),
        seed: 11,
        ..TrainConfig::default()
    }
}

/// Splitmix-based uniform draws in [0, 1), independent of the crate.
pub struct Draws(pub u64);

impl Draws {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn p(h: usize, c: usize) -> Shape {
    Shape::planar(1, h, h, c)
}

pub fn v(h: usize, d: usize, c: usize) -> Shape {
    Shape::volumetric(1, h, h, d, c)
}

/// Encoder and decoder feature sizes of the full-size D-UNet, layer by layer.
pub fn expected_dunet() -> Vec<(&'static str, Shape)> {
    vec![
        ("input", p(192, 4)),
        ("input3d", v(192, 4, 1)),
        ("conv1", p(192, 32)),
        // 32 filters, so 32 channels
        ("conv3d1", v(192, 4, 32)),
        ("pool3d1", v(96, 2, 32)),
        ("pool1", p(96, 32)),
        ("conv2", p(96, 64)),
        ("conv3d2", v(96, 2, 64)),
        ("fuse2", p(96, 64)),
        ("pool3d2", v(48, 1, 64)),
        ("pool2", p(48, 64)),
        ("conv3", p(48, 128)),
        ("conv3d3", v(48, 1, 128)),
        ("fuse3", p(48, 128)),
        ("pool3", p(24, 128)),
        ("conv4", p(24, 256)),
        ("drop4", p(24, 256)),
        ("pool4", p(12, 256)),
        ("conv5", p(12, 512)),
        ("drop5", p(12, 512)),
        ("up1", p(24, 256)),
        ("up2", p(48, 128)),
        ("up3", p(96, 64)),
        ("up4", p(192, 32)),
        ("output", p(192, 1)),
    ]
}

/// Max relative error between analytic and central-difference gradients.
pub fn worst_relative_error(kind: LossKind, params: &LossParams, trials: usize, seed: u64) -> f64 {
    let mut rng = Draws(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = 1 + (rng.next() * 64.0) as usize;
        // keep p away from the clamp edges where the derivative jumps
        let p: Vec<f64> = (0..n).map(|_| 0.02 + 0.96 * rng.next()).collect();
        let g: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.next() < 0.4))).collect();
        let analytic = loss_with_grad(kind, &p, &g, params).unwrap().grad;
        for i in 0..n {
            let h = 1e-6;
            let (mut up, mut down) = (p.clone(), p.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (evaluate(kind, &up, &g, params).unwrap() - evaluate(kind, &down, &g, params).unwrap()) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

// Totals published for the baselines and the fusion-placement grid.
pub const PUBLISHED: [(Preset, usize); 10] = [
    (Preset::Unet2dOriginal, 31_030_593),
    (Preset::Unet2dTransform, 7_771_297),
    (Preset::Unet3dTransform, 22_597_826),
    (Preset::Add1, 7_802_210),
    (Preset::Add12, 7_970_019),
    (Preset::Add23, 8_635_043),
    (Preset::Add123, 8_636_260),
    (Preset::SeAdd12, 7_971_299),
    (Preset::SeAdd23, 8_640_163),
    (Preset::SeAdd123, 8_647_012),
];
