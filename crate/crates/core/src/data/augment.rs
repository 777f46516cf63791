use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stacks::SliceStack;
use crate::arch::STACK_DEPTH;
use crate::error::{Error, Result};

fn yes() -> bool {
    true
}
fn default_scale() -> [f64; 2] {
    [0.9, 1.1]
}
fn default_shift() -> f64 {
    0.1
}

/// Ranges of the random geometric transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    #[serde(default = "yes")]
    pub flip: bool,
    /// Isotropic zoom factor range.
    #[serde(default = "default_scale")]
    pub scale: [f64; 2],
    /// Maximum translation as a fraction of the image extent.
    #[serde(default = "default_shift")]
    pub shift: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            flip: true,
            scale: default_scale(),
            shift: default_shift(),
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale;
        if !(lo > 0.0 && lo <= hi) || !(0.0..1.0).contains(&self.shift) {
            return Err(Error::InvalidArgument(format!("augmentation ranges {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Transform {
        let flip = self.flip && rng.gen_bool(0.5);
        let [lo, hi] = self.scale;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let mut shift = || if self.shift > 0.0 { rng.gen_range(-self.shift..=self.shift) } else { 0.0 };
        let (dr, dc) = (shift(), shift());
        Transform {
            flip,
            scale,
            shift: [dr, dc],
        }
    }
}

/// Horizontal flip, then zoom about the centre, then translation (fractions
/// of the extent).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub scale: f64,
    pub shift: [f64; 2],
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip: false,
        scale: 1.0,
        shift: [0.0, 0.0],
    };

    /// Source position sampled by output pixel `(r, c)`.
    fn source(&self, r: usize, c: usize, size: usize) -> (f64, f64) {
        let centre = (size as f64 - 1.0) / 2.0;
        let sr = (r as f64 - centre - self.shift[0] * size as f64) / self.scale + centre;
        let mut sc = (c as f64 - centre - self.shift[1] * size as f64) / self.scale + centre;
        if self.flip {
            sc = size as f64 - 1.0 - sc;
        }
        (sr, sc)
    }
}

/// Bilinear sample of channel `ch` from a `size × size × channels` buffer,
/// zero outside the grid.
fn sample(buf: &[f32], size: usize, channels: usize, ch: usize, r: f64, c: f64) -> f32 {
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = ((r - r0) as f32, (c - c0) as f32);
    let at = |rr: f64, cc: f64| -> f32 {
        if rr < 0.0 || cc < 0.0 || rr >= size as f64 || cc >= size as f64 {
            0.0
        } else {
            buf[((rr as usize) * size + cc as usize) * channels + ch]
        }
    };
    let top = at(r0, c0) * (1.0 - fc) + at(r0, c0 + 1.0) * fc;
    let bottom = at(r0 + 1.0, c0) * (1.0 - fc) + at(r0 + 1.0, c0 + 1.0) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Applies the same geometric transform to input and target; the target is
/// thresholded back to {0, 1}.
pub fn transform_stack(stack: &SliceStack, t: &Transform) -> SliceStack {
    if *t == Transform::IDENTITY {
        return stack.clone();
    }
    let size = stack.size;
    let target: Vec<f32> = stack.target_f32();
    let mut input = vec![0.0f32; stack.input.len()];
    let mut out_target = vec![0u8; stack.target.len()];
    for r in 0..size {
        for c in 0..size {
            let (sr, sc) = t.source(r, c, size);
            let p = r * size + c;
            for ch in 0..STACK_DEPTH {
                input[p * STACK_DEPTH + ch] = sample(&stack.input, size, STACK_DEPTH, ch, sr, sc);
            }
            out_target[p] = u8::from(sample(&target, size, 1, 0, sr, sc) >= 0.5);
        }
    }
    SliceStack {
        input,
        target: out_target,
        ..stack.clone()
    }
}

/// Subtracts the mean over all pixels and channels of the stack.
pub fn normalize(stack: &SliceStack) -> SliceStack {
    let mean = stack.input.iter().map(|v| *v as f64).sum::<f64>() / stack.input.len() as f64;
    SliceStack {
        input: stack.input.iter().map(|v| (*v as f64 - mean) as f32).collect(),
        ..stack.clone()
    }
}

/// Random geometry drawn from `seed`, then zero-mean normalisation.
pub fn augment(stack: &SliceStack, params: &AugmentParams, seed: u64) -> SliceStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = params.sample(&mut rng);
    normalize(&transform_stack(stack, &t))
}
