//! Generated phantoms: an ellipsoidal head with darker lesions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::volume::{Volume, VolumeCase};
use crate::error::Result;

/// Dimensions of a phantom that fits the default crop window.
pub const PHANTOM_DIMS: [usize; 3] = [197, 233, 8];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub lesions: usize,
    /// Lesion radius range in voxels, in-plane.
    pub radius: [f64; 2],
    pub noise: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            dims: PHANTOM_DIMS,
            lesions: 2,
            radius: [18.0, 30.0],
            noise: 0.05,
        }
    }
}

/// A seeded phantom case. Lesions sit inside the default crop window and
/// span every slice they intersect.
pub fn phantom(case_id: &str, params: &PhantomParams, seed: u64) -> Result<VolumeCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny, nz] = params.dims;
    let noise = Normal::new(0.0, params.noise.max(1e-12)).expect("valid sigma");
    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let (ax, ay) = (nx as f64 * 0.42, ny as f64 * 0.36);

    // in-plane centre, radius, depth centre, depth half-extent
    let lesions: Vec<(f64, f64, f64, f64, f64)> = (0..params.lesions)
        .map(|_| {
            let r = rng.gen_range(params.radius[0]..=params.radius[1]);
            let lx = rng.gen_range(cx - 0.4 * ax..=cx + 0.4 * ax);
            let ly = rng.gen_range(cy - 0.4 * ay..=cy + 0.4 * ay);
            let lz = rng.gen_range(0.0..nz as f64);
            let hz = rng.gen_range(nz as f64 * 0.3..=nz as f64 * 0.8).max(1.0);
            (lx, ly, r, lz, hz)
        })
        .collect();

    let mut image = Volume::zeros(params.dims);
    let mut label = Volume::zeros(params.dims);
    for x in 0..nx {
        for y in 0..ny {
            let e = ((x as f64 - cx) / ax).powi(2) + ((y as f64 - cy) / ay).powi(2);
            for z in 0..nz {
                let mut v = if e <= 1.0 { 0.7 + 0.1 * (1.0 - e) } else { 0.0 };
                let inside = lesions.iter().any(|&(lx, ly, r, lz, hz)| {
                    let taper = 1.0 - ((z as f64 - lz) / hz).powi(2);
                    taper > 0.0 && (x as f64 - lx).powi(2) + (y as f64 - ly).powi(2) <= r * r * taper
                });
                if inside {
                    v = 0.25;
                    label.set(x, y, z, 1.0);
                }
                if e <= 1.0 {
                    v += noise.sample(&mut rng) as f32 as f64;
                }
                image.set(x, y, z, v as f32);
            }
        }
    }
    VolumeCase::new(case_id, image, label, [0.9, 0.9, 3.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_seeded_and_has_lesions() {
        let p = PhantomParams {
            dims: [197, 233, 4],
            ..PhantomParams::default()
        };
        let a = phantom("a", &p, 5).unwrap();
        let b = phantom("a", &p, 5).unwrap();
        assert_eq!(a, b);
        let fg = a.label.data().iter().filter(|v| **v == 1.0).count();
        assert!(fg > 500, "{fg}");
    }
}
