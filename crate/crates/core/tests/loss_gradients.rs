mod common;

use common::worst_relative_error;
use dunet_core::losses::{LossKind, LossParams};

#[test]
fn analytic_gradients_match_finite_differences() {
    let settings = [
        LossParams::default(),
        LossParams {
            alpha: 0.25,
            gamma: 2.0,
            delta: 0.3,
            ..LossParams::default()
        },
        LossParams {
            log_of_dice_loss: true,
            ..LossParams::default()
        },
    ];
    for params in &settings {
        for kind in LossKind::ALL {
            let err = worst_relative_error(kind, params, 50, 99);
            assert!(err < 1e-4, "{kind:?} {params:?}: relative error {err:e}");
        }
    }
}
