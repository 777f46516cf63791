mod common;

use dunet_core::arch::TraceOptions;
use dunet_core::data::batch_tensors;
use dunet_core::{Model, Preset};

#[test]
fn volumetric_branch_only_reaches_from_the_first_fusion_on() {
    let spec = common::tiny(Preset::SeAdd23, 32);
    let model = Model::build_seeded(&spec, 3).unwrap();
    let stacks = common::phantom_stacks(32, 4);
    let (x, _) = batch_tensors(&stacks[..2]).unwrap();
    let base = model.activations(&x, TraceOptions::default()).unwrap();
    let zeroed = model
        .activations(&x, TraceOptions { zero_volumetric_input: true })
        .unwrap();
    assert_eq!(base.len(), zeroed.len());
    let planar: Vec<_> = base.iter().zip(&zeroed).filter(|((n, _), _)| !n.contains("3d")).collect();
    let first_fusion = planar.iter().position(|((n, _), _)| n == "fuse2").unwrap();
    for ((name, a), (_, b)) in &planar[..first_fusion] {
        assert_eq!(a.max_abs_diff(b), 0.0, "{name} changed before fusion");
    }
    for ((name, a), (_, b)) in &planar[first_fusion..] {
        if name == "fuse2" || name == "output" {
            assert!(a.max_abs_diff(b) > 0.0, "{name} ignores the volumetric branch");
        }
    }
}

#[test]
fn fusion_stages_select_where_the_branch_enters() {
    let spec = common::tiny(Preset::Add123, 32);
    let model = Model::build_seeded(&spec, 3).unwrap();
    let (x, _) = batch_tensors(&common::phantom_stacks(32, 4)[..1]).unwrap();
    let base = model.activations(&x, TraceOptions::default()).unwrap();
    let zeroed = model
        .activations(&x, TraceOptions { zero_volumetric_input: true })
        .unwrap();
    let diff = |n: &str| {
        let a = &base.iter().find(|(k, _)| k == n).unwrap().1;
        let b = &zeroed.iter().find(|(k, _)| k == n).unwrap().1;
        a.max_abs_diff(b)
    };
    assert_eq!(diff("conv1"), 0.0);
    assert!(diff("fuse1") > 0.0);
}
