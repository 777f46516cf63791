use std::collections::BTreeMap;

use crate::arch::Model;
use crate::data::{batch_tensors, build_stacks, normalize, Grid2, Preprocess, SliceStack, Volume, VolumeCase};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, binarize, confusion, ConfusionCounts, MetricsReport, THRESHOLD};
use crate::tensor::Tensor;

/// Anything that maps an `n×h×w×4` stack batch to `n×h×w×1` probabilities.
pub trait Segmenter {
    fn segment(&self, batch: &Tensor) -> Result<Tensor>;
}

impl Segmenter for Model {
    fn segment(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch)
    }
}

pub const EVAL_BATCH: usize = 8;

/// Groups stacks by case in slice order, checking that every case's slices
/// run contiguously from 0 (and match `depths` when given).
pub fn group_cases<'a>(
    stacks: &'a [SliceStack],
    depths: Option<&BTreeMap<String, usize>>,
) -> Result<BTreeMap<String, Vec<&'a SliceStack>>> {
    let mut cases: BTreeMap<String, Vec<&SliceStack>> = BTreeMap::new();
    for s in stacks {
        cases.entry(s.case_id.clone()).or_default().push(s);
    }
    if let Some(d) = depths {
        if let Some(id) = d.keys().find(|id| !cases.contains_key(*id)) {
            return Err(Error::MissingSlices {
                case_id: id.clone(),
                detail: "no slices at all".into(),
            });
        }
    }
    for (id, slices) in cases.iter_mut() {
        slices.sort_by_key(|s| s.target_index);
        for (k, s) in slices.iter().enumerate() {
            if s.target_index != k {
                let detail = if s.target_index > k {
                    format!("slice {k} absent")
                } else {
                    format!("slice {} repeated", s.target_index)
                };
                return Err(Error::MissingSlices {
                    case_id: id.clone(),
                    detail,
                });
            }
        }
        if let Some(&want) = depths.and_then(|d| d.get(id)) {
            if slices.len() != want {
                return Err(Error::MissingSlices {
                    case_id: id.clone(),
                    detail: format!("{} of {want} slices present", slices.len()),
                });
            }
        }
    }
    Ok(cases)
}

/// Probability maps for `stacks` in order, inputs zero-mean normalised as in
/// training.
pub fn predict_stacks(seg: &dyn Segmenter, stacks: &[&SliceStack], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(stacks.len());
    for chunk in stacks.chunks(batch_size.max(1)) {
        let normed: Vec<SliceStack> = chunk.iter().map(|s| normalize(s)).collect();
        let (x, _) = batch_tensors(&normed)?;
        let y = seg.segment(&x)?;
        let per = y.len() / chunk.len();
        out.extend(y.data().chunks(per).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Per-case confusion counts of the thresholded predictions, computed in
/// the preprocessed grid.
pub fn case_counts(
    seg: &dyn Segmenter,
    stacks: &[SliceStack],
    depths: Option<&BTreeMap<String, usize>>,
    batch_size: usize,
) -> Result<Vec<(String, ConfusionCounts)>> {
    group_cases(stacks, depths)?
        .into_iter()
        .map(|(id, slices)| {
            let probs = predict_stacks(seg, &slices, batch_size)?;
            let mut c = ConfusionCounts::default();
            for (s, p) in slices.iter().zip(&probs) {
                c += confusion(&binarize(p, THRESHOLD), &s.target)?;
            }
            Ok((id, c))
        })
        .collect()
}

/// Inference over validation stacks; the segmenter is only read.
pub fn evaluate(
    seg: &dyn Segmenter,
    stacks: &[SliceStack],
    depths: Option<&BTreeMap<String, usize>>,
    batch_size: usize,
) -> Result<MetricsReport> {
    aggregate(case_counts(seg, stacks, depths, batch_size)?)
}

/// Binary mask on the case's original voxel grid.
pub fn predict_case(seg: &dyn Segmenter, case: &VolumeCase, prep: &Preprocess, batch_size: usize) -> Result<Volume> {
    let stacks = build_stacks(case, prep)?;
    let refs: Vec<&SliceStack> = stacks.iter().collect();
    let probs = predict_stacks(seg, &refs, batch_size)?;
    let [rows, cols, depth] = case.dims();
    let mut mask = Volume::zeros([rows, cols, depth]);
    for (z, p) in probs.into_iter().enumerate() {
        let grid = Grid2::new(prep.size, prep.size, p)?;
        let mut full = prep.restore(&grid, rows, cols)?;
        full.data.iter_mut().for_each(|v| *v = f32::from(u8::from(*v >= THRESHOLD)));
        mask.set_slice(z, &full)?;
    }
    Ok(mask)
}
