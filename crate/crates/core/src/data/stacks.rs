use super::preprocess::Preprocess;
use super::volume::{Grid2, VolumeCase};
use crate::arch::{STACK_DEPTH, TARGET_CHANNEL};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Slice offsets of the four input channels relative to the target slice.
pub const OFFSETS: [isize; STACK_DEPTH] = [-2, -1, 0, 1];

/// One training sample: four neighbouring slices, channel-last, and the
/// target mask of the slice at channel 2.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceStack {
    pub case_id: String,
    pub target_index: usize,
    pub size: usize,
    /// `size × size × 4`, channel fastest.
    pub input: Vec<f32>,
    /// `size × size`, values 0 or 1.
    pub target: Vec<u8>,
}

impl SliceStack {
    pub fn new(case_id: String, target_index: usize, size: usize, input: Vec<f32>, target: Vec<u8>) -> Result<Self> {
        if input.len() != size * size * STACK_DEPTH || target.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "stack {case_id}:{target_index} has {} inputs and {} targets for size {size}",
                input.len(),
                target.len()
            )));
        }
        if let Some(v) = target.iter().find(|v| **v > 1) {
            return Err(Error::NonBinary {
                what: format!("target of {case_id}:{target_index}"),
                value: *v as f64,
            });
        }
        Ok(SliceStack {
            case_id,
            target_index,
            size,
            input,
            target,
        })
    }

    pub fn channel(&self, ch: usize) -> Vec<f32> {
        self.input.iter().skip(ch).step_by(STACK_DEPTH).copied().collect()
    }

    pub fn target_f32(&self) -> Vec<f32> {
        self.target.iter().map(|&v| v as f32).collect()
    }
}

/// Slice index feeding `channel` of the stack centred on `i`, with edge
/// replication.
pub fn source_slice(i: usize, channel: usize, depth: usize) -> usize {
    (i as isize + OFFSETS[channel]).clamp(0, depth as isize - 1) as usize
}

/// One stack per transverse slice, neighbours replicate-padded at the ends.
pub fn build_stacks(case: &VolumeCase, prep: &Preprocess) -> Result<Vec<SliceStack>> {
    prep.validate()?;
    let [rows, cols, depth] = case.dims();
    prep.check_slice(rows, cols)?;
    let images: Vec<Grid2> = (0..depth)
        .map(|z| prep.apply(&case.image.slice(z)))
        .collect::<Result<_>>()?;
    let mut stacks = Vec::with_capacity(depth);
    for i in 0..depth {
        let sources: Vec<&Grid2> = (0..STACK_DEPTH).map(|ch| &images[source_slice(i, ch, depth)]).collect();
        let mut input = Vec::with_capacity(prep.size * prep.size * STACK_DEPTH);
        for p in 0..prep.size * prep.size {
            input.extend(sources.iter().map(|g| g.data[p]));
        }
        let mask = prep.apply_mask(&case.label.slice(i))?;
        let target = mask.data.iter().map(|v| *v as u8).collect();
        stacks.push(SliceStack::new(case.case_id.clone(), i, prep.size, input, target)?);
    }
    debug_assert!(stacks.iter().all(|s| s.target_index < depth && TARGET_CHANNEL == 2));
    Ok(stacks)
}

/// Packs stacks into an `n × size × size × 4` input and `n × size × size × 1`
/// target tensor.
pub fn batch_tensors<'a>(stacks: impl IntoIterator<Item = &'a SliceStack>) -> Result<(Tensor, Tensor)> {
    let stacks: Vec<&SliceStack> = stacks.into_iter().collect();
    let first = stacks
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let size = first.size;
    if let Some(s) = stacks.iter().find(|s| s.size != size) {
        return Err(Error::ShapeMismatch(format!(
            "batch mixes sizes {size} and {} ({}:{})",
            s.size, s.case_id, s.target_index
        )));
    }
    let n = stacks.len();
    let mut x = Vec::with_capacity(n * size * size * STACK_DEPTH);
    let mut y = Vec::with_capacity(n * size * size);
    for s in &stacks {
        x.extend_from_slice(&s.input);
        y.extend(s.target.iter().map(|&v| v as f32));
    }
    Ok((
        Tensor::new(Shape::planar(n, size, size, STACK_DEPTH), x)?,
        Tensor::new(Shape::planar(n, size, size, 1), y)?,
    ))
}
