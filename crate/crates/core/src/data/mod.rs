//! Volume I/O, slice preprocessing, four-slice stacking, augmentation and
//! the case-level split.

pub mod augment;
pub mod io;
pub mod preprocess;
pub mod split;
pub mod stacks;
pub mod store;
pub mod synthetic;
pub mod volume;

pub use augment::{augment, normalize, transform_stack, AugmentParams, Transform};
pub use io::{find_case, load_case, load_manifest_cases, read_manifest, read_volume, save_case, write_volume};
pub use preprocess::{resize_bilinear, CropWindow, Preprocess};
pub use split::{split_dataset, SplitSpec};
pub use stacks::{batch_tensors, build_stacks, source_slice, SliceStack};
pub use store::{write_store, StackStore, StoreIndex};
pub use synthetic::{phantom, PhantomParams};
pub use volume::{Grid2, Volume, VolumeCase};
