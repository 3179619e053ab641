//! Rasters, masks, splits, tile sampling, and synthetic fields.

pub mod codec;
pub mod dataset;
pub mod image;
pub mod split;
pub mod synth;

pub use codec::{load_raster, save_raster, Gray, Raster};
pub use dataset::{sample_batch, Batch, BatchQueue, Dataset, Item, Pool, Pools};
pub use image::{compute_ndvi, select_channels, Band, ChannelSelection, LabelMask, MultispectralImage};
pub use split::{make_split, DatasetSplit};
pub use synth::{synth_field, Reflectance, SyntheticFieldConfig};
