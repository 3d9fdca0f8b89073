//! Datasets, batching, checkpoints, metrics and image export.

mod checkpoint;
mod dataset;
mod metrics;
mod ppm;
mod sampler;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, Checkpoint, Header, FORMAT_VERSION, MAGIC,
};
pub use dataset::{
    decode_raw_tensor, encode_raw_tensor, read_raw_tensor, write_raw_tensor, Dataset, ShapeFamily,
    SyntheticDataset, SyntheticSpec, TensorDirDataset,
};
pub use metrics::{
    append_metrics, format_metrics_row, format_sig9, parse_metrics, read_metrics, CsvMetrics, METRICS_HEADER,
};
pub use ppm::{encode_image_grid, export_image_grid, pixel_to_byte};
pub use sampler::{BatchSampler, SamplerState};
