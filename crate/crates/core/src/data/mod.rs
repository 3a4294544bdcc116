//! Dataset records and the line-delimited dataset file format.
//!
//! A dataset file is a header line followed by one JSON record per line:
//!
//! ```text
//! {"format":"prise-dataset","version":1,"f":32,"c":3,"s":4,"records":2}
//! {"image_id":"img-000000","n_persons":2,...}
//! {"image_id":"img-000001","n_persons":3,...}
//! ```
//!
//! Floats are written in shortest round-trip form, so write → read is exact.

mod format;
pub(crate) mod record;
pub mod synth;

pub use format::{read_dataset, write_dataset, Dataset, DatasetHeader, DatasetSummary, FORMAT_NAME, FORMAT_VERSION};
pub use record::{pair_index, pairs, validate_record, ImageRecord, PairLabel, UnionFeature};
