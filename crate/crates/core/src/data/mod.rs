//! Tabular ingestion, IDX image corpora, the reference image pool and the
//! row-to-image mapping.

pub mod fetch;
pub mod idx;
pub mod pool;
pub mod table;

pub use fetch::{fetch_openml, OpenMlFetcher};
pub use idx::{load_idx, LabeledImages, PIXELS, SIDE};
pub use pool::{build_pool, Corpora, CorpusSplit, ImagePool, MappingPolicy, MappingSchema, Source};
pub use table::{load_csv, preprocess, read_csv, split, Cell, PreprocessReport, RawTable, TabularDataset};
