pub mod scaler;
pub mod series;
pub mod similarity;
pub mod synth;
pub mod windows;

pub use scaler::Scaler;
pub use series::{aggregate_5min, load_csv, parse_csv, LoadReport, Series};
pub use similarity::{kl_divergence, rank_stations, similarity_report, SimilarityReport};
pub use windows::{make_windows, DEFAULT_SPLIT, prepare, prepare_with_scaler, split_chronological, PreparedData, Split, WindowedDataset};
pub use synth::{presets, synth_generate, SynthProfile};
