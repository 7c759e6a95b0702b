//! Datasets: MIND-style TSV ingestion, splitting and synthetic generation.

mod split;
pub mod synth;
mod tsv;
mod types;

pub use split::split_train_valid;
pub use synth::{synth_generate, PlantedModel, SynthConfig, SynthDataset};
pub use tsv::{load_dataset, write_behaviors_tsv, write_news_tsv, LoadReport, DEFAULT_TITLE_LEN};
pub use types::{BehaviorLog, Dataset, NewsArticle, NewsIdx, NewsTable, Vocab, PAD_TOKEN};
