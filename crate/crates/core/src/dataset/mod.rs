//! Training corpus: procedural RGBD targets, depth layering, records on disk.

mod build;
mod depth;
mod procedural;
mod record;

pub use build::{build_dataset, build_record, config_hash, load_corpus, BuildSpec, CorpusManifest, CorpusSummary, ManifestEntry};
pub use depth::{labels_to_masks, masks_to_labels, quantize_depth};
pub use procedural::generate_procedural_target;
pub use record::{import_rgbd, load_record, save_record, DatasetRecord, RecordMeta};
