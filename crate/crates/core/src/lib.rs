//! Learning with annotator disagreement: soft-label metrics, ordinal
//! label-distribution losses, a small cluster-guided trainer, demonstration
//! selection, and a perspectivist in-context-learning pipeline.

pub mod data;
pub mod error;
pub mod icl;
pub mod losses;
pub mod metrics;
pub mod predictions;
pub mod selection;
pub mod synthetic;
pub mod trainer;

pub use data::{
    empirical_soft_label, load_dataset, parse_dataset, AnnotationRecord, Dataset, Distribution,
    HistoryEntry, Item, Label, LabelKind, LabelSpace, SoftLabel,
};
pub use error::{Error, Result};
pub use predictions::{PairKey, Predictions, Provenance};
