mod bundle;
mod dataset;
mod idx;
mod synthetic;
mod typicality;

pub use bundle::{build_bundle, BundleManifest, DatasetBundle, ForgetScope, ForgetSize, ForgetSpec, Selection};
pub use dataset::{Dataset, Provenance};
pub use idx::{load_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{make_synthetic, make_synthetic_splits, SyntheticConfig, SyntheticSplits, TEST_ID_OFFSET};
pub use typicality::{score_typicality_holdout, TypicalityMethod, TypicalityScores};
