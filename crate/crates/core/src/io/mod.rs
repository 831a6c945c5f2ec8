//! On-disk formats: FMAP tensors, dataset manifests, detector profiles and
//! metrics exports.

mod fmap_file;
mod manifest;
mod metrics_export;
mod profile_file;

pub use fmap_file::{
    decode_feature, encode_feature, read_feature, read_feature_dir, write_feature, FMAP_DTYPE_F32,
    FMAP_HEADER_LEN, FMAP_MAGIC, FMAP_VERSION,
};
pub use manifest::{load_manifest, Manifest, ManifestEntry, Population, Split};
pub use metrics_export::{
    export_metrics, load_metrics_json, metrics_to_csv, write_histogram_csv, MetricsFormat,
    METRICS_CSV_HEADER,
};
pub use profile_file::{decode_profile, encode_profile, load_profile, save_profile, PROFILE_MAGIC};
