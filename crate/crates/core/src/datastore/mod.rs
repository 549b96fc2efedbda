//! Feature persistence, dataset manifests and the synthetic generator.

mod format;
mod manifest;
mod store;
mod synthetic;

pub use format::{
    decode_header, decode_store, encode_store, read_store, write_store, StoreHeader, HEADER_LEN,
    MAGIC, VERSION,
};
pub use manifest::Manifest;
pub use store::{stratified_fraction, FeatureStore, Split};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
