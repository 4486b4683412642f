//! Typed columnar datasets: declarative builders, a memory-mapped on-disk
//! format, cached transforms, streaming, retrieval indexes, mergeable
//! metrics and a documentation registry.

pub mod builder;
pub mod canonical;
pub mod index;
pub mod metrics;
pub mod registry;
pub mod schema;
pub mod store;
pub mod stream;
pub mod transform;

pub use builder::{load_dataset, BuilderDef, DatasetDict, DatasetInfo, DatasetLoader};
pub use canonical::Fingerprint;
pub use schema::{Column, FeatureType, Row, Schema, TensorDtype, Value};
pub use store::{Table, TableWriter};
pub use transform::{TransformRegistry, TransformSpec, Transformer};
