//! Embedding files, stage manifests and the remote embedding client.

mod client;
mod dataset;
mod manifest;

pub use client::{fetch_embeddings, ClientConfig, FetchItem, Payload};
pub use dataset::{
    read_dataset, write_dataset, EmbeddingDataset, Entry, Kind, FORMAT_VERSION, MAGIC,
};
pub use manifest::{ManifestStage, StageManifest};
