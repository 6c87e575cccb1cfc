use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("parameter vectors are bound to different model specs")]
    SpecMismatch,
    #[error("class {class} has {count} rows, fewer than the shard size {shard_size}")]
    Shard {
        class: usize,
        count: usize,
        shard_size: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("clustering failed: {0}")]
    Cluster(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
