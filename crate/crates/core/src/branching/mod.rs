//! Neuron partitioning and the virtually branched model.

mod model;
mod partition;

pub use model::{
    concat_embeddings, BoundParams, BranchOutput, BranchPlan, BranchedModel, Mode, ModelConfig,
    Parameter, StatUpdate,
};
pub use partition::{make_partition, table_header, LayerPartition};
