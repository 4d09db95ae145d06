//! Deterministic small-network trainer, synthetic datasets with planted
//! interaction structure, masking semantics, and masked-table emission.

mod data;
mod mask;
mod net;
mod trainer;

pub use data::{
    generate_dataset, inject_label_noise, DatasetSpec, InjectionReport, PlantedRule, Sample,
    Split, ToyDataset,
};
pub use mask::{emit_masked_table, masked_variables_for, ScoreDefinition};
pub use net::{NetConfig, ToyNetwork};
pub use trainer::{
    checkpoint_epochs, train, Checkpoint, TrainConfig, TrainRun,
};
