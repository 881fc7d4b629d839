//! Differentiable deformation field and the tape it runs on.

pub mod checkpoint;
pub mod field;
pub mod flow;
pub mod hash;
pub mod mlp;
pub mod splat;
pub mod stab;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use field::{finalize, Deltas, DeformationField, FieldConfig, FieldMode};
pub use hash::{HashConfig, HashGrid};
pub use splat::{PrimTensors, PrimVars};
pub use tape::{Gradients, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
