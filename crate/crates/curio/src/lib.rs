//! Curiosity-driven exploration with a speaking captioner.
//!
//! The library glues together five subsystems:
//!
//! * [`tensor`] — a small reverse-mode autodiff core with Adam and
//!   gradient checking, generic over `f32`/`f64`.
//! * [`world`] — procedural 2D indoor maps with raycast egocentric
//!   rendering and ground-truth semantics.
//! * [`perception`] / [`curiosity`] / [`agent`] — frozen random feature
//!   embedding, forward/inverse dynamics surprisal rewards with a
//!   repeated-action penalty, and PPO on top of them.
//! * [`speaker`] / [`captioner`] — trigger policies deciding when to talk,
//!   and an attention encoder/decoder that turns visible regions into
//!   templated captions via beam search.
//! * [`metrics`] — Hungarian assignment, soft coverage/diversity, and the
//!   windowed surprisal evaluation protocol.
//!
//! The `curio` binary exposes the pipeline as subcommands; the `examples/`
//! directory has one runnable example per capability.

pub mod agent;
pub mod captioner;
pub mod checkpoint;
pub mod config;
pub mod curiosity;
pub mod episode_log;
pub mod metrics;
pub mod perception;
pub mod runner;
pub mod speaker;
pub mod tensor;
pub mod world;

pub use tensor::{ParamStore, Real, Tape, Tensor, Var};
