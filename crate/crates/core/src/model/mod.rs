//! Multi-label sentiment model: backbone, replaced sigmoid head and loss.

pub mod checkpoint;
pub mod head;
pub mod loss;
pub mod network;
mod sentiment;
pub mod spec;

pub use checkpoint::{Checkpoint, TrainingMetadata};
pub use head::{sigmoid, Head, OutputActivation};
pub use loss::{bce_grad_probs, bce_loss, CLAMP_EPS};
pub use network::Network;
pub use sentiment::{load_backbone, FreezePolicy, Gradients, SentimentModel};
pub use spec::{BackboneSpec, Normalization, WeightsSource, KNOWN_BACKBONES};
