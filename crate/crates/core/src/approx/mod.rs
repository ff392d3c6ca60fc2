//! Small feed-forward networks with hand-written gradients, a masked
//! softmax policy head and an Adam optimizer.

mod batch;
mod mlp;
mod optim;
mod policy;
mod schedule;

pub use batch::BatchEval;
pub use mlp::{MlpParams, Trace};
pub use optim::Adam;
pub use policy::{entropy, masked_log_policy, masked_policy, policy_loss_grad, sample};
pub use schedule::{DecayStrategy, EntropySchedule};
