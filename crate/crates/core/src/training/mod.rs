//! Optimization, label generation and training loops.

mod fit;
mod optim;
mod reverse_link;
mod transe;

pub use fit::{fit, loss_csv, FitOptions, SampleRng, MAX_CHUNKS};
pub use optim::{AdaGradMomentum, EPSILON};
pub use reverse_link::{label_dataset, reverse_link_labels};
pub use transe::{corrupt, transe_pretrain, TransE, TransEOptions};
