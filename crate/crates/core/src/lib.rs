//! Spiking neural networks of discrete leaky integrate-and-fire neurons trained
//! with neighborhood aggregation, plus a surrogate-gradient baseline.
//!
//! * [`lif`] simulates neurons and filters spikes into postsynaptic currents.
//! * [`mp`] implements reset-aware membrane-potential addition, subtraction and
//!   distance, and the single-flip neighbor construction.
//! * [`na`] turns neighbor finite differences into aggregated gradients.
//! * [`surrogate`] is the pseudo-derivative baseline.
//! * [`network`] assembles layers, loss, optimizer and the training loop.
//! * [`data`] loads and encodes inputs and persists run artifacts.
//! * [`harness`] drives the experiments exposed by the command-line tool.

pub mod data;
pub mod error;
pub mod harness;
pub mod lif;
pub mod mp;
pub mod na;
pub mod network;
pub mod surrogate;
pub mod tensor;

pub use error::{IdxError, Result, SnnError};
pub use lif::{lif_forward, psc_from_spikes, psc_kernel, NeuronParams, NeuronTrace, Psc, SpikeTrain};
pub use mp::{mp_add, mp_dist, mp_sub, sns_neighborhood, spike_train_index, Perturbation};
pub use network::{BackwardConfig, Method, Model};
pub use tensor::Matrix;
