//! Software proposer and learner: the application-facing consensus API.
//!
//! Applications `submit` values through a [`Proposer`], receive them through
//! the deliver callback registered on a [`Learner`], and fill holes in the
//! learned sequence with [`Proposer::recover`].

mod envelope;
mod learner;
mod proposer;

pub use envelope::{Deduplicator, Envelope, ENVELOPE_LEN, MAX_PAYLOAD_LEN, NOOP_CLIENT_ID};
pub use learner::{DeliverEvent, Learner, LearnerError, LearnerTally};
pub use proposer::{Outgoing, Proposer, ProposerConfig, ProposerEvent, RecoverError, RequestHandle, SubmitError};
