//! Contactless group admission: venue identity and trust, the rotating
//! challenge, the per-user channel exchange, and a scripted simulation.

pub mod challenge;
pub mod session;
pub mod sim;
pub mod venue;

pub use challenge::{ChallengeClock, ChallengeError, ChallengeWindow, DEFAULT_ROTATION_SECS};
pub use session::{
    establish_channel, user_reveal, user_submit_status, venue_process_status, venue_start, ChannelSession,
    GroupReject, SessionError, SessionState, VenueResponse, VenueRuntime,
};
pub use sim::{check_invariants, run_group_sim, Outcome, ParticipantKind, SimConfig, SimReport, TrustModeKind};
pub use venue::{TrustMode, VenueCert, VenueIdentity};
