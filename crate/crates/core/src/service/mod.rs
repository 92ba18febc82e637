//! Configuration, session lifecycle and persistence, and the HTTP API.

pub mod config;
pub mod engine;
pub mod http;
pub mod overlay;
pub mod session;

pub use config::{EngineConfig, OracleKind, DATA_DIR_ENV};
pub use engine::{ClickRequest, Engine, JobState, LiveSession, Orbit, ParamsPatch, SegmentRequest, Status};
pub use http::router;
pub use overlay::Overlay;
pub use session::{load_session, BakeMode, SessionRecord};
