//! HTTP service for labeling with a person in the loop.
//!
//! | method | path | effect |
//! |---|---|---|
//! | GET | `/status` | round, pool counts, state and the open batch |
//! | POST | `/round/next` | train, score `U`, publish a batch (409 unless idle) |
//! | POST | `/labels` | `{"<id>": class}` answers (400 bad id or class, 409 no batch) |
//! | GET | `/curve` | task-model accuracy at the start of each round |
//!
//! A batch enters the pool only when every id in it has an answer. Every
//! transition is appended to a JSON-lines audit log, and opening a session
//! on an existing log replays it.

pub mod audit;
pub mod payload;
pub mod server;
pub mod session;

pub use audit::{AuditEntry, AuditError, AuditLog};
pub use payload::{Payload, PayloadBuilder, Projection};
pub use server::{router, serve, AppState, IDEMPOTENCY_HEADER};
pub use session::{
    BatchItem, Curve, CurvePoint, LabelReceipt, Phase, RoundBatch, RoundJob, RoundOutcome, Session,
    SessionError, Status,
};
