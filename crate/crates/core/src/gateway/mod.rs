//! Reasoner and observer backends, prompt assets, tool schema and
//! tool-call parsing.

pub mod backend;
pub mod http;
pub mod messages;
pub mod oracle;
pub mod prompts;
pub mod schema;
pub mod scripted;

pub use backend::{BackendError, ChatBackend, ChatReply, ObservationRequest, Observer, ObserverReply, Usage};
pub use http::{HttpChatClient, HttpConfig, HttpVlmObserver};
pub use messages::{build_observer_messages, build_reasoner_messages, parse_tool_call, ChatMessage, ParseError, Role};
pub use oracle::{oracle_answer, CannedStub, TimelineOracle};
pub use schema::{tool_definitions, tools_json, validate_args, SchemaViolation};
pub use scripted::{ScanFocusPolicy, ScriptedPolicy, ScriptedStep};
