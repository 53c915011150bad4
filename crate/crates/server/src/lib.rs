//! Pairwise human-evaluation bench and live-chat bridge over HTTP.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create a blinded session from two record files |
//! | GET | `/sessions`, `/sessions/{id}` | session summaries |
//! | GET | `/sessions/{id}/pairs/{i}` | judge-facing view of one pair |
//! | GET | `/sessions/{id}/audit` | full judgment history |
//! | POST | `/judgments` | record one choice |
//! | GET | `/results[?session=id]` | de-blinded win ratios |
//! | GET | `/recommenders` | chat-capable policies |
//! | POST | `/chat` | open a chat |
//! | GET | `/chat/{id}`, `/chat/{id}/record` | transcript, finished record |
//! | POST | `/chat/{id}/turns` | send one human turn |
//!
//! Anything else falls through to the static UI bundle when one is configured.

pub mod api;
pub mod bench;
pub mod chat;
pub mod config;
pub mod error;

use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tower_http::services::{ServeDir, ServeFile};

pub use bench::{BenchError, Choice, Criterion, EvalSession, SessionStore};
pub use chat::{ChatError, ChatStore};
pub use config::{ConfigError, ServerConfig};

pub struct AppState {
    pub config: ServerConfig,
    pub bench: SessionStore,
    pub chat: ChatStore,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<AppState, ServeError> {
        config.validate()?;
        let bench = SessionStore::open(&config.data_dir)?;
        let chat = ChatStore::new(&config.data_dir, &config.recommenders, config.chat_max_turns)?;
        Ok(AppState { config, bench, chat })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let app = Router::new()
        .route("/health", get(api::health))
        .route("/criteria", get(api::criteria))
        .route("/records", get(api::list_records))
        .route("/sessions", post(api::create_session).get(api::list_sessions))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/pairs/{i}", get(api::get_pair))
        .route("/sessions/{id}/audit", get(api::get_audit))
        .route("/judgments", post(api::submit_judgment))
        .route("/results", get(api::get_results))
        .route("/recommenders", get(api::list_recommenders))
        .route("/chat", post(api::start_chat))
        .route("/chat/{id}", get(api::get_chat))
        .route("/chat/{id}/turns", post(api::chat_turn))
        .route("/chat/{id}/record", get(api::get_chat_record))
        .with_state(state);
    match static_dir {
        // Unknown paths get index.html so client-side routes survive a reload.
        Some(dir) => app.fallback_service(ServeDir::new(&dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => app,
    }
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServerConfig) -> Result<(), ServeError> {
    let bind = config.bind.clone();
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
