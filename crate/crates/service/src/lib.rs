//! HTTP service over the session engine: JSON endpoints for every session
//! and node operation, plus a server-sent event stream of the event log.

pub mod config;
pub mod error;
pub mod routes;
pub mod session;
pub mod state;

pub use config::{AppConfig, ConfigError, ServerConfig};
pub use error::{ApiError, ErrorBody};
pub use routes::router;
pub use state::AppState;

use reasonweave_core::engine::Engine;
use reasonweave_core::prompts::{PromptCatalog, PromptError};
use reasonweave_core::providers::{
    FixtureLoadError, ProviderError, ProviderSet, RoleKind, ScriptedProvider,
};
use reasonweave_core::session::{SessionStore, StoreError};
use std::future::Future;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fixtures: {0}")]
    Fixtures(#[from] FixtureLoadError),
    #[error("providers: {0}")]
    Provider(#[from] ProviderError),
    #[error("prompts: {0}")]
    Prompt(#[from] PromptError),
    #[error("session store: {0}")]
    Store(#[from] StoreError),
}

/// Providers for every role. `fixtures` overrides the config's fixture
/// file; with fixtures present every role is scripted.
pub fn build_providers(cfg: &AppConfig, fixtures: Option<&Path>) -> Result<ProviderSet, BuildError> {
    let mut providers_cfg = cfg.providers.clone();
    let script = match fixtures.or(cfg.fixtures.as_deref()) {
        Some(path) => {
            for r in [&mut providers_cfg.reasoning, &mut providers_cfg.operator, &mut providers_cfg.embedding] {
                r.kind = RoleKind::Scripted;
            }
            Some(Arc::new(ScriptedProvider::load(path)?))
        }
        None => None,
    };
    Ok(ProviderSet::from_config(&providers_cfg, script)?)
}

pub fn build_catalog(cfg: &AppConfig) -> Result<PromptCatalog, BuildError> {
    Ok(match &cfg.prompts_dir {
        Some(dir) => PromptCatalog::load_dir(dir)?,
        None => PromptCatalog::bundled(),
    })
}

/// The engine a config describes, persisting to the configured session
/// directory when `with_store` is set.
pub fn build_engine(cfg: &AppConfig, fixtures: Option<&Path>, with_store: bool) -> Result<Engine, BuildError> {
    let engine = Engine::new(build_providers(cfg, fixtures)?, Arc::new(build_catalog(cfg)?), cfg.engine.clone());
    Ok(if with_store {
        engine.with_store(SessionStore::open(&cfg.server.session_dir)?)
    } else {
        engine
    })
}

/// Serves until `shutdown` resolves, then persists every live session.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    cors_origin: Option<String>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone(), cors_origin.as_deref());
    let sweeper = state.spawn_sweeper(Duration::from_secs(60));
    let stopper = state.clone();
    let res = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            stopper.begin_shutdown();
        })
        .await;
    sweeper.abort();
    state.flush_all().await;
    res
}
