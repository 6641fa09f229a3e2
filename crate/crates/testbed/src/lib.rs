//! Std side of the testbed: a wall-clock driver for the simulated world,
//! the REST and log-stream API, the action journal, report files, the TCP
//! bus transport, and the pieces the command-line front end is built from.

pub mod api;
pub mod campaigns;
pub mod journal;
pub mod live;
pub mod reports;
pub mod tcp;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{router, ApiError, AppState};
pub use campaigns::{CampaignRunner, CampaignState, CampaignStatus};
pub use live::{default_world, Live, LiveError};

/// File and directory names under a server's data directory.
pub const JOURNAL_FILE: &str = "actions.jsonl";
pub const REPORTS_DIR: &str = "reports";

pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub world: testbed_core::coordinator::WorldConfig,
    /// Virtual seconds per wall-clock second.
    pub speed: f64,
}

/// A started coordinator: the world driver is running and `app` is ready
/// to be served.
pub struct Coordinator {
    pub state: AppState,
    pub driver: tokio::task::JoinHandle<()>,
}

impl Coordinator {
    /// Must be called inside a tokio runtime.
    pub fn start(cfg: &ServerConfig) -> Result<Self, LiveError> {
        std::fs::create_dir_all(&cfg.data_dir).map_err(|source| {
            journal::JournalError::Io { path: cfg.data_dir.clone(), source }
        })?;
        let live = Arc::new(Live::new(&cfg.world, &cfg.data_dir.join(JOURNAL_FILE), cfg.speed)?);
        let driver = live.spawn_driver();
        let campaigns = Arc::new(CampaignRunner::start(cfg.data_dir.join(REPORTS_DIR)));
        Ok(Self { state: AppState { live, campaigns }, driver })
    }

    pub fn app(&self) -> axum::Router {
        router(self.state.clone())
    }

    /// Bind and serve in a background task; returns the bound address.
    pub async fn spawn_server(&self, addr: SocketAddr) -> std::io::Result<SocketAddr> {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        let app = self.app();
        tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                log::error!("http server: {e}");
            }
        });
        Ok(local)
    }
}

impl Drop for Coordinator {
    fn drop(&mut self) {
        self.driver.abort();
    }
}
