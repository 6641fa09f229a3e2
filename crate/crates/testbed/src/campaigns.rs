//! Campaign runner: one worker thread owns the experiment sequence and
//! runs queued campaigns in order, each in its own virtual-time world.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread;

use serde::{Deserialize, Serialize};
use testbed_core::coordinator::campaign::{self, CampaignConfig, CampaignKind};

use crate::reports::{self, ReportPaths};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignState {
    Queued,
    Running,
    /// Report written; it may still be marked incomplete.
    Finished,
    /// No report could be produced.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStatus {
    pub campaign_id: String,
    pub kind: Option<CampaignKind>,
    pub seed: Option<u64>,
    pub state: CampaignState,
    pub progress: f64,
    /// Whether the report covers the whole campaign; known once finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type Statuses = Arc<Mutex<BTreeMap<u64, CampaignStatus>>>;

pub struct CampaignRunner {
    root: PathBuf,
    next: AtomicU64,
    statuses: Statuses,
    queue: Mutex<Sender<(u64, CampaignConfig)>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

/// Highest numeric campaign directory under `root`.
pub fn last_id(root: &Path) -> u64 {
    std::fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| e.file_name().to_str()?.parse::<u64>().ok())
        .max()
        .unwrap_or(0)
}

impl CampaignRunner {
    /// Start the worker. Reports go under `root`; ids continue after the
    /// highest one already there.
    pub fn start(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let statuses: Statuses = Arc::default();
        let (tx, rx) = mpsc::channel::<(u64, CampaignConfig)>();
        let worker_root = root.clone();
        let worker_statuses = statuses.clone();
        thread::Builder::new()
            .name("campaigns".into())
            .spawn(move || {
                for (id, cfg) in rx {
                    run_one(&worker_root, &worker_statuses, id, &cfg);
                }
            })
            .expect("spawn campaign worker");
        Self { next: AtomicU64::new(last_id(&root)), root, statuses, queue: Mutex::new(tx) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn submit(&self, cfg: CampaignConfig) -> String {
        let id = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        lock(&self.statuses).insert(
            id,
            CampaignStatus {
                campaign_id: id.to_string(),
                kind: Some(cfg.kind()),
                seed: Some(cfg.seed),
                state: CampaignState::Queued,
                progress: 0.0,
                complete: None,
                error: None,
            },
        );
        if lock(&self.queue).send((id, cfg)).is_err() {
            set(&self.statuses, id, |s| {
                s.state = CampaignState::Failed;
                s.error = Some("campaign worker has stopped".into());
            });
        }
        id.to_string()
    }

    /// Status of a campaign from this run, or of one whose report is
    /// already on disk from an earlier run.
    pub fn status(&self, campaign_id: &str) -> Option<CampaignStatus> {
        let id: u64 = campaign_id.parse().ok()?;
        if let Some(s) = lock(&self.statuses).get(&id) {
            return Some(s.clone());
        }
        let text = std::fs::read_to_string(self.report_paths(campaign_id).text).ok()?;
        let report = campaign::CampaignReport::from_text(&text).ok();
        Some(CampaignStatus {
            campaign_id: id.to_string(),
            kind: report.as_ref().map(|r| r.kind),
            seed: report.as_ref().map(|r| r.seed),
            state: CampaignState::Finished,
            progress: 1.0,
            complete: report.as_ref().map(|r| r.complete),
            error: report.and_then(|r| r.error),
        })
    }

    pub fn report_paths(&self, campaign_id: &str) -> ReportPaths {
        reports::paths(&self.root, campaign_id)
    }
}

fn set(statuses: &Statuses, id: u64, f: impl FnOnce(&mut CampaignStatus)) {
    if let Some(s) = lock(statuses).get_mut(&id) {
        f(s);
    }
}

fn run_one(root: &Path, statuses: &Statuses, id: u64, cfg: &CampaignConfig) {
    set(statuses, id, |s| s.state = CampaignState::Running);
    log::info!("campaign {id}: {:?} seed {}", cfg.kind(), cfg.seed);
    let outcome = campaign::run(cfg, &mut |p| set(statuses, id, |s| s.progress = p));
    let written = outcome.map_err(|e| e.to_string()).and_then(|r| {
        reports::write(root, &id.to_string(), &r).map(|_| r).map_err(|e| e.to_string())
    });
    set(statuses, id, |s| match written {
        Ok(r) => {
            s.state = CampaignState::Finished;
            s.progress = 1.0;
            s.complete = Some(r.complete);
            s.error = r.error;
        }
        Err(e) => {
            log::warn!("campaign {id} failed: {e}");
            s.state = CampaignState::Failed;
            s.error = Some(e);
        }
    });
}
