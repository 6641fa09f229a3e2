//! Scripted measurement campaigns. Each one builds its own [`World`] from
//! the config and seed, drives it through the central node's API only, and
//! returns a [`CampaignReport`].

mod grid;
mod repeatability;
mod report;
mod sync;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use grid::{AnchorSpec, GridParams, GridPoint, GridResults};
pub use repeatability::{RepeatSample, RepeatabilityParams, RepeatabilityResults};
pub use report::{CampaignReport, CampaignResults};
pub use sync::{SyncNode, SyncParams, SyncResults};

use super::protocol::DutCommand;
use super::tickets::TicketState;
use super::world::{World, WorldError};
use crate::dut::{Behavior, FirmwareImage, Manifest, BOOT_DELAY, DEVICE_ID_ADDR};
use crate::msgbus::LinkModel;
use crate::rng::{uniform, SimRng};
use crate::units::{Nanos, NS_PER_S};
use crate::vclock::ClockState;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkPreset {
    Ideal,
    Wired,
    #[default]
    Wireless,
    Custom(LinkModel),
}

impl LinkPreset {
    pub fn model(&self) -> LinkModel {
        match self {
            LinkPreset::Ideal => LinkModel::ideal(),
            LinkPreset::Wired => LinkModel::wired(),
            LinkPreset::Wireless => LinkModel::wireless(),
            LinkPreset::Custom(m) => *m,
        }
    }
}

/// Node clocks are drawn uniformly from `±offset_ms` and `±drift_ppm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSpread {
    pub offset_ms: f64,
    pub drift_ppm: f64,
    pub read_jitter_us: f64,
}

impl Default for ClockSpread {
    fn default() -> Self {
        Self { offset_ms: 50.0, drift_ppm: 20.0, read_jitter_us: 20.0 }
    }
}

impl ClockSpread {
    pub const IDEAL: Self = Self { offset_ms: 0.0, drift_ppm: 0.0, read_jitter_us: 0.0 };

    pub fn draw(&self, rng: &mut SimRng) -> ClockState {
        let offset = uniform(rng, -self.offset_ms, self.offset_ms);
        let drift = uniform(rng, -self.drift_ppm, self.drift_ppm);
        ClockState::new(offset, drift, self.read_jitter_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    Repeatability,
    Sync,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CampaignSpec {
    Repeatability(#[serde(default)] RepeatabilityParams),
    Sync(#[serde(default)] SyncParams),
    Grid(#[serde(default)] GridParams),
}

/// What to run. Identical configs produce byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub seed: u64,
    #[serde(default)]
    pub link_preset: LinkPreset,
    #[serde(flatten)]
    pub spec: CampaignSpec,
}

impl CampaignConfig {
    pub fn new(seed: u64, spec: CampaignSpec) -> Self {
        Self { seed, link_preset: LinkPreset::default(), spec }
    }

    pub fn with_link(mut self, preset: LinkPreset) -> Self {
        self.link_preset = preset;
        self
    }

    pub fn kind(&self) -> CampaignKind {
        match self.spec {
            CampaignSpec::Repeatability(_) => CampaignKind::Repeatability,
            CampaignSpec::Sync(_) => CampaignKind::Sync,
            CampaignSpec::Grid(_) => CampaignKind::Grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CampaignError {
    #[error("campaign has nothing to measure")]
    Empty,
    #[error("invalid campaign config: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Run a campaign to completion. `progress` receives the completed
/// fraction in [0, 1].
pub fn run(cfg: &CampaignConfig, progress: &mut dyn FnMut(f64)) -> Result<CampaignReport, CampaignError> {
    let link = cfg.link_preset.model();
    link.validate().map_err(|e| CampaignError::Invalid(e.to_string()))?;
    let (complete, error, results, world) = match &cfg.spec {
        CampaignSpec::Repeatability(p) => {
            let (r, w) = repeatability::run(cfg.seed, link, p, progress)?;
            (r.outcome.0, r.outcome.1.clone(), CampaignResults::Repeatability(r.results), w)
        }
        CampaignSpec::Sync(p) => {
            let (r, w) = sync::run(cfg.seed, link, p, progress)?;
            (r.outcome.0, r.outcome.1.clone(), CampaignResults::Sync(r.results), w)
        }
        CampaignSpec::Grid(p) => {
            let (r, w) = grid::run(cfg.seed, link, p, progress)?;
            (r.outcome.0, r.outcome.1.clone(), CampaignResults::Grid(r.results), w)
        }
    };
    progress(1.0);
    Ok(CampaignReport {
        kind: cfg.kind(),
        seed: cfg.seed,
        complete,
        error,
        virtual_duration_s: crate::units::to_secs(world),
        config: cfg.clone(),
        results,
    })
}

/// Results of one campaign body plus whether it ran to the end.
pub(crate) struct Finished<R> {
    pub results: R,
    pub outcome: (bool, Option<String>),
}

impl<R> Finished<R> {
    pub fn complete(results: R) -> Self {
        Self { results, outcome: (true, None) }
    }

    pub fn partial(results: R, why: String) -> Self {
        Self { results, outcome: (false, Some(why)) }
    }
}

/// A firmware file for `behavior`. The blob spans four flash chunks.
pub fn firmware(behavior: Behavior, params: &[(&str, String)]) -> FirmwareImage {
    let mut manifest = Manifest::new(behavior);
    manifest.params = params.iter().map(|(k, v)| (String::from(*k), v.clone())).collect::<BTreeMap<_, _>>();
    let name = behavior.as_str().as_bytes();
    let blob: Vec<u8> = name.iter().copied().cycle().take(4 * crate::dut::CHUNK_SIZE).collect();
    FirmwareImage::new(manifest, blob)
}

const FLASH_TIMEOUT: Nanos = 30 * NS_PER_S;

/// Power a DuT, open its serial log, optionally burn a device id, flash
/// `image` and wait for the new firmware to boot.
pub(crate) fn bring_up(world: &mut World, id: &str, image: &FirmwareImage, device_id: Option<u32>) -> Result<(), CampaignError> {
    world.command(id, &DutCommand::Power { on: true })?;
    world.command(id, &DutCommand::SerialConnect)?;
    if let Some(word) = device_id {
        let hex = hex::encode(word.to_le_bytes());
        world.command(id, &DutCommand::FlashWrite { addr: DEVICE_ID_ADDR as u32, hex })?;
    }
    let action = world.start_flash(id, image)?;
    let ticket = world.wait_action(action, FLASH_TIMEOUT)?;
    if ticket.state != TicketState::Succeeded {
        return Err(CampaignError::Invalid(alloc::format!(
            "flashing {id} ended {:?}: {}",
            ticket.state,
            ticket.result.unwrap_or_default()
        )));
    }
    world.run_for(BOOT_DELAY + BOOT_DELAY)?;
    Ok(())
}
