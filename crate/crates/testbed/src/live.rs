//! A simulated world driven by the wall clock, shared by REST handlers.
//!
//! Virtual time tracks real time times `speed`. Handlers lock the world
//! only to issue a request or read state, never across an await, and wait
//! for bus replies by polling while the driver task advances time.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, PoisonError};
use std::time::{Duration, Instant};

use tokio::sync::broadcast;
use testbed_core::coordinator::{
    ActionId, ActionTicket, AgvSpec, DutCommand, DutReply, DutSpec, Mount, Tickets, World, WorldConfig, WorldError,
};
use testbed_core::dut::{DeviceState, LogRecord};
use testbed_core::msgbus::LinkModel;
use testbed_core::units::{Nanos, NS_PER_S};
use testbed_core::vclock::DisciplineConfig;

use crate::journal::{Journal, JournalError};

/// Room in the log fan-out before slow subscribers start missing records.
const LOG_BUFFER: usize = 4096;
/// Give-up time for a command round trip, in virtual time.
const REPLY_WAIT: Nanos = 15 * NS_PER_S;
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("speed factor must be positive and finite, got {0}")]
    Speed(f64),
}

/// The world `serve` runs when no config file is given: four anchors in the
/// arena corners, a tag on the AGV and two spare nodes, all over the
/// wireless preset with NTP running.
pub fn default_world(seed: u64) -> WorldConfig {
    let corner = |x: f64, y: f64| Mount::Fixed([x, y, 2.5]);
    let mut duts: Vec<DutSpec> = [(0.0, 0.0), (6.0, 0.0), (6.0, 6.0), (0.0, 6.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| DutSpec { id: format!("anchor{}", i + 1), clock: Default::default(), mount: corner(x, y) })
        .collect();
    duts.push(DutSpec { id: "tag".into(), clock: Default::default(), mount: Mount::Agv { height: 0.3 } });
    duts.extend((1..=2).map(|i| DutSpec { id: format!("dut{i}"), clock: Default::default(), mount: Mount::Unmounted }));
    WorldConfig {
        seed,
        link: LinkModel::wireless(),
        duts,
        agv: Some(AgvSpec::default()),
        ntp: Some(DisciplineConfig::default()),
        ..WorldConfig::default()
    }
}

pub struct Live {
    world: Mutex<World>,
    journal: Mutex<Journal>,
    /// Tickets finished by earlier coordinator runs.
    past: BTreeMap<ActionId, ActionTicket>,
    logs: broadcast::Sender<LogRecord>,
    origin: Instant,
    speed: f64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

impl Live {
    /// Build the world, replay the journal and continue its id sequence.
    pub fn new(cfg: &WorldConfig, journal: &Path, speed: f64) -> Result<Self, LiveError> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(LiveError::Speed(speed));
        }
        let (journal, replayed) = Journal::open(journal)?;
        let world = World::new(cfg)?.with_tickets(Tickets::resume_after(replayed.last_id()));
        let (logs, _) = broadcast::channel(LOG_BUFFER);
        Ok(Self {
            world: Mutex::new(world),
            journal: Mutex::new(journal),
            past: replayed.tickets,
            logs,
            origin: Instant::now(),
            speed,
        })
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// Virtual time the world should have reached by now.
    fn target(&self) -> Nanos {
        (self.origin.elapsed().as_secs_f64() * self.speed * NS_PER_S as f64) as Nanos
    }

    /// Bring the world up to the wall clock, fan out new log records and
    /// journal ticket changes.
    pub fn pump(&self) -> Result<(), LiveError> {
        let (logs, entries) = {
            let mut w = lock(&self.world);
            let target = self.target();
            if target > w.now() {
                w.run_until(target)?;
            }
            (w.take_logs(), w.drain_journal())
        };
        for rec in logs {
            // No subscribers is fine; records are simply dropped.
            let _ = self.logs.send(rec);
        }
        lock(&self.journal).append(&entries)?;
        Ok(())
    }

    /// Pump on a fixed cadence until the runtime shuts down.
    pub fn spawn_driver(self: &std::sync::Arc<Self>) -> tokio::task::JoinHandle<()> {
        let live = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_millis(5));
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            loop {
                tick.tick().await;
                if let Err(e) = live.pump() {
                    log::error!("world driver: {e}");
                }
            }
        })
    }

    pub fn with_world<R>(&self, f: impl FnOnce(&mut World) -> R) -> R {
        f(&mut lock(&self.world))
    }

    pub fn subscribe_logs(&self) -> broadcast::Receiver<LogRecord> {
        self.logs.subscribe()
    }

    /// Send a command and wait for its reply while the driver runs.
    pub async fn command(&self, id: &str, cmd: &DutCommand) -> Result<DeviceState, WorldError> {
        let call = self.with_world(|w| w.send_command(id, cmd))?;
        let deadline = Instant::now() + Duration::from_secs_f64(REPLY_WAIT as f64 / NS_PER_S as f64 / self.speed) + Duration::from_secs(5);
        loop {
            tokio::time::sleep(POLL).await;
            if let Some(reply) = self.with_world(|w| w.take_reply(call)) {
                let DutReply { state, fault } = reply?;
                return match fault {
                    Some(f) => Err(f.into()),
                    None => Ok(state),
                };
            }
            if Instant::now() > deadline {
                return Err(WorldError::Timeout);
            }
        }
    }

    /// Current ticket, from this run or from the journal.
    pub fn action(&self, id: ActionId) -> Option<ActionTicket> {
        self.with_world(|w| w.ticket(id).cloned()).or_else(|| self.past.get(&id).cloned())
    }
}
