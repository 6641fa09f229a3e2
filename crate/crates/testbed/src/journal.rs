//! Append-only action journal: one ticket snapshot per line, so a restarted
//! coordinator can still answer for work it finished earlier.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use testbed_core::coordinator::{ActionId, ActionTicket, TicketState};
use testbed_core::text;

/// Result text given to tickets that were still open when the previous
/// coordinator process stopped.
pub const ORPHANED: &str = "coordinator restarted before the action finished";

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("journal {path} line {line}: {msg}")]
    Corrupt { path: PathBuf, line: usize, msg: String },
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

/// Journal contents at open time: the latest snapshot of every ticket.
#[derive(Debug, Default, Clone)]
pub struct Replayed {
    pub tickets: BTreeMap<ActionId, ActionTicket>,
}

impl Replayed {
    pub fn last_id(&self) -> ActionId {
        self.tickets.keys().next_back().copied().unwrap_or(0)
    }
}

impl Journal {
    /// Open or create the journal and replay it. A torn final line (crash
    /// mid-write) is ignored; corruption anywhere else is an error. Open
    /// tickets from the previous run are closed as failed.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Replayed), JournalError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| JournalError::Io { path: path.clone(), source };
        let mut replayed = Replayed::default();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path).map_err(io_err)?)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io_err)?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match text::from_text::<ActionTicket>(line) {
                    Ok(t) => {
                        replayed.tickets.insert(t.action_id, t);
                    }
                    Err(_) if i + 1 == last => log::warn!("ignoring torn last line of {}", path.display()),
                    Err(e) => return Err(JournalError::Corrupt { path, line: i + 1, msg: e.to_string() }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        let mut journal = Self { path, file };
        let orphans: Vec<ActionTicket> = replayed
            .tickets
            .values_mut()
            .filter(|t| !t.state.is_terminal())
            .map(|t| {
                t.state = TicketState::Failed;
                t.result = Some(ORPHANED.into());
                t.clone()
            })
            .collect();
        journal.append(&orphans)?;
        Ok((journal, replayed))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entries: &[ActionTicket]) -> Result<(), JournalError> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in entries {
            let line = text::to_text(e).map_err(|e| JournalError::Corrupt { path: self.path.clone(), line: 0, msg: e.to_string() })?;
            buf.push_str(&line);
            buf.push('\n');
        }
        let io_err = |source| JournalError::Io { path: self.path.clone(), source };
        self.file.write_all(buf.as_bytes()).map_err(io_err)?;
        self.file.flush().map_err(io_err)
    }
}
