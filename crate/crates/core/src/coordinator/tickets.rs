use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::msgbus::{ActionOutcome, ActionStatus};

pub type ActionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketState {
    Pending,
    Running,
    Succeeded,
    Failed,
    Canceled,
}

impl TicketState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TicketState::Succeeded | TicketState::Failed | TicketState::Canceled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Flash,
    Goto,
}

/// Coordinator-side record of one long-running action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTicket {
    pub action_id: ActionId,
    pub kind: ActionKind,
    /// Node the action runs on.
    pub target: String,
    pub state: TicketState,
    pub progress: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
}

/// Ticket table. Every state change is also queued as a journal entry;
/// terminal tickets never change again.
#[derive(Debug, Default)]
pub struct Tickets {
    next: ActionId,
    table: BTreeMap<ActionId, ActionTicket>,
    journal: Vec<ActionTicket>,
}

impl Tickets {
    /// Start numbering after `last`, e.g. the highest id found in a journal.
    pub fn resume_after(last: ActionId) -> Self {
        Self { next: last, ..Self::default() }
    }

    pub fn open(&mut self, kind: ActionKind, target: &str) -> ActionId {
        self.next += 1;
        let t = ActionTicket {
            action_id: self.next,
            kind,
            target: target.into(),
            state: TicketState::Pending,
            progress: 0,
            result: None,
        };
        self.journal.push(t.clone());
        self.table.insert(t.action_id, t);
        self.next
    }

    pub fn get(&self, id: ActionId) -> Option<&ActionTicket> {
        self.table.get(&id)
    }

    pub fn all(&self) -> impl Iterator<Item = &ActionTicket> {
        self.table.values()
    }

    /// Non-terminal ticket of `kind` on `target`, if any.
    pub fn active(&self, kind: ActionKind, target: &str) -> Option<&ActionTicket> {
        self.table.values().find(|t| t.kind == kind && t.target == target && !t.state.is_terminal())
    }

    fn update(&mut self, id: ActionId, f: impl FnOnce(&mut ActionTicket)) {
        let Some(t) = self.table.get_mut(&id) else { return };
        if t.state.is_terminal() {
            return;
        }
        let before = t.clone();
        f(t);
        if *t != before {
            self.journal.push(t.clone());
        }
    }

    pub fn accepted(&mut self, id: ActionId) {
        self.update(id, |t| {
            if t.state == TicketState::Pending {
                t.state = TicketState::Running;
            }
        });
    }

    pub fn progress(&mut self, id: ActionId, pct: u8) {
        self.update(id, |t| {
            t.state = TicketState::Running;
            t.progress = t.progress.max(pct.min(100));
        });
    }

    pub fn finish(&mut self, id: ActionId, outcome: &ActionOutcome) {
        self.update(id, |t| {
            t.state = match outcome.status {
                ActionStatus::Succeeded => TicketState::Succeeded,
                ActionStatus::Failed => TicketState::Failed,
                ActionStatus::Canceled => TicketState::Canceled,
            };
            if outcome.status == ActionStatus::Succeeded {
                t.progress = 100;
            }
            t.result = Some(outcome.detail.clone());
        });
    }

    /// Journal entries queued since the last call, oldest first.
    pub fn drain_journal(&mut self) -> Vec<ActionTicket> {
        core::mem::take(&mut self.journal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_and_journal() {
        let mut t = Tickets::default();
        let id = t.open(ActionKind::Flash, "dut1");
        assert_eq!(t.active(ActionKind::Flash, "dut1").map(|x| x.action_id), Some(id));
        t.accepted(id);
        t.progress(id, 50);
        t.finish(id, &ActionOutcome::succeeded("ok"));
        let states: Vec<_> = t.drain_journal().iter().map(|e| (e.state, e.progress)).collect();
        assert_eq!(
            states,
            [(TicketState::Pending, 0), (TicketState::Running, 0), (TicketState::Running, 50), (TicketState::Succeeded, 100)]
        );
        assert!(t.active(ActionKind::Flash, "dut1").is_none());
    }

    #[test]
    fn terminal_state_is_frozen() {
        let mut t = Tickets::default();
        let id = t.open(ActionKind::Goto, "agv");
        t.finish(id, &ActionOutcome::canceled());
        t.progress(id, 10);
        t.finish(id, &ActionOutcome::succeeded(""));
        let tk = t.get(id).unwrap();
        assert_eq!((tk.state, tk.progress), (TicketState::Canceled, 0));
    }

    #[test]
    fn resumed_numbering_continues() {
        let mut t = Tickets::resume_after(41);
        assert_eq!(t.open(ActionKind::Goto, "agv"), 42);
    }
}
