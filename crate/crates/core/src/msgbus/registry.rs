use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::types::{NodeId, NodeInfo, NodeKind};
use super::BusError;

/// Handle returned by a successful registration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeHandle {
    pub id: NodeId,
    pub kind: NodeKind,
}

#[derive(Debug, Clone)]
struct Entry {
    info: NodeInfo,
    alive: bool,
}

/// Name → node table hosted by the central node.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    nodes: BTreeMap<NodeId, Entry>,
}

impl Registry {
    pub fn register(&mut self, info: NodeInfo) -> Result<NodeHandle, BusError> {
        if self.nodes.contains_key(&info.node_id) {
            return Err(BusError::DuplicateNode(info.node_id));
        }
        let handle = NodeHandle { id: info.node_id.clone(), kind: info.node_kind };
        self.nodes.insert(info.node_id.clone(), Entry { info, alive: true });
        Ok(handle)
    }

    pub fn lookup(&self, id: &str) -> Option<&NodeInfo> {
        self.nodes.get(id).map(|e| &e.info)
    }

    pub fn is_alive(&self, id: &str) -> bool {
        self.nodes.get(id).is_some_and(|e| e.alive)
    }

    pub fn set_alive(&mut self, id: &str, alive: bool) -> Result<(), BusError> {
        let e = self.nodes.get_mut(id).ok_or_else(|| BusError::UnknownNode(id.into()))?;
        e.alive = alive;
        Ok(())
    }

    pub fn discover_kind(&self, kind: NodeKind) -> Vec<&NodeInfo> {
        self.nodes.values().filter(|e| e.info.node_kind == kind).map(|e| &e.info).collect()
    }

    pub fn all(&self) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.values().map(|e| &e.info)
    }

    pub(crate) fn add_endpoint(&mut self, id: &str, name: String) -> Result<(), BusError> {
        let e = self.nodes.get_mut(id).ok_or_else(|| BusError::UnknownNode(id.into()))?;
        if !e.info.endpoints.contains(&name) {
            e.info.endpoints.push(name);
        }
        Ok(())
    }

    pub fn advertises(&self, id: &str, name: &str) -> bool {
        self.nodes.get(id).is_some_and(|e| e.info.endpoints.iter().any(|n| n == name))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
