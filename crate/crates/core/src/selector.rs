//! Level-1 resolution: per-application rotation over registered balancer
//! addresses, served by a master/slave pair of selector nodes.
//!
//! Each node keeps its own rotation cursors; administrative changes
//! (register/deregister) are replicated to every node of a deployment so the
//! address tables stay element-wise equal while cursors stay independent.

use std::collections::BTreeMap;
use std::fmt;

use crate::model::Health;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Master,
    Slave,
}

/// Rotation list of balancer addresses for one application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorEntry {
    pub app_id: String,
    pub addresses: Vec<String>,
    pub cursor: usize,
}

/// One resolver node. `health` is flipped externally (the HA tests stop the
/// master); a Down node refuses to resolve.
#[derive(Debug, Clone)]
pub struct SelectorNode {
    pub node_id: String,
    pub role: Role,
    pub health: Health,
    entries: BTreeMap<String, SelectorEntry>,
}

impl SelectorNode {
    pub fn new(node_id: impl Into<String>, role: Role) -> Self {
        SelectorNode {
            node_id: node_id.into(),
            role,
            health: Health::Up,
            entries: BTreeMap::new(),
        }
    }

    pub fn entry(&self, app_id: &str) -> Option<&SelectorEntry> {
        self.entries.get(app_id)
    }

    /// Address tables without cursors, for replication checks.
    pub fn address_tables(&self) -> BTreeMap<String, Vec<String>> {
        self.entries
            .iter()
            .map(|(app, e)| (app.clone(), e.addresses.clone()))
            .collect()
    }

    /// Return the next balancer address for `app_id` and advance the cursor.
    pub fn resolve_app(&mut self, app_id: &str) -> Result<String, SelectorError> {
        if !self.health.is_up() {
            return Err(SelectorError::NodeDown(self.node_id.clone()));
        }
        let entry = self
            .entries
            .get_mut(app_id)
            .ok_or_else(|| SelectorError::UnknownApp(app_id.to_string()))?;
        let address = entry.addresses[entry.cursor].clone();
        entry.cursor = (entry.cursor + 1) % entry.addresses.len();
        Ok(address)
    }

    pub fn register_balancer(
        &mut self,
        app_id: &str,
        address: &str,
    ) -> Result<(), SelectorError> {
        let entry = self.entries.entry(app_id.to_string()).or_insert_with(|| SelectorEntry {
            app_id: app_id.to_string(),
            addresses: Vec::new(),
            cursor: 0,
        });
        if entry.addresses.iter().any(|a| a == address) {
            return Err(SelectorError::DuplicateAddress(address.to_string()));
        }
        entry.addresses.push(address.to_string());
        Ok(())
    }

    pub fn deregister_balancer(
        &mut self,
        app_id: &str,
        address: &str,
    ) -> Result<(), SelectorError> {
        let entry = self
            .entries
            .get_mut(app_id)
            .ok_or_else(|| SelectorError::UnknownApp(app_id.to_string()))?;
        let pos = entry
            .addresses
            .iter()
            .position(|a| a == address)
            .ok_or_else(|| SelectorError::UnknownAddress(address.to_string()))?;
        if entry.addresses.len() == 1 {
            return Err(SelectorError::LastAddress(app_id.to_string()));
        }
        entry.addresses.remove(pos);
        entry.cursor %= entry.addresses.len();
        Ok(())
    }
}

/// An ordered set of selector nodes, master first. Mutations apply to every
/// node; resolution goes through the first node that is Up.
#[derive(Debug, Clone)]
pub struct SelectorDeployment {
    nodes: Vec<SelectorNode>,
}

impl SelectorDeployment {
    /// The usual two-node deployment: one master, one slave.
    pub fn new_pair(master_id: impl Into<String>, slave_id: impl Into<String>) -> Self {
        SelectorDeployment {
            nodes: vec![
                SelectorNode::new(master_id, Role::Master),
                SelectorNode::new(slave_id, Role::Slave),
            ],
        }
    }

    pub fn nodes(&self) -> &[SelectorNode] {
        &self.nodes
    }

    pub fn node_mut(&mut self, node_id: &str) -> Option<&mut SelectorNode> {
        self.nodes.iter_mut().find(|n| n.node_id == node_id)
    }

    pub fn master(&self) -> &SelectorNode {
        &self.nodes[0]
    }

    pub fn slave(&self) -> &SelectorNode {
        &self.nodes[1]
    }

    pub fn set_health(&mut self, node_id: &str, health: Health) {
        if let Some(node) = self.node_mut(node_id) {
            node.health = health;
        }
    }

    /// Register on every node, rolling back on partial failure so the tables
    /// stay replicated.
    pub fn register_balancer(
        &mut self,
        app_id: &str,
        address: &str,
    ) -> Result<(), SelectorError> {
        for node in &self.nodes {
            if let Some(entry) = node.entry(app_id) {
                if entry.addresses.iter().any(|a| a == address) {
                    return Err(SelectorError::DuplicateAddress(address.to_string()));
                }
            }
        }
        for node in &mut self.nodes {
            node.register_balancer(app_id, address)?;
        }
        Ok(())
    }

    pub fn deregister_balancer(
        &mut self,
        app_id: &str,
        address: &str,
    ) -> Result<(), SelectorError> {
        // Validate against the master first; tables are replicated, so a
        // guard failure there means no node should be touched.
        {
            let master = &self.nodes[0];
            let entry = master
                .entry(app_id)
                .ok_or_else(|| SelectorError::UnknownApp(app_id.to_string()))?;
            if !entry.addresses.iter().any(|a| a == address) {
                return Err(SelectorError::UnknownAddress(address.to_string()));
            }
            if entry.addresses.len() == 1 {
                return Err(SelectorError::LastAddress(app_id.to_string()));
            }
        }
        for node in &mut self.nodes {
            node.deregister_balancer(app_id, address)?;
        }
        Ok(())
    }

    /// Resolve through the first Up node (master first, then slave).
    pub fn ha_resolve(&mut self, app_id: &str) -> Result<String, SelectorError> {
        for node in &mut self.nodes {
            if node.health.is_up() {
                return node.resolve_app(app_id);
            }
        }
        Err(SelectorError::AllSelectorsDown)
    }

    /// Replication invariant: all nodes hold identical address tables
    /// (cursors may differ).
    pub fn tables_replicated(&self) -> bool {
        let reference = self.nodes[0].address_tables();
        self.nodes.iter().all(|n| n.address_tables() == reference)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectorError {
    UnknownApp(String),
    UnknownAddress(String),
    NodeDown(String),
    AllSelectorsDown,
    LastAddress(String),
    DuplicateAddress(String),
}

impl fmt::Display for SelectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectorError::UnknownApp(app) => write!(f, "app {app} is not registered"),
            SelectorError::UnknownAddress(addr) => write!(f, "address {addr} is not registered"),
            SelectorError::NodeDown(node) => write!(f, "selector node {node} is down"),
            SelectorError::AllSelectorsDown => write!(f, "no selector node is up"),
            SelectorError::LastAddress(app) => {
                write!(f, "refusing to remove the last address of app {app}")
            }
            SelectorError::DuplicateAddress(addr) => {
                write!(f, "address {addr} is already registered")
            }
        }
    }
}

impl std::error::Error for SelectorError {}
