//! Name-keyed registries for interchangeable strategies.
//!
//! Classifier families, style-transfer methods and fine-tuning pipelines are
//! each registered under a stable name so that config files and CLI flags can
//! select them at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

/// A strategy that can be looked up by name.
pub trait Named {
    fn name(&self) -> &'static str;
}

/// Ordered map from strategy name to shared trait object.
pub struct Registry<T: ?Sized + Named> {
    entries: BTreeMap<&'static str, Arc<T>>,
    order: Vec<&'static str>,
}

impl<T: ?Sized + Named> Default for Registry<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            order: Vec::new(),
        }
    }
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `strategy`, replacing any earlier entry with the same name.
    pub fn register(&mut self, strategy: Arc<T>) -> &mut Self {
        let name = strategy.name();
        if self.entries.insert(name, strategy).is_none() {
            self.order.push(name);
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<Arc<T>> {
        self.entries.get(name).cloned()
    }

    /// Names in registration order.
    pub fn names(&self) -> &[&'static str] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = Arc<T>> + '_ {
        self.order.iter().map(move |n| self.entries[n].clone())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
