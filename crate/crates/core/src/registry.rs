//! Name-keyed registries of interchangeable strategies.
//!
//! Each pluggable algorithm family (kernels, bandwidth selectors, admission
//! forecasters, hazard fitters) exposes a trait object; a `Registry` maps a
//! stable name to a factory so that the CLI and the HTTP service can select
//! an implementation at runtime.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::EstimationError;

type Factory<T> = Box<dyn Fn() -> Box<T> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    default: Option<&'static str>,
    entries: BTreeMap<&'static str, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            default: None,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &'static str, factory: F) -> &mut Self
    where
        F: Fn() -> Box<T> + Send + Sync + 'static,
    {
        self.entries.insert(name, Box::new(factory));
        if self.default.is_none() {
            self.default = Some(name);
        }
        self
    }

    pub fn set_default(&mut self, name: &'static str) -> &mut Self {
        assert!(self.entries.contains_key(name), "default `{name}` not registered");
        self.default = Some(name);
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>, EstimationError> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| EstimationError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
            })
    }

    pub fn create_default(&self) -> Box<T> {
        let name = self.default.expect("registry has no entries");
        self.entries[name]()
    }

    pub fn default_name(&self) -> Option<&'static str> {
        self.default
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("default", &self.default)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}
