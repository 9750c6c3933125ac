//! Name-keyed registry of boxed strategy objects.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Maps lowercase names to boxed implementations of some strategy trait.
pub struct Registry<T: ?Sized> {
    family: &'static str,
    entries: BTreeMap<String, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Registry { family, entries: BTreeMap::new() }
    }

    /// Registers `item` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &str, item: Box<T>) -> &mut Self {
        self.entries.insert(name.to_ascii_lowercase(), item);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(&name.to_ascii_lowercase()).map(|b| b.as_ref()).ok_or_else(|| Error::UnknownStrategy {
            family: self.family,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_ascii_lowercase())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &T)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }
}
