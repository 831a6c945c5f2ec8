//! Name-keyed factories for interchangeable strategies.

use std::fmt;

use crate::error::{Error, Result};

type Factory<C, T> = Box<dyn Fn(&C) -> Result<Box<T>> + Send + Sync>;

/// Maps strategy names to constructors taking a shared config `C`.
pub struct Registry<C, T: ?Sized> {
    kind: &'static str,
    factories: Vec<(&'static str, Factory<C, T>)>,
}

impl<C, T: ?Sized> Registry<C, T> {
    /// `kind` names the strategy family in error messages.
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            factories: Vec::new(),
        }
    }

    /// Registers `name`, replacing any earlier factory with the same name.
    pub fn register<F>(&mut self, name: &'static str, factory: F) -> &mut Self
    where
        F: Fn(&C) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.retain(|(n, _)| *n != name);
        self.factories.push((name, Box::new(factory)));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.iter().any(|(n, _)| *n == name)
    }

    pub fn create(&self, name: &str, config: &C) -> Result<Box<T>> {
        let (_, f) = self
            .factories
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown {} `{name}` (available: {})",
                    self.kind,
                    self.names().join(", ")
                ))
            })?;
        f(config)
    }
}

impl<C, T: ?Sized> fmt::Debug for Registry<C, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}
