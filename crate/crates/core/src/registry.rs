//! Name-addressed strategy tables. Feature streams, scene encoders and
//! ablation variants are each a trait object looked up by name or alias.

use crate::error::{PriseError, Result};

pub trait Named {
    fn name(&self) -> &'static str;

    fn aliases(&self) -> &'static [&'static str] {
        &[]
    }
}

pub struct Registry<T: ?Sized + 'static> {
    kind: &'static str,
    entries: &'static [&'static T],
}

impl<T: ?Sized + Named + 'static> Registry<T> {
    pub const fn new(kind: &'static str, entries: &'static [&'static T]) -> Self {
        Self { kind, entries }
    }

    pub fn all(&self) -> &'static [&'static T] {
        self.entries
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    /// Case-insensitive lookup by canonical name or alias.
    pub fn get(&self, name: &str) -> Result<&'static T> {
        let key = name.trim().to_ascii_lowercase();
        self.entries
            .iter()
            .copied()
            .find(|e| e.name() == key || e.aliases().contains(&key.as_str()))
            .ok_or_else(|| {
                PriseError::Config(format!(
                    "unknown {} `{name}` (known: {})",
                    self.kind,
                    self.names().join(", ")
                ))
            })
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        let e = self.get(name)?;
        Ok(self
            .entries
            .iter()
            .position(|x| x.name() == e.name())
            .expect("entry is registered"))
    }
}
