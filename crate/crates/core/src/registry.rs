//! Name-keyed registries of interchangeable algorithm implementations.
//!
//! Each algorithm family (visibility-graph builders, community detectors,
//! Shapley estimators) exposes a trait and a `registry()` function that maps
//! a stable name to a factory. Pipelines pick an implementation by name from
//! configuration or the command line.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Factory<T, P> = fn(&P) -> Box<T>;

pub struct Registry<T: ?Sized, P = ()> {
    kind: &'static str,
    factories: BTreeMap<&'static str, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory<T, P>) -> &mut Self {
        self.factories.insert(name, factory);
        self
    }

    pub fn with(mut self, name: &'static str, factory: Factory<T, P>) -> Self {
        self.register(name, factory);
        self
    }

    /// Instantiate the strategy registered under `name`.
    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(factory) => Ok(factory(params)),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Plain;
    impl Greeter for Plain {
        fn greet(&self) -> String {
            "hi".into()
        }
    }

    struct Loud(usize);
    impl Greeter for Loud {
        fn greet(&self) -> String {
            "HI".repeat(self.0)
        }
    }

    #[test]
    fn create_by_name() {
        let reg: Registry<dyn Greeter, usize> = Registry::new("greeter")
            .with("plain", |_| -> Box<dyn Greeter> { Box::new(Plain) })
            .with("loud", |n| -> Box<dyn Greeter> { Box::new(Loud(*n)) });
        assert_eq!(reg.create("loud", &2).unwrap().greet(), "HIHI");
        assert_eq!(reg.names(), vec!["loud", "plain"]);
        let err = reg.create("quiet", &0).err().unwrap();
        assert!(err.to_string().contains("loud, plain"));
    }
}
