//! Name-keyed registry of every runnable method. Each entry builds a boxed
//! [`RoundDriver`] from a dataset and the shared federation settings.

use std::collections::BTreeMap;

use crate::baselines::{DataLevel, FusionFederation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{FederationConfig, Federation, RoundDriver};
use crate::selection::{client_selector, modality_selector, UniformClients};

pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn build(&self, dataset: &Dataset, config: FederationConfig) -> Result<Box<dyn RoundDriver>>;
}

type Builder = fn(&Dataset, FederationConfig) -> Result<Box<dyn RoundDriver>>;

struct BuiltIn {
    name: &'static str,
    description: &'static str,
    build: Builder,
}

impl Method for BuiltIn {
    fn name(&self) -> &'static str {
        self.name
    }

    fn description(&self) -> &'static str {
        self.description
    }

    fn build(&self, dataset: &Dataset, config: FederationConfig) -> Result<Box<dyn RoundDriver>> {
        (self.build)(dataset, config)
    }
}

/// mmFedMC with the modality and/or client choice made uniformly at random.
fn ablation(
    dataset: &Dataset,
    config: FederationConfig,
    uniform_modalities: bool,
    uniform_clients: bool,
) -> Result<Box<dyn RoundDriver>> {
    let clients = if uniform_clients {
        Box::new(UniformClients)
    } else {
        client_selector(config.selection.loss_direction)
    };
    Ok(Box::new(Federation::with_selectors(
        dataset,
        config,
        modality_selector(uniform_modalities),
        clients,
    )?))
}

const BUILT_INS: &[BuiltIn] = &[
    BuiltIn {
        name: "mmfedmc",
        description: "priority-based modality selection and loss-ranked client selection",
        build: |d, c| Ok(Box::new(Federation::new(d, c)?)),
    },
    BuiltIn {
        name: "data_level",
        description: "one model over concatenated features, FedAvg over all clients",
        build: |d, c| Ok(Box::new(DataLevel::new(d, c)?)),
    },
    BuiltIn {
        name: "feature_level",
        description: "per-modality encoders feeding a shared head, uploaded whole",
        build: |d, c| Ok(Box::new(FusionFederation::feature_level(d, c)?)),
    },
    BuiltIn {
        name: "decision_level",
        description: "per-modality class heads concatenated into a fusion layer, uploaded whole",
        build: |d, c| Ok(Box::new(FusionFederation::decision_level(d, c)?)),
    },
    BuiltIn {
        name: "random_submodel",
        description: "decision-level network, one random component uploaded per client",
        build: |d, c| Ok(Box::new(FusionFederation::random_submodel(d, c)?)),
    },
    BuiltIn {
        name: "random_modality",
        description: "mmFedMC with uniform modality selection",
        build: |d, c| ablation(d, c, true, false),
    },
    BuiltIn {
        name: "random_client",
        description: "mmFedMC with uniform client selection",
        build: |d, c| ablation(d, c, false, true),
    },
    BuiltIn {
        name: "random_both",
        description: "mmFedMC with uniform modality and client selection",
        build: |d, c| ablation(d, c, true, true),
    },
];

pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Box<dyn Method>>,
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry {
            methods: BTreeMap::new(),
        }
    }

    /// Registry holding every built-in method.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for b in BUILT_INS {
            r.register(Box::new(BuiltIn { ..*b }));
        }
        r
    }

    /// Adds or replaces a method under its name.
    pub fn register(&mut self, method: Box<dyn Method>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Method> {
        self.methods
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(format!("{name} (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }

    pub fn build(&self, name: &str, dataset: &Dataset, config: FederationConfig) -> Result<Box<dyn RoundDriver>> {
        self.get(name)?.build(dataset, config)
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let r = MethodRegistry::builtin();
        assert_eq!(r.names().len(), 8);
        assert_eq!(r.get("random_both").unwrap().name(), "random_both");
        assert!(matches!(r.get("fedprox"), Err(Error::UnknownMethod(_))));
    }
}
