//! Run configuration: a single JSON document; every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::LinkageMethod;
use crate::dataset::{Role, VariableSchema, VariableSpec};
use crate::embed::DEFAULT_TOLERANCE;
use crate::error::{LcError, Result};
use crate::explore::DEFAULT_GRID;
use crate::mob::MobOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfirmConfig {
    /// Pseudo-clusterings pooled into the null eCDF (R).
    pub replicates: usize,
    /// Permutation replicates for the p-value (B).
    pub permutations: usize,
    pub seed: u64,
}

impl Default for ConfirmConfig {
    fn default() -> Self {
        ConfirmConfig {
            replicates: 100,
            permutations: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub replicates: usize,
    /// Per-K permutation p-values are skipped unless set.
    pub permutations: Option<usize>,
    pub seed: u64,
    pub advisory_factor: f64,
    pub size_bin_width: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            replicates: 100,
            permutations: None,
            seed: 1,
            advisory_factor: 2.0,
            size_bin_width: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    /// Predictors of the local effect; defaults to exposure, outcome and
    /// confounders in schema order.
    pub features: Option<Vec<String>>,
    pub pdp_grid_size: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 500,
            mtry: None,
            min_leaf: 5,
            seed: 1,
            features: None,
            pdp_grid_size: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobConfig {
    pub regressor: String,
    pub partition_variable: String,
    pub min_size: usize,
    pub max_depth: usize,
    pub min_gain: f64,
}

impl Default for MobConfig {
    fn default() -> Self {
        let o = MobOptions::default();
        MobConfig {
            regressor: "ASmoke".into(),
            partition_variable: "Bvoc".into(),
            min_size: o.min_size,
            max_depth: o.max_depth,
            min_gain: o.min_gain,
        }
    }
}

impl MobConfig {
    pub fn options(&self) -> MobOptions {
        MobOptions {
            min_size: self.min_size,
            max_depth: self.max_depth,
            min_gain: self.min_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub schema: VariableSchema,
    pub method: LinkageMethod,
    pub k: usize,
    pub k_grid: Vec<usize>,
    pub embed_tolerance: f64,
    /// Worker threads; `None` uses every core. Kept out of the serialized
    /// echo so bundles do not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub confirm: ConfirmConfig,
    pub explore: ExploreConfig,
    pub forest: ForestConfig,
    pub mob: MobConfig,
}

/// County health/air-quality layout: FIPS id, AACRmort outcome, Bvoc
/// exposure and six confounders.
pub fn default_schema() -> VariableSchema {
    let mut vars = vec![
        VariableSpec::new("FIPS", Role::Id),
        VariableSpec::new("AACRmort", Role::Outcome),
        VariableSpec::new("Bvoc", Role::Exposure),
    ];
    for c in ["Avoc", "pmSO4", "ASmoke", "PREMdeath", "ChildPOV", "IncomIEQ"] {
        vars.push(VariableSpec::new(c, Role::Confounder));
    }
    VariableSchema::new(vars).expect("built-in schema is valid")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::from("AnalysisFile.csv"),
            output_dir: PathBuf::from("lc_out"),
            schema: default_schema(),
            method: LinkageMethod::WardD,
            k: 50,
            k_grid: DEFAULT_GRID.to_vec(),
            embed_tolerance: DEFAULT_TOLERANCE,
            threads: None,
            confirm: ConfirmConfig::default(),
            explore: ExploreConfig::default(),
            forest: ForestConfig::default(),
            mob: MobConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LcError::io(path, e))?;
        RunConfig::from_json_str(&text)
    }

    /// Cheap structural checks; data-dependent ones happen in each stage.
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(LcError::Parameter("k must be >= 1".into()));
        }
        if self.k_grid.is_empty() {
            return Err(LcError::Parameter("k_grid is empty".into()));
        }
        if self.confirm.replicates < 1 || self.confirm.permutations < 1 {
            return Err(LcError::Parameter("confirm needs R >= 1 and B >= 1".into()));
        }
        if self.explore.replicates < 1 || self.explore.size_bin_width < 1 {
            return Err(LcError::Parameter(
                "explore needs replicates >= 1 and size_bin_width >= 1".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(LcError::Parameter("threads must be >= 1".into()));
        }
        for name in [&self.mob.regressor, &self.mob.partition_variable] {
            if self.schema.index_of(name).is_none() {
                return Err(LcError::UnknownVariable(name.clone()));
            }
        }
        for name in self.forest_features() {
            if self.schema.index_of(&name).is_none() || name == self.schema.id() {
                return Err(LcError::UnknownVariable(name));
            }
        }
        Ok(())
    }

    pub fn forest_features(&self) -> Vec<String> {
        match &self.forest.features {
            Some(f) => f.clone(),
            None => {
                let s = &self.schema;
                let mut out = vec![s.exposure().to_string(), s.outcome().to_string()];
                out.extend(s.confounders().into_iter().map(String::from));
                out
            }
        }
    }

    /// Sets every stage seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.confirm.seed = seed;
        self.explore.seed = seed;
        self.forest.seed = seed;
    }
}
