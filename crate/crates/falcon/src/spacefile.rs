//! The design-space declaration file: a JSON object listing dimensions in
//! order plus optional dependency groups.
//!
//! ```json
//! {
//!   "dimensions": [
//!     { "name": "dropout", "kind": "numerical", "choices": [0.0, 0.3, 0.6] },
//!     { "name": "act", "kind": "categorical", "choices": ["relu", "swish"] }
//!   ],
//!   "groups": [
//!     {
//!       "flag": "use_pooling",
//!       "inactive_choice": "false",
//!       "members": ["pool_type", "pool_loop"],
//!       "gates": [{ "dimension": "pool_loop", "bound": "mp_layers" }]
//!     }
//!   ]
//! }
//! ```

use std::fs;
use std::path::Path;

use falcon_core::space::{DependencyGroup, DesignSpace, Gate};
use falcon_core::{Dimension, DimensionKind, SpaceIndex};
use serde::{Deserialize, Serialize};

use crate::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub dimensions: Vec<DimensionFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DimensionFile {
    Numerical { name: String, choices: Vec<f64> },
    Categorical { name: String, choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupFile {
    pub flag: String,
    pub inactive_choice: String,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gates: Vec<GateFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateFile {
    pub dimension: String,
    pub bound: String,
}

impl SpaceFile {
    pub fn parse(text: &str) -> Result<SpaceFile, AppError> {
        serde_json::from_str(text)
            .map_err(|e| AppError::config(format!("space file: {e}")))
    }

    pub fn load(path: &Path) -> Result<SpaceFile, AppError> {
        let text = fs::read_to_string(path).map_err(|e| {
            AppError::config(format!("space file {}: {e}", path.display()))
        })?;
        SpaceFile::parse(&text)
            .map_err(|e| AppError::config(format!("{}: {e}", path.display())))
    }

    /// Semantic validation happens here: duplicate names, unordered
    /// choices, dangling group references and the like come back as
    /// configuration errors naming the offending dimension.
    pub fn build(&self) -> Result<DesignSpace, AppError> {
        let dims = self
            .dimensions
            .iter()
            .map(|d| match d {
                DimensionFile::Numerical { name, choices } => {
                    Dimension::numerical(name, choices)
                }
                DimensionFile::Categorical { name, choices } => {
                    let refs: Vec<&str> = choices.iter().map(String::as_str).collect();
                    Dimension::categorical(name, &refs)
                }
            })
            .collect();
        let groups = self
            .groups
            .iter()
            .map(|g| DependencyGroup {
                flag: g.flag.clone(),
                inactive_choice: g.inactive_choice.clone(),
                members: g.members.clone(),
                gates: g
                    .gates
                    .iter()
                    .map(|gate| Gate {
                        dimension: gate.dimension.clone(),
                        bound: gate.bound.clone(),
                    })
                    .collect(),
            })
            .collect();
        DesignSpace::new(dims, groups)
            .map_err(|e| AppError::config(format!("space file: {e}")))
    }

    pub fn index(&self) -> Result<SpaceIndex, AppError> {
        SpaceIndex::new(self.build()?)
            .map_err(|e| AppError::config(format!("space file: {e}")))
    }
}

/// The declaration mirrored back from a built space; used by tests to
/// confirm file and programmatic construction agree.
pub fn describe(space: &DesignSpace) -> SpaceFile {
    let dimensions = space
        .dimensions()
        .iter()
        .map(|d| match &d.kind {
            DimensionKind::Numerical(choices) => DimensionFile::Numerical {
                name: d.name.clone(),
                choices: choices.clone(),
            },
            DimensionKind::Categorical(choices) => DimensionFile::Categorical {
                name: d.name.clone(),
                choices: choices.clone(),
            },
        })
        .collect();
    SpaceFile { dimensions, groups: Vec::new() }
}
