//! JSON form of a mixture: `{dim, components: [{weight, mean, covariance}]}`
//! with covariances flattened row-major.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GaussianComponent, MixtureModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ComponentJson {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelJson {
    pub dim: usize,
    pub components: Vec<ComponentJson>,
}

impl From<&GaussianComponent> for ComponentJson {
    fn from(c: &GaussianComponent) -> Self {
        let d = c.dim();
        ComponentJson {
            weight: c.weight,
            mean: c.mean.clone(),
            covariance: (0..d * d).map(|i| c.covariance[(i / d, i % d)]).collect(),
        }
    }
}

impl ComponentJson {
    pub(crate) fn into_component(self, dim: usize) -> Result<GaussianComponent> {
        if self.mean.len() != dim || self.covariance.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "component shape does not match dimension {dim}"
            )));
        }
        GaussianComponent::new(
            self.weight,
            self.mean,
            DMatrix::from_row_slice(dim, dim, &self.covariance),
        )
    }
}

impl Serialize for MixtureModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson {
            dim: self.dim,
            components: self.components.iter().map(ComponentJson::from).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixtureModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ModelJson::deserialize(d)?;
        let dim = raw.dim;
        let components = raw
            .components
            .into_iter()
            .map(|c| c.into_component(dim))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        MixtureModel::new(dim, components).map_err(serde::de::Error::custom)
    }
}

pub fn save_model(model: &MixtureModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(model)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads and validates a mixture written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<MixtureModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: MixtureModel = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}
