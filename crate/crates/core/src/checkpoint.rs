//! JSON container for models and plans. Floats are written with
//! shortest-round-trip formatting, so loading reproduces every bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Mlp};
use crate::rebasin::TransportPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Mlp(ModelRecord),
    Plan(TransportPlan),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl From<&Mlp> for ModelRecord {
    fn from(m: &Mlp) -> Self {
        Self {
            dims: m.dims(),
            activation: m.activation(),
            layers: m.layers().to_vec(),
        }
    }
}

impl TryFrom<ModelRecord> for Mlp {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Mlp> {
        let m = Mlp::new(r.layers, r.activation)?;
        if m.dims() != r.dims {
            return Err(Error::Format {
                field: "dims",
                detail: format!("declared {:?}, layers imply {:?}", r.dims, m.dims()),
            });
        }
        Ok(m)
    }
}

pub fn to_json(ck: &Checkpoint) -> Result<String> {
    Ok(serde_json::to_string(ck)?)
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    Ok(serde_json::from_str(text)?)
}

pub fn save_model(path: impl AsRef<Path>, model: &Mlp) -> Result<()> {
    fs::write(path, to_json(&Checkpoint::Mlp(model.into()))?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Mlp> {
    match from_json(&fs::read_to_string(path)?)? {
        Checkpoint::Mlp(r) => r.try_into(),
        Checkpoint::Plan(_) => Err(Error::Format {
            field: "kind",
            detail: "expected a model checkpoint, found a plan".into(),
        }),
    }
}

pub fn save_plan(path: impl AsRef<Path>, plan: &TransportPlan) -> Result<()> {
    fs::write(path, to_json(&Checkpoint::Plan(plan.clone()))?)?;
    Ok(())
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<TransportPlan> {
    match from_json(&fs::read_to_string(path)?)? {
        Checkpoint::Plan(p) => Ok(p),
        Checkpoint::Mlp(_) => Err(Error::Format {
            field: "kind",
            detail: "expected a plan checkpoint, found a model".into(),
        }),
    }
}
