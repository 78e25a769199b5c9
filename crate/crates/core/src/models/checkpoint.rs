use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

use super::{Model, ModelSpec};

const FORMAT: &str = "evolve-gnn-checkpoint/1";

/// Self-describing JSON container for a trained model. Floats are written
/// in shortest round-trip form, so loading reproduces every value exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    /// Label of each output column.
    pub classes: Vec<String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(model: &Model, classes: Vec<String>) -> Result<Self> {
        if classes.len() != model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "{} class labels for {} outputs",
                classes.len(),
                model.num_classes()
            )));
        }
        Ok(Self {
            format: FORMAT.into(),
            spec: *model.spec(),
            classes,
            params: model.params().clone(),
        })
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_parts(self.spec, self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != FORMAT {
            return Err(Error::Parse {
                location: path.display().to_string(),
                message: format!("unsupported checkpoint format {:?}", ckpt.format),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gat.json");
        let model = Model::init_seeded(ModelSpec::new(Architecture::Gat, 7, 3), 42).unwrap();
        let ckpt = Checkpoint::new(&model, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let restored = loaded.into_model().unwrap();
        for ((_, a), (_, b)) in restored.params().iter().zip(model.params().iter()) {
            let bits = |m: &crate::matrix::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn mismatched_layout_rejected() {
        let model = Model::init_seeded(ModelSpec::new(Architecture::Mlp, 4, 2), 1).unwrap();
        let mut ckpt = Checkpoint::new(&model, vec!["x".into(), "y".into()]).unwrap();
        ckpt.spec.arch = Architecture::Sage;
        assert!(ckpt.into_model().is_err());
    }
}
