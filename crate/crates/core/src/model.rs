//! Versioned on-disk model format shared by all engines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{KmCurve, PemGlm};
use crate::boost::BoostedEnsemble;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "pem-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Gbt(Box<BoostedEnsemble>),
    Glm(Box<PemGlm>),
    Km(KmCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
}

impl ModelFile {
    pub fn new(model: ModelKind) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model,
        }
    }
}

pub fn save_model<P: AsRef<Path>>(path: P, model: &ModelKind) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, &ModelFile::new(model.clone()))?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<ModelFile> {
    let file = std::fs::File::open(path)?;
    let mf: ModelFile = serde_json::from_reader(file)?;
    if mf.format != MODEL_FORMAT {
        return Err(Error::Schema(format!(
            "not a model file (format '{}')",
            mf.format
        )));
    }
    if mf.version > MODEL_VERSION {
        return Err(Error::Schema(format!(
            "model version {} is newer than supported {MODEL_VERSION}",
            mf.version
        )));
    }
    Ok(mf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::{fit, BoostParams};
    use crate::ped::{transform, CutPoints};
    use crate::survdata::{read_csv, CsvSchema};

    #[test]
    fn gbt_model_round_trips_through_json() {
        let csv = "id,time,status,x\n1,0.5,1,0.2\n2,1.5,1,0.8\n3,2.0,0,0.5\n";
        let ds = read_csv(csv.as_bytes(), &CsvSchema::simple(&["x"]), None).unwrap();
        let cp = CutPoints::new(vec![0.0, 1.0, 2.0]).unwrap();
        let (ped, _) = transform(&ds, &cp).unwrap();
        let model = fit(
            &ped,
            &BoostParams {
                n_rounds: 5,
                ..BoostParams::default()
            },
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &ModelKind::Gbt(Box::new(model.clone()))).unwrap();
        let back = load_model(&path).unwrap();
        match back.model {
            ModelKind::Gbt(m) => assert_eq!(*m, model),
            _ => panic!("wrong kind"),
        }
    }
}
