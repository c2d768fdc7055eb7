//! Versioned, self-describing model files (JSON, floats in shortest
//! round-trip decimal).

use std::path::Path;

use pfmix::eval::{FittedModel, Provenance};
use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::error::{data, CliError, CliResult};

pub const FORMAT: &str = "pfmix-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub format_version: u32,
    pub library_version: String,
    pub kind: ModelKind,
    pub seed: u64,
    pub p: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(kind: ModelKind, seed: u64, p: Option<f64>, k: Option<usize>, model: FittedModel) -> Self {
        ModelFile {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            library_version: pfmix::VERSION.into(),
            kind,
            seed,
            p,
            k,
            model,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            model_id: self.kind.name().into(),
            seed: self.seed,
            p: self.p,
            k: self.k,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str, source: &str) -> CliResult<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| data(format!("{source}: not JSON: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(data(format!("{source}: not a {FORMAT} file")));
        }
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(FORMAT_VERSION as u64) {
            return Err(data(format!("{source}: unsupported format version {version:?}")));
        }
        serde_json::from_value(value).map_err(|e| data(format!("{source}: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pfmix::baselines::fit_logreg;
    use pfmix::datagen::gen_analysis_dataset;
    use pfmix::eval::EvalData;
    use pfmix::gmm::{fit, EmConfig};

    #[test]
    fn json_roundtrip_preserves_every_bit() {
        let (d, _) = gen_analysis_dataset(200, 6.0, 4).unwrap();
        let mut cfg = EmConfig::new(2, 0.3, 4);
        cfg.n_restarts = 1;
        let f = fit(&d, &cfg).unwrap();
        let file = ModelFile::new(
            ModelKind::PfGmm,
            4,
            Some(0.3),
            Some(2),
            FittedModel::Mixture {
                params: f.params,
                phi: f.phi,
            },
        );
        let back = ModelFile::from_json(&file.to_json(), "mem").unwrap();
        assert_eq!(back, file);
        let a = file.model.predict_proba(EvalData::Flat(&d)).unwrap();
        let b = back.model.predict_proba(EvalData::Flat(&d)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn foreign_or_future_files_rejected() {
        let (d, _) = gen_analysis_dataset(50, 6.0, 0).unwrap();
        let lr = fit_logreg(d.x(), d.labels().unwrap(), 2, 1e-4, 50).unwrap();
        let file = ModelFile::new(ModelKind::LogReg, 0, None, None, FittedModel::LogReg(lr));
        let json = file.to_json();
        assert!(ModelFile::from_json("{}", "mem").is_err());
        let bumped = json.replace("\"format_version\": 1", "\"format_version\": 99");
        assert_eq!(ModelFile::from_json(&bumped, "mem").unwrap_err().exit_code(), 3);
    }
}
