use std::path::{Path, PathBuf};

use super::CliError;
use crate::kv::{self, KvMap};

/// Record of one command invocation, written next to its primary output.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub wall_secs: f64,
    pub artifacts: Vec<PathBuf>,
    pub config: KvMap,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("command".into(), self.command.clone()),
            ("version".into(), self.version.clone()),
            ("seed".into(), self.seed.to_string()),
            ("wall_secs".into(), format!("{:.3}", self.wall_secs)),
        ];
        for (i, a) in self.artifacts.iter().enumerate() {
            pairs.push((format!("artifact.{i}"), a.display().to_string()));
        }
        for (k, v) in &self.config {
            pairs.push((format!("config.{k}"), v.clone()));
        }
        kv::render_kv(pairs.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let map = kv::parse_kv(text)?;
        let mut artifacts = Vec::new();
        while let Some(a) = map.get(&format!("artifact.{}", artifacts.len())) {
            artifacts.push(PathBuf::from(a));
        }
        let config = map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            command: kv::require(&map, "command")?,
            version: kv::require(&map, "version")?,
            seed: kv::require(&map, "seed")?,
            wall_secs: kv::require(&map, "wall_secs")?,
            artifacts,
            config,
        })
    }

    /// Path of the manifest belonging to `output`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest");
        output.with_file_name(name)
    }

    pub fn write(&self, output: &Path) -> Result<PathBuf, CliError> {
        let path = Self::path_for(output);
        std::fs::write(&path, self.render()).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let m = RunManifest {
            command: "train".into(),
            version: "0.1.0".into(),
            seed: 3,
            wall_secs: 1.5,
            artifacts: vec!["a/model.cpk".into(), "a/model_log.csv".into()],
            config: [("margin".to_string(), "2".to_string())].into_iter().collect(),
        };
        assert_eq!(RunManifest::parse(&m.render()).unwrap(), m);
        assert_eq!(
            RunManifest::path_for(Path::new("out/model.cpk")),
            PathBuf::from("out/model.cpk.manifest")
        );
    }
}
