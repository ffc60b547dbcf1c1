use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bag::{read_bag, write_bag, Bag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<String>,
    pub dim: usize,
    pub bags: Vec<BagEntry>,
    #[serde(default)]
    pub notes: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn binary_classes() -> Vec<String> {
        vec!["negative".into(), "positive".into()]
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bags {
            if b.label > 1 {
                return Err(Error::Config(format!(
                    "bag {} has label {}; labels must be 0 or 1",
                    b.id, b.label
                )));
            }
        }
        Ok(())
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.bags.iter().filter(|b| b.label == label).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads every referenced bag, checking existence, dimension and label
    /// agreement.
    pub fn load_bags(&self, manifest_path: impl AsRef<Path>) -> Result<Vec<Bag>> {
        let base = manifest_path
            .as_ref()
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        self.bags
            .iter()
            .map(|entry| {
                let path = if entry.path.is_absolute() {
                    entry.path.clone()
                } else {
                    base.join(&entry.path)
                };
                let mut bag = read_bag(&path)?;
                if bag.dim() != self.dim {
                    return Err(Error::Config(format!(
                        "{}: dimension {} differs from manifest dimension {}",
                        path.display(),
                        bag.dim(),
                        self.dim
                    )));
                }
                let label = entry.label == 1;
                if bag.label.is_some_and(|l| l != label) {
                    return Err(Error::Config(format!(
                        "{}: file label disagrees with manifest",
                        path.display()
                    )));
                }
                bag.label = Some(label);
                bag.id = entry.id.clone();
                Ok(bag)
            })
            .collect()
    }

    /// Writes `bags` as `<dir>/bags/<id>.bag` plus `<dir>/manifest.json`.
    pub fn write_dataset(
        dir: impl AsRef<Path>,
        name: &str,
        bags: &[Bag],
        notes: &str,
    ) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        let bag_dir = dir.join("bags");
        fs::create_dir_all(&bag_dir).map_err(|e| Error::io(&bag_dir, e))?;
        let dim = bags.first().map_or(0, Bag::dim);
        let mut entries = Vec::with_capacity(bags.len());
        for bag in bags {
            if bag.dim() != dim {
                return Err(Error::Config(format!(
                    "bag {} has dimension {}, expected {dim}",
                    bag.id,
                    bag.dim()
                )));
            }
            let label = bag.target()? as u8;
            let rel = PathBuf::from("bags").join(format!("{}.bag", bag.id));
            write_bag(bag, dir.join(&rel))?;
            entries.push(BagEntry {
                id: bag.id.clone(),
                path: rel,
                label,
            });
        }
        let manifest = DatasetManifest {
            name: name.to_string(),
            classes: DatasetManifest::binary_classes(),
            dim,
            bags: entries,
            notes: notes.to_string(),
        };
        manifest.save(dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}
