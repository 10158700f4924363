//! Dataset resolution: `--data-root`, then `$WIPU_DATA_ROOT`, then the
//! procedural stand-in generated in memory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use wipu_core::data::cifar::{resolve_dir, TEST_FILE};
use wipu_core::data::synthetic::{synthetic_cifar10, DEFAULT_SYNTHETIC_SEED};
use wipu_core::data::{load_cifar10_partial, ImageSet, DATA_ROOT_ENV};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Cifar10(PathBuf),
    Synthetic { seed: u64 },
}

impl DataSource {
    pub fn resolve(flag: Option<&Path>) -> Result<Self> {
        let root = flag.map(Path::to_path_buf).or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from));
        match root {
            Some(root) => {
                if !resolve_dir(&root).join(TEST_FILE).exists() {
                    bail!("dataset path {} has no CIFAR-10 binary batches ({TEST_FILE} not found)", root.display());
                }
                Ok(DataSource::Cifar10(root))
            }
            None => Ok(DataSource::Synthetic { seed: DEFAULT_SYNTHETIC_SEED }),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DataSource::Cifar10(p) => format!("cifar10:{}", p.display()),
            DataSource::Synthetic { seed } => format!("synthetic-cifar10:seed={seed}"),
        }
    }

    /// First `max_train` training and `max_test` test images.
    pub fn load(&self, max_train: usize, max_test: usize) -> Result<(ImageSet, ImageSet)> {
        if let DataSource::Synthetic { .. } = self {
            eprintln!("note: no dataset configured (--data-root / ${DATA_ROOT_ENV}); using procedural stand-in images");
        }
        Ok(match self {
            DataSource::Cifar10(root) => load_cifar10_partial(root, max_train, max_test)?,
            DataSource::Synthetic { seed } => synthetic_cifar10(*seed, max_train, max_test)?,
        })
    }
}
