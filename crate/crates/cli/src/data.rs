//! Dataset and split reconstruction from the `[data]` config section.

use std::path::PathBuf;

use kbnet_core::nn::{Dataset, DatasetSource, Split, SyntheticKind};

use crate::config::Config;
use crate::fail::{input, Result};

pub struct Splits {
    pub train: Dataset<f32>,
    pub validation: Dataset<f32>,
    pub test: Dataset<f32>,
    /// Files the data came from, for provenance.
    pub files: Vec<PathBuf>,
}

pub fn source(cfg: &Config) -> Result<(DatasetSource, Vec<PathBuf>)> {
    let seed: u64 = cfg.get_or("seed", 0)?;
    let kind = cfg.raw("data.kind").unwrap_or("blobs");
    let n: usize = cfg.get_or("data.samples", 1200)?;
    let classes: usize = cfg.get_or("data.classes", 4)?;
    let synthetic = |kind| DatasetSource::Synthetic { kind, n, seed };
    let path = |key: &str| -> Result<PathBuf> {
        cfg.raw(key)
            .map(PathBuf::from)
            .ok_or_else(|| input(format!("dataset kind `{kind}` needs `{key}`")))
    };
    Ok(match kind {
        "blobs" => (
            synthetic(SyntheticKind::Blobs {
                classes,
                std: cfg.get_or("data.std", 0.05)?,
            }),
            vec![],
        ),
        "spirals" => (
            synthetic(SyntheticKind::Spirals {
                noise: cfg.get_or("data.noise", 0.05)?,
            }),
            vec![],
        ),
        "stripes" => (
            synthetic(SyntheticKind::Stripes {
                side: cfg.get_or("data.side", 16)?,
                classes,
                noise: cfg.get_or("data.noise", 0.05)?,
            }),
            vec![],
        ),
        "idx" => {
            let (images, labels) = (path("data.images")?, path("data.labels")?);
            (
                DatasetSource::Idx {
                    images: images.clone(),
                    labels: labels.clone(),
                },
                vec![images, labels],
            )
        }
        "csv" => {
            let p = path("data.path")?;
            (DatasetSource::Csv { path: p.clone() }, vec![p])
        }
        other => return Err(input(format!("unknown dataset kind `{other}` (blobs, spirals, stripes, idx, csv)"))),
    })
}

pub fn load(cfg: &Config) -> Result<Splits> {
    let (src, files) = source(cfg)?;
    for f in &files {
        if !f.is_file() {
            return Err(input(format!("dataset file {} not found", f.display())));
        }
    }
    let all: Dataset<f32> = src.load()?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let (tr, va, te) = all.split_three(
        cfg.get_or("data.train_fraction", 0.6)?,
        cfg.get_or("data.validation_fraction", 0.2)?,
        cfg.get_or("data.split_seed", seed.wrapping_add(1))?,
    )?;
    Ok(Splits {
        train: tr,
        validation: va.with_split(Split::Validation),
        test: te.with_split(Split::Test),
        files,
    })
}

/// Architecture used when none is configured.
pub fn default_arch(sample: &[usize], classes: usize) -> Option<String> {
    match *sample {
        [d] => Some(format!("F:{d}x64,R,F:64x64,R,F:64x{classes}")),
        [c, 16, 16] => Some(format!(
            "C:8x{c}x3x3,R,M:2,C:16x8x3x3,R,C:16x16x3x3,R,C:16x16x3x3,R,FL,F:16x{classes}"
        )),
        _ => None,
    }
}
