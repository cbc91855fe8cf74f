//! A trained model, its scaler and a manifest in one file.
//!
//! ```text
//! magic    "SSBD"
//! version  u16
//! entries  u16
//! per entry: name_len u16, name (UTF-8), data_len u32, data
//! crc32    u32     over every preceding byte
//! ```
//!
//! Entries are `manifest.json` followed by weight files in the `SSTK` format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::LstmNet;
use crate::error::{Error, Result};
use crate::features::{Decimation, Scaler, FEATURE_MAP, FEATURE_MAP_VERSION};
use crate::model::{ModelKind, TrainedModel};
use crate::nn::io::{decode, encode};
use crate::nn::DenseNet;
use crate::signals::ClassMode;
use crate::stacking::StackModel;

pub const MAGIC: &[u8; 4] = b"SSBD";
pub const BUNDLE_VERSION: u16 = 1;
pub const MANIFEST_ENTRY: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub class_mode: ClassMode,
    pub decimation: Decimation,
    pub feature_map_version: u32,
    pub feature_names: Vec<String>,
    pub param_count: usize,
    pub scaler: Scaler,
    pub weight_entries: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub manifest: BundleManifest,
    pub model: TrainedModel,
}

pub fn encode_entries(entries: &[(String, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    let n = u16::try_from(entries.len()).map_err(|_| Error::BadModel("too many bundle entries".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    for (name, data) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::BadModel("entry name too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dl = u32::try_from(data.len()).map_err(|_| Error::BadModel("entry too large".into()))?;
        out.extend_from_slice(&dl.to_le_bytes());
        out.extend_from_slice(data);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch);
    }
    let bad = || Error::BadModel("bundle entry table is inconsistent".into());
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        let s = body.get(pos..end).ok_or_else(bad)?;
        pos = end;
        Ok(s)
    };
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != BUNDLE_VERSION {
        return Err(Error::BadModel(format!("unsupported bundle version {version}")));
    }
    let n = u16::from_le_bytes(take(2)?.try_into().unwrap());
    let mut entries = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let nl = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(nl)?.to_vec()).map_err(|_| bad())?;
        let dl = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        entries.push((name, take(dl)?.to_vec()));
    }
    if pos != body.len() {
        return Err(bad());
    }
    Ok(entries)
}

fn weight_entries(model: &TrainedModel) -> Result<Vec<(String, Vec<u8>)>> {
    Ok(match model {
        TrainedModel::Stack(s) => {
            let mut v = Vec::new();
            for (i, b) in s.bases.iter().enumerate() {
                v.push((format!("base{i}.sstk"), b.to_bytes()?));
            }
            v.push(("meta.sstk".into(), s.meta.to_bytes()?));
            v
        }
        TrainedModel::Dense { net, .. } => vec![("net.sstk".into(), net.to_bytes()?)],
        TrainedModel::Lstm { net, .. } => vec![("lstm.sstk".into(), encode(&net.to_records())?)],
    })
}

impl ModelBundle {
    pub fn new(model: TrainedModel, scaler: Scaler, decimation: Decimation) -> Result<Self> {
        let weight_entries = weight_entries(&model)?.into_iter().map(|(n, _)| n).collect();
        Ok(Self {
            manifest: BundleManifest {
                format_version: 1,
                kind: model.kind(),
                class_mode: model.class_mode(),
                decimation,
                feature_map_version: FEATURE_MAP_VERSION,
                feature_names: FEATURE_MAP.iter().map(|(n, _)| n.to_string()).collect(),
                param_count: model.param_count(),
                scaler,
                weight_entries,
            },
            model,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = vec![(
            MANIFEST_ENTRY.to_string(),
            serde_json::to_vec_pretty(&self.manifest)?,
        )];
        entries.extend(weight_entries(&self.model)?);
        encode_entries(&entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = decode_entries(bytes)?;
        let get = |name: &str| -> Result<&[u8]> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d.as_slice())
                .ok_or_else(|| Error::BadModel(format!("bundle lacks {name}")))
        };
        let manifest: BundleManifest = serde_json::from_slice(get(MANIFEST_ENTRY)?)?;
        if manifest.feature_map_version != FEATURE_MAP_VERSION {
            return Err(Error::BadModel(format!(
                "feature map version {} is not supported",
                manifest.feature_map_version
            )));
        }
        let mode = manifest.class_mode;
        let model = match manifest.kind {
            ModelKind::Stacking => {
                let n_bases = manifest.weight_entries.iter().filter(|n| n.starts_with("base")).count();
                let bases = (0..n_bases)
                    .map(|i| DenseNet::from_bytes(get(&format!("base{i}.sstk"))?))
                    .collect::<Result<Vec<_>>>()?;
                let meta = DenseNet::from_bytes(get("meta.sstk")?)?;
                TrainedModel::Stack(StackModel::new(bases, meta, mode)?)
            }
            kind @ (ModelKind::AnnBig | ModelKind::BaseAnn) => TrainedModel::Dense {
                kind,
                net: DenseNet::from_bytes(get("net.sstk")?)?,
                class_mode: mode,
            },
            ModelKind::Lstm => TrainedModel::Lstm {
                net: LstmNet::from_records(&decode(get("lstm.sstk")?)?)?,
                class_mode: mode,
            },
        };
        if model.param_count() != manifest.param_count {
            return Err(Error::TopologyMismatch(format!(
                "manifest lists {} parameters, weights hold {}",
                manifest.param_count,
                model.param_count()
            )));
        }
        Ok(Self { manifest, model })
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bundle.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ScalingMode, FEATURE_DIM};
    use crate::stacking::StackConfig;

    fn scaler() -> Scaler {
        let rows: Vec<[f64; FEATURE_DIM]> = (0..6)
            .map(|i| std::array::from_fn(|j| (i * (j + 1)) as f64 + (j as f64).sin()))
            .collect();
        let subjects = ["a", "a", "a", "b", "b", "b"];
        Scaler::fit(&rows, &subjects, ScalingMode::PerSubject).unwrap()
    }

    #[test]
    fn every_kind_round_trips() {
        let models = [
            TrainedModel::Stack(StackModel::untrained(&StackConfig::default(), ClassMode::Phase3, 3).unwrap()),
            TrainedModel::Dense {
                kind: ModelKind::AnnBig,
                net: crate::baselines::build_ann_big(1).unwrap(),
                class_mode: ClassMode::Wrn3,
            },
            TrainedModel::Lstm {
                net: LstmNet::reference(2).unwrap(),
                class_mode: ClassMode::Phase3,
            },
        ];
        for m in models {
            let mut b = ModelBundle::new(m, scaler(), Decimation::PerSecondMean).unwrap();
            // Dropout is not stored.
            if let TrainedModel::Dense { net, .. } = &mut b.model {
                net.dropout_rate = 0.0;
            }
            if let TrainedModel::Stack(s) = &mut b.model {
                s.bases.iter_mut().for_each(|n| n.dropout_rate = 0.0);
            }
            let back = ModelBundle::from_bytes(&b.to_bytes().unwrap()).unwrap();
            assert_eq!(back, b);
        }
    }

    #[test]
    fn corrupt_bundles() {
        let b = ModelBundle::new(
            TrainedModel::Stack(StackModel::untrained(&StackConfig::default(), ClassMode::Phase3, 0).unwrap()),
            scaler(),
            Decimation::Native,
        )
        .unwrap();
        let mut bytes = b.to_bytes().unwrap();
        assert!(matches!(ModelBundle::from_bytes(&bytes[..bytes.len() - 2]), Err(Error::ChecksumMismatch)));
        bytes[0] = b'Q';
        assert!(matches!(ModelBundle::from_bytes(&bytes), Err(Error::BadMagic)));
    }
}
