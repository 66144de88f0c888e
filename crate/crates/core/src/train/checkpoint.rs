use std::path::Path;

use super::TrainError;
use crate::autodiff::{DType, Real, Tensor};
use crate::container::{read_container, write_container, ArrayData, ArrayMap, NamedArray};
use crate::dsp::{ChannelStats, PipelineConfig};
use crate::store::{pipeline_arrays, pipeline_from, stats_arrays, stats_from};
use crate::nn::{ArchConfig, ModelParams};

/// Everything inference needs: weights, the architecture they imply, and
/// the preprocessing settings and statistics the training data went
/// through.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub pipeline: Option<PipelineConfig>,
    pub stats: Option<ChannelStats>,
}

fn to_array<T: Real>(name: String, t: &Tensor<T>) -> NamedArray {
    let data = match T::DTYPE {
        DType::F32 => ArrayData::F32(t.data().iter().map(|v| v.to_f64_lossy() as f32).collect()),
        DType::F64 => ArrayData::F64(t.data().iter().map(|v| v.to_f64_lossy()).collect()),
    };
    NamedArray {
        name,
        dims: t.shape().to_vec(),
        data,
    }
}

/// Writes weights plus metadata atomically.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    params: &ModelParams<T>,
    pipeline: Option<&PipelineConfig>,
    stats: Option<&ChannelStats>,
) -> Result<(), TrainError> {
    let arch = toml::to_string(&params.arch).map_err(|e| TrainError::Metadata(e.to_string()))?;
    let mut arrays = vec![NamedArray::text("meta.arch", &arch)];
    if let Some(p) = pipeline {
        arrays.extend(pipeline_arrays(p)?);
    }
    if let Some(s) = stats {
        arrays.extend(stats_arrays(s));
    }
    arrays.extend(params.named_tensors().into_iter().map(|(n, t)| to_array(n, t)));
    write_container(path, &arrays)?;
    Ok(())
}

/// First layer at which two architectures disagree.
fn arch_difference(found: &ArchConfig, expected: &ArchConfig) -> Option<(String, String)> {
    if (found.input_features, found.seq_len) != (expected.input_features, expected.seq_len) {
        return Some((
            "input".into(),
            format!(
                "checkpoint expects {}×{} windows, wanted {}×{}",
                found.seq_len, found.input_features, expected.seq_len, expected.input_features
            ),
        ));
    }
    let n = found.gru_hidden.len().max(expected.gru_hidden.len());
    for i in 0..n {
        let (a, b) = (found.gru_hidden.get(i), expected.gru_hidden.get(i));
        if a != b {
            return Some((format!("bigru{}", i + 1), format!("checkpoint width {a:?}, expected {b:?}")));
        }
    }
    let (fd, ed) = (&found.dense_hidden, &expected.dense_hidden);
    for i in 0..fd.len().max(ed.len()) {
        let (a, b) = (fd.get(i), ed.get(i));
        if a != b {
            return Some((format!("dense{}", i + 1), format!("checkpoint width {a:?}, expected {b:?}")));
        }
    }
    if found.n_classes != expected.n_classes || found.head_input != expected.head_input {
        return Some((format!("dense{}", fd.len() + 1), "output layer differs".into()));
    }
    if found.dropout != expected.dropout {
        return Some(("dropout".into(), format!("{} vs {}", found.dropout, expected.dropout)));
    }
    None
}

/// Reads a checkpoint. With `expected` set, an architecture difference is
/// an error naming the first differing layer. Nothing is returned unless
/// every tensor is present with the declared shape and dtype.
pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<&ArchConfig>) -> Result<Checkpoint<T>, TrainError> {
    let map = ArrayMap::new(read_container(path)?);
    let arch: ArchConfig =
        toml::from_str(&map.text("meta.arch")?).map_err(|e| TrainError::Metadata(format!("arch: {e}")))?;
    if let Some(exp) = expected {
        if let Some((layer, detail)) = arch_difference(&arch, exp) {
            return Err(TrainError::ArchMismatch { layer, detail });
        }
    }
    let mut params = ModelParams::<T>::zeros(&arch)?;
    let names = params.names();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        let a = map.get(name)?;
        if a.dims != t.shape() {
            return Err(crate::container::ContainerError::ShapeCorruption(format!(
                "{name}: stored dims {:?}, architecture implies {:?}",
                a.dims,
                t.shape()
            ))
            .into());
        }
        match (&a.data, T::DTYPE) {
            (ArrayData::F32(v), DType::F32) => {
                for (d, &s) in t.data_mut().iter_mut().zip(v) {
                    *d = T::from_f64_lossy(s as f64);
                }
            }
            (ArrayData::F64(v), DType::F64) => {
                for (d, &s) in t.data_mut().iter_mut().zip(v) {
                    *d = T::from_f64_lossy(s);
                }
            }
            (other, want) => {
                return Err(TrainError::DtypeMismatch {
                    found: format!("tag {}", other.tag()),
                    expected: want.name().into(),
                })
            }
        }
    }
    if let Some(extra) = map.names().find(|n| !n.starts_with("meta.") && !names.iter().any(|m| m == n)) {
        return Err(TrainError::ArchMismatch {
            layer: extra.to_string(),
            detail: "checkpoint holds a tensor the architecture does not use".into(),
        });
    }
    Ok(Checkpoint {
        params,
        pipeline: pipeline_from(&map)?,
        stats: stats_from(&map)?,
    })
}
