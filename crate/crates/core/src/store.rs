//! Persistence of preprocessed window datasets and the metadata shared with
//! checkpoints, on top of the array container.

use std::path::Path;

use crate::container::{read_container, write_container, ArrayData, ArrayMap, ContainerError, NamedArray};
use crate::dataio::ClassLabel;
use crate::dsp::{
    ChannelStats, PipelineConfig, PipelineOutput, PipelineReport, PipelineSeeds, SplitDataset, WindowOrigin,
    WindowSample,
};

fn meta(msg: impl Into<String>) -> ContainerError {
    ContainerError::Metadata(msg.into())
}

pub(crate) fn stats_arrays(stats: &ChannelStats) -> Vec<NamedArray> {
    let c = stats.mean.len();
    let mut both = stats.mean.clone();
    both.extend(&stats.std);
    vec![
        NamedArray::text("meta.stats.channels", &stats.channel_names.join("\n")),
        NamedArray {
            name: "meta.stats".into(),
            dims: vec![2, c],
            data: ArrayData::F64(both),
        },
    ]
}

pub(crate) fn stats_from(map: &ArrayMap) -> Result<Option<ChannelStats>, ContainerError> {
    if !map.contains("meta.stats") {
        return Ok(None);
    }
    let names: Vec<String> = map.text("meta.stats.channels")?.split('\n').map(String::from).collect();
    let (dims, v) = map.f64s("meta.stats")?;
    if dims != [2, names.len()] {
        return Err(meta(format!("stats dims {dims:?} disagree with {} channel names", names.len())));
    }
    let c = names.len();
    Ok(Some(ChannelStats {
        channel_names: names,
        mean: v[..c].to_vec(),
        std: v[c..].to_vec(),
    }))
}

pub(crate) fn pipeline_arrays(cfg: &PipelineConfig) -> Result<Vec<NamedArray>, ContainerError> {
    let text = toml::to_string(cfg).map_err(|e| meta(e.to_string()))?;
    let s = cfg.seeds;
    Ok(vec![
        NamedArray::text("meta.pipeline", &text),
        NamedArray {
            name: "meta.pipeline_seeds".into(),
            dims: vec![3],
            data: ArrayData::I64([s.balance, s.augment, s.split].iter().map(|&v| v as i64).collect()),
        },
    ])
}

pub(crate) fn pipeline_from(map: &ArrayMap) -> Result<Option<PipelineConfig>, ContainerError> {
    if !map.contains("meta.pipeline") {
        return Ok(None);
    }
    let mut cfg: PipelineConfig = toml::from_str(&map.text("meta.pipeline")?).map_err(|e| meta(e.to_string()))?;
    let (_, s) = map.i64s("meta.pipeline_seeds")?;
    if s.len() != 3 {
        return Err(meta("pipeline seeds must hold 3 values"));
    }
    cfg.seeds = PipelineSeeds {
        balance: s[0] as u64,
        augment: s[1] as u64,
        split: s[2] as u64,
    };
    Ok(Some(cfg))
}

/// A preprocessed dataset as written by [`save_prepared`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub split: SplitDataset,
    pub report: PipelineReport,
    pub stats: Option<ChannelStats>,
    pub config: PipelineConfig,
    pub channel_names: Vec<String>,
}

fn side_arrays(side: &str, samples: &[WindowSample], t: usize, c: usize) -> Result<Vec<NamedArray>, ContainerError> {
    let n = samples.len();
    let mut data = Vec::with_capacity(n * t * c);
    let mut origin = String::new();
    for s in samples {
        if (s.len, s.channels) != (t, c) {
            return Err(ContainerError::ShapeCorruption(format!(
                "{side} window {:?} is {}×{}, dataset is {t}×{c}",
                s.origin, s.len, s.channels
            )));
        }
        data.extend(&s.data);
        if s.origin.subject_id.contains(['\t', '\n']) || s.origin.run_id.contains(['\t', '\n']) {
            return Err(meta("recording ids may not contain tabs or newlines"));
        }
        origin.push_str(&format!("{}\t{}\t{}\n", s.origin.subject_id, s.origin.run_id, s.origin.window_index));
    }
    Ok(vec![
        NamedArray::new(format!("{side}.data"), vec![n, t, c], ArrayData::F64(data))?,
        NamedArray::new(
            format!("{side}.labels"),
            vec![n],
            ArrayData::U8(samples.iter().map(|s| s.label.index() as u8).collect()),
        )?,
        NamedArray::new(
            format!("{side}.augmented"),
            vec![n],
            ArrayData::U8(samples.iter().map(|s| s.augmented as u8).collect()),
        )?,
        NamedArray::text(format!("{side}.origin"), &origin),
    ])
}

fn side_from(map: &ArrayMap, side: &str, t: usize, c: usize) -> Result<Vec<WindowSample>, ContainerError> {
    let (dims, data) = map.f64s(&format!("{side}.data"))?;
    let n = dims.first().copied().unwrap_or(0);
    if dims != [n, t, c] {
        return Err(ContainerError::ShapeCorruption(format!("{side}.data dims {dims:?}, expected [N, {t}, {c}]")));
    }
    let (ld, labels) = map.u8s(&format!("{side}.labels"))?;
    let (ad, aug) = map.u8s(&format!("{side}.augmented"))?;
    let origin_text = map.text(&format!("{side}.origin"))?;
    let origins: Vec<&str> = origin_text.lines().collect();
    if ld != [n] || ad != [n] || origins.len() != n {
        return Err(ContainerError::ShapeCorruption(format!("{side}: per-window arrays disagree with {n} windows")));
    }
    (0..n)
        .map(|i| {
            let f: Vec<&str> = origins[i].split('\t').collect();
            let window_index = f.get(2).and_then(|v| v.parse().ok());
            let (Some(subject), Some(run), Some(window_index)) = (f.first(), f.get(1), window_index) else {
                return Err(meta(format!("{side}.origin line {}: malformed", i + 1)));
            };
            Ok(WindowSample {
                data: data[i * t * c..(i + 1) * t * c].to_vec(),
                len: t,
                channels: c,
                label: ClassLabel::from_index(labels[i] as usize)
                    .ok_or_else(|| meta(format!("{side}.labels[{i}] = {}", labels[i])))?,
                origin: WindowOrigin {
                    subject_id: subject.to_string(),
                    run_id: run.to_string(),
                    window_index,
                },
                augmented: match aug[i] {
                    0 => false,
                    1 => true,
                    v => return Err(meta(format!("{side}.augmented[{i}] = {v}"))),
                },
            })
        })
        .collect()
}

/// Writes the split windows (f64), the stage report, the pipeline
/// configuration with its seeds, and pooled statistics when present.
pub fn save_prepared(
    path: &Path,
    out: &PipelineOutput,
    config: &PipelineConfig,
    channel_names: &[String],
) -> Result<(), ContainerError> {
    let (t, c) = (config.window, channel_names.len());
    let mut arrays = vec![
        NamedArray::new(
            "meta.window_shape",
            vec![2],
            ArrayData::I64(vec![t as i64, c as i64]),
        )?,
        NamedArray::text("meta.channels", &channel_names.join("\n")),
        NamedArray::text("meta.report", &out.report.to_kv()),
        NamedArray::new("meta.split_seed", vec![1], ArrayData::I64(vec![out.split.seed as i64]))?,
        NamedArray::new("meta.test_fraction", vec![1], ArrayData::F64(vec![out.split.test_fraction]))?,
    ];
    arrays.extend(pipeline_arrays(config)?);
    if let Some(s) = &out.stats {
        arrays.extend(stats_arrays(s));
    }
    arrays.extend(side_arrays("train", &out.split.train, t, c)?);
    arrays.extend(side_arrays("test", &out.split.test, t, c)?);
    write_container(path, &arrays)
}

pub fn load_prepared(path: &Path) -> Result<PreparedDataset, ContainerError> {
    let map = ArrayMap::new(read_container(path)?);
    let (_, shape) = map.i64s("meta.window_shape")?;
    let [t, c] = <[i64; 2]>::try_from(shape).map_err(|_| meta("window shape must hold 2 values"))?;
    let (t, c) = (t as usize, c as usize);
    let channel_names: Vec<String> = map.text("meta.channels")?.split('\n').map(String::from).collect();
    if channel_names.len() != c {
        return Err(meta(format!("{} channel names for {c} channels", channel_names.len())));
    }
    let report = PipelineReport::from_kv(&map.text("meta.report")?).map_err(meta)?;
    let (_, seed) = map.i64s("meta.split_seed")?;
    let (_, fraction) = map.f64s("meta.test_fraction")?;
    let (&[seed], &[test_fraction]) = (seed, fraction) else {
        return Err(meta("split seed and test fraction must be single values"));
    };
    let config = pipeline_from(&map)?.ok_or(ContainerError::Missing("meta.pipeline".into()))?;
    Ok(PreparedDataset {
        split: SplitDataset {
            train: side_from(&map, "train", t, c)?,
            test: side_from(&map, "test", t, c)?,
            seed: seed as u64,
            test_fraction,
        },
        report,
        stats: stats_from(&map)?,
        config,
        channel_names,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{default_channels, synth_generate, SynthSpec};
    use crate::dsp::{run_pipeline, PipelineMode};

    #[test]
    fn prepared_round_trip_both_modes() {
        let (_, recs) = synth_generate(&SynthSpec { n_recordings: 10, duration_s: 2.0, ..SynthSpec::default() }, 1)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        for mode in [PipelineMode::LeakSafe, PipelineMode::PaperFaithful] {
            let cfg = PipelineConfig { mode, ..PipelineConfig::default() };
            let out = run_pipeline(&recs, &cfg).unwrap();
            let path = dir.path().join(format!("{mode}.bin"));
            save_prepared(&path, &out, &cfg, &default_channels()).unwrap();
            let back = load_prepared(&path).unwrap();
            assert_eq!(back.split, out.split);
            assert_eq!(back.report, out.report);
            assert_eq!(back.stats, out.stats);
            assert_eq!(back.config, cfg);
            assert_eq!(back.channel_names, default_channels());
        }
    }
}
