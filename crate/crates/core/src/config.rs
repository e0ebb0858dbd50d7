//! Plain `key = value` configuration files.
//!
//! The same keys appear in the header of a run report, so a report can be
//! turned back into the configuration that produced it. Blank lines and
//! lines starting with `#` are ignored; unknown and repeated keys are errors.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::NoiseType;
use crate::error::{Error, Result};
use crate::mixmatch::SemiConfig;
use crate::pipeline::PipelineConfig;
use crate::select::Thresholds;

/// Ordered `key = value` pairs with consume-once lookup.
#[derive(Debug, Default, Clone)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::default();
        for (i, line) in text.lines().enumerate() {
            kv.push_line(line, i + 1)?;
        }
        Ok(kv)
    }

    pub fn push_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(());
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {lineno}"), "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::format(format!("line {lineno}"), "empty key"));
        }
        if self.entries.iter().any(|(k, _, _)| k == key) {
            return Err(Error::format(
                format!("line {lineno}"),
                format!("duplicate key `{key}`"),
            ));
        }
        self.entries
            .push((key.to_string(), value.trim().to_string(), lineno));
        Ok(())
    }

    pub fn take_opt(&mut self, key: &str) -> Option<(String, usize)> {
        let pos = self.entries.iter().position(|(k, _, _)| k == key)?;
        let (_, v, line) = self.entries.remove(pos);
        Some((v, line))
    }

    pub fn take(&mut self, key: &str) -> Result<String> {
        self.take_opt(key)
            .map(|(v, _)| v)
            .ok_or_else(|| Error::param(format!("missing required key `{key}`")))
    }

    pub fn take_parsed_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_opt(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                Error::format(format!("line {line}"), format!("invalid value `{v}` for `{key}`"))
            }),
        }
    }

    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take_parsed_opt(key)?
            .ok_or_else(|| Error::param(format!("missing required key `{key}`")))
    }

    pub fn take_list(&mut self, key: &str) -> Result<Vec<usize>> {
        parse_list(&self.take(key)?, key)
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((k, _, line)) => Err(Error::format(
                format!("line {line}"),
                format!("unknown key `{k}`"),
            )),
        }
    }
}

fn parse_list(v: &str, key: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::param(format!("`{key}` must be a comma-separated list of integers")))
}

/// Serializes every pipeline field under its configuration key.
pub fn pipeline_to_pairs(c: &PipelineConfig) -> Vec<(&'static str, String)> {
    let hidden: Vec<String> = c.hidden_dims.iter().map(|d| d.to_string()).collect();
    vec![
        ("seed", c.seed.to_string()),
        ("warmup_epochs", c.warmup_epochs.to_string()),
        ("proto_split_epochs", c.proto_split_epochs.to_string()),
        ("main_epochs", c.main_epochs.to_string()),
        ("alpha", c.thresholds.alpha().to_string()),
        ("beta", c.thresholds.beta().to_string()),
        ("hidden", hidden.join(",")),
        ("base_lr", c.base_lr.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("weight_decay", c.weight_decay.to_string()),
        ("k_aug", c.semi.k_aug.to_string()),
        ("temperature", c.semi.temperature.to_string()),
        ("mix_alpha", c.semi.mix_alpha.to_string()),
        ("lambda_u", c.semi.lambda_u.to_string()),
        ("aug_sigma", c.semi.aug_sigma.to_string()),
        ("eval_split", c.eval_split.to_string()),
    ]
}

/// Reads pipeline keys. The epoch counts, thresholds and seed are required;
/// the rest fall back to [`PipelineConfig::default`].
pub fn pipeline_from_pairs(kv: &mut KeyValues) -> Result<PipelineConfig> {
    let d = PipelineConfig::default();
    let ds = SemiConfig::default();
    let alpha: f64 = kv.take_parsed("alpha")?;
    let beta: f64 = kv.take_parsed("beta")?;
    let hidden = match kv.take_opt("hidden") {
        Some((v, _)) => parse_list(&v, "hidden")?,
        None => d.hidden_dims.clone(),
    };
    let config = PipelineConfig {
        seed: kv.take_parsed("seed")?,
        warmup_epochs: kv.take_parsed("warmup_epochs")?,
        proto_split_epochs: kv.take_parsed("proto_split_epochs")?,
        main_epochs: kv.take_parsed("main_epochs")?,
        thresholds: Thresholds::new(alpha, beta)?,
        hidden_dims: hidden,
        base_lr: kv.take_parsed_opt("base_lr")?.unwrap_or(d.base_lr),
        batch_size: kv.take_parsed_opt("batch_size")?.unwrap_or(d.batch_size),
        weight_decay: kv.take_parsed_opt("weight_decay")?.unwrap_or(d.weight_decay),
        semi: SemiConfig {
            k_aug: kv.take_parsed_opt("k_aug")?.unwrap_or(ds.k_aug),
            temperature: kv.take_parsed_opt("temperature")?.unwrap_or(ds.temperature),
            mix_alpha: kv.take_parsed_opt("mix_alpha")?.unwrap_or(ds.mix_alpha),
            lambda_u: kv.take_parsed_opt("lambda_u")?.unwrap_or(ds.lambda_u),
            aug_sigma: kv.take_parsed_opt("aug_sigma")?.unwrap_or(ds.aug_sigma),
        },
        eval_split: kv.take_parsed_opt("eval_split")?.unwrap_or(d.eval_split),
    };
    config.validate()?;
    Ok(config)
}

/// Label corruption applied to a clean training file before a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseOptions {
    pub noise_type: NoiseType,
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub noise: Option<NoiseOptions>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let pipeline = pipeline_from_pairs(&mut kv)?;
        let noise_type: NoiseType = kv.take_parsed_opt("noise")?.unwrap_or(NoiseType::None);
        let rate: Option<f64> = kv.take_parsed_opt("noise_rate")?;
        let seed: Option<u64> = kv.take_parsed_opt("noise_seed")?;
        kv.finish()?;
        let noise = match (noise_type, rate) {
            (NoiseType::None, None) => None,
            (NoiseType::None, Some(_)) => {
                return Err(Error::param("`noise_rate` given without `noise`"))
            }
            (t, rate) => {
                let rate = rate.ok_or_else(|| Error::param("`noise` requires `noise_rate`"))?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::param("`noise_rate` must lie in [0, 1]"));
                }
                Some(NoiseOptions {
                    noise_type: t,
                    rate,
                    seed: seed.unwrap_or(pipeline.seed),
                })
            }
        };
        Ok(Self { pipeline, noise })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
# benchmark
seed = 3
warmup_epochs = 5
proto_split_epochs = 1
main_epochs = 20
alpha = 0.95
beta = 0.9
";

    #[test]
    fn minimal_file_uses_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.pipeline.seed, 3);
        assert_eq!(c.pipeline.main_epochs, 20);
        assert_eq!(c.pipeline.hidden_dims, PipelineConfig::default().hidden_dims);
        assert!(c.noise.is_none());
    }

    #[test]
    fn missing_required_key() {
        let text = MINIMAL.replace("alpha = 0.95\n", "");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let err = RunConfig::parse(&format!("{MINIMAL}colour = blue\n")).unwrap_err();
        assert!(err.to_string().contains("colour"));
        assert!(RunConfig::parse(&format!("{MINIMAL}seed = 4\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}just words\n")).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse(&MINIMAL.replace("beta = 0.9", "beta = 0.99")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("warmup_epochs = 5", "warmup_epochs = 0")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("main_epochs = 20", "main_epochs = x")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}hidden = 8,0\n")).is_err());
    }

    #[test]
    fn noise_fields() {
        let c = RunConfig::parse(&format!("{MINIMAL}noise = factual\nnoise_rate = 0.3\n")).unwrap();
        assert_eq!(
            c.noise,
            Some(NoiseOptions {
                noise_type: NoiseType::Factual,
                rate: 0.3,
                seed: 3
            })
        );
        assert!(RunConfig::parse(&format!("{MINIMAL}noise = factual\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}noise_rate = 0.3\n")).is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let c = PipelineConfig {
            base_lr: 0.1 + 0.2,
            hidden_dims: vec![7, 5, 3],
            ..PipelineConfig::default()
        };
        let text: String = pipeline_to_pairs(&c)
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let mut kv = KeyValues::parse(&text).unwrap();
        assert_eq!(pipeline_from_pairs(&mut kv).unwrap(), c);
        kv.finish().unwrap();
    }
}
