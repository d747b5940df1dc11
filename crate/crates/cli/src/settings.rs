//! One flat `key = value` configuration file drives every subcommand; flags
//! then override individual entries. Model keys are delegated to
//! [`ModelConfig::apply_kv`], training and data keys are handled here.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use vibra_core::data::{FaultKind, FaultSpec};
use vibra_core::model::ModelConfig;
use vibra_core::train::TrainConfig;
use vibra_core::{Error, Real, Result};

/// Dataset-synthesis knobs (the `synth` command's half of the config file).
#[derive(Clone, Debug)]
pub struct DataSettings {
    pub per_class: usize,
    pub length: usize,
    pub sample_rate_hz: Real,
    pub snr_db: Option<Real>,
    pub split_ratio: Real,
    pub preset: String,
}

impl Default for DataSettings {
    fn default() -> DataSettings {
        DataSettings {
            per_class: 100,
            length: 2048,
            sample_rate_hz: 12000.0,
            snr_db: None,
            split_ratio: 0.8,
            preset: String::from("four-class"),
        }
    }
}

/// Effective configuration: defaults, overwritten by the file, overwritten
/// by flags. Remembers which keys were explicitly assigned so commands can
/// tell a deliberate choice from a default.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSettings,
    assigned: BTreeSet<String>,
}

impl Settings {
    pub fn load(config: Option<&Path>, extra: &[String]) -> Result<Settings> {
        let mut settings = Settings::default();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            for (idx, raw) in text.lines().enumerate() {
                let line = idx + 1;
                let trimmed = raw.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("expected `key = value`, got `{trimmed}`"),
                })?;
                settings.apply(line, key.trim(), value.trim())?;
            }
        }
        for pair in extra {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::config(format!("--set expects KEY=VALUE, got `{pair}`"))
            })?;
            settings.apply(0, key.trim(), value.trim())?;
        }
        Ok(settings)
    }

    /// Applies one assignment; `line` 0 marks flag-sourced values.
    pub fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.train.learning_rate = parse_value(line, key, value)?,
            "batch_size" => self.train.batch_size = parse_value(line, key, value)?,
            "epochs" => self.train.epochs = parse_value(line, key, value)?,
            "beta1" => self.train.beta1 = parse_value(line, key, value)?,
            "beta2" => self.train.beta2 = parse_value(line, key, value)?,
            "epsilon" => self.train.epsilon = parse_value(line, key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = parse_value(line, key, value)?,
            "seed" => self.train.seed = parse_value(line, key, value)?,
            "per_class" => self.data.per_class = parse_value(line, key, value)?,
            "length" => self.data.length = parse_value(line, key, value)?,
            "sample_rate_hz" => self.data.sample_rate_hz = parse_value(line, key, value)?,
            "snr_db" => {
                self.data.snr_db = match value {
                    "none" => None,
                    other => Some(parse_value(line, key, other)?),
                };
            }
            "split_ratio" => self.data.split_ratio = parse_value(line, key, value)?,
            "preset" => self.data.preset = value.to_string(),
            _ => self.model.apply_kv(line, key, value)?,
        }
        self.assigned.insert(key.to_string());
        Ok(())
    }

    /// Marks a key as explicitly assigned without going through the string
    /// parser (used by typed flag overrides).
    pub fn mark(&mut self, key: &str) {
        self.assigned.insert(key.to_string());
    }

    pub fn was_assigned(&self, key: &str) -> bool {
        self.assigned.contains(key)
    }

    /// The full effective configuration, flattened for the run manifest.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for line in self.model.to_kv_string().lines() {
            if let Some((key, value)) = line.split_once('=') {
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        map.insert("learning_rate".into(), self.train.learning_rate.to_string());
        map.insert("batch_size".into(), self.train.batch_size.to_string());
        map.insert("epochs".into(), self.train.epochs.to_string());
        map.insert("beta1".into(), self.train.beta1.to_string());
        map.insert("beta2".into(), self.train.beta2.to_string());
        map.insert("epsilon".into(), self.train.epsilon.to_string());
        map.insert(
            "checkpoint_every".into(),
            self.train.checkpoint_every.to_string(),
        );
        map.insert("seed".into(), self.train.seed.to_string());
        map.insert("per_class".into(), self.data.per_class.to_string());
        map.insert("length".into(), self.data.length.to_string());
        map.insert(
            "sample_rate_hz".into(),
            self.data.sample_rate_hz.to_string(),
        );
        map.insert(
            "snr_db".into(),
            self.data
                .snr_db
                .map_or_else(|| String::from("none"), |db| db.to_string()),
        );
        map.insert("split_ratio".into(), self.data.split_ratio.to_string());
        map.insert("preset".into(), self.data.preset.clone());
        map
    }

    /// Resolves the `preset` value into concrete fault specs: the built-in
    /// `four-class` set or a comma-separated list of fault kinds.
    pub fn fault_specs(&self) -> Result<Vec<FaultSpec>> {
        if self.data.preset == "four-class" {
            return Ok(FaultSpec::default_set());
        }
        let specs: Result<Vec<FaultSpec>> = self
            .data
            .preset
            .split(',')
            .map(|tag| {
                let kind = FaultKind::from_str(tag.trim())?;
                Ok(preset_for(kind))
            })
            .collect();
        let specs = specs.map_err(|e| {
            Error::config(format!(
                "preset `{}` is neither `four-class` nor a list of fault kinds: {e}",
                self.data.preset
            ))
        })?;
        if specs.is_empty() {
            return Err(Error::config("preset resolved to an empty class list"));
        }
        Ok(specs)
    }
}

fn preset_for(kind: FaultKind) -> FaultSpec {
    match kind {
        FaultKind::Normal => FaultSpec::normal(),
        FaultKind::OuterRace => FaultSpec::outer_race(),
        FaultKind::InnerRace => FaultSpec::inner_race(),
        FaultKind::GearChip => FaultSpec::gear_chip(),
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value `{value}` for `{key}`"),
    })
}

/// Ablation tags arrive hyphenated on the command line (`non-farel`) but the
/// model speaks underscores.
pub fn normalize_ablation(tag: &str) -> String {
    tag.replace('-', "_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use vibra_core::model::Ablation;

    #[test]
    fn file_then_flags_layer_correctly() -> Result<()> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# desk profile\nepochs = 12\ngamma = 0.3\nsnr_db = -6\npreset = normal,gear_chip\n",
        )
        .unwrap();
        let mut settings =
            Settings::load(Some(&path), &[String::from("epochs=20")])?;
        assert_eq!(settings.train.epochs, 20);
        assert_eq!(settings.model.gamma, 0.3);
        assert_eq!(settings.data.snr_db, Some(-6.0));
        assert!(settings.was_assigned("gamma"));
        assert!(!settings.was_assigned("batch_size"));
        assert_eq!(settings.fault_specs()?.len(), 2);

        settings.apply(0, "snr_db", "none")?;
        assert_eq!(settings.data.snr_db, None);
        settings.apply(0, "ablation", "non_farel")?;
        assert_eq!(settings.model.ablation, Ablation::NonFarel);
        Ok(())
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut settings = Settings::default();
        assert!(settings.apply(3, "no_such_key", "1").is_err());
        assert!(settings.apply(4, "epochs", "many").is_err());
        settings.data.preset = String::from("outer_race,bogus");
        assert!(settings.fault_specs().is_err());
    }

    #[test]
    fn resolved_map_round_trips_through_apply() -> Result<()> {
        let mut settings = Settings::default();
        settings.apply(1, "num_blocks", "2")?;
        settings.apply(2, "snr_db", "-4")?;
        let resolved = settings.resolved();
        let mut rebuilt = Settings::default();
        for (key, value) in &resolved {
            rebuilt.apply(0, key, value)?;
        }
        assert_eq!(rebuilt.resolved(), resolved);
        Ok(())
    }
}
