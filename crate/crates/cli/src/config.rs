//! Resolution of training settings: profile, then `--config` file, then flags.

use std::collections::BTreeMap;
use std::path::Path;

use n2n_core::{ArchDescriptor, NoiseModel, SamplerKind, TrainConfig};

use crate::args::{Profile, TrainOpts};
use crate::{CliError, CliResult};

/// A training configuration plus the architecture it is checked against.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub profile: Profile,
    pub train: TrainConfig,
    pub depth: usize,
    pub width: usize,
    pub tail: usize,
}

impl RunSettings {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Default => Self {
                profile,
                train: TrainConfig::default(),
                depth: 2,
                width: 48,
                tail: 3,
            },
            Profile::Desk => {
                let arch = ArchDescriptor::desk(1);
                Self {
                    profile,
                    train: TrainConfig::desk(),
                    depth: arch.depth,
                    width: arch.base_width,
                    tail: arch.tail_1x1,
                }
            }
        }
    }

    pub fn arch(&self, channels: usize) -> ArchDescriptor {
        ArchDescriptor {
            input_channels: channels,
            depth: self.depth,
            base_width: self.width,
            tail_1x1: self.tail,
        }
    }

    /// Sets one value by its key (`-` and `_` are interchangeable).
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
            value
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
        }
        let t = &mut self.train;
        match key.as_str() {
            "gamma" => t.gamma = parse(&key, value)?,
            "gamma_ramp_epochs" => t.gamma_ramp_epochs = parse(&key, value)?,
            "epochs" => t.epochs = parse(&key, value)?,
            "batch_size" => t.batch_size = parse(&key, value)?,
            "crop" => t.crop = parse(&key, value)?,
            "lr" => t.lr = parse(&key, value)?,
            "lr_decay_every" => t.lr_decay_every = parse(&key, value)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(&key, value)?,
            "seed" => t.seed = parse(&key, value)?,
            "noise" => t.noise = value.parse::<NoiseModel>().map_err(|e| CliError::Usage(e.to_string()))?,
            "sampler" => {
                t.sampler_kind = value.parse::<SamplerKind>().map_err(|e| CliError::Usage(e.to_string()))?
            }
            "k" => t.k = parse(&key, value)?,
            "depth" => self.depth = parse(&key, value)?,
            "width" => self.width = parse(&key, value)?,
            "tail" => self.tail = parse(&key, value)?,
            _ => return Err(CliError::Usage(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Every setting as text, in the form accepted by `--config`.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let profile = match self.profile {
            Profile::Default => "default",
            Profile::Desk => "desk",
        };
        [
            ("profile", profile.to_string()),
            ("gamma", t.gamma.to_string()),
            ("gamma_ramp_epochs", t.gamma_ramp_epochs.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("crop", t.crop.to_string()),
            ("lr", t.lr.to_string()),
            ("lr_decay_every", t.lr_decay_every.to_string()),
            ("lr_decay_factor", t.lr_decay_factor.to_string()),
            ("seed", t.seed.to_string()),
            ("noise", t.noise.to_string()),
            ("sampler", t.sampler_kind.to_string()),
            ("k", t.k.to_string()),
            ("depth", self.depth.to_string()),
            ("width", self.width.to_string()),
            ("tail", self.tail.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn profile_from_str(s: &str) -> CliResult<Profile> {
    match s.trim() {
        "default" => Ok(Profile::Default),
        "desk" => Ok(Profile::Desk),
        other => Err(CliError::Usage(format!("unknown profile {other:?}; expected default or desk"))),
    }
}

fn flag_pairs(opts: &TrainOpts) -> Vec<(&'static str, String)> {
    let mut v = Vec::new();
    macro_rules! push {
        ($($field:ident),*) => {
            $(if let Some(x) = &opts.$field {
                v.push((stringify!($field), x.to_string()));
            })*
        };
    }
    push!(
        gamma,
        gamma_ramp_epochs,
        epochs,
        batch_size,
        crop,
        lr,
        lr_decay_every,
        lr_decay_factor,
        seed,
        noise,
        sampler,
        k,
        depth,
        width,
        tail
    );
    v
}

/// Builds the settings for a run: the profile (flag, else file, else
/// `default`), overridden by the file, overridden by flags.
pub fn resolve(opts: &TrainOpts) -> CliResult<RunSettings> {
    let file = match &opts.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    let profile = match opts.profile {
        Some(p) => p,
        None => match file.iter().rev().find(|(k, _)| k == "profile") {
            Some((_, v)) => profile_from_str(v)?,
            None => Profile::Default,
        },
    };
    let mut settings = RunSettings::for_profile(profile);
    for (k, v) in file.iter().filter(|(k, _)| k != "profile") {
        settings.set(k, v)?;
    }
    for (k, v) in flag_pairs(opts) {
        settings.set(k, &v)?;
    }
    Ok(settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_expands() {
        let s = resolve(&TrainOpts {
            profile: Some(Profile::Desk),
            ..TrainOpts::default()
        })
        .unwrap();
        assert_eq!((s.train.crop, s.width, s.train.epochs), (64, 24, 20));
        assert_eq!(s.depth, 2);
        assert_eq!(s.train.gamma, 2.0);
        assert_eq!(s.train.batch_size, 4);
    }

    #[test]
    fn flags_override_file_override_profile() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nprofile = desk\ngamma = 8\nbatch-size = 2\n\nnoise = poisson30\n").unwrap();
        let s = resolve(&TrainOpts {
            config: Some(path),
            gamma: Some(0.5),
            ..TrainOpts::default()
        })
        .unwrap();
        assert_eq!(s.profile, Profile::Desk);
        assert_eq!(s.train.gamma, 0.5);
        assert_eq!(s.train.batch_size, 2);
        assert_eq!(s.train.noise, NoiseModel::PoissonFixed { lambda: 30.0 });
        assert_eq!(s.train.crop, 64);
    }

    #[test]
    fn map_round_trips() {
        let mut s = RunSettings::for_profile(Profile::Desk);
        s.set("sampler", "fix-location").unwrap();
        s.set("lr", "0.000123").unwrap();
        let mut back = RunSettings::for_profile(Profile::Default);
        let map = s.to_map();
        back.profile = profile_from_str(&map["profile"]).unwrap();
        for (k, v) in map.iter().filter(|(k, _)| *k != "profile") {
            back.set(k, v).unwrap();
        }
        assert_eq!(back, s);
    }

    #[test]
    fn bad_settings_are_usage_errors() {
        let mut s = RunSettings::for_profile(Profile::Default);
        assert!(matches!(s.set("gama", "1"), Err(CliError::Usage(_))));
        assert!(matches!(s.set("epochs", "many"), Err(CliError::Usage(_))));
        assert!(matches!(s.set("noise", "pink"), Err(CliError::Usage(_))));
        assert!(parse_config_text("just words").is_err());
    }
}
