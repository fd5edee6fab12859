//! Search configuration files (TOML).
//!
//! Every key is optional; missing keys fall back to the selected profile.
//!
//! ```toml
//! profile = "toy"            # "default" (full scale) or "toy" (desk scale)
//!
//! [search]
//! seed = 0
//! iterations = 2000          # T
//! population = 32            # N
//! max_depth = 128            # L, main-path conv layers
//! fine_keep = 10             # survivors of the cull at T/2
//! seed_population = false   # pre-fill the population with mutants
//! block_types = ["ResBlock"] # types coarse mutation may switch to
//! batch = 1                  # mutants per step; defaults to --jobs
//!
//! [budget]                   # at most one of flops / flops_factor / flops_like
//! flops = 2_000_000_000      # multiply-accumulates at budget.resolution
//! flops_factor = 2.0         # multiple of the initial architecture's FLOPs
//! flops_like = "resnet50"    # FLOPs of a reference backbone
//! params = 25_000_000        # optional; params_factor works likewise
//! resolution = [800, 1333]   # height, width; a single integer means square
//!
//! [score]
//! resolution = 64
//! alpha = [0, 0, 1, 1, 6]
//! repeats = 1
//!
//! [initial]                  # at most one of arch / builtin
//! arch = "initial.json"      # relative to this file
//! builtin = "initial-quarter"
//!
//! [output]
//! dir = "runs/toy"           # relative to this file
//! ```

use crate::format::{self, FormatError};
use entropynas_core::cost::cost_unchecked;
use entropynas_core::{zoo, ArchitectureSpec, BlockType, MsepWeights, Resolution, SearchConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("initial architecture {path}: {source}")]
    Arch { path: String, source: FormatError },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Default,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ResolutionValue {
    Square(usize),
    Rect([usize; 2]),
}

impl From<ResolutionValue> for Resolution {
    fn from(v: ResolutionValue) -> Self {
        match v {
            ResolutionValue::Square(s) => Resolution::square(s),
            ResolutionValue::Rect([h, w]) => Resolution::new(h, w),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: Option<Profile>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub population: Option<usize>,
    pub max_depth: Option<usize>,
    pub fine_keep: Option<usize>,
    pub seed_population: Option<bool>,
    pub block_types: Option<Vec<String>>,
    pub batch: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub flops: Option<u64>,
    pub flops_factor: Option<f64>,
    pub flops_like: Option<String>,
    pub params: Option<u64>,
    pub params_factor: Option<f64>,
    pub resolution: Option<ResolutionValue>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    pub resolution: Option<usize>,
    pub alpha: Option<[f64; 5]>,
    pub repeats: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub arch: Option<PathBuf>,
    pub builtin: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// How a budget is derived once the initial architecture is known.
#[derive(Debug, Clone, PartialEq)]
pub enum Budget {
    Absolute(u64),
    /// Multiple of the initial architecture's cost.
    Factor(f64),
    /// Cost of a reference backbone.
    Like(String),
}

/// Every knob of a run before budgets are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub profile: Profile,
    pub seed: u64,
    pub iterations: usize,
    pub population: usize,
    pub max_depth: usize,
    pub fine_keep: usize,
    pub seed_population: bool,
    pub block_types: Vec<BlockType>,
    pub batch: Option<usize>,
    pub flops: Budget,
    pub params: Option<Budget>,
    pub budget_resolution: Resolution,
    pub score_resolution: usize,
    pub alpha: [f64; 5],
    pub repeats: usize,
    pub initial: ArchitectureSpec,
    pub output_dir: Option<PathBuf>,
}

impl Settings {
    pub fn profile(profile: Profile) -> Self {
        let (base, flops) = match profile {
            Profile::Default => (SearchConfig::default(), Budget::Like("resnet50".into())),
            Profile::Toy => (SearchConfig::toy(), Budget::Factor(2.0)),
        };
        Settings {
            profile,
            seed: base.seed,
            iterations: base.iterations,
            population: base.population_size,
            max_depth: base.max_depth,
            fine_keep: base.fine_keep,
            seed_population: base.seed_population,
            block_types: base.block_types,
            batch: None,
            flops,
            params: None,
            budget_resolution: base.budget_resolution,
            score_resolution: base.resolution,
            alpha: base.alpha.values(),
            repeats: base.repeats,
            initial: base.initial_arch,
            output_dir: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let file: ConfigFile =
            toml::from_str(&text).map_err(|source| ConfigError::Toml { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Settings::from_file(file, base)
    }

    /// Applies a parsed file on top of its profile; paths resolve against `base`.
    pub fn from_file(file: ConfigFile, base: &Path) -> Result<Self, ConfigError> {
        let mut s = Settings::profile(file.profile.unwrap_or_default());
        let search = file.search;
        set(&mut s.seed, search.seed);
        set(&mut s.iterations, search.iterations);
        set(&mut s.population, search.population);
        set(&mut s.max_depth, search.max_depth);
        set(&mut s.fine_keep, search.fine_keep);
        set(&mut s.seed_population, search.seed_population);
        if let Some(names) = search.block_types {
            s.block_types = names
                .iter()
                .map(|n| BlockType::from_name(n).ok_or_else(|| invalid(format!("unknown block type {n:?}"))))
                .collect::<Result<_, _>>()?;
        }
        s.batch = search.batch.or(s.batch);

        let b = file.budget;
        match (b.flops, b.flops_factor, b.flops_like) {
            (None, None, None) => {}
            (Some(v), None, None) => s.flops = Budget::Absolute(v),
            (None, Some(f), None) => s.flops = Budget::Factor(f),
            (None, None, Some(name)) => s.flops = Budget::Like(name),
            _ => return Err(invalid("budget: give at most one of flops, flops_factor, flops_like")),
        }
        match (b.params, b.params_factor) {
            (None, None) => {}
            (Some(v), None) => s.params = Some(Budget::Absolute(v)),
            (None, Some(f)) => s.params = Some(Budget::Factor(f)),
            _ => return Err(invalid("budget: give at most one of params, params_factor")),
        }
        if let Some(r) = b.resolution {
            s.budget_resolution = r.into();
        }

        set(&mut s.score_resolution, file.score.resolution);
        set(&mut s.alpha, file.score.alpha);
        set(&mut s.repeats, file.score.repeats);

        match (file.initial.arch, file.initial.builtin) {
            (None, None) => {}
            (Some(path), None) => {
                let path = base.join(path);
                s.initial = format::read(&path)
                    .map_err(|source| ConfigError::Arch { path: path.display().to_string(), source })?;
            }
            (None, Some(name)) => s.initial = builtin(&name)?,
            _ => return Err(invalid("initial: give at most one of arch, builtin")),
        }
        s.output_dir = file.output.dir.map(|d| base.join(d));
        Ok(s)
    }

    /// Resolves budgets and checks every knob. `jobs` sets the batch size
    /// unless the configuration pins one.
    pub fn to_search_config(&self, jobs: usize) -> Result<SearchConfig, ConfigError> {
        let alpha = MsepWeights::new(self.alpha).map_err(|e| invalid(e.to_string()))?;
        self.initial.validate().map_err(|e| invalid(format!("initial architecture: {e}")))?;
        let initial_cost = cost_unchecked(&self.initial, self.budget_resolution);
        let resolve = |budget: &Budget, initial: u64, pick: fn(&ArchitectureSpec, Resolution) -> u64| {
            Ok::<u64, ConfigError>(match budget {
                Budget::Absolute(v) => *v,
                Budget::Factor(f) if f.is_finite() && *f > 0.0 => (initial as f64 * f).floor() as u64,
                Budget::Factor(f) => return Err(invalid(format!("budget factor {f} must be positive"))),
                Budget::Like(name) => pick(&builtin(name)?, self.budget_resolution),
            })
        };
        let flops_budget = resolve(&self.flops, initial_cost.flops, |a, r| cost_unchecked(a, r).flops)?;
        let params_budget = match &self.params {
            None => None,
            Some(b) => Some(resolve(b, initial_cost.params, |a, r| cost_unchecked(a, r).params)?),
        };
        let config = SearchConfig {
            flops_budget,
            params_budget,
            budget_resolution: self.budget_resolution,
            max_depth: self.max_depth,
            iterations: self.iterations,
            population_size: self.population,
            alpha,
            resolution: self.score_resolution,
            repeats: self.repeats,
            seed: self.seed,
            initial_arch: self.initial.clone(),
            block_types: self.block_types.clone(),
            seed_population: self.seed_population,
            fine_keep: self.fine_keep,
            batch_size: self.batch.unwrap_or(jobs.max(1)),
        };
        config.check().map_err(|e| invalid(e.to_string()))?;
        Ok(config)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn builtin(name: &str) -> Result<ArchitectureSpec, ConfigError> {
    zoo::by_name(name).ok_or_else(|| invalid(format!("unknown builtin architecture {name:?} (known: {})", zoo::NAMES.join(", "))))
}

/// Parses `a1,a2,a3,a4,a5`.
pub fn parse_alpha(text: &str) -> Result<[f64; 5], String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let alpha: [f64; 5] = values.try_into().map_err(|v: Vec<f64>| format!("expected 5 weights, got {}", v.len()))?;
    MsepWeights::new(alpha).map_err(|e| e.to_string())?;
    Ok(alpha)
}

/// Parses `WxH` (as printed by [`Resolution`]) or a single side length.
pub fn parse_resolution(text: &str) -> Result<Resolution, String> {
    let side = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad size {v:?}"));
    match text.split_once(['x', 'X']) {
        Some((w, h)) => Ok(Resolution::new(side(h)?, side(w)?)),
        None => side(text).map(Resolution::square),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_str(text: &str) -> Result<Settings, ConfigError> {
        Settings::from_file(toml::from_str(text).unwrap(), Path::new("/cfg"))
    }

    #[test]
    fn profiles_carry_their_defaults() {
        let full = Settings::profile(Profile::Default).to_search_config(1).unwrap();
        assert_eq!(full, SearchConfig::default());
        let toy = Settings::profile(Profile::Toy).to_search_config(1).unwrap();
        assert_eq!(toy, SearchConfig::toy());
        assert_eq!((full.population_size, full.iterations, full.resolution), (256, 96_000, 384));
    }

    #[test]
    fn file_overrides_profile() {
        let s = from_str(
            "profile = \"toy\"\n[search]\nseed = 9\niterations = 10\nblock_types = [\"ResBlock\", \"Mobile\"]\n\
             [budget]\nflops_factor = 3.0\nresolution = 128\n[score]\nalpha = [0, 0, 0, 0, 1]\n\
             [output]\ndir = \"out\"\n",
        )
        .unwrap();
        let c = s.to_search_config(1).unwrap();
        assert_eq!((c.seed, c.iterations, c.population_size), (9, 10, 32));
        assert_eq!(c.block_types, [BlockType::ResBlock, BlockType::Mobile]);
        let initial = cost_unchecked(&c.initial_arch, Resolution::square(128)).flops;
        assert_eq!(c.flops_budget, 3 * initial);
        assert_eq!(c.alpha, MsepWeights::single_scale());
        assert_eq!(s.output_dir.as_deref(), Some(Path::new("/cfg/out")));
    }

    #[test]
    fn budget_forms_are_exclusive() {
        assert!(from_str("[budget]\nflops = 5\nflops_factor = 2.0\n").is_err());
        let s = from_str("[budget]\nflops_like = \"searched-s\"\nparams = 7\n").unwrap();
        assert_eq!(s.flops, Budget::Like("searched-s".into()));
        assert!(from_str("[budget]\nflops_like = \"vgg\"\n").unwrap().to_search_config(1).is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(toml::from_str::<ConfigFile>("[search]\npopulation_size = 3\n").is_err());
        assert!(toml::from_str::<ConfigFile>("profile = \"huge\"\n").is_err());
    }

    #[test]
    fn bad_values_are_reported() {
        let err = from_str("[score]\nresolution = 48\n").unwrap().to_search_config(1).unwrap_err();
        assert!(err.to_string().contains("multiple of 32"), "{err}");
        assert!(from_str("[search]\nblock_types = [\"Dense\"]\n").is_err());
        assert!(from_str("[initial]\nbuiltin = \"initial-quarter\"\n").is_ok());
    }

    #[test]
    fn jobs_set_batch_unless_pinned() {
        let s = Settings::profile(Profile::Toy);
        assert_eq!(s.to_search_config(4).unwrap().batch_size, 4);
        let pinned = Settings { batch: Some(1), ..s };
        assert_eq!(pinned.to_search_config(4).unwrap().batch_size, 1);
    }

    #[test]
    fn alpha_and_resolution_flags() {
        assert_eq!(parse_alpha("0,0,1,1,6").unwrap(), [0.0, 0.0, 1.0, 1.0, 6.0]);
        assert!(parse_alpha("1,2").is_err());
        assert!(parse_alpha("0,0,0,0,0").is_err());
        assert_eq!(parse_resolution("1333x800").unwrap(), Resolution::new(800, 1333));
        assert_eq!(parse_resolution("224").unwrap(), Resolution::square(224));
        assert!(parse_resolution("0").is_err());
    }
}
