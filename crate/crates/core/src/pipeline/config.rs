use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::InputFormat;
use crate::encoder::TrainConfig;
use crate::enhance::{EnhanceConfig, Enhancement};
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_CUTOFFS, DEFAULT_GROUP_BOUNDARIES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Evaluate the pre-trained encoder on the observed graph.
    #[default]
    Baseline,
    EnhancedUi,
    GraphDa,
}

impl Variant {
    pub fn enhancement(self) -> Option<Enhancement> {
        match self {
            Variant::Baseline => None,
            Variant::EnhancedUi => Some(Enhancement::UserItem),
            Variant::GraphDa => Some(Enhancement::Full),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::EnhancedUi => "enhanced_ui",
            Variant::GraphDa => "graphda",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Variant::Baseline),
            "enhanced_ui" => Ok(Variant::EnhancedUi),
            "graphda" => Ok(Variant::GraphDa),
            other => Err(Error::InvalidArgument(format!(
                "variant must be baseline, enhanced_ui or graphda, got `{other}`"
            ))),
        }
    }
}

/// Value lists for a sweep. An empty list means "use the single configured
/// value".
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SweepGrids {
    pub items_per_user: Vec<usize>,
    pub users_per_item: Vec<usize>,
    pub users_per_user: Vec<usize>,
    pub items_per_item: Vec<usize>,
}

impl SweepGrids {
    pub fn is_empty(&self) -> bool {
        self.items_per_user.is_empty()
            && self.users_per_item.is_empty()
            && self.users_per_user.is_empty()
            && self.items_per_item.is_empty()
    }

    /// Cartesian product in grid order, the last parameter varying fastest.
    pub fn cells(&self, base: &EnhanceConfig) -> Vec<EnhanceConfig> {
        let or = |g: &Vec<usize>, v: usize| if g.is_empty() { vec![v] } else { g.clone() };
        let uk = or(&self.items_per_user, base.items_per_user);
        let ik = or(&self.users_per_item, base.users_per_item);
        let uuk = or(&self.users_per_user, base.users_per_user);
        let iik = or(&self.items_per_item, base.items_per_item);
        let mut out = Vec::with_capacity(uk.len() * ik.len() * uuk.len() * iik.len());
        for &a in &uk {
            for &b in &ik {
                for &c in &uuk {
                    for &d in &iik {
                        out.push(EnhanceConfig::new(a, b, c, d));
                    }
                }
            }
        }
        out
    }
}

/// Re-train settings that differ from the pre-train ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrainOverrides {
    pub learning_rate: Option<f64>,
    pub l2_weight: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Raw interaction file for the `prepare` stage.
    pub input: Option<PathBuf>,
    pub format: Option<InputFormat>,
    /// Existing split manifest; skips ingest when set.
    pub split: Option<PathBuf>,
    pub k_core: usize,
    /// Pre-train settings; the root seed lives here.
    pub train: TrainConfig,
    pub retrain: RetrainOverrides,
    pub enhance: EnhanceConfig,
    pub variant: Variant,
    pub output_dir: PathBuf,
    pub cutoffs: Vec<usize>,
    pub group_boundaries: Vec<usize>,
    pub grids: SweepGrids,
    /// Recompute stages even when their artifacts exist.
    pub force: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input: None,
            format: None,
            split: None,
            k_core: 5,
            train: TrainConfig::default(),
            retrain: RetrainOverrides::default(),
            enhance: EnhanceConfig::default(),
            variant: Variant::Baseline,
            output_dir: PathBuf::from("out"),
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            group_boundaries: DEFAULT_GROUP_BOUNDARIES.to_vec(),
            grids: SweepGrids::default(),
            force: false,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidArgument(format!("`{key}`: expected a boolean, got `{other}`"))),
    }
}

impl ExperimentConfig {
    /// Settings of the re-train stage: pre-train values with overrides and
    /// the seed after the root seed.
    pub fn retrain_config(&self) -> TrainConfig {
        let o = &self.retrain;
        TrainConfig {
            learning_rate: o.learning_rate.unwrap_or(self.train.learning_rate),
            l2_weight: o.l2_weight.unwrap_or(self.train.l2_weight),
            max_epochs: o.max_epochs.unwrap_or(self.train.max_epochs),
            patience: o.patience.unwrap_or(self.train.patience),
            seed: self.train.seed.wrapping_add(1),
            ..self.train.clone()
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "input" => self.input = Some(PathBuf::from(v)),
            "format" => self.format = Some(v.parse()?),
            "split" => self.split = Some(PathBuf::from(v)),
            "output" | "output_dir" => self.output_dir = PathBuf::from(v),
            "k_core" => self.k_core = parse_num(key, v)?,
            "variant" => self.variant = v.parse()?,
            "dim" => self.train.dim = parse_num(key, v)?,
            "lr" | "learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "l2" | "l2_weight" => self.train.l2_weight = parse_num(key, v)?,
            "layers" | "n_layers" => self.train.n_layers = parse_num(key, v)?,
            "epochs" | "max_epochs" => self.train.max_epochs = parse_num(key, v)?,
            "patience" => self.train.patience = parse_num(key, v)?,
            "batch_size" => self.train.batch_size = parse_num(key, v)?,
            "seed" => self.train.seed = parse_num(key, v)?,
            "init_std" => self.train.init_std = parse_num(key, v)?,
            "combine" => self.train.combine = v.parse()?,
            "select_cutoff" => self.train.select_cutoff = parse_num(key, v)?,
            "retrain_lr" => self.retrain.learning_rate = Some(parse_num(key, v)?),
            "retrain_l2" => self.retrain.l2_weight = Some(parse_num(key, v)?),
            "retrain_epochs" => self.retrain.max_epochs = Some(parse_num(key, v)?),
            "retrain_patience" => self.retrain.patience = Some(parse_num(key, v)?),
            "uk" | "items_per_user" => self.enhance.items_per_user = parse_num(key, v)?,
            "ik" | "users_per_item" => self.enhance.users_per_item = parse_num(key, v)?,
            "uuk" | "users_per_user" => self.enhance.users_per_user = parse_num(key, v)?,
            "iik" | "items_per_item" => self.enhance.items_per_item = parse_num(key, v)?,
            "uk_grid" => self.grids.items_per_user = parse_list(key, v)?,
            "ik_grid" => self.grids.users_per_item = parse_list(key, v)?,
            "uuk_grid" => self.grids.users_per_user = parse_list(key, v)?,
            "iik_grid" => self.grids.items_per_item = parse_list(key, v)?,
            "cutoffs" => self.cutoffs = parse_list(key, v)?,
            "group_boundaries" => self.group_boundaries = parse_list(key, v)?,
            "force" => self.force = parse_bool(key, v)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies line-oriented `key=value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(idx as u64 + 1, format!("expected key=value, got `{line}`")))?;
            self.set(k, v).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::parse(idx as u64 + 1, m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.retrain_config().validate()?;
        if self.input.is_none() && self.split.is_none() {
            return Err(Error::InvalidArgument("either `input` or `split` must be set".into()));
        }
        for p in self.input.iter().chain(&self.split) {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!("{} does not exist", p.display())));
            }
        }
        if self.k_core < 3 {
            return Err(Error::InvalidArgument(
                "k_core must be at least 3 for a leave-one-out split".into(),
            ));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::InvalidArgument("cutoffs must be non-empty and positive".into()));
        }
        if self.group_boundaries.is_empty() || self.group_boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "group boundaries must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_config_and_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("# demo\nvariant = graphda\nuk=5\nik_grid=0,3, 5\nseed=7\nretrain_lr=0.01 # faster\n")
            .unwrap();
        assert_eq!(cfg.variant, Variant::GraphDa);
        assert_eq!(cfg.enhance.items_per_user, 5);
        assert_eq!(cfg.grids.users_per_item, vec![0, 3, 5]);
        let re = cfg.retrain_config();
        assert_eq!(re.seed, 8);
        assert_eq!(re.learning_rate, 0.01);
        assert_eq!(re.dim, cfg.train.dim);
    }

    #[test]
    fn bad_keys_report_line() {
        let mut cfg = ExperimentConfig::default();
        let err = cfg.apply_text("uk=1\nwat=2\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        assert!(cfg.apply_text("dim=abc").is_err());
        assert!(cfg.apply_text("novalue").is_err());
    }

    #[test]
    fn grid_cells_fill_missing_axes() {
        let grids = SweepGrids {
            items_per_user: vec![0, 5],
            users_per_item: vec![1, 2],
            ..SweepGrids::default()
        };
        let cells = grids.cells(&EnhanceConfig::new(9, 9, 4, 6));
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1], EnhanceConfig::new(0, 2, 4, 6));
    }

    #[test]
    fn variant_names() {
        for v in [Variant::Baseline, Variant::EnhancedUi, Variant::GraphDa] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Enhanced-UI".parse::<Variant>().unwrap(), Variant::EnhancedUi);
    }
}
