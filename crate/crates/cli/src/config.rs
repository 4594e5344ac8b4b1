//! Run configuration: a TOML file merged with command-line flags.
//!
//! Precedence, lowest first: built-in defaults, the selected preset, the
//! config file, command-line flags.

use std::path::{Path, PathBuf};

use glycontrol::fuzzy::SectorBounds;
use glycontrol::models::{BergmanParams, PlantModel, TolicParams};
use glycontrol::presets::{self, Preset};
use glycontrol::sim::SimConfig;
use nalgebra::DVector;
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "glycontrol-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Bergman,
    Tolic,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Bergman => "bergman",
            ModelName::Tolic => "tolic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SectorChoice {
    Derived,
    Printed,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub mu: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub eps_feas: Option<f64>,
    pub gamma_max: Option<f64>,
    pub sector: Option<SectorChoice>,
}

/// Contents of a config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelName>,
    pub preset: Option<String>,
    pub out_dir: Option<PathBuf>,
    /// Parameter overrides for the selected model.
    pub params: Option<toml::Table>,
    pub synthesis: SynthesisSection,
    /// Any [`SimConfig`] key.
    pub simulation: toml::Table,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flags shared by the subcommands that build a model and a controller.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct DesignFlags {
    /// Plant model.
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    /// Saturation preset (bergman: sat6, sat10, sat25; tolic: sat6, sat12, sat20).
    #[arg(long)]
    pub preset: Option<String>,
    /// Input-norm bound used in synthesis.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Strictness margin of the LMIs.
    #[arg(long)]
    pub eps_feas: Option<f64>,
    /// Initial state for the ellipsoid constraint, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Tolic premise bounds.
    #[arg(long, value_enum)]
    pub sector: Option<SectorChoice>,
}

/// Flags that override simulation settings.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SimFlags {
    /// Meal amplitude.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Upper pump bound.
    #[arg(long)]
    pub u_max: Option<f64>,
    /// Integration step, min.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Horizon, min.
    #[arg(long)]
    pub t_end: Option<f64>,
}

/// Fully resolved design settings.
#[derive(Debug, Clone)]
pub struct Design {
    pub plant: PlantModel,
    pub sector: Option<SectorBounds>,
    pub preset: Option<&'static Preset>,
    pub mu: f64,
    pub x0: Option<DVector<f64>>,
    pub eps_feas: Option<f64>,
    pub gamma_max: Option<f64>,
}

impl Design {
    /// Short name used in output file names.
    pub fn tag(&self) -> String {
        match self.preset {
            Some(p) => format!("{}_{}", self.plant.name(), p.name),
            None => format!("{}_mu{}", self.plant.name(), self.mu),
        }
    }
}

pub fn resolve_model(flag: Option<ModelName>, cfg: &RunConfig) -> Result<ModelName, CliError> {
    flag.or(cfg.model)
        .ok_or_else(|| CliError::Config("no model selected; pass --model or set `model` in the config".into()))
}

pub fn build_plant(model: ModelName, cfg: &RunConfig) -> Result<PlantModel, CliError> {
    let table = cfg.params.clone().unwrap_or_default();
    let bad = |e: toml::de::Error| CliError::Config(format!("params: {e}"));
    let plant = match model {
        ModelName::Bergman => PlantModel::Bergman(BergmanParams::deserialize(table).map_err(bad)?),
        ModelName::Tolic => PlantModel::Tolic(TolicParams::deserialize(table).map_err(bad)?),
    };
    plant
        .validate()
        .map_err(|e| CliError::Config(format!("params: {e}")))?;
    Ok(plant)
}

pub fn resolve_preset(model: ModelName, name: Option<&str>) -> Result<Option<&'static Preset>, CliError> {
    match name {
        None => Ok(None),
        Some(n) => presets::find(model.as_str(), n).map(Some).ok_or_else(|| {
            let known: Vec<_> = presets::for_model(model.as_str())
                .unwrap_or_default()
                .iter()
                .map(|p| p.name)
                .collect();
            CliError::Config(format!("unknown {} preset `{n}` (known: {})", model.as_str(), known.join(", ")))
        }),
    }
}

fn sector_bounds(choice: Option<SectorChoice>) -> Option<SectorBounds> {
    match choice {
        Some(SectorChoice::Printed) => Some(SectorBounds::PRINTED),
        _ => None,
    }
}

pub fn resolve_design(flags: &DesignFlags, cfg: &RunConfig) -> Result<Design, CliError> {
    let model = resolve_model(flags.model, cfg)?;
    let plant = build_plant(model, cfg)?;
    let preset = resolve_preset(model, flags.preset.as_deref().or(cfg.preset.as_deref()))?;
    let syn = &cfg.synthesis;
    let mu = flags
        .mu
        .or(syn.mu)
        .or(preset.map(|p| p.mu))
        .ok_or_else(|| CliError::Config("no input bound; pass --mu or --preset".into()))?;
    let x0 = flags.x0.clone().or_else(|| syn.x0.clone()).map(DVector::from_vec);
    if let Some(x0) = &x0 {
        if x0.len() != plant.dim() {
            return Err(CliError::Config(format!(
                "x0 has {} entries, the {} model has {} states",
                x0.len(),
                plant.name(),
                plant.dim()
            )));
        }
    }
    Ok(Design {
        plant,
        sector: sector_bounds(flags.sector.or(syn.sector)),
        preset,
        mu,
        x0,
        eps_feas: flags.eps_feas.or(syn.eps_feas),
        gamma_max: syn.gamma_max,
    })
}

/// Simulation settings: defaults, then the preset's pump bound, then the
/// config's `[simulation]` table, then flags.
pub fn resolve_sim(flags: &SimFlags, cfg: &RunConfig, preset: Option<&Preset>) -> Result<SimConfig, CliError> {
    let mut table = toml::Table::new();
    if let Some(p) = preset {
        table.insert("u_max".into(), p.u_max.into());
    }
    for (k, v) in &cfg.simulation {
        table.insert(k.clone(), v.clone());
    }
    for (k, v) in [("alpha", flags.alpha), ("u_max", flags.u_max), ("dt", flags.dt), ("t_end", flags.t_end)] {
        if let Some(v) = v {
            table.insert(k.into(), v.into());
        }
    }
    let sim = SimConfig::deserialize(table).map_err(|e| CliError::Config(format!("simulation: {e}")))?;
    sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(sim)
}

/// Output directory: flag or environment, then config, then the default.
pub fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beat_preset() {
        let cfg: RunConfig = toml::from_str(
            r#"
            model = "bergman"
            preset = "sat10"
            [synthesis]
            mu = 0.5
            [simulation]
            alpha = 2.0
            "#,
        )
        .unwrap();
        let d = resolve_design(&DesignFlags::default(), &cfg).unwrap();
        assert_eq!(d.mu, 0.5);
        let flags = DesignFlags { mu: Some(0.3), ..Default::default() };
        assert_eq!(resolve_design(&flags, &cfg).unwrap().mu, 0.3);

        let sim = resolve_sim(&SimFlags::default(), &cfg, d.preset).unwrap();
        assert_eq!((sim.alpha, sim.u_max), (2.0, 10.0));
        let sim = resolve_sim(&SimFlags { u_max: Some(7.0), ..Default::default() }, &cfg, d.preset).unwrap();
        assert_eq!(sim.u_max, 7.0);
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(toml::from_str::<RunConfig>("modle = \"bergman\"").is_err());
        let cfg = RunConfig { model: Some(ModelName::Tolic), ..Default::default() };
        let flags = DesignFlags { preset: Some("sat25".into()), ..Default::default() };
        assert!(matches!(resolve_design(&flags, &cfg), Err(CliError::Config(_))));
        let cfg: RunConfig = toml::from_str("[params]\nv9 = 1.0").unwrap();
        assert!(build_plant(ModelName::Bergman, &cfg).is_err());
    }

    #[test]
    fn param_overrides_apply() {
        let cfg: RunConfig = toml::from_str("[params]\ng_b = 90.0").unwrap();
        match build_plant(ModelName::Bergman, &cfg).unwrap() {
            PlantModel::Bergman(p) => assert_eq!(p.g_b, 90.0),
            PlantModel::Tolic(_) => unreachable!(),
        }
    }
}
