//! Experiment orchestration: configuration, dataset generation, training,
//! the physics-vs-neural comparison runs, metrics and export.

mod commands;
mod manifest;
mod metrics;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use commands::{cmd_export, cmd_gen_data, cmd_metrics, cmd_run, cmd_train, files};
pub use manifest::{config_hash, sha256_hex, FileDigest, Manifest};
pub use metrics::{
    error_histograms, percent_difference, plot_rows, region_groups, Channels, ErrorStats, HistogramBin,
    MetricsReport, PlotRow, SolveTimeStats, SolverStats, TimingReport, VariantMetrics, CHANNEL_NAMES,
    HISTOGRAM_WIDTHS, NON_CONVERGED_WARNING,
};

use crate::datagen::{
    compose_dataset, default_scenarios, label_with_observer, run_scenario, DatasetSample, ObserverConfig,
    ScenarioScript, ScenarioSetup,
};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::equilibrium::{build_reference, AxleTires, ReferenceConfig, ReferenceTrajectory};
use crate::mlp::{train, LossHistory, Mlp, MlpConfig, TrainConfig};
use crate::nmpc::{Controller, FrontTirePort, NeuralFront, NmpcConfig, PhysicsFront};
use crate::sim::{closed_loop_run, NoExcitation, Plant, PlantConfig, RunLimits, RunLog};
use crate::tire::PlantTireConfig;
use crate::{Error, Result};

/// Which front tire model the controller uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Physics,
    Neural,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Physics, Variant::Neural];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Physics => "physics",
            Variant::Neural => "neural",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}' (expected physics or neural)")))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TireSection {
    /// tires of the controller's prediction model and the reference
    pub nominal: AxleTires,
    /// ground-truth front tire with latent effects
    pub plant: PlantTireConfig,
}

/// Plant toggles. With `latent` off the plant equals the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub latent: bool,
    /// defaults to `latent`
    pub load_transfer: Option<bool>,
    pub initial_temperature: Option<f64>,
    pub sim_dt: f64,
    pub control_every: usize,
    pub spin_out_deg: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantConfig::default();
        Self {
            latent: true,
            load_transfer: None,
            initial_temperature: None,
            sim_dt: p.sim_dt,
            control_every: p.control_every,
            spin_out_deg: p.spin_out_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSection {
    /// `null` selects the built-in scenario mix
    pub scenarios: Option<Vec<ScenarioScript>>,
    pub observer: ObserverConfig,
    pub initiation_fraction: f64,
    /// dataset size; all available samples when absent
    pub total: Option<usize>,
}

impl Default for DatagenSection {
    fn default() -> Self {
        Self {
            scenarios: None,
            observer: ObserverConfig::default(),
            initiation_fraction: 0.04,
            total: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// limit on simulated time per run, s
    pub max_time: f64,
    /// write wall-clock solve times into run logs (makes them non-reproducible)
    pub log_solve_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            max_time: 180.0,
            log_solve_time: false,
        }
    }
}

/// The whole experiment as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vehicle: VehicleParams,
    pub tire: TireSection,
    pub plant: PlantSection,
    pub nmpc: NmpcConfig,
    pub reference: ReferenceConfig,
    pub datagen: DatagenSection,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub run: RunSection,
    pub seed: u64,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            tire: TireSection::default(),
            plant: PlantSection::default(),
            nmpc: NmpcConfig::default(),
            reference: ReferenceConfig::default(),
            datagen: DatagenSection::default(),
            mlp: MlpConfig::default(),
            train: TrainConfig::default(),
            run: RunSection::default(),
            seed: 0,
            out: "runs/default".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.tire.nominal.front.validate()?;
        self.tire.nominal.rear.validate()?;
        self.plant_config().validate()?;
        self.nmpc.validate()?;
        self.reference.bounds().validate()?;
        self.datagen.observer.validate()?;
        self.mlp.validate()?;
        if let Some(scripts) = &self.datagen.scenarios {
            scripts.iter().try_for_each(|s| s.validate())?;
        }
        let f = self.datagen.initiation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("datagen.initiation_fraction {f} must lie in (0, 1)")));
        }
        if !(self.run.max_time > 0.0) {
            return Err(Error::Config("run.max_time must be positive".into()));
        }
        Ok(())
    }

    pub fn plant_config(&self) -> PlantConfig {
        let p = &self.plant;
        let mut cfg = if p.latent {
            PlantConfig {
                front: self.tire.plant,
                rear: self.tire.nominal.rear,
                ..PlantConfig::default()
            }
        } else {
            PlantConfig::nominal(self.tire.nominal.front, self.tire.nominal.rear)
        };
        cfg.load_transfer = p.load_transfer.unwrap_or(p.latent);
        cfg.initial_temperature = p.initial_temperature;
        cfg.sim_dt = p.sim_dt;
        cfg.control_every = p.control_every;
        cfg.spin_out_deg = p.spin_out_deg;
        cfg
    }

    pub fn scenarios(&self) -> Vec<ScenarioScript> {
        self.datagen.scenarios.clone().unwrap_or_else(default_scenarios)
    }

    pub fn build_reference(&self) -> Result<ReferenceTrajectory> {
        build_reference(&self.reference, &self.vehicle, &self.tire.nominal)
    }
}

// Seed streams derived from the experiment seed, kept apart so changing one
// stage does not shift the random numbers of another.
const SCENARIO_STREAM: u64 = 0;
const OBSERVER_STREAM: u64 = 1 << 20;
const COMPOSE_STREAM: u64 = 2 << 20;
const TRAIN_STREAM: u64 = 3 << 20;

pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1 << 24).wrapping_add(SCENARIO_STREAM + index as u64)
}

pub fn observer_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1 << 24).wrapping_add(OBSERVER_STREAM + index as u64)
}

pub fn compose_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1 << 24).wrapping_add(COMPOSE_STREAM)
}

pub fn train_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1 << 24).wrapping_add(TRAIN_STREAM)
}

/// Runs every data-generation scenario on the plant with the physics
/// controller. Logs come back in scenario order whatever the thread count.
pub fn generate_logs(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunLog>> {
    let scripts = cfg.scenarios();
    let setup = ScenarioSetup {
        vehicle: cfg.vehicle,
        tires: cfg.tire.nominal,
        plant: cfg.plant_config(),
        nmpc: &cfg.nmpc,
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let per_worker = scripts.len().div_ceil(workers).max(1);
    let mut slots: Vec<Option<Result<RunLog>>> = (0..scripts.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(per_worker).enumerate() {
            let (setup, scripts) = (&setup, &scripts);
            let first = w * per_worker;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let i = first + k;
                    *slot = Some(run_scenario(&scripts[i], setup, scenario_seed(seed, i)));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every scenario slot is filled")).collect()
}

/// Observer-labeled samples from all logs, in log order.
pub fn label_logs(logs: &[RunLog], observer: &ObserverConfig, seed: u64) -> Result<Vec<DatasetSample>> {
    let mut pool = Vec::new();
    for (i, log) in logs.iter().enumerate() {
        pool.extend(label_with_observer(log, observer, observer_seed(seed, i))?);
    }
    Ok(pool)
}

/// Generated logs, labeled and composed to the configured initiation share.
pub fn generate_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<DatasetSample>, Vec<RunLog>)> {
    let logs = generate_logs(cfg, seed)?;
    let pool = label_logs(&logs, &cfg.datagen.observer, seed)?;
    let data = compose_dataset(&pool, cfg.datagen.initiation_fraction, cfg.datagen.total, compose_seed(seed))?;
    Ok((data, logs))
}

/// Trains on the dataset. `train.seed` is replaced by a seed derived from the
/// experiment seed.
pub fn train_network(cfg: &ExperimentConfig, data: &[DatasetSample], seed: u64) -> Result<(Mlp, LossHistory)> {
    let features: Vec<_> = data.iter().map(|s| s.features).collect();
    let labels: Vec<_> = data.iter().map(|s| s.fyf_observed).collect();
    let tc = TrainConfig {
        seed: train_seed(seed),
        ..cfg.train.clone()
    };
    train(&features, &labels, &cfg.mlp, &tc)
}

/// One closed-loop run along the full reference, starting on the straight at
/// the unbraked drift speed.
pub fn run_variant(
    cfg: &ExperimentConfig,
    reference: &ReferenceTrajectory,
    variant: Variant,
    network: Option<&Mlp>,
) -> Result<RunLog> {
    let front: Box<dyn FrontTirePort> = match (variant, network) {
        (Variant::Physics, _) => Box::new(PhysicsFront::new(cfg.tire.nominal.front, &cfg.vehicle)),
        (Variant::Neural, Some(mlp)) => Box::new(NeuralFront::new(mlp.clone(), &cfg.vehicle)),
        (Variant::Neural, None) => return Err(Error::MissingInput("trained weights for the neural variant".into())),
    };
    let mut controller = Controller::new(cfg.nmpc.clone(), cfg.vehicle, cfg.tire.nominal.rear, front)?;
    let x0 = VehicleState {
        v: reference.v_sol(),
        ..VehicleState::default()
    };
    let mut plant = Plant::new(cfg.plant_config(), cfg.vehicle, x0)?;
    let limits = RunLimits {
        s_end: reference.bounds.steady_end,
        max_time: cfg.run.max_time,
    };
    closed_loop_run(&mut plant, &mut controller, reference, limits, &mut NoExcitation)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_sections_and_bad_bounds() {
        assert!(ExperimentConfig::from_json(r#"{"vehicel": {}}"#).is_err());
        let bad = r#"{"reference": {"initiation_length": -1.0}}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))));
    }

    #[test]
    fn non_latent_plant_is_nominal() {
        let mut cfg = ExperimentConfig::default();
        cfg.plant.latent = false;
        let p = cfg.plant_config();
        assert_eq!(p, PlantConfig::nominal(cfg.tire.nominal.front, cfg.tire.nominal.rear));
        cfg.plant.latent = true;
        assert!(cfg.plant_config().load_transfer);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("neural".parse::<Variant>().unwrap(), Variant::Neural);
        assert!("hybrid".parse::<Variant>().is_err());
    }

    #[test]
    fn seed_streams_are_disjoint() {
        let a: Vec<_> = (0..100).map(|i| scenario_seed(3, i)).collect();
        let b: Vec<_> = (0..100).map(|i| observer_seed(3, i)).collect();
        assert!(a.iter().all(|x| !b.contains(x) && *x != compose_seed(3) && *x != train_seed(3)));
    }
}
