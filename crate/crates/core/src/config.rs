//! TOML scenario documents and their translation into runnable scenarios.
//!
//! Unknown keys are rejected everywhere. Paths inside the document are
//! resolved relative to the directory holding the document.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clf::{ClfParams, Margin};
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::qp::QpOptions;
use crate::sim::{ControllerParams, Scenario};
use crate::stack::{
    PriorityRelation, PrioritySchedule, ScheduleSegment, StackOptions, TaskSpec, DEFAULT_PRIORITY_SCALE,
};
use crate::valuefn::{
    read_grid, value_iteration, FormationSpec, FormationValue, GoToGoal, GridAxes, GridSpec, GridValueFunction,
    IterationOptions, IterationReport, QuadraticCost, ValueFunction,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<TaskConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemType {
    SingleIntegrator,
    DoubleIntegrator,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "type")]
    pub kind: SystemType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workspace_dim: Option<usize>,
    /// Row-major `A` for `type = "linear"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    GotoGoal,
    Formation,
    GridValue,
}

/// One task. Which optional keys apply depends on `type`:
/// `goto_goal` uses `goal` and `weight`; `formation` uses `side` (hexagon)
/// or `weights`, plus `energy_weight` and `cost_weight`; `grid_value` uses
/// `artifact`. `robot_block` picks the robot a single-robot task acts on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: TaskType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub segments: Vec<SegmentConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub relations: Vec<RelationConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationConfig {
    pub higher: String,
    pub lower: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    Sigma,
    ClassK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub kappa: f64,
    pub gradient_epsilon: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub margin: MarginMode,
    /// Slope of the linear class-K margin when `margin = "class_k"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let clf = ClfParams::<f64>::default();
        let qp = QpOptions::<f64>::default();
        Self {
            kappa: StackOptions::<f64>::default().kappa,
            gradient_epsilon: clf.gradient_epsilon,
            lambda_min: clf.lambda_min,
            lambda_max: clf.lambda_max,
            margin: MarginMode::Sigma,
            alpha: None,
            qp_tol: qp.tol,
            qp_max_iter: qp.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    pub action_lower: Vec<f64>,
    pub action_upper: Vec<f64>,
    pub action_count: Vec<usize>,
    pub tol: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    pub termination_radius: f64,
    pub dt: f64,
    /// Row-major `Q` of the running cost.
    pub state_weight: Vec<Vec<f64>>,
    pub input_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub boundary_penalty: f64,
}

fn default_max_sweeps() -> usize {
    IterationOptions::<f64>::default().max_sweeps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Trace file name inside the output directory.
    pub trace: String,
    /// Grid artifact written by `learn`, relative to the document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    pub plots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trace: "trace.csv".into(),
            artifact: None,
            plots: true,
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("`{what}` rows must all have the same length")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{what}` must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        self.system()?;
        let mut ids = Vec::new();
        for t in &self.tasks {
            if ids.contains(&t.id) {
                return Err(Error::Config(format!("task id `{}` is defined twice", t.id)));
            }
            ids.push(t.id.clone());
            t.check_keys()?;
        }
        if let Some(s) = &self.schedule {
            for seg in &s.segments {
                for r in &seg.relations {
                    for id in [&r.higher, &r.lower] {
                        if !ids.contains(id) {
                            return Err(Error::Config(format!("schedule refers to undefined task `{id}`")));
                        }
                    }
                }
            }
            self.schedule()?;
        }
        self.controller()?;
        if let Some(sim) = &self.simulation {
            positive(sim.dt, "simulation.dt")?;
            positive(sim.horizon, "simulation.horizon")?;
        }
        if let Some(l) = &self.learning {
            l.grid()?;
            l.cost()?;
            positive(l.dt, "learning.dt")?;
            positive(l.tol, "learning.tol")?;
        }
        Ok(())
    }

    pub fn system(&self) -> Result<ControlAffineSystem<f64>> {
        let s = &self.system;
        match s.kind {
            SystemType::SingleIntegrator => {
                let robots = s.robot_count.unwrap_or(1);
                let wdim = s.workspace_dim.unwrap_or(2);
                if robots == 0 || wdim == 0 {
                    return Err(Error::Config("robot_count and workspace_dim must be positive".into()));
                }
                ControlAffineSystem::single_integrator(robots, wdim)
            }
            SystemType::DoubleIntegrator => Ok(ControlAffineSystem::double_integrator()),
            SystemType::Linear => {
                let (Some(a), Some(b)) = (&s.a, &s.b) else {
                    return Err(Error::Config("a linear system needs `a` and `b`".into()));
                };
                ControlAffineSystem::linear("linear", matrix(a, "system.a")?, matrix(b, "system.b")?)
                    .map_err(|e| Error::Config(e.to_string()))
            }
        }
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }

    pub fn controller(&self) -> Result<ControllerParams<f64>> {
        let c = &self.controller;
        let margin = match (c.margin, c.alpha) {
            (MarginMode::Sigma, None) => Margin::Sigma,
            (MarginMode::Sigma, Some(_)) => {
                return Err(Error::Config(
                    "`controller.alpha` only applies to margin = \"class_k\"".into(),
                ))
            }
            (MarginMode::ClassK, Some(a)) => Margin::ClassK(positive(a, "controller.alpha")?),
            (MarginMode::ClassK, None) => {
                return Err(Error::Config("margin = \"class_k\" needs `controller.alpha`".into()))
            }
        };
        positive(c.kappa, "controller.kappa")?;
        positive(c.qp_tol, "controller.qp_tol")?;
        self.clf_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(ControllerParams {
            stack: StackOptions { kappa: c.kappa, margin },
            qp: QpOptions {
                tol: c.qp_tol,
                max_iter: c.qp_max_iter,
            },
        })
    }

    pub fn clf_params(&self) -> ClfParams<f64> {
        ClfParams {
            gradient_epsilon: self.controller.gradient_epsilon,
            lambda_min: self.controller.lambda_min,
            lambda_max: self.controller.lambda_max,
        }
    }

    /// The configured schedule, or a single empty segment over the horizon.
    pub fn schedule(&self) -> Result<PrioritySchedule<f64>> {
        let wrap = |e: Error| Error::Config(format!("schedule: {e}"));
        match &self.schedule {
            Some(s) => {
                let segments = s
                    .segments
                    .iter()
                    .map(|seg| {
                        Ok(ScheduleSegment {
                            start: seg.start,
                            end: seg.end,
                            relations: seg
                                .relations
                                .iter()
                                .map(|r| {
                                    PriorityRelation::new(
                                        r.higher.clone(),
                                        r.lower.clone(),
                                        r.l.unwrap_or(DEFAULT_PRIORITY_SCALE),
                                    )
                                })
                                .collect::<Result<_>>()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                PrioritySchedule::new(segments).map_err(wrap)
            }
            None => {
                let horizon = self.simulation.as_ref().map_or(1.0, |s| s.horizon);
                PrioritySchedule::constant(vec![], horizon).map_err(wrap)
            }
        }
    }

    /// Resolves a path from the document relative to `base_dir`.
    pub fn resolve(base_dir: &Path, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }

    /// Builds the runnable scenario. Grid-valued tasks load their artifact;
    /// when the file is missing and a `learning` section exists, the grid is
    /// learned in place instead.
    pub fn build(&self, base_dir: &Path) -> Result<Scenario<f64>> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Config("the scenario has no `simulation` section".into()))?;
        let system = self.system()?;
        let params = self.clf_params();
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for t in &self.tasks {
            let provider = t.provider(self, &system, base_dir)?;
            let spec = match t.robot_block {
                Some(robot) => TaskSpec::for_robot(t.id.clone(), provider, robot),
                None => TaskSpec::new(t.id.clone(), provider),
            };
            spec.validate(system.state_dim())
                .map_err(|e| Error::Config(format!("task `{}`: {e}", t.id)))?;
            tasks.push(spec.with_params(params));
        }
        let scenario = Scenario {
            name: self.name.clone(),
            system,
            tasks,
            schedule: self.schedule()?,
            horizon: sim.horizon,
            dt: sim.dt,
            x0: DVector::from_vec(sim.x0.clone()),
            controller: self.controller()?,
        };
        scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(scenario)
    }

    pub fn learning(&self) -> Result<&LearningConfig> {
        self.learning
            .as_ref()
            .ok_or_else(|| Error::Config("the scenario has no `learning` section".into()))
    }
}

impl TaskConfig {
    fn check_keys(&self) -> Result<()> {
        let present = |name: &'static str, set: bool| if set { Some(name) } else { None };
        let keys = [
            present("goal", self.goal.is_some()),
            present("weight", self.weight.is_some()),
            present("side", self.side.is_some()),
            present("weights", self.weights.is_some()),
            present("energy_weight", self.energy_weight.is_some()),
            present("cost_weight", self.cost_weight.is_some()),
            present("artifact", self.artifact.is_some()),
        ];
        let allowed: &[&str] = match self.kind {
            TaskType::GotoGoal => &["goal", "weight"],
            TaskType::Formation => &["side", "weights", "energy_weight", "cost_weight"],
            TaskType::GridValue => &["artifact"],
        };
        if let Some(k) = keys.iter().flatten().find(|k| !allowed.contains(k)) {
            return Err(Error::Config(format!(
                "task `{}`: key `{k}` does not apply to type {:?}",
                self.id, self.kind
            )));
        }
        match self.kind {
            TaskType::GotoGoal if self.goal.is_none() => {
                Err(Error::Config(format!("task `{}`: goto_goal needs `goal`", self.id)))
            }
            TaskType::Formation if self.side.is_some() == self.weights.is_some() => Err(Error::Config(format!(
                "task `{}`: formation needs exactly one of `side` (hexagon) or `weights`",
                self.id
            ))),
            _ => Ok(()),
        }
    }

    fn provider(
        &self,
        cfg: &ScenarioConfig,
        system: &ControlAffineSystem<f64>,
        base_dir: &Path,
    ) -> Result<Arc<dyn ValueFunction<f64>>> {
        let wrap = |e: Error| Error::Config(format!("task `{}`: {e}", self.id));
        Ok(match self.kind {
            TaskType::GotoGoal => {
                let goal = DVector::from_vec(self.goal.clone().unwrap_or_default());
                Arc::new(GoToGoal::new(goal, self.weight.unwrap_or(1.0)).map_err(wrap)?)
            }
            TaskType::Formation => {
                let spec = match (self.side, &self.weights) {
                    (Some(side), None) => FormationSpec::hexagon(positive(side, "side")?),
                    (None, Some(w)) => {
                        let wdim = cfg.system.workspace_dim.unwrap_or(2);
                        FormationSpec::new(matrix(w, "weights")?, wdim).map_err(wrap)?
                    }
                    _ => unreachable!("checked in validate"),
                };
                Arc::new(
                    FormationValue::new(
                        spec,
                        self.energy_weight.unwrap_or(0.01),
                        self.cost_weight.unwrap_or(0.01),
                    )
                    .map_err(wrap)?,
                )
            }
            TaskType::GridValue => Arc::new(load_or_learn(cfg, self.artifact.as_deref(), system, base_dir)?),
        })
    }
}

fn load_or_learn(
    cfg: &ScenarioConfig,
    artifact: Option<&str>,
    system: &ControlAffineSystem<f64>,
    base_dir: &Path,
) -> Result<GridValueFunction<f64>> {
    let path = artifact.or(cfg.output.artifact.as_deref());
    if let Some(p) = path {
        let full = ScenarioConfig::resolve(base_dir, p);
        if full.exists() {
            let file = fs::File::open(&full)?;
            return read_grid(BufReader::new(file));
        }
        if cfg.learning.is_none() {
            return Err(Error::Config(format!(
                "grid artifact {} not found; run `taskstack learn` with this config first",
                full.display()
            )));
        }
        log::info!("grid artifact {} not found; learning it now", full.display());
    }
    let learning = cfg
        .learning()
        .map_err(|_| Error::Config("a grid_value task needs an `artifact` path or a `learning` section".into()))?;
    Ok(learning.learn(system)?.0)
}

impl LearningConfig {
    pub fn grid(&self) -> Result<GridSpec<f64>> {
        let axes = GridAxes::new(self.lower.clone(), self.upper.clone(), self.resolution.clone())
            .map_err(|e| Error::Config(format!("learning grid: {e}")))?;
        let actions = GridSpec::uniform_actions(&self.action_lower, &self.action_upper, &self.action_count)
            .map_err(|e| Error::Config(format!("learning actions: {e}")))?;
        if !(self.termination_radius >= 0.0) {
            return Err(Error::Config(
                "`learning.termination_radius` must be nonnegative".into(),
            ));
        }
        Ok(GridSpec {
            axes,
            termination_radius: self.termination_radius,
            actions,
        })
    }

    pub fn cost(&self) -> Result<QuadraticCost<f64>> {
        let q = matrix(&self.state_weight, "learning.state_weight")?;
        let center = match &self.center {
            Some(c) => DVector::from_vec(c.clone()),
            None => DVector::zeros(q.nrows()),
        };
        QuadraticCost::new(q, center, self.input_weight).map_err(|e| Error::Config(format!("learning cost: {e}")))
    }

    pub fn options(&self) -> IterationOptions<f64> {
        IterationOptions {
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            boundary_penalty: self.boundary_penalty,
        }
    }

    /// Runs value iteration and shifts the result to vanish at the cost center.
    pub fn learn(&self, system: &ControlAffineSystem<f64>) -> Result<(GridValueFunction<f64>, IterationReport<f64>)> {
        let cost = self.cost()?;
        let dsys = system.discretize(self.dt)?;
        let (gvf, report) = value_iteration(&dsys, &cost, &self.grid()?, &self.options())?;
        let shifted = gvf.shift_to_zero(&cost.center, 1e-9)?;
        Ok((shifted, report))
    }

    /// Same settings on a different grid resolution.
    pub fn with_resolution(&self, resolution: Vec<usize>) -> Self {
        Self {
            resolution,
            ..self.clone()
        }
    }
}
