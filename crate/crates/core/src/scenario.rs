//! Versioned JSON scenario files, their validation and their evaluation.
//!
//! A scenario bundles a [`DesignQuery`] with the inputs of the question
//! being asked (target power, sample size, costs, search range for `r`) and
//! optional sweep axes.  Unknown keys are rejected and every validation
//! error names the offending JSON path, e.g. `design.pop.pe`.
//!
//! ```
//! use longidesign::scenario::{evaluate, LoadedScenario, Task};
//!
//! let text = r#"{
//!   "version": 1,
//!   "design": {
//!     "grid": {"r": 6, "mode": {"fixed_tau": {"tau": 18}}},
//!     "pop": {"pe": 0.79, "v_t0": 0},
//!     "cov": {"model": "cs", "sigma2": 0.3214, "rho": 0.857},
//!     "hyp": "ldd",
//!     "effect": {"scale": "ldd", "p2": -0.182, "p3": 0.1, "mu00": 3.5086}
//!   },
//!   "power": 0.9
//! }"#;
//! let loaded = LoadedScenario::from_json(text).unwrap();
//! assert_eq!(loaded.defaults[0].path, "design.alpha");
//! let out = evaluate(&loaded.scenario, Task::N, None).unwrap();
//! assert_eq!(out.n, Some(918));
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::allocation::{solve_allocation, study_cost, CostSpec};
use crate::error::{DesignError, Result};
use crate::solvers::{
    inflate_for_dropout, min_detectable_effect, power, required_n, required_r, DesignQuery, MaxPowerSource, RBounds,
    RequiredR, DEFAULT_ALPHA,
};
use crate::variance::unit_variance;

/// Scenario format version understood by this release.
pub const SCENARIO_VERSION: u32 = 1;

/// A complete, replayable study question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Format version; must equal [`SCENARIO_VERSION`].
    pub version: u32,
    /// Design, population, covariance, hypothesis, effect and `alpha`.
    pub design: DesignQuery,
    /// Target power for the `n`, `r` and `mde` tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    /// Number of participants for the `power`, `r` and `mde` tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Costs and constraint for the `optimal` task; when present the other
    /// tasks also report the study cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSpec>,
    /// Search range for `r` in the `r` and `optimal` tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_bounds: Option<RBounds>,
    /// Expected dropout fraction used to inflate the sample size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    /// Axes of a parameter sweep; the cross product is evaluated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

/// One axis of a sweep: a dotted path to a numeric scenario field and the
/// values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path such as `design.pop.v_t0` or `design.grid.r`.
    pub path: String,
    /// Values substituted at `path`.
    pub values: Vec<f64>,
}

/// A default filled in while loading a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppliedDefault {
    /// Dotted path of the defaulted field.
    pub path: &'static str,
    /// Value used.
    pub value: f64,
}

/// A parsed and validated scenario together with its source document.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    /// The scenario itself.
    pub scenario: Scenario,
    /// Defaults that were applied because the file left them out.
    pub defaults: Vec<AppliedDefault>,
    raw: Value,
}

impl LoadedScenario {
    /// Parses and validates a scenario document.
    ///
    /// An archived JSON result (an object with `scenario` and `results`
    /// members) is accepted as well, so that past runs can be replayed.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut raw: Value =
            serde_json::from_str(text).map_err(|e| DesignError::domain("<document>", e.to_string()))?;
        if let Some(obj) = raw.as_object_mut() {
            if obj.contains_key("results") {
                if let Some(inner) = obj.remove("scenario") {
                    raw = inner;
                }
            }
        }
        let defaults = detect_defaults(&raw);
        let scenario = from_value(&raw)?;
        scenario.validate()?;
        Ok(LoadedScenario { scenario, defaults, raw })
    }

    /// Wraps an in-memory scenario.
    pub fn from_scenario(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let raw = serde_json::to_value(&scenario).map_err(|e| DesignError::domain("<document>", e.to_string()))?;
        Ok(LoadedScenario {
            scenario,
            defaults: Vec::new(),
            raw,
        })
    }

    /// Cross product of the sweep axes, in row-major order (last axis
    /// fastest).  Each cell carries the axis values and the scenario
    /// obtained by substituting them, or the validation error it raised.
    pub fn sweep_cells(&self) -> Result<Vec<(Vec<f64>, Result<Scenario>)>> {
        let axes = &self.scenario.sweep;
        let mut base = self.raw.clone();
        if let Some(obj) = base.as_object_mut() {
            obj.remove("sweep");
        }
        let total: usize = axes.iter().map(|a| a.values.len()).product();
        let mut cells = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut values = vec![0.0; axes.len()];
            for (k, axis) in axes.iter().enumerate().rev() {
                values[k] = axis.values[rem % axis.values.len()];
                rem /= axis.values.len();
            }
            let mut doc = base.clone();
            let mut outcome = Ok(());
            for (axis, &v) in axes.iter().zip(&values) {
                outcome = outcome.and_then(|_| set_path(&mut doc, &axis.path, v));
            }
            let scenario = outcome.and_then(|_| {
                let s = from_value(&doc)?;
                s.validate()?;
                Ok(s)
            });
            cells.push((values, scenario));
        }
        Ok(cells)
    }
}

fn from_value(raw: &Value) -> Result<Scenario> {
    serde_path_to_error::deserialize(raw).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<document>".to_string() } else { path };
        DesignError::domain(field, e.into_inner().to_string())
    })
}

fn detect_defaults(raw: &Value) -> Vec<AppliedDefault> {
    let mut out = Vec::new();
    let design = raw.get("design");
    if design.and_then(|d| d.get("alpha")).is_none() {
        out.push(AppliedDefault {
            path: "design.alpha",
            value: DEFAULT_ALPHA,
        });
    }
    if design.and_then(|d| d.get("pop")).and_then(|p| p.get("rho_e_t0")).is_none() {
        out.push(AppliedDefault {
            path: "design.pop.rho_e_t0",
            value: 0.0,
        });
    }
    out
}

fn set_path(doc: &mut Value, path: &str, v: f64) -> Result<()> {
    let field = format!("sweep[{path}]");
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj: &mut Map<String, Value> = cur
            .as_object_mut()
            .ok_or_else(|| DesignError::domain(field.clone(), "path does not lead to an object"))?;
        if i + 1 == keys.len() {
            if let Some(old) = obj.get(*key) {
                if !old.is_number() {
                    return Err(DesignError::domain(field, "target field is not numeric"));
                }
            }
            let num = if v.fract() == 0.0 && (0.0..9.0e15).contains(&v) {
                Number::from(v as u64)
            } else {
                Number::from_f64(v).ok_or_else(|| DesignError::domain(field.clone(), "value must be finite"))?
            };
            obj.insert((*key).to_string(), Value::Number(num));
            return Ok(());
        }
        cur = obj
            .get_mut(*key)
            .ok_or_else(|| DesignError::domain(field.clone(), format!("no field `{key}`")))?;
    }
    Ok(())
}

impl Scenario {
    /// Wraps a design query with no further inputs.
    pub fn new(design: DesignQuery) -> Self {
        Scenario {
            version: SCENARIO_VERSION,
            design,
            power: None,
            n: None,
            cost: None,
            r_bounds: None,
            dropout: None,
            sweep: Vec::new(),
        }
    }

    /// Checks every field, reporting the JSON path of the first problem.
    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(DesignError::domain(
                "version",
                format!("unsupported version {} (expected {SCENARIO_VERSION})", self.version),
            ));
        }
        self.design.validate_design().map_err(|e| e.prefixed("design."))?;
        if let Some(p) = self.power {
            if !(p > 0.0 && p < 1.0) {
                return Err(DesignError::domain("power", "must lie in (0, 1)"));
            }
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(DesignError::domain("n", "must be >= 2"));
            }
        }
        if let Some(c) = &self.cost {
            c.validate()?;
        }
        if let Some(b) = self.r_bounds {
            if b.lo > b.hi {
                return Err(DesignError::domain("r_bounds", "lo must not exceed hi"));
            }
        }
        if let Some(f) = self.dropout {
            if !(0.0..1.0).contains(&f) {
                return Err(DesignError::domain("dropout", "must lie in [0, 1)"));
            }
        }
        for (i, axis) in self.sweep.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(DesignError::domain(format!("sweep[{i}].values"), "must not be empty"));
            }
            if axis.path.starts_with("sweep") || axis.path == "version" {
                return Err(DesignError::domain(format!("sweep[{i}].path"), "cannot sweep this field"));
            }
        }
        Ok(())
    }

    /// Search range for `r`: the scenario's own range, with its upper end
    /// replaced by `r_max` when given.
    pub fn bounds(&self, r_max: Option<u32>) -> RBounds {
        let b = self.r_bounds.unwrap_or_else(|| RBounds::default_for(&self.design));
        match r_max {
            Some(hi) => RBounds { lo: b.lo, hi },
            None => b,
        }
    }

    fn require_power(&self, task: Task) -> Result<f64> {
        self.power
            .ok_or_else(|| DesignError::domain("power", format!("required by the `{}` task", task.name())))
    }

    fn require_n(&self, task: Task) -> Result<u64> {
        self.n
            .ok_or_else(|| DesignError::domain("n", format!("required by the `{}` task", task.name())))
    }

    fn cost_of(&self, n: u64, r: u32) -> Option<f64> {
        self.cost.map(|c| study_cost(n, r, c.c1, c.kappa))
    }
}

/// Question answered for a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Power for `n` participants at the design's `r`.
    Power,
    /// Sample size reaching the target power.
    N,
    /// Smallest number of follow-up measures reaching the target power.
    R,
    /// Minimum detectable effect.
    Mde,
    /// Cost-optimal `(n, r)` under the cost constraint.
    Optimal,
}

impl Task {
    /// Lower-case name used in output and error messages.
    pub fn name(self) -> &'static str {
        match self {
            Task::Power => "power",
            Task::N => "n",
            Task::R => "r",
            Task::Mde => "mde",
            Task::Optimal => "optimal",
        }
    }
}

/// How a task ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// The question has an answer within the search range.
    Ok,
    /// The optimum sits on the upper end of the search range for `r`.
    AtUpperBound,
    /// The target power cannot be reached; `max_power` holds the best
    /// available power.
    Unattainable,
}

/// Uniform result record; fields that do not apply to a task are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Task that produced the record.
    pub task: Task,
    /// Participants needed (or given) for the analysis.
    pub n: Option<u64>,
    /// Participants to enrol after inflating for dropout.
    pub n_enrolled: Option<u64>,
    /// Number of follow-up measures.
    pub r: Option<u32>,
    /// Power of the reported design.
    pub power: Option<f64>,
    /// Total study cost of the reported design.
    pub cost: Option<f64>,
    /// Minimum detectable coefficient.
    pub mde_coefficient: Option<f64>,
    /// Minimum detectable effect on the percent scale.
    pub mde_fraction: Option<f64>,
    /// Asymptotic variance of the estimator for one participant.
    pub unit_variance: Option<f64>,
    /// Best power available when the target is unattainable.
    pub max_power: Option<f64>,
    /// Termination status.
    pub status: Status,
}

impl Outcome {
    fn empty(task: Task) -> Self {
        Outcome {
            task,
            n: None,
            n_enrolled: None,
            r: None,
            power: None,
            cost: None,
            mde_coefficient: None,
            mde_fraction: None,
            unit_variance: None,
            max_power: None,
            status: Status::Ok,
        }
    }

    /// Column names of [`Outcome::csv_fields`].
    pub const CSV_HEADER: [&'static str; 11] = [
        "task",
        "n",
        "n_enrolled",
        "r",
        "power",
        "cost",
        "mde_coefficient",
        "mde_fraction",
        "unit_variance",
        "max_power",
        "status",
    ];

    /// Field values in [`Outcome::CSV_HEADER`] order, with floats formatted
    /// by `fmt` and missing values left empty.
    pub fn csv_fields(&self, fmt: impl Fn(f64) -> String) -> Vec<String> {
        let f = |x: Option<f64>| x.map(&fmt).unwrap_or_default();
        let i = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.task.name().to_string(),
            i(self.n),
            i(self.n_enrolled),
            i(self.r.map(u64::from)),
            f(self.power),
            f(self.cost),
            f(self.mde_coefficient),
            f(self.mde_fraction),
            f(self.unit_variance),
            f(self.max_power),
            status_name(self.status).to_string(),
        ]
    }
}

/// Lower-case name of a status.
pub fn status_name(s: Status) -> &'static str {
    match s {
        Status::Ok => "ok",
        Status::AtUpperBound => "at_upper_bound",
        Status::Unattainable => "unattainable",
    }
}

/// Answers `task` for `scenario`.  `r_max` overrides the upper end of the
/// search range for `r`.
pub fn evaluate(scenario: &Scenario, task: Task, r_max: Option<u32>) -> Result<Outcome> {
    scenario.validate()?;
    let q = &scenario.design;
    let r = q.grid.r;
    let dropout = scenario.dropout.unwrap_or(0.0);
    let mut out = Outcome::empty(task);
    match task {
        Task::Power => {
            let n = scenario.require_n(task)?;
            out.n = Some(n);
            out.r = Some(r);
            out.power = Some(power(n, q)?);
            out.unit_variance = Some(unit_variance(q)?.value);
            out.cost = scenario.cost_of(n, r);
        }
        Task::N => {
            let target = scenario.require_power(task)?;
            let ss = required_n(target, q)?;
            let enrolled = inflate_for_dropout(ss.n, dropout)?;
            out.n = Some(ss.n);
            out.n_enrolled = Some(enrolled);
            out.r = Some(r);
            out.power = Some(power(ss.n, q)?);
            out.unit_variance = Some(unit_variance(q)?.value);
            out.cost = scenario.cost_of(enrolled, r);
        }
        Task::R => {
            let target = scenario.require_power(task)?;
            let n = scenario.require_n(task)?;
            out.n = Some(n);
            match required_r(target, n, q, scenario.bounds(r_max))? {
                RequiredR::Attained { r, power } => {
                    out.r = Some(r);
                    out.power = Some(power);
                    out.unit_variance = Some(unit_variance(&q.with_r(r))?.value);
                    out.cost = scenario.cost_of(n, r);
                }
                RequiredR::Unattainable { max_power, source } => {
                    out.status = Status::Unattainable;
                    out.max_power = Some(max_power);
                    if let MaxPowerSource::Bound { r } = source {
                        out.r = Some(r);
                    }
                }
            }
        }
        Task::Mde => {
            let target = scenario.require_power(task)?;
            let n = scenario.require_n(task)?;
            let m = min_detectable_effect(target, n, q)?;
            out.n = Some(n);
            out.r = Some(r);
            out.power = Some(target);
            out.mde_coefficient = Some(m.coefficient);
            out.mde_fraction = m.fraction;
            out.unit_variance = Some(unit_variance(q)?.value);
        }
        Task::Optimal => {
            let cost = scenario
                .cost
                .ok_or_else(|| DesignError::domain("cost", "required by the `optimal` task"))?;
            let sol = solve_allocation(q, &cost, scenario.bounds(r_max))?;
            out.n = Some(sol.n_opt);
            out.n_enrolled = Some(inflate_for_dropout(sol.n_opt, dropout)?);
            out.r = Some(sol.r_opt);
            out.power = Some(sol.power);
            out.cost = Some(sol.cost);
            out.unit_variance = Some(unit_variance(&q.with_r(sol.r_opt))?.value);
            if sol.at_upper_bound {
                out.status = Status::AtUpperBound;
            }
        }
    }
    Ok(out)
}

/// One evaluated sweep cell.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Values of the sweep axes for this cell.
    pub values: Vec<f64>,
    /// Result or error of the cell.
    pub outcome: Result<Outcome>,
}

/// Evaluates every cell of the sweep in parallel; rows come back in the
/// same order as [`LoadedScenario::sweep_cells`].
pub fn run_sweep(loaded: &LoadedScenario, task: Task, r_max: Option<u32>) -> Result<Vec<SweepRow>> {
    let cells = loaded.sweep_cells()?;
    Ok(cells
        .into_par_iter()
        .map(|(values, scenario)| SweepRow {
            values,
            outcome: scenario.and_then(|s| evaluate(&s, task, r_max)),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilot;

    fn demo_json() -> String {
        let mut s = Scenario::new(pilot::demo_query());
        s.cost = Some(pilot::demo_cost());
        s.r_bounds = Some(RBounds { lo: 1, hi: 18 });
        serde_json::to_string_pretty(&s).unwrap()
    }

    #[test]
    fn demo_round_trips_and_solves() {
        let loaded = LoadedScenario::from_json(&demo_json()).unwrap();
        assert!(loaded.defaults.is_empty());
        let out = evaluate(&loaded.scenario, Task::Optimal, None).unwrap();
        assert_eq!((out.n, out.r), (Some(732), Some(12)));
        assert!((out.cost.unwrap() - 93696.0).abs() < 1e-6);
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = demo_json().replace("\"pe\"", "\"pee\"");
        let err = LoadedScenario::from_json(&text).unwrap_err();
        match err {
            DesignError::Domain { field, .. } => assert_eq!(field, "design.pop.pee"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn invalid_value_names_the_json_path() {
        let text = demo_json().replace("\"sigma_t0_2\": 0.34", "\"sigma_t0_2\": -0.34");
        let err = LoadedScenario::from_json(&text).unwrap_err();
        match err {
            DesignError::Domain { field, .. } => assert_eq!(field, "design.cov.params.intuitive.sigma_t0_2"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn constant_entry_time_cannot_correlate() {
        let mut s = Scenario::new(pilot::fixed_tau_query(
            6,
            pilot::cs(),
            crate::variance::Hypothesis::Cmd,
            pilot::population(0.0, 0.0),
            pilot::cmd_effect(0.1),
        ));
        s.design.pop.rho_e_t0 = 0.5;
        match s.validate().unwrap_err() {
            DesignError::Domain { field, .. } => assert_eq!(field, "design.pop.rho_e_t0"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn sweep_cells_are_ordered_last_axis_fastest() {
        let mut s = Scenario::new(pilot::fixed_tau_query(
            6,
            pilot::cs(),
            crate::variance::Hypothesis::Cmd,
            pilot::population(0.0, 0.0),
            pilot::cmd_effect(0.1),
        ));
        s.power = Some(0.9);
        s.sweep = vec![
            SweepAxis {
                path: "design.grid.r".into(),
                values: vec![1.0, 2.0],
            },
            SweepAxis {
                path: "design.alpha".into(),
                values: vec![0.05, 0.01],
            },
        ];
        let loaded = LoadedScenario::from_scenario(s).unwrap();
        let rows = run_sweep(&loaded, Task::N, None).unwrap();
        let got: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
        assert_eq!(got, vec![vec![1.0, 0.05], vec![1.0, 0.01], vec![2.0, 0.05], vec![2.0, 0.01]]);
        for row in &rows {
            assert!(row.outcome.is_ok());
        }
        let n = |i: usize| rows[i].outcome.as_ref().unwrap().n.unwrap();
        assert!(n(1) > n(0) && n(2) < n(0));
    }

    #[test]
    fn missing_input_is_a_validation_error() {
        let s = Scenario::new(pilot::demo_query());
        let err = evaluate(&s, Task::Power, None).unwrap_err();
        assert!(err.is_validation());
    }
}
