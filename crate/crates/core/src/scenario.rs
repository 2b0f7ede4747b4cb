//! Named experiment scenarios and the run records they produce.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Diffeomorphism, MapFamily, MapSpec};
use crate::entropy::{self, ExperimentConfig, ExperimentRow, ExperimentTable, PartitionSummary, Verdict};
use crate::error::{Error, Result};
use crate::reparam::{chi_class, epsilon_admissible, reparametrize_step, ParamCurve, ReparamFamily, StepConstants};
use crate::stats;

/// Reparametrization probe run next to the experiment: one step of the
/// `t = 0` map along short segments at random points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub points: usize,
    /// Curve scale as a fraction of the admissible ε.
    pub epsilon_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { points: 2, epsilon_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Statements the scenario exercises.
    #[serde(default)]
    pub anchors: Vec<String>,
    pub map: MapSpec,
    /// `family(t)` shears the base map by `shear_scale · t`; 0 gives a constant family.
    #[serde(default = "one")]
    pub shear_scale: f64,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
}

fn one() -> f64 {
    1.0
}

impl Scenario {
    pub fn family(&self, t: f64) -> Result<Diffeomorphism> {
        let mut spec = self.map.clone();
        let s = self.shear_scale * t;
        spec.perturbation = Some(spec.perturbation.unwrap_or(0.0) + s);
        spec.build()
    }

    /// Static checks: the map compiles, the partition and schedule fit it.
    pub fn validate(&self) -> Result<()> {
        let base = self.family(0.0)?;
        let cfg = &self.experiment;
        if cfg.grid_dims.len() != base.dim() {
            return Err(Error::InvalidArgument(format!(
                "grid_dims has {} entries, map `{}` has dimension {}",
                cfg.grid_dims.len(),
                base.name(),
                base.dim()
            )));
        }
        if cfg.grid_dims.contains(&0) {
            return Err(Error::InvalidArgument("grid_dims must be positive".into()));
        }
        if cfg.t_schedule.is_empty() || cfg.t_schedule.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("t_schedule must be a nonempty list of finite numbers".into()));
        }
        if cfg.orbits == 0 || cfg.orbit_len == 0 || cfg.depth < 2 || cfg.q == 0 {
            return Err(Error::InvalidArgument("orbits, orbit_len, q must be positive and depth ≥ 2".into()));
        }
        if self.shear_scale != 0.0 && base.dim() < 2 {
            return Err(Error::InvalidArgument("shear perturbations need dimension ≥ 2".into()));
        }
        for &t in &cfg.t_schedule {
            self.family(t)?;
        }
        Ok(())
    }

    pub fn run(&self) -> Result<RunRecord> {
        self.validate()?;
        let clock = std::time::Instant::now();
        let table = entropy::semicontinuity_experiment(|t| self.family(t), &self.experiment)?;
        let probes = match &self.probe {
            Some(p) => run_probes(&self.family(0.0)?, p, self.experiment.seed)?,
            None => Vec::new(),
        };
        let ExperimentTable { rows, verdicts, partition } = table;
        Ok(RunRecord {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: self.clone(),
            partition,
            rows,
            verdicts,
            probes,
            wall_clock_s: clock.elapsed().as_secs_f64(),
        })
    }
}

/// One probe step: the family plus the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub start: Vec<f64>,
    pub chi_plus: i64,
    pub chi: i64,
    pub epsilon: f64,
    pub family: Option<ReparamFamily>,
    pub error: Option<String>,
}

fn run_probes(map: &Diffeomorphism, cfg: &ProbeConfig, seed: u64) -> Result<Vec<ProbeRecord>> {
    if !(cfg.epsilon_fraction > 0.0 && cfg.epsilon_fraction < 1.0) {
        return Err(Error::InvalidArgument("probe epsilon_fraction must lie in (0, 1)".into()));
    }
    if map.space.kind != crate::dynamics::SpaceKind::Torus {
        return Err(Error::InvalidArgument("probes need a toral phase space".into()));
    }
    let (r, alpha) = (map.regularity.r, map.regularity.alpha);
    let consts = StepConstants::calibrated(r, alpha);
    let epsilon = cfg.epsilon_fraction * epsilon_admissible(map);
    let d = map.dim();
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    let dir: Vec<f64> = (0..d).map(|i| golden.powi(i as i32)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v: Vec<f64> = dir.iter().map(|x| 0.5 * epsilon * x / norm).collect();
    let mut rng = stats::stream_rng(seed, 7);
    let mut out = Vec::new();
    for p in stats::uniform_points(&map.space, cfg.points, &mut rng) {
        let sigma = ParamCurve::segment(&p, &v, r, alpha)?;
        let (chi_plus, chi) = chi_class(map, &sigma, 0.0);
        let (family, error) = match reparametrize_step(map, &sigma, chi_plus, chi, epsilon, &consts) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(ProbeRecord { start: p.coords().to_vec(), chi_plus, chi, epsilon, family, error });
    }
    Ok(out)
}

/// Everything a run produced, in schedule order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub scenario: Scenario,
    pub partition: PartitionSummary,
    pub rows: Vec<ExperimentRow>,
    pub verdicts: Vec<Verdict>,
    pub probes: Vec<ProbeRecord>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn warning_count(&self) -> usize {
        self.rows.iter().map(|r| r.warnings.len()).sum::<usize>() + self.probes.iter().filter(|p| p.error.is_some()).count()
    }
}

/// Outcome of re-checking a stored record without recomputing orbits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub checks: usize,
    pub failures: Vec<String>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Recomputes the verdicts, each bound total and verdict, and every
/// probe certificate from the stored quantities.
pub fn verify_replay(record: &RunRecord) -> ReplayReport {
    let mut checks = 0;
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: String| {
        checks += 1;
        if !ok {
            failures.push(what);
        }
    };
    let cfg = &record.scenario.experiment;
    match record.rows.iter().find(|r| r.t == 0.0) {
        Some(base) => {
            let fresh = entropy::verdicts(&record.rows, base, cfg);
            check(fresh.len() == record.verdicts.len(), "verdict count".into());
            for (a, b) in fresh.iter().zip(&record.verdicts) {
                let same = a.name == b.name && a.passed == b.passed && (a.margin - b.margin).abs() <= 1e-12 * (1.0 + a.margin.abs());
                check(same, format!("verdict `{}` does not match its rows", b.name));
            }
        }
        None if cfg.t_schedule.contains(&0.0) => check(false, "t = 0 row missing".into()),
        None => {}
    }
    for row in &record.rows {
        if let (Some(h), Some(res), Some(s)) = (row.entropy, row.ruelle_residual, row.lambda_sigma_plus) {
            check((s - h - res).abs() <= 1e-12 * (1.0 + s.abs()), format!("ruelle residual at t = {}", row.t));
        }
        if let Some(b) = &row.bound {
            let total = b.reconstruct();
            check((total - b.total).abs() <= 1e-12 * (1.0 + total.abs()), format!("bound total at t = {}", row.t));
            check(b.bound_holds == (b.lhs <= b.total + b.tolerance), format!("bound verdict at t = {}", row.t));
            check((b.bracket - (b.block_average - b.lambda)).abs() <= 1e-12, format!("bound bracket at t = {}", row.t));
        }
    }
    for (i, p) in record.probes.iter().enumerate() {
        if let Some(f) = &p.family {
            check(f.certificates_hold(), format!("probe {i}: block certificate"));
            check(f.within_bound(), format!("probe {i}: family exceeds its cardinality bound"));
            check(f.context.chi_plus == p.chi_plus && f.context.chi == p.chi, format!("probe {i}: exponent classes"));
        }
    }
    ReplayReport { checks, failures }
}

fn spec(family: MapFamily) -> MapSpec {
    MapSpec { family, perturbation: None, r: None, alpha: None, upsilon: None }
}

/// The shipped scenarios.
pub fn builtin() -> Vec<Scenario> {
    let cat = MapFamily::cat();
    vec![
        Scenario {
            name: "cat_map_semicontinuity".into(),
            description: "Cat map sheared by t·sin(2πy)/(2π); entropy and exponent sums as t → 0".into(),
            anchors: vec![
                "upper semicontinuity of entropy along converging maps".into(),
                "continuity of the positive exponent sum".into(),
                "entropy bound through f^q with q = 50".into(),
            ],
            map: spec(cat.clone()),
            shear_scale: 1.0,
            experiment: ExperimentConfig::default(),
            probe: Some(ProbeConfig::default()),
        },
        Scenario {
            name: "cat_map_constant".into(),
            description: "Unperturbed cat map at every t; every row must agree".into(),
            anchors: vec!["constant family as a control".into()],
            map: spec(cat.clone()),
            shear_scale: 0.0,
            experiment: ExperimentConfig { t_schedule: vec![0.1, 0.01, 0.0], ..ExperimentConfig::default() },
            probe: None,
        },
        Scenario {
            name: "identity".into(),
            description: "Identity on T2: all exponents and entropies vanish".into(),
            anchors: vec!["zero entropy and zero exponents".into()],
            map: spec(MapFamily::Identity { dim: 2 }),
            shear_scale: 0.0,
            experiment: ExperimentConfig { t_schedule: vec![0.0], ..ExperimentConfig::default() },
            probe: Some(ProbeConfig { points: 1, ..ProbeConfig::default() }),
        },
        Scenario {
            name: "standard_map".into(),
            description: "Chirikov standard map at K = 6 under the shear family".into(),
            anchors: vec!["Ruelle inequality for a nonuniformly hyperbolic map".into()],
            map: spec(MapFamily::Standard { k: 6.0 }),
            shear_scale: 1.0,
            experiment: ExperimentConfig { grid_dims: vec![4, 4], bounds: false, ..ExperimentConfig::default() },
            probe: None,
        },
        Scenario {
            name: "cat_times_rotation".into(),
            description: "Cat map times an irrational circle rotation: one positive, one zero, one negative exponent".into(),
            anchors: vec!["signature split with beta = 1".into(), "center exponent".into()],
            map: spec(MapFamily::Product { base: Box::new(cat), rotation: 0.5 * (5f64.sqrt() - 1.0) }),
            shear_scale: 1.0,
            // the rotation carries no entropy, so the partition ignores that axis
            experiment: ExperimentConfig { grid_dims: vec![6, 6, 1], ..ExperimentConfig::default() },
            probe: None,
        },
        Scenario {
            name: "toral3_two_positive".into(),
            description: "Hyperbolic automorphism of T3 with two positive exponents".into(),
            anchors: vec!["signature split with gamma = 1".into()],
            map: spec(MapFamily::Toral { matrix: vec![vec![1, 1, 0], vec![1, 2, 1], vec![0, 1, 2]] }),
            shear_scale: 1.0,
            experiment: ExperimentConfig { grid_dims: vec![2, 2, 1], bounds: false, ..ExperimentConfig::default() },
            probe: None,
        },
    ]
}

pub fn find(name: &str) -> Option<Scenario> {
    builtin().into_iter().find(|s| s.name == name)
}
