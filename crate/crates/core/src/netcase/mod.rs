//! Network data: buses, generators, branches, quadratic costs, and the bus
//! admittance matrix built from them.
//!
//! All electrical quantities are stored in per-unit on `base_mva`; angles in
//! radians. Bus indices are positions in `buses` (the external bus number is
//! kept in [`Bus::id`]).

mod admittance;
mod matpower;

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use matpower::{parse_case, parse_case_with, write_case};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Reference,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External bus number from the case file.
    pub id: usize,
    pub kind: BusKind,
    pub p_demand: f64,
    pub q_demand: f64,
    /// Shunt conductance / susceptance at the bus.
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub base_kv: f64,
}

/// Equivalent generator at one bus (several units at a bus are summed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Voltage setpoint from the case file (informational).
    pub v_set: f64,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_charging: f64,
    /// Off-nominal turns ratio (1 for lines).
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Long-term rating in MVA as given in the file (0 = unlimited).
    pub rate_a: f64,
    /// Limit on |V_from − V_to| in p.u.; `None` for unlimited branches.
    pub d_max: Option<f64>,
}

impl Branch {
    /// Series admittance 1/(r + jx) as (g, b).
    pub fn series_admittance(&self) -> (f64, f64) {
        let den = self.r * self.r + self.x * self.x;
        (self.r / den, -self.x / den)
    }
}

/// Cost q_ii·p² + q_i·p + q_00 in $/h with p in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub q_ii: f64,
    pub q_i: f64,
    pub q_00: f64,
}

impl QuadraticCost {
    pub fn eval(&self, p: f64) -> f64 {
        (self.q_ii * p + self.q_i) * p + self.q_00
    }

    pub fn derivative(&self, p: f64) -> f64 {
        2.0 * self.q_ii * p + self.q_i
    }
}

/// How a branch rating (MVA) becomes a bound on |V_i − V_k|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchLimitRule {
    /// d_max = rateA / base_mva.
    RatingPerUnit,
    /// d_max = rateA / (base_mva · |y_series|): the rating read as a series
    /// current limit.
    #[default]
    SeriesCurrent,
}

/// Limit on |V_i − V_k| for a branch, `None` when the rating is 0.
pub fn branch_limit(base_mva: f64, branch: &Branch, rule: BranchLimitRule) -> Result<Option<f64>> {
    if !(branch.rate_a >= 0.0) {
        return Err(Error::Validation(format!(
            "branch {}-{} has negative rating {}",
            branch.from, branch.to, branch.rate_a
        )));
    }
    if branch.rate_a == 0.0 {
        return Ok(None);
    }
    let pu = branch.rate_a / base_mva;
    Ok(Some(match rule {
        BranchLimitRule::RatingPerUnit => pu,
        BranchLimitRule::SeriesCurrent => {
            let (g, b) = branch.series_admittance();
            pu / g.hypot(b)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    /// Symmetric angle bound |θ| ≤ theta_limit at non-reference buses.
    pub theta_limit: f64,
    pub limit_rule: BranchLimitRule,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            theta_limit: FRAC_PI_2,
            limit_rule: BranchLimitRule::SeriesCurrent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    /// One entry per generator.
    pub cost: Vec<QuadraticCost>,
    pub ref_bus: usize,
    pub limit_rule: BranchLimitRule,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_load(&self) -> usize {
        self.n_bus() - self.n_gen()
    }

    pub fn n_branch(&self) -> usize {
        self.branches.len()
    }

    /// Stacked demand vector (p_d, q_d).
    pub fn demand(&self) -> Vec<f64> {
        self.buses
            .iter()
            .map(|b| b.p_demand)
            .chain(self.buses.iter().map(|b| b.q_demand))
            .collect()
    }

    /// Canonical JSON dump.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the structural invariants; called by the parser.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_bus();
        let bad = |m: String| Err(Error::Validation(m));
        if n == 0 {
            return bad("case has no buses".into());
        }
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return bad(format!("base MVA must be positive, got {}", self.base_mva));
        }
        if self.branches.is_empty() {
            return bad("case has no in-service branches".into());
        }
        let refs: Vec<usize> = (0..n).filter(|&i| self.buses[i].kind == BusKind::Reference).collect();
        if refs.len() != 1 || refs[0] != self.ref_bus {
            return bad(format!("expected exactly one reference bus, found {}", refs.len()));
        }
        let mut gen_at = vec![false; n];
        for g in &self.generators {
            if g.bus >= n {
                return bad(format!("generator at undefined bus index {}", g.bus));
            }
            if gen_at[g.bus] {
                return bad(format!("two generator records at bus {}", self.buses[g.bus].id));
            }
            gen_at[g.bus] = true;
            if !(g.p_min <= g.p_max) || !(g.q_min <= g.q_max) {
                return bad(format!("generator at bus {} has crossed limits", self.buses[g.bus].id));
            }
        }
        if self.cost.len() != self.generators.len() {
            return bad("cost rows do not match generators".into());
        }
        if let Some(c) = self.cost.iter().find(|c| !(c.q_ii >= 0.0)) {
            return bad(format!("non-convex cost coefficient {}", c.q_ii));
        }
        for (i, b) in self.buses.iter().enumerate() {
            let is_gen = matches!(b.kind, BusKind::Generator | BusKind::Reference);
            if is_gen != gen_at[i] {
                return bad(format!("bus {} kind {:?} disagrees with generator data", b.id, b.kind));
            }
            if !(b.v_min < b.v_max) || b.v_min <= 0.0 {
                return bad(format!("bus {} has invalid voltage limits", b.id));
            }
            if i == self.ref_bus {
                if b.theta_min > b.theta_max {
                    return bad("reference angle bounds crossed".into());
                }
            } else if !(b.theta_min < b.theta_max) {
                return bad(format!("bus {} has invalid angle limits", b.id));
            }
            if !b.p_demand.is_finite() || !b.q_demand.is_finite() {
                return bad(format!("bus {} has non-finite demand", b.id));
            }
        }
        for br in &self.branches {
            if br.from >= n || br.to >= n {
                return bad("branch endpoint is not a defined bus".into());
            }
            if br.from == br.to {
                return bad(format!("self-loop at bus {}", self.buses[br.from].id));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return bad("branch with zero impedance".into());
            }
            if let Some(d) = br.d_max {
                if !(d > 0.0) {
                    return bad("branch limit must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Text of the cases shipped with the crate.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "case9" => Some(include_str!("../../../../cases/case9.m")),
        "case30" => Some(include_str!("../../../../cases/case30.m")),
        "case118" => Some(include_str!("../../../../cases/case118.m")),
        "case300" => Some(include_str!("../../../../cases/case300.m")),
        _ => None,
    }
}

/// Loads a case from a file path, falling back to a built-in case name.
pub fn load_case(path_or_name: &str, opts: &ParseOptions) -> Result<NetworkCase> {
    let path = Path::new(path_or_name);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        let mut case = parse_case_with(&text, opts)?;
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            case.name = stem.to_string();
        }
        return Ok(case);
    }
    match builtin(path_or_name) {
        Some(text) => parse_case_with(text, opts),
        None => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no case file or built-in case named `{path_or_name}`"),
        ))),
    }
}

/// A validated case together with its admittance matrix and index maps.
/// Immutable once built, shared read-only between workers.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: NetworkCase,
    pub ybus: AdmittanceMatrix,
    /// Generator index at each bus.
    pub gen_of_bus: Vec<Option<usize>>,
    /// Load buses in ascending order.
    pub load_buses: Vec<usize>,
    /// Branches carrying a finite limit, in branch order.
    pub limited: Vec<usize>,
}

impl Network {
    pub fn new(case: NetworkCase) -> Result<Self> {
        case.validate()?;
        let ybus = build_admittance(&case)?;
        let mut gen_of_bus = vec![None; case.n_bus()];
        for (k, g) in case.generators.iter().enumerate() {
            gen_of_bus[g.bus] = Some(k);
        }
        if gen_of_bus[case.ref_bus].is_none() {
            return Err(Error::Validation("reference bus hosts no generator".into()));
        }
        let load_buses = (0..case.n_bus()).filter(|&i| gen_of_bus[i].is_none()).collect();
        let limited = (0..case.n_branch())
            .filter(|&l| case.branches[l].d_max.is_some())
            .collect();
        Ok(Self {
            case,
            ybus,
            gen_of_bus,
            load_buses,
            limited,
        })
    }

    pub fn load(path_or_name: &str, opts: &ParseOptions) -> Result<Self> {
        Self::new(load_case(path_or_name, opts)?)
    }

    pub fn n_bus(&self) -> usize {
        self.case.n_bus()
    }

    pub fn n_gen(&self) -> usize {
        self.case.n_gen()
    }

    pub fn n_load(&self) -> usize {
        self.load_buses.len()
    }

    pub fn ref_bus(&self) -> usize {
        self.case.ref_bus
    }

    pub fn ref_gen(&self) -> usize {
        self.gen_of_bus[self.case.ref_bus].expect("checked in Network::new")
    }

    /// A copy with every demand multiplied by `scale`.
    pub fn scaled_demand(&self, scale: f64) -> Result<Self> {
        let mut case = self.case.clone();
        for b in &mut case.buses {
            b.p_demand *= scale;
            b.q_demand *= scale;
        }
        Self::new(case)
    }
}
