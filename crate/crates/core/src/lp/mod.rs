//! Exact solver for the continuous daily subproblem.
//!
//! Linear programs are carried in a canonical container: a minimization
//! objective, sparse equality and `row·x <= rhs` inequality rows, and
//! two-sided variable bounds (infinities permitted). The solver is a
//! bounded-variable primal simplex (see [`simplex`]); independent blocks of
//! the constraint matrix are split off first and solved separately, which
//! keeps the basis small when a problem decomposes.

mod simplex;
mod writer;

pub use writer::write_lp_format;

use thiserror::Error;

/// Feasibility tolerance (applied after equilibration scaling).
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("invalid linear program: {0}")]
    Invalid(String),
    #[error("iteration cap {0} exceeded")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One sparse constraint row: `sum(vals[k] * x[cols[k]])` compared to `rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn new(cols: Vec<usize>, vals: Vec<f64>, rhs: f64) -> Self {
        SparseRow { cols, vals, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, &v)| v * x[c]).sum()
    }
}

/// Canonical minimization LP with equality rows, `<=` rows and variable
/// bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub ineq_rows: Vec<SparseRow>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub names: Option<Vec<String>>,
}

impl LinearProgram {
    /// All variables free, zero objective.
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            eq_rows: Vec::new(),
            ineq_rows: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; n_vars],
            upper_bounds: vec![f64::INFINITY; n_vars],
            names: None,
        }
    }

    pub fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.n_vars
            || self.lower_bounds.len() != self.n_vars
            || self.upper_bounds.len() != self.n_vars
        {
            return Err(LpError::Invalid(format!(
                "vector lengths (obj {}, lo {}, up {}) do not match n_vars {}",
                self.objective.len(),
                self.lower_bounds.len(),
                self.upper_bounds.len(),
                self.n_vars
            )));
        }
        if let Some(names) = &self.names {
            if names.len() != self.n_vars {
                return Err(LpError::Invalid("names length mismatch".into()));
            }
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::Invalid(format!("objective[{j}] not finite")));
            }
        }
        for j in 0..self.n_vars {
            let (lo, up) = (self.lower_bounds[j], self.upper_bounds[j]);
            if lo.is_nan() || up.is_nan() || lo == f64::INFINITY || up == f64::NEG_INFINITY {
                return Err(LpError::Invalid(format!("bounds of variable {j} malformed")));
            }
            if lo > up {
                return Err(LpError::Invalid(format!(
                    "variable {j} has lower bound {lo} above upper bound {up}"
                )));
            }
        }
        for (kind, rows) in [("eq", &self.eq_rows), ("ineq", &self.ineq_rows)] {
            for (i, row) in rows.iter().enumerate() {
                if row.cols.len() != row.vals.len() {
                    return Err(LpError::Invalid(format!("{kind} row {i}: ragged storage")));
                }
                if !row.rhs.is_finite() {
                    return Err(LpError::Invalid(format!("{kind} row {i}: rhs not finite")));
                }
                let mut seen = vec![false; 0];
                seen.resize(self.n_vars, false);
                for (&c, &v) in row.cols.iter().zip(&row.vals) {
                    if c >= self.n_vars {
                        return Err(LpError::Invalid(format!(
                            "{kind} row {i}: column {c} out of range"
                        )));
                    }
                    if !v.is_finite() {
                        return Err(LpError::Invalid(format!(
                            "{kind} row {i}: coefficient on column {c} not finite"
                        )));
                    }
                    if seen[c] {
                        return Err(LpError::Invalid(format!(
                            "{kind} row {i}: duplicate column {c}"
                        )));
                    }
                    seen[c] = true;
                }
            }
        }
        Ok(())
    }

    pub fn var_name(&self, j: usize) -> String {
        match &self.names {
            Some(names) => names[j].clone(),
            None => format!("v{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Meaningful only when `status == Optimal`.
    pub objective_value: f64,
    /// Empty unless `status == Optimal`.
    pub primal: Vec<f64>,
    pub iterations: usize,
}

/// Where a candidate point breaks a constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    Equality,
    Inequality,
    LowerBound,
    UpperBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub objective: f64,
    pub max_violation: f64,
    /// Violations above the requested tolerance, in constraint order.
    pub violations: Vec<Violation>,
}

/// Pure feasibility/objective check of a candidate point.
pub fn verify(lp: &LinearProgram, candidate: &[f64], tol: f64) -> Result<FeasibilityReport, LpError> {
    if candidate.len() != lp.n_vars {
        return Err(LpError::Invalid(format!(
            "candidate length {} does not match n_vars {}",
            candidate.len(),
            lp.n_vars
        )));
    }
    let mut violations = Vec::new();
    let mut max_violation = 0.0f64;
    let mut push = |kind, index, magnitude: f64| {
        if magnitude > max_violation {
            max_violation = magnitude;
        }
        if magnitude > tol {
            violations.push(Violation { kind, index, magnitude });
        }
    };
    for (i, row) in lp.eq_rows.iter().enumerate() {
        push(ViolationKind::Equality, i, (row.dot(candidate) - row.rhs).abs());
    }
    for (i, row) in lp.ineq_rows.iter().enumerate() {
        push(ViolationKind::Inequality, i, (row.dot(candidate) - row.rhs).max(0.0));
    }
    for j in 0..lp.n_vars {
        push(ViolationKind::LowerBound, j, (lp.lower_bounds[j] - candidate[j]).max(0.0));
        push(ViolationKind::UpperBound, j, (candidate[j] - lp.upper_bounds[j]).max(0.0));
    }
    let objective = lp.objective.iter().zip(candidate).map(|(c, x)| c * x).sum();
    Ok(FeasibilityReport { objective, max_violation, violations })
}

/// Solves the LP exactly. The result is a vertex solution when optimal;
/// infeasibility and unboundedness are certified by the phase-1 outcome and
/// by unbounded-ray detection respectively.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;

    // Split into independent blocks so each simplex runs on the smallest
    // basis possible. Variables appearing in no row are resolved directly
    // from their objective sign.
    let comps = connected_components(lp);

    let mut primal = vec![0.0; lp.n_vars];
    let mut iterations = 0usize;
    let mut infeasible = false;
    let mut unbounded = false;

    // Isolated variables.
    for j in 0..lp.n_vars {
        if comps.var_component[j].is_some() {
            continue;
        }
        let c = lp.objective[j];
        let (lo, up) = (lp.lower_bounds[j], lp.upper_bounds[j]);
        let v = if c > 0.0 {
            lo
        } else if c < 0.0 {
            up
        } else if lo.is_finite() {
            lo
        } else if up.is_finite() {
            up
        } else {
            0.0
        };
        if v.is_infinite() {
            unbounded = true;
        } else {
            primal[j] = v;
        }
    }

    // Rows with no variables are pure feasibility statements.
    for row in &lp.eq_rows {
        if row.cols.is_empty() && row.rhs.abs() > FEASIBILITY_TOL {
            infeasible = true;
        }
    }
    for row in &lp.ineq_rows {
        if row.cols.is_empty() && row.rhs < -FEASIBILITY_TOL {
            infeasible = true;
        }
    }

    for comp in &comps.components {
        if infeasible {
            break;
        }
        let sub = extract_component(lp, comp);
        let sol = simplex::solve_component(&sub)?;
        iterations += sol.iterations;
        match sol.status {
            LpStatus::Infeasible => infeasible = true,
            LpStatus::Unbounded => unbounded = true,
            LpStatus::Optimal => {
                for (local, &global) in comp.vars.iter().enumerate() {
                    primal[global] = sol.primal[local];
                }
            }
        }
    }

    if infeasible {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            objective_value: f64::NAN,
            primal: Vec::new(),
            iterations,
        });
    }
    if unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective_value: f64::NEG_INFINITY,
            primal: Vec::new(),
            iterations,
        });
    }
    let objective_value = lp.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
    Ok(LpSolution { status: LpStatus::Optimal, objective_value, primal, iterations })
}

struct Component {
    vars: Vec<usize>,
    eq_rows: Vec<usize>,
    ineq_rows: Vec<usize>,
}

struct Components {
    var_component: Vec<Option<usize>>,
    components: Vec<Component>,
}

fn connected_components(lp: &LinearProgram) -> Components {
    let n = lp.n_vars;
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }

    let mut in_row = vec![false; n];
    for row in lp.eq_rows.iter().chain(&lp.ineq_rows) {
        if let Some(&first) = row.cols.first() {
            let root = find(&mut parent, first);
            for &c in &row.cols[1..] {
                let r = find(&mut parent, c);
                parent[r] = root;
            }
        }
        for &c in &row.cols {
            in_row[c] = true;
        }
    }

    let mut comp_of_root = std::collections::HashMap::new();
    let mut components: Vec<Component> = Vec::new();
    let mut var_component = vec![None; n];
    for j in 0..n {
        if !in_row[j] {
            continue;
        }
        let root = find(&mut parent, j);
        let id = *comp_of_root.entry(root).or_insert_with(|| {
            components.push(Component { vars: Vec::new(), eq_rows: Vec::new(), ineq_rows: Vec::new() });
            components.len() - 1
        });
        components[id].vars.push(j);
        var_component[j] = Some(id);
    }
    for (i, row) in lp.eq_rows.iter().enumerate() {
        if let Some(&first) = row.cols.first() {
            let id = var_component[first].expect("row var mapped");
            components[id].eq_rows.push(i);
        }
    }
    for (i, row) in lp.ineq_rows.iter().enumerate() {
        if let Some(&first) = row.cols.first() {
            let id = var_component[first].expect("row var mapped");
            components[id].ineq_rows.push(i);
        }
    }
    Components { var_component, components }
}

fn extract_component(lp: &LinearProgram, comp: &Component) -> LinearProgram {
    let mut local_of = std::collections::HashMap::with_capacity(comp.vars.len());
    for (local, &global) in comp.vars.iter().enumerate() {
        local_of.insert(global, local);
    }
    let remap = |row: &SparseRow| SparseRow {
        cols: row.cols.iter().map(|c| local_of[c]).collect(),
        vals: row.vals.clone(),
        rhs: row.rhs,
    };
    LinearProgram {
        n_vars: comp.vars.len(),
        objective: comp.vars.iter().map(|&j| lp.objective[j]).collect(),
        eq_rows: comp.eq_rows.iter().map(|&i| remap(&lp.eq_rows[i])).collect(),
        ineq_rows: comp.ineq_rows.iter().map(|&i| remap(&lp.ineq_rows[i])).collect(),
        lower_bounds: comp.vars.iter().map(|&j| lp.lower_bounds[j]).collect(),
        upper_bounds: comp.vars.iter().map(|&j| lp.upper_bounds[j]).collect(),
        names: None,
    }
}
