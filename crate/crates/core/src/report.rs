//! Pass/fail reports with per-condition residuals, shared by the measure
//! validator and the maximum-principle checkers.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub residual: f64,
    pub location: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub tol: f64,
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn new(tol: f64) -> Self {
        ValidationReport {
            tol,
            checks: Vec::new(),
        }
    }

    pub fn record(&mut self, name: impl Into<String>, residual: f64, location: impl Into<String>) {
        let pass = residual.is_finite() && residual <= self.tol;
        self.checks.push(ConditionCheck {
            name: name.into(),
            residual,
            location: location.into(),
            pass,
        });
    }

    /// Record a condition whose pass criterion is not a residual threshold.
    pub fn record_flag(
        &mut self,
        name: impl Into<String>,
        residual: f64,
        location: impl Into<String>,
        pass: bool,
    ) {
        self.checks.push(ConditionCheck {
            name: name.into(),
            residual,
            location: location.into(),
            pass,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self) -> Option<&ConditionCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.residual.partial_cmp(&b.residual).unwrap())
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {:<18} residual {:>12.3e}  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.residual,
                c.location
            ));
        }
        s
    }
}
