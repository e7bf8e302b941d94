//! Pass/fail summary; one or more rows per acceptance criterion.

use std::path::Path;

use crate::error::Result;
use crate::io::{Cell, Csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionRow {
    pub criterion: u8,
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<CriterionRow>,
}

impl Summary {
    /// `value <= threshold`; NaN fails.
    pub fn at_most(&mut self, criterion: u8, name: &str, value: f64, threshold: f64) {
        self.push(criterion, name, value, threshold, Relation::AtMost, value <= threshold);
    }

    /// `value >= threshold`; NaN fails.
    pub fn at_least(&mut self, criterion: u8, name: &str, value: f64, threshold: f64) {
        self.push(criterion, name, value, threshold, Relation::AtLeast, value >= threshold);
    }

    fn push(&mut self, criterion: u8, name: &str, value: f64, threshold: f64, relation: Relation, pass: bool) {
        self.rows.push(CriterionRow { criterion, name: name.to_string(), value, threshold, relation, pass });
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// True if the criterion has rows and all of them pass.
    pub fn criterion_passed(&self, criterion: u8) -> Option<bool> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.criterion == criterion).collect();
        if rows.is_empty() {
            None
        } else {
            Some(rows.iter().all(|r| r.pass))
        }
    }

    pub fn to_csv(&self) -> Csv {
        let mut t = Csv::new(&["criterion", "name", "value", "threshold", "pass"]);
        for r in &self.rows {
            let rel = match r.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            t.row(&[
                (r.criterion as usize).into(),
                Cell::S(format!("{} {rel}", r.name)),
                r.value.into(),
                r.threshold.into(),
                if r.pass { "true" } else { "false" }.into(),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.to_csv().write(&dir.join("summary.csv"))
    }

    pub fn lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let rel = if r.relation == Relation::AtMost { "<=" } else { ">=" };
                format!(
                    "criterion {:>2} {:<40} {:>12.4e} {rel} {:<10.3e} {}",
                    r.criterion,
                    r.name,
                    r.value,
                    r.threshold,
                    if r.pass { "PASS" } else { "FAIL" }
                )
            })
            .collect()
    }
}
