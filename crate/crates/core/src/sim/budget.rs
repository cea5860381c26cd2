//! Annotation time-budget simulation: how many instances each annotation
//! method covers within a budget, and what accuracy retraining on that many
//! feedback instances buys.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationMethod {
    pub name: String,
    pub seconds_per_instance: f64,
}

impl AnnotationMethod {
    pub fn new(name: &str, seconds_per_instance: f64) -> Self {
        Self {
            name: name.to_string(),
            seconds_per_instance,
        }
    }
}

/// Explanation-feedback tool (~60 s per instance) and traditional labeling
/// (~110 s per instance).
pub fn default_methods() -> Vec<AnnotationMethod> {
    vec![
        AnnotationMethod::new("tool", 60.0),
        AnnotationMethod::new("traditional", 110.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub method: String,
    pub budget_s: f64,
    pub instances: usize,
    pub accuracy: f64,
}

/// `floor(budget * annotators / cost)`.
pub fn instances_annotatable(budget_s: f64, seconds_per_instance: f64, annotators: usize) -> usize {
    (budget_s * annotators as f64 / seconds_per_instance).floor() as usize
}

/// Evaluates `accuracy_for(instances)` for every `(method, budget)` pair.
/// Instance counts shared across methods are evaluated once. Parallel
/// annotators multiply the effective budget.
pub fn simulate_budget<F>(
    methods: &[AnnotationMethod],
    budgets: &[f64],
    annotators: usize,
    mut accuracy_for: F,
) -> Result<Vec<BudgetPoint>>
where
    F: FnMut(usize) -> Result<f64>,
{
    if annotators == 0 {
        return Err(Error::Argument("need at least one annotator".into()));
    }
    if let Some(b) = budgets.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::Argument(format!("budget {b} must be a finite value >= 0")));
    }
    if let Some(m) = methods
        .iter()
        .find(|m| !(m.seconds_per_instance > 0.0 && m.seconds_per_instance.is_finite()))
    {
        return Err(Error::Argument(format!(
            "method {:?} needs a positive per-instance cost",
            m.name
        )));
    }
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut points = Vec::with_capacity(methods.len() * budgets.len());
    for method in methods {
        for &budget_s in budgets {
            let instances = instances_annotatable(budget_s, method.seconds_per_instance, annotators);
            let accuracy = match cache.get(&instances) {
                Some(&a) => a,
                None => {
                    let a = accuracy_for(instances)?;
                    cache.insert(instances, a);
                    a
                }
            };
            points.push(BudgetPoint {
                method: method.name.clone(),
                budget_s,
                instances,
                accuracy,
            });
        }
    }
    Ok(points)
}

/// Columns `method, budget_s, instances, accuracy`.
pub fn write_budget_csv<W: std::io::Write>(points: &[BudgetPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "budget_s", "instances", "accuracy"])?;
    for p in points {
        w.write_record([
            p.method.clone(),
            format!("{}", p.budget_s),
            p.instances.to_string(),
            format!("{:.4}", p.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_budget_csv(points: &[BudgetPoint], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
    write_budget_csv(points, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hour_budget() {
        assert_eq!(instances_annotatable(3600.0, 60.0, 1), 60);
        assert_eq!(instances_annotatable(3600.0, 110.0, 1), 32);
        assert_eq!(instances_annotatable(3600.0, 60.0, 2), 120);
    }

    #[test]
    fn zero_budget_uses_zero_instances() {
        let points = simulate_budget(&default_methods(), &[0.0], 1, |n| Ok(n as f64)).unwrap();
        assert!(points.iter().all(|p| p.instances == 0 && p.accuracy == 0.0));
    }

    #[test]
    fn hook_called_once_per_count() {
        let mut calls = Vec::new();
        simulate_budget(&default_methods(), &[0.0, 50.0, 3600.0], 1, |n| {
            calls.push(n);
            Ok(0.5)
        })
        .unwrap();
        // 0 s and 50 s both give 0 instances for both methods.
        assert_eq!(calls, [0, 60, 32]);
    }

    #[test]
    fn negative_budget_is_rejected() {
        assert!(simulate_budget(&default_methods(), &[-1.0], 1, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn csv_layout() {
        let points = vec![BudgetPoint {
            method: "tool".into(),
            budget_s: 3600.0,
            instances: 60,
            accuracy: 0.8125,
        }];
        let mut buf = Vec::new();
        write_budget_csv(&points, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,budget_s,instances,accuracy\ntool,3600,60,0.8125\n"
        );
    }
}
