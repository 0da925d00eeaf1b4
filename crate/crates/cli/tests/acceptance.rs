//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
//! Tolerances are fixed here and do not follow `BJL_TOL_SCALE`.

use bjl_cli::scenario::{Bound, Step};
use bjl_cli::{run, Check, Report, RunOptions, Scenario};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Bound applied to every check whose name starts with the prefix.
struct Rule {
    prefix: &'static str,
    bound: Bound,
}

const fn at_most(prefix: &'static str, t: f64) -> Rule {
    Rule { prefix, bound: Bound::AtMost(t) }
}

const fn at_least(prefix: &'static str, t: f64) -> Rule {
    Rule { prefix, bound: Bound::AtLeast(t) }
}

struct Criterion {
    id: usize,
    title: &'static str,
    op: &'static str,
    params: Value,
    rules: Vec<Rule>,
    max_seconds: Option<f64>,
    extra: fn(&[Check], &Value) -> Result<(), String>,
}

fn none(_: &[Check], _: &Value) -> Result<(), String> {
    Ok(())
}

fn indices(checks: &[Check], prefix: &str, part: usize) -> BTreeSet<String> {
    checks
        .iter()
        .filter_map(|c| c.name.strip_prefix(prefix))
        .filter_map(|rest| rest.split('_').nth(part).map(str::to_string))
        .collect()
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: 1,
            title: "circle oracle suite",
            op: "circle_suite",
            params: json!({"polygons": [2, 3, 4, 8]}),
            rules: vec![at_most("circle_", 1e-10)],
            max_seconds: Some(5.0),
            extra: |checks, _| {
                let polys = indices(checks, "circle_polygon_", 0);
                let want: BTreeSet<String> = ["2", "3", "4", "8"].iter().map(|s| s.to_string()).collect();
                (polys == want).then_some(()).ok_or(format!("polygons checked: {polys:?}"))
            },
        },
        Criterion {
            id: 2,
            title: "area preservation and twist",
            op: "area_twist",
            params: json!({"points": 10000}),
            rules: vec![at_most("area_form", 1e-11), at_least("twist", 1e-12)],
            max_seconds: Some(30.0),
            extra: |_, v| {
                let ok = v["points"].as_u64().unwrap_or(0) >= 10_000 && v["domains"].as_u64() == Some(5);
                ok.then_some(()).ok_or(format!("sampled {} points on {} domains", v["points"], v["domains"]))
            },
        },
        Criterion {
            id: 3,
            title: "jet vs finite differences",
            op: "jet_fd",
            params: json!({"points": 10, "order": 4}),
            rules: vec![at_most("jet_vs_fd", 1e-4)],
            max_seconds: None,
            extra: none,
        },
        Criterion {
            id: 4,
            title: "first-order slope law",
            op: "slope_law",
            params: Value::Null,
            rules: vec![Rule { prefix: "slope_ratio_", bound: Bound::Within(6.0, 14.0) }],
            max_seconds: None,
            extra: |checks, _| {
                let n = indices(checks, "slope_ratio_", 0).len();
                (n >= 3).then_some(()).ok_or(format!("{n} orbits"))
            },
        },
        Criterion {
            id: 5,
            title: "determinant certificate",
            op: "m_determinant",
            params: Value::Null,
            rules: vec![at_most("det_agreement_", 1e-7), at_least("det_nonzero_", 1e-12), at_least("twist_condition_", 1e-8)],
            max_seconds: None,
            extra: |checks, _| {
                let orders = indices(checks, "det_agreement_", 1);
                let want: BTreeSet<String> = ["0", "1", "2"].iter().map(|s| s.to_string()).collect();
                (orders == want).then_some(()).ok_or(format!("orders checked: {orders:?}"))
            },
        },
        Criterion {
            id: 6,
            title: "independence of targeted coefficients",
            op: "independence",
            params: json!({"orders": [1, 2], "scale": 1e-4}),
            rules: vec![at_most("leakage_", 0.1), at_most("lower_order_", 10.0)],
            max_seconds: None,
            extra: |checks, _| {
                let lower = checks.iter().filter(|c| c.name.starts_with("lower_order_")).count();
                (lower >= 2).then_some(()).ok_or(format!("{lower} lower-order ratio checks"))
            },
        },
        Criterion {
            id: 7,
            title: "phi-partial recovery",
            op: "phi_recovery",
            params: json!({"max_order": 3}),
            rules: vec![at_most("phi_partials_", 1e-7)],
            max_seconds: None,
            extra: |checks, _| {
                let n = indices(checks, "phi_partials_", 0).len();
                (n >= 3).then_some(()).ok_or(format!("{n} orbits"))
            },
        },
        Criterion {
            id: 8,
            title: "rotation of the monodromy",
            op: "rotation",
            params: json!({"delta": 1e-3, "orders": [0, 1]}),
            rules: vec![at_most("rotated_block_", 1e-5), at_most("restored_order_", 100.0 * 1e-3 * 1e-3)],
            max_seconds: None,
            extra: |checks, _| {
                let restored = checks.iter().any(|c| c.name.starts_with("restored_order_2_1"));
                restored.then_some(()).ok_or("second order not restored for n = 1".into())
            },
        },
        Criterion {
            id: 9,
            title: "displacement scaling",
            op: "lift_scaling",
            params: Value::Null,
            rules: vec![at_least("iterates", 5.0), at_most("decay_slope", 0.1)],
            max_seconds: None,
            extra: none,
        },
        Criterion {
            id: 10,
            title: "generating length identities",
            op: "length_identities",
            params: Value::Null,
            rules: vec![at_most("length_ds0", 1e-9), at_most("length_dphi0", 1e-9)],
            max_seconds: None,
            extra: none,
        },
        Criterion {
            id: 11,
            title: "Lazutkin residual exponents",
            op: "lazutkin",
            params: Value::Null,
            rules: vec![Rule { prefix: "exponent_gap", bound: Bound::Within(0.8, 1.2) }, at_most("circle_residual", 1e-12)],
            max_seconds: None,
            extra: none,
        },
        Criterion {
            id: 12,
            title: "tangency pipeline",
            op: "tangency_family",
            params: Value::Null,
            rules: vec![at_most("tangency_value", 1e-8), at_most("tangency_slope", 1e-6), at_least("unfolding_det", 1e-12)],
            max_seconds: None,
            extra: none,
        },
    ]
}

fn execute(c: &Criterion) -> Result<Report, String> {
    let scenario = Scenario {
        name: format!("criterion_{}", c.id),
        domain: None,
        pipeline: vec![Step { op: c.op.into(), params: c.params.clone() }],
        tolerances: BTreeMap::new(),
        seed: 0,
    };
    let opts = RunOptions { timing: true, tolerance_scale: 1.0, output_dir: None };
    run(&scenario, Path::new("."), &opts).map_err(|e| e.to_string())
}

fn judge(c: &Criterion) -> Result<String, String> {
    let report = execute(c)?;
    let step = &report.steps[0];
    if let Some(f) = step.failures.first() {
        return Err(f.clone());
    }
    if step.checks.is_empty() {
        return Err("no checks reported".into());
    }
    let mut worst = String::new();
    for check in &step.checks {
        let rule = c.rules.iter().find(|r| check.name.starts_with(r.prefix)).ok_or(format!("unpinned check {}", check.name))?;
        if !check.measured.is_finite() || !rule.bound.holds(check.measured) {
            return Err(format!("{}: measured {:e}, pinned bound {:?}", check.name, check.measured, rule.bound));
        }
        worst = format!("{} = {:e}", check.name, check.measured);
    }
    (c.extra)(&step.checks, &step.values)?;
    let seconds = step.seconds.unwrap_or(0.0);
    if let Some(limit) = c.max_seconds {
        if seconds >= limit {
            return Err(format!("runtime {seconds:.2} s, limit {limit} s"));
        }
    }
    Ok(format!("{} checks, last {worst}, {seconds:.2} s", step.checks.len()))
}

fn main() {
    let mut failed = vec![];
    for c in criteria() {
        match judge(&c) {
            Ok(detail) => println!("PASS criterion {:>2} ({}): {detail}", c.id, c.title),
            Err(why) => {
                println!("FAIL criterion {:>2} ({}): {why}", c.id, c.title);
                failed.push(c.id);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
