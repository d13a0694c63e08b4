use std::path::{Path, PathBuf};

use serde_json::json;
use torus_mfg::archive::write_json;
use torus_mfg::config::ProblemKind;
use torus_mfg::solver::study::{convergence_study, ergodic_study, StudyReport};

use crate::{load_config, output_dir, Failure, Outcome, EXIT_NOT_DECREASING};

fn fmt_order(v: Option<f64>) -> String {
    v.map_or_else(String::new, |o| format!("{o:.6}"))
}

fn write_study_csv(path: &Path, r: &StudyReport) -> torus_mfg::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(torus_mfg::MfgError::from)?;
    w.write_record([
        "level",
        "n_side",
        "n_steps",
        "h",
        "dt",
        "err_u_sup",
        "err_u_w1beta",
        "err_m",
        "order_u_sup",
        "order_u_w1beta",
        "order_m",
    ])
    .map_err(torus_mfg::MfgError::from)?;
    for (k, l) in r.levels.iter().enumerate() {
        let o = k.checked_sub(1).map(|i| &r.orders[i]);
        w.write_record([
            k.to_string(),
            l.n_side.to_string(),
            l.n_steps.to_string(),
            format!("{:e}", l.h),
            format!("{:e}", l.dt),
            format!("{:e}", l.err_u_sup),
            format!("{:e}", l.err_u_w1beta),
            format!("{:e}", l.err_m),
            fmt_order(o.map(|o| o.u_sup)),
            fmt_order(o.map(|o| o.u_w1beta)),
            fmt_order(o.map(|o| o.m)),
        ])
        .map_err(torus_mfg::MfgError::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_study(config: &Path, out: Option<PathBuf>) -> Outcome {
    let cfg = load_config(config)?;
    let dir = output_dir(out, &cfg)?;
    let levels = cfg.study_levels()?;
    let solver = cfg.solver_config();
    std::fs::create_dir_all(&dir).map_err(torus_mfg::MfgError::from)?;
    let decreasing = match cfg.problem.kind {
        ProblemKind::Evolutive => {
            let r = convergence_study(|g, nt| cfg.evolutive_problem(g.n_side(), nt), &levels, &solver)?;
            write_json(&dir.join("study.json"), &json!({ "config": cfg, "report": r }))?;
            write_study_csv(&dir.join("study.csv"), &r)?;
            println!(
                "{:>6} {:>6} {:>12} {:>12} {:>12} {:>8} {:>8} {:>8}",
                "N_h", "N_T", "err_u_sup", "err_u_w1b", "err_m", "ord_sup", "ord_w1b", "ord_m"
            );
            for (k, l) in r.levels.iter().enumerate() {
                let o = k.checked_sub(1).map(|i| &r.orders[i]);
                let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{:>6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>8} {:>8} {:>8}",
                    l.n_side,
                    l.n_steps,
                    l.err_u_sup,
                    l.err_u_w1beta,
                    l.err_m,
                    f(o.map(|o| o.u_sup)),
                    f(o.map(|o| o.u_w1beta)),
                    f(o.map(|o| o.m)),
                );
            }
            println!("reference N_h={} N_T={}", r.finest.n_side, r.finest.n_steps);
            r.strictly_decreasing
        }
        ProblemKind::Ergodic => {
            let sides: Vec<usize> = levels.iter().map(|l| l.n_side).collect();
            let r = ergodic_study(|g| cfg.ergodic_problem(g.n_side()), &sides, &solver)?;
            write_json(&dir.join("study.json"), &json!({ "config": cfg, "report": r }))?;
            let mut w = csv::Writer::from_path(dir.join("study.csv")).map_err(torus_mfg::MfgError::from)?;
            w.write_record(["level", "n_side", "h", "lambda", "increment"])
                .map_err(torus_mfg::MfgError::from)?;
            println!("{:>6} {:>18} {:>12}", "N_h", "lambda", "increment");
            for (k, l) in r.levels.iter().enumerate() {
                let inc = k.checked_sub(1).map(|i| r.increments[i]);
                w.write_record([
                    k.to_string(),
                    l.n_side.to_string(),
                    format!("{:e}", 1.0 / l.n_side as f64),
                    format!("{:e}", l.lambda),
                    inc.map_or_else(String::new, |v| format!("{v:e}")),
                ])
                .map_err(torus_mfg::MfgError::from)?;
                let shown = inc.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
                println!("{:>6} {:>18.12} {:>12}", l.n_side, l.lambda, shown);
            }
            w.flush().map_err(torus_mfg::MfgError::from)?;
            r.increments_decreasing
        }
    };
    if decreasing {
        Ok(())
    } else {
        Err(Failure::new(EXIT_NOT_DECREASING, "errors are not strictly decreasing"))
    }
}
