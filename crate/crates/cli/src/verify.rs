use std::path::Path;

use serde_json::json;
use torus_mfg::archive::write_json;
use torus_mfg::lemmas::{lemma_suite, LemmaOutcome};
use torus_mfg::verify::{adjoint_suite, identity_suite};

use crate::{Failure, Outcome, Suite, EXIT_CONFIG, EXIT_VERIFY};

struct Run {
    suite: &'static str,
    beta: f64,
    checks: Vec<LemmaOutcome>,
}

fn beta_tag(beta: f64) -> String {
    format!("{beta}").replace('.', "p")
}

pub fn cmd_verify(suite: Suite, seed: u64, samples: usize, betas: &[f64], out: &Path) -> Outcome {
    if samples == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--samples must be positive"));
    }
    if let Some(b) = betas.iter().find(|&&b| !(b > 1.0 && b.is_finite())) {
        return Err(Failure::new(EXIT_CONFIG, format!("beta > 1 is required, got {b}")));
    }
    std::fs::create_dir_all(out).map_err(torus_mfg::MfgError::from)?;
    let wants = |s: Suite| suite == Suite::All || suite == s;
    let mut runs = Vec::new();
    for &beta in betas {
        let tag = beta_tag(beta);
        if wants(Suite::Lemmas) {
            let r = lemma_suite(beta, samples, seed)?;
            write_json(&out.join(format!("lemmas_beta_{tag}.json")), &r)?;
            runs.push(Run { suite: "lemmas", beta, checks: r.lemmas });
        }
        if wants(Suite::Identity) {
            let r = identity_suite(beta, samples, seed)?;
            write_json(&out.join(format!("identity_beta_{tag}.json")), &r)?;
            runs.push(Run { suite: "identity", beta, checks: r.checks });
        }
        if wants(Suite::Adjoint) {
            let r = adjoint_suite(beta, samples, seed)?;
            write_json(&out.join(format!("adjoint_beta_{tag}.json")), &r)?;
            runs.push(Run { suite: "adjoint", beta, checks: r.checks });
        }
    }
    let mut failed = 0;
    let mut summary = Vec::new();
    for run in &runs {
        for c in &run.checks {
            let status = if c.pass { "pass" } else { "FAIL" };
            println!(
                "{status} {} beta={} {}: worst margin {:.3e} over {} samples",
                run.suite, run.beta, c.lemma_id, c.worst_margin, c.samples
            );
            if !c.pass {
                failed += 1;
                println!("     worst sample: {}", c.worst_sample);
            }
            summary.push(json!({
                "suite": run.suite,
                "beta": run.beta,
                "check": c.lemma_id,
                "pass": c.pass,
                "worst_margin": c.worst_margin,
            }));
        }
    }
    write_json(
        &out.join("verify.json"),
        &json!({ "seed": seed, "samples": samples, "pass": failed == 0, "checks": summary }),
    )?;
    if failed == 0 {
        Ok(())
    } else {
        let first = runs
            .iter()
            .flat_map(|r| r.checks.iter().map(move |c| (r, c)))
            .find(|(_, c)| !c.pass)
            .map(|(r, c)| format!("{} (beta={}) failed at {}", c.lemma_id, r.beta, c.worst_sample))
            .unwrap_or_default();
        Err(Failure::new(EXIT_VERIFY, format!("{failed} checks failed; first: {first}")))
    }
}
