use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;
use shakeout::glm::{check_propositions, mc_agreement_suite, AgreementRecord};
use shakeout::{GlmKind, GlmSpec, PropositionReport, RngStream};

use crate::config::Defaults;
use crate::manifest::RunDir;
use crate::Outcome;

/// Agreement beyond this many standard errors counts as a failure.
pub const Z_LIMIT: f64 = 4.0;

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    /// linear or logistic.
    #[arg(long)]
    pub spec: Option<String>,
    /// Random instances for the proposition checks.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Monte-Carlo draws per agreement instance.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Instances in the Monte-Carlo agreement suite.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Largest feature count in the agreement suite.
    #[arg(long)]
    pub max_p: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out/certify")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct AgreementRow {
    p: usize,
    tau: f64,
    c: f64,
    closed_form: f64,
    enumerated: f64,
    mc_mean: f64,
    mc_std_error: f64,
    z_closed_form: f64,
    z_enumerated: f64,
    closed_form_exact: bool,
}

impl From<&AgreementRecord> for AgreementRow {
    fn from(r: &AgreementRecord) -> Self {
        Self {
            p: r.instance.w.len(),
            tau: r.instance.params.tau,
            c: r.instance.params.c,
            closed_form: r.closed_form,
            enumerated: r.enumerated,
            mc_mean: r.mc.mean,
            mc_std_error: r.mc.std_error,
            z_closed_form: r.z_closed_form(),
            z_enumerated: r.z_enumerated(),
            closed_form_exact: r.closed_form_is_exact(),
        }
    }
}

#[derive(Debug, Serialize)]
struct AgreementSummary {
    instances: usize,
    draws: usize,
    max_p: usize,
    z_limit: f64,
    /// MC disagrees with the exact `2^p` expectation.
    enumeration_failures: usize,
    /// MC disagrees with the closed form where the closed form is exact.
    closed_form_failures: usize,
    /// Closed form off the expectation where it is not claimed exact.
    closed_form_gaps: usize,
    rows: Vec<AgreementRow>,
}

#[derive(Debug, Serialize)]
struct CertifyReport {
    spec: GlmKind,
    seed: u64,
    propositions: PropositionReport,
    agreement: AgreementSummary,
    violations: usize,
    passed: bool,
}

pub fn run(mut args: CertifyArgs, defaults: &Defaults) -> Result<Outcome> {
    defaults.fill(&mut args.spec, "spec")?;
    defaults.fill(&mut args.trials, "trials")?;
    defaults.fill(&mut args.draws, "draws")?;
    defaults.fill(&mut args.instances, "instances")?;
    defaults.fill(&mut args.max_p, "max_p")?;
    defaults.fill(&mut args.seed, "seed")?;
    let kind: GlmKind = args.spec.get_or_insert_with(|| "logistic".into()).parse()?;
    let spec = GlmSpec::from_kind(kind)?;
    let trials = *args.trials.get_or_insert(1000);
    let draws = *args.draws.get_or_insert(100_000);
    let instances = *args.instances.get_or_insert(100);
    let max_p = *args.max_p.get_or_insert(8);
    let seed = *args.seed.get_or_insert(0);
    if trials == 0 || instances == 0 || max_p == 0 {
        bail!(shakeout::Error::Parameter("--trials, --instances and --max-p must be positive".into()));
    }

    let mut run = RunDir::create(&args.out, "certify-glm", &args, seed)?;
    let propositions = check_propositions(&spec, trials, &RngStream::derive(seed, &[0]))?;
    let records = mc_agreement_suite(&[spec], instances, draws, max_p, &RngStream::derive(seed, &[1]))?;

    let enumeration_failures = records.iter().filter(|r| !(r.z_enumerated() <= Z_LIMIT)).count();
    let closed_form_failures =
        records.iter().filter(|r| r.closed_form_is_exact() && !(r.z_closed_form() <= Z_LIMIT)).count();
    let closed_form_gaps =
        records.iter().filter(|r| !r.closed_form_is_exact() && !(r.z_closed_form() <= Z_LIMIT)).count();
    let violations = propositions.violations.len() + enumeration_failures + closed_form_failures;
    let report = CertifyReport {
        spec: kind,
        seed,
        propositions,
        agreement: AgreementSummary {
            instances,
            draws,
            max_p,
            z_limit: Z_LIMIT,
            enumeration_failures,
            closed_form_failures,
            closed_form_gaps,
            rows: records.iter().map(AgreementRow::from).collect(),
        },
        violations,
        passed: violations == 0,
    };
    run.write_json("certify_report.json", &report)?;

    eprintln!(
        "certify-glm {}: {} proposition violations, {}/{} enumeration failures, {} closed-form failures, {} informational gaps",
        kind_name(kind),
        report.propositions.violations.len(),
        enumeration_failures,
        instances,
        closed_form_failures,
        closed_form_gaps,
    );
    Ok(if violations == 0 { Outcome::Ok } else { Outcome::Violations })
}

fn kind_name(kind: GlmKind) -> &'static str {
    match kind {
        GlmKind::Linear => "linear",
        GlmKind::Logistic => "logistic",
        GlmKind::Custom => "custom",
    }
}
