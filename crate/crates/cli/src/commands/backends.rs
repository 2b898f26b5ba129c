use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Subcommand};
use forgeline_core::annotation::DatasetManifest;
use forgeline_core::backends::config::EndpointConfig;
use forgeline_core::backends::conformance::{check_endpoint_with, ConformanceReport, Probe};
use forgeline_core::backends::http::{HttpBackend, RetryPolicy};
use forgeline_core::backends::server::serve;
use forgeline_core::backends::{build_mock_suite, Role};
use serde::Serialize;

use crate::context::{load_valid_manifest, Ctx, SCHEMA_VERSION};
use crate::exit;
use crate::options::Options;

#[derive(Debug, Subcommand)]
pub enum BackendsCmd {
    /// Show where each role is served and check HTTP endpoints are up.
    Ping,
    /// Serve the mock backends over HTTP until killed.
    ServeMock(ServeArgs),
    /// Check that a server speaks the wire protocol.
    Conformance(ConformanceArgs),
}

impl BackendsCmd {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ping => "ping",
            Self::ServeMock(_) => "serve-mock",
            Self::Conformance(_) => "conformance",
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Ground truth the oracle mocks answer from.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub addr: String,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    #[arg(long)]
    pub url: String,
    /// One role; all roles when omitted.
    #[arg(long, value_parser = parse_role)]
    pub role: Option<Role>,
    /// Probe with this manifest's first image and id instead of a synthetic image.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub timeout_ms: u64,
}

fn parse_role(s: &str) -> Result<Role, String> {
    Role::ALL
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| format!("unknown role `{s}`"))
}

#[derive(Serialize)]
struct ConformanceOut {
    schema_version: &'static str,
    kind: &'static str,
    url: String,
    passed: bool,
    reports: Vec<ConformanceReport>,
}

pub fn run(ctx: &Ctx, cmd: BackendsCmd) -> anyhow::Result<()> {
    match cmd {
        BackendsCmd::Ping => ping(ctx),
        BackendsCmd::ServeMock(a) => serve_mock(ctx, a),
        BackendsCmd::Conformance(a) => conformance(ctx, a),
    }
}

fn ping(ctx: &Ctx) -> anyhow::Result<()> {
    ctx.echo(&ctx.options(Options::default()), None)?;
    let config = ctx.backend_config();
    let mut down = 0;
    for role in Role::ALL {
        let ep = config.endpoint(role);
        let status = match &ep {
            EndpointConfig::Http { url, timeout_ms, .. } => {
                let client = HttpBackend::new(
                    role,
                    url,
                    Duration::from_millis(*timeout_ms),
                    RetryPolicy {
                        retries: 0,
                        backoff: Duration::ZERO,
                    },
                    1,
                );
                match client.health() {
                    Ok(h) if h.status == "ok" => "ok".to_string(),
                    Ok(h) => {
                        down += 1;
                        format!("unhealthy: {}", h.status)
                    }
                    Err(e) => {
                        down += 1;
                        format!("down: {e}")
                    }
                }
            }
            EndpointConfig::Mock { .. } => "in-process".into(),
            EndpointConfig::Disabled { .. } => "-".into(),
        };
        println!("{:<10} {:<32} {status}", role.as_str(), ep.describe());
    }
    if down > 0 {
        return Err(exit::backend(format!("{down} endpoint(s) unreachable")));
    }
    Ok(())
}

fn serve_mock(ctx: &Ctx, a: ServeArgs) -> anyhow::Result<()> {
    ctx.echo(&ctx.options(Options::default()), Some(&a.manifest))?;
    let m = load_valid_manifest(&a.manifest)?;
    let suite = build_mock_suite(&m, &ctx.backend_config().mock).map_err(exit::backend)?;
    let handle = serve(suite, &a.addr, a.threads.max(1)).map_err(|e| exit::backend(format!("{}: {e}", a.addr)))?;
    println!("listening on {}", handle.url());
    std::io::stdout().flush()?;
    handle.join();
    Ok(())
}

fn probe_from(m: &DatasetManifest) -> anyhow::Result<Probe> {
    let e = m
        .entries
        .first()
        .ok_or_else(|| exit::validation("manifest has no entries to probe with"))?;
    Ok(Probe {
        image: m.load_image(e).map_err(exit::validation)?,
        id: Some(e.id.clone()),
    })
}

fn conformance(ctx: &Ctx, a: ConformanceArgs) -> anyhow::Result<()> {
    ctx.echo(&ctx.options(Options::default()), a.manifest.as_deref())?;
    let probe = match &a.manifest {
        Some(p) => probe_from(&load_valid_manifest(p)?)?,
        None => Probe::default(),
    };
    let roles = a.role.map_or_else(|| Role::ALL.to_vec(), |r| vec![r]);
    let timeout = Duration::from_millis(a.timeout_ms);
    let reports: Vec<ConformanceReport> = roles
        .iter()
        .map(|&r| check_endpoint_with(r, &a.url, timeout, &probe))
        .collect();
    for r in &reports {
        for c in &r.checks {
            println!(
                "{} {:<10} {:<24} {}",
                if c.passed { "ok  " } else { "FAIL" },
                r.role.as_str(),
                c.name,
                c.detail
            );
        }
    }
    let passed = reports.iter().all(ConformanceReport::passed);
    ctx.write_json(
        "conformance.json",
        &ConformanceOut {
            schema_version: SCHEMA_VERSION,
            kind: "conformance",
            url: a.url.clone(),
            passed,
            reports,
        },
    )?;
    if !passed {
        return Err(exit::backend(format!("{} does not conform", a.url)));
    }
    Ok(())
}
