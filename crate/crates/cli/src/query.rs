//! `query`: one visualization request against a simulated or running fleet.

use std::fmt::Write as _;
use std::time::Duration;

use fedvis_core::compose::{compose_query, ChartSpec, Scheme};
use fedvis_core::metrics::{jsd_clipped, relative_error};
use fedvis_core::model::TrainConfig;
use fedvis_core::pipeline::{aggregate, apply_scope, BBox, FeatureVector, ScopeFilter};
use fedvis_core::sweep::AffinityKind;
use fedvis_net::operator::remote_query;
use fedvis_net::transport::tcp_connect;
use fedvis_net::{Coordinator, CoordinatorOptions, QueryRequest, QueryResult, SimFleet};

use crate::data::{chart, generate_shards, load_shards, Shards};
use crate::exit::{self, CliError};
use crate::{QueryArgs, TrainArgs};

/// Upper bound on waiting for a remote reply; the coordinator's own session
/// timeout normally fires first.
const REMOTE_WAIT: Duration = Duration::from_secs(3600);

const ORACLE_WARNING: &str = "\
WARNING: --oracle reads every client's raw shard directly and sums them in one
WARNING: place. This bypasses the privacy protocol. Use it for testing only.";

pub fn train_override(t: &TrainArgs) -> Option<TrainConfig> {
    if t.rounds.is_none()
        && t.epochs.is_none()
        && t.learning_rate.is_none()
        && t.batch_size.is_none()
        && t.tolerance.is_none()
    {
        return None;
    }
    let mut c = TrainConfig::preset(t.preset);
    if let Some(r) = t.rounds {
        c.rounds = r;
    }
    if let Some(e) = t.epochs {
        c.epochs = e;
    }
    if let Some(lr) = t.learning_rate {
        c.learning_rate = lr;
    }
    if let Some(b) = t.batch_size {
        c.batch_size = b;
    }
    if let Some(tol) = t.tolerance {
        c.tolerance = tol;
    }
    Some(c)
}

fn parse_scope(args: &QueryArgs) -> Result<ScopeFilter, CliError> {
    let bbox = match &args.bbox {
        None => None,
        Some(s) => {
            let v: Vec<f64> = s
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::usage(format!("--bbox {s:?}: expected four numbers")))?;
            let [a, b, c, d] = v[..] else {
                return Err(CliError::usage(format!(
                    "--bbox {s:?}: expected four numbers"
                )));
            };
            Some(BBox::new(a, b, c, d).map_err(|e| CliError::usage(format!("--bbox: {e}")))?)
        }
    };
    let tag_predicates = args
        .tag
        .iter()
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::usage(format!("--tag {t:?}: expected KEY=VALUE")))
        })
        .collect::<Result<_, _>>()?;
    let scope = ScopeFilter {
        time_range: args.time_range,
        bbox,
        tag_predicates,
    };
    scope
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(scope)
}

/// Centralized sum over raw shards, for the test-only comparison.
fn oracle_sum(
    shards: &Shards,
    scope: &ScopeFilter,
    spec: &ChartSpec,
) -> Result<Vec<f64>, CliError> {
    let parts: Vec<FeatureVector> = shards
        .iter()
        .map(|(_, r)| aggregate(&apply_scope(r, scope), &spec.partition))
        .collect();
    let sum = FeatureVector::sum(&parts).map_err(|e| CliError::other(e.to_string()))?;
    let chart = compose_query(&sum, spec).map_err(|e| CliError::other(e.to_string()))?;
    Ok(chart.flatten())
}

async fn run_sim(shards: Shards, req: QueryRequest) -> Result<QueryResult, CliError> {
    let fleet = SimFleet::start(Coordinator::new(CoordinatorOptions::default()), shards).await?;
    let result = fleet.coordinator.query(req).await;
    fleet.shutdown();
    Ok(result?)
}

async fn run_remote(addr: &str, req: QueryRequest) -> Result<QueryResult, CliError> {
    let mut link = tcp_connect(addr)
        .await
        .map_err(|e| CliError::new(exit::HANDSHAKE, format!("cannot connect to {addr}: {e}")))?;
    Ok(remote_query(&mut link, req, REMOTE_WAIT).await?)
}

fn rounds_csv(result: &QueryResult) -> String {
    let mut s = String::from("round,global_loss,client_losses\n");
    for r in &result.rounds {
        let losses: Vec<String> = r.client_losses.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "{},{},{}", r.round, r.global_loss, losses.join(";"));
    }
    s
}

pub async fn cmd_query(args: QueryArgs, seed: u64, clients: usize) -> Result<(), CliError> {
    let spec = chart(&args.chart)?;
    let scope = parse_scope(&args)?;
    let train = train_override(&args.train);
    if let Some(t) = &train {
        t.validate().map_err(|e| CliError::usage(e.to_string()))?;
    }

    let shards = match (&args.data, args.sim) {
        _ if !args.sim && !args.oracle => None,
        (Some(dir), _) => Some(load_shards(dir)?),
        (None, true) => Some(generate_shards(
            args.records,
            clients,
            seed,
            0.0,
            AffinityKind::Hotspots,
        )),
        (None, false) => {
            return Err(CliError::usage(
                "--oracle needs local shards: pass --data DIR or --sim",
            ));
        }
    };
    if args.oracle {
        eprintln!("{ORACLE_WARNING}");
    }

    let req = QueryRequest {
        chart: spec.clone(),
        scope: scope.clone(),
        scheme: args.scheme,
        preset: args.train.preset,
        train,
        seed,
        session: None,
    };
    let result = if args.sim {
        let s = shards.clone().expect("sim shards resolved above");
        run_sim(s, req).await?
    } else {
        run_remote(&args.connect, req).await?
    };

    match &args.out {
        Some(dir) => {
            let io = |e: std::io::Error| CliError::other(format!("{}: {e}", dir.display()));
            std::fs::create_dir_all(dir).map_err(io)?;
            std::fs::write(dir.join("chart.json"), result.chart.to_json()).map_err(io)?;
            if result.scheme == Scheme::PredictionBased {
                std::fs::write(dir.join("rounds.csv"), rounds_csv(&result)).map_err(io)?;
            }
        }
        None => println!("{}", result.chart.to_json()),
    }
    eprintln!(
        "session={} scheme={} chart={} values={} participants={} rounds={} cached={} total_ms={:.1}",
        result.session,
        result.scheme.name(),
        result.chart.kind.name(),
        result.chart.flatten().len(),
        result.participants.len(),
        result.rounds.len(),
        result.cached,
        result.timings.total_ms
    );

    if args.oracle {
        let shards = shards.expect("oracle shards resolved above");
        let exact = oracle_sum(&shards, &scope, &spec)?;
        let approx = result.chart.flatten();
        let re =
            relative_error(&exact, &approx).map_err(|e| CliError::other(format!("oracle: {e}")))?;
        let jsd =
            jsd_clipped(&exact, &approx).map_err(|e| CliError::other(format!("oracle: {e}")))?;
        eprintln!("oracle re={re:.6} jsd={jsd:.6}");
    }
    Ok(())
}
