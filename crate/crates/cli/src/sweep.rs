//! `sweep`: accuracy and timing over one varied parameter.

use std::fs::File;
use std::io::BufWriter;

use fedvis_core::compose::{compose_query, diff_map, ChartKind};
use fedvis_core::datasim::GenSpec;
use fedvis_core::model::TrainConfig;
use fedvis_core::pipeline::FeatureVector;
use fedvis_core::sweep::{apply_axis, run_point, sweep, write_csv, PointConfig, SweepError};

use crate::data::chart;
use crate::exit::CliError;
use crate::plot::{diff_png, trend_png};
use crate::query::train_override;
use crate::SweepArgs;

fn sweep_err(e: SweepError) -> CliError {
    match e {
        SweepError::InvalidGrid(_) | SweepError::Pipeline(_) | SweepError::Compose(_) => {
            CliError::usage(e.to_string())
        }
        other => CliError::other(other.to_string()),
    }
}

pub fn cmd_sweep(args: &SweepArgs, seed: u64, clients: usize) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    let base = PointConfig {
        chart: chart(&args.chart)?,
        scheme: args.scheme,
        gen: GenSpec {
            count: args.records,
            ..GenSpec::default()
        },
        clients,
        alpha: args.alpha,
        affinity: args.affinity,
        train: train_override(&args.train)
            .unwrap_or_else(|| TrainConfig::preset(args.train.preset)),
    };
    base.train
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    for &v in &args.grid {
        apply_axis(&base, args.axis, v).map_err(sweep_err)?;
    }
    let seeds: Vec<u64> = (seed..seed + args.seeds).collect();

    let io = |e: std::io::Error| CliError::other(format!("{}: {e}", args.out.display()));
    std::fs::create_dir_all(&args.out).map_err(io)?;
    let rows = sweep(args.axis, &args.grid, &base, &seeds).map_err(sweep_err)?;
    let csv_path = args.out.join("sweep.csv");
    write_csv(&rows, BufWriter::new(File::create(&csv_path).map_err(io)?)).map_err(sweep_err)?;

    let re: Vec<f64> = rows.iter().map(|r| r.re_median).collect();
    let jsd: Vec<f64> = rows.iter().map(|r| r.jsd_median).collect();
    let png = |e: image::ImageError| CliError::other(format!("plot: {e}"));
    trend_png(&args.out.join("trend_re.png"), &re).map_err(png)?;
    trend_png(&args.out.join("trend_jsd.png"), &jsd).map_err(png)?;

    let axis = format!("{:?}", args.axis).to_lowercase();
    if base.chart.kind == ChartKind::Heatmap {
        // Difference maps for the first seed of every grid point.
        for &v in &args.grid {
            let cfg = apply_axis(&base, args.axis, v).map_err(sweep_err)?;
            let outcome = run_point(&cfg, seeds[0]).map_err(sweep_err)?;
            let id = cfg.chart.partition.id();
            let exact = compose_query(&FeatureVector::from_values(id, outcome.exact), &cfg.chart)
                .map_err(|e| CliError::other(e.to_string()))?;
            let approx = exact
                .with_values(&outcome.approx)
                .map_err(|e| CliError::other(e.to_string()))?;
            let diff = diff_map(&approx, &exact, args.amplify)
                .map_err(|e| CliError::other(e.to_string()))?;
            let path = args.out.join(format!("diff_{axis}_{v}.png"));
            diff_png(&path, &diff, &exact).map_err(CliError::other)?;
        }
    }

    for r in &rows {
        println!(
            "{axis}={} re={:.6} jsd={:.6} total_ms={:.1}",
            r.value, r.re_median, r.jsd_median, r.total_ms
        );
    }
    println!("wrote {} rows to {}", rows.len(), csv_path.display());
    Ok(())
}
