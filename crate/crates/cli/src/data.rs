//! Shard generation and loading shared by the subcommands.

use std::path::Path;

use fedvis_core::compose::{find_preset, presets, ChartSpec, Scheme};
use fedvis_core::datasim::{generate, shard, write_shards, GenSpec, Manifest};
use fedvis_core::model::TrainConfig;
use fedvis_core::pipeline::DataRecord;
use fedvis_core::sweep::{AffinityKind, PointConfig};
use fedvis_net::SimFleet;

use crate::exit::CliError;
use crate::GenArgs;

pub type Shards = Vec<(u16, Vec<DataRecord>)>;

/// Resolves a preset name or chart kind against the default city.
pub fn chart(name: &str) -> Result<ChartSpec, CliError> {
    find_preset(&GenSpec::default(), name)
        .map(|p| p.chart)
        .map_err(|e| CliError::usage(e.to_string()))
}

/// Generates `records` trips and shards them over `clients` ids starting at 1.
pub fn generate_shards(
    records: usize,
    clients: usize,
    seed: u64,
    alpha: f64,
    affinity: AffinityKind,
) -> Shards {
    let gen = GenSpec {
        count: records,
        seed,
        ..GenSpec::default()
    };
    // Only the policy fields of the point matter here.
    let point = PointConfig {
        chart: presets(&gen).remove(0).chart,
        scheme: Scheme::QueryBased,
        gen: gen.clone(),
        clients,
        alpha,
        affinity,
        train: TrainConfig::default(),
    };
    shard(&generate(&gen), &point.policy(seed), clients)
        .into_iter()
        .enumerate()
        .map(|(i, s)| ((i + 1) as u16, s))
        .collect()
}

/// Loads `dir/manifest.json` or a manifest file path.
pub fn load_shards(path: &Path) -> Result<Shards, CliError> {
    let manifest = if path.is_dir() {
        path.join(Manifest::FILE_NAME)
    } else {
        path.to_path_buf()
    };
    if !manifest.is_file() {
        return Err(CliError::config(format!(
            "manifest not found: {}",
            manifest.display()
        )));
    }
    SimFleet::load_manifest(&manifest)
        .map_err(|e| CliError::config(format!("{}: {e}", manifest.display())))
}

pub fn cmd_gen(args: &GenArgs, seed: u64, clients: usize) -> Result<(), CliError> {
    if clients == 0 || clients >= u16::MAX as usize {
        return Err(CliError::usage(format!("--clients {clients} out of range")));
    }
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::usage(format!(
            "--alpha {} outside [0, 1]",
            args.alpha
        )));
    }
    let shards: Vec<Vec<DataRecord>> =
        generate_shards(args.records, clients, seed, args.alpha, args.affinity)
            .into_iter()
            .map(|(_, s)| s)
            .collect();
    let manifest = write_shards(&args.out, &shards)
        .map_err(|e| CliError::config(format!("{}: {e}", args.out.display())))?;
    println!(
        "wrote {} shards ({} records) to {}",
        manifest.clients.len(),
        manifest.clients.iter().map(|c| c.records).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}
