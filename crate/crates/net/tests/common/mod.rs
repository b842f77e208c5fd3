#![allow(dead_code)]

use std::time::Duration;

use fedvis_core::compose::{find_preset, ChartSpec};
use fedvis_core::datasim::{generate, shard, GenSpec, ShardPolicy};
use fedvis_core::pipeline::DataRecord;
use fedvis_net::{Coordinator, CoordinatorOptions, SimFleet};

pub fn gen(count: usize, seed: u64) -> GenSpec {
    GenSpec {
        count,
        seed,
        ..GenSpec::default()
    }
}

pub fn shards(n: usize, count: usize, seed: u64) -> Vec<(u16, Vec<DataRecord>)> {
    let records = generate(&gen(count, seed));
    shard(&records, &ShardPolicy::Iid { seed }, n)
        .into_iter()
        .enumerate()
        .map(|(i, s)| ((i + 1) as u16, s))
        .collect()
}

pub fn chart(name: &str) -> ChartSpec {
    find_preset(&GenSpec::default(), name).unwrap().chart
}

pub fn fast_options() -> CoordinatorOptions {
    CoordinatorOptions {
        heartbeat_ms: 100,
        session_timeout: Duration::from_secs(30),
        ..CoordinatorOptions::default()
    }
}

pub async fn fleet(n: usize, count: usize, seed: u64) -> SimFleet {
    let coord = Coordinator::new(fast_options());
    SimFleet::start(coord, shards(n, count, seed))
        .await
        .unwrap()
}
