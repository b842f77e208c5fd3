//! Audits everything the coordinator receives or logs for raw record
//! content and plaintext per-client vectors.

mod common;

use std::io::Write;
use std::sync::{Arc, Mutex};

use common::{chart, fast_options, shards};
use fedvis_core::compose::Scheme;
use fedvis_core::model::TrainConfig;
use fedvis_core::pipeline::aggregate;
use fedvis_core::secagg::{encode_fixed, COUNT_SCALE};
use fedvis_net::{Coordinator, Message, MsgTag, QueryRequest, SimFleet};

#[derive(Clone, Default)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn coordinator_never_sees_raw_records() {
    let logs = Capture::default();
    let sink = logs.clone();
    tracing::subscriber::set_global_default(
        tracing_subscriber::fmt()
            .with_max_level(tracing::Level::TRACE)
            .with_ansi(false)
            .with_writer(move || sink.clone())
            .finish(),
    )
    .unwrap();

    let mut data = shards(4, 1200, 21);
    for (_, records) in &mut data {
        for r in records.iter_mut() {
            r.tags
                .push(("note".into(), format!("secret-{}-{}", r.id, r.t_start)));
        }
    }
    let coord = Coordinator::new(fast_options());
    let mut tap = coord.tap();
    let fleet = SimFleet::start(coord.clone(), data.clone()).await.unwrap();

    let hist = chart("week-histogram");
    coord
        .query(QueryRequest::new(hist.clone(), Scheme::QueryBased))
        .await
        .unwrap();
    coord
        .query(QueryRequest::new(chart("heatmap-16"), Scheme::QueryBased))
        .await
        .unwrap();
    let mut pred = QueryRequest::new(hist.clone(), Scheme::PredictionBased);
    pred.train = Some(TrainConfig {
        rounds: 3,
        ..TrainConfig::default()
    });
    coord.query(pred).await.unwrap();
    fleet.shutdown();

    let mut frames = Vec::new();
    while let Ok(env) = tap.try_recv() {
        frames.push(env);
    }
    assert!(frames.len() > 50, "tap saw {} frames", frames.len());

    // Only protocol messages arrive; none carries a record field.
    let inbound: String = frames
        .iter()
        .map(|e| String::from_utf8_lossy(&e.payload).into_owned())
        .collect();
    for field in ["t_start", "lat_o", "lon_d", "tags", "secret-"] {
        assert!(
            !inbound.contains(field),
            "record field {field:?} reached the coordinator"
        );
    }
    for env in &frames {
        assert!(
            matches!(
                env.tag,
                MsgTag::Hello
                    | MsgTag::Heartbeat
                    | MsgTag::MaskExchange
                    | MsgTag::MaskedUpload
                    | MsgTag::ParamsUpload
            ),
            "unexpected inbound {:?}",
            env.tag
        );
    }

    // No masked upload equals the client's plaintext histogram.
    let plain: Vec<_> = data
        .iter()
        .map(|(_, r)| encode_fixed(&aggregate(r, &hist.partition), COUNT_SCALE).unwrap())
        .collect();
    let mut uploads = 0;
    for env in frames.iter().filter(|e| e.tag == MsgTag::MaskedUpload) {
        if let Message::MaskedUpload(m) = Message::decode(env).unwrap() {
            if m.payload.len() == hist.partition.len() {
                uploads += 1;
                assert!(plain.iter().all(|p| p.elems != m.payload.elems));
            }
        }
    }
    assert_eq!(uploads, 4);

    let text = String::from_utf8(logs.0.lock().unwrap().clone()).unwrap();
    let coordinator_lines: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains("fedvis_net::client"))
        .collect();
    assert!(coordinator_lines
        .iter()
        .any(|l| l.contains("session start")));
    let joined = coordinator_lines.join("\n");
    assert!(!joined.contains("secret-"));
    for (_, records) in &data {
        for r in records.iter().step_by(7) {
            for needle in [
                r.t_start.to_string(),
                r.lat_o.to_string(),
                r.lon_d.to_string(),
            ] {
                assert!(
                    !joined.contains(&needle),
                    "log contains record value {needle}"
                );
            }
        }
    }
}
