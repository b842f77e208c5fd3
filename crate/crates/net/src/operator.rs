//! Operator side of the wire protocol: submit a query over a link and wait
//! for the chart.

use std::time::Duration;

use fedvis_core::secagg::SessionId;
use tokio::time::timeout;

use crate::frame::{COORDINATOR, OPERATOR};
use crate::message::{Message, QueryRequest, QueryResult};
use crate::transport::Link;
use crate::NetError;

pub async fn remote_query(
    link: &mut Link,
    req: QueryRequest,
    wait: Duration,
) -> Result<QueryResult, NetError> {
    let env = Message::ChartRequest(req).envelope(SessionId::default(), OPERATOR, COORDINATOR);
    link.tx
        .send(env)
        .await
        .map_err(|_| NetError::Disconnected)?;
    loop {
        let env = match timeout(wait, link.rx.recv()).await {
            Ok(Some(env)) => env,
            Ok(None) => return Err(NetError::Disconnected),
            Err(_) => return Err(NetError::Aborted("no reply from coordinator".into())),
        };
        match Message::decode(&env)? {
            Message::ChartReply(reply) => {
                return match (reply.result, reply.error) {
                    (Some(r), _) => Ok(r),
                    (None, Some((kind, msg))) => Err(NetError::Remote(kind, msg)),
                    (None, None) => Err(NetError::Aborted("empty reply".into())),
                };
            }
            Message::Abort(a) => return Err(NetError::Handshake(a.reason)),
            _ => continue,
        }
    }
}
