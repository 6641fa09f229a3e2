//! REST and server-push API over a [`Live`] world and a
//! [`CampaignRunner`]. Bodies are canonical structured text.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use testbed_core::coordinator::campaign::CampaignConfig;
use testbed_core::coordinator::{ActionId, DutCommand, WorldError};
use testbed_core::dut::FirmwareImage;
use testbed_core::env::Pose2D;
use testbed_core::msgbus::BusError;
use testbed_core::text;

use crate::campaigns::{CampaignRunner, CampaignState};
use crate::live::Live;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Timeout(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<WorldError> for ApiError {
    fn from(e: WorldError) -> Self {
        let msg = e.to_string();
        match e {
            WorldError::UnknownNode(_) | WorldError::UnknownAction(_) | WorldError::NoAgv => ApiError::NotFound(msg),
            WorldError::Conflict(_) | WorldError::Bus(BusError::NodeDown(_)) => ApiError::Conflict(msg),
            WorldError::Invalid(_) => ApiError::Unprocessable(msg),
            WorldError::Timeout => ApiError::Timeout(msg),
            WorldError::Bus(BusError::UnknownNode(_) | BusError::NoSuchService(_) | BusError::NoSuchAction(_)) => {
                ApiError::NotFound(msg)
            }
            _ => ApiError::Internal(msg),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let msg = self.to_string();
        reply(self.status(), &ErrorBody { error: &msg })
    }
}

fn reply<T: Serialize + ?Sized>(status: StatusCode, value: &T) -> Response {
    match text::to_text(value) {
        Ok(body) => (status, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn ok<T: Serialize + ?Sized>(value: &T) -> Response {
    reply(StatusCode::OK, value)
}

/// Parse a request body; anything that does not fit is a 422.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    text::from_bytes(body).map_err(|e| ApiError::Unprocessable(e.to_string()))
}

type ApiResult = Result<Response, ApiError>;

#[derive(Clone)]
pub struct AppState {
    pub live: Arc<Live>,
    pub campaigns: Arc<CampaignRunner>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/nodes", get(list_nodes))
        .route("/nodes/{id}", get(get_node))
        .route("/nodes/{id}/power", post(power))
        .route("/nodes/{id}/serial/{op}", post(serial))
        .route("/nodes/{id}/params", get(get_params).put(put_params))
        .route("/nodes/{id}/reset", post(reset))
        .route("/nodes/{id}/erase", post(erase))
        .route("/nodes/{id}/flash", post(flash))
        .route("/nodes/{id}/flash_write", post(flash_write))
        .route("/actions/{id}", get(get_action))
        .route("/actions/{id}/cancel", post(cancel_action))
        .route("/agv/goto", post(goto))
        .route("/agv/odom", get(odom))
        .route("/refsys/bodies", get(refsys_bodies))
        .route("/refsys/{body}/pose", get(refsys_pose))
        .route("/logs/stream", get(log_stream))
        .route("/campaigns", post(start_campaign))
        .route("/campaigns/{id}", get(campaign_status))
        .route("/campaigns/{id}/report", get(campaign_report))
        .route("/campaigns/{id}/report.csv", get(campaign_csv))
        .with_state(state)
}

// ---- nodes ---------------------------------------------------------------

async fn list_nodes(State(s): State<AppState>) -> Response {
    ok(&s.live.with_world(|w| w.nodes()))
}

async fn get_node(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let node = s.live.with_world(|w| w.nodes()).into_iter().find(|n| n.node_id.as_str() == id);
    node.map(|n| ok(&n)).ok_or_else(|| ApiError::NotFound(format!("unknown node {id}")))
}

async fn command(s: &AppState, id: &str, cmd: DutCommand) -> ApiResult {
    Ok(ok(&s.live.command(id, &cmd).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerBody {
    on: bool,
}

async fn power(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let PowerBody { on } = parse(&body)?;
    command(&s, &id, DutCommand::Power { on }).await
}

async fn serial(State(s): State<AppState>, Path((id, op)): Path<(String, String)>) -> ApiResult {
    let cmd = match op.as_str() {
        "connect" => DutCommand::SerialConnect,
        "disconnect" => DutCommand::SerialDisconnect,
        _ => return Err(ApiError::NotFound(format!("no serial operation {op}"))),
    };
    command(&s, &id, cmd).await
}

async fn get_params(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(ok(&s.live.with_world(|w| w.device_state(&id))?.params))
}

/// Values may be given as strings or as plain numbers.
async fn put_params(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let raw: BTreeMap<String, serde_json::Value> = parse(&body)?;
    let params = raw
        .into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k, s)),
            serde_json::Value::Number(n) => Ok((k, n.to_string())),
            other => Err(ApiError::Unprocessable(format!("parameter {k}: expected a string or number, got {other}"))),
        })
        .collect::<Result<_, _>>()?;
    let state = s.live.command(&id, &DutCommand::SetParams { params }).await?;
    Ok(ok(&state.params))
}

async fn reset(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    command(&s, &id, DutCommand::Reset).await
}

async fn erase(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    command(&s, &id, DutCommand::Erase).await
}

#[derive(Serialize)]
struct ActionStarted {
    action_id: ActionId,
}

/// The body is the firmware file itself.
async fn flash(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    s.live.with_world(|w| w.device_state(&id))?;
    let image = FirmwareImage::decode(&body).map_err(|e| ApiError::Unprocessable(format!("firmware file: {e}")))?;
    let action_id = s.live.with_world(|w| w.start_flash(&id, &image))?;
    Ok(reply(StatusCode::ACCEPTED, &ActionStarted { action_id }))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Addr {
    Number(u32),
    /// Hex, with or without a `0x` prefix.
    Text(String),
}

impl Addr {
    fn value(&self) -> Result<u32, ApiError> {
        match self {
            Addr::Number(n) => Ok(*n),
            Addr::Text(s) => {
                let digits = s.trim_start_matches("0x").trim_start_matches("0X");
                u32::from_str_radix(digits, 16).map_err(|_| ApiError::Unprocessable(format!("bad address {s:?}")))
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlashWriteBody {
    addr: Addr,
    hex: String,
}

async fn flash_write(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let b: FlashWriteBody = parse(&body)?;
    command(&s, &id, DutCommand::FlashWrite { addr: b.addr.value()?, hex: b.hex }).await
}

// ---- actions -------------------------------------------------------------

fn action_id(raw: &str) -> Result<ActionId, ApiError> {
    raw.parse().map_err(|_| ApiError::NotFound(format!("unknown action {raw}")))
}

async fn get_action(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult {
    let id = action_id(&raw)?;
    s.live.action(id).map(|t| ok(&t)).ok_or(WorldError::UnknownAction(id).into())
}

async fn cancel_action(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult {
    let id = action_id(&raw)?;
    let ticket = s.live.action(id).ok_or(WorldError::UnknownAction(id))?;
    if ticket.state.is_terminal() {
        return Err(ApiError::Conflict(format!("action {id} already ended {:?}", ticket.state)));
    }
    s.live.with_world(|w| w.cancel_action(id))?;
    Ok(reply(StatusCode::ACCEPTED, &ActionStarted { action_id: id }))
}

// ---- AGV and reference system --------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GotoBody {
    x: f64,
    y: f64,
    yaw: f64,
}

async fn goto(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let GotoBody { x, y, yaw } = parse(&body)?;
    if ![x, y, yaw].iter().all(|v| v.is_finite()) {
        return Err(ApiError::Unprocessable("goto target must be finite".into()));
    }
    let action_id = s.live.with_world(|w| w.start_goto(Pose2D::new(x, y, yaw)))?;
    Ok(reply(StatusCode::ACCEPTED, &ActionStarted { action_id }))
}

async fn odom(State(s): State<AppState>) -> ApiResult {
    Ok(ok(&s.live.with_world(|w| w.odometry())?))
}

async fn refsys_bodies(State(s): State<AppState>) -> Response {
    ok(&s.live.with_world(|w| w.refsys_bodies()))
}

async fn refsys_pose(State(s): State<AppState>, Path(body): Path<String>) -> ApiResult {
    Ok(ok(&s.live.with_world(|w| w.refsys_pose(&body))?))
}

// ---- logs ----------------------------------------------------------------

#[derive(Deserialize)]
struct LogFilter {
    node: Option<String>,
}

/// `event: log` frames carrying one log record each, optionally limited to
/// one node. A subscriber that falls behind skips the records it missed.
async fn log_stream(State(s): State<AppState>, Query(f): Query<LogFilter>) -> ApiResult {
    if let Some(n) = &f.node {
        s.live.with_world(|w| w.device_state(n))?;
    }
    let rx = s.live.subscribe_logs();
    let stream = futures::stream::unfold((rx, f.node), |(mut rx, node)| async move {
        loop {
            match rx.recv().await {
                Ok(rec) if node.as_deref().is_none_or(|n| n == rec.node_id.as_str()) => {
                    let data = text::to_text(&rec).unwrap_or_default();
                    return Some((Ok::<_, Infallible>(Event::default().event("log").data(data)), (rx, node)));
                }
                Ok(_) | Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

// ---- campaigns -----------------------------------------------------------

#[derive(Serialize)]
struct CampaignStarted {
    campaign_id: String,
}

async fn start_campaign(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let cfg: CampaignConfig = parse(&body)?;
    let campaign_id = s.campaigns.submit(cfg);
    Ok(reply(StatusCode::ACCEPTED, &CampaignStarted { campaign_id }))
}

fn unknown_campaign(id: &str) -> ApiError {
    ApiError::NotFound(format!("unknown campaign {id}"))
}

async fn campaign_status(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    s.campaigns.status(&id).map(|st| ok(&st)).ok_or_else(|| unknown_campaign(&id))
}

async fn report_file(s: &AppState, id: &str, csv: bool) -> ApiResult {
    let status = s.campaigns.status(id).ok_or_else(|| unknown_campaign(id))?;
    match status.state {
        CampaignState::Finished => {}
        CampaignState::Failed => {
            return Err(ApiError::Conflict(format!("campaign {id} failed: {}", status.error.unwrap_or_default())))
        }
        _ => return Err(ApiError::Conflict(format!("campaign {id} is still {:?}", status.state))),
    }
    let paths = s.campaigns.report_paths(id);
    let (path, mime) = if csv { (paths.csv, "text/csv") } else { (paths.text, "application/json") };
    let body = tokio::fs::read(&path).await.map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, mime)], body).into_response())
}

/// The report file byte for byte.
async fn campaign_report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    report_file(&s, &id, false).await
}

async fn campaign_csv(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    report_file(&s, &id, true).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_errors_map_to_status_codes() {
        let code = |e: WorldError| ApiError::from(e).status();
        assert_eq!(code(WorldError::UnknownNode("x".into())), StatusCode::NOT_FOUND);
        assert_eq!(code(WorldError::UnknownAction(3)), StatusCode::NOT_FOUND);
        assert_eq!(code(WorldError::Conflict("busy".into())), StatusCode::CONFLICT);
        assert_eq!(code(WorldError::Bus(BusError::NodeDown("d".into()))), StatusCode::CONFLICT);
        assert_eq!(code(WorldError::Invalid("bad".into())), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(code(WorldError::Timeout), StatusCode::GATEWAY_TIMEOUT);
    }

    #[test]
    fn addresses_accept_numbers_and_hex() {
        let a: FlashWriteBody = text::from_text(r#"{"addr":"0xFF00","hex":"07"}"#).unwrap();
        assert_eq!(a.addr.value().unwrap(), 0xFF00);
        let b: FlashWriteBody = text::from_text(r#"{"addr":65280,"hex":"07"}"#).unwrap();
        assert_eq!(b.addr.value().unwrap(), 0xFF00);
        let c: FlashWriteBody = text::from_text(r#"{"addr":"zz","hex":""}"#).unwrap();
        assert!(c.addr.value().is_err());
    }
}
