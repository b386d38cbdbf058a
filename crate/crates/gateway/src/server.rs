//! HTTP routes. Everything lives under `/v1`; every route except
//! `/v1/health` needs `Authorization: Bearer <token>`.

use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use cornet_core::allocator::{throughput_check, Allocation};
use cornet_core::chanem::ChannelScenario;
use cornet_core::datamgr::{ArchiveSummary, ConfigSnapshot, QueryFilter, DIGEST_ALGORITHM};
use cornet_core::inventory::{capacity_summary, load_inventory, Inventory, RfPath};
use cornet_core::scheduler::{
    Reservation, ReservationState, SurveyForm, SurveyResponses, UtilizationBucket,
};
use cornet_core::ReservationId;

use crate::api::*;
use crate::auth::Session;
use crate::emulation::{self, EmulationRequest, EmulationResult};
use crate::error::ApiError;
use crate::state::{AppState, Core};
use crate::status::NodeStatusEvent;

type St = State<Arc<AppState>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// Utilization reports longer than this many buckets are refused.
pub const MAX_BUCKETS: i64 = 100_000;

/// The authenticated caller. The event stream also takes `?token=`, since
/// browser `EventSource` cannot set headers.
#[derive(Debug, Clone)]
pub struct Caller(pub Session);

impl FromRequestParts<Arc<AppState>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, st: &Arc<AppState>) -> Result<Self, ApiError> {
        let header_token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::to_string);
        let token = header_token.or_else(|| {
            if parts.uri.path() != "/v1/events" {
                return None;
            }
            Query::<TokenQuery>::try_from_uri(&parts.uri).ok().and_then(|q| q.0.token)
        });
        let token = token.ok_or_else(|| ApiError::new("Unauthorized", "missing bearer token"))?;
        st.session(&token)
            .cloned()
            .map(Caller)
            .ok_or_else(|| ApiError::new("Unauthorized", "unknown token"))
    }
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

/// JSON body whose rejections come back as ApiError bodies.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::validation(e.body_text())),
        }
    }
}

/// Query string whose rejections come back as ApiError bodies.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        Query::<T>::try_from_uri(&parts.uri)
            .map(|q| Params(q.0))
            .map_err(|e| ApiError::validation(e.body_text()))
    }
}

fn lookup<'a>(core: &'a Core, id: &str) -> Result<&'a Reservation, ApiError> {
    core.scheduler
        .get(&ReservationId::from(id))
        .ok_or_else(|| ApiError::not_found(format!("no reservation {id}")))
}

/// The reservation, if the caller owns it or is an administrator.
fn owned<'a>(core: &'a Core, id: &str, who: &Session) -> Result<&'a Reservation, ApiError> {
    let r = lookup(core, id)?;
    if r.user != who.user && !who.is_admin() {
        return Err(ApiError::forbidden(format!("{id} belongs to {}", r.user)));
    }
    Ok(r)
}

fn require_admin(who: &Session) -> Result<(), ApiError> {
    if who.is_admin() {
        Ok(())
    } else {
        Err(ApiError::forbidden("administrators only"))
    }
}

fn archive_owner<'a>(core: &'a Core, exp: &str, who: &Session) -> Result<&'a Reservation, ApiError> {
    let a = core.data.get(exp).ok_or_else(|| ApiError::not_found(format!("no experiment {exp}")))?;
    owned(core, a.snapshot.reservation_id.as_str(), who)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/inventory", get(inventory))
        .route("/v1/inventory/reload", post(reload))
        .route("/v1/capacity", get(capacity))
        .route("/v1/reservations", post(create_reservation).get(list_reservations))
        .route("/v1/reservations/{id}", get(get_reservation))
        .route("/v1/reservations/{id}/allocation", get(get_allocation))
        .route("/v1/reservations/{id}/evaluate", post(evaluate))
        .route("/v1/reservations/{id}/review", post(review))
        .route("/v1/reservations/{id}/activate", post(activate))
        .route("/v1/reservations/{id}/complete", post(complete))
        .route("/v1/reservations/{id}/cancel", post(cancel))
        .route("/v1/reservations/{id}/survey", post(survey))
        .route("/v1/schedule", get(schedule))
        .route("/v1/utilization", get(utilization))
        .route("/v1/scenario", get(get_scenario).put(put_scenario))
        .route("/v1/emulation/run", post(run_emulation))
        .route("/v1/experiments", post(open_experiment).get(list_experiments))
        .route("/v1/experiments/{id}", get(get_experiment))
        .route("/v1/experiments/{id}/records", post(append_records).get(query_records))
        .route("/v1/experiments/{id}/seal", post(seal))
        .route("/v1/status", get(status))
        .route("/v1/nodes/{id}/fault", post(set_fault))
        .route("/v1/events", get(events))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

async fn health(State(st): St) -> Json<Health> {
    let core = st.core.read().await;
    Json(Health {
        ok: true,
        last_seq: core.scheduler.last_seq(),
        now_utc: st.clock.now(),
    })
}

async fn inventory(State(st): St, _: Caller) -> Json<Inventory> {
    Json(st.core.read().await.scheduler.inventory().as_ref().clone())
}

async fn capacity(State(st): St, _: Caller) -> Json<CapacityResponse> {
    let core = st.core.read().await;
    let inv = core.scheduler.inventory();
    let throughput = core
        .scheduler
        .allocator()
        .blocks()
        .map(|b| {
            let t = throughput_check(b, &inv.fabric, 1);
            BlockThroughput {
                node_id: b.node_id.clone(),
                sample_rate_sps: b.sample_rate_sps,
                required_bps: t.required_bps(),
                port_rate_bps: inv.fabric.port_rate_bps,
                fits: t.fits(),
            }
        })
        .collect();
    Json(CapacityResponse {
        capacity: capacity_summary(inv),
        accounting: core.scheduler.allocator().accounting(),
        throughput,
    })
}

async fn reload(State(st): St, Caller(who): Caller, Body(req): Body<ReloadRequest>) -> ApiResult<ReloadResponse> {
    require_admin(&who)?;
    let inv = match (&req.toml, &st.inventory_path) {
        (Some(text), _) => load_inventory(text)?,
        (None, Some(path)) => Inventory::from_path(path)?,
        (None, None) => return Err(ApiError::validation("no inventory given and the server has no inventory file")),
    };
    let inventory_hash = inv.content_hash();
    st.write(|c, _| c.reload_inventory(inv)).await?;
    Ok(Json(ReloadResponse { inventory_hash }))
}

async fn create_reservation(
    State(st): St,
    Caller(who): Caller,
    Body(req): Body<ReservationRequest>,
) -> Result<(StatusCode, Json<Reservation>), ApiError> {
    let r = st
        .write(|c, now| Ok(c.scheduler.request_reservation(&who.user, req.window, req.spec, now)?))
        .await?;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn list_reservations(State(st): St, _: Caller) -> Json<Vec<Reservation>> {
    Json(st.core.read().await.scheduler.reservations().cloned().collect())
}

async fn get_reservation(State(st): St, _: Caller, Path(id): Path<String>) -> ApiResult<Reservation> {
    Ok(Json(lookup(&*st.core.read().await, &id)?.clone()))
}

async fn get_allocation(State(st): St, _: Caller, Path(id): Path<String>) -> ApiResult<Allocation> {
    let core = st.core.read().await;
    let r = lookup(&core, &id)?;
    core.scheduler
        .allocator()
        .get(&r.id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("{id} holds no allocation while {:?}", r.state)))
}

async fn evaluate(State(st): St, Caller(who): Caller, Path(id): Path<String>) -> ApiResult<Reservation> {
    st.write(|c, now| {
        let id = owned(c, &id, &who)?.id.clone();
        Ok(Json(c.scheduler.evaluate_admission(&id, now)?))
    })
    .await
}

async fn review(
    State(st): St,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<ReviewRequest>,
) -> ApiResult<Reservation> {
    require_admin(&who)?;
    st.write(|c, now| {
        let id = lookup(c, &id)?.id.clone();
        Ok(Json(c.scheduler.review_decision(&id, &who.user, req.approve, now)?))
    })
    .await
}

async fn activate(State(st): St, Caller(who): Caller, Path(id): Path<String>) -> ApiResult<Reservation> {
    st.write(|c, now| {
        let id = owned(c, &id, &who)?.id.clone();
        Ok(Json(c.scheduler.activate(&id, &who.user, now)?))
    })
    .await
}

async fn complete(State(st): St, Caller(who): Caller, Path(id): Path<String>) -> ApiResult<CompleteResponse> {
    st.write(|c, now| {
        let id = owned(c, &id, &who)?.id.clone();
        let (reservation, survey) = c.scheduler.complete(&id, &who.user, now)?;
        Ok(Json(CompleteResponse { reservation, survey }))
    })
    .await
}

async fn cancel(
    State(st): St,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<CancelRequest>,
) -> ApiResult<Reservation> {
    st.write(|c, now| {
        let id = owned(c, &id, &who)?.id.clone();
        Ok(Json(c.scheduler.cancel(&id, &who.user, &req.reason, now)?))
    })
    .await
}

async fn survey(
    State(st): St,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<SurveyResponses>,
) -> ApiResult<SurveyForm> {
    st.write(|c, now| {
        let id = owned(c, &id, &who)?.id.clone();
        Ok(Json(c.scheduler.submit_survey(&id, req, now)?))
    })
    .await
}

async fn schedule(State(st): St, _: Caller, Params(q): Params<RangeQuery>) -> ApiResult<Vec<Reservation>> {
    if q.from >= q.to {
        return Err(ApiError::validation("from must be before to"));
    }
    Ok(Json(st.core.read().await.scheduler.schedule(q.from, q.to).into_iter().cloned().collect()))
}

async fn utilization(
    State(st): St,
    _: Caller,
    Params(q): Params<UtilizationQuery>,
) -> ApiResult<Vec<UtilizationBucket>> {
    if q.bucket <= 0 || q.from >= q.to {
        return Err(ApiError::validation("need bucket > 0 and from < to"));
    }
    if q.to.seconds_since(q.from) / q.bucket > MAX_BUCKETS {
        return Err(ApiError::validation(format!("more than {MAX_BUCKETS} buckets")));
    }
    Ok(Json(st.core.read().await.scheduler.utilization_report(q.from, q.to, q.bucket)))
}

async fn get_scenario(State(st): St, _: Caller) -> ApiResult<ChannelScenario> {
    st.core
        .read()
        .await
        .scenario
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no channel scenario loaded"))
}

async fn put_scenario(State(st): St, _: Caller, Body(sc): Body<ChannelScenario>) -> ApiResult<ScenarioResponse> {
    let scenario_hash = sc.content_hash();
    st.write(|c, _| c.set_scenario(sc)).await?;
    Ok(Json(ScenarioResponse { scenario_hash }))
}

async fn run_emulation(
    State(st): St,
    Caller(who): Caller,
    Body(req): Body<EmulationRequest>,
) -> ApiResult<EmulationResult> {
    let (sc, alloc, base_t_us) = {
        let core = st.core.read().await;
        let r = owned(&core, req.reservation_id.as_str(), &who)?;
        if r.state != ReservationState::Active {
            return Err(ApiError::state(format!("{} is {:?}; emulation needs Active", r.id, r.state)));
        }
        if r.spec.radio.path != RfPath::Emulator {
            return Err(ApiError::validation(format!("{} is over the air, not on the channel emulator", r.id)));
        }
        let sc = core.scenario.clone().ok_or_else(|| ApiError::state("no channel scenario loaded"))?;
        let alloc = core
            .scheduler
            .allocator()
            .get(&r.id)
            .cloned()
            .ok_or_else(|| ApiError::new("InternalError", format!("{} is Active without an allocation", r.id)))?;
        let mut base = st.clock.now_us();
        if let Some(exp) = &req.experiment_id {
            let a = core.data.get(exp).ok_or_else(|| ApiError::not_found(format!("no experiment {exp}")))?;
            if a.snapshot.reservation_id != r.id {
                return Err(ApiError::validation(format!("{exp} belongs to {}", a.snapshot.reservation_id)));
            }
            if a.sealed() {
                return Err(ApiError::new("SealedError", format!("{exp} is sealed")));
            }
            if a.snapshot.scenario_hash.as_deref() != Some(sc.content_hash().as_str()) {
                return Err(ApiError::new(
                    "ConflictError",
                    format!("{exp} was not opened under the loaded channel scenario"),
                ));
            }
            if let Some(last) = a.records().iter().map(|x| x.t_utc_us).max() {
                base = base.max(last + 1);
            }
        }
        (sc, alloc, base)
    };
    let job = req.clone();
    let (tx, measurements) = tokio::task::spawn_blocking(move || emulation::run(&sc, &alloc, &job, base_t_us))
        .await
        .map_err(|e| ApiError::new("InternalError", e.to_string()))??;
    let steps = if req.step_s > 0.0 { (req.duration_s / req.step_s).ceil() as usize } else { 0 };
    let records_appended = match &req.experiment_id {
        Some(exp) => {
            let batch = measurements.clone();
            st.write(|c, _| Ok(c.data.append_batch(exp, batch)?)).await?
        }
        None => 0,
    };
    Ok(Json(EmulationResult {
        reservation_id: req.reservation_id,
        experiment_id: req.experiment_id,
        scenario_hash: {
            let core = st.core.read().await;
            core.scenario.as_ref().map(|s| s.content_hash()).unwrap_or_default()
        },
        steps,
        tx,
        measurements,
        records_appended,
    }))
}

async fn open_experiment(
    State(st): St,
    Caller(who): Caller,
    Body(req): Body<OpenExperimentRequest>,
) -> Result<(StatusCode, Json<ExperimentDetail>), ApiError> {
    let detail = st
        .write(|c, now| {
            let r = owned(c, req.reservation_id.as_str(), &who)?.clone();
            let snap = ConfigSnapshot::capture(c.scheduler.inventory(), &r, c.scenario.as_ref(), req.sample_formats, now);
            let id = c.data.open_experiment(&r, snap)?;
            let a = c.data.get(&id).expect("just opened");
            Ok(ExperimentDetail {
                summary: a.summary(),
                snapshot: a.snapshot.clone(),
            })
        })
        .await?;
    Ok((StatusCode::CREATED, Json(detail)))
}

async fn list_experiments(State(st): St, _: Caller) -> Json<Vec<ArchiveSummary>> {
    Json(st.core.read().await.data.archives().map(|a| a.summary()).collect())
}

async fn get_experiment(State(st): St, _: Caller, Path(id): Path<String>) -> ApiResult<ExperimentDetail> {
    let core = st.core.read().await;
    let a = core.data.get(&id).ok_or_else(|| ApiError::not_found(format!("no experiment {id}")))?;
    Ok(Json(ExperimentDetail {
        summary: a.summary(),
        snapshot: a.snapshot.clone(),
    }))
}

async fn append_records(
    State(st): St,
    Caller(who): Caller,
    Path(id): Path<String>,
    Body(req): Body<AppendRequest>,
) -> ApiResult<AppendResponse> {
    st.write(|c, _| {
        let r = archive_owner(c, &id, &who)?;
        if r.state != ReservationState::Active {
            return Err(ApiError::state(format!("{} is {:?}; records are taken only while Active", r.id, r.state)));
        }
        let appended = c.data.append_batch(&id, req.records)?;
        let total = c.data.get(&id).map_or(0, |a| a.len());
        Ok(Json(AppendResponse { appended, total }))
    })
    .await
}

async fn query_records(
    State(st): St,
    _: Caller,
    Path(id): Path<String>,
    Params(filter): Params<QueryFilter>,
) -> ApiResult<RecordsResponse> {
    let records = st.core.read().await.data.query(&id, &filter)?;
    Ok(Json(RecordsResponse { records }))
}

async fn seal(State(st): St, Caller(who): Caller, Path(id): Path<String>) -> ApiResult<SealResponse> {
    st.write(|c, _| {
        archive_owner(c, &id, &who)?;
        let digest = c.data.seal(&id)?;
        Ok(Json(SealResponse {
            experiment_id: id.clone(),
            algorithm: DIGEST_ALGORITHM.to_string(),
            digest,
        }))
    })
    .await
}

async fn status(State(st): St, _: Caller) -> ApiResult<Vec<NodeStatusEvent>> {
    st.maintain().await?;
    Ok(Json(st.core.read().await.status.current()))
}

async fn set_fault(
    State(st): St,
    Caller(who): Caller,
    Path(node): Path<String>,
    Body(req): Body<FaultRequest>,
) -> ApiResult<Vec<NodeStatusEvent>> {
    require_admin(&who)?;
    st.write(|c, _| {
        if !c.scheduler.inventory().sdr_devices.iter().any(|d| d.node_id == node) {
            return Err(ApiError::not_found(format!("no radio node {node}")));
        }
        if req.fault {
            c.status.faults.insert(node);
        } else {
            c.status.faults.remove(&node);
        }
        Ok(())
    })
    .await?;
    Ok(Json(st.core.read().await.status.current()))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
}

/// Retained events after the client's last id, then live ones. A client
/// that falls too far behind is disconnected and resumes by id.
async fn events(
    State(st): St,
    _: Caller,
    headers: HeaderMap,
    Params(q): Params<EventsQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.last_event_id)
        .unwrap_or(0);
    let (backlog, rx) = st.core.read().await.status.subscribe_after(last);
    let live = stream::unfold(rx, |mut rx| async move { rx.recv().await.ok().map(|e| (e, rx)) });
    let out = stream::iter(backlog).chain(live).map(|e| {
        Ok(Event::default()
            .id(e.id.to_string())
            .event("node_status")
            .json_data(&e)
            .expect("status events serialize"))
    });
    Sse::new(out).keep_alive(KeepAlive::default())
}

/// Serves until `shutdown` resolves, running expiry and status upkeep
/// once a second. Open event streams get two seconds to drain.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = tokio::spawn(maintenance(state.clone()));
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = axum::serve(listener, router(state)).with_graceful_shutdown(async move {
        shutdown.await;
        let _ = stop_tx.send(());
    });
    let out = tokio::select! {
        r = server => r,
        _ = async {
            let _ = stop_rx.await;
            tokio::time::sleep(Duration::from_secs(2)).await;
        } => Ok(()),
    };
    ticker.abort();
    out
}

async fn maintenance(state: Arc<AppState>) {
    let mut tick = tokio::time::interval(Duration::from_secs(1));
    loop {
        tick.tick().await;
        if let Err(e) = state.maintain().await {
            eprintln!("maintenance: {}: {}", e.body.error, e.body.message);
        }
    }
}

/// A server on an ephemeral loopback port, on its own runtime. Dropping it
/// stops the server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl ServerHandle {
    pub fn start(state: Arc<AppState>) -> std::io::Result<ServerHandle> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        runtime.spawn(serve(listener, state.clone(), std::future::pending()));
        Ok(ServerHandle {
            addr,
            state,
            runtime: Some(runtime),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
