//! JSON-over-HTTP retrieval service.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sarret::encoder::{EncoderKind, Representation};
use sarret::retrieval::{build_index, RetrievalIndex};
use sarret::sarv::decode_sarv;
use sarret::{ClassLabel, Error, VignetteMeta};

use crate::store::{build_store_indexes, key_label, validate_id, Embedder, IndexKey, Store};
use crate::thumbnail::{render_thumbnail, STRETCH_VERSION};

pub const MAX_UPLOAD_BYTES: usize = 64 << 20;
pub const MAX_K: usize = 200;
const DEFAULT_PAGE: usize = 24;
const MAX_PAGE: usize = 500;

/// What readers see; replaced wholesale on ingest.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub indexes: BTreeMap<IndexKey, RetrievalIndex>,
    pub metas: BTreeMap<String, VignetteMeta>,
}

pub struct AppState {
    store: Store,
    embedder: Embedder,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    ingest: tokio::sync::Mutex<()>,
    thumbs: Mutex<HashMap<(String, Representation, u32), Arc<Vec<u8>>>>,
}

impl AppState {
    /// No snapshot yet: queries answer 503 until [`AppState::rebuild`] or
    /// [`AppState::install`] runs.
    pub fn new(store: Store, embedder: Embedder) -> Self {
        Self {
            store,
            embedder,
            snapshot: RwLock::new(None),
            ingest: tokio::sync::Mutex::new(()),
            thumbs: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn snapshot(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn install(&self, snap: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Some(Arc::new(snap));
    }

    /// Uses the persisted indexes when they cover exactly the stored
    /// vignettes under every configuration; returns false otherwise.
    pub fn load_persisted(&self) -> sarret::Result<bool> {
        let metas = self.store.metas()?;
        let indexes = self.store.load_indexes()?;
        let fresh = !metas.is_empty()
            && self.embedder.configurations().iter().all(|k| {
                indexes
                    .get(k)
                    .is_some_and(|idx| idx.len() == metas.len() && idx.entries().iter().all(|e| metas.contains_key(&e.id)))
            });
        if fresh {
            self.install(Snapshot { indexes, metas });
        }
        Ok(fresh)
    }

    /// Re-embeds the whole store, persists and swaps in the new indexes.
    pub fn rebuild(&self) -> sarret::Result<()> {
        let indexes = build_store_indexes(&self.store, &self.embedder)?;
        for (k, idx) in &indexes {
            self.store.save_index(*k, idx)?;
        }
        let metas = self.store.metas()?;
        self.install(Snapshot { indexes, metas });
        Ok(())
    }

    fn ingest_blocking(&self, bytes: &[u8], id: String, meta: VignetteMeta) -> Result<String, ApiError> {
        let snap = self.snapshot().ok_or_else(ApiError::rebuilding)?;
        validate_id(&id)?;
        meta.validate()?;
        if snap.metas.contains_key(&id) || self.store.contains(&id) {
            return Err(Error::DuplicateId(id).into());
        }
        let mut v = decode_sarv(bytes)?;
        v.id = id.clone();
        v.meta = meta.clone();
        let embeddings = self.embedder.embed_all(&v).map_err(ApiError::from)?;
        let mut next = (*snap).clone();
        for (key, e) in self.embedder.configurations().into_iter().zip(embeddings) {
            let idx = match next.indexes.get(&key) {
                Some(idx) => idx.with_entry(e, meta.clone())?,
                None => build_index(vec![(e, meta.clone())])?,
            };
            next.indexes.insert(key, idx);
        }
        self.store.write(&v)?;
        for (k, idx) in &next.indexes {
            self.store.save_index(*k, idx)?;
        }
        next.metas.insert(id.clone(), meta);
        self.install(next);
        log::info!("ingested {id}");
        Ok(id)
    }
}

pub fn open_state(data_dir: &Path) -> sarret::Result<AppState> {
    let store = Store::open(data_dir)?;
    let embedder = Embedder::from_store(&store)?;
    Ok(AppState::new(store, embedder))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/vignettes", get(list_vignettes))
        .route("/api/vignettes/{id}/thumbnail", get(thumbnail))
        .route("/api/query", post(query))
        .route("/api/ingest", post(ingest))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: message.into(),
        }
    }

    fn rebuilding() -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            kind: "rebuilding",
            message: "index is being rebuilt".into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            "unknown_id" => StatusCode::NOT_FOUND,
            "duplicate_id" => StatusCode::CONFLICT,
            "io" | "training" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn thumbnail_url(id: &str, rep: Representation) -> String {
    format!("/api/vignettes/{id}/thumbnail?rep={}", rep.as_str())
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    match st.snapshot() {
        Some(s) => {
            let versions: BTreeMap<String, String> =
                s.indexes.iter().map(|(k, i)| (key_label(*k), i.version().to_string())).collect();
            Json(json!({"status": "ok", "index_versions": versions, "vignettes": s.metas.len()}))
        }
        None => Json(json!({"status": "rebuilding", "index_versions": {}, "vignettes": 0})),
    }
}

#[derive(Debug, Deserialize)]
struct ListParams {
    class: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ListItem {
    id: String,
    meta: VignetteMeta,
    thumbnail_url: String,
}

async fn list_vignettes(
    State(st): State<Arc<AppState>>,
    params: Result<Query<ListParams>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(p) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let snap = st.snapshot().ok_or_else(ApiError::rebuilding)?;
    let class = match p.class.as_deref().filter(|c| !c.is_empty()) {
        Some(c) => Some(c.parse::<ClassLabel>()?.index()),
        None => None,
    };
    let limit = p.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let offset = p.offset.unwrap_or(0);
    let matching: Vec<(&String, &VignetteMeta)> = snap
        .metas
        .iter()
        .filter(|(_, m)| class.is_none() || m.class_label == class)
        .collect();
    let items: Vec<ListItem> = matching
        .iter()
        .skip(offset)
        .take(limit)
        .map(|(id, m)| ListItem {
            id: id.to_string(),
            meta: (*m).clone(),
            thumbnail_url: thumbnail_url(id, Representation::Vig),
        })
        .collect();
    Ok(Json(json!({"total": matching.len(), "offset": offset, "limit": limit, "items": items})))
}

#[derive(Debug, Deserialize)]
struct ThumbParams {
    rep: Option<String>,
}

async fn thumbnail(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(p): Query<ThumbParams>,
) -> ApiResult<Response> {
    let rep: Representation = match p.rep.as_deref() {
        Some(r) => r.parse()?,
        None => Representation::Vig,
    };
    let snap = st.snapshot().ok_or_else(ApiError::rebuilding)?;
    if !snap.metas.contains_key(&id) {
        return Err(Error::UnknownId(id).into());
    }
    let key = (id.clone(), rep, STRETCH_VERSION);
    let cached = st.thumbs.lock().expect("thumbnail cache").get(&key).cloned();
    let png = match cached {
        Some(p) => p,
        None => {
            let st2 = st.clone();
            let png = tokio::task::spawn_blocking(move || {
                let v = st2.store.read(&id)?;
                render_thumbnail(&v, rep, st2.embedder.pipeline())
            })
            .await
            .map_err(|e| ApiError::from(Error::Invariant(e.to_string())))??;
            let png = Arc::new(png);
            st.thumbs.lock().expect("thumbnail cache").insert(key, png.clone());
            png
        }
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    id: Option<String>,
    embedding: Option<Vec<f64>>,
    k: usize,
    rep: Representation,
    enc: EncoderKind,
}

#[derive(Debug, Serialize)]
struct QueryHit {
    id: String,
    similarity: f64,
    rank: usize,
    meta: VignetteMeta,
    thumbnail_url: String,
}

async fn query(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: QueryRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    if !(1..=MAX_K).contains(&req.k) {
        return Err(ApiError::bad_request(format!("k must be in 1..={MAX_K}")));
    }
    let snap = st.snapshot().ok_or_else(ApiError::rebuilding)?;
    let key = (req.rep, req.enc);
    let idx = snap
        .indexes
        .get(&key)
        .ok_or_else(|| ApiError::not_found(format!("no index for {}", key_label(key))))?;
    let (vector, exclude) = match (req.id, req.embedding) {
        (Some(id), None) => {
            let e = idx.get(&id).ok_or(Error::UnknownId(id.clone()))?;
            (e.vector.iter().map(|&x| x as f64).collect::<Vec<_>>(), Some(id))
        }
        (None, Some(v)) => (v, None),
        _ => return Err(ApiError::bad_request("exactly one of id and embedding is required")),
    };
    let results = idx.query_excluding(&vector, req.k, exclude.as_deref())?;
    let hits: Vec<QueryHit> = results
        .into_iter()
        .map(|r| QueryHit {
            thumbnail_url: thumbnail_url(&r.id, req.rep),
            id: r.id,
            similarity: r.similarity,
            rank: r.rank,
            meta: r.meta,
        })
        .collect();
    Ok(Json(json!({
        "query_id": exclude,
        "rep": req.rep,
        "enc": req.enc,
        "index_version": idx.version(),
        "results": hits,
    })))
}

#[derive(Debug, Default, Deserialize)]
struct IngestMeta {
    id: Option<String>,
    #[serde(flatten)]
    meta: VignetteMeta,
}

async fn ingest(State(st): State<Arc<AppState>>, mut form: Multipart) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let mut file: Option<(Option<String>, Bytes)> = None;
    let mut meta = IngestMeta::default();
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        match field.name() {
            Some("file") => {
                let name = field.file_name().map(str::to_string);
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                file = Some((name, bytes));
            }
            Some("meta") => {
                let text = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                meta = serde_json::from_slice(&text).map_err(|e| ApiError::bad_request(format!("malformed meta: {e}")))?;
            }
            _ => {}
        }
    }
    let (name, bytes) = file.ok_or_else(|| ApiError::bad_request("missing file part"))?;
    let id = meta
        .id
        .or_else(|| {
            name.as_deref()
                .map(|n| n.rsplit(['/', '\\']).next().unwrap_or(n))
                .map(|n| n.strip_suffix(".sarv").unwrap_or(n).to_string())
        })
        .ok_or_else(|| ApiError::bad_request("no id in meta and no file name"))?;

    let _guard = st.ingest.lock().await;
    let st2 = st.clone();
    let meta = meta.meta;
    let id = tokio::task::spawn_blocking(move || st2.ingest_blocking(&bytes, id, meta))
        .await
        .map_err(|e| ApiError::from(Error::Invariant(e.to_string())))??;
    Ok((StatusCode::CREATED, Json(json!({"id": id}))))
}
