//! Live chat sessions bound to an engine, persisted through a
//! [`SessionStore`]. Operations on one session serialize on its mutex;
//! different sessions proceed independently.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sticker_core::dataset::Utterance;

use crate::engine::{Engine, LiveConversation, Suggestions};
use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub taxonomy: Vec<String>,
    pub checkpoint_id: String,
    pub index_id: String,
    pub conversation: LiveConversation,
    /// Milliseconds since the Unix epoch.
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub index_id: Option<String>,
    #[serde(default)]
    pub checkpoint_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMessage {
    pub speaker_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitSticker {
    pub sticker_id: String,
    /// Defaults to the speaker of the latest turn, or `User_1`.
    #[serde(default)]
    pub speaker_id: Option<String>,
}

/// Persistence behind the session manager.
pub trait SessionStore: Send + Sync {
    fn load_all(&self) -> Result<Vec<Session>>;
    fn put(&self, session: &Session) -> Result<()>;
}

#[derive(Default)]
pub struct MemoryStore {
    sessions: Mutex<BTreeMap<String, Session>>,
}

impl SessionStore for MemoryStore {
    fn load_all(&self) -> Result<Vec<Session>> {
        Ok(self.sessions.lock().expect("store lock").values().cloned().collect())
    }

    fn put(&self, session: &Session) -> Result<()> {
        self.sessions.lock().expect("store lock").insert(session.id.clone(), session.clone());
        Ok(())
    }
}

/// Every session in one JSON file, rewritten atomically on each change.
pub struct JsonFileStore {
    path: PathBuf,
    sessions: Mutex<BTreeMap<String, Session>>,
}

impl JsonFileStore {
    pub fn open(path: &Path) -> Result<Self> {
        let sessions = match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { path: path.to_path_buf(), sessions: Mutex::new(sessions) })
    }
}

impl SessionStore for JsonFileStore {
    fn load_all(&self) -> Result<Vec<Session>> {
        Ok(self.sessions.lock().expect("store lock").values().cloned().collect())
    }

    fn put(&self, session: &Session) -> Result<()> {
        let mut sessions = self.sessions.lock().expect("store lock");
        sessions.insert(session.id.clone(), session.clone());
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&*sessions)?)?;
        std::fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub struct SessionManager {
    engine: Arc<Engine>,
    store: Box<dyn SessionStore>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionManager {
    /// Restores the sessions bound to this engine's checkpoint and index;
    /// sessions bound to other artifacts stay in the store untouched.
    pub fn new(engine: Arc<Engine>, store: Box<dyn SessionStore>) -> Result<Self> {
        let sessions = store
            .load_all()?
            .into_iter()
            .filter(|s| s.checkpoint_id == engine.checkpoint_id && s.index_id == engine.index_id)
            .map(|s| (s.id.clone(), Arc::new(Mutex::new(s))))
            .collect();
        Ok(Self { engine, store, sessions: RwLock::new(sessions) })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::NotFound(format!("session `{id}`")))
    }

    pub fn create(&self, req: &CreateSession) -> Result<Session> {
        if let Some(id) = &req.index_id {
            if id != &self.engine.index_id {
                return Err(AppError::NotFound(format!("index `{id}`")));
            }
        }
        if let Some(id) = &req.checkpoint_id {
            if id != &self.engine.checkpoint_id {
                return Err(AppError::NotFound(format!("checkpoint `{id}`")));
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = now_ms();
        let session = Session {
            id: id.clone(),
            taxonomy: self.engine.taxonomy.clone(),
            checkpoint_id: self.engine.checkpoint_id.clone(),
            index_id: self.engine.index_id.clone(),
            conversation: LiveConversation { id: id.clone(), utterances: Vec::new() },
            created_ms: now,
            updated_ms: now,
        };
        self.store.put(&session)?;
        self.sessions.write().expect("session map lock").insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Session> {
        Ok(self.session(id)?.lock().expect("session lock").clone())
    }

    /// Validates and appends `utterance` (its index is assigned here), then
    /// persists before acknowledging.
    fn append(&self, id: &str, make: impl FnOnce(&Session) -> Utterance) -> Result<Session> {
        let handle = self.session(id)?;
        let mut session = handle.lock().expect("session lock");
        let mut utterance = make(&session);
        utterance.index = session.conversation.utterances.len();
        utterance.validate()?;
        let mut next = session.clone();
        next.conversation.utterances.push(utterance);
        next.updated_ms = now_ms().max(session.updated_ms);
        self.store.put(&next)?;
        *session = next.clone();
        Ok(next)
    }

    pub fn post_message(&self, id: &str, msg: &PostMessage) -> Result<Session> {
        self.append(id, |_| Utterance { index: 0, speaker_id: msg.speaker_id.clone(), text: msg.text.clone(), sticker_id: None })
    }

    pub fn commit_sticker(&self, id: &str, req: &CommitSticker) -> Result<Session> {
        if !self.engine.indexes(&req.sticker_id) {
            return Err(AppError::NotFound(format!("sticker `{}`", req.sticker_id)));
        }
        self.append(id, |s| {
            let speaker = req.speaker_id.clone().unwrap_or_else(|| {
                s.conversation.utterances.last().map_or_else(|| "User_1".to_string(), |u| u.speaker_id.clone())
            });
            Utterance { index: 0, speaker_id: speaker, text: String::new(), sticker_id: Some(req.sticker_id.clone()) }
        })
    }

    /// Suggestions for the session's current context. The context is
    /// snapshotted under the session lock; retrieval runs outside it.
    pub fn suggest(&self, id: &str, k: usize, relation_scores: bool) -> Result<Suggestions> {
        let utterances = self.session(id)?.lock().expect("session lock").conversation.utterances.clone();
        self.engine.suggest(id, &utterances, k, relation_scores)
    }
}
