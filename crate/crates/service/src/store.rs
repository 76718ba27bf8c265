//! Episode registry backed by one append-only event log per episode and an
//! index file recording creation order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use forge_core::chronology::Relationship;
use forge_core::rebot::{read_events, ChatEpisodeState, ChatError, ChatEvent, EventLog};
use serde::{Deserialize, Serialize};

const INDEX_FILE: &str = "index.jsonl";
const EPISODE_DIR: &str = "episodes";

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    episode_id: String,
}

/// Writer half: the authoritative state plus its log, behind one mutex.
pub struct Writer {
    pub state: ChatEpisodeState,
    log: EventLog,
}

pub struct Slot {
    pub writer: tokio::sync::Mutex<Writer>,
    snapshot: RwLock<Arc<ChatEpisodeState>>,
}

impl Slot {
    pub fn snapshot(&self) -> Arc<ChatEpisodeState> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }
}

impl Writer {
    /// Logs `events`, then applies them; `next` must be `state` with the
    /// events applied.
    pub fn persist(
        &mut self,
        slot: &Slot,
        next: ChatEpisodeState,
        events: &[ChatEvent],
    ) -> Result<(), ChatError> {
        self.log.append(events)?;
        self.state = next;
        *slot.snapshot.write().expect("snapshot lock poisoned") = Arc::new(self.state.clone());
        Ok(())
    }
}

#[derive(Default)]
struct Registry {
    order: Vec<String>,
    slots: HashMap<String, Arc<Slot>>,
}

pub struct Store {
    data_dir: PathBuf,
    registry: RwLock<Registry>,
    index: std::sync::Mutex<EventLogFile>,
}

/// Plain append handle for the index.
struct EventLogFile {
    file: std::fs::File,
}

fn episode_path(data_dir: &Path, id: &str) -> PathBuf {
    data_dir.join(EPISODE_DIR).join(format!("{id}.jsonl"))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    /// Opens `data_dir`, replaying every indexed episode.
    pub fn open(data_dir: &Path) -> Result<Self, ChatError> {
        std::fs::create_dir_all(data_dir.join(EPISODE_DIR))?;
        let index_path = data_dir.join(INDEX_FILE);
        let mut registry = Registry::default();
        if index_path.exists() {
            let text = std::fs::read_to_string(&index_path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: IndexLine = match serde_json::from_str(line) {
                    Ok(e) => e,
                    Err(e) if i + 1 == text.lines().count() && !text.ends_with('\n') => {
                        log::warn!("dropping torn index line: {e}");
                        continue;
                    }
                    Err(e) => {
                        return Err(ChatError::CorruptLog {
                            line: i + 1,
                            detail: format!("{INDEX_FILE}: {e}"),
                        })
                    }
                };
                if registry.slots.contains_key(&entry.episode_id) {
                    continue;
                }
                let path = episode_path(data_dir, &entry.episode_id);
                let state = ChatEpisodeState::from_events(&read_events(&path)?)?;
                let slot = Slot::new(state, EventLog::open(&path)?);
                registry.order.push(entry.episode_id.clone());
                registry.slots.insert(entry.episode_id, Arc::new(slot));
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)?;
        log::info!(
            "loaded {} episode(s) from {}",
            registry.order.len(),
            data_dir.display()
        );
        Ok(Self {
            data_dir: data_dir.to_path_buf(),
            registry: RwLock::new(registry),
            index: std::sync::Mutex::new(EventLogFile { file }),
        })
    }

    pub fn create(&self, id: String, relationship: Relationship) -> Result<Arc<Slot>, ChatError> {
        if !valid_id(&id) {
            return Err(ChatError::InvalidInput(format!("bad episode id {id:?}")));
        }
        let (state, created) = ChatEpisodeState::create(id.clone(), relationship);
        let path = episode_path(&self.data_dir, &id);
        let mut log = EventLog::open(&path)?;
        log.append(&[created])?;
        {
            use std::io::Write;
            let mut index = self.index.lock().expect("index lock poisoned");
            let mut line = serde_json::to_vec(&IndexLine {
                episode_id: id.clone(),
            })
            .map_err(std::io::Error::other)?;
            line.push(b'\n');
            index.file.write_all(&line)?;
            index.file.sync_data()?;
        }
        let slot = Arc::new(Slot::new(state, log));
        let mut reg = self.registry.write().expect("registry lock poisoned");
        reg.order.push(id.clone());
        reg.slots.insert(id, slot.clone());
        Ok(slot)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Slot>> {
        self.registry
            .read()
            .expect("registry lock poisoned")
            .slots
            .get(id)
            .cloned()
    }

    /// Snapshots in creation order.
    pub fn list(&self) -> Vec<Arc<ChatEpisodeState>> {
        let reg = self.registry.read().expect("registry lock poisoned");
        reg.order
            .iter()
            .filter_map(|id| reg.slots.get(id))
            .map(|s| s.snapshot())
            .collect()
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        episode_path(&self.data_dir, id)
    }
}

impl Slot {
    fn new(state: ChatEpisodeState, log: EventLog) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(state.clone())),
            writer: tokio::sync::Mutex::new(Writer { state, log }),
        }
    }
}
