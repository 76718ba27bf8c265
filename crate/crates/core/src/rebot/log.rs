//! Append-only JSONL event log, one [`ChatEvent`] per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::{ChatError, ChatEvent};

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: &Path) -> Result<Self, ChatError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes the events in one buffer and syncs them to disk.
    pub fn append(&mut self, events: &[ChatEvent]) -> Result<(), ChatError> {
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e).map_err(std::io::Error::other)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Reads a log. A final line without its newline that fails to parse is a
/// torn write and is dropped; any other bad line is an error.
pub fn read_events_from<R: Read>(reader: R) -> Result<Vec<ChatEvent>, ChatError> {
    let mut reader = BufReader::new(reader);
    let mut events = Vec::new();
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<ChatEvent>(text) {
            Ok(e) => events.push(e),
            Err(e) if !complete => {
                log::warn!("dropping torn final event log line {line_no}: {e}");
            }
            Err(e) => {
                return Err(ChatError::CorruptLog {
                    line: line_no,
                    detail: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

pub fn read_events(path: &Path) -> Result<Vec<ChatEvent>, ChatError> {
    read_events_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chronology::{Relationship, TimeInterval};
    use crate::rebot::ChatEpisodeState;

    #[test]
    fn append_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/e.jsonl");
        let (mut state, created) = ChatEpisodeState::create("e", Relationship::Neighbors);
        let mut log = EventLog::open(&path).unwrap();
        log.append(&[created]).unwrap();
        log.append(&state.post_user_turn("Hello there.").unwrap())
            .unwrap();
        drop(log);
        let events = read_events(&path).unwrap();
        assert_eq!(ChatEpisodeState::from_events(&events).unwrap(), state);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let full = serde_json::to_string(&ChatEvent::Advanced {
            interval: TimeInterval::Days,
        })
        .unwrap();
        let text = format!("{full}\n{}", &full[..full.len() - 3]);
        assert_eq!(read_events_from(text.as_bytes()).unwrap().len(), 1);
        let text = format!("{}\n{full}\n", &full[..full.len() - 3]);
        assert!(matches!(
            read_events_from(text.as_bytes()),
            Err(ChatError::CorruptLog { line: 1, .. })
        ));
    }
}
