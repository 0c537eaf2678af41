use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use super::{
    abandon, mark_satisfied, refine_session, start_session, turn_diff, DiffEntry, LogRecord,
    Session, SessionError, SessionId, SessionLog,
};
use crate::gateway::{Gateway, Provider, UserInput};
use crate::palette::Palette;

struct Slot {
    session: Session,
    busy: bool,
}

/// Owns live sessions and serializes writes per session.
///
/// A refinement holds the session's busy flag while the provider call runs;
/// a second refinement (or close) on the same session in the meantime fails
/// with [`SessionError::Busy`]. Distinct sessions never block each other
/// beyond the brief map lock.
pub struct SessionManager {
    palette: Arc<Palette>,
    provider: Arc<dyn Provider>,
    log: Option<SessionLog>,
    slots: Mutex<HashMap<SessionId, Slot>>,
}

/// Clears the busy flag if a refinement unwinds or fails.
struct BusyGuard<'a> {
    manager: &'a SessionManager,
    id: &'a SessionId,
}

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        if let Some(slot) = self.manager.slots().get_mut(self.id) {
            slot.busy = false;
        }
    }
}

impl SessionManager {
    pub fn new(
        palette: Arc<Palette>,
        provider: Arc<dyn Provider>,
        log: Option<SessionLog>,
    ) -> Self {
        Self {
            palette,
            provider,
            log,
            slots: Mutex::default(),
        }
    }

    /// Adds already persisted sessions (e.g. from [`super::replay`]).
    pub fn restore(&self, sessions: impl IntoIterator<Item = Session>) {
        let mut slots = self.slots();
        for session in sessions {
            slots.insert(
                session.id.clone(),
                Slot {
                    session,
                    busy: false,
                },
            );
        }
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn gateway(&self) -> Gateway<'_> {
        Gateway::new(self.provider.as_ref(), &self.palette)
    }

    fn slots(&self) -> MutexGuard<'_, HashMap<SessionId, Slot>> {
        self.slots.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self, record: &LogRecord) -> Result<(), SessionError> {
        if let Some(log) = &self.log {
            log.append(record)?;
        }
        Ok(())
    }

    /// Builds a [`UserInput`], cascading image and audio bytes to text.
    pub fn cascade_input(
        &self,
        text: Option<String>,
        image: Option<&[u8]>,
        audio: Option<&[u8]>,
    ) -> Result<UserInput, SessionError> {
        let gateway = self.gateway();
        let image_description = image.map(|b| gateway.describe_image(b)).transpose()?;
        let transcript = audio.map(|b| gateway.transcribe(b)).transpose()?;
        let input = UserInput {
            text,
            image_description,
            transcript,
        };
        input.validate()?;
        Ok(input)
    }

    /// Zero-shot generation; the session exists only if generation and the
    /// log write both succeed.
    pub fn start(&self, input: UserInput) -> Result<Session, SessionError> {
        let session = start_session(&self.gateway(), input)?;
        self.write(&LogRecord::created(&session))?;
        self.restore([session.clone()]);
        Ok(session)
    }

    pub fn get(&self, id: &SessionId) -> Result<Session, SessionError> {
        self.slots()
            .get(id)
            .map(|s| s.session.clone())
            .ok_or_else(|| SessionError::NotFound(id.clone()))
    }

    pub fn ids(&self) -> Vec<SessionId> {
        self.slots().keys().cloned().collect()
    }

    /// Appends a refinement turn and returns it with its diff. On any error
    /// the session is left as it was.
    pub fn refine(
        &self,
        id: &SessionId,
        feedback: &str,
    ) -> Result<(Session, Vec<DiffEntry>), SessionError> {
        let current = {
            let mut slots = self.slots();
            let slot = slots
                .get_mut(id)
                .ok_or_else(|| SessionError::NotFound(id.clone()))?;
            if slot.busy {
                return Err(SessionError::Busy(id.clone()));
            }
            slot.busy = true;
            slot.session.clone()
        };
        let _guard = BusyGuard { manager: self, id };

        let next = refine_session(&self.gateway(), &current, feedback)?;
        self.write(&LogRecord::turn(&next))?;
        let diff = turn_diff(&current.latest().ratios, &next.latest().ratios);
        if let Some(slot) = self.slots().get_mut(id) {
            slot.session = next.clone();
        }
        Ok((next, diff))
    }

    pub fn satisfy(&self, id: &SessionId) -> Result<Session, SessionError> {
        self.close(id, mark_satisfied)
    }

    pub fn abandon(&self, id: &SessionId) -> Result<Session, SessionError> {
        self.close(id, abandon)
    }

    fn close(
        &self,
        id: &SessionId,
        transition: fn(&Session) -> Result<Session, SessionError>,
    ) -> Result<Session, SessionError> {
        let mut slots = self.slots();
        let slot = slots
            .get_mut(id)
            .ok_or_else(|| SessionError::NotFound(id.clone()))?;
        if slot.busy {
            return Err(SessionError::Busy(id.clone()));
        }
        let next = transition(&slot.session)?;
        self.write(&LogRecord::closed(&next))?;
        slot.session = next.clone();
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::mpsc;

    use super::*;
    use crate::gateway::{MockProvider, ProviderError};
    use crate::session::{replay, SessionStatus};

    /// Blocks in `complete` until released, to hold a refinement in flight.
    struct Gate {
        inner: MockProvider,
        entered: Mutex<mpsc::Sender<()>>,
        release: Mutex<mpsc::Receiver<()>>,
    }

    impl Provider for Gate {
        fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
            if system.contains("REVISION") {
                self.entered.lock().unwrap().send(()).unwrap();
                self.release.lock().unwrap().recv().unwrap();
            }
            self.inner.complete(system, user)
        }
        fn describe_image(&self, image: &[u8]) -> Result<String, ProviderError> {
            self.inner.describe_image(image)
        }
        fn transcribe(&self, audio: &[u8]) -> Result<String, ProviderError> {
            self.inner.transcribe(audio)
        }
    }

    fn manager_with_log() -> (SessionManager, tempfile::TempDir) {
        let p = Arc::new(Palette::bundled());
        let dir = tempfile::tempdir().unwrap();
        let log = SessionLog::open(dir.path().join("s.jsonl")).unwrap();
        let provider = Arc::new(MockProvider::new((*p).clone()));
        (SessionManager::new(p, provider, Some(log)), dir)
    }

    #[test]
    fn full_loop_is_logged_and_replayable() {
        let (m, dir) = manager_with_log();
        let s = m.start(UserInput::text("strawberry cake")).unwrap();
        let (_, diff) = m.refine(&s.id, "less sweet").unwrap();
        assert!(!diff.is_empty());
        m.refine(&s.id, "more thyme").unwrap();
        let done = m.satisfy(&s.id).unwrap();
        assert_eq!(done.refinement_turns(), 2);

        let records = SessionLog::read_path(dir.path().join("s.jsonl")).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(replay(&records, m.palette()).unwrap(), vec![done]);
    }

    #[test]
    fn unknown_session_not_found() {
        let (m, _dir) = manager_with_log();
        let id = SessionId::from("nope");
        assert!(matches!(m.refine(&id, "x"), Err(SessionError::NotFound(_))));
        assert!(matches!(m.satisfy(&id), Err(SessionError::NotFound(_))));
    }

    #[test]
    fn failed_refinement_leaves_session_unchanged() {
        let (m, dir) = manager_with_log();
        let s = m.start(UserInput::text("pizza")).unwrap();
        assert!(m.refine(&s.id, "  ").is_err());
        assert_eq!(m.get(&s.id).unwrap(), s);
        // The busy flag was released.
        assert!(m.refine(&s.id, "more onion").is_ok());
        let records = SessionLog::read_path(dir.path().join("s.jsonl")).unwrap();
        assert_eq!(records.len(), 2);
    }

    #[test]
    fn concurrent_refinement_conflicts() {
        let p = Arc::new(Palette::bundled());
        let (entered_tx, entered_rx) = mpsc::channel();
        let (release_tx, release_rx) = mpsc::channel();
        let provider = Arc::new(Gate {
            inner: MockProvider::new((*p).clone()),
            entered: Mutex::new(entered_tx),
            release: Mutex::new(release_rx),
        });
        let m = Arc::new(SessionManager::new(p, provider, None));
        let s = m.start(UserInput::text("pizza")).unwrap();

        let worker = {
            let m = Arc::clone(&m);
            let id = s.id.clone();
            std::thread::spawn(move || m.refine(&id, "less sour"))
        };
        entered_rx.recv().unwrap();
        assert!(matches!(
            m.refine(&s.id, "more onion"),
            Err(SessionError::Busy(_))
        ));
        assert!(matches!(m.satisfy(&s.id), Err(SessionError::Busy(_))));
        // Other sessions proceed.
        let other = m.start(UserInput::text("salad")).unwrap();
        assert_eq!(
            m.satisfy(&other.id).unwrap().status,
            SessionStatus::Satisfied
        );

        release_tx.send(()).unwrap();
        assert!(worker.join().unwrap().is_ok());
        assert_eq!(m.get(&s.id).unwrap().turns.len(), 2);
    }

    #[test]
    fn cascade_requires_some_input() {
        let (m, _dir) = manager_with_log();
        assert!(m.cascade_input(None, None, None).is_err());
        let input = m.cascade_input(None, Some(b"ramen"), None).unwrap();
        assert_eq!(input.image_description.as_deref(), Some("Photo of ramen"));
    }
}
