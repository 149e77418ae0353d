use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use tokio::sync::broadcast;

/// A live-stream notification. `seq` counts frames from 1 and survives
/// restarts, since recovery emits the same frames in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u64,
    pub kind: FrameKind,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Situation,
    Proposal,
    Schedule,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Situation => "situation",
            FrameKind::Proposal => "proposal",
            FrameKind::Schedule => "schedule",
        }
    }
}

/// Frame history plus fan-out to live subscribers.
#[derive(Debug)]
pub struct FrameHub {
    history: Mutex<Vec<Frame>>,
    tx: broadcast::Sender<Frame>,
}

impl Default for FrameHub {
    fn default() -> Self {
        Self {
            history: Mutex::new(Vec::new()),
            tx: broadcast::channel(1024).0,
        }
    }
}

impl FrameHub {
    pub fn push(&self, kind: FrameKind, data: impl Serialize) {
        let mut h = self.history.lock().expect("frame lock poisoned");
        let frame = Frame {
            seq: h.len() as u64 + 1,
            kind,
            data: serde_json::to_value(data).expect("frame data serializes"),
        };
        h.push(frame.clone());
        // No subscribers is fine.
        let _ = self.tx.send(frame);
    }

    /// Frames after `since`, and a receiver for everything that follows
    /// them with no gap.
    pub fn subscribe(&self, since: u64) -> (Vec<Frame>, broadcast::Receiver<Frame>) {
        let h = self.history.lock().expect("frame lock poisoned");
        let backlog = h.iter().skip(since as usize).cloned().collect();
        (backlog, self.tx.subscribe())
    }

    pub fn len(&self) -> u64 {
        self.history.lock().expect("frame lock poisoned").len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn history(&self) -> Vec<Frame> {
        self.history.lock().expect("frame lock poisoned").clone()
    }
}
