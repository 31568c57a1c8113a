//! Bounded store of freshly graded samples.
//!
//! Producers push entries; each push is assigned the next sequence number
//! and, once the buffer is over capacity, evicts the oldest entries in the
//! same critical section. Samplers draw uniformly without replacement and
//! never remove anything.

mod server;
pub mod wire;

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{validate_entry, BufferEntry};

pub use server::{BufferClient, BufferServer, ClientError, Reply, ServerHandle};

pub const DEFAULT_CAPACITY: usize = 6400;

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("entry rejected: {0}")]
    ValidationFailed(String),
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("spill file: {0}")]
    Io(#[from] std::io::Error),
    #[error("spill file line {line}: {source}")]
    Spill {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BufferStats {
    pub size: usize,
    pub capacity: usize,
    /// Highest sequence number handed out so far (0 before the first push).
    pub last_seq: u64,
    pub evicted: u64,
}

#[derive(Debug)]
struct State {
    entries: VecDeque<BufferEntry>,
    last_seq: u64,
    evicted: u64,
}

#[derive(Debug)]
pub struct OnlineBuffer {
    capacity: usize,
    state: Mutex<State>,
    spill: Option<Mutex<BufWriter<File>>>,
}

impl OnlineBuffer {
    pub fn new(capacity: usize) -> Result<Self, BufferError> {
        if capacity == 0 {
            return Err(BufferError::ZeroCapacity);
        }
        Ok(OnlineBuffer {
            capacity,
            state: Mutex::new(State {
                entries: VecDeque::with_capacity(capacity.min(1 << 16)),
                last_seq: 0,
                evicted: 0,
            }),
            spill: None,
        })
    }

    /// Opens (or creates) an append-only spill file. Existing records are
    /// replayed: the newest `capacity` of them are restored and numbering
    /// resumes after the highest stored sequence number.
    pub fn with_spill(capacity: usize, path: &Path) -> Result<Self, BufferError> {
        let mut buffer = OnlineBuffer::new(capacity)?;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let mut restored: Vec<BufferEntry> = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry = wire::decode(&line).map_err(|source| BufferError::Spill {
                    line: i + 1,
                    source,
                })?;
                restored.push(entry);
            }
            restored.sort_by_key(|e| e.created_seq);
            let state = buffer.state.get_mut();
            state.last_seq = restored.last().map_or(0, |e| e.created_seq);
            let skip = restored.len().saturating_sub(capacity);
            state.evicted = skip as u64;
            state.entries.extend(restored.into_iter().skip(skip));
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        buffer.spill = Some(Mutex::new(BufWriter::new(file)));
        Ok(buffer)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.state.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> BufferStats {
        let state = self.state.lock();
        BufferStats {
            size: state.entries.len(),
            capacity: self.capacity,
            last_seq: state.last_seq,
            evicted: state.evicted,
        }
    }

    /// Validates, numbers and stores `entry`; returns its sequence number.
    pub fn push(&self, mut entry: BufferEntry) -> Result<u64, BufferError> {
        let violations = validate_entry(&entry);
        if !violations.is_empty() {
            let msg = violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(BufferError::ValidationFailed(msg));
        }
        let mut state = self.state.lock();
        let seq = state.last_seq + 1;
        entry.created_seq = seq;
        if let Some(spill) = &self.spill {
            let mut w = spill.lock();
            writeln!(w, "{}", wire::encode(&entry))?;
            w.flush()?;
        }
        state.last_seq = seq;
        state.entries.push_back(entry);
        while state.entries.len() > self.capacity {
            state.entries.pop_front();
            state.evicted += 1;
        }
        Ok(seq)
    }

    /// `min(batch_size, len)` distinct entries chosen uniformly; the same
    /// seed on the same contents gives the same batch.
    pub fn sample(&self, batch_size: usize, seed: u64) -> Result<Vec<BufferEntry>, BufferError> {
        let state = self.state.lock();
        let n = state.entries.len();
        if n == 0 {
            return Err(BufferError::EmptyBuffer);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, n, batch_size.min(n));
        Ok(picks.iter().map(|i| state.entries[i].clone()).collect())
    }

    /// Sequence numbers currently held, oldest first.
    pub fn seqs(&self) -> Vec<u64> {
        self.state.lock().entries.iter().map(|e| e.created_seq).collect()
    }

    pub fn snapshot(&self) -> Vec<BufferEntry> {
        self.state.lock().entries.iter().cloned().collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::types::{BaselineRewards, CandidateProgram, Feedback, RewardBundle, Span};
    use std::collections::HashMap;

    pub(crate) fn entry(tag: &str) -> BufferEntry {
        let candidate = CandidateProgram::from_source(format!("print({tag})"));
        let t = candidate.len();
        BufferEntry {
            problem_id: "p".into(),
            candidate: candidate.with_logprobs(vec![-0.25; t]),
            feedback: Feedback::pass(2),
            rewards: RewardBundle {
                r_coarse: 1.0,
                r_fine: 0.0,
                r_adaptive: 1.0,
                span_coarse: Span::new(0, t),
                span_fine: Span::EMPTY,
                span_adaptive: Span::new(0, t),
                fine_weight: 0.0,
                adaptive_active: true,
            },
            baseline: BaselineRewards::default(),
            created_seq: 0,
        }
    }

    #[test]
    fn fifo_eviction() {
        let buf = OnlineBuffer::new(2).unwrap();
        assert_eq!(buf.push(entry("a")).unwrap(), 1);
        assert_eq!(buf.len(), 1);
        buf.push(entry("b")).unwrap();
        buf.push(entry("c")).unwrap();
        let kept: Vec<_> = buf.snapshot().into_iter().map(|e| e.candidate.source).collect();
        assert_eq!(kept, vec!["print(b)", "print(c)"]);
        assert_eq!(buf.stats().evicted, 1);
    }

    #[test]
    fn invalid_entry_is_rejected() {
        let buf = OnlineBuffer::new(2).unwrap();
        let mut e = entry("a");
        e.candidate.logprobs = None;
        assert!(matches!(buf.push(e), Err(BufferError::ValidationFailed(_))));
        assert!(buf.is_empty());
        assert_eq!(buf.stats().last_seq, 0);
    }

    #[test]
    fn sampling_rules() {
        let buf = OnlineBuffer::new(10).unwrap();
        assert!(matches!(buf.sample(1, 0), Err(BufferError::EmptyBuffer)));
        buf.push(entry("only")).unwrap();
        let got = buf.sample(4, 7).unwrap();
        assert_eq!(got.len(), 1);
        for i in 0..5 {
            buf.push(entry(&i.to_string())).unwrap();
        }
        assert_eq!(buf.sample(3, 11).unwrap(), buf.sample(3, 11).unwrap());
        let seqs: Vec<_> = buf.sample(6, 3).unwrap().iter().map(|e| e.created_seq).collect();
        let mut uniq = seqs.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 6);
        assert_eq!(buf.len(), 6, "sampling does not remove");
    }

    #[test]
    fn single_draw_frequencies_are_uniform() {
        let buf = OnlineBuffer::new(5).unwrap();
        for i in 0..5 {
            buf.push(entry(&i.to_string())).unwrap();
        }
        let mut counts: HashMap<u64, usize> = HashMap::new();
        let draws = 10_000;
        for seed in 0..draws {
            let e = buf.sample(1, seed).unwrap().pop().unwrap();
            *counts.entry(e.created_seq).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        for (seq, c) in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.2).abs() <= 0.02, "seq {seq} frequency {f}");
        }
    }

    #[test]
    fn concurrent_pushes_keep_newest() {
        let buf = OnlineBuffer::new(100).unwrap();
        let acks = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for t in 0..10 {
                let (buf, acks) = (&buf, &acks);
                s.spawn(move || {
                    for i in 0..100 {
                        let seq = buf.push(entry(&format!("{t}_{i}"))).unwrap();
                        acks.lock().push(seq);
                    }
                });
            }
        });
        let mut acks = acks.into_inner();
        acks.sort();
        assert_eq!(acks, (1..=1000).collect::<Vec<u64>>());
        assert_eq!(buf.len(), 100);
        assert_eq!(buf.seqs(), (901..=1000).collect::<Vec<u64>>());
    }

    #[test]
    fn spill_replay_restores_newest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spill.jsonl");
        {
            let buf = OnlineBuffer::with_spill(3, &path).unwrap();
            for i in 0..5 {
                buf.push(entry(&i.to_string())).unwrap();
            }
        }
        let buf = OnlineBuffer::with_spill(3, &path).unwrap();
        assert_eq!(buf.seqs(), vec![3, 4, 5]);
        assert_eq!(buf.snapshot()[0].candidate.source, "print(2)");
        assert_eq!(buf.push(entry("x")).unwrap(), 6);
        assert_eq!(buf.seqs(), vec![4, 5, 6]);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(matches!(OnlineBuffer::new(0), Err(BufferError::ZeroCapacity)));
    }
}
