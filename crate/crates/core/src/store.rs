//! Append-only event store: a single-writer segmented log of notification
//! TLV frames with an in-memory index rebuilt on open.
//!
//! Offsets are logical: the n-th appended notification has offset n,
//! starting at 0. Segment files hold concatenated frames and roll over at
//! a size cap; a plain-text manifest lists segment ids and frame counts.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{
    decode_frame, encode_notification, filter_matches, CodecError, EventNotification,
    SubscriptionFilter, SymbolKey, SymbolSelector,
};

/// Segment rollover threshold.
pub const SEGMENT_CAP_BYTES: u64 = 64 * 1024 * 1024;

const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate key ({source_id}, {seq})")]
    DuplicateKey { source_id: String, seq: u64 },
    #[error("replay range [{from}, {to}) invalid for store of length {len}")]
    BadRange { from: u64, to: u64, len: u64 },
    #[error("segment {segment} corrupt at byte {offset}: {cause}")]
    Corrupt {
        segment: u32,
        offset: u64,
        cause: CodecError,
    },
    #[error("manifest line {line}: {message}")]
    BadManifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn segment_file_name(id: u32) -> String {
    format!("segment-{id:08}.log")
}

#[derive(Debug)]
struct DirBacking {
    dir: PathBuf,
    writer: BufWriter<File>,
    current_segment: u32,
    current_segment_bytes: u64,
    /// frames per segment, for the manifest
    segment_frames: BTreeMap<u32, u64>,
}

impl DirBacking {
    fn write_manifest(&self) -> Result<(), StoreError> {
        let mut text = String::new();
        for (id, frames) in &self.segment_frames {
            text.push_str(&format!("segment {id} frames {frames}\n"));
        }
        // Write-then-rename so a crash never leaves a torn manifest.
        let tmp = self.dir.join(format!("{MANIFEST_NAME}.tmp"));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, self.dir.join(MANIFEST_NAME))?;
        Ok(())
    }
}

/// The event store. One writer, any number of readers of the in-memory
/// image; reopening a directory store rebuilds the identical state from
/// the segment files.
#[derive(Debug)]
pub struct EventStore {
    /// Decoded notifications in append order; index == logical offset.
    entries: Vec<EventNotification>,
    /// Per-symbol offsets in ascending order.
    by_symbol: HashMap<SymbolKey, Vec<u64>>,
    /// Per-source seq -> offset; also the duplicate-key check.
    by_source_seq: HashMap<String, BTreeMap<u64, u64>>,
    backing: Option<DirBacking>,
    segment_cap: u64,
}

impl EventStore {
    /// Volatile store with no files behind it.
    pub fn in_memory() -> Self {
        EventStore {
            entries: Vec::new(),
            by_symbol: HashMap::new(),
            by_source_seq: HashMap::new(),
            backing: None,
            segment_cap: SEGMENT_CAP_BYTES,
        }
    }

    /// Opens (or creates) a directory-backed store, rebuilding the index
    /// by scanning the segment files in id order.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        Self::open_with_cap(dir, SEGMENT_CAP_BYTES)
    }

    pub fn open_with_cap(dir: &Path, segment_cap: u64) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let mut segment_ids: Vec<u32> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name
                .strip_prefix("segment-")
                .and_then(|rest| rest.strip_suffix(".log"))
                .and_then(|digits| digits.parse::<u32>().ok())
            {
                segment_ids.push(id);
            }
        }
        segment_ids.sort_unstable();

        let mut store = EventStore {
            entries: Vec::new(),
            by_symbol: HashMap::new(),
            by_source_seq: HashMap::new(),
            backing: None,
            segment_cap,
        };
        let mut segment_frames = BTreeMap::new();
        let mut last_bytes = 0u64;
        for &id in &segment_ids {
            let mut bytes = Vec::new();
            File::open(dir.join(segment_file_name(id)))?.read_to_end(&mut bytes)?;
            let mut pos = 0usize;
            let mut frames = 0u64;
            while pos < bytes.len() {
                let (n, consumed) = decode_frame(&bytes[pos..]).map_err(|cause| {
                    StoreError::Corrupt { segment: id, offset: pos as u64, cause }
                })?;
                store.index_entry(&n)?;
                store.entries.push(n);
                pos += consumed;
                frames += 1;
            }
            segment_frames.insert(id, frames);
            last_bytes = bytes.len() as u64;
        }
        store.cross_check_manifest(dir, &segment_frames)?;

        let current_segment = segment_ids.last().copied().unwrap_or(0);
        if segment_ids.is_empty() {
            segment_frames.insert(0, 0);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(segment_file_name(current_segment)))?;
        store.backing = Some(DirBacking {
            dir: dir.to_path_buf(),
            writer: BufWriter::new(file),
            current_segment,
            current_segment_bytes: last_bytes,
            segment_frames,
        });
        Ok(store)
    }

    /// The manifest is informative; when present it must agree with the
    /// segment files.
    fn cross_check_manifest(
        &self,
        dir: &Path,
        segment_frames: &BTreeMap<u32, u64>,
    ) -> Result<(), StoreError> {
        let path = dir.join(MANIFEST_NAME);
        let Ok(text) = std::fs::read_to_string(&path) else {
            return Ok(());
        };
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = |message: String| StoreError::BadManifest { line: line_no, message };
            if parts.len() != 4 || parts[0] != "segment" || parts[2] != "frames" {
                return Err(bad(format!("unrecognized line {line:?}")));
            }
            let id: u32 = parts[1].parse().map_err(|_| bad("bad segment id".into()))?;
            let frames: u64 = parts[3].parse().map_err(|_| bad("bad frame count".into()))?;
            let actual = segment_frames.get(&id).copied();
            if actual != Some(frames) {
                return Err(bad(format!(
                    "segment {id}: manifest says {frames} frames, files hold {actual:?}"
                )));
            }
        }
        Ok(())
    }

    fn index_entry(&mut self, n: &EventNotification) -> Result<(), StoreError> {
        let offset = self.entries.len() as u64;
        let seqs = self.by_source_seq.entry(n.source.clone()).or_default();
        if seqs.contains_key(&n.seq) {
            return Err(StoreError::DuplicateKey { source_id: n.source.clone(), seq: n.seq });
        }
        seqs.insert(n.seq, offset);
        self.by_symbol.entry(n.symbol.clone()).or_default().push(offset);
        Ok(())
    }

    /// Durable ordered append; returns the logical offset. Repeated
    /// (source, seq) pairs are rejected.
    pub fn append(&mut self, n: &EventNotification) -> Result<u64, StoreError> {
        debug_assert!(n.validate().is_ok());
        self.index_entry(n)?;
        let offset = self.entries.len() as u64;
        if let Some(backing) = &mut self.backing {
            let frame = encode_notification(n);
            if backing.current_segment_bytes + frame.len() as u64 > self.segment_cap
                && backing.current_segment_bytes > 0
            {
                backing.writer.flush()?;
                backing.current_segment += 1;
                backing.current_segment_bytes = 0;
                backing.segment_frames.insert(backing.current_segment, 0);
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(backing.dir.join(segment_file_name(backing.current_segment)))?;
                backing.writer = BufWriter::new(file);
            }
            backing.writer.write_all(&frame)?;
            backing.writer.flush()?;
            backing.current_segment_bytes += frame.len() as u64;
            *backing
                .segment_frames
                .get_mut(&backing.current_segment)
                .expect("current segment registered") += 1;
            backing.write_manifest()?;
        }
        self.entries.push(n.clone());
        Ok(offset)
    }

    /// One past the last offset.
    pub fn end_offset(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, offset: u64) -> Option<&EventNotification> {
        self.entries.get(offset as usize)
    }

    /// Yields the stored notifications in `[from, to)` matching `filter`,
    /// in append order.
    pub fn replay(
        &self,
        filter: &SubscriptionFilter,
        from: u64,
        to: u64,
    ) -> Result<impl Iterator<Item = &EventNotification> + '_, StoreError> {
        let len = self.end_offset();
        if from > to || to > len {
            return Err(StoreError::BadRange { from, to, len });
        }
        // Symbol-set filters walk the per-symbol index instead of the log.
        let offsets: Vec<u64> = match &filter.symbols {
            Some(SymbolSelector::Set(set)) => {
                let mut offsets: Vec<u64> = set
                    .iter()
                    .filter_map(|sym| self.by_symbol.get(sym))
                    .flatten()
                    .copied()
                    .filter(|&o| o >= from && o < to)
                    .collect();
                offsets.sort_unstable();
                offsets
            }
            _ => (from..to).collect(),
        };
        let filter = filter.clone();
        Ok(offsets
            .into_iter()
            .map(move |o| &self.entries[o as usize])
            .filter(move |n| filter_matches(&filter, n)))
    }

    /// The stored notification for `symbol` with the greatest offset.
    pub fn latest(&self, symbol: &SymbolKey) -> Option<&EventNotification> {
        self.by_symbol
            .get(symbol)
            .and_then(|offsets| offsets.last())
            .map(|&o| &self.entries[o as usize])
    }

    /// Offset of a stored (source, seq) pair, if present.
    pub fn offset_of(&self, source: &str, seq: u64) -> Option<u64> {
        self.by_source_seq.get(source)?.get(&seq).copied()
    }

    /// All stored notifications in append order.
    pub fn scan(&self) -> impl Iterator<Item = &EventNotification> + '_ {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventType, InstrumentClass, Price};

    fn note(source: &str, seq: u64, symbol: &str) -> EventNotification {
        EventNotification {
            source: source.into(),
            seq,
            symbol: SymbolKey::parse(symbol).unwrap(),
            event_type: EventType::Trade,
            instrument_class: InstrumentClass::Equity,
            price: Some(Price::from_units(100 + seq as i64)),
            size: Some(10),
            bid: None,
            ask: None,
            source_ts_ms: 1_000 + seq,
            ingest_ts_ms: 2_000 + seq,
            enriched: None,
        }
    }

    #[test]
    fn offsets_start_at_zero_and_increase() {
        let mut store = EventStore::in_memory();
        assert_eq!(store.append(&note("SIM1", 1, "AAA.SIM")).unwrap(), 0);
        assert_eq!(store.append(&note("SIM1", 2, "BBB.SIM")).unwrap(), 1);
        assert_eq!(store.append(&note("SIM2", 1, "AAA.SIM")).unwrap(), 2);
        assert_eq!(store.end_offset(), 3);
    }

    #[test]
    fn duplicate_key_rejected() {
        let mut store = EventStore::in_memory();
        store.append(&note("SIM1", 7, "AAA.SIM")).unwrap();
        let err = store.append(&note("SIM1", 7, "BBB.SIM")).unwrap_err();
        assert!(matches!(err, StoreError::DuplicateKey { seq: 7, .. }));
        assert_eq!(store.end_offset(), 1);
    }

    #[test]
    fn replay_wildcard_is_append_order() {
        let mut store = EventStore::in_memory();
        let notes = [note("SIM1", 1, "AAA.SIM"), note("SIM1", 2, "BBB.SIM"), note("SIM2", 1, "AAA.SIM")];
        for n in &notes {
            store.append(n).unwrap();
        }
        let all: Vec<_> = store
            .replay(&SubscriptionFilter::wildcard(), 0, store.end_offset())
            .unwrap()
            .cloned()
            .collect();
        assert_eq!(all, notes);
        let empty: Vec<_> = store
            .replay(&SubscriptionFilter::wildcard(), 1, 1)
            .unwrap()
            .collect();
        assert!(empty.is_empty());
        assert!(store.replay(&SubscriptionFilter::wildcard(), 0, 4).is_err());
        assert!(store.replay(&SubscriptionFilter::wildcard(), 2, 1).is_err());
    }

    #[test]
    fn filtered_replay_equals_scan_and_filter() {
        let mut store = EventStore::in_memory();
        for seq in 1..=20 {
            let sym = if seq % 3 == 0 { "AAA.SIM" } else { "BBB.SIM" };
            store.append(&note("SIM1", seq, sym)).unwrap();
        }
        let filter = crate::model::parse_filter_expr("symbol=AAA.SIM").unwrap();
        let via_replay: Vec<_> = store
            .replay(&filter, 0, store.end_offset())
            .unwrap()
            .cloned()
            .collect();
        let via_scan: Vec<_> = store
            .scan()
            .filter(|n| filter_matches(&filter, n))
            .cloned()
            .collect();
        assert_eq!(via_replay, via_scan);
        assert_eq!(via_replay.len(), 6);
    }

    #[test]
    fn latest_tracks_greatest_offset() {
        let mut store = EventStore::in_memory();
        let sym = SymbolKey::parse("AAA.SIM").unwrap();
        assert!(store.latest(&sym).is_none());
        store.append(&note("SIM1", 1, "AAA.SIM")).unwrap();
        store.append(&note("SIM1", 2, "AAA.SIM")).unwrap();
        store.append(&note("SIM1", 3, "BBB.SIM")).unwrap();
        store.append(&note("SIM2", 9, "AAA.SIM")).unwrap();
        let latest = store.latest(&sym).unwrap();
        assert_eq!((latest.source.as_str(), latest.seq), ("SIM2", 9));
        // agrees with replay
        let filter = crate::model::parse_filter_expr("symbol=AAA.SIM").unwrap();
        let last = store
            .replay(&filter, 0, store.end_offset())
            .unwrap()
            .last()
            .unwrap();
        assert_eq!(last, latest);
    }

    #[test]
    fn reopen_rebuilds_identical_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut appended = Vec::new();
        {
            let mut store = EventStore::open(dir.path()).unwrap();
            for seq in 1..=50 {
                let sym = if seq % 2 == 0 { "AAA.SIM" } else { "BBB.SIM" };
                let n = note("SIM1", seq, sym);
                store.append(&n).unwrap();
                appended.push(n);
            }
        }
        let store = EventStore::open(dir.path()).unwrap();
        let replayed: Vec<_> = store
            .replay(&SubscriptionFilter::wildcard(), 0, store.end_offset())
            .unwrap()
            .cloned()
            .collect();
        assert_eq!(replayed, appended);
        // frame-level byte comparison
        for (stored, original) in replayed.iter().zip(&appended) {
            assert_eq!(encode_notification(stored), encode_notification(original));
        }
        // duplicate detection survives reopen
        let mut store = store;
        assert!(matches!(
            store.append(&note("SIM1", 50, "AAA.SIM")).unwrap_err(),
            StoreError::DuplicateKey { .. }
        ));
        assert_eq!(store.append(&note("SIM1", 51, "AAA.SIM")).unwrap(), 50);
    }

    #[test]
    fn segments_roll_over_at_cap() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = EventStore::open_with_cap(dir.path(), 256).unwrap();
            for seq in 1..=20 {
                store.append(&note("SIM1", seq, "AAA.SIM")).unwrap();
            }
        }
        let segments = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with("segment-")
            })
            .count();
        assert!(segments > 1, "expected rollover, got {segments} segment(s)");
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
        let total: u64 = manifest
            .lines()
            .map(|l| l.split_whitespace().nth(3).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 20);

        let store = EventStore::open_with_cap(dir.path(), 256).unwrap();
        assert_eq!(store.end_offset(), 20);
    }

    #[test]
    fn manifest_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = EventStore::open(dir.path()).unwrap();
            store.append(&note("SIM1", 1, "AAA.SIM")).unwrap();
        }
        std::fs::write(dir.path().join(MANIFEST_NAME), "segment 0 frames 9\n").unwrap();
        assert!(matches!(
            EventStore::open(dir.path()).unwrap_err(),
            StoreError::BadManifest { .. }
        ));
    }

    #[test]
    fn corrupt_segment_reported_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = EventStore::open(dir.path()).unwrap();
            store.append(&note("SIM1", 1, "AAA.SIM")).unwrap();
        }
        let seg = dir.path().join(segment_file_name(0));
        let mut bytes = std::fs::read(&seg).unwrap();
        bytes.push(0xFF); // trailing garbage: truncated next frame
        std::fs::write(&seg, bytes).unwrap();
        std::fs::remove_file(dir.path().join(MANIFEST_NAME)).unwrap();
        assert!(matches!(
            EventStore::open(dir.path()).unwrap_err(),
            StoreError::Corrupt { segment: 0, .. }
        ));
    }
}
