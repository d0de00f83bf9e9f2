//! Exact brute-force k-nearest-neighbor index over pose descriptors.
//!
//! Rows are stored contiguously as `f32`; distances accumulate in `f64`.
//! Results are ordered by `(distance, id)`, which is a strict total order
//! because ids are unique, so single-threaded and partitioned scans return
//! identical lists.
//!
//! File layout (little-endian):
//!
//! ```text
//! "PKIX" | u16 version | u32 dim | u64 rows
//! rows x (u32 byte length | UTF-8 id)
//! rows x dim x f32
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::{self, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::{descriptor, PoseDescriptor, DESCRIPTOR_DIM};
use crate::error::{Error, Result};
use crate::skeleton::{BoundingBox, Skeleton};

pub const INDEX_MAGIC: &[u8; 4] = b"PKIX";
/// Version 1: lexicographic `(i, j)` pair order.
pub const INDEX_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct PoseIndex {
    dim: usize,
    rows: Vec<f32>,
    ids: Vec<String>,
    /// Position of each row's id in sorted id order; the tie-break key.
    id_rank: Vec<u32>,
}

impl PartialEq for PoseIndex {
    /// Bit-level comparison of rows.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl PoseIndex {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            ids: Vec::new(),
            id_rank: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, ids: Vec<String>, rows: Vec<f32>) -> Result<Self> {
        if rows.len() != ids.len() * dim {
            return Err(Error::LengthMismatch {
                expected: ids.len() * dim,
                actual: rows.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        let mut order: Vec<u32> = (0..ids.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
        let mut id_rank = vec![0u32; ids.len()];
        for (rank, &row) in order.iter().enumerate() {
            id_rank[row as usize] = rank as u32;
        }
        Ok(Self {
            dim,
            rows,
            ids,
            id_rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    fn check_query(&self, q: &[f32], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// Exact k nearest rows, single-threaded.
    pub fn knn(&self, q: &PoseDescriptor, k: usize) -> Result<Vec<QueryResult>> {
        self.check_query(q.values(), k)?;
        let mut top = TopK::new(k);
        self.scan(q.values(), 0..self.len(), &mut top);
        Ok(self.finish(top))
    }

    /// Same result as [`knn`](Self::knn), with rows partitioned across the
    /// rayon pool.
    pub fn knn_parallel(&self, q: &PoseDescriptor, k: usize) -> Result<Vec<QueryResult>> {
        self.check_query(q.values(), k)?;
        const CHUNK: usize = 8192;
        let n = self.len();
        let merged = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut top = TopK::new(k);
                self.scan(q.values(), c * CHUNK..((c + 1) * CHUNK).min(n), &mut top);
                top
            })
            .reduce(
                || TopK::new(k),
                |mut a, b| {
                    for cand in b.heap {
                        a.offer(cand);
                    }
                    a
                },
            );
        Ok(self.finish(merged))
    }

    fn scan(&self, q: &[f32], rows: std::ops::Range<usize>, top: &mut TopK) {
        let mut offer = |i: usize, sq: f64| {
            top.offer(Candidate {
                distance: sq.sqrt(),
                rank: self.id_rank[i],
                row: i as u32,
            })
        };
        // Independent rows side by side; each row still sums in order, so
        // the result matches `squared_distance` bit for bit.
        const LANES: usize = 4;
        let mut i = rows.start;
        while i + LANES <= rows.end {
            let block = &self.rows[i * self.dim..(i + LANES) * self.dim];
            let mut acc = [0.0f64; LANES];
            for (j, &qj) in q.iter().enumerate() {
                let qj = qj as f64;
                for (l, a) in acc.iter_mut().enumerate() {
                    let d = block[l * self.dim + j] as f64 - qj;
                    *a += d * d;
                }
            }
            for (l, a) in acc.into_iter().enumerate() {
                offer(i + l, a);
            }
            i += LANES;
        }
        for i in i..rows.end {
            offer(i, squared_distance(self.row(i), q));
        }
    }

    fn finish(&self, top: TopK) -> Vec<QueryResult> {
        top.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| QueryResult {
                id: self.ids[c.row as usize].clone(),
                distance: c.distance,
            })
            .collect()
    }

    /// SHA-256 over dim, ids and row bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for id in &self.ids {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
        for chunk in self.rows.chunks(1 << 16) {
            let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
            h.update(&bytes);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut w = io::BufWriter::new(w);
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for chunk in self.rows.chunks(1 << 16) {
            let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fails closed: any truncation, bad header or trailing data is an
    /// error naming the byte offset.
    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader {
            inner: io::BufReader::new(r),
            offset: 0,
        };
        let magic: [u8; 4] = r.array("magic")?;
        if &magic != INDEX_MAGIC {
            return Err(r.corrupt(0, "bad magic"));
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != INDEX_VERSION {
            return Err(r.corrupt(4, &format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(r.array("dim")?) as usize;
        let count = u64::from_le_bytes(r.array("row count")?);
        let count = usize::try_from(count).map_err(|_| r.corrupt(10, "row count overflow"))?;

        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let at = r.offset;
            let len = u32::from_le_bytes(r.array("id length")?) as usize;
            let bytes = r.bytes(len, "id")?;
            let id = String::from_utf8(bytes).map_err(|_| r.corrupt(at, "id is not UTF-8"))?;
            ids.push(id);
        }
        let matrix_at = r.offset;
        let total = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.corrupt(matrix_at, "matrix size overflow"))?;
        let mut rows = Vec::with_capacity(total / 4);
        let mut buf = vec![0u8; (1 << 18).min(total)];
        let mut remaining = total;
        while remaining > 0 {
            let n = remaining.min(buf.len());
            r.fill(&mut buf[..n], "descriptor matrix")?;
            rows.extend(
                buf[..n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            );
            remaining -= n;
        }
        let mut probe = [0u8; 1];
        if r.inner.read(&mut probe)? != 0 {
            return Err(r.corrupt(r.offset, "trailing bytes after matrix"));
        }
        Self::from_parts(dim, ids, rows).map_err(|e| match e {
            Error::DuplicateId(id) => r.corrupt(matrix_at, &format!("duplicate id `{id}`")),
            other => other,
        })
    }
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn corrupt(&self, offset: u64, reason: &str) -> Error {
        Error::CorruptIndex {
            offset,
            reason: reason.to_owned(),
        }
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(self.corrupt(self.offset + read as u64, &format!("truncated {what}")))
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b, what)?;
        Ok(b)
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.fill(&mut b, what)?;
        Ok(b)
    }
}

/// Squared euclidean distance in `f64`, summed in index order.
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = *x as f64 - *y as f64;
        acc + d * d
    })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    rank: u32,
    row: u32,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.rank.cmp(&other.rank))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

/// Bounded max-heap holding the k best candidates seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 16) + 1),
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if c < *worst {
                *worst = c;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    /// `(id, reason)` for every item that could not be described.
    pub skipped: Vec<(String, String)>,
}

/// Describe each item and collect the rows. Items whose descriptor cannot
/// be computed are skipped and reported; duplicate ids abort the build.
pub fn build_index<I>(items: I) -> Result<(PoseIndex, BuildReport)>
where
    I: IntoIterator<Item = (String, Skeleton, BoundingBox)>,
{
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut report = BuildReport::default();
    for (id, s, b) in items {
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        match descriptor(&s, &b) {
            Ok(d) => {
                rows.extend_from_slice(d.values());
                ids.push(id);
            }
            Err(e) => report.skipped.push((id, e.to_string())),
        }
    }
    Ok((PoseIndex::from_parts(DESCRIPTOR_DIM, ids, rows)?, report))
}
