//! Frozen string embeddings for task descriptions and rationales.
//!
//! Tables either come from an embedding file (written by an external
//! sentence-encoder exporter, or by [`save_table`]) or are generated offline
//! by a deterministic synthetic embedder. Once built, a table is never
//! mutated; lookups are exact-string.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{check_finite, cosine, dot, normalized};
use crate::io::write_atomic;

pub const DEFAULT_DIM: usize = 64;

/// Read-only access to string embeddings.
pub trait Embeddings: Sync {
    fn dim(&self) -> usize;
    fn lookup(&self, key: &str) -> Result<&[f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
    provider: String,
    normalized: bool,
}

impl EmbeddingTable {
    /// Builds a table, checking dimensions and rejecting duplicate keys.
    pub fn from_entries<I>(dim: usize, provider: impl Into<String>, normalize: bool, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        let mut map = BTreeMap::new();
        for (key, vector) in entries {
            if vector.len() != dim {
                return Err(Error::InconsistentDimension {
                    key,
                    expected: dim,
                    actual: vector.len(),
                });
            }
            check_finite(&vector, "embedding")?;
            let vector = if normalize { normalized(&vector)? } else { vector };
            if map.contains_key(&key) {
                return Err(Error::DuplicateKey(key));
            }
            map.insert(key, vector);
        }
        Ok(EmbeddingTable {
            dim,
            entries: map,
            provider: provider.into(),
            normalized: normalize,
        })
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// SHA-256 over the dimension and every (key, vector bits) pair in key order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (k, v) in &self.entries {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl Embeddings for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, key: &str) -> Result<&[f64]> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }
}

/// Wraps a table and records every key that was looked up.
pub struct AccessLog<'a, E: Embeddings> {
    inner: &'a E,
    seen: Mutex<BTreeSet<String>>,
}

impl<'a, E: Embeddings> AccessLog<'a, E> {
    pub fn new(inner: &'a E) -> Self {
        AccessLog {
            inner,
            seen: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn accessed(&self) -> BTreeSet<String> {
        self.seen.lock().expect("access log poisoned").clone()
    }
}

impl<E: Embeddings> Embeddings for AccessLog<'_, E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn lookup(&self, key: &str) -> Result<&[f64]> {
        self.seen
            .lock()
            .expect("access log poisoned")
            .insert(key.to_string());
        self.inner.lookup(key)
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TableFileOut<'a> {
    dim: usize,
    normalized: bool,
    provider: &'a str,
    embeddings: &'a BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct TableFileIn {
    dim: usize,
    normalized: bool,
    provider: String,
    embeddings: OrderedEntries,
}

/// Map entries in file order, duplicates preserved so they can be reported.
struct OrderedEntries(Vec<(String, Vec<f64>)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping strings to float arrays")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<f64>>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

pub fn save_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let out = TableFileOut {
        dim: table.dim,
        normalized: table.normalized,
        provider: &table.provider,
        embeddings: &table.entries,
    };
    let mut bytes = serde_json::to_vec(&out)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

/// Loads an embedding file and unit-normalizes every vector.
pub fn load_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    load_table_with(path, true)
}

/// Loads an embedding file. With `normalize == false` vectors are kept as
/// stored unless the file itself declares them normalized.
pub fn load_table_with(path: impl AsRef<Path>, normalize: bool) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TableFileIn = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    EmbeddingTable::from_entries(
        file.dim,
        file.provider,
        normalize || file.normalized,
        file.embeddings.0,
    )
}

// ---------------------------------------------------------------------------
// Synthetic embedders
// ---------------------------------------------------------------------------

/// Deterministic unit vector for a string: SHA-256 of `(master_seed, s)`
/// seeds a ChaCha20 stream, `dim` standard normals are drawn and normalized.
pub fn synthetic_embed(s: &str, dim: usize, master_seed: u64) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Empty("string to embed"));
    }
    if dim < 2 {
        return Err(Error::config("synthetic embedding dimension must be at least 2"));
    }
    let mut h = Sha256::new();
    h.update(b"recouple/synthetic-embed/v1\0");
    h.update(master_seed.to_le_bytes());
    h.update(s.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalized(&raw)
}

/// Lowercased alphanumeric word tokens.
pub fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Normalized sum of per-word synthetic embeddings. Strings that share words
/// get correlated vectors, which gives the offline embedder a crude notion of
/// semantic overlap. Falls back to [`synthetic_embed`] on the whole string
/// when it has no word tokens.
pub fn compose_embed(s: &str, dim: usize, master_seed: u64) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Empty("string to embed"));
    }
    let mut tokens = words(s);
    // Sorted so the floating-point sum is independent of word order.
    tokens.sort_unstable();
    if tokens.is_empty() {
        return synthetic_embed(s, dim, master_seed);
    }
    let mut acc = vec![0.0; dim];
    for t in &tokens {
        let v = synthetic_embed(t, dim, master_seed)?;
        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
    }
    normalized(&acc)
}

/// A set of strings that should embed close to a shared centroid, used to
/// model paraphrases of one rationale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticGroupSpec {
    pub group_id: String,
    pub centroid_seed: u64,
    pub member_strings: Vec<String>,
    pub perturbation_scale: f64,
}

impl SemanticGroupSpec {
    pub fn validate(&self) -> Result<()> {
        if self.member_strings.is_empty() {
            return Err(Error::config(format!("group {:?} has no members", self.group_id)));
        }
        let distinct: BTreeSet<&String> = self.member_strings.iter().collect();
        if distinct.len() != self.member_strings.len() {
            return Err(Error::config(format!("group {:?} has repeated members", self.group_id)));
        }
        if !(0.0..1.0).contains(&self.perturbation_scale) {
            return Err(Error::config(format!(
                "group {:?}: perturbation_scale must lie in [0, 1)",
                self.group_id
            )));
        }
        Ok(())
    }

    pub fn contains(&self, s: &str) -> bool {
        self.member_strings.iter().any(|m| m == s)
    }
}

/// `normalize(c + scale * dir)` where `c` embeds the group id and `dir` is the
/// member's own embedding with the centroid component removed, rescaled to
/// unit length.
pub fn group_embed(spec: &SemanticGroupSpec, s: &str, dim: usize) -> Result<Vec<f64>> {
    group_embed_with(spec, s, dim, synthetic_embed)
}

pub fn group_embed_with<F>(spec: &SemanticGroupSpec, s: &str, dim: usize, base: F) -> Result<Vec<f64>>
where
    F: Fn(&str, usize, u64) -> Result<Vec<f64>>,
{
    spec.validate()?;
    if !spec.contains(s) {
        return Err(Error::config(format!("{s:?} is not a member of group {:?}", spec.group_id)));
    }
    let centroid = base(&spec.group_id, dim, spec.centroid_seed)?;
    if spec.perturbation_scale == 0.0 {
        return Ok(centroid);
    }
    let own = base(s, dim, spec.centroid_seed)?;
    let along = dot(&own, &centroid);
    let residual: Vec<f64> = own.iter().zip(&centroid).map(|(o, c)| o - along * c).collect();
    let dir = normalized(&residual)?;
    let v: Vec<f64> = centroid
        .iter()
        .zip(&dir)
        .map(|(c, d)| c + spec.perturbation_scale * d)
        .collect();
    normalized(&v)
}

/// A string whose embedding is built from the embeddings of other strings,
/// standing in for a language model that places a task description near the
/// sub-skills it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub string: String,
    pub parts: Vec<String>,
    /// Weight of the string's own embedding in the sum.
    pub own_weight: f64,
}

impl CompositeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::config(format!("composite {:?} has no parts", self.string)));
        }
        if !(self.own_weight.is_finite() && self.own_weight >= 0.0) {
            return Err(Error::config(format!("composite {:?}: own_weight must be nonnegative", self.string)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticMode {
    /// One independent random direction per string.
    Hash,
    /// Sum of per-word directions.
    #[default]
    Compose,
}

/// Offline embedding provider configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProvider {
    pub dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SyntheticMode,
    #[serde(default)]
    pub groups: Vec<SemanticGroupSpec>,
    #[serde(default)]
    pub composites: Vec<CompositeSpec>,
}

impl Default for SyntheticProvider {
    fn default() -> Self {
        SyntheticProvider {
            dim: DEFAULT_DIM,
            seed: 0,
            mode: SyntheticMode::Compose,
            groups: Vec::new(),
            composites: Vec::new(),
        }
    }
}

impl SyntheticProvider {
    fn base(&self) -> fn(&str, usize, u64) -> Result<Vec<f64>> {
        match self.mode {
            SyntheticMode::Hash => synthetic_embed,
            SyntheticMode::Compose => compose_embed,
        }
    }

    fn embed_simple(&self, s: &str) -> Result<Vec<f64>> {
        match self.groups.iter().find(|g| g.contains(s)) {
            Some(group) => group_embed_with(group, s, self.dim, self.base()),
            None => self.base()(s, self.dim, self.seed),
        }
    }

    /// `normalize(Σ parts + own_weight · own)` for composites, the group or
    /// base embedding otherwise.
    pub fn embed(&self, s: &str) -> Result<Vec<f64>> {
        let Some(c) = self.composites.iter().find(|c| c.string == s) else {
            return self.embed_simple(s);
        };
        c.validate()?;
        let mut acc: Vec<f64> = self.embed_simple(s)?.iter().map(|x| c.own_weight * x).collect();
        for part in &c.parts {
            if self.composites.iter().any(|o| &o.string == part) {
                return Err(Error::config(format!("composite part {part:?} is itself a composite")));
            }
            let v = self.embed_simple(part)?;
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
        }
        normalized(&acc)
    }

    /// Embeds every distinct string; duplicates in the input are an error.
    pub fn build_table<'s, I>(&self, strings: I) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = &'s str>,
    {
        let mut entries = Vec::new();
        for s in strings {
            entries.push((s.to_string(), self.embed(s)?));
        }
        let table = EmbeddingTable::from_entries(self.dim, "synthetic", true, entries)?;
        self.check_group_separation()?;
        Ok(table)
    }

    /// Every member must be closer (by cosine) to its own centroid than to
    /// any other group's centroid.
    pub fn check_group_separation(&self) -> Result<()> {
        let base = self.base();
        let centroids = self
            .groups
            .iter()
            .map(|g| base(&g.group_id, self.dim, g.centroid_seed))
            .collect::<Result<Vec<_>>>()?;
        for (gi, group) in self.groups.iter().enumerate() {
            for member in &group.member_strings {
                let v = group_embed_with(group, member, self.dim, base)?;
                let own = cosine(&v, &centroids[gi]);
                for (gj, other) in centroids.iter().enumerate() {
                    if gj != gi && cosine(&v, other) >= own {
                        return Err(Error::config(format!(
                            "member {member:?} of group {:?} is not closest to its own centroid",
                            group.group_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
