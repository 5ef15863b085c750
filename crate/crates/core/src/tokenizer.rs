//! Byte-level BPE subword vocabulary shared across input languages.
//!
//! Every byte value has a base symbol, so any UTF-8 text (Latin, CJK, ...)
//! encodes without an unknown token and `decode(encode(t)) == t`. A space byte
//! attaches to the word that follows it, acting as an explicit word-start
//! marker; in serialized form it renders as `Ġ` through the printable byte
//! map. Merges never cross word boundaries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved special-token ids 0..=4.
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const SEP_ID: u32 = 4;

pub const SPECIAL_NAMES: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<sep>"];

/// Number of reserved special ids.
pub const NUM_SPECIALS: u32 = 5;
/// Base symbols: one per byte value, ids 5..261.
pub const NUM_BYTES: u32 = 256;
/// Smallest id assigned to a merge product.
pub const FIRST_MERGE_ID: u32 = NUM_SPECIALS + NUM_BYTES;

const FORMAT_TAG: &str = "defgen-vocab-v1";

/// Subword inventory with reserved specials, byte base symbols, and an
/// ordered merge list. Immutable after training.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Merge rules in creation order, as ids of their constituents.
    merges: Vec<(u32, u32)>,
    /// Byte sequence for every non-special id (index `id - NUM_SPECIALS`).
    token_bytes: Vec<Vec<u8>>,
    /// (left, right) -> merged id, for encoding.
    merge_table: HashMap<(u32, u32), u32>,
}

impl Vocabulary {
    /// Total id count: specials + bytes + merges.
    pub fn size(&self) -> usize {
        (FIRST_MERGE_ID as usize) + self.merges.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    /// The token's byte content; specials have none.
    pub fn token_as_bytes(&self, id: u32) -> Result<&[u8]> {
        if Self::is_special(id) {
            return Ok(&[]);
        }
        self.token_bytes
            .get((id - NUM_SPECIALS) as usize)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Index {
                index: id as usize,
                bound: self.size(),
                context: "vocabulary id".into(),
            })
    }

    /// Printable rendering of a token (specials by name, bytes via the map).
    pub fn token_text(&self, id: u32) -> Result<String> {
        if Self::is_special(id) {
            return Ok(SPECIAL_NAMES[id as usize].to_string());
        }
        Ok(render_bytes(self.token_as_bytes(id)?))
    }

    /// Greedy highest-frequency byte-pair training. Ties break toward the
    /// lexicographically smaller pair (by byte content, left then right);
    /// stops early when no pair occurs twice.
    pub fn train_bpe(corpus: &str, target_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::contract("train_bpe: empty corpus"));
        }
        if target_size < FIRST_MERGE_ID as usize {
            return Err(Error::contract(format!(
                "train_bpe: target_size {target_size} below minimum {FIRST_MERGE_ID} \
                 (specials + byte alphabet)"
            )));
        }
        let max_merges = target_size - FIRST_MERGE_ID as usize;

        // Unique word chunks with multiplicities.
        let mut chunk_counts: HashMap<Vec<u32>, u64> = HashMap::new();
        for chunk in chunk_bytes(corpus.as_bytes()) {
            let symbols: Vec<u32> = chunk.iter().map(|&b| NUM_SPECIALS + b as u32).collect();
            *chunk_counts.entry(symbols).or_insert(0) += 1;
        }

        let mut vocab = Vocabulary {
            merges: Vec::new(),
            token_bytes: (0u16..256).map(|b| vec![b as u8]).collect(),
            merge_table: HashMap::new(),
        };
        let mut chunks: Vec<(Vec<u32>, u64)> = chunk_counts.into_iter().collect();
        chunks.sort(); // fixed order so the scan is reproducible

        for _ in 0..max_merges {
            let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (symbols, count) in &chunks {
                for pair in symbols.windows(2) {
                    *pair_counts.entry((pair[0], pair[1])).or_insert(0) += count;
                }
            }
            let best = pair_counts.into_iter().filter(|&(_, c)| c >= 2).min_by(
                |&(pa, ca), &(pb, cb)| {
                    cb.cmp(&ca).then_with(|| {
                        let ka = (vocab.bytes_of(pa.0), vocab.bytes_of(pa.1));
                        let kb = (vocab.bytes_of(pb.0), vocab.bytes_of(pb.1));
                        ka.cmp(&kb)
                    })
                },
            );
            let Some((pair, _)) = best else { break };
            let new_id = vocab.push_merge(pair);
            for (symbols, _) in chunks.iter_mut() {
                apply_merge(symbols, pair, new_id);
            }
        }
        Ok(vocab)
    }

    fn bytes_of(&self, id: u32) -> &[u8] {
        &self.token_bytes[(id - NUM_SPECIALS) as usize]
    }

    fn push_merge(&mut self, pair: (u32, u32)) -> u32 {
        let mut bytes = self.bytes_of(pair.0).to_vec();
        bytes.extend_from_slice(self.bytes_of(pair.1));
        self.token_bytes.push(bytes);
        self.merges.push(pair);
        let new_id = FIRST_MERGE_ID + (self.merges.len() as u32 - 1);
        self.merge_table.insert(pair, new_id);
        new_id
    }

    /// Tokenize text. Applies merges in learned order within each word chunk;
    /// raw text can never produce a special id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in chunk_bytes(text.as_bytes()) {
            let mut symbols: Vec<u32> =
                chunk.iter().map(|&b| NUM_SPECIALS + b as u32).collect();
            for (rank, &pair) in self.merges.iter().enumerate() {
                if symbols.len() < 2 {
                    break;
                }
                apply_merge(&mut symbols, pair, FIRST_MERGE_ID + rank as u32);
            }
            out.extend_from_slice(&symbols);
        }
        out
    }

    /// Concatenate token bytes, stripping special ids. Invalid UTF-8 from
    /// model-generated sequences is replaced rather than rejected.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id as usize >= self.size() {
                return Err(Error::Index {
                    index: id as usize,
                    bound: self.size(),
                    context: "decode".into(),
                });
            }
            bytes.extend_from_slice(self.token_as_bytes(id)?);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    // ── Serialization ───────────────────────────────────────────────────

    /// Line-oriented text form: header with counts, one merge per line,
    /// then the special-token table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{FORMAT_TAG} bytes={NUM_BYTES} merges={} specials={NUM_SPECIALS}",
            self.merges.len()
        );
        s.push_str("# byte-level BPE: every byte value is a base symbol, so decode(encode(t)) == t\n");
        s.push_str("# whitespace: a space byte attaches to the following word as an explicit\n");
        s.push_str("# word-start marker; in this file it renders as 'Ġ' via the printable byte map\n");
        for &(l, r) in &self.merges {
            let _ = writeln!(
                s,
                "{} {}",
                render_bytes(self.bytes_of(l)),
                render_bytes(self.bytes_of(r))
            );
        }
        for (id, name) in SPECIAL_NAMES.iter().enumerate() {
            let _ = writeln!(s, "{id} {name}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format("vocabulary file is empty"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FORMAT_TAG) {
            return Err(Error::format(format!(
                "unsupported vocabulary format (expected {FORMAT_TAG} on line 1)"
            )));
        }
        let mut merges_declared = None;
        for field in fields {
            if let Some(v) = field.strip_prefix("merges=") {
                merges_declared = Some(v.parse::<usize>().map_err(|_| {
                    Error::format(format!("bad merge count in header: {v}"))
                })?);
            }
        }
        let merges_declared =
            merges_declared.ok_or_else(|| Error::format("header missing merges= count"))?;

        let mut vocab = Vocabulary {
            merges: Vec::new(),
            token_bytes: (0u16..256).map(|b| vec![b as u8]).collect(),
            merge_table: HashMap::new(),
        };
        // bytes -> id lookup, grown as merges are replayed
        let mut by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
        for (i, bytes) in vocab.token_bytes.iter().enumerate() {
            by_bytes.insert(bytes.clone(), NUM_SPECIALS + i as u32);
        }

        let mut seen_merges = 0usize;
        let mut seen_specials = 0usize;
        for (lineno, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if seen_merges < merges_declared {
                let (left, right) = line.split_once(' ').ok_or(Error::Parse {
                    line: lineno + 1,
                    message: "merge line must be two tokens separated by a space".into(),
                })?;
                let lb = parse_rendered(left, lineno + 1)?;
                let rb = parse_rendered(right, lineno + 1)?;
                let lid = *by_bytes.get(&lb).ok_or(Error::Parse {
                    line: lineno + 1,
                    message: format!("merge constituent {left:?} does not exist yet"),
                })?;
                let rid = *by_bytes.get(&rb).ok_or(Error::Parse {
                    line: lineno + 1,
                    message: format!("merge constituent {right:?} does not exist yet"),
                })?;
                let new_id = vocab.push_merge((lid, rid));
                let mut merged = lb;
                merged.extend_from_slice(&rb);
                by_bytes.insert(merged, new_id);
                seen_merges += 1;
            } else {
                // special-token table
                let (id_str, name) = line.split_once(' ').ok_or(Error::Parse {
                    line: lineno + 1,
                    message: "special line must be `<id> <name>`".into(),
                })?;
                let id: usize = id_str.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad special id {id_str:?}"),
                })?;
                if id != seen_specials || name != SPECIAL_NAMES[id.min(4)] {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("unexpected special table entry {line:?}"),
                    });
                }
                seen_specials += 1;
            }
        }
        if seen_merges != merges_declared || seen_specials != SPECIAL_NAMES.len() {
            return Err(Error::format(format!(
                "vocabulary file truncated: {seen_merges}/{merges_declared} merges, \
                 {seen_specials}/5 specials"
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// SHA-256 of the serialized form; checkpoints embed it so a model is
    /// never run against the wrong vocabulary.
    pub fn content_hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.into()
    }
}

/// Split a byte stream into word chunks: a chunk break happens before every
/// whitespace byte that follows a non-whitespace byte, so whitespace leads the
/// word it precedes and concatenating the chunks restores the input exactly.
fn chunk_bytes(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let is_space = |b: u8| matches!(b, b' ' | b'\n' | b'\t' | b'\r');
    let mut starts = vec![];
    if !bytes.is_empty() {
        starts.push(0);
        for i in 1..bytes.len() {
            if is_space(bytes[i]) && !is_space(bytes[i - 1]) {
                starts.push(i);
            }
        }
    }
    starts.push(bytes.len());
    (0..starts.len().saturating_sub(1)).map(move |i| &bytes[starts[i]..starts[i + 1]])
}

/// Replace every occurrence of `pair` (left to right) with `new_id`.
fn apply_merge(symbols: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut i = 0;
    let mut out = Vec::with_capacity(symbols.len());
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    *symbols = out;
}

// ── Printable byte map ─────────────────────────────────────────────────
//
// Bijection between byte values and printable chars so token contents can
// live in a line-oriented text file. Printable ASCII/Latin-1 map to
// themselves; everything else (controls, space, DEL, 0xAD) shifts into the
// U+0100 block in byte order, which puts the space byte at 'Ġ'.

fn byte_char_tables() -> &'static (Vec<char>, HashMap<char, u8>) {
    static TABLES: OnceLock<(Vec<char>, HashMap<char, u8>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u16| {
            (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b)
        };
        let mut to_char = Vec::with_capacity(256);
        let mut shift = 0u32;
        for b in 0u16..256 {
            if printable(b) {
                to_char.push(char::from_u32(b as u32).unwrap());
            } else {
                to_char.push(char::from_u32(256 + shift).unwrap());
                shift += 1;
            }
        }
        let mut to_byte = HashMap::new();
        for (b, &c) in to_char.iter().enumerate() {
            to_byte.insert(c, b as u8);
        }
        (to_char, to_byte)
    })
}

fn render_bytes(bytes: &[u8]) -> String {
    let (to_char, _) = byte_char_tables();
    bytes.iter().map(|&b| to_char[b as usize]).collect()
}

fn parse_rendered(s: &str, line: usize) -> Result<Vec<u8>> {
    let (_, to_byte) = byte_char_tables();
    s.chars()
        .map(|c| {
            to_byte.get(&c).copied().ok_or(Error::Parse {
                line,
                message: format!("character {c:?} is not in the printable byte map"),
            })
        })
        .collect()
}
