//! Embedding file formats and the on-disk profile registry.
//!
//! Text embeddings start with a `# p2l-embeddings v1 dim=<d> extractor=<id>`
//! header followed by one comma-separated row per item. Binary embeddings are
//! `"P2LE"`, u32 version, u32 dim, u64 count, u8 id length, id bytes, then
//! `count × dim` little-endian f32 values, row-major.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DatasetProfile, EmbeddingMatrix, Role, Summarizer, SummaryVector};

pub const CSV_MAGIC: &str = "# p2l-embeddings v1";
pub const BIN_MAGIC: &[u8; 4] = b"P2LE";
pub const BIN_VERSION: u32 = 1;
pub const PROFILE_FORMAT_VERSION: u32 = 1;
const PROFILE_SUFFIX: &str = ".profile.json";
const MANIFEST: &str = "registry.json";

fn parse_csv_header(line: &str) -> Result<(usize, String)> {
    let rest = line
        .trim()
        .strip_prefix(CSV_MAGIC)
        .ok_or_else(|| Error::BadHeader(format!("expected `{CSV_MAGIC} dim=<d> extractor=<id>`")))?;
    let mut dim = None;
    let mut extractor = None;
    for token in rest.split_whitespace() {
        match token.split_once('=') {
            Some(("dim", v)) => {
                dim = Some(v.parse::<usize>().map_err(|_| Error::BadHeader(format!("bad dim `{v}`")))?)
            }
            Some(("extractor", v)) => extractor = Some(v.to_string()),
            _ => return Err(Error::BadHeader(format!("unexpected token `{token}`"))),
        }
    }
    match (dim, extractor) {
        (Some(0), _) => Err(Error::BadHeader("dim must be positive".into())),
        (Some(d), Some(e)) => Ok((d, e)),
        _ => Err(Error::BadHeader("header needs dim= and extractor=".into())),
    }
}

pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::BadHeader("empty file".into()))??;
    let (dim, extractor) = parse_csv_header(&header)?;
    let mut values = Vec::new();
    let mut items = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let start = values.len();
        for token in line.split(',') {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| Error::BadValue {
                line: line_no,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { line: line_no });
            }
            values.push(v);
        }
        let found = values.len() - start;
        if found != dim {
            return Err(Error::RaggedRow {
                line: line_no,
                expected: dim,
                found,
            });
        }
        items += 1;
    }
    EmbeddingMatrix::new(items, dim, values, extractor)
}

pub fn write_embeddings_csv(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CSV_MAGIC} dim={} extractor={}", matrix.dim(), matrix.extractor_id())?;
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let out = self.buf.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn parse_embeddings_bin(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4).map_err(|_| Error::BadMagic)? != BIN_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = cur.u32()?;
    if version != BIN_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    let id_len = cur.take(1)?[0] as usize;
    let extractor = String::from_utf8(cur.take(id_len)?.to_vec())
        .map_err(|_| Error::Malformed("extractor id is not UTF-8".into()))?;
    let n_values = count.checked_mul(dim).ok_or(Error::TruncatedFile)?;
    let payload = cur.take(n_values.checked_mul(4).ok_or(Error::TruncatedFile)?)?;
    if cur.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingMatrix::new(count, dim, values, extractor)
}

pub fn read_embeddings_bin(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_embeddings_bin(&bytes)
}

pub fn encode_embeddings_bin(matrix: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let id = matrix.extractor_id().as_bytes();
    let id_len = u8::try_from(id.len()).map_err(|_| Error::Malformed("extractor id longer than 255 bytes".into()))?;
    let dim = u32::try_from(matrix.dim()).map_err(|_| Error::Malformed("dimension too large".into()))?;
    let mut out = Vec::with_capacity(21 + id.len() + matrix.values().len() * 4);
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(matrix.items() as u64).to_le_bytes());
    out.push(id_len);
    out.extend_from_slice(id);
    for v in matrix.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_embeddings_bin(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    fs::write(path, encode_embeddings_bin(matrix)?)?;
    Ok(())
}

/// Reads either embedding format, telling them apart by the magic bytes.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let mut head = [0u8; 4];
    let n = File::open(path)?.read(&mut head)?;
    if n == 4 && &head == BIN_MAGIC {
        read_embeddings_bin(path)
    } else {
        read_embeddings_csv(path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileDoc {
    format_version: u32,
    name: String,
    role: Role,
    size: u64,
    dim: usize,
    summarizer: Summarizer,
    extractor_id: String,
    normalized: bool,
    raw_mean: Vec<f64>,
    summary: Vec<f64>,
}

impl From<&DatasetProfile> for ProfileDoc {
    fn from(p: &DatasetProfile) -> Self {
        Self {
            format_version: PROFILE_FORMAT_VERSION,
            name: p.name.clone(),
            role: p.role,
            size: p.size,
            dim: p.dim(),
            summarizer: p.summary.summarizer,
            extractor_id: p.extractor_id.clone(),
            normalized: p.summary.normalized,
            raw_mean: p.summary.raw_mean.clone(),
            summary: p.summary.values.clone(),
        }
    }
}

impl TryFrom<ProfileDoc> for DatasetProfile {
    type Error = Error;

    fn try_from(d: ProfileDoc) -> Result<Self> {
        if d.format_version != PROFILE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(d.format_version));
        }
        if d.summary.len() != d.dim || d.raw_mean.len() != d.dim {
            return Err(Error::Malformed(format!(
                "profile `{}` declares dim {} but stores {} / {} values",
                d.name,
                d.dim,
                d.summary.len(),
                d.raw_mean.len()
            )));
        }
        if d.size == 0 {
            return Err(Error::Malformed(format!("profile `{}` has size 0", d.name)));
        }
        Ok(DatasetProfile {
            name: d.name,
            size: d.size,
            summary: SummaryVector {
                values: d.summary,
                raw_mean: d.raw_mean,
                summarizer: d.summarizer,
                normalized: d.normalized,
            },
            extractor_id: d.extractor_id,
            role: d.role,
        })
    }
}

/// Serializes a profile as JSON. Floats use the shortest representation that
/// round-trips to the identical 64-bit value.
pub fn profile_to_json(profile: &DatasetProfile) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProfileDoc::from(profile))?)
}

pub fn profile_from_json(text: &str) -> Result<DatasetProfile> {
    serde_json::from_str::<ProfileDoc>(text)?.try_into()
}

pub fn read_profile_file(path: impl AsRef<Path>) -> Result<DatasetProfile> {
    profile_from_json(&fs::read_to_string(path)?)
}

pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let file_name = path.file_name().and_then(|f| f.to_str()).unwrap_or("profile");
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
}

/// Directory of `<name>.profile.json` documents plus a `registry.json` manifest.
#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    root: PathBuf,
}

impl ProfileRegistry {
    /// Opens a registry, creating the directory and manifest if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let manifest = root.join(MANIFEST);
        if manifest.exists() {
            let m: Manifest = serde_json::from_str(&fs::read_to_string(&manifest)?)?;
            if m.version != PROFILE_FORMAT_VERSION {
                return Err(Error::UnsupportedVersion(m.version));
            }
        } else {
            let m = Manifest {
                format: "p2l-registry".into(),
                version: PROFILE_FORMAT_VERSION,
            };
            write_atomic(&manifest, serde_json::to_string_pretty(&m)?.as_bytes())?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, name: &str) -> Result<PathBuf> {
        if !is_valid_name(name) {
            return Err(Error::InvalidName(name.to_string()));
        }
        Ok(self.root.join(format!("{name}{PROFILE_SUFFIX}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.path_for(name).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn save(&self, profile: &DatasetProfile, overwrite: bool) -> Result<PathBuf> {
        let path = self.path_for(&profile.name)?;
        if path.exists() && !overwrite {
            return Err(Error::NameCollision(profile.name.clone()));
        }
        write_atomic(&path, profile_to_json(profile)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(&self, name: &str) -> Result<DatasetProfile> {
        let path = self.path_for(name)?;
        if !path.exists() {
            return Err(Error::NotFound(name.to_string()));
        }
        read_profile_file(path)
    }

    /// Profile names, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let file_name = entry?.file_name();
            if let Some(name) = file_name.to_str().and_then(|f| f.strip_suffix(PROFILE_SUFFIX)) {
                if is_valid_name(name) {
                    names.push(name.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    /// Every stored profile, sorted by name.
    pub fn load_all(&self) -> Result<Vec<DatasetProfile>> {
        self.list()?.iter().map(|n| self.load(n)).collect()
    }
}
