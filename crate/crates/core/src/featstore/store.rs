//! Binary feature store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "XMLF" | version u32 | n_videos u32 | d_v u32 | d_s u32 | tef u8 | 3 reserved bytes
//! per video: id_len u16 | id (UTF-8) | l u32 | clip_duration f32
//!            | video_feats l×d_v f32 row-major | sub_feats l×d_s f32 row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ClipContext, CorpusManifest};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const STORE_MAGIC: &[u8; 4] = b"XMLF";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Exact file size of the store for `manifest`.
pub fn store_size(manifest: &CorpusManifest) -> usize {
    HEADER_LEN
        + manifest
            .videos
            .iter()
            .map(|v| 2 + v.video_id.len() + 4 + 4 + 4 * v.n_clips() * (manifest.d_v + manifest.d_s))
            .sum::<usize>()
}

pub fn write_store(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));

    put(STORE_MAGIC)?;
    put(&STORE_VERSION.to_le_bytes())?;
    put(&(manifest.videos.len() as u32).to_le_bytes())?;
    put(&(manifest.d_v as u32).to_le_bytes())?;
    put(&(manifest.d_s as u32).to_le_bytes())?;
    put(&[manifest.tef_enabled as u8, 0, 0, 0])?;
    for v in &manifest.videos {
        let id = v.video_id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidArgument(format!("video id too long: {}", v.video_id)))?;
        put(&id_len.to_le_bytes())?;
        put(id)?;
        put(&(v.n_clips() as u32).to_le_bytes())?;
        put(&(v.clip_duration as f32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * (v.video_feats.data().len() + v.sub_feats.data().len()));
        for x in v.video_feats.data().iter().chain(v.sub_feats.data()) {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: PathBuf,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], path: &Path) -> Self {
        Cursor {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                context: format!(
                    "{context}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, ctx: &str) -> Result<u8> {
        Ok(self.take(1, ctx)?[0])
    }

    pub fn u16(&mut self, ctx: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, ctx)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, ctx: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, ctx: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }

    pub fn f32_matrix(&mut self, rows: usize, cols: usize, ctx: &str) -> Result<Matrix> {
        let raw = self.take(4 * rows * cols, ctx)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Matrix::from_vec(rows, cols, data).expect("sized buffer"))
    }

    pub fn f64_vec(&mut self, n: usize, ctx: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, ctx)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn string(&mut self, len: usize, ctx: &str) -> Result<String> {
        let raw = self.take(len, ctx)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Parse {
            path: self.path.clone(),
            line: 0,
            message: format!("{ctx}: invalid UTF-8"),
        })
    }
}

pub fn read_store(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&bytes, path);

    if cur.take(4, "magic").map_err(|_| bad_magic(path))? != STORE_MAGIC {
        return Err(bad_magic(path));
    }
    let version = cur.u32("version")?;
    if version == 0 || version > STORE_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: STORE_VERSION,
        });
    }
    let n_videos = cur.u32("n_videos")? as usize;
    let d_v = cur.u32("d_v")? as usize;
    let d_s = cur.u32("d_s")? as usize;
    let tef = cur.u8("tef flag")? != 0;
    cur.take(3, "reserved")?;

    let mut videos = Vec::with_capacity(n_videos.min(1 << 20));
    for i in 0..n_videos {
        let id_len = cur.u16("id_len")? as usize;
        let video_id = cur.string(id_len, "video id")?;
        let l = cur.u32("clip count")? as usize;
        if l == 0 {
            return Err(Error::DimMismatch {
                path: path.to_path_buf(),
                detail: format!("video #{i} ({video_id}) declares zero clips"),
            });
        }
        let dur = cur.f32("clip duration")? as f64;
        let video_feats = cur.f32_matrix(l, d_v, "video features")?;
        let sub_feats = cur.f32_matrix(l, d_s, "subtitle features")?;
        videos.push(
            ClipContext::new(video_id, dur, video_feats, sub_feats).map_err(|e| Error::DimMismatch {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?,
        );
    }
    if cur.pos != bytes.len() {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "{} trailing bytes after {} videos",
                bytes.len() - cur.pos,
                n_videos
            ),
        });
    }
    let manifest = CorpusManifest {
        videos,
        d_v,
        d_s,
        tef_enabled: tef,
    };
    manifest.validate().map_err(|e| Error::DimMismatch {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(manifest)
}

fn bad_magic(path: &Path) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: "XMLF",
    }
}
