//! Pre-encoded context store.
//!
//! ```text
//! "XMLE" | version u32 | n_videos u32 | d u32
//! per video: id_len u16 | id | l u32 | clip_duration f32
//!            | H_v0, H_s0, H_v1, H_s1 each l×d f64 LE row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::EncodedVideo;
use crate::error::{Error, Result};
use crate::featstore::store::Cursor;
use crate::numkit::Matrix;

pub const ENCODED_MAGIC: &[u8; 4] = b"XMLE";
const ENCODED_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Exact size in bytes: 16-byte header plus, per video, a
/// `2 + id_len + 8` byte record header and `4·l·d·8` payload bytes.
pub fn encoded_store_size(videos: &[EncodedVideo], d: usize) -> usize {
    HEADER_LEN
        + videos
            .iter()
            .map(|v| 2 + v.video_id.len() + 8 + 4 * v.n_clips() * d * 8)
            .sum::<usize>()
}

pub fn write_encoded_store(videos: &[EncodedVideo], d: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(ENCODED_MAGIC)?;
    put(&ENCODED_VERSION.to_le_bytes())?;
    put(&(videos.len() as u32).to_le_bytes())?;
    put(&(d as u32).to_le_bytes())?;
    for v in videos {
        for m in [&v.h_v0, &v.h_s0, &v.h_v1, &v.h_s1] {
            if m.cols() != d || m.rows() != v.n_clips() {
                return Err(Error::Shape(format!(
                    "video {}: encoded matrix {}x{} vs l={} d={}",
                    v.video_id,
                    m.rows(),
                    m.cols(),
                    v.n_clips(),
                    d
                )));
            }
        }
        put(&(v.video_id.len() as u16).to_le_bytes())?;
        put(v.video_id.as_bytes())?;
        put(&(v.n_clips() as u32).to_le_bytes())?;
        put(&(v.clip_duration as f32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * 8 * v.h_v0.data().len());
        for m in [&v.h_v0, &v.h_s0, &v.h_v1, &v.h_s1] {
            for x in m.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Returns the videos and the hidden size.
pub fn read_encoded_store(path: impl AsRef<Path>) -> Result<(Vec<EncodedVideo>, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&bytes, path);
    let bad_magic = || Error::BadMagic {
        path: path.to_path_buf(),
        expected: "XMLE",
    };
    if cur.take(4, "magic").map_err(|_| bad_magic())? != ENCODED_MAGIC {
        return Err(bad_magic());
    }
    let version = cur.u32("version")?;
    if version == 0 || version > ENCODED_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: ENCODED_VERSION,
        });
    }
    let n = cur.u32("n_videos")? as usize;
    let d = cur.u32("hidden size")? as usize;
    let mut videos = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let id_len = cur.u16("id_len")? as usize;
        let video_id = cur.string(id_len, "video id")?;
        let l = cur.u32("clip count")? as usize;
        let clip_duration = cur.f32("clip duration")? as f64;
        let mut mats = Vec::with_capacity(4);
        for _ in 0..4 {
            let data = cur.f64_vec(l * d, "encoded payload")?;
            mats.push(Matrix::from_vec(l, d, data)?);
        }
        let h_s1 = mats.pop().unwrap();
        let h_v1 = mats.pop().unwrap();
        let h_s0 = mats.pop().unwrap();
        let h_v0 = mats.pop().unwrap();
        videos.push(EncodedVideo {
            video_id,
            clip_duration,
            h_v0,
            h_s0,
            h_v1,
            h_s1,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            detail: "trailing bytes after last video".into(),
        });
    }
    Ok((videos, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    #[test]
    fn round_trip_and_size_formula() {
        let mut rng = Rng::new(5);
        let videos: Vec<EncodedVideo> = (0..3)
            .map(|i| EncodedVideo {
                video_id: format!("video-{i}"),
                clip_duration: 1.5,
                h_v0: Matrix::gaussian(4 + i, 6, 1.0, &mut rng),
                h_s0: Matrix::gaussian(4 + i, 6, 1.0, &mut rng),
                h_v1: Matrix::gaussian(4 + i, 6, 1.0, &mut rng),
                h_s1: Matrix::gaussian(4 + i, 6, 1.0, &mut rng),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.xmle");
        write_encoded_store(&videos, 6, &path).unwrap();
        let len = fs::metadata(&path).unwrap().len() as usize;
        let payload: usize = (4..7).map(|l| 4 * l * 6 * 8).sum();
        assert_eq!(len, 16 + 3 * (2 + 7 + 8) + payload);
        assert_eq!(len, encoded_store_size(&videos, 6));
        let (back, d) = read_encoded_store(&path).unwrap();
        assert_eq!(d, 6);
        assert_eq!(back, videos);
    }
}
