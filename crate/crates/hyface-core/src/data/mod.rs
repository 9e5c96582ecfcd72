//! Dataset plumbing: landmark files, sample manifests, seeded shuffles and
//! video-based splits, plus the synthetic closed-loop generator in
//! [`synthetic`].
//!
//! On-disk contracts:
//! * landmark file — plain text, exactly 203 lines of `x y` in normalized
//!   `[0, 1]` image coordinates (top-left origin);
//! * manifest — CSV with header `image,landmarks,video_id,frame`; paths are
//!   relative to the manifest's directory; fields must not contain commas.

pub mod synthetic;

pub use synthetic::{generate_synthetic, GtParams, Span, SyntheticDataset, SyntheticSceneSpec};

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::head::N_LANDMARKS;

/// Manifest header row, fixed.
pub const MANIFEST_HEADER: &str = "image,landmarks,video_id,frame";

/// One dataset item, with paths already resolved against the manifest dir.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub landmarks: PathBuf,
    pub video_id: String,
    pub frame: u64,
}

/// Read a landmark file: exactly [`N_LANDMARKS`] lines of `x y` in `[0, 1]`.
pub fn read_landmarks(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Array2::zeros((N_LANDMARKS, 2));
    let mut rows = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if rows >= N_LANDMARKS {
            return Err(Error::Format {
                file: path.to_path_buf(),
                line: ln + 1,
                msg: format!("more than {N_LANDMARKS} landmark rows"),
            });
        }
        let mut parts = t.split_whitespace();
        let (xs, ys) = match (parts.next(), parts.next(), parts.next()) {
            (Some(x), Some(y), None) => (x, y),
            _ => {
                return Err(Error::Format {
                    file: path.to_path_buf(),
                    line: ln + 1,
                    msg: format!("expected `x y`, got {t:?}"),
                })
            }
        };
        for (s, col) in [(xs, 0), (ys, 1)] {
            let v: f64 = s.parse().map_err(|_| Error::Format {
                file: path.to_path_buf(),
                line: ln + 1,
                msg: format!("unparsable coordinate {s:?}"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "{}:{}: coordinate {v} outside [0, 1]",
                    path.display(),
                    ln + 1
                )));
            }
            out[[rows, col]] = v;
        }
        rows += 1;
    }
    if rows != N_LANDMARKS {
        return Err(Error::Format {
            file: path.to_path_buf(),
            line: rows,
            msg: format!("expected {N_LANDMARKS} landmark rows, found {rows}"),
        });
    }
    Ok(out)
}

/// Write a landmark file readable by [`read_landmarks`]; eight decimals keep
/// the round trip well inside 1e-6.
pub fn write_landmarks(path: impl AsRef<Path>, landmarks: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    if landmarks.dim() != (N_LANDMARKS, 2) {
        return Err(Error::Validation(format!(
            "landmarks must be ({N_LANDMARKS}, 2), got {:?}",
            landmarks.dim()
        )));
    }
    let mut text = String::with_capacity(N_LANDMARKS * 22);
    for i in 0..N_LANDMARKS {
        let (x, y) = (landmarks[[i, 0]], landmarks[[i, 1]]);
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Validation(format!(
                "landmark {i} = ({x}, {y}) outside [0, 1]"
            )));
        }
        text.push_str(&format!("{x:.8} {y:.8}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Streaming manifest reader; yields one [`SampleRecord`] per row and checks
/// that the referenced files exist.
pub struct ManifestReader {
    dir: PathBuf,
    path: PathBuf,
    lines: std::vec::IntoIter<(usize, String)>,
}

impl ManifestReader {
    pub fn open(path: impl AsRef<Path>) -> Result<ManifestReader> {
        let path = path.as_ref().to_path_buf();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines: Vec<(usize, String)> = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        if lines.is_empty() || lines[0].1 != MANIFEST_HEADER {
            return Err(Error::Format {
                file: path.clone(),
                line: 1,
                msg: format!("manifest must start with header {MANIFEST_HEADER:?}"),
            });
        }
        lines.remove(0);
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(ManifestReader {
            dir,
            path,
            lines: lines.into_iter(),
        })
    }

    fn parse_row(&self, line_no: usize, row: &str) -> Result<SampleRecord> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format {
                file: self.path.clone(),
                line: line_no,
                msg: format!("expected 4 comma-separated fields, got {}", fields.len()),
            });
        }
        let frame: u64 = fields[3].parse().map_err(|_| Error::Format {
            file: self.path.clone(),
            line: line_no,
            msg: format!("frame index {:?} is not an integer", fields[3]),
        })?;
        let record = SampleRecord {
            image: self.dir.join(fields[0]),
            landmarks: self.dir.join(fields[1]),
            video_id: fields[2].to_string(),
            frame,
        };
        for p in [&record.image, &record.landmarks] {
            std::fs::metadata(p).map_err(|e| Error::io(p, e))?;
        }
        Ok(record)
    }
}

impl Iterator for ManifestReader {
    type Item = Result<SampleRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line_no, row) = self.lines.next()?;
        Some(self.parse_row(line_no, &row))
    }
}

/// Load a whole manifest eagerly.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    ManifestReader::open(path)?.collect()
}

/// A manifest row as written: paths relative to the manifest directory.
#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub image: String,
    pub landmarks: String,
    pub video_id: String,
    pub frame: u64,
}

/// Write a manifest; fields must not contain commas.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for (i, r) in rows.iter().enumerate() {
        for field in [&r.image, &r.landmarks, &r.video_id] {
            if field.contains(',') || field.contains('\n') {
                return Err(Error::Validation(format!(
                    "manifest row {i}: field {field:?} contains a separator"
                )));
            }
        }
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.image, r.landmarks, r.video_id, r.frame
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// In-place Fisher-Yates with a version-stable seeded stream.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Split records into (train, test) by video id, so no video leaks across
/// the boundary. The split is deterministic per seed.
pub fn split_by_video(
    records: &[SampleRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Validation(format!(
            "test fraction must lie in [0, 1], got {test_fraction}"
        )));
    }
    let mut videos: Vec<&str> = Vec::new();
    for r in records {
        if !videos.contains(&r.video_id.as_str()) {
            videos.push(&r.video_id);
        }
    }
    let mut order: Vec<usize> = (0..videos.len()).collect();
    seeded_shuffle(&mut order, seed);
    let mut n_test = (videos.len() as f64 * test_fraction).round() as usize;
    // Keep both sides non-empty whenever the fraction is strictly interior.
    if test_fraction > 0.0 && test_fraction < 1.0 && videos.len() >= 2 {
        n_test = n_test.clamp(1, videos.len() - 1);
    }
    let test_videos: Vec<&str> = order[..n_test].iter().map(|&i| videos[i]).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in records {
        if test_videos.contains(&r.video_id.as_str()) {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("hyface_data_{name}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_landmarks() -> Array2<f64> {
        let mut lms = Array2::zeros((N_LANDMARKS, 2));
        for i in 0..N_LANDMARKS {
            lms[[i, 0]] = (i as f64 * 0.37).fract() * 0.9 + 0.05;
            lms[[i, 1]] = (i as f64 * 0.61).fract() * 0.9 + 0.05;
        }
        lms
    }

    #[test]
    fn landmark_round_trip_within_1e6() {
        let dir = temp_dir("roundtrip");
        let path = dir.join("lms.txt");
        let lms = sample_landmarks();
        write_landmarks(&path, &lms).unwrap();
        let back = read_landmarks(&path).unwrap();
        for (a, b) in lms.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        // A second write of the read-back file is byte-identical.
        let path2 = dir.join("lms2.txt");
        write_landmarks(&path2, &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn short_landmark_file_is_a_format_error_naming_the_file() {
        let dir = temp_dir("short");
        let path = dir.join("short.txt");
        let body: String = (0..N_LANDMARKS - 1).map(|_| "0.5 0.5\n").collect();
        std::fs::write(&path, body).unwrap();
        match read_landmarks(&path).unwrap_err() {
            Error::Format { file, msg, .. } => {
                assert_eq!(file, path);
                assert!(msg.contains("202"), "{msg}");
            }
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_coordinate_is_a_validation_error() {
        let dir = temp_dir("oob");
        let path = dir.join("oob.txt");
        let mut body = String::new();
        for i in 0..N_LANDMARKS {
            if i == 7 {
                body.push_str("1.5 0.5\n");
            } else {
                body.push_str("0.5 0.5\n");
            }
        }
        std::fs::write(&path, body).unwrap();
        match read_landmarks(&path).unwrap_err() {
            Error::Validation(msg) => {
                assert!(msg.contains("1.5") && msg.contains(":8:"), "{msg}");
            }
            other => panic!("expected validation error, got {other}"),
        }

        // Writing out-of-range coordinates is refused symmetrically.
        let mut bad = sample_landmarks();
        bad[[0, 1]] = -0.2;
        assert!(write_landmarks(dir.join("w.txt"), &bad).is_err());
    }

    #[test]
    fn garbled_landmark_line_reports_its_line_number() {
        let dir = temp_dir("garbled");
        let path = dir.join("bad.txt");
        let mut body = String::new();
        for i in 0..N_LANDMARKS {
            if i == 2 {
                body.push_str("0.5 zebra\n");
            } else {
                body.push_str("0.5 0.5\n");
            }
        }
        std::fs::write(&path, body).unwrap();
        match read_landmarks(&path).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 3),
            other => panic!("expected format error, got {other}"),
        }
    }

    fn write_fixture_manifest(dir: &Path, rows: usize) -> PathBuf {
        let lms = sample_landmarks();
        let mut manifest_rows = Vec::new();
        for i in 0..rows {
            let img = format!("img_{i}.png");
            let lmf = format!("lms_{i}.txt");
            crate::image::save_png(
                dir.join(&img),
                &ndarray::Array3::from_elem((4, 4, 3), 0.5),
            )
            .unwrap();
            write_landmarks(dir.join(&lmf), &lms).unwrap();
            manifest_rows.push(ManifestRow {
                image: img,
                landmarks: lmf,
                video_id: format!("vid{}", i / 2),
                frame: (i % 2) as u64,
            });
        }
        let path = dir.join("manifest.csv");
        write_manifest(&path, &manifest_rows).unwrap();
        path
    }

    #[test]
    fn manifest_round_trip_loads_all_records() {
        let dir = temp_dir("manifest");
        let path = write_fixture_manifest(&dir, 6);
        let records = load_manifest(&path).unwrap();
        assert_eq!(records.len(), 6);
        assert_eq!(records[0].video_id, "vid0");
        assert_eq!(records[5].frame, 1);
        assert!(records.iter().all(|r| r.image.exists()));
    }

    #[test]
    fn manifest_errors_are_specific() {
        let dir = temp_dir("manifest_err");
        // Wrong header.
        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "image,landmarks\n").unwrap();
        assert!(matches!(
            ManifestReader::open(&bad),
            Err(Error::Format { line: 1, .. })
        ));

        // Row referencing a missing file surfaces an I/O error.
        let path = write_fixture_manifest(&dir, 2);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("ghost.png,lms_0.txt,vidz,0\n");
        std::fs::write(&path, text).unwrap();
        let items: Vec<_> = ManifestReader::open(&path).unwrap().collect();
        assert_eq!(items.len(), 3);
        assert!(items[0].is_ok() && items[1].is_ok());
        assert!(matches!(items[2].as_ref().unwrap_err(), Error::Io { .. }));
    }

    #[test]
    fn split_by_video_is_disjoint_and_seed_deterministic() {
        let dir = temp_dir("split");
        let path = write_fixture_manifest(&dir, 12); // 6 videos x 2 frames
        let records = load_manifest(&path).unwrap();
        let (train, test) = split_by_video(&records, 0.33, 5).unwrap();
        assert_eq!(train.len() + test.len(), records.len());
        assert!(!train.is_empty() && !test.is_empty());
        let train_vids: Vec<&String> = train.iter().map(|r| &r.video_id).collect();
        for r in &test {
            assert!(!train_vids.contains(&&r.video_id));
        }
        let (train2, test2) = split_by_video(&records, 0.33, 5).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (_, test3) = split_by_video(&records, 0.33, 6).unwrap();
        // A different seed picks a different test set for 6 videos (holds
        // for these specific seeds; fixed, not a property over all seeds).
        assert_ne!(
            test.iter().map(|r| &r.video_id).collect::<Vec<_>>(),
            test3.iter().map(|r| &r.video_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn seeded_shuffle_is_reproducible_and_permutes() {
        let mut a: Vec<u32> = (0..100).collect();
        let mut b: Vec<u32> = (0..100).collect();
        seeded_shuffle(&mut a, 42);
        seeded_shuffle(&mut b, 42);
        assert_eq!(a, b);
        assert_ne!(a, (0..100).collect::<Vec<u32>>());
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<u32>>());
    }
}
