//! Raw on-disk formats: two-channel PCM wave for EOG, a little-endian f32
//! stream plus text header for PSM, one stage token per line for labels,
//! JSON manifests, and flat spectrogram dumps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sleepfuse_core::dsp::MelSpectrogram;
use sleepfuse_core::ingest::{DatasetManifest, PSM_COLS, PSM_FRAME_LEN, PSM_ROWS};
use sleepfuse_core::stage::SleepStage;

use crate::error::{Error, Result};

/// Token for a window without a scored stage.
pub const UNSCORED: &str = "?";

pub fn write_eog_wav(path: &Path, left: &[i16], right: &[i16], rate_hz: u32) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::Config("EOG channels differ in length".into()));
    }
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav)?;
    for (&l, &r) in left.iter().zip(right) {
        w.write_sample(l).map_err(wav)?;
        w.write_sample(r).map_err(wav)?;
    }
    w.finalize().map_err(wav)
}

/// Left and right channels plus the sample rate from the header.
pub fn read_eog_wav(path: &Path) -> Result<(Vec<i16>, Vec<i16>, u32)> {
    let wav = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut r = hound::WavReader::open(path).map_err(wav)?;
    let spec = r.spec();
    if spec.channels != 2 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::parse(
            path,
            0,
            format!(
                "expected 2-channel 16-bit PCM, found {} channel(s) at {} bits",
                spec.channels, spec.bits_per_sample
            ),
        ));
    }
    let samples: Vec<i16> = r.samples::<i16>().collect::<Result<_, _>>().map_err(wav)?;
    let left = samples.iter().step_by(2).copied().collect();
    let right = samples.iter().skip(1).step_by(2).copied().collect();
    Ok((left, right, spec.sample_rate))
}

pub fn write_psm_stream(path: &Path, frames: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(frames.len() * 4);
    for v in frames {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_psm_stream(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.len() % (4 * PSM_FRAME_LEN) != 0 {
        return Err(Error::parse(
            path,
            0,
            format!("{} bytes is not a whole number of 18x8 f32 frames", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsmHeader {
    pub rate_hz: u32,
    pub frames: usize,
}

pub fn write_psm_header(path: &Path, h: &PsmHeader) -> Result<()> {
    let text = format!(
        "rate_hz={}\nframes={}\nrows={PSM_ROWS}\ncols={PSM_COLS}\n",
        h.rate_hz, h.frames
    );
    fs::write(path, text).map_err(Error::io(path))
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_psm_header(path: &Path) -> Result<PsmHeader> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let (mut rate, mut frames) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(path, i + 1, format!("not a number: {v}")))
        };
        match k.trim() {
            "rate_hz" => rate = Some(num(v)? as u32),
            "frames" => frames = Some(num(v)?),
            "rows" if num(v)? != PSM_ROWS => return Err(Error::parse(path, i + 1, "grid must have 18 rows")),
            "cols" if num(v)? != PSM_COLS => return Err(Error::parse(path, i + 1, "grid must have 8 columns")),
            "rows" | "cols" => {}
            other => return Err(Error::parse(path, i + 1, format!("unknown key {other}"))),
        }
    }
    match (rate, frames) {
        (Some(rate_hz), Some(frames)) => Ok(PsmHeader { rate_hz, frames }),
        _ => Err(Error::parse(path, 0, "header needs rate_hz and frames")),
    }
}

pub fn write_labels(path: &Path, labels: &[Option<SleepStage>]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 6);
    for l in labels {
        text.push_str(l.map_or(UNSCORED, SleepStage::name));
        text.push('\n');
    }
    fs::write(path, text).map_err(Error::io(path))
}

/// One token per line; `?` marks an unscored window. Blank lines are
/// skipped.
pub fn read_labels(path: &Path) -> Result<Vec<Option<SleepStage>>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        if tok == UNSCORED {
            out.push(None);
            continue;
        }
        let stage = tok
            .parse::<SleepStage>()
            .map_err(|_| Error::parse(path, i + 1, format!("unknown stage token {tok:?}")))?;
        out.push(Some(stage));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    m.validate()?;
    Ok(m)
}

/// Little-endian u32 channels, n_mels, n_frames, then the values as f32 in
/// channel, mel, frame order.
pub fn write_spectrogram(path: &Path, spec: &MelSpectrogram) -> Result<()> {
    let file = fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(Error::io(path));
    for v in [spec.channels, spec.n_mels, spec.n_frames] {
        put(&(v as u32).to_le_bytes())?;
    }
    for v in &spec.values {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_spectrogram(path: &Path) -> Result<MelSpectrogram> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let word = |i: usize| -> Option<usize> {
        let b = bytes.get(4 * i..4 * i + 4)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };
    let (Some(channels), Some(n_mels), Some(n_frames)) = (word(0), word(1), word(2)) else {
        return Err(Error::parse(path, 0, "truncated header"));
    };
    let n = channels * n_mels * n_frames;
    if bytes.len() != 12 + 4 * n {
        return Err(Error::parse(path, 0, format!("expected {n} values after the header")));
    }
    let values = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(MelSpectrogram {
        channels,
        n_mels,
        n_frames,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_with_unscored_windows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        let labels = vec![Some(SleepStage::Wake), None, Some(SleepStage::Rem), Some(SleepStage::Nrem3)];
        write_labels(&p, &labels).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "Wake\n?\nREM\nNREM3\n");
        assert_eq!(read_labels(&p).unwrap(), labels);
        fs::write(&p, "W\n\nN2\nX\n").unwrap();
        let err = read_labels(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn psm_header_rejects_other_grids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.txt");
        write_psm_header(&p, &PsmHeader { rate_hz: 10, frames: 7 }).unwrap();
        assert_eq!(read_psm_header(&p).unwrap(), PsmHeader { rate_hz: 10, frames: 7 });
        fs::write(&p, "rate_hz=10\nframes=3\nrows=20\n").unwrap();
        assert!(read_psm_header(&p).is_err());
        fs::write(&p, "# comment\nrate_hz=10\n").unwrap();
        assert!(read_psm_header(&p).is_err());
    }

    #[test]
    fn wav_and_psm_stream_are_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let w = dir.path().join("e.wav");
        let left: Vec<i16> = (0..500).map(|i| (i * 13 % 6001 - 3000) as i16).collect();
        let right: Vec<i16> = left.iter().map(|v| -v).collect();
        write_eog_wav(&w, &left, &right, 512).unwrap();
        assert_eq!(read_eog_wav(&w).unwrap(), (left, right, 512));

        let s = dir.path().join("p.bin");
        let frames: Vec<f32> = (0..2 * PSM_FRAME_LEN).map(|i| i as f32 * 0.5).collect();
        write_psm_stream(&s, &frames).unwrap();
        assert_eq!(read_psm_stream(&s).unwrap(), frames);
        fs::write(&s, [0u8; 12]).unwrap();
        assert!(read_psm_stream(&s).is_err());
    }

    #[test]
    fn spectrogram_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let spec = MelSpectrogram {
            channels: 2,
            n_mels: 3,
            n_frames: 4,
            values: (0..24).map(|i| i as f32 - 5.5).collect(),
        };
        write_spectrogram(&p, &spec).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 12 + 24 * 4);
        assert_eq!(read_spectrogram(&p).unwrap(), spec);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..50]).unwrap();
        assert!(read_spectrogram(&p).is_err());
    }
}
