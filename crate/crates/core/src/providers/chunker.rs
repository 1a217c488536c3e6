//! Audio chunkers: split a recording into short voiced spans.

use crate::corpus::Chunk;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

/// Audio handed to a chunker: decoded samples or an opaque locator.
#[derive(Debug, Clone)]
pub enum Audio {
    Waveform(Waveform),
    Locator(String),
}

pub trait Chunker {
    /// Returns `(start_s, end_s)` boundaries of voiced regions.
    fn boundaries(&self, audio: &Audio) -> Result<Vec<(f64, f64)>>;
}

/// Splits `audio` into validated, indexed chunks. Zero voiced regions yield an
/// empty list.
pub fn chunk_audio(interview_id: &str, audio: &Audio, chunker: &dyn Chunker) -> Result<Vec<Chunk>> {
    let bounds = chunker.boundaries(audio)?;
    let mut prev_end = f64::NEG_INFINITY;
    let mut chunks = Vec::with_capacity(bounds.len());
    for (i, (s, e)) in bounds.into_iter().enumerate() {
        if !(s.is_finite() && e.is_finite()) || s < 0.0 || e <= s {
            return Err(Error::Validation(format!("chunker produced invalid span [{s}, {e}]")));
        }
        if s < prev_end {
            return Err(Error::Validation(format!(
                "chunker produced overlapping or unsorted span [{s}, {e}] after end {prev_end}"
            )));
        }
        prev_end = e;
        chunks.push(Chunk {
            interview_id: interview_id.to_owned(),
            index: i,
            start_s: s,
            end_s: e,
        });
    }
    Ok(chunks)
}

/// Emits preconfigured boundaries verbatim, ignoring the audio content.
#[derive(Debug, Clone, Default)]
pub struct PassThroughChunker {
    pub boundaries: Vec<(f64, f64)>,
}

impl Chunker for PassThroughChunker {
    fn boundaries(&self, _audio: &Audio) -> Result<Vec<(f64, f64)>> {
        Ok(self.boundaries.clone())
    }
}

/// Frame-energy voice activity chunker.
///
/// Frames whose RMS exceeds `threshold` are voiced. Voiced runs separated by
/// less than `merge_gap_s` are joined, runs shorter than `min_chunk_s` are
/// dropped and runs longer than `max_chunk_s` are cut into equal pieces.
#[derive(Debug, Clone)]
pub struct EnergyVadChunker {
    pub frame_s: f64,
    pub threshold: f32,
    pub merge_gap_s: f64,
    pub min_chunk_s: f64,
    pub max_chunk_s: f64,
}

impl Default for EnergyVadChunker {
    fn default() -> Self {
        Self {
            frame_s: 0.03,
            threshold: 0.01,
            merge_gap_s: 0.3,
            min_chunk_s: 0.25,
            max_chunk_s: 4.0,
        }
    }
}

impl Chunker for EnergyVadChunker {
    fn boundaries(&self, audio: &Audio) -> Result<Vec<(f64, f64)>> {
        let wav = match audio {
            Audio::Waveform(w) => w,
            Audio::Locator(loc) => {
                return Err(Error::Provider(format!(
                    "cannot decode audio locator {loc:?}; supply decoded samples"
                )))
            }
        };
        if wav.sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        let sr = wav.sample_rate as f64;
        let frame_len = ((self.frame_s * sr).round() as usize).max(1);

        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (f, frame) in wav.samples.chunks(frame_len).enumerate() {
            let rms = (frame.iter().map(|&x| x * x).sum::<f32>() / frame.len() as f32).sqrt();
            if rms <= self.threshold {
                continue;
            }
            let start = f * frame_len;
            let end = start + frame.len();
            match runs.last_mut() {
                Some(last) if (start - last.1) as f64 / sr < self.merge_gap_s => last.1 = end,
                _ => runs.push((start, end)),
            }
        }

        let mut out = Vec::new();
        for (s, e) in runs {
            let (start_s, end_s) = (s as f64 / sr, e as f64 / sr);
            let dur = end_s - start_s;
            if dur < self.min_chunk_s {
                continue;
            }
            let pieces = (dur / self.max_chunk_s).ceil().max(1.0) as usize;
            let step = dur / pieces as f64;
            for p in 0..pieces {
                let a = start_s + p as f64 * step;
                let b = if p + 1 == pieces { end_s } else { start_s + (p + 1) as f64 * step };
                out.push((a, b));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(sr: u32, spans: &[(f64, f64)], total_s: f64) -> Waveform {
        let n = (total_s * sr as f64) as usize;
        let mut samples = vec![0.0f32; n];
        for &(a, b) in spans {
            let (a, b) = ((a * sr as f64) as usize, (b * sr as f64) as usize);
            for (i, s) in samples[a..b].iter_mut().enumerate() {
                *s = 0.5 * (i as f32 * 0.3).sin();
            }
        }
        Waveform { sample_rate: sr, samples }
    }

    #[test]
    fn silence_yields_no_chunks() {
        let audio = Audio::Waveform(Waveform {
            sample_rate: 16_000,
            samples: vec![0.0; 16_000 * 3],
        });
        assert!(chunk_audio("I", &audio, &EnergyVadChunker::default()).unwrap().is_empty());
    }

    #[test]
    fn pass_through_is_verbatim() {
        let c = PassThroughChunker {
            boundaries: vec![(0.0, 2.0), (2.5, 4.0)],
        };
        let chunks = chunk_audio("I", &Audio::Locator("x".into()), &c).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| (c.index, c.start_s, c.end_s)).collect();
        assert_eq!(spans, vec![(0, 0.0, 2.0), (1, 2.5, 4.0)]);
    }

    #[test]
    fn overlapping_boundaries_rejected() {
        let c = PassThroughChunker {
            boundaries: vec![(0.0, 2.0), (1.0, 3.0)],
        };
        assert!(matches!(
            chunk_audio("I", &Audio::Locator("x".into()), &c),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn energy_vad_finds_voiced_regions() {
        let sr = 8_000;
        let audio = Audio::Waveform(tone(sr, &[(0.5, 2.5), (4.0, 5.0)], 6.0));
        let chunks = chunk_audio("I", &audio, &EnergyVadChunker::default()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!((chunks[0].start_s - 0.5).abs() < 0.05 && (chunks[0].end_s - 2.5).abs() < 0.05);
        assert!((chunks[1].start_s - 4.0).abs() < 0.05 && (chunks[1].end_s - 5.0).abs() < 0.05);
    }

    #[test]
    fn energy_vad_splits_long_runs() {
        let audio = Audio::Waveform(tone(8_000, &[(0.0, 9.0)], 9.0));
        let chunks = chunk_audio("I", &audio, &EnergyVadChunker::default()).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.duration() <= 4.0 + 1e-9));
    }

    #[test]
    fn energy_vad_needs_samples() {
        let err = chunk_audio("I", &Audio::Locator("a.wav".into()), &EnergyVadChunker::default());
        assert!(matches!(err, Err(Error::Provider(_))));
    }
}
