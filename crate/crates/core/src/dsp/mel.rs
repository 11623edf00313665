use super::{DspError, FrequencyBand, Spectrogram, N_BINS, N_FFT, N_MELS};

/// Added before the logarithm; silence maps to `ln(1e-6)`.
pub const LOG_FLOOR_EPS: f64 = 1e-6;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// 128 triangular filters on the Slaney scale spanning `[0, sample_rate/2]`.
/// Each row is scaled so its weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f32>,
    center_freqs: Vec<f64>,
    sample_rate: u32,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32) -> Self {
        let nyquist = f64::from(sample_rate) / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..N_BINS)
            .map(|k| k as f64 * f64::from(sample_rate) / N_FFT as f64)
            .collect();

        let mut weights = vec![0f32; N_MELS * N_BINS];
        for m in 0..N_MELS {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row: Vec<f64> = bin_hz
                .iter()
                .map(|&f| {
                    let rising = (f - lo) / (center - lo);
                    let falling = (hi - f) / (hi - center);
                    rising.min(falling).max(0.0)
                })
                .collect();
            let mut sum: f64 = row.iter().sum();
            let row = if sum > 0.0 {
                row
            } else {
                // Narrower than a bin: put all weight on the nearest bin.
                let nearest = (center * N_FFT as f64 / f64::from(sample_rate)).round() as usize;
                let mut r = vec![0.0; N_BINS];
                r[nearest.min(N_BINS - 1)] = 1.0;
                sum = 1.0;
                r
            };
            for (w, v) in weights[m * N_BINS..(m + 1) * N_BINS].iter_mut().zip(row) {
                *w = (v / sum) as f32;
            }
        }
        Self {
            weights,
            center_freqs: edges[1..=N_MELS].to_vec(),
            sample_rate,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_mels(&self) -> usize {
        N_MELS
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.weights[m * N_BINS..(m + 1) * N_BINS]
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }
}

/// Log-compressed Mel grid, stored mel-major: `values[mel * n_frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub band: Option<FrequencyBand>,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f32>, n_frames: usize) -> Result<Self, DspError> {
        if values.len() != N_MELS * n_frames {
            return Err(DspError::ShapeMismatch(format!(
                "{} values for {N_MELS} x {n_frames}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_frames,
            band: None,
        })
    }

    pub fn n_mels(&self) -> usize {
        N_MELS
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    /// Value of a silent cell.
    pub fn floor() -> f32 {
        LOG_FLOOR_EPS.ln() as f32
    }
}

/// `ln(filterbank · mags + 1e-6)` frame by frame.
pub fn mel_spectrogram(spec: &Spectrogram, fb: &MelFilterbank) -> Result<MelSpectrogram, DspError> {
    if fb.sample_rate != spec.sample_rate() {
        return Err(DspError::ShapeMismatch(format!(
            "filterbank built for {} Hz, spectrogram at {} Hz",
            fb.sample_rate,
            spec.sample_rate()
        )));
    }
    let n_frames = spec.n_frames();
    let mut acc = vec![0f64; N_MELS * n_frames];
    for m in 0..N_MELS {
        let out = &mut acc[m * n_frames..(m + 1) * n_frames];
        for (k, &w) in fb.row(m).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let w = f64::from(w);
            for (o, &mag) in out.iter_mut().zip(spec.bin(k)) {
                *o += w * f64::from(mag);
            }
        }
    }
    let values = acc
        .into_iter()
        .map(|e| (e + LOG_FLOOR_EPS).ln() as f32)
        .collect();
    MelSpectrogram::new(values, n_frames)
}
