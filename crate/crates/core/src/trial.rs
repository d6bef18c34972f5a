use crate::error::{Error, Result};

/// One trial of a multichannel recording: `n_electrodes` rows of
/// `n_samples` values each, stored electrode-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelTrial {
    n_electrodes: usize,
    n_samples: usize,
    fs_hz: f64,
    data: Vec<f64>,
}

impl MultichannelTrial {
    pub fn new(n_electrodes: usize, n_samples: usize, fs_hz: f64, data: Vec<f64>) -> Result<Self> {
        if n_electrodes == 0 {
            return Err(Error::invalid("trial needs at least one electrode"));
        }
        if data.len() != n_electrodes * n_samples {
            return Err(Error::invalid(format!(
                "trial payload has {} values, expected {n_electrodes}x{n_samples}",
                data.len()
            )));
        }
        if !(fs_hz > 0.0 && fs_hz.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs_hz}")));
        }
        Ok(Self {
            n_electrodes,
            n_samples,
            fs_hz,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], fs_hz: f64) -> Result<Self> {
        let n_samples = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_samples) {
            return Err(Error::invalid("ragged trial rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), n_samples, fs_hz, data)
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn nyquist(&self) -> f64 {
        self.fs_hz / 2.0
    }

    pub fn row(&self, electrode: usize) -> &[f64] {
        let start = electrode * self.n_samples;
        &self.data[start..start + self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_samples.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A labelled collection of trials sharing electrode count, length and
/// sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trials: Vec<MultichannelTrial>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(trials: Vec<MultichannelTrial>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if trials.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} trials but {} labels",
                trials.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {n_classes})")));
        }
        if let Some(first) = trials.first() {
            let shape = (first.n_electrodes(), first.n_samples());
            if trials
                .iter()
                .any(|t| (t.n_electrodes(), t.n_samples()) != shape || t.fs_hz() != first.fs_hz())
            {
                return Err(Error::invalid("trials differ in shape or sampling rate"));
            }
        }
        Ok(Self {
            trials,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_electrodes(&self) -> usize {
        self.trials.first().map_or(0, MultichannelTrial::n_electrodes)
    }

    pub fn n_samples(&self) -> usize {
        self.trials.first().map_or(0, MultichannelTrial::n_samples)
    }

    pub fn fs_hz(&self) -> f64 {
        self.trials.first().map_or(0.0, MultichannelTrial::fs_hz)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            trials: indices.iter().map(|&i| self.trials[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Sequential split: the first `fraction` of trials (rounded down) form
    /// the first part, the remainder the second.
    pub fn split_sequential(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * fraction).floor() as usize;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}
