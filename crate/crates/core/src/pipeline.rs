//! The deterministic part of the acoustic stage: expanding token-level states
//! to frames by duration, and the loss arithmetic that couples the lattice
//! likelihood to the acoustic reconstruction losses.

use ndarray::{Array1, Array2, ArrayView2, Dimension, Zip};
use serde::Serialize;

use crate::dp;
use crate::error::{Error, Result};
use crate::lattice::{DagLattice, TargetSequence, VertexPath};

/// Frames per target token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DurationPlan(pub Vec<usize>);

impl DurationPlan {
    pub fn total_frames(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Frame-level states, `T x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Array2<f64>,
}

/// Repeats row `i` of `states` `durations[i]` times, in order.
pub fn length_regulate(states: ArrayView2<'_, f64>, plan: &DurationPlan) -> Result<FrameSequence> {
    if states.nrows() != plan.len() {
        return Err(Error::LengthMismatch {
            states: states.nrows(),
            durations: plan.len(),
        });
    }
    let mut frames = Array2::zeros((plan.total_frames(), states.ncols()));
    let mut next = 0;
    for (row, &count) in states.rows().into_iter().zip(&plan.0) {
        for _ in 0..count {
            frames.row_mut(next).assign(&row);
            next += 1;
        }
    }
    Ok(FrameSequence { frames })
}

/// Hidden states of the vertices on `path`, one row per step.
pub fn gather_path_states(lattice: &DagLattice, path: &VertexPath) -> Result<Array2<f64>> {
    let hidden = lattice.hidden_states().ok_or(Error::MissingHiddenStates)?;
    if let Some(&v) = path.vertices().iter().find(|&&v| v >= lattice.graph_size()) {
        return Err(Error::InvalidPath(format!("vertex {} outside the lattice", v + 1)));
    }
    Ok(hidden.select(ndarray::Axis(0), path.vertices()))
}

/// Predicted or ground-truth acoustic targets. Mel is `T x n_mels`; duration,
/// pitch and energy are per token.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatures {
    pub mel: Array2<f64>,
    pub duration: Array1<f64>,
    pub pitch: Array1<f64>,
    pub energy: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TtsLosses {
    pub l1: f64,
    pub dur_mse: f64,
    pub pitch_mse: f64,
    pub energy_mse: f64,
    /// Unit-weighted sum of the four components.
    pub total: f64,
}

/// Mean of `f(pred - gt)` over all entries; 0 for empty arrays.
fn mean_of<D: Dimension>(
    what: &'static str,
    pred: &ndarray::Array<f64, D>,
    gt: &ndarray::Array<f64, D>,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            what,
            left: pred.shape().to_vec(),
            right: gt.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    Zip::from(pred).and(gt).for_each(|&p, &g| sum += f(p - g));
    Ok(sum / pred.len() as f64)
}

pub fn tts_losses(pred: &AcousticFeatures, gt: &AcousticFeatures) -> Result<TtsLosses> {
    let l1 = mean_of("mel", &pred.mel, &gt.mel, f64::abs)?;
    let square = |x: f64| x * x;
    let dur_mse = mean_of("duration", &pred.duration, &gt.duration, square)?;
    let pitch_mse = mean_of("pitch", &pred.pitch, &gt.pitch, square)?;
    let energy_mse = mean_of("energy", &pred.energy, &gt.energy, square)?;
    Ok(TtsLosses {
        l1,
        dur_mse,
        pitch_mse,
        energy_mse,
        total: l1 + dur_mse + pitch_mse + energy_mse,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DaspeechLoss {
    pub nll: f64,
    pub tts: TtsLosses,
    pub mu: f64,
    /// `nll + mu * tts.total`.
    pub combined: f64,
}

/// Lattice NLL plus `mu` times the acoustic losses.
pub fn daspeech_loss(
    lattice: &DagLattice,
    target: &TargetSequence,
    pred: &AcousticFeatures,
    gt: &AcousticFeatures,
    mu: f64,
) -> Result<DaspeechLoss> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::InvalidArgument(format!("mu must be non-negative, got {mu}")));
    }
    let nll = dp::nll(lattice, target)?;
    if !nll.is_finite() {
        return Err(Error::InfeasibleTarget {
            target_len: target.len(),
            graph_size: lattice.graph_size(),
        });
    }
    let tts = tts_losses(pred, gt)?;
    Ok(DaspeechLoss {
        nll,
        tts,
        mu,
        combined: dp::composite_loss(nll, tts.total, mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn features(mel: Array2<f64>, m: usize) -> AcousticFeatures {
        AcousticFeatures {
            mel,
            duration: Array1::from_elem(m, 2.0),
            pitch: Array1::linspace(0.0, 1.0, m),
            energy: Array1::from_elem(m, -0.5),
        }
    }

    #[test]
    fn regulate_identity_and_elision() {
        let states = array![[1.0, 2.0], [3.0, 4.0]];
        let out = length_regulate(states.view(), &DurationPlan(vec![1, 1])).unwrap();
        assert_eq!(out.frames, states);
        let out = length_regulate(states.view(), &DurationPlan(vec![0, 3])).unwrap();
        assert_eq!(out.frames, array![[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]]);
    }

    #[test]
    fn regulate_repeats_in_order() {
        let states = array![[1.0], [2.0], [3.0]];
        let out = length_regulate(states.view(), &DurationPlan(vec![2, 1, 2])).unwrap();
        assert_eq!(out.frames, array![[1.0], [1.0], [2.0], [3.0], [3.0]]);
        assert!(matches!(
            length_regulate(states.view(), &DurationPlan(vec![1, 1])),
            Err(Error::LengthMismatch {
                states: 3,
                durations: 2
            })
        ));
    }

    #[test]
    fn losses_vanish_on_identical_inputs() {
        let f = features(Array2::from_elem((4, 3), 0.25), 2);
        let losses = tts_losses(&f, &f).unwrap();
        assert_eq!(
            losses,
            TtsLosses {
                l1: 0.0,
                dur_mse: 0.0,
                pitch_mse: 0.0,
                energy_mse: 0.0,
                total: 0.0
            }
        );
    }

    #[test]
    fn unit_mel_offset() {
        let gt = features(Array2::from_elem((4, 3), 0.25), 2);
        let mut pred = gt.clone();
        pred.mel += 1.0;
        let losses = tts_losses(&pred, &gt).unwrap();
        assert_eq!(losses.l1, 1.0);
        assert_eq!(losses.total, 1.0);
    }

    #[test]
    fn random_losses_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut draw = |shape: (usize, usize)| Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
        let (pm, gm) = (draw((4, 3)), draw((4, 3)));
        let (pd, gd, pp, gp, pe, ge) = (
            draw((1, 4)),
            draw((1, 4)),
            draw((1, 4)),
            draw((1, 4)),
            draw((1, 4)),
            draw((1, 4)),
        );
        let row = |a: &Array2<f64>| a.row(0).to_owned();
        let pred = AcousticFeatures {
            mel: pm.clone(),
            duration: row(&pd),
            pitch: row(&pp),
            energy: row(&pe),
        };
        let gt = AcousticFeatures {
            mel: gm.clone(),
            duration: row(&gd),
            pitch: row(&gp),
            energy: row(&ge),
        };
        let mse = |a: &Array2<f64>, b: &Array2<f64>| (a - b).mapv(|x| x * x).mean().unwrap();
        let expected = (&pm - &gm).mapv(f64::abs).mean().unwrap() + mse(&pd, &gd) + mse(&pp, &gp) + mse(&pe, &ge);
        let losses = tts_losses(&pred, &gt).unwrap();
        assert!((losses.total - expected).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_names_the_pair() {
        let gt = features(Array2::zeros((4, 3)), 2);
        let mut pred = gt.clone();
        pred.pitch = Array1::zeros(3);
        assert!(matches!(
            tts_losses(&pred, &gt),
            Err(Error::ShapeMismatch { what: "pitch", .. })
        ));
    }

    #[test]
    fn daspeech_loss_on_single_path() {
        let lattice =
            DagLattice::from_probabilities(array![[0.0, 1.0], [0.0, 0.0]], array![[0.5, 0.5], [0.75, 0.25]], None)
                .unwrap();
        let target = TargetSequence::new(vec![0, 1]).unwrap();
        let gt = features(Array2::zeros((2, 1)), 2);
        let mut pred = gt.clone();
        pred.mel += 0.2;
        let loss = daspeech_loss(&lattice, &target, &pred, &gt, 5.0).unwrap();
        assert!((loss.tts.total - 0.2).abs() < 1e-15);
        assert!((loss.combined - 3.0794415416798357).abs() < 1e-12);
        let zero_mu = daspeech_loss(&lattice, &target, &pred, &gt, 0.0).unwrap();
        assert_eq!(zero_mu.combined, zero_mu.nll);
        assert!(daspeech_loss(&lattice, &target, &pred, &gt, -1.0).is_err());
        let long = TargetSequence::new(vec![0, 1, 1]).unwrap();
        assert!(matches!(
            daspeech_loss(&lattice, &long, &pred, &gt, 5.0),
            Err(Error::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn gather_states_along_path() {
        let lattice = crate::lattice::build_random(5, 2, 3, 4);
        let path = VertexPath::new(vec![0, 2, 4], 5).unwrap();
        let z = gather_path_states(&lattice, &path).unwrap();
        let hidden = lattice.hidden_states().unwrap();
        assert_eq!(z.row(1), hidden.row(2));
        assert_eq!(z.nrows(), 3);
    }
}
