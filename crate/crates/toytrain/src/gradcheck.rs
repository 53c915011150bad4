//! Central-difference verification of the backpropagated gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::loss::{masked_loss, LossError};
use crate::model::TinyLm;
use crate::MaskedSequence;

/// Coordinates sampled by [`finite_difference_check`].
pub const DEFAULT_COORDS: usize = 128;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub n_coords: usize,
    /// Max over coordinates of `|fd - bp| / max(|fd|, |bp|, 1e-6)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub sum_abs_error: f64,
    /// Parameter index with the largest relative error.
    pub worst_coordinate: Option<usize>,
}

/// Parameters that can influence the loss of `seq`: everything except
/// embedding rows for absent tokens and unused positions.
pub fn relevant_coordinates(model: &TinyLm, seq: &MaskedSequence) -> Vec<usize> {
    let layout = model.layout();
    let d = model.config().d_model;
    let input = seq.input();
    let mut coords = Vec::new();
    let mut tokens = input.clone();
    tokens.sort_unstable();
    tokens.dedup();
    for t in tokens {
        coords.extend(layout.token_row(t, d));
    }
    for pos in 0..input.len() {
        coords.extend(layout.position_row(pos, d));
    }
    for (name, range) in layout.regions() {
        if name != "tok_emb" && name != "pos_emb" {
            coords.extend(range);
        }
    }
    coords
}

pub fn sample_coordinates(model: &TinyLm, seq: &MaskedSequence, n: usize, seed: u64) -> Vec<usize> {
    let all = relevant_coordinates(model, seq);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, all.len(), n.min(all.len()))
        .into_iter()
        .map(|i| all[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Compares backprop against central differences on [`DEFAULT_COORDS`]
/// sampled coordinates of the mean masked loss.
pub fn finite_difference_check(model: &TinyLm, seq: &MaskedSequence, eps: f64) -> Result<GradCheckReport, LossError> {
    let coords = sample_coordinates(model, seq, DEFAULT_COORDS, 0);
    check_coordinates(model, seq, eps, &coords)
}

pub fn check_coordinates(
    model: &TinyLm,
    seq: &MaskedSequence,
    eps: f64,
    coords: &[usize],
) -> Result<GradCheckReport, LossError> {
    let batch = std::slice::from_ref(seq);
    let analytic = masked_loss(model, batch)?.grads;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        eps,
        n_coords: coords.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        sum_abs_error: 0.0,
        worst_coordinate: None,
    };
    for &i in coords {
        let original = probe.params()[i];
        probe.params_mut()[i] = original + eps;
        let plus = masked_loss(&probe, batch)?.mean;
        probe.params_mut()[i] = original - eps;
        let minus = masked_loss(&probe, batch)?.mean;
        probe.params_mut()[i] = original;
        let fd = (plus - minus) / (2.0 * eps);
        let bp = analytic[i];
        let abs = (fd - bp).abs();
        let rel = abs / fd.abs().max(bp.abs()).max(REL_FLOOR);
        report.sum_abs_error += abs;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst_coordinate.is_none() {
            report.max_rel_error = rel;
            report.worst_coordinate = Some(i);
        }
    }
    Ok(report)
}
