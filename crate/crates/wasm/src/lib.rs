//! Browser bindings for three small views of the pipeline: the MVDR beam
//! pattern of a 4-mic square, an inpainting drop mask, and the learning
//! rate schedule.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use gse_core::beamformer::{beam_response, design_mvdr, planar_direction, ArrayGeometry};
use gse_core::corruption::sample_span_mask;
use gse_core::model::lr_at;
use gse_core::rng::seeded;
use wasm_bindgen::prelude::*;

const SAMPLE_RATE: u32 = 16000;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Response magnitude in dB, one value per degree from 0 to 359, of the
/// MVDR beamformer steered to `look_deg`, read at the bin nearest `freq_hz`.
#[wasm_bindgen]
pub fn beam_pattern(side_m: f64, look_deg: f64, freq_hz: f64) -> Result<Vec<f64>, JsError> {
    if !(side_m > 0.0) {
        return Err(js_err("array side must be positive"));
    }
    if !(0.0..=SAMPLE_RATE as f64 / 2.0).contains(&freq_hz) {
        return Err(js_err("frequency must lie in [0, 8000] Hz"));
    }
    let g = ArrayGeometry::square(side_m);
    let w = design_mvdr(&g, planar_direction(look_deg), SAMPLE_RATE).map_err(js_err)?;
    let k = (freq_hz * w.fft_len as f64 / SAMPLE_RATE as f64).round() as usize;
    (0..360)
        .map(|deg| {
            let r = beam_response(&w, &g, planar_direction(deg as f64), SAMPLE_RATE).map_err(js_err)?;
            Ok(20.0 * r[k].norm().max(1e-6).log10())
        })
        .collect()
}

/// Per 20 ms frame, 1 where the span process drops audio.
#[wasm_bindgen]
pub fn drop_mask(n_frames: usize, drop_prob: f64, span_frames: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(js_err("drop probability must lie in [0, 1)"));
    }
    if span_frames == 0 || span_frames > n_frames {
        return Err(js_err("span must be between 1 and the frame count"));
    }
    let mut rng = seeded(seed as u64);
    Ok(sample_span_mask(n_frames, span_frames, drop_prob, &mut rng)
        .into_iter()
        .map(u8::from)
        .collect())
}

/// Learning rate at every update of a run of `total` updates.
#[wasm_bindgen]
pub fn lr_curve(total: usize, peak: f64, warmup: f64, hold: f64) -> Result<Vec<f64>, JsError> {
    if total == 0 || warmup < 0.0 || hold < 0.0 || warmup + hold > 1.0 {
        return Err(js_err("need total > 0 and warm-up + hold fractions within [0, 1]"));
    }
    let sched = [warmup, hold, 1.0 - warmup - hold];
    Ok((0..=total).map(|s| lr_at(s, total, peak, sched)).collect())
}
