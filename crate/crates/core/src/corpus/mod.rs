//! Synthetic speech-like corpus: a pseudo-phone source-filter generator with
//! exact per-frame content labels, noise generators, and a microphone array
//! capture simulator.

mod capture;
mod generator;
mod noise;

pub use capture::{fractional_delay, simulate_capture, CaptureSimulation};
pub use generator::{
    generate_utterance, Alphabet, Formant, Segment, SymbolDef, Utterance, UtteranceSpec,
    PAUSE_SYMBOL,
};
pub use noise::{generate_noise, NoiseKind};
