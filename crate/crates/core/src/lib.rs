//! Voice conversion from phonetic posteriorgrams.
//!
//! The pipeline has four trainable networks that all speak the same 80-band
//! normalized log-mel features:
//!
//! 1. [`recognizer`]: a convolutional CTC phoneme recognizer whose per-frame
//!    softmax posteriors are the speaker-independent PPG representation.
//! 2. [`synthesizer`]: an attention seq2seq network mapping PPGs to mel and
//!    linear spectrograms of the target speaker.
//! 3. [`enhancer`]: the recognizer and a copy of the synthesizer chained
//!    together and fine-tuned to sharpen synthesized spectrograms.
//! 4. [`vocoder`]: an autoregressive dilated-convolution vocoder conditioned on
//!    upsampled mel frames.
//!
//! [`adaptation`] fine-tunes the last three on a few minutes of a new speaker,
//! and [`pipeline`] chains everything into a conversion.

pub mod adaptation;
pub mod checkpoint;
pub mod config;
pub mod enhancer;
pub mod error;
pub mod features;
pub mod io;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod recognizer;
pub mod store;
pub mod synthesizer;
pub mod toy;
pub mod training;
pub mod vocoder;

pub use error::{Error, Result};
pub use features::{FeatureConfig, LinearSpectrogram, MelRole, MelSpectrogram, Waveform};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/recognizer.md")]
    mod recognizer {}
    #[doc = include_str!("../../../book/src/synthesizer.md")]
    mod synthesizer {}
    #[doc = include_str!("../../../book/src/enhancer.md")]
    mod enhancer {}
    #[doc = include_str!("../../../book/src/vocoder.md")]
    mod vocoder {}
    #[doc = include_str!("../../../book/src/adaptation.md")]
    mod adaptation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
