"""Emotion-conditioned melody generation with a few-step denoising diffusion GAN."""

from ._emodiff import (
    HOLD,
    REST,
    VOCAB_SIZE,
    Generator,
    Schedule,
    ScheduleError,
    frechet_distance,
    midi_to_tokens,
    mmd,
    mmd_permutation_test,
    run_cli,
    synth_corpus,
    tokens_to_midi,
    validate_tokens,
)

__version__ = "0.1.0"

__all__ = [
    "HOLD",
    "REST",
    "VOCAB_SIZE",
    "Generator",
    "Schedule",
    "ScheduleError",
    "frechet_distance",
    "midi_to_tokens",
    "mmd",
    "mmd_permutation_test",
    "run_cli",
    "synth_corpus",
    "tokens_to_midi",
    "validate_tokens",
]
