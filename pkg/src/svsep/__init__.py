"""Singing-voice separation toolkit: spectrogram U-Net masking, dataset mining,
augmentation and BSS-eval significance testing."""

__version__ = "0.1.0"

from .dsp import AudioClip, SegmentSpec, Spectrogram, STANDARD_SEGMENT, istft, resample, segment_to_standard, stft

__all__ = ["AudioClip", "SegmentSpec", "Spectrogram", "STANDARD_SEGMENT", "istft", "resample",
           "segment_to_standard", "stft", "__version__"]
