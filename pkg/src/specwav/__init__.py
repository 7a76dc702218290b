"""Batch toolkit for spectrogram-resize attacks on anonymized speech.

Subpackages cover corpus I/O, spectral processing, vertical spectrogram
resizing, feature storage, a small speaker embedder with hand-written
gradients, two-stage incremental training, and EER evaluation.
"""

__version__ = "0.1.0"
