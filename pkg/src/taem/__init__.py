"""Text-to-audio embedding: map phoneme sequences plus a visual speaker
embedding into a frozen per-video-frame audio feature space, with duration
modeling, distillation training, and lip-sync evaluation metrics."""

__version__ = "0.1.0"
