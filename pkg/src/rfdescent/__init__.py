"""Random forest laboratory: tree/forest induction, capacity and diversity metrics,
distillation by data augmentation and negative-correlation leaf refinement."""

__version__ = "0.1.0"
