"""Retrieval-augmented visual question answering with natural-language explanations.

A memory of (image, question, answer, explanation) samples is searched with a
composite cosine score; the averaged answer/explanation features of the top-K
hits are fed to a small decoder that generates
``"the answer is <answer> because <explanation>"``.
"""

from retrieval_nle.errors import TrainingDiverged, ValidationError

__version__ = "0.1.0"

__all__ = ["TrainingDiverged", "ValidationError", "__version__"]
