from retrieval_nle.training.backprop import TrainBatch, loss_and_grads, loss_only, make_batch
from retrieval_nle.training.gradcheck import GradCheckReport, grad_check
from retrieval_nle.training.loop import TrainResult, build_tokenizer, train, write_loss_curve
from retrieval_nle.training.optim import AdamState, TrainConfig, adam_step

__all__ = [
    "AdamState",
    "GradCheckReport",
    "TrainBatch",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "build_tokenizer",
    "grad_check",
    "loss_and_grads",
    "loss_only",
    "make_batch",
    "train",
    "write_loss_curve",
]
