from .validation import validation_loss

__all__ = ["metric_logger", "validation"]
