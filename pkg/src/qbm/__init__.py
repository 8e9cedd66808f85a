"""Query-bag matching: decide whether a user query asks the same question
as a bag of paraphrased questions."""
from .estimator import QBMClassifier
from .model import VARIANTS, ModelConfig

__version__ = "0.1.0"

__all__ = ["QBMClassifier", "ModelConfig", "VARIANTS", "__version__"]
