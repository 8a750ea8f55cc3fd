"""Online Bayesian collaborative topic regression and its baselines."""
from importlib import resources

from .baselines import OCTR, PAI, SGDPMF, OnlineLDA
from .core import Document, GaussianFactor, HyperParams, RatingEvent, TopicState
from .engine import OBCTR
from .models import load_checkpoint, make_model, save_checkpoint

__all__ = [
    "OBCTR", "OCTR", "PAI", "SGDPMF", "OnlineLDA",
    "Document", "GaussianFactor", "HyperParams", "RatingEvent", "TopicState",
    "load_checkpoint", "make_model", "save_checkpoint", "sample_data",
]
__version__ = "0.1.0"


def sample_data(name: str):
    """Path to a file of the small bundled corpus (``sample_docs.tsv`` or ``sample_ratings.dat``)."""
    return resources.files(__name__).joinpath("data", name)
