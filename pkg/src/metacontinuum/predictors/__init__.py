from .amp import AMPPredictor, NGramModel
from .base import ATTRIBUTE_NAMES, Predictor, PredictorInput
from .dls import DLSPredictor, HistoryWindow, PatternPath, detect_pattern
from .nexus import FarmerPredictor, NexusPredictor, SuccessorGraph, attribute_similarity

PREDICTORS = {
    "none": Predictor,
    "dls": DLSPredictor,
    "nexus": NexusPredictor,
    "farmer": FarmerPredictor,
    "amp": AMPPredictor,
}


def make_predictor(name: str, **params) -> Predictor:
    try:
        cls = PREDICTORS[name]
    except KeyError:
        raise ValueError(f"unknown predictor {name!r}; choose from {sorted(PREDICTORS)}") from None
    return cls(**params)


__all__ = [
    "AMPPredictor", "ATTRIBUTE_NAMES", "DLSPredictor", "FarmerPredictor", "HistoryWindow",
    "NGramModel", "NexusPredictor", "PREDICTORS", "PatternPath", "Predictor", "PredictorInput",
    "SuccessorGraph", "attribute_similarity", "detect_pattern", "make_predictor",
]
