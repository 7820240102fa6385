"""Model checkpoints: the network JSON format extended with a backend block."""
import json

from ..tensorcore import CHECKPOINT_VERSION
from .models import RiskModel, model_from_dict

MODEL_FORMAT = "probsurv-model"


def save_model(model: RiskModel, path):
    doc = {"format": MODEL_FORMAT, "version": CHECKPOINT_VERSION, **model.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> RiskModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return model_from_dict(doc)
