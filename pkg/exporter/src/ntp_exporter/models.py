"""Next-token-probability sources for the exporter.

Two kinds of model identifier are recognized: a path to a ``.json`` file
describing a fixed-logit model (used for testing and tiny experiments), and
anything else, which is treated as a Hugging Face model id and requires
``torch`` and ``transformers`` to be installed.
"""

import json
import os

import numpy as np

__all__ = ["ModelLoadError", "FixedLogitModel", "HFModel", "load_model"]


class ModelLoadError(Exception):
    pass


class FixedLogitModel:
    """A deterministic model whose logits depend only on the previous token.

    The JSON file holds ``{"V": V, "logits": [[...], ...]}`` with V + 1 rows of
    V logits each; row 0 is the start-of-sequence context and row k the context
    ending in token k.  Probabilities are the softmax of the row, temperature 1.
    """

    def __init__(self, V: int, logits: np.ndarray):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (V + 1, V):
            raise ModelLoadError(f"logit table must be ({V + 1}, {V}), got {logits.shape}")
        self.V = V
        self.logits = logits

    @classmethod
    def from_file(cls, path) -> "FixedLogitModel":
        try:
            with open(path) as fh:
                obj = json.load(fh)
            return cls(int(obj["V"]), obj["logits"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ModelLoadError(f"cannot load fixed-logit model from {path}: {e}") from e

    def next_probs(self, context: np.ndarray) -> np.ndarray:
        prev = int(context[-1]) if len(context) else 0
        if not 0 <= prev <= self.V:
            raise ModelLoadError(f"token id {prev} out of range for V={self.V}")
        z = self.logits[prev]
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()


class HFModel:
    """A pretrained causal LM loaded through transformers, eval mode, no grad."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import AutoModelForCausalLM
        except ImportError as e:
            raise ModelLoadError(
                f"model id {model_id!r} needs torch and transformers installed") from e
        self._torch = torch
        try:
            self.model = AutoModelForCausalLM.from_pretrained(model_id)
        except Exception as e:
            raise ModelLoadError(f"cannot load model {model_id!r}: {e}") from e
        self.model.eval()
        self.V = int(self.model.config.vocab_size)

    def next_probs(self, context: np.ndarray) -> np.ndarray:
        torch = self._torch
        if len(context) == 0:
            bos = getattr(self.model.config, "bos_token_id", None)
            if bos is None:
                raise ModelLoadError("model has no BOS token; cannot condition on empty context")
            ids = [int(bos)]
        else:
            # exporter token ids are 1-based; the model's are 0-based
            ids = [int(t) - 1 for t in context]
        with torch.no_grad():
            logits = self.model(torch.tensor([ids])).logits[0, -1].double()
            return torch.softmax(logits, dim=-1).numpy()


def load_model(model_id: str):
    if model_id.endswith(".json") or os.path.sep in model_id:
        return FixedLogitModel.from_file(model_id)
    return HFModel(model_id)
