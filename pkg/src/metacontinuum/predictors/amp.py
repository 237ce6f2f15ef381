"""Trigram access-sequence model trained offline on the previous day's trace."""

from __future__ import annotations

import json
from collections import deque
from typing import Iterable, Optional

from ..core import ResourcePath
from ..prefetch import PRIORITY_PREDICTOR
from .base import Predictor, uncached


class NGramModel:
    def __init__(self):
        self.counts: dict[tuple[str, str], dict[str, int]] = {}

    @classmethod
    def train(cls, paths: Iterable) -> "NGramModel":
        model = cls()
        p1 = p2 = None
        for p in paths:
            p = str(p)
            if p1 is not None:
                nxt = model.counts.setdefault((p1, p2), {})
                nxt[p] = nxt.get(p, 0) + 1
            p1, p2 = p2, p
        return model

    def predict(self, context, m: int = 6) -> list[str]:
        if context is None or len(context) < 2 or context[0] is None:
            return []
        nxt = self.counts.get((str(context[0]), str(context[1])))
        if not nxt:
            return []
        return [p for p, _ in sorted(nxt.items(), key=lambda kv: -kv[1])[:m]]

    def __len__(self):
        return len(self.counts)

    def save(self, path) -> None:
        rows = [[a, b, c, n] for (a, b), nxt in self.counts.items() for c, n in nxt.items()]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"format": "trigram-v1", "rows": rows}, fh)

    @classmethod
    def load(cls, path) -> "NGramModel":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("format") != "trigram-v1":
            raise ValueError(f"{path}: not a trigram model file")
        model = cls()
        for a, b, c, n in data["rows"]:
            model.counts.setdefault((a, b), {})[c] = int(n)
        return model


class AMPPredictor(Predictor):
    name = "amp"

    def __init__(self, model: Optional[NGramModel] = None, m: int = 6,
                 priority: int = PRIORITY_PREDICTOR):
        self.model = model
        self.m = m
        self.priority = priority
        self.recent: deque = deque(maxlen=2)

    def on_request(self, inp, hit, cache):
        self.recent.append(str(inp.path))
        if self.model is None or len(self.recent) < 2:
            return []
        preds = self.model.predict(tuple(self.recent), self.m)
        return uncached([ResourcePath.parse(p) for p in preds], cache, self.priority)
