"""History-graph predictors: NEXUS and FARMER.

Both keep a weighted successor graph built from the recent request window.
When a request arrives, every request still in the window gains an edge to
it; nearer predecessors add more weight (``window - distance + 1``).
"""

from __future__ import annotations

from collections import OrderedDict, deque
from typing import Optional

from ..prefetch import PRIORITY_PREDICTOR
from .base import ATTRIBUTE_NAMES, Predictor, PredictorInput, uncached


class SuccessorGraph:
    def __init__(self, window: int = 8, max_vertices: Optional[int] = None,
                 max_successors: Optional[int] = None):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.max_vertices = max_vertices
        self.max_successors = window if max_successors is None else max_successors
        self.history: deque = deque(maxlen=window)
        self.edges: "OrderedDict[object, dict]" = OrderedDict()

    def update(self, item) -> None:
        w = self.window
        for d, pred in enumerate(reversed(self.history), start=1):
            if pred != item:
                self._strengthen(pred, item, w - d + 1)
        self.history.append(item)

    def _strengthen(self, pred, succ, weight) -> None:
        succs = self.edges.get(pred)
        if succs is None:
            succs = {}
            self.edges[pred] = succs
            if self.max_vertices is not None and len(self.edges) > self.max_vertices:
                self.edges.popitem(last=False)
        else:
            self.edges.move_to_end(pred)
        if succ in succs:
            succs[succ] += weight
            return
        if len(succs) >= self.max_successors:
            weakest = min(succs, key=succs.__getitem__)
            del succs[weakest]
        succs[succ] = weight

    def successors(self, item) -> dict:
        return dict(self.edges.get(item, {}))

    def top_k(self, item, k: int) -> list:
        succs = self.edges.get(item)
        if not succs:
            return []
        # sorted() is stable, so equal weights keep insertion order
        return [s for s, _ in sorted(succs.items(), key=lambda kv: -kv[1])[:k]]


class NexusPredictor(Predictor):
    name = "nexus"

    def __init__(self, window: int = 8, k: int = 6, max_vertices: Optional[int] = None,
                 priority: int = PRIORITY_PREDICTOR):
        self.graph = SuccessorGraph(window, max_vertices)
        self.k = k
        self.priority = priority

    def rank(self, inp: PredictorInput) -> list:
        return self.graph.top_k(inp.path, self.k)

    def on_request(self, inp, hit, cache):
        self.graph.update(inp.path)
        return uncached(self.rank(inp), cache, self.priority)


def attribute_similarity(a: Optional[dict], b: Optional[dict]) -> float:
    if not a or not b:
        return 0.0
    same = sum(1 for name in ATTRIBUTE_NAMES if a.get(name) is not None and a.get(name) == b.get(name))
    return same / len(ATTRIBUTE_NAMES)


class FarmerPredictor(NexusPredictor):
    """NEXUS graph plus attribute similarity, blended linearly by ``alpha``."""

    name = "farmer"

    def __init__(self, window: int = 8, k: int = 6, alpha: float = 0.5,
                 max_vertices: Optional[int] = None, priority: int = PRIORITY_PREDICTOR):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        super().__init__(window, k, max_vertices, priority)
        self.alpha = alpha
        self.attributes: "OrderedDict[object, dict]" = OrderedDict()
        self.max_attributes = max_vertices

    def _remember(self, inp: PredictorInput) -> None:
        if not inp.attributes:
            return
        self.attributes[inp.path] = inp.attributes
        self.attributes.move_to_end(inp.path)
        if self.max_attributes is not None and len(self.attributes) > self.max_attributes:
            self.attributes.popitem(last=False)

    def scores(self, inp: PredictorInput) -> list[tuple[object, float]]:
        succs = self.graph.edges.get(inp.path)
        if not succs:
            return []
        top = max(succs.values())
        out = []
        for s, w in succs.items():
            sim = attribute_similarity(inp.attributes, self.attributes.get(s))
            out.append((s, self.alpha * (w / top) + (1.0 - self.alpha) * sim))
        return out

    def rank(self, inp):
        ranked = sorted(self.scores(inp), key=lambda kv: -kv[1])
        return [s for s, _ in ranked[: self.k]]

    def on_request(self, inp, hit, cache):
        self.graph.update(inp.path)
        self._remember(inp)
        return uncached(self.rank(inp), cache, self.priority)
