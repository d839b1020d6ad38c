"""Finite-difference gradient verification.

Central differences with step 1e-5 against a deterministic scalar closure,
run in 64-bit. Relative error per entry is |a - n| / max(|a|, |n|, 1e-8);
the report carries the max over each parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor

STEP = 1e-5
FLOOR = 1e-8


@dataclass
class ParamReport:
    name: str
    max_rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    tolerance: float
    params: list[ParamReport]

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.params)

    @property
    def worst(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def failures(self) -> list[ParamReport]:
        return [p for p in self.params if not p.ok]


def gradient_check(closure, params: list[Tensor], tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``closure(graph) -> Tensor`` must rebuild the scalar loss from scratch on
    every call (deterministic; parameters are read through their ``.data``).
    Parameters are expected in float64.
    """
    g = Graph()
    loss = closure(g)
    analytic = g.backward(loss, params)

    reports = []
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + STEP
            up = closure(Graph(record=False)).item()
            flat[j] = orig - STEP
            down = closure(Graph(record=False)).item()
            flat[j] = orig
            num[j] = (up - down) / (2.0 * STEP)
        n = num.reshape(p.data.shape)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
        worst = float(rel.max()) if rel.size else 0.0
        reports.append(ParamReport(p.name or f"param{len(reports)}", worst, worst < tolerance))
    return GradCheckReport(tolerance, reports)
