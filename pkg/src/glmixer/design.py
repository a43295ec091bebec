"""Design rows for Model 1 / Model 2 and the grouped design matrices.

Row order is (intercept, RegCDR, RegCDR^2, pct65^2, ln(5q0), [C5q0 if
Model 1], year - offset). The fraction over 65 enters only through its
square. Year centering conditions the cross-product matrix; the offset is
persisted in fit artifacts so predictions reuse the fit-time rows exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import PanelDataset, Observation, logit
from .errors import ValidationError

MODEL1 = 1
MODEL2 = 2

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    variant: int = MODEL1
    sex: str = "both"
    year_offset: float = 0.0

    def __post_init__(self):
        if self.variant not in (MODEL1, MODEL2):
            raise ValidationError(f"model variant must be 1 or 2, got {self.variant!r}")
        if not math.isfinite(self.year_offset):
            raise ValidationError("year_offset must be finite")

    @property
    def p(self) -> int:
        return 7 if self.variant == MODEL1 else 6

    def column_names(self):
        names = ["const", "reg_cdr", "reg_cdr_sq", "pct65_sq", "ln_u5mr"]
        if self.variant == MODEL1:
            names.append("c5q0")
        names.append("year")
        return names

    def to_dict(self) -> dict:
        return {"variant": self.variant, "sex": self.sex, "year_offset": self.year_offset}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(variant=d["variant"], sex=d["sex"], year_offset=d["year_offset"])


def build_row(obs: Observation, spec: ModelSpec) -> np.ndarray:
    """Covariate vector for one observation, in the fixed column order."""
    if spec.variant == MODEL1 and obs.c5q0 is None:
        raise ValidationError(
            f"Model 1 needs c5q0 but ({obs.unit_id}, {obs.period}, {obs.sex}) has none"
        )
    base = [1.0, obs.reg_cdr, obs.reg_cdr ** 2, obs.pct65 ** 2, math.log(obs.u5mr_true)]
    if spec.variant == MODEL1:
        base.append(obs.c5q0)
    base.append(obs.period - spec.year_offset)
    return np.asarray(base, dtype=np.float64)


@dataclass(frozen=True)
class GroupedDesign:
    """Stacked design with per-group bookkeeping precomputed for the sampler."""

    X: np.ndarray          # (n, p)
    y: np.ndarray          # (n,) logit completeness
    group_idx: np.ndarray  # (n,) int, row -> group
    sizes: np.ndarray      # (m,) int
    unit_ids: tuple
    xbar: np.ndarray       # (m, p) per-group covariate means
    ybar: np.ndarray       # (m,)
    XtX_g: np.ndarray      # (m, p, p)
    Xty_g: np.ndarray      # (m, p)

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]


def build_matrices(panel: PanelDataset, spec: ModelSpec, for_fit: bool = True) -> GroupedDesign:
    """Design rows plus responses y = logit(completeness), grouped by unit.

    Fitting requires n_i > p for every group and a numerically
    nonsingular pooled cross-product matrix.
    """
    rows, ys, gidx, unit_ids, sizes = [], [], [], [], []
    for g, (uid, obs_list) in enumerate(panel.groups):
        unit_ids.append(uid)
        sizes.append(len(obs_list))
        for obs in obs_list:
            rows.append(build_row(obs, spec))
            ys.append(logit(obs.completeness))
            gidx.append(g)
    X = np.vstack(rows)
    y = np.asarray(ys)
    group_idx = np.asarray(gidx, dtype=np.intp)
    sizes_arr = np.asarray(sizes, dtype=np.intp)
    p = X.shape[1]
    if for_fit:
        bad = [uid for uid, n_i in zip(unit_ids, sizes) if n_i <= p]
        if bad:
            raise ValidationError(
                f"fitting requires n_i > p = {p} observations per group; violated by {bad}"
            )
        xtx = X.T @ X
        svals = np.linalg.svd(xtx, compute_uv=False)
        rcond = svals[-1] / svals[0] if svals[0] > 0 else 0.0
        if rcond < RCOND_MIN:
            raise ValidationError(
                f"pooled cross-product matrix is numerically singular "
                f"(reciprocal condition {rcond:.3g} < {RCOND_MIN:g})"
            )
    m = len(sizes)
    xbar = np.zeros((m, p))
    ybar = np.zeros(m)
    XtX_g = np.zeros((m, p, p))
    Xty_g = np.zeros((m, p))
    for g in range(m):
        sel = group_idx == g
        Xg, yg = X[sel], y[sel]
        xbar[g] = Xg.mean(axis=0)
        ybar[g] = yg.mean()
        XtX_g[g] = Xg.T @ Xg
        Xty_g[g] = Xg.T @ yg
    return GroupedDesign(
        X=X, y=y, group_idx=group_idx, sizes=sizes_arr, unit_ids=tuple(unit_ids),
        xbar=xbar, ybar=ybar, XtX_g=XtX_g, Xty_g=Xty_g,
    )
