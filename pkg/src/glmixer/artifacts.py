"""Flat, diff-able fit artifacts: JSON manifest, per-chain trace CSVs,
summary and prediction CSVs.

Floats are written with repr (shortest round-trip) so identical runs
produce byte-identical files; no timestamps anywhere.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import __version__
from .data import PanelDataset
from .design import ModelSpec
from .errors import ValidationError
from .gibbs import PriorConfig, Trace
from .inference import PosteriorSummary

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.csv"
PREDICTIONS_NAME = "predictions.csv"


def _fmt(x) -> str:
    return repr(float(x))


def write_panel_csv(panel: PanelDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "year", "sex", "completeness", "reg_cdr",
                    "pct65", "u5mr", "c5q0"])
        for obs in panel.observations():
            w.writerow([
                obs.unit_id, obs.period, obs.sex, _fmt(obs.completeness),
                _fmt(obs.reg_cdr), _fmt(obs.pct65), _fmt(obs.u5mr_true),
                "" if obs.c5q0 is None else _fmt(obs.c5q0),
            ])


def chain_csv_name(chain_id: int) -> str:
    return f"chain_{chain_id}.csv"


def write_trace_csv(trace: Trace, path) -> None:
    priors = trace.priors
    name_map = {"tau": priors.tau_name, "phi": priors.phi_name}
    iters = trace.kept_iterations()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "param", "index", "value"])
        for key, arr in trace.draws.items():
            name = name_map.get(key, key)
            a = np.atleast_2d(arr.T).T  # (K, dim)
            for j in range(a.shape[1]):
                col = a[:, j]
                for it, v in zip(iters, col):
                    w.writerow([int(it), name, j, _fmt(v)])


def write_manifest(outdir, *, seed: int, chains: int, n_iter: int, burn_in: int,
                   thin: int, priors: PriorConfig, spec: ModelSpec,
                   unit_ids, sizes, clamp_policy: str = "clamp") -> None:
    manifest = {
        "software": "glmixer",
        "version": __version__,
        "seed": seed,
        "chains": chains,
        "n_iter": n_iter,
        "burn_in": burn_in,
        "thin": thin,
        "priors": priors.to_dict(),
        "spec": spec.to_dict(),
        "unit_ids": list(unit_ids),
        "sizes": [int(s) for s in sizes],
        "clamp_policy": clamp_policy,
    }
    with open(os.path.join(outdir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary_csv(summary: PosteriorSummary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "index", "mean", "sd", "q2.5", "q50", "q97.5", "ess", "rhat"])
        for row in summary.rows:
            w.writerow([row.param, row.index, _fmt(row.mean), _fmt(row.sd),
                        _fmt(row.q2_5), _fmt(row.q50), _fmt(row.q97_5),
                        _fmt(row.ess), _fmt(row.rhat)])


def write_predictions_csv(results, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "row", "mode", "mean", "q2.5", "q97.5"])
        for res in results:
            for j in range(len(res.mean)):
                w.writerow([res.unit_id, j, res.mode, _fmt(res.mean[j]),
                            _fmt(res.q2_5[j]), _fmt(res.q97_5[j])])


def write_fit(outdir, traces, summary: PosteriorSummary, *, seed: int,
              clamp_policy: str = "clamp") -> None:
    os.makedirs(outdir, exist_ok=True)
    t0 = traces[0]
    write_manifest(outdir, seed=seed, chains=len(traces), n_iter=t0.n_iter,
                   burn_in=t0.burn_in, thin=t0.thin, priors=t0.priors,
                   spec=t0.spec, unit_ids=t0.unit_ids, sizes=t0.sizes,
                   clamp_policy=clamp_policy)
    for trace in traces:
        write_trace_csv(trace, os.path.join(outdir, chain_csv_name(trace.chain_id)))
    write_summary_csv(summary, os.path.join(outdir, SUMMARY_NAME))


def load_fit(outdir):
    """Rebuild (traces, manifest) from a fit artifact directory."""
    manifest_path = os.path.join(outdir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ValidationError(f"no {MANIFEST_NAME} in {outdir}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    priors = PriorConfig.from_dict(manifest["priors"])
    spec = ModelSpec.from_dict(manifest["spec"])
    reverse = {priors.tau_name: "tau", priors.phi_name: "phi"}
    traces = []
    for k in range(manifest["chains"]):
        path = os.path.join(outdir, chain_csv_name(k))
        if not os.path.exists(path):
            raise ValidationError(f"missing trace file {path}")
        columns: dict = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for it, name, idx, value in reader:
                key = reverse.get(name, name)
                columns.setdefault(key, {}).setdefault(int(idx), []).append(float(value))
        draws = {}
        for key, cols in columns.items():
            mat = np.column_stack([np.asarray(cols[j]) for j in sorted(cols)])
            if key in ("tau", "phi"):
                draws[key] = mat[:, 0]
            elif key == "nu":
                draws[key] = mat.astype(np.intp)
            else:
                draws[key] = mat
        traces.append(Trace(
            draws=draws, seed=manifest["seed"], chain_id=k,
            n_iter=manifest["n_iter"], burn_in=manifest["burn_in"],
            thin=manifest["thin"], priors=priors, spec=spec,
            unit_ids=tuple(manifest["unit_ids"]), sizes=tuple(manifest["sizes"]),
        ))
    return traces, manifest
