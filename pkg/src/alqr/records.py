"""Per-trial trajectory logs and their on-disk CSV form.

A TrialRecord holds everything needed to audit a finished trial: states,
the three input components, process noise, breaker flags, stage costs, and
the feedback gain in effect over each span of steps. The CSV schema is
``k,x...,u_ce...,u_cb...,u_pr...,w...,breaker,stage_cost`` with vector
fields expanded to one indexed column per component; floats are written as
their shortest round-tripping decimal form, so a load returns bit-identical
values. Gain history does not fit a flat per-step CSV row, so it travels in
a JSON sidecar next to each trial file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompleteLog

BREAKER_CLEAR = 0   # feedback passed through (u_cb = u_ce)
BREAKER_DWELL = 1   # dwell period running, feedback zeroed
BREAKER_TRIGGER = 2  # threshold exceeded this step, dwell counter set


@dataclass
class TrialRecord:
    """Completed trajectory of one trial.

    ``X[i]`` is the state at step i+1; ``x_final`` is the state the plant
    was left in after the last step. ``gain_segments`` lists
    ``(from_step, K)`` pairs: K is the feedback gain in effect from that
    step until the next segment starts.
    """

    trial_index: int
    seed: int
    X: np.ndarray            # (T, n)
    U_ce: np.ndarray         # (T, m)
    U_cb: np.ndarray         # (T, m)
    U_pr: np.ndarray         # (T, m)
    W: np.ndarray            # (T, n)
    breaker: np.ndarray      # (T,) int8 codes above
    stage_cost: np.ndarray   # (T,)
    x_final: np.ndarray      # (n,)
    gain_segments: list[tuple[int, np.ndarray]] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.U_ce.shape[1]

    def validate(self) -> None:
        T, n = self.X.shape
        m = self.U_ce.shape[1]
        for name, arr, shape in (("U_ce", self.U_ce, (T, m)),
                                 ("U_cb", self.U_cb, (T, m)),
                                 ("U_pr", self.U_pr, (T, m)),
                                 ("W", self.W, (T, n)),
                                 ("breaker", self.breaker, (T,)),
                                 ("stage_cost", self.stage_cost, (T,))):
            if arr is None or tuple(arr.shape) != shape:
                raise IncompleteLog(
                    f"trial {self.trial_index}: field {name} has shape "
                    f"{None if arr is None else arr.shape}, expected {shape}")
        # x_final may be absent on records parsed back from CSV; consumers
        # that need the horizon boundary raise IncompleteLog themselves
        if self.x_final is not None and tuple(self.x_final.shape) != (n,):
            raise IncompleteLog(
                f"trial {self.trial_index}: x_final has shape "
                f"{self.x_final.shape}, expected {(n,)}")

    def gain_at(self, k: int) -> np.ndarray:
        """Feedback gain in effect when the input at step k was computed."""
        if not self.gain_segments:
            raise IncompleteLog(
                f"trial {self.trial_index}: gain history absent")
        current = self.gain_segments[0][1]
        for start, K in self.gain_segments:
            if start > k:
                break
            current = K
        return current


def csv_header(n: int, m: int) -> str:
    cols = ["k"]
    cols += [f"x_{i+1}" for i in range(n)]
    for prefix in ("u_ce", "u_cb", "u_pr"):
        cols += [f"{prefix}_{i+1}" for i in range(m)]
    cols += [f"w_{i+1}" for i in range(n)]
    cols += ["breaker", "stage_cost"]
    return ",".join(cols)


def save_trial_csv(record: TrialRecord, path: str) -> None:
    record.validate()
    T = record.horizon
    lines = [csv_header(record.n, record.m)]
    X, U_ce, U_cb, U_pr, W = (record.X, record.U_ce, record.U_cb,
                              record.U_pr, record.W)
    breaker, stage = record.breaker, record.stage_cost
    # python-level floats repr to the shortest digits that round-trip exactly
    wide = np.hstack([X, U_ce, U_cb, U_pr, W]).tolist()
    stage_list = stage.tolist()
    for i in range(T):
        parts = [str(i + 1)]
        parts += [repr(v) for v in wide[i]]
        parts.append(str(int(breaker[i])))
        parts.append(repr(stage_list[i]))
        lines.append(",".join(parts))
    with open(path, "w") as f:
        f.write("\n".join(lines))
        f.write("\n")


def load_trial_csv(path: str, trial_index: int = -1,
                   seed: int = -1) -> TrialRecord:
    """Parse a trial CSV back into a TrialRecord.

    The final state and gain history are not part of the CSV; callers that
    need them reconstruct the former from the plant matrices and read the
    latter from the sidecar. Raises IncompleteLog naming the row on any
    structural or parse problem.
    """
    if not os.path.exists(path):
        raise IncompleteLog(f"trial log missing: {path}")
    with open(path) as f:
        header = f.readline().rstrip("\n")
        names = header.split(",")
        if names[0] != "k" or names[-1] != "stage_cost" or "breaker" not in names:
            raise IncompleteLog(f"{path}: unrecognized header {header!r}")
        n = sum(1 for c in names if c.startswith("x_"))
        m = sum(1 for c in names if c.startswith("u_ce_"))
        if n < 1 or m < 1 or names != csv_header(n, m).split(","):
            raise IncompleteLog(f"{path}: header does not match the trial schema")
        width = len(names)
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise IncompleteLog(
                    f"{path}: row {lineno} has {len(parts)} fields, "
                    f"expected {width}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise IncompleteLog(
                    f"{path}: row {lineno} failed to parse: {exc}") from None
    if not rows:
        raise IncompleteLog(f"{path}: no data rows")
    data = np.array(rows)
    ks = data[:, 0].astype(int)
    if not np.array_equal(ks, np.arange(1, len(rows) + 1)):
        raise IncompleteLog(f"{path}: step column is not contiguous from 1")
    offset = 1
    X = data[:, offset:offset + n]; offset += n
    U_ce = data[:, offset:offset + m]; offset += m
    U_cb = data[:, offset:offset + m]; offset += m
    U_pr = data[:, offset:offset + m]; offset += m
    W = data[:, offset:offset + n]; offset += n
    breaker_f = data[:, offset]
    stage = data[:, offset + 1]
    breaker = breaker_f.astype(np.int8)
    if not np.array_equal(breaker_f, breaker):
        raise IncompleteLog(f"{path}: breaker column contains non-integer codes")
    if np.any((breaker < 0) | (breaker > 2)):
        raise IncompleteLog(f"{path}: breaker codes outside 0..2")
    return TrialRecord(trial_index=trial_index, seed=seed, X=X, U_ce=U_ce,
                       U_cb=U_cb, U_pr=U_pr, W=W, breaker=breaker,
                       stage_cost=stage, x_final=None,  # type: ignore[arg-type]
                       gain_segments=[])


def save_gain_sidecar(record: TrialRecord, path: str) -> None:
    doc = {
        "trial": record.trial_index,
        "seed": record.seed,
        "gain_segments": [
            {"from_step": int(start), "K": K.tolist()}
            for start, K in record.gain_segments
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_gain_sidecar(path: str) -> list[tuple[int, np.ndarray]]:
    if not os.path.exists(path):
        raise IncompleteLog(f"gain sidecar missing: {path}")
    with open(path) as f:
        doc = json.load(f)
    segments = [(int(seg["from_step"]), np.array(seg["K"], dtype=float))
                for seg in doc.get("gain_segments", [])]
    if not segments:
        raise IncompleteLog(f"{path}: no gain segments recorded")
    return segments
