"""CSV persistence for trajectories, nuisance tables and estimator outputs."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from . import adaptive, estimators
from .density_ratio import DensityRatioTable
from .mdp import Trajectory
from .value_learning import DIFFERENTIAL, DISCOUNTED, QTable

TRAJECTORY_HEADER = ["t", "state", "action", "reward"]


def _write(path, header, rows, comment=None) -> None:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _read(path, header):
    text = Path(path).read_text(encoding="utf-8").splitlines()
    comments = [line[1:].strip() for line in text if line.startswith("#")]
    body = [line for line in text if line.strip() and not line.startswith("#")]
    rows = list(csv.reader(body))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return comments, rows[1:]


def write_trajectory(path, traj: Trajectory) -> None:
    """``t,state,action,reward`` rows, closed by ``T,state_T,,``."""
    if not traj.is_contiguous():
        raise ValueError("only contiguous trajectories have a row-per-step CSV form")
    rows = [[t, int(s), int(a), repr(float(r))] for t, s, a, r in
            zip(range(len(traj)), traj.states, traj.actions, traj.rewards)]
    rows.append([len(traj), traj.terminal_state, "", ""])
    _write(path, TRAJECTORY_HEADER, rows)


def read_trajectory(path) -> Trajectory:
    _, rows = _read(path, TRAJECTORY_HEADER)
    if len(rows) < 2:
        raise ValueError(f"{path}: a trajectory needs at least one step and the final state row")
    for i, row in enumerate(rows):
        if len(row) != 4 or int(row[0]) != i:
            raise ValueError(f"{path}: malformed row {i}")
    if rows[-1][2] or rows[-1][3]:
        raise ValueError(f"{path}: last row must carry the final state only")
    steps = rows[:-1]
    states = np.array([int(r[1]) for r in rows], dtype=np.int64)
    return Trajectory(
        states[:-1],
        np.array([int(r[2]) for r in steps], dtype=np.int64),
        np.array([float(r[3]) for r in steps]),
        states[1:].copy(),
    )


def _meta(comments) -> dict:
    meta = {}
    for comment in comments:
        for part in comment.split():
            if "=" in part:
                key, value = part.split("=", 1)
                meta[key] = value
    return meta


def write_qtable(path, q: QTable) -> None:
    comment = (f"kind={q.kind} gamma={'' if q.gamma is None else repr(q.gamma)} "
               f"theta_hat={'' if q.theta_hat is None else repr(q.theta_hat)} default={q.default!r}")
    rows = [[s, a, repr(float(q.values[s, a]))] for s in range(q.n_states) for a in (0, 1)]
    _write(path, ["state", "action", "value"], rows, comment)


def read_qtable(path) -> QTable:
    comments, rows = _read(path, ["state", "action", "value"])
    meta = _meta(comments)
    kind = meta.get("kind", DISCOUNTED)
    if kind not in (DISCOUNTED, DIFFERENTIAL):
        raise ValueError(f"{path}: unknown q-table kind {kind!r}")
    n = max((int(r[0]) for r in rows), default=-1) + 1
    values = np.zeros((n, 2))
    for s, a, v in rows:
        values[int(s), int(a)] = float(v)
    gamma = float(meta["gamma"]) if meta.get("gamma") else None
    theta = float(meta["theta_hat"]) if meta.get("theta_hat") else None
    return QTable(values, kind, gamma, theta, float(meta.get("default") or 0.0))


def write_omega(path, omega: DensityRatioTable) -> None:
    rows = [[s, repr(float(w))] for s, w in enumerate(omega.values)]
    _write(path, ["state", "omega"], rows, f"kind={omega.kind}")


def read_omega(path) -> DensityRatioTable:
    comments, rows = _read(path, ["state", "omega"])
    n = max((int(r[0]) for r in rows), default=-1) + 1
    values = np.zeros(n)
    for s, w in rows:
        values[int(s)] = float(w)
    return DensityRatioTable(values, _meta(comments).get("kind", "longrun"))


def write_estimator_results(path, results) -> None:
    _write(path, estimators.CSV_HEADER, [r.csv_row() for r in results])


def write_lepski(path, outcome: adaptive.LepskiOutcome) -> None:
    _write(path, adaptive.CSV_HEADER, outcome.csv_rows(),
           f"selected={outcome.selected_index} estimate={outcome.estimate!r}")
