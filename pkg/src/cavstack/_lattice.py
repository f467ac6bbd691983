"""Forward dynamic programming over a bucketed two-dimensional state.

States are carried with their exact continuous values; buckets only decide
which partial trajectories compete.  Within a bucket the cheapest one
survives (ties go to the lower action rank, then the earlier parent).  With
vanishing bucket widths the search degenerates to exhaustive enumeration up
to floating-point identical states, which is what the oracle tests rely on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EXACT = 1e-7


@dataclass
class LatticeResult:
    actions: np.ndarray      # chosen action index per stage
    values: list             # per stage (x, y) exact states along the best path, length N+1
    cost: float
    aux: list                # per stage auxiliary arrays returned by expand, along the path


def _keys(x, y, qx, qy):
    kx = np.floor(x / (qx or _EXACT) + 0.5).astype(np.int64)
    ky = np.floor(y / (qy or _EXACT) + (0.5 if not qy else 0.0)).astype(np.int64)
    return kx, ky


def forward_dp(x0: float, y0: float, n_steps: int, expand, terminal, qx: float = 0.0,
               qy: float = 0.0, max_states: int | None = None, bound: float = np.inf,
               lower=None, stats: dict | None = None) -> LatticeResult | None:
    """Minimise the summed stage cost plus terminal cost.

    ``expand(k, x, y)`` gets 1-D state arrays and returns ``(x2, y2, cost, ok, aux)``
    with shape ``(n_states, n_actions)``; ``aux`` is a dict of equally shaped
    arrays recorded along the optimal path.  ``terminal(x, y)`` returns
    ``(cost, ok)`` arrays.  Returns ``None`` when nothing feasible survives.

    With a finite ``bound`` and ``lower(k, x, y)`` (an admissible bound on the
    cost still to come from stage ``k``), partial paths that cannot finish at
    or below ``bound`` are dropped.
    """
    x = np.array([float(x0)])
    y = np.array([float(y0)])
    cost = np.array([0.0])
    parents, acts, auxes, states = [], [], [], [(x, y)]
    for k in range(n_steps):
        x2, y2, c, ok, aux = expand(k, x, y)
        total = cost[:, None] + c
        ok = ok & np.isfinite(total)
        if not ok.any():
            return None
        par, act = np.nonzero(ok)
        nx, ny, tc = x2[ok], y2[ok], total[ok]
        kx, ky = _keys(nx, ny, qx, qy)
        key = (kx - kx.min()) * (int(ky.max() - ky.min()) + 1) + (ky - ky.min())
        # candidates come out of nonzero() in (parent, action) order; re-rank so
        # that equal costs resolve by action preference, then parent
        rank = np.lexsort((par, act))
        order = rank[np.argsort(tc[rank], kind="stable")]
        _, first = np.unique(key[order], return_index=True)
        keep = order[first]
        if lower is not None:
            lb = tc[keep] + lower(k + 1, nx[keep], ny[keep])
            live = lb <= bound + 1e-9 * max(1.0, abs(bound)) if np.isfinite(bound) else np.isfinite(lb)
            if stats is not None:
                stats["bound_pruned"] = stats.get("bound_pruned", 0) + int(np.sum(~live & np.isfinite(lb)))
            keep = keep[live]
            if keep.size == 0:
                return None
        if max_states is not None and keep.size > max_states:
            keep = keep[np.argsort(tc[keep], kind="stable")[:max_states]]
        x, y, cost = nx[keep], ny[keep], tc[keep]
        parents.append(par[keep])
        acts.append(act[keep])
        auxes.append({name: arr[ok][keep] for name, arr in aux.items()})
        states.append((x, y))
    tcost, tok = terminal(x, y)
    total = np.where(tok, cost + tcost, np.inf)
    if not np.isfinite(total).any():
        return None
    best = float(total.min())
    # among (near-)equal totals prefer the first in deterministic order
    i = int(np.flatnonzero(total <= best + 1e-12 * max(1.0, abs(best)))[0])
    path_idx = [i]
    for k in range(n_steps - 1, 0, -1):
        path_idx.append(int(parents[k][path_idx[-1]]))
    path_idx.reverse()
    actions = np.array([int(acts[k][path_idx[k]]) for k in range(n_steps)], dtype=int)
    values = [(float(states[0][0][0]), float(states[0][1][0]))]
    values += [(float(states[k + 1][0][path_idx[k]]), float(states[k + 1][1][path_idx[k]]))
               for k in range(n_steps)]
    aux_path = [{name: float(arr[path_idx[k]]) for name, arr in auxes[k].items()}
                for k in range(n_steps)]
    return LatticeResult(actions, values, best, aux_path)
