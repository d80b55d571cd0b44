"""Regenerates detector_reference.json: 50 synthetic top-10 feature vectors and the
optimum of mean logistic loss + reg * ||w||_1 (bias unpenalized) found by cvxpy."""

import json
import pathlib

import cvxpy as cp
import numpy as np

SEED = 20240611
N = 50
REGS = [0.0005, 0.001, 0.01, 0.1]


def features(rng, edited):
    # Edited prompts put more mass on the top token.
    top = rng.uniform(0.55, 0.95) if edited else rng.uniform(0.25, 0.75)
    rest = rng.dirichlet(np.ones(9)) * (1.0 - top) * rng.uniform(0.6, 1.0)
    return np.concatenate([[top], np.sort(rest)[::-1]])


def solve(x, y, reg):
    w = cp.Variable(x.shape[1])
    b = cp.Variable()
    z = x @ w + b
    loss = cp.sum(cp.logistic(z) - cp.multiply(y, z)) / x.shape[0]
    problem = cp.Problem(cp.Minimize(loss + reg * cp.norm1(w)))
    problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return problem.value, w.value, b.value


def main():
    rng = np.random.default_rng(SEED)
    y = np.array([i % 2 for i in range(N)], dtype=float)
    x = np.stack([features(rng, bool(v)) for v in y])
    out = {"instances": [], "solutions": []}
    for i in range(N):
        out["instances"].append({"fact-id": i, "edited": bool(y[i]), "features": [float(v) for v in x[i]]})
    for reg in REGS:
        value, w, b = solve(x, y, reg)
        out["solutions"].append({"reg-strength": reg, "objective": float(value),
                                 "weights": [float(v) for v in w], "bias": float(b)})
    path = pathlib.Path(__file__).with_name("detector_reference.json")
    path.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
