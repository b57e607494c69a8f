"""Generate random block SDPs in SDPA format with reference optimal values.

Each instance has three blocks and five equality constraints. It is built
around a strictly feasible primal point and a strictly feasible dual point,
so an optimum exists. The reference value min <C, X> is computed with two
independent solvers (CVXOPT and Clarabel via CVXPY). An instance is written
only when the two agree to 1e-7.

Usage: python3 scripts/gen_sdp_fixtures.py crates/core/tests/fixtures/sdp
"""

import json
import pathlib
import sys

import cvxopt
import cvxpy as cp
import numpy as np

N_INSTANCES = 20
N_CONSTRAINTS = 5


def random_sym(rng, n):
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


def random_pd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.5 * np.eye(n)


def instance(rng):
    while True:
        sizes = [int(s) for s in rng.integers(1, 5, size=3)]
        diag = [bool(rng.random() < 0.3) for _ in sizes]
        free_dim = sum(n if d else n * (n + 1) // 2 for n, d in zip(sizes, diag))
        if free_dim >= 2 * N_CONSTRAINTS:
            break
    mats = []  # mats[i][b]: constraint i, block b
    for _ in range(N_CONSTRAINTS):
        row = []
        for n, d in zip(sizes, diag):
            m = np.diag(rng.normal(size=n)) if d else random_sym(rng, n)
            row.append(m)
        mats.append(row)
    x0 = [np.diag(rng.random(n) + 0.5) if d else random_pd(rng, n) for n, d in zip(sizes, diag)]
    z0 = [np.diag(rng.random(n) + 0.5) if d else random_pd(rng, n) for n, d in zip(sizes, diag)]
    y0 = rng.normal(size=N_CONSTRAINTS)
    b = np.array([sum(np.sum(a * x) for a, x in zip(row, x0)) for row in mats])
    c = [z + sum(y0[i] * mats[i][k] for i in range(N_CONSTRAINTS)) for k, z in enumerate(z0)]
    c = [np.diag(np.diag(m)) if d else m for m, d in zip(c, diag)]
    return sizes, diag, mats, b, c


def solve_cvxpy(sizes, diag, mats, b, c):
    xs = [cp.Variable((n, n), symmetric=True) for n in sizes]
    cons = [x >> 0 for x in xs]
    for k, d in enumerate(diag):
        if d:
            n = sizes[k]
            cons += [xs[k][i, j] == 0 for i in range(n) for j in range(n) if i != j]
    for i in range(N_CONSTRAINTS):
        cons.append(sum(cp.trace(mats[i][k] @ xs[k]) for k in range(3)) == b[i])
    obj = cp.Minimize(sum(cp.trace(c[k] @ xs[k]) for k in range(3)))
    prob = cp.Problem(obj, cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    assert prob.status == cp.OPTIMAL, prob.status
    return prob.value


def solve_cvxopt(sizes, diag, mats, b, c):
    # Dual route: minimize -b.y subject to sum_i y_i A_i <= C.
    cvxopt.solvers.options.update(show_progress=False, abstol=1e-9, reltol=1e-9, feastol=1e-9)
    gs, hs = [], []
    for k, n in enumerate(sizes):
        cols = [(mats[i][k]).flatten(order="F").tolist() for i in range(N_CONSTRAINTS)]
        gs.append(cvxopt.matrix(cols, (n * n, N_CONSTRAINTS)))
        hs.append(cvxopt.matrix(c[k].tolist(), (n, n)))
    sol = cvxopt.solvers.sdp(cvxopt.matrix(-b), Gs=gs, hs=hs)
    assert sol["status"] == "optimal", sol["status"]
    return -sol["primal objective"]


def write_sdpa(path, sizes, diag, mats, b, c):
    lines = ['"random fixture', str(N_CONSTRAINTS), str(len(sizes))]
    lines.append(" ".join(str(-n if d else n) for n, d in zip(sizes, diag)))
    lines.append(" ".join(repr(float(v)) for v in b))
    def emit(matno, blocks, sign):
        for k, (m, d) in enumerate(zip(blocks, diag)):
            n = m.shape[0]
            for i in range(n):
                for j in range(i, n):
                    if d and i != j:
                        continue
                    if m[i, j] != 0.0:
                        lines.append(f"{matno} {k + 1} {i + 1} {j + 1} {repr(float(sign * m[i, j]))}")
    emit(0, c, -1.0)
    for i in range(N_CONSTRAINTS):
        emit(i + 1, mats[i], 1.0)
    path.write_text("\n".join(lines) + "\n")


def main():
    out = pathlib.Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240611)
    expected = {}
    k = 0
    while k < N_INSTANCES:
        inst = instance(rng)
        try:
            v1 = solve_cvxpy(*inst)
            v2 = solve_cvxopt(*inst)
        except (AssertionError, ArithmeticError, ValueError) as err:
            print(f"reference solve failed ({err!r}), skipping")
            continue
        if abs(v1 - v2) > 1e-7 * (1 + abs(v1)):
            print(f"solvers disagree ({v1} vs {v2}), skipping")
            continue
        name = f"random_{k:02}.dat-s"
        write_sdpa(out / name, *inst)
        expected[name] = v2
        k += 1
    (out / "expected.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
