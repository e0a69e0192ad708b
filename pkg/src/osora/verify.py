"""Self-check suites behind the `osora verify` command.

Each suite returns CheckResult rows with the worst observed error and the
gate it was held to; the CLI prints one line per row and exits nonzero if
any gate fails. The gates mirror the library's documented tolerances.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .accounting import count_trainable, param_ratio
from .adapters import (
    METHODS,
    AdapterMethod,
    AdapterState,
    build_adapter,
    forward,
    load_trainable,
    merge,
    trainable_vector,
)
from .gradients import finite_diff, gradient
from .linalg import jacobi_svd, random_matrix

SCOPES = ("svd", "grad", "merge", "persist", "all")


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_err: float
    threshold: float
    passed: bool


def _result(name: str, max_err: float, threshold: float) -> CheckResult:
    return CheckResult(name=name, max_err=max_err, threshold=threshold, passed=max_err <= threshold)


def _default_method(tag: str, rank: int) -> AdapterMethod:
    return AdapterMethod(tag=tag, rank=rank)


def _randomized_state(tag: str, d: int, k: int, rank: int, seed: int) -> tuple[AdapterState, np.ndarray]:
    w0 = random_matrix(d, k, (seed, 100), "gaussian")
    state = build_adapter(w0, _default_method(tag, rank), seed)
    theta = trainable_vector(state)
    theta = theta + 0.1 * np.random.default_rng((seed, 101)).standard_normal(theta.size)
    load_trainable(state, theta)
    return state, w0


def verify_svd(seed: int = 0) -> list[CheckResult]:
    shapes = [(16, 12), (12, 16), (24, 24), (33, 7), (40, 28)]
    worst_recon, worst_ortho = 0.0, 0.0
    for i, (d, k) in enumerate(shapes):
        w = random_matrix(d, k, (seed, 200 + i), "gaussian")
        u, s, v = jacobi_svd(w)
        fro = float(np.sqrt((w * w).sum()))
        worst_recon = max(worst_recon, float(np.sqrt((((u * s) @ v.T - w) ** 2).sum())) / fro)
        m = min(d, k)
        worst_ortho = max(
            worst_ortho,
            float(np.abs(u.T @ u - np.eye(m)).max()),
            float(np.abs(v.T @ v - np.eye(m)).max()),
        )

    # Known spectrum: assemble from orthogonal factors of seeded matrices.
    q1 = jacobi_svd(random_matrix(20, 20, (seed, 210), "gaussian"))[0]
    q2 = jacobi_svd(random_matrix(14, 14, (seed, 211), "gaussian"))[0]
    sigma = np.linspace(2.0, 0.5, 14)
    w = (q1[:, :14] * sigma) @ q2.T
    s_hat = jacobi_svd(w)[1]
    spectrum_err = float(np.abs(s_hat - sigma).max() / sigma.max())

    w = random_matrix(18, 11, (seed, 212), "gaussian")
    a = jacobi_svd(w)
    b = jacobi_svd(w.copy())
    identical = all(x.tobytes() == y.tobytes() for x, y in zip(a, b))

    return [
        _result("svd.reconstruction", worst_recon, 1e-12),
        _result("svd.orthonormality", worst_ortho, 1e-10),
        _result("svd.known_spectrum", spectrum_err, 1e-8),
        _result("svd.determinism", 0.0 if identical else 1.0, 0.0),
    ]


def verify_grad(seed: int = 0) -> list[CheckResult]:
    worst = 0.0
    for i, tag in enumerate(METHODS):
        state, _ = _randomized_state(tag, 8, 6, 2, seed + i)
        x = np.random.default_rng((seed, 300 + i)).standard_normal((6, 10))
        y = np.random.default_rng((seed, 310 + i)).standard_normal((8, 10))
        analytic = gradient(state, x, y).flat()
        numeric = finite_diff(state, x, y).flat()
        denom = 1.0 + float(np.abs(numeric).max())
        worst = max(worst, float(np.abs(analytic - numeric).max()) / denom)
    return [_result("grad.analytic_vs_fd", worst, 1e-6)]


def _perturbed_copy(state: AdapterState) -> AdapterState:
    frozen = {name: arr.copy() for name, arr in state.frozen.items()}
    target = next(name for name in ("u_r", "w0", "w0_res") if name in frozen)
    frozen[target][0, 0] += 1e-3
    for arr in frozen.values():
        arr.setflags(write=False)
    return AdapterState(
        method=state.method,
        d=state.d,
        k=state.k,
        seed=state.seed,
        frozen=frozen,
        trainable={n: a.copy() for n, a in state.trainable.items()},
        w0_digest=state.w0_digest,
    )


def verify_merge(seed: int = 0, inject_fault: bool = False) -> list[CheckResult]:
    worst_init, worst_equiv = 0.0, 0.0
    rng = np.random.default_rng((seed, 400))
    for i, tag in enumerate(METHODS):
        w0 = random_matrix(10, 8, (seed, 410 + i), "gaussian")
        state = build_adapter(w0, _default_method(tag, 3), seed + i)
        for _ in range(20):
            x = rng.standard_normal(8)
            ref = w0 @ x
            err = float(np.abs(forward(state, x) - ref).max()) / (1.0 + float(np.abs(ref).max()))
            worst_init = max(worst_init, err)

        state, _ = _randomized_state(tag, 10, 8, 3, seed + i)
        merged_source = _perturbed_copy(state) if inject_fault else state
        w = merge(merged_source)
        for _ in range(20):
            x = rng.standard_normal(8)
            got = forward(state, x)
            err = float(np.abs(w @ x - got).max()) / (1.0 + float(np.abs(got).max()))
            worst_equiv = max(worst_equiv, err)
    return [
        _result("merge.init_identity", worst_init, 1e-12),
        _result("merge.equivalence", worst_equiv, 1e-10),
    ]


def verify_persist(seed: int = 0) -> list[CheckResult]:
    bitwise_ok = True
    size_ok = True
    with tempfile.TemporaryDirectory() as tmp:
        for i, tag in enumerate(METHODS):
            state, w0 = _randomized_state(tag, 9, 7, 2, seed + i)
            path = Path(tmp) / f"{tag}.ckpt"
            checkpoint.save(state, path)
            expected = checkpoint.HEADER_SIZE + 8 * count_trainable(tag, 9, 7, 2)
            size_ok = size_ok and path.stat().st_size == expected
            loaded = checkpoint.load(path, w0)
            x = np.random.default_rng((seed, 510 + i)).standard_normal(7)
            bitwise_ok = bitwise_ok and forward(state, x).tobytes() == forward(loaded, x).tobytes()

    d, k, r = 12, 9, 3
    osora_payload = 8 * count_trainable("osora", d, k, r)
    lora_payload = 8 * count_trainable("lora", d, k, r)
    ratio_ok = osora_payload / lora_payload == param_ratio(d, k, r)
    return [
        _result("persist.roundtrip_bitwise", 0.0 if bitwise_ok else 1.0, 0.0),
        _result("persist.payload_size", 0.0 if size_ok else 1.0, 0.0),
        _result("persist.storage_ratio", 0.0 if ratio_ok else 1.0, 0.0),
    ]


def run_scope(scope: str, seed: int = 0, inject_fault: bool = False) -> list[CheckResult]:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    results = []
    if scope in ("svd", "all"):
        results += verify_svd(seed)
    if scope in ("grad", "all"):
        results += verify_grad(seed)
    if scope in ("merge", "all"):
        results += verify_merge(seed, inject_fault=inject_fault)
    if scope in ("persist", "all"):
        results += verify_persist(seed)
    return results
