"""Command-line entry point.

Verbs: generate | train | evaluate | spectrum | selftest.  Exit codes:
0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (ConfigError, ExperimentConfig, cmd_evaluate,
                      cmd_generate, cmd_spectrum, cmd_train)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doacal",
        description="Direction-finding experiments with learned impairment "
                    "calibration")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, metavar="PATH",
                           help="experiment config JSON")
        p.add_argument("--out", default="out", metavar="DIR",
                       help="artifact directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's global seed")
        p.add_argument("--estimators", default=None, metavar="LIST",
                       help="comma-separated estimator subset")

    common(sub.add_parser("generate", help="write seeded datasets + manifest"))
    common(sub.add_parser("train", help="train checkpoints from datasets"))
    common(sub.add_parser("evaluate", help="run studies, emit report CSVs"))
    spectrum = sub.add_parser("spectrum", help="dump aligned spectra for one scene")
    common(spectrum)
    spectrum.add_argument("--angle", type=float, default=None,
                          help="scene direction in degrees (default from config)")
    common(sub.add_parser("selftest", help="run the quick invariant suite"),
           needs_config=False)
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _estimators(args):
    if args.estimators is None:
        return None
    return tuple(e.strip() for e in args.estimators.split(",") if e.strip())


def selftest() -> int:
    """Fast invariant checks; prints one line per suite."""
    import numpy as np

    from . import nn
    from .coarray import coarray_dbf, coarray_manifold, projection, \
        vectorize_covariance
    from .estimators import CovarianceMatrix, dbf_spectrum, sample_covariance
    from .reconstruction import SsrConfig, scg_solve
    from .estimators import SpatialSpectrum
    from .simulate import ArrayGeometry, DirectionGrid, manifold

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    geom = ArrayGeometry.half_wavelength(4, 4.85e9)
    grid = DirectionGrid.from_spacing(-60, 60, 1.0)
    a = manifold(grid, geom)
    check("manifold unit modulus", np.max(np.abs(np.abs(a) - 1.0)) < 1e-12)

    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
    r = x @ x.conj().T
    cov = CovarianceMatrix(0.5 * (r + r.conj().T), 8)
    at = coarray_manifold(grid, geom)
    lhs = coarray_dbf(vectorize_covariance(cov), at, grid).values
    rhs = dbf_spectrum(cov, grid, geom).values
    check("coarray/element-space beamformer identity",
          np.max(np.abs(lhs - rhs)) < 1e-10 * max(np.max(np.abs(rhs)), 1.0))

    proj = projection(at)
    b = rng.standard_normal(len(grid))
    cfg = SsrConfig(sparsity_step=0.0, cg_tol=1e-13,
                    max_cg_iterations=2 * len(grid))
    res = scg_solve(SpatialSpectrum(b, grid),
                    SpatialSpectrum(np.zeros(len(grid)), grid), proj, cfg)
    pt = proj.p + cfg.reg_weight * np.eye(len(grid))
    resid = np.linalg.norm(pt @ res.spectrum.values - b) / np.linalg.norm(b)
    check("conjugate-gradient solve residual", resid < 1e-8)

    xg = rng.standard_normal((2, 3, 12))
    wg = rng.standard_normal((4, 3, 5))
    gy = rng.standard_normal((2, 4, 12))
    gx, gw = nn.conv1d_backward(xg, wg, gy)
    h = 1e-6
    fi = 17
    orig = xg.flat[fi]
    xg.flat[fi] = orig + h
    lp = np.sum(gy * nn.conv1d_forward(xg, wg))
    xg.flat[fi] = orig - h
    lm = np.sum(gy * nn.conv1d_forward(xg, wg))
    xg.flat[fi] = orig
    fd = (lp - lm) / (2 * h)
    check("convolution gradient",
          abs(gx.flat[fi] - fd) / max(abs(fd), 1e-12) < 1e-4)

    print(f"{'OK' if failures == 0 else 'FAILED'}: "
          f"{4 - failures}/4 suites passed")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "selftest":
            return selftest()
        config = _load_config(args)
        out = Path(args.out)
        if args.verb == "generate":
            manifest = cmd_generate(config, out)
            print(f"wrote {len(manifest['files'])} dataset files to {out}/dataset")
        elif args.verb == "train":
            result = cmd_train(config, out)
            print(f"wrote {len(result['checkpoints'])} checkpoints to "
                  f"{out}/checkpoints")
        elif args.verb == "evaluate":
            headline = cmd_evaluate(config, out, estimators=_estimators(args))
            for key, values in headline.items():
                line = "  ".join(f"{name}={val:.3f}" for name, val in values.items())
                print(f"{key}: {line}")
        elif args.verb == "spectrum":
            path = cmd_spectrum(config, out, angle=args.angle,
                                estimators=_estimators(args))
            print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
