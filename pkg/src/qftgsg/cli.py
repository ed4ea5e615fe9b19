"""Command line entry point: one subcommand per experiment, JSON and CSV artifacts."""
from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import click
import numpy as np

from . import __version__
from .icm import (
    BlockCirculantMatrix,
    SparseBlockMatrix,
    block_bandwidths_dense,
    certify_positive_definite,
    default_threshold,
    defect_multiscale_icm,
    multiscale_icm_rows,
    scale_layout,
    theoretical_bandwidth,
    truncate,
)
from .pipeline import (
    fourier_gsg,
    lattice_continuum_overlap,
    lattice_params,
    scaling_report,
    sublinear_lowerbound_demo,
    wavelet_gsg,
)
from .stateprep import OneDGSpec, ineq_target, lattice_amplitudes, one_dg, one_dg_ineq, success_probability
from .udu import incomplete_udu
from .wavelets import cascade_overlaps, derivative_overlaps_1, lowpass_filter, second_overlaps

OUT_ENV = "QFTGSG_OUT"
DUMP_LIMIT = 1 << 16


# serialization

def _fmt(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    s = format(x, ".17g")
    return s if any(c in s for c in ".en") else s + ".0"


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _version(pkg: str) -> str:
    try:
        return version(pkg)
    except PackageNotFoundError:
        return "unknown"


class Run:
    """Collects artifacts for one invocation and writes the manifest."""

    def __init__(self, name: str, config: dict, out: str | None, as_json: bool):
        self.name = name
        self.config = config
        self.dir = Path(out or os.environ.get(OUT_ENV, ".")) / name
        self.as_json = as_json
        self.artifacts: list[str] = []
        self.t0 = time.perf_counter()
        self.dir.mkdir(parents=True, exist_ok=True)

    def write_json(self, fname: str, obj) -> Path:
        path = self.dir / fname
        path.write_text(dumps(obj) + "\n")
        self.artifacts.append(fname)
        return path

    def write_csv(self, fname: str, header, rows) -> Path:
        path = self.dir / fname
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])
        self.artifacts.append(fname)
        return path

    def write_lines(self, fname: str, lines) -> Path:
        path = self.dir / fname
        path.write_text("".join(line + "\n" for line in lines))
        self.artifacts.append(fname)
        return path

    def finish(self, summary) -> None:
        manifest = {
            "subcommand": self.name,
            "config": self.config,
            "versions": {"qftgsg": __version__, "python": platform.python_version(),
                         **{pkg: _version(pkg) for pkg in ("numpy", "scipy", "mpmath", "click")}},
            "wall_clock_s": time.perf_counter() - self.t0,
            "artifacts": self.artifacts,
        }
        (self.dir / "manifest.json").write_text(dumps(manifest) + "\n")
        if self.as_json:
            click.echo(dumps(summary))
        else:
            click.echo(f"{self.name}: wrote {len(self.artifacts)} artifacts to {self.dir}")


def _fail(exc: BaseException, name: str):
    err = {"error": type(exc).__name__, "message": str(exc), "subcommand": name}
    click.echo(dumps(err), err=True)
    sys.exit(1)


def guarded(fn):
    """Map module failures to exit status 1 with a JSON error record on stderr."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001
            _fail(exc, fn.__name__.replace("_", "-"))
    return wrapper


# validation

def _positive(ctx, param, value):
    if value is not None and value <= 0:
        raise click.BadParameter("must be > 0")
    return value


def _unit_open(ctx, param, value):
    if value is not None and not 0 < value < 1:
        raise click.BadParameter("must lie in (0, 1)")
    return value


def _check_N(K: int, N: int, power_of_two: bool = True):
    if N < 2 * (2 * K - 1):
        raise click.BadParameter(f"N={N} is below 2(2K-1)={2 * (2 * K - 1)}", param_hint="--N")
    if power_of_two and N & (N - 1):
        raise click.BadParameter("N must be a power of two", param_hint="--N")


def _grid(spec: str, log: bool) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) == 2:
        a, b = int(parts[0]), int(parts[1])
        return np.arange(a, b + 1)
    if len(parts) == 3:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        return np.geomspace(a, b, n) if log else np.linspace(a, b, n)
    raise click.BadParameter(f"grid {spec!r} must be a:b or a:b:n")


def _pair(spec: str | None):
    if spec is None:
        return None
    try:
        a, b = spec.split(",")
        return int(a), float(b)
    except ValueError:
        raise click.BadParameter("expected site,strength") from None


def _blocks_json(blocks: dict) -> dict:
    return {f"{k}:{r}:{c}": row for (k, r, c), row in blocks.items()}


def _blocks_from_json(obj: dict) -> dict:
    out = {}
    for key, row in obj.items():
        k, r, c = key.split(":")
        out[(k, int(r), int(c))] = np.asarray(row, dtype=float)
    return out


def _raster(A: np.ndarray):
    i, j = np.nonzero(A)
    return ([int(a), int(b), float(A[a, b])] for a, b in zip(i, j))


common = [
    click.option("--out", type=click.Path(file_okay=False), default=None,
                 help=f"Output directory (default ${OUT_ENV} or the working directory)."),
    click.option("--json", "as_json", is_flag=True, help="Print the summary as JSON on stdout."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Free scalar field ground states: wavelet ICMs, UDU factors and simulated state preparation."""


@main.command()
@click.option("--K", "K", type=click.IntRange(1, 30), required=True)
@click.option("--bits", type=click.IntRange(64), default=96, show_default=True)
@with_common
@guarded
def filters(K, bits, out, as_json):
    """Daubechies low- and high-pass filters with their defining-relation residuals."""
    run = Run("filters", {"K": K, "bits": bits}, out, as_json)
    fp = lowpass_filter(K, bits)
    summary = {"K": K, "h": fp.h, "g": fp.g, "residuals": fp.residuals()}
    run.write_json("filters.json", summary)
    run.finish(summary)


@main.command()
@click.option("--K", "K", type=click.IntRange(2, 30), required=True)
@click.option("--order", type=click.Choice(["1", "2"]), default="2", show_default=True)
@click.option("--cascade/--no-cascade", default=False, help="Also evaluate by cascade quadrature.")
@with_common
@guarded
def overlaps(K, order, cascade, out, as_json):
    """Derivative overlaps Delta_l and their sum rules."""
    run = Run("overlaps", {"K": K, "order": int(order), "cascade": cascade}, out, as_json)
    ov = second_overlaps(K) if order == "2" else derivative_overlaps_1(K)
    ells = ov.ells
    summary = {"K": K, "order": int(order), "ell": ells, "values": ov.values,
               "second_moment": float(np.sum(ells ** 2 * ov.values)), "sum": float(np.sum(ov.values))}
    if cascade:
        summary["cascade"] = cascade_overlaps(K, int(order)).values
    run.write_json("overlaps.json", summary)
    run.finish(summary)


def _icm_parts(K, m0, N, eps_vac, eps_th, defect):
    ov = second_overlaps(K)
    icm = multiscale_icm_rows(K, m0, N, ov)
    eps = eps_th if eps_th is not None else default_threshold(m0, eps_vac, N)
    if defect is None:
        sp = truncate(icm, eps)
        A = sp.dense()
        bands = sp.bandwidths
        blocks = sp.blocks
        w = sp.w
    else:
        full = defect_multiscale_icm(K, m0, N, ov, *defect)
        A = np.where(np.abs(full) >= eps, full, 0.0)
        bands = block_bandwidths_dense(full, K, N, eps)
        blocks, w = None, None
    return icm, eps, A, bands, blocks, w


@main.command()
@click.option("--K", "K", type=click.IntRange(2, 30), required=True)
@click.option("--m0", type=float, required=True, callback=_positive)
@click.option("--N", "N", type=int, required=True)
@click.option("--eps-vac", type=float, default=0.1, show_default=True, callback=_unit_open)
@click.option("--eps-th", type=float, default=None, callback=_positive, help="Override the threshold.")
@click.option("--defect", default=None, help="Point mass defect as site,strength.")
@click.option("--dense/--no-dense", default=False, help="Also write the dense matrix as CSV.")
@with_common
@guarded
def icm(K, m0, N, eps_vac, eps_th, defect, dense, out, as_json):
    """Multi-scale ICM block rows, sparsity raster and summary."""
    _check_N(K, N)
    defect = _pair(defect)
    run = Run("icm", {"K": K, "m0": m0, "N": N, "eps_vac": eps_vac, "eps_th": eps_th, "defect": defect},
              out, as_json)
    base, eps, A, bands, blocks, w = _icm_parts(K, m0, N, eps_vac, eps_th, defect)
    s0, k, _ = scale_layout(K, N)
    if blocks is not None:
        run.write_json("icm.json", {"N": N, "K": K, "s0": s0, "k": k, "eps_th": eps, "w": w,
                                    "blocks": _blocks_json(blocks)})
    if dense:
        run.write_csv("icm_dense.csv", [f"c{j}" for j in range(N)], A.tolist())
    run.write_csv("raster.csv", ["i", "j", "value"], _raster(A))
    summary = {"nnz": int(np.count_nonzero(A)), "bandwidths": {str(r): b for r, b in bands.items()},
               "w_theory": theoretical_bandwidth(K, m0, N, eps_vac), "eps_th": eps,
               "smallest_eigenvalue_estimate": certify_positive_definite(A)}
    run.write_json("summary.json", summary)
    run.finish(summary)


@main.command()
@click.option("--in", "src", type=click.Path(exists=True, dir_okay=False), required=True,
              help="icm.json written by the icm subcommand.")
@with_common
@guarded
def udu(src, out, as_json):
    """Incomplete UDU factors of a stored truncated ICM."""
    data = json.loads(Path(src).read_text())
    run = Run("udu", {"in": str(src)}, out, as_json)
    base = BlockCirculantMatrix(N=data["N"], K=data["K"], s0=data["s0"], k=data["k"],
                                blocks=_blocks_from_json(data["blocks"]))
    sp = SparseBlockMatrix(base=base, eps_th=data["eps_th"], w=data["w"], blocks=dict(base.blocks))
    f = incomplete_udu(sp)
    result = {"N": f.N, "K": f.K, "s0": f.s0, "k": f.k, "w": f.w, "d": f.d,
              "shears": {f"{kd}:{r}:{c}": np.asarray(S).ravel() for (kd, r, c), S in f.shears.items()},
              "nnz": f.nnz(), "steps": f.steps}
    run.write_json("udu.json", result)
    summary = {"N": f.N, "w": f.w, "nnz": f.nnz(), "steps": f.steps, "d_ratio": float(f.d.max() / f.d.min())}
    run.finish(summary)


@main.command("prepare-1dg")
@click.option("--sigma", type=float, required=True, callback=_positive, help="Standard deviation of |psi|^2.")
@click.option("--m", type=click.IntRange(1, 20), default=None, help="Lattice exponent (default from --eps).")
@click.option("--p", type=click.IntRange(1, 56), default=None)
@click.option("--t", type=click.IntRange(1, 56), default=None)
@click.option("--eps", type=float, default=0.01, show_default=True, callback=_unit_open)
@click.option("--method", type=click.Choice(["recursive", "ineq"]), default="recursive", show_default=True)
@click.option("--mode", type=click.Choice(["real", "fixed"]), default="real", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@with_common
@guarded
def prepare_1dg(sigma, m, p, t, eps, method, mode, seed, out, as_json):
    """Simulate one 1D Gaussian preparation and report its fidelity."""
    lp = lattice_params(sigma, eps)
    m = m or lp.m
    run = Run("prepare-1dg", {"sigma": sigma, "m": m, "p": p, "t": t, "eps": eps, "method": method,
                              "mode": mode, "seed": seed}, out, as_json)
    spec = OneDGSpec(sigma_t=sigma / lp.delta, delta=lp.delta, m=m, p=p, t=t if method == "recursive" else None)
    attempts = prob = None
    if method == "recursive":
        st = one_dg(spec, mode=mode)
        j, target = lattice_amplitudes(spec.sigma_t, m)
    else:
        st, attempts, prob = one_dg_ineq(spec, t=t, seed=seed, mode=mode)
        j, target = ineq_target(spec.sigma_t, m, t if t is not None else max(p or 0, 4))
    lut = dict(zip(j.tolist(), target))
    js = np.rint(st.col("out") / lp.delta).astype(int)
    got = np.array([lut.get(int(v), 0.0) for v in js])
    run.write_lines("state.jsonl", st.dump_lines())
    summary = {"delta": lp.delta, "m": m, "qubits": lp.qubits, "sigma_t": spec.sigma_t,
               "max_amp_diff": float(np.max(np.abs(st.amps - got))),
               "continuum_overlap": lattice_continuum_overlap(sigma, lp.delta, m),
               "attempts": attempts, "success_probability": prob, "opcounts": st.counter.report()}
    run.write_json("fidelity_report.json", summary)
    run.finish(summary)


@main.command("success-prob")
@click.option("--sigma-grid", default="1:64:16", show_default=True, help="a:b:n, log-spaced.")
@click.option("--m-grid", default="4:12", show_default=True, help="a:b, inclusive.")
@click.option("--t", type=click.IntRange(1, 60), default=16, show_default=True)
@with_common
@guarded
def success_prob(sigma_grid, m_grid, t, out, as_json):
    """Acceptance probability of the inequality-testing preparation over a grid."""
    sig = _grid(sigma_grid, log=True)
    ms = _grid(m_grid, log=False).astype(int)
    if ms.min() < 2:
        raise click.BadParameter("m >= 2", param_hint="--m-grid")
    run = Run("success-prob", {"sigma_grid": sigma_grid, "m_grid": m_grid, "t": t}, out, as_json)
    rows = [(float(s), int(m), success_probability(float(s), int(m), t)) for s in sig for m in ms]
    run.write_csv("success_probability.csv", ["sigma", "m", "probability"], rows)
    summary = {"min_probability": min(r[2] for r in rows), "points": len(rows)}
    run.finish(summary)


@main.command()
@click.option("--method", type=click.Choice(["fourier", "wavelet"]), required=True)
@click.option("--K", "K", type=click.IntRange(2, 30), required=True)
@click.option("--m0", type=float, required=True, callback=_positive)
@click.option("--N", "N", type=int, required=True)
@click.option("--eps-vac", type=float, required=True, callback=_unit_open)
@click.option("--defect", default=None, help="site,strength (wavelet only).")
@click.option("--m", type=click.IntRange(1, 20), default=None, help="Fix the per-mode lattice exponent.")
@click.option("--m-cap", type=click.IntRange(1, 20), default=3, show_default=True)
@click.option("--prep", type=click.Choice(["recursive", "ineq"]), default="recursive", show_default=True)
@click.option("--mode", type=click.Choice(["real", "fixed"]), default="real", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@with_common
@guarded
def gsg(method, K, m0, N, eps_vac, defect, m, m_cap, prep, mode, seed, out, as_json):
    """End-to-end ground-state generation on the simulator."""
    _check_N(K, N)
    defect = _pair(defect)
    if defect is not None and method != "wavelet":
        raise click.BadParameter("--defect needs --method wavelet")
    run = Run("gsg", {"method": method, "K": K, "m0": m0, "N": N, "eps_vac": eps_vac, "defect": defect,
                      "m": m, "m_cap": m_cap, "prep": prep, "mode": mode, "seed": seed}, out, as_json)
    if method == "fourier":
        res = fourier_gsg(K, m0, N, eps_vac, mode, m=m, m_cap=m_cap, prep=prep, seed=seed)
    else:
        res = wavelet_gsg(K, m0, N, eps_vac, mode, m=m, m_cap=m_cap, defect=defect, prep=prep, seed=seed)
        f = res.extras["udu"]
        run.write_json("udu.json", {"N": f.N, "K": f.K, "s0": f.s0, "k": f.k, "w": f.w, "d": f.d,
                                    "shears": {f"{kd}:{r}:{c}": np.asarray(S).ravel()
                                               for (kd, r, c), S in f.shears.items()}})
        if defect is None:
            sp = res.extras["sparse"]
            run.write_json("icm.json", {"N": N, "K": K, "s0": sp.base.s0, "k": sp.base.k, "eps_th": sp.eps_th,
                                        "w": sp.w, "blocks": _blocks_json(sp.blocks)})
    if res.state.size <= DUMP_LIMIT:
        run.write_lines("state.jsonl", res.state.dump_lines())
    run.write_json("fidelity_report.json", res.report)
    run.write_json("opcounts.json", res.counts)
    keys = ("oracle_maxdiff", "overlap_exact", "overlap_truncated", "success_attempts", "support")
    run.finish({k: res.report.get(k) for k in keys})


@main.command()
@click.option("--K", "K", type=click.IntRange(2, 30), default=3, show_default=True)
@click.option("--m0", type=float, default=1.0, show_default=True, callback=_positive)
@click.option("--N", "N", type=int, default=2560, show_default=True)
@click.option("--eps-th", type=float, default=1e-8, show_default=True, callback=_positive)
@with_common
@guarded
def sparsity(K, m0, N, eps_th, out, as_json):
    """Nonzero raster of the thresholded multi-scale ICM."""
    _check_N(K, N, power_of_two=False)
    run = Run("sparsity", {"K": K, "m0": m0, "N": N, "eps_th": eps_th}, out, as_json)
    sp = truncate(multiscale_icm_rows(K, m0, N, second_overlaps(K)), eps_th)
    A = sp.dense()
    run.write_csv("raster.csv", ["i", "j", "value"], _raster(A))
    eps_vac = eps_th * N ** 1.5 / m0
    summary = {"nnz": int(np.count_nonzero(A)), "nnz_per_NlogN": np.count_nonzero(A) / (N * math.log2(N)),
               "bandwidths": {str(r): b for r, b in sp.bandwidths.items()},
               "w_theory": theoretical_bandwidth(K, m0, N, min(eps_vac, 0.999999)),
               "smallest_eigenvalue": certify_positive_definite(A)}
    run.write_json("summary.json", summary)
    run.finish(summary)


@main.command("defect-sweep")
@click.option("--K", "K", type=click.IntRange(2, 30), default=3, show_default=True)
@click.option("--m0", type=float, default=1.0, show_default=True, callback=_positive)
@click.option("--N", "N", type=int, default=128, show_default=True)
@click.option("--eps-vac", type=float, default=0.05, show_default=True, callback=_unit_open)
@click.option("--site", type=int, default=None, help="Defect site (default N/2).")
@click.option("--strengths", default="0,1,10,100", show_default=True, help="Comma-separated multiples of m0.")
@with_common
@guarded
def defect_sweep(K, m0, N, eps_vac, site, strengths, out, as_json):
    """Diagonal-block bandwidths with and without a point mass defect."""
    _check_N(K, N)
    site = N // 2 if site is None else site
    gs = [float(g) for g in strengths.split(",")]
    run = Run("defect-sweep", {"K": K, "m0": m0, "N": N, "eps_vac": eps_vac, "site": site, "strengths": gs},
              out, as_json)
    ov = second_overlaps(K)
    eps = default_threshold(m0, eps_vac / 2, N)
    free = block_bandwidths_dense(multiscale_icm_rows(K, m0, N, ov).dense(), K, N, eps)
    rows = []
    for g in sorted(gs):
        bw = block_bandwidths_dense(defect_multiscale_icm(K, m0, N, ov, site, g * m0), K, N, eps)
        rows += [(g, r, bw[r], free[r]) for r in sorted(bw)]
    run.write_csv("defect_sweep.csv", ["strength", "scale", "bandwidth", "bandwidth_free"], rows)
    summary = {"max_shift": max((abs(r[2] - r[3]) for r in rows), default=0), "eps_th": eps}
    run.finish(summary)


@main.command()
@click.option("--K", "K", type=click.IntRange(2, 30), default=3, show_default=True)
@click.option("--m0", type=float, default=1.0, show_default=True, callback=_positive)
@click.option("--eps-vac", type=float, default=0.1, show_default=True, callback=_unit_open)
@click.option("--N-list", "N_list", default="64,128,256,512,1024", show_default=True)
@with_common
@guarded
def scaling(K, m0, eps_vac, N_list, out, as_json):
    """Operation counts over a list of N."""
    Ns = [int(n) for n in N_list.split(",")]
    for n in Ns:
        _check_N(K, n)
    run = Run("scaling", {"K": K, "m0": m0, "eps_vac": eps_vac, "N_list": Ns}, out, as_json)
    rows = scaling_report(K, m0, eps_vac, Ns)
    cols = ["N", "qfht", "qst", "nnz_shears", "udu_steps", "w", "bound", "qfht_ratio", "qst_ratio", "udu_steps_ratio"]
    run.write_csv("scaling.csv", cols, [[r.get(c, "") for c in cols] for r in rows])
    run.finish(rows)


@main.command()
@click.option("--m0-list", default="1,10,100", show_default=True)
@click.option("--N", "N", type=int, default=4096, show_default=True)
@click.option("--delta", type=float, default=1.0, show_default=True, callback=_positive)
@with_common
@guarded
def lowerbound(m0_list, N, delta, out, as_json):
    """Fidelity of untouched modes with the all-zero state."""
    m0s = [float(v) for v in m0_list.split(",")]
    run = Run("lowerbound", {"m0_list": m0s, "N": N, "delta": delta}, out, as_json)
    rows = [sublinear_lowerbound_demo(m0, N, delta) for m0 in m0s]
    run.write_json("lowerbound.json", rows)
    run.finish([{k: r[k] for k in ("m0", "F_1DG", "bound", "holds", "hypothesis_sigma2_ge_delta")} for r in rows])


if __name__ == "__main__":
    main()
