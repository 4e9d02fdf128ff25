"""Operation-count model, timing sweeps and hyperparameter sweeps."""
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .clustering import (
    HIERARCHICAL_MAX_N,
    KMeansConfig,
    MultistageConfig,
    hierarchical_cluster,
    multistage_cluster,
    simple_kmeans,
)
from .core import TimeSeriesMatrix, make_rng
from .errors import InvalidInput, ResourceLimit
from .metrics import compare_parcellations, intra_cluster_correlation
from .preprocess import gaussian_smooth, vectorize
from .synth import white_noise_matrix
from .volio import MaskVolume

ALGORITHMS = ("simple", "multistage", "hier")


def predicted_ops(algorithm, n, k=2, replicates=5, max_iters=100, ns=7):
    """Worst-case count of distance evaluations.

    simple: R*M*k*N; hier: N(N-1)/2; multistage: 2*NS*R*M*N (NS stacked
    two-way k-means passes over all N rows).
    """
    for name, v in (("n", n), ("k", k), ("replicates", replicates), ("max_iters", max_iters), ("ns", ns)):
        if int(v) < 1:
            raise InvalidInput(f"{name} must be positive")
    if algorithm == "simple":
        return replicates * max_iters * k * n
    if algorithm == "hier":
        return n * (n - 1) // 2
    if algorithm == "multistage":
        return 2 * ns * replicates * max_iters * n
    raise InvalidInput(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def crossover_n(ns=7, replicates=5, max_iters=100):
    """Smallest N at which the multistage bound drops below the pairwise-matrix count."""
    return 4 * ns * replicates * max_iters + 2


@dataclass
class BenchResult:
    algorithm: str
    n: int
    params: dict
    distance_ops: int
    predicted_ops: int
    wall_seconds: float
    repeats: int

    def row(self):
        return [self.algorithm, self.n, self.wall_seconds, self.distance_ops]


def latent_series(n, t=100, n_latent=16, noise=0.5, seed=0):
    """Rows are one of ``n_latent`` random series plus white noise of std ``noise``.

    With more tight groups than clusters, Lloyd boundaries fall between
    groups and the iteration count stays flat in N. With ``n_latent == k``
    a seeding miss leaves two centroids inside one blob, and the boundary
    between them takes a number of iterations that grows with the blob.
    """
    rng = make_rng(seed, 4, n)
    gens = make_rng(seed, 5).standard_normal((n_latent, t))
    return gens[rng.integers(n_latent, size=n)] + noise * rng.standard_normal((n, t))


def _run(algorithm, x, k, ms_cfg, km_cfg):
    if algorithm == "simple":
        return simple_kmeans(x, k, km_cfg).distance_ops
    if algorithm == "multistage":
        return multistage_cluster(x, ms_cfg).distance_ops
    return hierarchical_cluster(x, k).matrix_ops


def time_algorithm(algorithm, x, k=8, ms_cfg=None, km_cfg=None, repeats=20):
    """Mean wall time of ``repeats`` runs after one discarded warm-up run."""
    ms_cfg = ms_cfg or MultistageConfig()
    km_cfg = km_cfg or KMeansConfig(k)
    ops = _run(algorithm, x, k, ms_cfg, km_cfg)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        _run(algorithm, x, k, ms_cfg, km_cfg)
        times.append(time.perf_counter() - start)
    if algorithm == "simple":
        params = {"k": k, "replicates": km_cfg.replicates, "max_iters": km_cfg.max_iters}
        pred = predicted_ops("simple", x.n, k, km_cfg.replicates, km_cfg.max_iters)
    elif algorithm == "multistage":
        params = {"ct": ms_cfg.ct, "ns": ms_cfg.ns, "replicates": ms_cfg.replicates,
                  "max_iters": ms_cfg.max_iters}
        pred = predicted_ops("multistage", x.n, 2, ms_cfg.replicates, ms_cfg.max_iters, ms_cfg.ns)
    else:
        params = {"k": k}
        pred = predicted_ops("hier", x.n)
    return BenchResult(algorithm, x.n, params, int(ops), int(pred), float(np.mean(times)), repeats)


def loglog_slope(ns, seconds):
    """Least-squares slope of log(time) against log(N)."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(seconds, float)), 1)[0])


def run_scaling_sweep(sizes, algorithms=ALGORITHMS, t=100, k=8, repeats=20, data="latent",
                      seed=0, ms_cfg=None, hier_max_n=HIERARCHICAL_MAX_N, n_latent=16, noise=0.5):
    """Time each algorithm over ``sizes``; returns ``(results, slopes, notes)``."""
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes) or len(sizes) < 4 or sizes[-1] < 8 * sizes[0]:
        raise InvalidInput("sizes must be ascending, at least 4 points spanning >= 8x")
    results, notes = [], []
    for n in sizes:
        raw = latent_series(n, t, n_latent, noise, seed) if data == "latent" else white_noise_matrix(n, t, seed)
        x = TimeSeriesMatrix.from_array(raw)
        for algo in algorithms:
            if algo == "hier" and n > hier_max_n:
                notes.append(f"hier skipped at N={n}: exceeds guard {hier_max_n}")
                continue
            try:
                results.append(time_algorithm(algo, x, k, ms_cfg, None, repeats))
            except ResourceLimit as exc:
                notes.append(f"{algo} skipped at N={n}: {exc}")
    slopes = {}
    for algo in algorithms:
        rows = [r for r in results if r.algorithm == algo]
        if len(rows) >= 2:
            slopes[algo] = loglog_slope([r.n for r in rows], [r.wall_seconds for r in rows])
    return results, slopes, notes


def run_hyperparameter_sweep(data, ct_list, ns_list, seed=0, replicates=5, max_iters=100):
    """Cluster counts for every (CT, NS) pair; rows follow ``ct_list``, columns ``ns_list``."""
    table = np.zeros((len(ct_list), len(ns_list)), dtype=np.int64)
    for i, ct in enumerate(ct_list):
        for j, ns in enumerate(ns_list):
            cfg = MultistageConfig(ct=ct, ns=ns, seed=seed, replicates=replicates, max_iters=max_iters)
            table[i, j] = multistage_cluster(data, cfg).k
    return table


def sweep_table_rows(table, ct_list, ns_list):
    header = ["ct"] + [f"ns{n}" for n in ns_list]
    rows = [[f"{ct:g}"] + [int(v) for v in table[i]] for i, ct in enumerate(ct_list)]
    return header, rows


@dataclass
class SmoothingRow:
    fwhm: float
    mean_intra_corr: float
    k: int
    msi: float = float("nan")
    mean_si: float = float("nan")


def line_fit(x, y):
    """Least-squares line with its R^2; returns ``(slope, intercept, r2)``."""
    fit = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)


def run_smoothing_sweep(volume, fwhm_list, cfg=None, mask=None, reference=None):
    """Smooth, cluster and score the volume at every FWHM in ``fwhm_list``.

    Intra-cluster correlation is measured against the smoothed data that was
    clustered. With ``reference`` labels, SI against them is reported too.
    """
    fwhm_list = list(fwhm_list)
    if fwhm_list != sorted(fwhm_list):
        raise InvalidInput("fwhm list must be ascending")
    cfg = cfg or MultistageConfig()
    mask = mask or MaskVolume.full(volume.geometry)
    rows = []
    for fwhm in fwhm_list:
        x = vectorize(gaussian_smooth(volume, mask, fwhm), mask)
        parc = multistage_cluster(x, cfg)
        _, mean_corr = intra_cluster_correlation(parc, x)
        row = SmoothingRow(float(fwhm), mean_corr, parc.k)
        if reference is not None:
            rep = compare_parcellations(parc.labels, reference)
            row.msi, row.mean_si = rep.msi, rep.mean_si
        rows.append(row)
    fits = {
        "mean_intra_corr": line_fit(fwhm_list, [r.mean_intra_corr for r in rows]),
        "k": line_fit(fwhm_list, [r.k for r in rows]),
    }
    return rows, fits


def result_dicts(results):
    return [asdict(r) for r in results]
