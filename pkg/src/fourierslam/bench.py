"""Scaling benchmark: spectral correlation vs direct-summation correlation.

For each spatial size N the two paths run on identical seeded inputs.
Results must agree before any timing is recorded. One untimed
instrumented pass per method records the multiply count and the peak
traced allocation; the timed repetitions then run with counters off,
after one warm-up call.
"""

import csv
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fourierslam.errors import DataError, NumericalError
from fourierslam.spectral import MultiplyCounter, naive_correlate_oracle, spectral_correlate

METHODS = {"spectral": spectral_correlate, "naive": naive_correlate_oracle}
CSV_HEADER = ["N", "D", "method", "rep", "seconds", "multiplies", "bytes"]
EQUIV_RTOL = 1e-4


@dataclass(frozen=True)
class BenchRow:
    N: int
    D: int
    method: str
    rep: int
    seconds: float
    multiplies: int
    bytes: int


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def methods(self):
        return sorted({r.method for r in self.rows})

    def sizes(self, method=None):
        return sorted({r.N for r in self.rows if method is None or r.method == method})

    def median_seconds(self, method, n):
        return float(np.median([r.seconds for r in self.rows if r.method == method and r.N == n]))

    def multiplies(self, method, n):
        counts = {r.multiplies for r in self.rows if r.method == method and r.N == n}
        if len(counts) != 1:
            raise DataError(f"inconsistent multiply counts for {method} at N={n}: {counts}")
        return counts.pop()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.N, r.D, r.method, r.rep, f"{r.seconds:.9f}", r.multiplies, r.bytes])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_HEADER:
                raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
            rows = [
                BenchRow(int(r["N"]), int(r["D"]), r["method"], int(r["rep"]), float(r["seconds"]),
                         int(r["multiplies"]), int(r["bytes"]))
                for r in reader
            ]
        return cls(rows)


def grid_for(n):
    """Split N positions into an H x W grid with H the largest divisor <= sqrt(N)."""
    h = int(np.sqrt(n))
    while n % h:
        h -= 1
    return h, n // h


def _measure(fn, q, k):
    with MultiplyCounter() as counter:
        tracemalloc.start()
        try:
            out = fn(q, k)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
    return out, counter.count, peak


def run_bench(sizes, channels=4, reps=3, seed=0, parallel=False, mode="2d"):
    """Benchmark both correlation paths over spatial sizes N (positions per map).

    With ``parallel`` the D channels are split across threads; such rows are
    labelled ``<method>-parallel``.
    """
    sizes = list(sizes)
    if reps < 3:
        raise ValueError("need at least 3 repetitions")
    if any(n < 16 for n in sizes):
        raise ValueError("sizes must be >= 16")
    rng = np.random.default_rng(seed)
    report = BenchReport()
    for n in sizes:
        h, w = grid_for(n)
        q = rng.standard_normal((h, w, channels))
        k = rng.standard_normal((h, w, channels))
        results, counts, peaks = {}, {}, {}
        for name, fn in METHODS.items():
            results[name], counts[name], peaks[name] = _measure(lambda a, b: fn(a, b, mode), q, k)
        ref = results["naive"]
        err = np.max(np.abs(results["spectral"] - ref)) / max(np.max(np.abs(ref)), 1e-300)
        if err > EQUIV_RTOL:
            raise NumericalError(f"spectral and naive correlation disagree at N={n}: rel err {err:.3g}")
        for name, fn in METHODS.items():
            call = _channel_parallel(fn, mode) if parallel else (lambda a, b, fn=fn: fn(a, b, mode))
            label = f"{name}-parallel" if parallel else name
            call(q, k)  # warm-up
            for rep in range(reps):
                t0 = time.perf_counter()
                call(q, k)
                dt = time.perf_counter() - t0
                report.rows.append(BenchRow(n, channels, label, rep, max(dt, 1e-9), counts[name], peaks[name]))
    return report


def _channel_parallel(fn, mode, workers=None):
    def call(q, k):
        d = q.shape[-1]
        with ThreadPoolExecutor(max_workers=workers or d) as pool:
            parts = list(pool.map(lambda c: fn(q[..., c : c + 1], k[..., c : c + 1], mode), range(d)))
        return np.concatenate(parts, axis=-1)

    return call


def fit_scaling(report):
    """Least-squares slope of log(median time) vs log(N), per method."""
    slopes = {}
    for method in report.methods():
        ns = report.sizes(method)
        if len(ns) < 4:
            raise DataError(f"{method}: need at least 4 distinct sizes to fit, got {len(ns)}")
        t = [report.median_seconds(method, n) for n in ns]
        slope, _ = np.polyfit(np.log(ns), np.log(t), 1)
        slopes[method] = float(slope)
    return slopes


def counter_ratio_deviation(report, min_size=1024, fast="spectral", slow="naive"):
    """Worst relative deviation of the measured multiply ratio from c * N / log2(N).

    Theta-notation leaves the constant free, so c is the geometric-mean fit
    over the sizes >= min_size. Returns (max deviation, per-size ratios).
    """
    ns = [n for n in report.sizes(fast) if n >= min_size and n in report.sizes(slow)]
    if not ns:
        raise DataError(f"no sizes >= {min_size} in report")
    measured = np.array([report.multiplies(slow, n) / report.multiplies(fast, n) for n in ns], float)
    shape = np.array([n / np.log2(n) for n in ns])
    c = float(np.exp(np.mean(np.log(measured / shape))))
    dev = np.abs(measured / (c * shape) - 1.0)
    return float(dev.max()), dict(zip(ns, measured.tolist()))


def parse_sizes(text):
    """``"256..8192"`` (doubling) or a comma list like ``"256,512,1024"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = (int(v) for v in text.split(".."))
        if lo < 1 or hi < lo:
            raise ValueError(f"bad size range {text!r}")
        out, n = [], lo
        while n <= hi:
            out.append(n)
            n *= 2
        return out
    return [int(v) for v in text.split(",") if v.strip()]
