"""BSS-eval metrics, per-song median aggregation and paired significance tests.

The metric decomposition is the classic one: the estimate is projected onto
the span of ``filter_len`` delayed copies of the references (the estimate
being zero-extended by ``filter_len - 1`` samples). The projection onto the
target's own delays is the target component, the rest of the projection is
interference and the residual is the artifact part. Multichannel signals are
decomposed per channel and the component energies summed over channels.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.special

from .dsp import AudioClip
from .errors import InvalidInputError, UndefinedMetricError

METRICS = ("sdr", "sir", "sar")
INF = math.inf
ENERGY_FLOOR = 1e-12
DAMPING = 1e-10
SILENT_FRAME_RATIO = 1e-10


def _as_array(x) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.samples
    a = np.asarray(x, dtype=np.float64)
    return a[np.newaxis] if a.ndim == 1 else a


def _fft_len(n: int) -> int:
    return 1 << int(np.ceil(np.log2(max(n, 2))))


def _projection_filters(refs: np.ndarray, est: np.ndarray, flen: int, nfft: int):
    """Least-squares filters projecting ``est`` onto delayed ``refs`` (one channel).

    ``refs`` is ``(k, n)``. Returns ``(coeffs (k, flen), ref_ffts)``.
    """
    k, n = refs.shape
    R = np.fft.rfft(refs, nfft)
    E = np.fft.rfft(est, nfft)
    # C[a, b, d] = sum_m r_a[m] r_b[m + d]
    cross = np.fft.irfft(np.conj(R)[:, None, :] * R[None, :, :], nfft)
    G = np.empty((k * flen, k * flen))
    lags = np.arange(flen)
    diff = lags[:, None] - lags[None, :]  # tau - upsilon
    for a in range(k):
        for b in range(k):
            G[a * flen:(a + 1) * flen, b * flen:(b + 1) * flen] = cross[a, b][diff % nfft]
    D = np.fft.irfft(np.conj(R) * E[None, :], nfft)[:, :flen].reshape(-1)
    G[np.diag_indices_from(G)] += DAMPING
    coeffs = np.linalg.solve(G, D).reshape(k, flen)
    return coeffs, R


def _apply_filters(R: np.ndarray, coeffs: np.ndarray, nfft: int, length: int) -> np.ndarray:
    C = np.fft.rfft(coeffs, nfft)
    return np.fft.irfft((R * C).sum(axis=0), nfft)[:length]


def decompose(estimate, references: Sequence, target: int, filter_len: int = 16):
    """Split ``estimate`` into target, interference and artifact components.

    ``references`` is a sequence of ``(channels, n)`` arrays (or clips).
    Returns three ``(channels, n + filter_len - 1)`` arrays.
    """
    est = _as_array(estimate)
    refs = np.stack([_as_array(r) for r in references])  # (k, channels, n)
    k, chans, n = refs.shape
    if est.shape != (chans, n):
        raise InvalidInputError(f"estimate shape {est.shape} does not match references {(chans, n)}")
    m = n + filter_len - 1
    nfft = _fft_len(n + filter_len)
    s_target = np.zeros((chans, m))
    e_interf = np.zeros((chans, m))
    e_artif = np.zeros((chans, m))
    for c in range(chans):
        r = refs[:, c]
        coeffs, R = _projection_filters(r, est[c], filter_len, nfft)
        p_all = _apply_filters(R, coeffs, nfft, m)
        cj, Rj = _projection_filters(r[target:target + 1], est[c], filter_len, nfft)
        p_tgt = _apply_filters(Rj, cj, nfft, m)
        e_ext = np.concatenate([est[c], np.zeros(filter_len - 1)])
        s_target[c] = p_tgt
        e_interf[c] = p_all - p_tgt
        e_artif[c] = e_ext - p_all
    return s_target, e_interf, e_artif


def _ratio_db(num: float, den: float) -> float:
    if den < ENERGY_FLOOR:
        return INF
    if num <= 0:
        return -INF
    return 10.0 * math.log10(num / den)


def metrics_from_components(s_target, e_interf, e_artif) -> tuple[float, float, float]:
    st = float(np.sum(s_target ** 2))
    sdr = _ratio_db(st, float(np.sum((e_interf + e_artif) ** 2)))
    sir = _ratio_db(st, float(np.sum(e_interf ** 2)))
    sar = _ratio_db(float(np.sum((s_target + e_interf) ** 2)), float(np.sum(e_artif ** 2)))
    return sdr, sir, sar


def bss_eval_frame(estimates: Mapping, references: Mapping, filter_len: int = 16) -> dict[str, tuple]:
    """SDR, SIR and SAR (dB) for each source; ``inf`` when an error term vanishes."""
    names = list(references)
    if set(estimates) != set(names):
        raise InvalidInputError("estimates and references must cover the same sources")
    refs = [_as_array(references[s]) for s in names]
    if len({r.shape for r in refs} | {_as_array(estimates[s]).shape for s in names}) != 1:
        raise InvalidInputError("all signals must share one shape")
    out = {}
    for j, s in enumerate(names):
        if float(np.sum(refs[j] ** 2)) == 0.0:
            raise UndefinedMetricError(f"reference {s!r} is silent")
        out[s] = metrics_from_components(*decompose(estimates[s], refs, j, filter_len))
    return out


@dataclass
class MetricRecord:
    song_id: str
    source: str
    sdr: float
    sir: float
    sar: float
    frame_values: dict = field(default_factory=dict)

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def median_of_frames(values: Sequence[float]) -> float:
    """Median of the finite values; ``inf`` if every frame is infinite."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise UndefinedMetricError("no frames to aggregate")
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        return INF if np.all(v == INF) else -INF
    return float(np.median(finite))


def evaluate_song(estimates: Mapping, references: Mapping, song_id: str = "", frame_s: float = 1.0,
                  filter_len: int = 16, sample_rate: int | None = None) -> dict[str, MetricRecord]:
    """Per-source song metrics: medians over non-overlapping ``frame_s`` frames.

    Frames in which a reference is silent are skipped for that source. A
    trailing partial frame is dropped (a song shorter than one frame is
    evaluated as a single frame).
    """
    names = list(references)
    if sample_rate is None:
        first = references[names[0]]
        if not isinstance(first, AudioClip):
            raise InvalidInputError("sample_rate is required for array inputs")
        sample_rate = first.sample_rate
    refs = {s: _as_array(references[s]) for s in names}
    ests = {s: _as_array(estimates[s]) for s in names}
    n = next(iter(refs.values())).shape[1]
    if any(a.shape[1] != n for a in [*refs.values(), *ests.values()]):
        raise InvalidInputError("estimates and references must have equal lengths")
    win = int(round(frame_s * sample_rate))
    n_frames = max(1, n // win)
    bounds = [(0, n)] if n < win else [(f * win, (f + 1) * win) for f in range(n_frames)]

    energy = {s: np.array([np.sum(refs[s][:, a:b] ** 2) for a, b in bounds]) for s in names}
    frames = {s: {m: [] for m in METRICS} for s in names}
    for f, (a, b) in enumerate(bounds):
        active = [s for s in names if energy[s][f] >= SILENT_FRAME_RATIO * energy[s].mean()
                  and energy[s][f] > 0]
        if not active:
            continue
        ref_list = [refs[s][:, a:b] for s in names]
        for s in active:
            j = names.index(s)
            vals = metrics_from_components(*decompose(ests[s][:, a:b], ref_list, j, filter_len))
            for m, v in zip(METRICS, vals):
                frames[s][m].append(v)

    out = {}
    for s in names:
        if not frames[s]["sdr"]:
            raise UndefinedMetricError(f"{song_id}/{s}: every frame has a silent reference")
        med = {m: median_of_frames(frames[s][m]) for m in METRICS}
        out[s] = MetricRecord(song_id, s, med["sdr"], med["sir"], med["sar"], frames[s])
    return out


@dataclass
class ComparisonResult:
    method_a: str
    method_b: str
    metric: str
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    mean_difference: float
    degenerate: bool = False
    n: int = 0


def student_t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(min(1.0, scipy.special.betainc(df / 2.0, 0.5, df / (df + t * t))))


def _pair(a, b):
    if isinstance(a, Mapping) and isinstance(b, Mapping):
        common = [k for k in a if k in b]
        missing = sorted(set(a) ^ set(b))
        if missing:
            warnings.warn(f"songs missing from one method excluded: {missing}", stacklevel=3)
        a = [a[k] for k in common]
        b = [b[k] for k in common]
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError("paired samples must have equal lengths")
    keep = np.isfinite(a) & np.isfinite(b)
    return a[keep], b[keep]


def paired_t_test(a, b, method_a: str = "a", method_b: str = "b", metric: str = "") -> ComparisonResult:
    """Paired Student t-test on per-song values.

    ``a`` and ``b`` are equal-length sequences or dicts keyed by song id.
    Pairs containing an infinite value are dropped.
    """
    a, b = _pair(a, b)
    n = len(a)
    if n < 2:
        raise InvalidInputError(f"need at least 2 finite pairs, got {n}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd <= 1e-12 * max(1.0, abs(mean)):
        if mean == 0.0:
            return ComparisonResult(method_a, method_b, metric, 0.0, df, 1.0, mean, True, n)
        return ComparisonResult(method_a, method_b, metric, math.copysign(INF, mean), df, 0.0, mean, True, n)
    t = mean / (sd / math.sqrt(n))
    return ComparisonResult(method_a, method_b, metric, t, df, student_t_two_sided_p(t, df), mean, False, n)


# results[method][source][metric] -> {song_id: value}
Results = Mapping[str, Mapping[str, Mapping[str, Mapping[str, float]]]]


@dataclass
class SignificanceReport:
    methods: list
    baseline: str
    alpha: float
    sources: list
    medians: dict  # [method][source][metric]
    bold: dict  # [method][source][metric]
    pvalues: dict  # [(source, metric)] -> (len(methods), len(methods)) array
    metrics: tuple = METRICS

    def to_markdown(self) -> str:
        lines = [f"Medians over songs. Bold: p < {self.alpha:g} (paired t-test) and better "
                 f"median than baseline `{self.baseline}` (italic).", ""]
        header = ["Method"] + [f"{s} {m.upper()}" for s in self.sources for m in self.metrics]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for meth in self.methods:
            cells = [f"*{meth}*" if meth == self.baseline else meth]
            for s in self.sources:
                for m in self.metrics:
                    v = _fmt(self.medians[meth][s][m])
                    if meth == self.baseline:
                        v = f"*{v}*"
                    elif self.bold[meth][s][m]:
                        v = f"**{v}**"
                    cells.append(v)
            lines.append("| " + " | ".join(cells) + " |")
        for (s, m), mat in sorted(self.pvalues.items()):
            lines += ["", f"p-values, {s} {m.upper()}", ""]
            lines.append("| | " + " | ".join(self.methods) + " |")
            lines.append("|" + "---|" * (len(self.methods) + 1))
            for i, meth in enumerate(self.methods):
                lines.append(f"| {meth} | " + " | ".join(_fmt_p(p) for p in mat[i]) + " |")
        return "\n".join(lines) + "\n"

    def pvalue_csv(self, source: str, metric: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + self.methods)
        mat = self.pvalues[(source, metric)]
        for i, meth in enumerate(self.methods):
            w.writerow([meth] + [_fmt_p(p) for p in mat[i]])
        return buf.getvalue()


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.2f}"


def _fmt_p(p: float) -> str:
    return f"{p:.3g}"


def significance_table(results: Results, baseline: str, alpha: float = 0.001,
                       metrics: Sequence[str] = METRICS) -> SignificanceReport:
    """Median table with significance flags plus pairwise p-value matrices.

    A method is flagged on a source/metric when its paired t-test against the
    baseline gives ``p < alpha`` and its median is above the baseline's.
    Pairs that cannot be tested (fewer than two finite pairs) get ``p = nan``.
    """
    if baseline not in results:
        raise InvalidInputError(f"baseline {baseline!r} not among methods")
    methods = [baseline] + sorted(m for m in results if m != baseline)
    sources = sorted({s for r in results.values() for s in r})
    medians, bold, pvalues = {}, {}, {}
    for meth in methods:
        medians[meth] = {s: {m: median_of_frames(list(results[meth][s][m].values()))
                             for m in metrics} for s in sources}
    for s in sources:
        for m in metrics:
            mat = np.ones((len(methods), len(methods)))
            for i in range(len(methods)):
                for j in range(i + 1, len(methods)):
                    try:
                        p = paired_t_test(results[methods[i]][s][m], results[methods[j]][s][m],
                                          methods[i], methods[j], m).p_value
                    except InvalidInputError:
                        warnings.warn(f"{s}/{m}: too few finite pairs for {methods[i]} vs {methods[j]}",
                                      stacklevel=2)
                        p = math.nan
                    mat[i, j] = mat[j, i] = p
            pvalues[(s, m)] = mat
    for i, meth in enumerate(methods):
        bold[meth] = {s: {m: bool(i > 0 and pvalues[(s, m)][0, i] < alpha
                                  and medians[meth][s][m] > medians[baseline][s][m])
                          for m in metrics} for s in sources}
    return SignificanceReport(methods, baseline, alpha, sources, medians, bold, pvalues, tuple(metrics))


CSV_FIELDS = ("song_id", "method", "source", "metric", "value")


def records_to_rows(records: Sequence[MetricRecord], method: str) -> list[tuple]:
    rows = []
    for r in records:
        for m in METRICS:
            rows.append((r.song_id, method, r.source, m, r.value(m)))
    return rows


def write_results_csv(path, rows: Sequence[tuple]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for song, meth, src, met, val in sorted(rows, key=lambda r: (r[1], r[2], r[3], r[0])):
            w.writerow([song, meth, src, met, repr(float(val))])
    return path


def read_results_csv(path) -> list[tuple]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise InvalidInputError(f"{path}: expected columns {CSV_FIELDS}")
        return [(r["song_id"], r["method"], r["source"], r["metric"], float(r["value"])) for r in reader]


def rows_to_results(rows: Sequence[tuple]) -> dict:
    out: dict = {}
    for song, meth, src, met, val in rows:
        out.setdefault(meth, {}).setdefault(src, {}).setdefault(met, {})[song] = val
    return out
