"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
import scipy.integrate
import scipy.special

from svsep.model import unet


def finite_difference_check(params, x, y, per_tensor=12, h=1e-4, seed=0, drop_seed=1, floor=1e-7):
    """Central differences on sampled coordinates of every weight tensor.

    A coordinate is skipped when either perturbation changes the sign pattern
    of any ReLU, leaky ReLU or L1 residual (a kink lies inside the interval).
    Returns ``(max_relative_error, n_checked, n_skipped)``.
    """
    rng = np.random.default_rng(seed)

    def loss(p):
        _, est = unet.forward(p, x, training=True, rng=np.random.default_rng(drop_seed))
        return unet.l1_masked_loss(est, y)

    def signature(p):
        return unet.kink_signature(p, x, y, np.random.default_rng(drop_seed))

    analytic = unet.backward(params, x, y, np.random.default_rng(drop_seed))
    theta = params.flat()
    offsets, start = [], 0
    for w in params.weights.values():
        k = min(per_tensor, w.size)
        offsets.extend(start + rng.choice(w.size, size=k, replace=False))
        start += w.size

    worst, checked, skipped = 0.0, 0, 0
    base = signature(params)
    for i in offsets:
        plus, minus = theta.copy(), theta.copy()
        plus[i] += h
        minus[i] -= h
        p_plus, p_minus = params.with_flat(plus), params.with_flat(minus)
        if not (np.array_equal(signature(p_plus), base) and np.array_equal(signature(p_minus), base)):
            skipped += 1
            continue
        numeric = (loss(p_plus) - loss(p_minus)) / (2 * h)
        rel = abs(numeric - analytic[i]) / max(abs(numeric), abs(analytic[i]), floor)
        worst = max(worst, rel)
        checked += 1
    return worst, checked, skipped


def bss_lstsq(estimate, references, target, filter_len):
    """SDR/SIR/SAR from explicit delay matrices and ``numpy.linalg.lstsq``.

    Signals are ``(channels, n)``; energies are summed over channels.
    """
    refs = [np.atleast_2d(r) for r in references]
    est = np.atleast_2d(estimate)
    chans, n = est.shape
    m = n + filter_len - 1
    tot = {"t": 0.0, "i": 0.0, "a": 0.0, "ti": 0.0}
    for c in range(chans):
        def delays(sig):
            cols = np.zeros((m, filter_len))
            for d in range(filter_len):
                cols[d:d + n, d] = sig
            return cols

        a_all = np.hstack([delays(r[c]) for r in refs])
        a_tgt = delays(refs[target][c])
        e = np.concatenate([est[c], np.zeros(filter_len - 1)])
        p_all = a_all @ np.linalg.lstsq(a_all, e, rcond=None)[0]
        p_tgt = a_tgt @ np.linalg.lstsq(a_tgt, e, rcond=None)[0]
        s, i, a = p_tgt, p_all - p_tgt, e - p_all
        tot["t"] += s @ s
        tot["i"] += i @ i
        tot["a"] += a @ a
        tot["ti"] += (s + i) @ (s + i)
    sdr = 10 * np.log10(tot["t"] / (tot["i"] + tot["a"]))
    sir = 10 * np.log10(tot["t"] / tot["i"])
    sar = 10 * np.log10(tot["ti"] / tot["a"])
    return sdr, sir, sar


def t_two_sided_p(t, df):
    """Two-sided Student-t p-value by numerical integration of the density."""
    logc = scipy.special.gammaln((df + 1) / 2) - scipy.special.gammaln(df / 2) - 0.5 * np.log(df * np.pi)
    pdf = lambda u: np.exp(logc) * (1 + u * u / df) ** (-(df + 1) / 2)  # noqa: E731
    tail, _ = scipy.integrate.quad(pdf, abs(t), np.inf, epsabs=1e-14, epsrel=1e-12)
    return 2 * tail
