"""Counter-based Gaussian increments.

The normal variate used by particle ``i`` at step ``k`` depends only on
``(seed, k, i)``: step ``k`` draws raw 64-bit words from a Philox generator
keyed by the seed with counter ``(0, k, 0, 0)``, and particle ``i`` takes
word ``i``.  Raw words become uniforms on the open unit interval and then
normals by Wichura's AS241 inverse-normal approximation (about 1e-16
relative accuracy), so two ensembles driven by the same seed see exactly
the same increments.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_TWO_M52 = 2.0**-52


def raw_words(seed: int, step: int, n: int) -> np.ndarray:
    gen = np.random.Philox(key=int(seed), counter=[0, int(step), 0, 0])
    return gen.random_raw(n)


def raw_block(seed: int, first_step: int, n_steps: int, n: int) -> np.ndarray:
    out = np.empty((n_steps, n), dtype=np.uint64)
    for s in range(n_steps):
        out[s] = raw_words(seed, first_step + s, n)
    return out


@njit(cache=True, inline="always")
def word_to_uniform(w):
    # 52 bits keep (k + 0.5) 2^-52 exactly representable, so 0 and 1 never occur
    return ((w >> np.uint64(12)) + 0.5) * _TWO_M52


@njit(cache=True)
def ppnd16(p):
    """Inverse standard normal CDF (Wichura 1988, algorithm AS241)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                   + 45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r
                 + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                   + 21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r
                 + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
                   + 1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                 + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                   + 0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                 + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
                   + 0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                 + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                   + 7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                 + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0 else val


@njit(cache=True)
def _normals_from_words(words, out):
    for i in range(words.size):
        out[i] = ppnd16(word_to_uniform(words[i]))


def normals(seed: int, step: int, n: int) -> np.ndarray:
    """Standard normals for particles 0..n-1 at one step."""
    out = np.empty(n)
    _normals_from_words(raw_words(seed, step, n), out)
    return out
