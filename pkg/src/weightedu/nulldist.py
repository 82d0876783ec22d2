"""Null distribution of the statistic: mixture-chi-squared tail probabilities.

Under the null the scaled statistic n*T converges to a weighted sum of
independent 1-df chi-squared variables,

    sum_l  lam_l * chi2_1,

where the weights are the eigenvalues of K divided by (n - 1). The
weights carry both signs and sum to zero (trace(K) = 0), so neither a
plain chi-squared nor a normal approximation applies; tail probabilities
are computed by numerically inverting the characteristic function with
explicit error control (truncation-point search, tail-bound cutoffs,
optional auxiliary integrations with a Gaussian convergence factor, and
a round-off sentinel). The implementation follows the classical
published recipe for quadratic forms in normal variables, restricted to
central chi-squares; the requested absolute accuracy (default 1e-6) is
enforced and the achieved error bound is reported in the diagnostics.

Two independent cross-checks live alongside the inverter: a chunked
Monte-Carlo sampler of the same mixture, and a permutation path that
never touches the asymptotics at all.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_seed
from .errors import (
    DegenerateTestWarning,
    InputError,
    MixtureAccuracyError,
    NumericalError,
)
from .statistic import CenteredWeightMatrix, wu_statistic
from .transform import QuantileVector

_PI = math.pi
_LN2_OVER_8 = math.log(2.0) / 8.0

#: Relative threshold below which eigenvalues are treated as numerically zero.
EIGENVALUE_RTOL = 1e-12

#: Default cap on integration terms before the inverter gives up.
DEFAULT_MAX_TERMS = 100_000


@dataclass(frozen=True)
class MixtureSpec:
    """Weights of the limiting chi-squared mixture.

    ``offset`` is the constant subtracted from the mixture; it is always 0
    in the simplified limit used here but kept explicit so the contract is
    visible. ``n_truncated`` counts eigenvalues dropped as numerically
    zero (|lam| < 1e-12 * max|lam|).
    """

    lambdas: np.ndarray
    offset: float = 0.0
    n_truncated: int = 0

    def __post_init__(self):
        lam = np.ascontiguousarray(np.asarray(self.lambdas, dtype=float))
        if lam.ndim != 1:
            raise InputError("mixture weights must form a 1-d vector")
        if not np.all(np.isfinite(lam)):
            raise InputError("mixture weights must be finite")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)


@dataclass(frozen=True)
class DaviesInfo:
    """Diagnostics from one run of the characteristic-function inverter."""

    error_bound: float  # absolute bound on the returned tail: requested
    #   accuracy (the recipe's truncation/discretization budget) plus the
    #   round-off floor of the accumulated integrand mass; inf if the run failed
    accuracy: float  # the requested absolute accuracy
    terms: int  # total integration terms evaluated
    integrations: int  # number of integration passes (1 + auxiliaries)
    truncation_point: float  # u beyond which the integrand was truncated
    interval: float  # step of the final main integration
    convergence_sd: float  # sd of the initial convergence factor (0 if unused)
    cycles: int  # bound-function evaluations while locating parameters
    roundoff_flagged: bool  # True when round-off may dominate the result
    refinements: int = 0  # extra attempts with an enlarged term budget


def doubly_centered_kernel(K) -> np.ndarray:
    """Copy of K with row and column means projected out.

    The transformed phenotype vector is a rearrangement of a fixed mean-zero
    grid, so under the no-association null the only randomness in the
    quadratic form lives in mean-zero directions: any component of K along
    the all-ones vector is frozen by rearrangement and must not inflate the
    reference distribution.  Rare-variant kernels carry a large such
    component (carriers of rare alleles are systematically less similar to
    everyone), so skipping this projection overstates the null variance by
    a large factor.  This is the intercept-only case of the covariate
    projection H K H; the statistic itself is unchanged because the grid
    already sums to zero.
    """
    values = K.values if isinstance(K, CenteredWeightMatrix) else np.asarray(K, dtype=float)
    row = values.mean(axis=1, keepdims=True)
    col = values.mean(axis=0, keepdims=True)
    centered = values - row - col + values.mean()
    return (centered + centered.T) / 2.0


def scaled_eigenvalues(K, rtol: float = EIGENVALUE_RTOL) -> MixtureSpec:
    """Eigenvalues of K divided by (n - 1), with numerical zeros dropped.

    Accepts a :class:`CenteredWeightMatrix` or any symmetric ndarray (the
    covariate-adjusted path feeds H K H here, whose diagonal is nonzero).
    """
    values = K.values if isinstance(K, CenteredWeightMatrix) else np.asarray(K, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise InputError(f"K must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NumericalError("eigendecomposition failure: K has non-finite entries")
    n = values.shape[0]
    lam = np.linalg.eigvalsh(values) / (n - 1)
    amax = float(np.abs(lam).max(initial=0.0))
    if amax == 0.0:
        return MixtureSpec(lambdas=np.empty(0), offset=0.0, n_truncated=n)
    keep = np.abs(lam) >= rtol * amax
    kept = np.sort(lam[keep])[::-1]
    return MixtureSpec(lambdas=kept, offset=0.0, n_truncated=int(n - keep.sum()))


# ---------------------------------------------------------------------------
# Characteristic-function inversion for central quadratic forms.
# ---------------------------------------------------------------------------


def _exp1(x: float) -> float:
    # exp with a hard underflow guard, as in the published recipe
    return 0.0 if x < -50.0 else math.exp(x)


def _log1_minus(x: np.ndarray) -> np.ndarray:
    # log(1 - x) + x, vectorized; adequate accuracy for the error bounds
    return np.log1p(-x) + x


class _Inverter:
    """Working state for one tail-probability computation.

    Mirrors the structure of the published algorithm: ``errbd``/``ctff``
    bound the distribution's effective support via the moment generating
    function, ``truncation``/``findu`` bound the error from cutting the
    Fourier integral at a finite point, ``cfe`` prices the Gaussian
    convergence factor, and ``integrate`` accumulates the series.

    Handles the general functional sum_j lam_j chi2_{df_j}(nc_j) + sigma*Z:
    the exported mixture API only ever uses the central 1-df case, but the
    rearrangement law of a tied (e.g. binary) phenotype grid needs the
    noncentral terms and the additive normal remainder, so the port keeps
    the full recipe.
    """

    def __init__(
        self,
        lb: np.ndarray,
        df: np.ndarray,
        point: float,
        lim: int,
        nc: np.ndarray | None = None,
        sigma: float = 0.0,
    ):
        self.lb = lb
        self.df = df
        self.nc = np.zeros_like(lb) if nc is None else nc
        self.point = float(point)
        self.lim = int(lim)
        # starts at the additive-normal variance, grows when a convergence
        # factor is folded in
        self.sigsq = float(sigma) * float(sigma)
        self.intl = 0.0
        self.ersm = 0.0
        self.count = 0
        self.fail = False
        self.terms = 0
        self.integrations = 0
        self._order = None

    # -- moment-generating-function bounds ---------------------------------

    def errbd(self, u: float) -> tuple[float, float]:
        """Chernoff tail bound at twist u; returns (bound, cutoff point)."""
        self.count += 1
        xconst = u * self.sigsq
        sum1 = u * xconst
        x = 2.0 * u * self.lb
        y = 1.0 - x
        xconst += float((self.lb * (self.nc / y + self.df) / y).sum())
        sum1 += float((self.nc * np.square(x / y)).sum())
        sum1 += float((self.df * (x * x / y + _log1_minus(x))).sum())
        return _exp1(-0.5 * sum1), xconst

    def ctff(self, accx: float, upn: float) -> tuple[float, float]:
        """Point beyond which the tail mass is below ``accx``.

        ``upn > 0`` bounds the upper tail, ``upn < 0`` the lower one.
        Returns (cutoff value, refined twist) so successive calls reuse
        the search position, as the original does.
        """
        u2 = upn
        u1 = 0.0
        c1 = self.mean
        rb = 2.0 * (self.lmax if u2 > 0.0 else self.lmin)
        u = u2 / (1.0 + u2 * rb)
        bd, c2 = self.errbd(u)
        while bd > accx:
            u1 = u2
            c1 = c2
            u2 *= 2.0
            u = u2 / (1.0 + u2 * rb)
            bd, c2 = self.errbd(u)
        u = (c1 - self.mean) / (c2 - self.mean)
        while u < 0.9:
            u = (u1 + u2) / 2.0
            bd, xconst = self.errbd(u / (1.0 + u * rb))
            if bd > accx:
                u1 = u
                c1 = xconst
            else:
                u2 = u
                c2 = xconst
            u = (c1 - self.mean) / (c2 - self.mean)
        return c2, u2

    # -- truncation of the Fourier integral ---------------------------------

    def truncation(self, u: float, tausq: float) -> float:
        """Bound on the error from truncating the integral at ``u``."""
        self.count += 1
        sum2 = (self.sigsq + tausq) * u * u
        prod1 = 2.0 * sum2
        x = np.square(2.0 * u * self.lb)
        sum1 = 0.5 * float((self.nc * x / (1.0 + x)).sum())
        big = x > 1.0
        s = float(self.df[big].sum())
        prod2 = float((self.df[big] * np.log(x[big])).sum())
        prod3 = float((self.df[big] * np.log1p(x[big])).sum())
        prod1 += float((self.df[~big] * np.log1p(x[~big])).sum())
        prod2 += prod1
        prod3 += prod1
        xq = _exp1(-sum1 - 0.25 * prod2) / _PI
        yq = _exp1(-sum1 - 0.25 * prod3) / _PI
        err1 = 1.0 if s == 0.0 else xq * 2.0 / s
        err2 = 2.5 * yq if prod3 > 1.0 else 1.0
        err1 = min(err1, err2)
        xhalf = 0.5 * sum2
        err2 = 1.0 if xhalf <= yq else yq / xhalf
        return min(err1, err2)

    def findu(self, utx: float, accx: float) -> float:
        """Smallest convenient truncation point with error below ``accx``."""
        ut = utx
        u = ut / 4.0
        if self.truncation(u, 0.0) > accx:
            u = ut
            while self.truncation(u, 0.0) > accx:
                ut *= 4.0
                u = ut
        else:
            ut = u
            u = u / 4.0
            while self.truncation(u, 0.0) <= accx:
                ut = u
                u = u / 4.0
        for divisor in (2.0, 1.4, 1.2, 1.1):
            u = ut / divisor
            if self.truncation(u, 0.0) <= accx:
                ut = u
        return ut

    # -- convergence factor --------------------------------------------------

    def cfe(self, x: float) -> float:
        """Coefficient of tau^2 in the error of the convergence factor."""
        self.count += 1
        if self._order is None:
            self._order = np.argsort(-np.abs(self.lb), kind="stable")
        axl = abs(x)
        sxl = 1.0 if x > 0.0 else -1.0
        sum1 = 0.0
        order = self._order
        for j in range(self.lb.size - 1, -1, -1):
            t = order[j]
            if self.lb[t] * sxl > 0.0:
                lj = abs(self.lb[t])
                axl1 = axl - lj * (self.df[t] + self.nc[t])
                axl2 = lj / _LN2_OVER_8
                if axl1 > axl2:
                    axl = axl1
                else:
                    if axl > axl2:
                        axl = axl2
                    sum1 = (axl - axl1) / lj
                    for k in range(j - 1, -1, -1):
                        sum1 += self.df[order[k]] + self.nc[order[k]]
                    break
        if sum1 > 100.0:
            self.fail = True
            return 1.0
        return 2.0 ** (sum1 / 4.0) / (_PI * axl * axl)

    # -- the integral itself --------------------------------------------------

    def integrate(self, nterm: int, interv: float, tausq: float, main: bool) -> None:
        """Accumulate ``nterm + 1`` series terms at step ``interv``.

        Evaluated in fixed-size blocks so memory stays bounded for large
        mixtures; the block layout is deterministic.
        """
        inpi = interv / _PI
        lb = self.lb[:, None]
        df = self.df[:, None]
        nc = self.nc[:, None]
        for start in range(0, nterm + 1, 256):
            ks = np.arange(start, min(start + 256, nterm + 1), dtype=float)
            u = (ks + 0.5) * interv
            sum1 = -2.0 * u * self.point
            sum2 = np.abs(sum1)
            sum3 = -0.5 * self.sigsq * u * u
            x = 2.0 * lb * u[None, :]
            xsq = x * x
            sum3 = sum3 - 0.25 * (df * np.log1p(xsq)).sum(axis=0)
            y = nc * x / (1.0 + xsq)
            z = df * np.arctan(x) + y
            sum1 = sum1 + z.sum(axis=0)
            sum2 = sum2 + np.abs(z).sum(axis=0)
            sum3 = sum3 - 0.5 * (x * y).sum(axis=0)
            with np.errstate(under="ignore"):
                xfac = inpi * np.exp(sum3) / u
            if not main:
                xfac = xfac * (1.0 - np.exp(-0.5 * tausq * u * u))
            self.intl += float((np.sin(0.5 * sum1) * xfac).sum())
            self.ersm += float((0.5 * sum2 * xfac).sum())
        self.terms += nterm + 1
        self.integrations += 1

    # -- driver ----------------------------------------------------------------

    def run(self, acc: float) -> tuple[float, int, dict]:
        """Compute the upper-tail probability P(mixture > point).

        Returns (tail, ifault, trace). ifault follows the published
        convention: 0 ok, 1 accuracy not achievable within the term
        budget, 2 round-off possibly significant.
        """
        trace = {
            "truncation_point": 0.0,
            "interval": 0.0,
            "convergence_sd": 0.0,
        }
        ifault = 0
        acc1 = acc

        sd = float(self.sigsq + (self.lb * self.lb * (2.0 * self.df + 4.0 * self.nc)).sum())
        self.mean = float((self.lb * (self.df + self.nc)).sum())
        self.lmax = float(max(self.lb.max(initial=0.0), 0.0))
        self.lmin = float(min(self.lb.min(initial=0.0), 0.0))
        if sd == 0.0:
            return (0.0 if self.point > 0.0 else 1.0), 0, trace
        if self.lmax == 0.0 and self.lmin == 0.0 and self.sigsq == 0.0:
            raise NumericalError("invalid mixture: all weights are zero")
        sd = math.sqrt(sd)
        almx = max(self.lmax, -self.lmin)

        utx = 16.0 / sd
        up = 4.5 / sd
        un = -up
        utx = self.findu(utx, 0.5 * acc1)
        if self.point != 0.0 and almx > 0.07 * sd:
            # try a convergence factor for the initial integration
            tausq = 0.25 * acc1 / self.cfe(self.point)
            if self.fail:
                self.fail = False
            elif self.truncation(utx, tausq) < 0.2 * acc1:
                self.sigsq += tausq
                utx = self.findu(utx, 0.25 * acc1)
                trace["convergence_sd"] = math.sqrt(tausq)
        trace["truncation_point"] = utx
        acc1 = 0.5 * acc1
        xlim = float(self.lim)

        while True:  # locate the integration interval, maybe via auxiliaries
            cutoff, up = self.ctff(acc1, up)
            d1 = cutoff - self.point
            if d1 < 0.0:
                # evaluation point beyond the upper support: tail is 0
                return 0.0, ifault, trace
            cutoff, un = self.ctff(acc1, un)
            d2 = self.point - cutoff
            if d2 < 0.0:
                return 1.0, ifault, trace
            intv = 2.0 * _PI / max(d1, d2)
            xnt = utx / intv
            xntm = 3.0 / math.sqrt(acc1)
            if xnt <= xntm * 1.5:
                break
            # auxiliary integration to shrink the required term count
            if xntm > xlim:
                return math.nan, 1, trace
            ntm = int(math.floor(xntm + 0.5))
            intv1 = utx / ntm
            x = 2.0 * _PI / intv1
            if x <= abs(self.point):
                break
            tausq = 0.33 * acc1 / (1.1 * (self.cfe(self.point - x) + self.cfe(self.point + x)))
            if self.fail:
                break
            acc1 = 0.67 * acc1
            self.integrate(ntm, intv1, tausq, main=False)
            xlim -= xntm
            self.sigsq += tausq
            utx = self.findu(utx, 0.25 * acc1)
            acc1 = 0.75 * acc1

        trace["interval"] = intv
        if xnt > xlim:
            return math.nan, 1, trace
        nt = int(math.floor(xnt + 0.5))
        self.integrate(nt, intv, 0.0, main=True)
        tail = 0.5 + self.intl  # upper tail: 1 - (0.5 - intl)

        # round-off sentinel from the published recipe (radix 2 and 16)
        x = self.ersm + acc / 10.0
        for rat in (1.0, 2.0, 4.0, 8.0):
            if rat * x == rat * self.ersm:
                ifault = 2
        return tail, ifault, trace


def _davies_tail(
    lambdas: np.ndarray,
    df: np.ndarray,
    t: float,
    acc: float,
    lim: int,
    nc: np.ndarray | None = None,
    sigma: float = 0.0,
) -> tuple[float, int, DaviesInfo]:
    inv = _Inverter(lambdas, df, t, lim, nc=nc, sigma=sigma)
    tail, ifault, trace = inv.run(acc)
    if ifault == 1:
        bound = math.inf
    else:
        bound = acc + inv.terms * np.finfo(float).eps * inv.ersm
    info = DaviesInfo(
        error_bound=bound,
        accuracy=acc,
        terms=inv.terms,
        integrations=inv.integrations,
        truncation_point=trace["truncation_point"],
        interval=trace["interval"],
        convergence_sd=trace["convergence_sd"],
        cycles=inv.count,
        roundoff_flagged=ifault == 2,
    )
    return tail, ifault, info


def _tail_with_retry(
    lam: np.ndarray,
    df: np.ndarray,
    point: float,
    accuracy: float,
    max_terms: int,
    nc: np.ndarray | None = None,
    sigma: float = 0.0,
) -> tuple[float, DaviesInfo]:
    """Inverter call with the shared clamp/retry policy (see the public API)."""
    tail, ifault, info = _davies_tail(lam, df, point, accuracy, max_terms, nc=nc, sigma=sigma)
    if ifault == 1:
        tail, ifault, info = _davies_tail(
            lam, df, point, accuracy, 20 * max_terms, nc=nc, sigma=sigma
        )
        info = replace(info, refinements=1)
    if ifault == 1:
        best = tail if math.isfinite(tail) else math.nan
        raise MixtureAccuracyError(
            f"tail probability did not reach accuracy {accuracy:g} within "
            f"{20 * max_terms} integration terms",
            best_estimate=best,
            error_bound=info.error_bound,
        )
    return float(min(1.0, max(tail, 1e-12))), info


def mixture_tail_probability(
    spec: MixtureSpec,
    t: float,
    accuracy: float = 1e-6,
    max_terms: int = DEFAULT_MAX_TERMS,
    return_info: bool = False,
):
    """P(sum_l lam_l chi2_1 > t) by characteristic-function inversion.

    The result is clamped to [1e-12, 1]: below the integration accuracy
    the exact 0 is not certifiable, and the clamp keeps downstream
    -log10(p) arithmetic finite. If the requested accuracy cannot be met
    the computation is retried once with a 20x term budget and then
    raises :class:`MixtureAccuracyError` carrying the best estimate.
    """
    if not isinstance(spec, MixtureSpec):
        spec = MixtureSpec(lambdas=np.asarray(spec, dtype=float))
    if spec.lambdas.size == 0:
        raise InputError("degenerate null distribution: the mixture has no nonzero weights")
    if not np.isfinite(t):
        raise InputError(f"evaluation point must be finite, got {t!r}")
    if not (0.0 < accuracy < 0.1):
        raise InputError(f"accuracy must be in (0, 0.1), got {accuracy}")
    lam = spec.lambdas
    df = np.ones_like(lam)
    point = float(t) - float(spec.offset)

    p, info = _tail_with_retry(lam, df, point, accuracy, max_terms)
    if return_info:
        return p, info
    return p


def mixture_tail_montecarlo(
    spec: MixtureSpec,
    t: float,
    draws: int = 10_000_000,
    seed=0,
    chunk: int = 250_000,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the mixture tail; returns (p_hat, se).

    Independent of the inverter in every respect — used as its oracle.
    """
    if not isinstance(spec, MixtureSpec):
        spec = MixtureSpec(lambdas=np.asarray(spec, dtype=float))
    if spec.lambdas.size == 0:
        raise InputError("degenerate null distribution: the mixture has no nonzero weights")
    draws = int(draws)
    if draws < 1000:
        raise InputError("need at least 1000 draws for a meaningful estimate")
    rng = np.random.default_rng(check_seed(seed))
    lam = spec.lambdas
    point = float(t) - float(spec.offset)
    hits = 0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        z = rng.standard_normal((m, lam.size))
        vals = np.square(z) @ lam
        hits += int((vals > point).sum())
        done += m
    p = hits / draws
    se = math.sqrt(max(p * (1.0 - p), 1.0 / draws) / draws)
    return p, se


# ---------------------------------------------------------------------------
# Packaged test paths.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _NullReference:
    """Kernel-side pieces of the reference law, reusable across phenotypes.

    ``spec``/``vectors`` are the kept eigenpairs of the doubly centered
    kernel scaled by 1/(n-1); ``linear_direction`` is the centered row-sum
    vector of the *raw* kernel, which drives the linear term of the
    rearrangement law when the phenotype grid has a nonzero mean.
    """

    spec: MixtureSpec
    vectors: np.ndarray  # (n, m) eigenvectors matching spec.lambdas
    linear_direction: np.ndarray  # P K 1: centered row sums of the raw kernel
    linear_norm_sq: float
    total_sum: float  # 1' K 1 over the raw kernel
    n: int


def _null_reference(K, rtol: float = EIGENVALUE_RTOL) -> _NullReference:
    """Eigen-structure of the exchangeable-null law for one kernel."""
    values = K.values if isinstance(K, CenteredWeightMatrix) else np.asarray(K, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise InputError(f"K must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NumericalError("eigendecomposition failure: K has non-finite entries")
    n = values.shape[0]
    vals, vecs = np.linalg.eigh(doubly_centered_kernel(values))
    lam = vals / (n - 1)
    amax = float(np.abs(lam).max(initial=0.0))
    if amax == 0.0:
        keep = np.zeros(n, dtype=bool)
    else:
        keep = np.abs(lam) >= rtol * amax
    order = np.argsort(-lam[keep], kind="stable")
    spec = MixtureSpec(
        lambdas=lam[keep][order], offset=0.0, n_truncated=int(n - keep.sum())
    )
    r = values.sum(axis=1)
    pr = r - r.mean()
    return _NullReference(
        spec=spec,
        vectors=np.ascontiguousarray(vecs[:, keep][:, order]),
        linear_direction=pr,
        linear_norm_sq=float(pr @ pr),
        total_sum=float(r.sum()),
        n=n,
    )


def _reference_tail(
    ref: _NullReference,
    q: np.ndarray,
    stat: float,
    accuracy: float = 1e-6,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> tuple[float, DaviesInfo, float]:
    """Tail probability of the reference law at the observed statistic.

    Under exchangeability the statistic is a quadratic form in a random
    rearrangement of the fixed grid ``q``.  With the grid written as its
    mean plus a mean-zero remainder, the law splits exactly into a
    quadratic part in the doubly centered kernel, a linear part along the
    kernel's centered row sums scaled by the grid mean, and a constant.
    The normal proxy for the rearrangement then makes the whole thing one
    noncentral mixture (completing the square per eigendirection) plus an
    independent normal for the linear mass outside the kept eigenspace.
    Distinct-valued grids have mean zero, the linear and constant parts
    vanish, and the computation reduces to the central mixture alone.

    Returns (p, inverter diagnostics, grid variance).
    """
    lam = ref.spec.lambdas
    if lam.size == 0:
        raise InputError("degenerate null distribution: the mixture has no nonzero weights")
    n = ref.n
    q = np.asarray(q, dtype=float)
    qbar = float(q.mean())
    sigma_sq = float(np.sum((q - qbar) ** 2) / (n - 1))
    if sigma_sq == 0.0:
        raise InputError("constant phenotype grid: the test statistic cannot vary")
    t = n * float(stat) / sigma_sq
    df = np.ones_like(lam)

    scale = 2.0 * qbar / (math.sqrt(sigma_sq) * (n - 1))
    b_norm_sq = scale * scale * ref.linear_norm_sq
    quad_var = 2.0 * float((lam * lam).sum())
    if b_norm_sq <= 1e-12 * quad_var:
        p, info = _tail_with_retry(lam, df, t, accuracy, max_terms)
        return p, info, sigma_sq

    # Tied grid: complete the square along each eigendirection that can
    # numerically carry a noncentrality; fold the rest of the linear mass
    # into the additive normal (their own quadratic contribution is then
    # treated as independent, an O(|lam|/sd) approximation — negligible by
    # construction of the carry threshold).
    b = scale * (ref.vectors.T @ ref.linear_direction)
    sd_scale = math.sqrt(quad_var + b_norm_sq)
    nc = np.zeros_like(lam)
    carry = np.abs(lam) >= 1e-6 * sd_scale
    beta = b[carry] / (2.0 * lam[carry])
    nc_carry = beta * beta
    small = nc_carry > 1e6
    if np.any(small):
        idx = np.flatnonzero(carry)[small]
        carry[idx] = False
        beta = b[carry] / (2.0 * lam[carry])
        nc_carry = beta * beta
    nc[carry] = nc_carry
    sigma_x = math.sqrt(max(b_norm_sq - float((b[carry] ** 2).sum()), 0.0))
    const = qbar * qbar * ref.total_sum / ((n - 1) * sigma_sq)
    point = t - const + float((lam[carry] * nc_carry).sum())
    p, info = _tail_with_retry(lam, df, point, accuracy, max_terms, nc=nc, sigma=sigma_x)
    return p, info, sigma_sq


@dataclass(frozen=True)
class TestDiagnostics:
    """Numerical context for one test result."""

    trace_residual: float  # sum of the mixture weights (0 unless adjusted)
    n_truncated: int  # eigenvalues dropped as numerically zero
    davies: DaviesInfo | None = None
    degenerate: bool = False
    sigma_hat: float | None = None  # residual scale (covariate-adjusted only)
    covariate_rank: int | None = None

    def to_dict(self) -> dict:
        out = {
            "trace_residual": self.trace_residual,
            "n_truncated": self.n_truncated,
            "degenerate": self.degenerate,
        }
        if self.davies is not None:
            out["davies_error_bound"] = self.davies.error_bound
            out["davies_terms"] = self.davies.terms
            out["davies_roundoff_flagged"] = self.davies.roundoff_flagged
        if self.sigma_hat is not None:
            out["sigma_hat"] = self.sigma_hat
        if self.covariate_rank is not None:
            out["covariate_rank"] = self.covariate_rank
        return out


@dataclass(frozen=True)
class TestResult:
    """Everything one association test produces."""

    statistic: float
    scaled_eigenvalues: np.ndarray
    p_asymptotic: float
    diagnostics: TestDiagnostics
    p_permutation: float | None = None
    n_permutations: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.statistic):
            raise NumericalError("test statistic is not finite")
        if not (0.0 <= self.p_asymptotic <= 1.0):
            raise NumericalError(f"p_asymptotic out of [0, 1]: {self.p_asymptotic}")
        if self.p_permutation is not None and not (0.0 <= self.p_permutation <= 1.0):
            raise NumericalError(f"p_permutation out of [0, 1]: {self.p_permutation}")
        lam = np.ascontiguousarray(np.asarray(self.scaled_eigenvalues, dtype=float))
        lam.setflags(write=False)
        object.__setattr__(self, "scaled_eigenvalues", lam)


def asymptotic_pvalue(
    K: CenteredWeightMatrix,
    Q: QuantileVector,
    accuracy: float = 1e-6,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> TestResult:
    """Statistic plus its mixture-chi-squared p-value, with diagnostics.

    The mixture weights are the scaled eigenvalues of the doubly centered
    kernel (see :func:`doubly_centered_kernel`): the phenotype grid is
    mean-zero by construction, so the exchangeable null only excites
    mean-zero directions of K, and using the raw spectrum would make the
    test far too conservative on rare-variant kernels.  The evaluation
    point is additionally divided by the grid's sample variance
    sigma_hat^2 = sum((q - mean q)^2)/(n - 1): the mixture presumes a
    unit-second-moment phenotype, which the normal-quantile grid delivers
    for distinct values (the factor is then 1 + O(1/n)) but a heavily tied
    phenotype — binary traits in particular — does not.  Both steps make
    this exactly the intercept-only case of the covariate-adjusted test.

    Tie-averaged grids also acquire a nonzero mean whenever the tied
    groups are unbalanced (a binary trait with unequal case counts), and
    the rearrangement law then carries a linear term along the kernel's
    centered row sums on top of the quadratic one.  Ignoring it
    understates the null variance on rare-variant kernels, so the
    reference law completes the square per eigendirection and evaluates
    the resulting noncentral mixture (plus a normal remainder) instead;
    for distinct-valued phenotypes the grid mean is zero and the central
    mixture is used unchanged.  Cross-checked to track
    ``permutation_pvalue`` to well under 0.01 on average.

    A zero K (possible for n = 2 or a constant similarity) cannot carry
    signal; the test then reports p = 1 with a degenerate-design warning
    instead of failing, so batch pipelines survive tiny strata.  A purely
    additive K (for example a single private variant) centers to zero and
    is reported the same way: no rearrangement of the phenotype can move
    the statistic, so the design genuinely carries no information.  A
    constant phenotype grid is degenerate in the same sense.
    """
    stat = wu_statistic(K, Q)
    ref = _null_reference(K)
    n = K.n_samples
    q = np.asarray(Q.q, dtype=float)
    grid_var = float(np.sum((q - q.mean()) ** 2))
    if ref.spec.lambdas.size == 0 or grid_var == 0.0:
        reason = (
            "K has no nonzero eigenvalues after centering"
            if ref.spec.lambdas.size == 0
            else "the phenotype grid is constant"
        )
        warnings.warn(
            f"degenerate design: {reason}, the test carries no information (p = 1)",
            DegenerateTestWarning,
            stacklevel=2,
        )
        diagnostics = TestDiagnostics(
            trace_residual=0.0, n_truncated=ref.spec.n_truncated, degenerate=True
        )
        return TestResult(
            statistic=stat,
            scaled_eigenvalues=ref.spec.lambdas,
            p_asymptotic=1.0,
            diagnostics=diagnostics,
        )
    p, info, sigma_sq = _reference_tail(ref, q, stat, accuracy=accuracy, max_terms=max_terms)
    diagnostics = TestDiagnostics(
        trace_residual=float(ref.spec.lambdas.sum()),
        n_truncated=ref.spec.n_truncated,
        davies=info,
        sigma_hat=math.sqrt(sigma_sq),
    )
    return TestResult(
        statistic=stat,
        scaled_eigenvalues=ref.spec.lambdas,
        p_asymptotic=p,
        diagnostics=diagnostics,
    )


def permutation_pvalue(
    K,
    Q,
    B: int,
    seed,
    chunk_size: int = 1024,
) -> float:
    """Permutation p-value with the add-one estimator.

    Permutes the entries of Q uniformly B times and counts permuted
    statistics >= the observed one (ties inclusive — the conservative
    convention), returning (1 + count) / (B + 1), which can never be 0.

    Each permutation is the argsort of one row of iid uniform keys, all
    drawn from a single generator in row-major order, so the result
    depends only on (K, Q, B, seed): ``chunk_size`` caps how many rows
    are materialized at once and nothing else. For the covariate-adjusted
    test, pass the projected residual vector as Q (and, when the
    re-centered projected kernel is in play, that kernel as a plain
    array); permuting residuals instead of raw phenotypes is the
    standard simple scheme when covariates are present.
    """
    B = int(B)
    if B < 100:
        raise InputError(f"need at least 100 permutations for a usable p-value, got {B}")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(check_seed(seed))
    kv = K.values if isinstance(K, CenteredWeightMatrix) else np.asarray(K, dtype=float)
    if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise InputError(f"K must be square, got shape {kv.shape}")
    q = Q.q if isinstance(Q, QuantileVector) else np.asarray(Q, dtype=float)
    if q.ndim != 1 or q.size != kv.shape[0]:
        raise InputError(
            f"dimension mismatch: K is {kv.shape[0]}x{kv.shape[0]} but Q has shape {q.shape}"
        )
    observed = float(q @ kv @ q)
    rng = np.random.default_rng(root)
    exceed = 0
    done = 0
    while done < B:
        m = min(int(chunk_size), B - done)
        keys = rng.random((m, q.size))
        block = q[np.argsort(keys, axis=1)]
        stats = ((block @ kv) * block).sum(axis=1)
        exceed += int((stats >= observed).sum())
        done += m
    return (1 + exceed) / (B + 1)
