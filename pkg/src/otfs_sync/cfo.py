"""Carrier-frequency-offset estimation from the cyclic-prefixed pilot.

Two stages:

* ``coarse_cfo`` reads the CFO from the mean phase advance between
  adjacent pilot slots (ambiguity window of one Doppler-axis width N);
* ``fine_cfo`` refines it by maximizing a maximum-likelihood cost built
  on a generalized complex-exponential basis expansion (GCE-BEM) of the
  channel taps over the pilot region.

The ML cost projects the de-rotated pilot observation onto the column
space of the model matrix G.  Because every G column factors into a
slot-direction profile times a delay-direction profile, the projector is
exactly banded with nonzero diagonals only at multiples of L, which
yields an equivalent trigonometric-polynomial form of the cost whose
per-grid-point work is independent of L.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .modem import OtfsParams
from .pilot import PcpSpec, pilot_dt_slots
from .timing import ToEstimate, fold_offset

logger = logging.getLogger(__name__)

#: Condition-number ceiling for the normal equations before the ridge
#: fallback engages.
COND_LIMIT = 1e12
RIDGE_SCALE = 1e-10


class SingularModelError(Exception):
    """The BEM model matrix cannot be inverted for this geometry."""


@dataclass
class OpCounter:
    """Running complex-multiply count for cost evaluations."""

    multiplies: int = 0

    def add(self, count: int) -> None:
        self.multiplies += int(count)


@dataclass
class CfoEstimate:
    """Coarse and fine CFO estimates plus the evaluated cost samples."""

    eps_coarse: float
    eps_fine: float
    cost_trace: np.ndarray


def coarse_cfo(received: np.ndarray, to: ToEstimate, params: OtfsParams,
               spec: PcpSpec) -> float:
    """Slot-to-slot phase-advance CFO estimate.

    Averages, over the 2L-1 energy-bearing pilot rows located by the
    timing stage, the angle of the lag-M correlation after removing the
    pilot's designed per-slot phase step 2*pi*n_p/N.  The per-row angles
    are taken on the branch centered at the angle of the summed row
    correlations: that magnitude-weighted consensus sits within the
    cluster of row angles, so recentering keeps every row away from the
    +-pi branch cut no matter where the CFO falls inside the ambiguity
    window.  Averaging raw angles instead would mix wrapped and
    unwrapped rows whenever the true phase advance lands near +-pi.
    The result is the CFO modulo N, reported in [-N/2, N/2).

    Rows whose correlation magnitude is negligible are skipped with a
    warning.  The window holds the 2L-1 rows starting at the delay-metric
    peak (row mprime_p - L), which is where the first energy-bearing
    pilot row lands; the row just past the window carries no pilot
    energy and is excluded.
    """
    received = np.asarray(received)
    m, n, length = params.m, params.n, spec.length
    rows = np.arange(to.mprime_p - length, to.mprime_p + length - 1)
    base = (to.theta_t_hat + np.arange(n - 1))[:, None] * m
    idx = base + rows[None, :]
    if idx.min() < 0 or idx.max() + m >= received.size:
        raise ValueError(
            "buffer too short for the coarse CFO window at the estimated "
            "timing offset"
        )
    corr = (np.conj(received[idx]) * received[idx + m]).sum(axis=0)
    corr = corr * np.exp(-2j * np.pi * spec.n_p / n)
    mags = np.abs(corr)
    keep = mags > 1e-12 * max(mags.max(), 1e-300)
    if not np.all(keep):
        logger.warning(
            "coarse CFO: skipping %d pilot rows with negligible "
            "correlation magnitude", int(np.sum(~keep)))
    if not np.any(keep):
        raise ValueError("coarse CFO: no pilot rows with usable energy")
    pivot = float(np.angle(np.sum(corr[keep])))
    spread = np.angle(corr[keep] * np.exp(-1j * pivot))
    upsilon = pivot + float(np.mean(spread))
    eps = n / (2.0 * np.pi) * upsilon
    return float(fold_offset(eps, n))


def bem_order(k: int, nu_max: float, params: OtfsParams) -> int:
    """Model order Q = ceil(2 K nu_max M N Ts) + 1.

    One basis tone per resolvable Doppler bin of the K-times oversampled
    block, covering the band +-nu_max, plus the DC tone.
    """
    if k < 1:
        raise ValueError("oversampling factor k must be >= 1")
    if nu_max < 0:
        raise ValueError("nu_max must be >= 0")
    return int(math.ceil(2.0 * k * nu_max * params.mn * params.ts)) + 1


@dataclass
class BemModel:
    """Complex-exponential basis over the pilot samples of one block.

    ``freqs`` are the tone frequencies in cycles per sample,
    (q - floor(Q/2)) / (K M N) for q = 0 .. Q-1; ``pilot_idx`` holds the
    block-relative stream index of every pilot sample, shape (N, L); and
    ``basis`` is the (N L, Q) evaluation of the tones at those samples in
    pilot-vector order.
    """

    k: int
    q: int
    nu_max: float
    params: OtfsParams
    freqs: np.ndarray
    pilot_idx: np.ndarray
    basis: np.ndarray
    literal_exponent: bool = False

    def evaluate(self, indices: np.ndarray) -> np.ndarray:
        """Tone matrix at arbitrary sample indices, shape (len, Q)."""
        factor = 2.0 if self.literal_exponent else 1.0
        return np.exp(2j * np.pi * factor
                      * np.asarray(indices, dtype=float)[:, None]
                      * self.freqs[None, :])


def pilot_sample_indices(params: OtfsParams, spec: PcpSpec) -> np.ndarray:
    """Block-relative stream indices of the protected pilot rows.

    Row a of slot l sits at Lcp + l M + m_p + a; shape (N, L).
    """
    return (params.lcp + np.arange(params.n)[:, None] * params.m
            + spec.m_p + np.arange(spec.length)[None, :])


def extract_pilot(received: np.ndarray, block_start: int,
                  params: OtfsParams, spec: PcpSpec) -> np.ndarray:
    """Stack the received pilot rows of the block at ``block_start``.

    Returns the length-N*L vector ordered slot-major (slot 0 rows first).
    """
    received = np.asarray(received)
    idx = block_start + pilot_sample_indices(params, spec)
    if idx.min() < 0 or idx.max() >= received.size:
        raise ValueError(
            f"pilot rows of the block at {block_start} fall outside the "
            f"buffer of {received.size} samples"
        )
    return received[idx].ravel()


def build_bem(params: OtfsParams, spec: PcpSpec, k: int, nu_max: float,
              q: int | None = None,
              literal_exponent: bool = False) -> BemModel:
    """Construct the GCE-BEM tone set for one block's pilot region."""
    if q is None:
        q = bem_order(k, nu_max, params)
    if q < 1:
        raise ValueError("model order q must be >= 1")
    freqs = (np.arange(q) - q // 2) / (k * params.mn)
    idx = pilot_sample_indices(params, spec)
    model = BemModel(k=k, q=q, nu_max=nu_max, params=params, freqs=freqs,
                     pilot_idx=idx, basis=np.empty(0),
                     literal_exponent=literal_exponent)
    model.basis = model.evaluate(idx.ravel().astype(float))
    return model


def build_g(params: OtfsParams, spec: PcpSpec, bem: BemModel) -> np.ndarray:
    """Model matrix G mapping BEM coefficients to noiseless pilot rows.

    G[l L + a, ell Q + q] = p_l[(a - ell) mod L] * B[k_{l,a}, q], where
    p_l is the transmitted delay-time pilot of slot l and k_{l,a} the
    stream index of pilot row a in slot l.  The cyclic shift reflects the
    delay-domain prefix: within the protected rows the channel acts
    circularly on the pilot.  Shape (N L, L Q).
    """
    n, length, q = params.n, spec.length, bem.q
    if n < q:
        raise SingularModelError(
            f"model matrix is rank deficient: Q={q} basis tones need at "
            f"least Q slots, got N={n} (L={length})"
        )
    slots = pilot_dt_slots(spec, params)
    shift = (np.arange(length)[:, None] - np.arange(length)[None, :]) % length
    shifted = slots[:, shift]
    basis = bem.basis.reshape(n, length, q)
    g4 = shifted[:, :, :, None] * basis[:, :, None, :]
    return g4.reshape(n * length, length * q)


def projection(g: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto col(G) with a conditioning guard.

    Uses a thin QR factorization; if cond(G^H G) exceeds COND_LIMIT a
    diagonal ridge RIDGE_SCALE * trace / (L Q) is added to the normal
    equations and the (then only approximately idempotent) projector is
    returned with a logged warning.
    """
    q_thin, r_fac = np.linalg.qr(g)
    cond = np.linalg.cond(r_fac) ** 2
    if not np.isfinite(cond) or cond > COND_LIMIT:
        gram = g.conj().T @ g
        ridge = RIDGE_SCALE * np.trace(gram).real / gram.shape[0]
        logger.warning(
            "projection: cond(G^H G) = %.3e exceeds %.1e; applying "
            "diagonal ridge %.3e", cond, COND_LIMIT, ridge)
        gram[np.diag_indices_from(gram)] += ridge
        return g @ np.linalg.solve(gram, g.conj().T)
    return q_thin @ q_thin.conj().T


@dataclass
class MlWorkspace:
    """Precomputed per-geometry objects for the ML cost.

    Built once per (params, spec, bem) and reused across trials: the
    model matrix, its projector, and the QR factors used for coefficient
    solves.  ``c_hat`` is filled by ``estimate_channel_bem``.
    """

    params: OtfsParams
    spec: PcpSpec
    bem: BemModel
    g: np.ndarray
    lam: np.ndarray
    qr_q: np.ndarray
    qr_r: np.ndarray
    c_hat: np.ndarray | None = None


def build_workspace(params: OtfsParams, spec: PcpSpec,
                    bem: BemModel) -> MlWorkspace:
    g = build_g(params, spec, bem)
    lam = projection(g)
    q_thin, r_fac = np.linalg.qr(g)
    return MlWorkspace(params=params, spec=spec, bem=bem, g=g, lam=lam,
                       qr_q=q_thin, qr_r=r_fac)


def _gamma_phases(bem: BemModel, eps_tilde: float) -> np.ndarray:
    """Diagonal of Gamma(eps): e^{j 2 pi eps k / (M N)} at pilot samples."""
    return np.exp(2j * np.pi * eps_tilde
                  * bem.pilot_idx.ravel() / bem.params.mn)


def ml_cost(r_p: np.ndarray, lam: np.ndarray, bem: BemModel,
            eps_tilde: float, counter: OpCounter | None = None) -> float:
    """Matrix form of the ML cost, the ground truth.

    g(eps) = r_p^H Gamma(eps) Lambda Gamma^H(eps) r_p; maximizing over
    eps picks the trial CFO whose de-rotation leaves the observation
    closest to the BEM model's column space.
    """
    v = np.conj(_gamma_phases(bem, eps_tilde)) * r_p
    nl = r_p.size
    if counter is not None:
        counter.add(nl * nl + 2 * nl)
    return float(np.real(np.vdot(v, lam @ v)))


def beta_coefficients(r_p: np.ndarray, lam: np.ndarray, params: OtfsParams,
                      counter: OpCounter | None = None) -> np.ndarray:
    """Banded-projector reduction of the cost to N complex coefficients.

    beta[m] = sum_k Lambda[k + m L, k] conj(r_p[k + m L]) r_p[k] for
    m = 0 .. N-1.  Lambda is nonzero only on diagonals at multiples of L
    (its slot-profile factor is an N x N projector, its delay factor the
    identity), so these N numbers carry the whole quadratic form.
    """
    nl = r_p.size
    length = nl // params.n
    beta = np.empty(params.n, dtype=complex)
    for m_lag in range(params.n):
        off = m_lag * length
        diag = np.diagonal(lam, offset=-off)
        beta[m_lag] = np.sum(diag * np.conj(r_p[off:]) * r_p[:nl - off])
        if counter is not None:
            counter.add(2 * (nl - off))
    return beta


def ml_cost_fast(r_p: np.ndarray, lam: np.ndarray, bem: BemModel,
                 eps_tilde: float, beta: np.ndarray | None = None,
                 counter: OpCounter | None = None) -> float:
    """Trigonometric-polynomial form of the ML cost.

    g(eps) = -beta[0] + 2 Re sum_{m=0}^{N-1} beta[m] e^{j 2 pi m eps / N}.

    With beta precomputed, each grid point costs N complex multiplies
    regardless of L, versus (N L)^2 for the matrix form.
    """
    params = bem.params
    if beta is None:
        beta = beta_coefficients(r_p, lam, params, counter=counter)
    phases = np.exp(2j * np.pi * np.arange(params.n) * eps_tilde / params.n)
    if counter is not None:
        counter.add(params.n)
    return float(-beta[0].real + 2.0 * np.real(beta @ phases))


def fine_cfo(r_p: np.ndarray, workspace: MlWorkspace, eps_coarse: float,
             half_width: float = 0.5, coarse_step: float = 1e-2,
             fine_step: float = 1e-4, use_fast: bool = True,
             counter: OpCounter | None = None) -> CfoEstimate:
    """Two-stage grid maximization of the ML cost around the coarse CFO.

    Stage one scans eps_coarse +- half_width at coarse_step; stage two
    rescans one coarse step around the stage-one peak at fine_step.  All
    evaluated (eps, cost) pairs are kept in ``cost_trace`` in evaluation
    order.  A peak on the stage-one boundary logs a warning since the
    true CFO may sit outside the searched range.
    """
    params, bem, lam = workspace.params, workspace.bem, workspace.lam
    beta = beta_coefficients(r_p, lam, params, counter=counter) \
        if use_fast else None

    def evaluate(grid: np.ndarray) -> np.ndarray:
        if use_fast:
            return np.array([
                ml_cost_fast(r_p, lam, bem, e, beta=beta, counter=counter)
                for e in grid
            ])
        return np.array([
            ml_cost(r_p, lam, bem, e, counter=counter) for e in grid
        ])

    steps = int(round(half_width / coarse_step))
    grid1 = eps_coarse + np.arange(-steps, steps + 1) * coarse_step
    costs1 = evaluate(grid1)
    best1 = int(np.argmax(costs1))
    if best1 == 0 or best1 == grid1.size - 1:
        logger.warning(
            "fine CFO: cost peak on the search boundary at %.4f; the true "
            "offset may lie outside +-%.2f of the coarse estimate",
            grid1[best1], half_width)
    steps2 = int(round(coarse_step / fine_step))
    grid2 = grid1[best1] + np.arange(-steps2, steps2 + 1) * fine_step
    costs2 = evaluate(grid2)
    eps_fine = float(grid2[int(np.argmax(costs2))])
    trace = np.column_stack([
        np.concatenate([grid1, grid2]),
        np.concatenate([costs1, costs2]),
    ])
    return CfoEstimate(eps_coarse=float(eps_coarse), eps_fine=eps_fine,
                       cost_trace=trace)


def estimate_channel_bem(r_p: np.ndarray, workspace: MlWorkspace,
                         eps_hat: float,
                         block_start: int = 0) -> np.ndarray:
    """Least-squares BEM coefficients after CFO de-rotation.

    c_hat = (G^H G)^{-1} G^H Gamma^H(eps_hat) r_p, solved through the
    cached QR factors.  ``block_start`` enters only as the absolute
    position of the block in the observation buffer so the de-rotation
    phase matches the samples' true indices; leaving it zero estimates
    the taps up to a constant phase.
    """
    bem = workspace.bem
    rel = np.conj(_gamma_phases(bem, eps_hat)) * r_p
    if block_start:
        rel = rel * np.exp(-2j * np.pi * eps_hat * block_start
                           / bem.params.mn)
    c_hat = np.linalg.solve(workspace.qr_r, workspace.qr_q.conj().T @ rel)
    workspace.c_hat = c_hat
    return c_hat


def bem_reconstruct(c_hat: np.ndarray, bem: BemModel,
                    indices: np.ndarray) -> np.ndarray:
    """Tap gains implied by BEM coefficients at the given sample indices.

    Returns shape (L, len(indices)): h[ell, j] = sum_q c[ell Q + q]
    B[indices[j], q].
    """
    tones = bem.evaluate(np.asarray(indices, dtype=float))
    length = c_hat.size // bem.q
    return c_hat.reshape(length, bem.q) @ tones.T


def bem_fit_nmse(taps: np.ndarray, bem: BemModel) -> float:
    """NMSE of the best BEM fit to known tap gains over the pilot region.

    ``taps`` has shape (L, duration); each tap's trajectory at the pilot
    sample indices is least-squares fitted onto the tone set, and the
    pooled residual power over signal power is returned.  This measures
    the expressiveness of the basis, independent of any estimator.
    """
    idx = bem.pilot_idx.ravel()
    targets = taps[:, idx].T
    coef, *_ = np.linalg.lstsq(bem.basis, targets, rcond=None)
    resid = bem.basis @ coef - targets
    return float(np.sum(np.abs(resid) ** 2) / np.sum(np.abs(targets) ** 2))
