"""Alternating optimization of the amplitude-constrained beamformer.

The digital beamformer is refit by weighted-MMSE iterations in a whitened
coordinate system where the transmit power is an ordinary vector norm; the
holographic amplitudes follow projected gradient ascent on [0, 1]^N with the
power renormalization folded into the step.  Closed-form sum-rate gradients
live here too, in the convention G = dR/dRe(X) + 1j*dR/dIm(X) so a central
finite difference on the real and imaginary parts reproduces them directly.
"""

import numpy as np
from dataclasses import dataclass, field
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .precoding import BeamformerSet, normalize_power
from .surface import sum_rate_equiv

LN2 = np.log(2.0)


def _sinr_terms(H, a, V_e, noise_var):
    s = (np.asarray(a, dtype=float)[:, None] * np.asarray(H)).conj().T @ np.asarray(V_e)
    p = np.abs(s) ** 2
    sig = np.diag(p).copy()
    denom = p.sum(axis=1) - sig + noise_var
    return s, sig, denom


def _rate_coeffs(sig, denom):
    """coef[m, j]: d(sum rate)/d|s_mj|^2 up to the 1/ln2 factor.

    The matched entry of user m carries 1/(denom_m + sig_m); every leakage
    entry carries the negative factor sig_m / (denom_m * (denom_m + sig_m)).
    """
    k = sig.size
    own = 1.0 / (denom + sig)
    cross = -sig / (denom * (denom + sig))
    coef = np.tile(cross[:, None], (1, k))
    coef[np.arange(k), np.arange(k)] = own
    return coef


def grad_sum_rate_Ve(H, a, V_e, noise_var):
    """Gradient of the sum rate with respect to the equivalent beamformer."""
    s, sig, denom = _sinr_terms(H, a, V_e, noise_var)
    coef = _rate_coeffs(sig, denom)
    h_eff = np.asarray(a, dtype=float)[:, None] * np.asarray(H)
    return (2.0 / LN2) * (h_eff @ (coef * s))


def grad_sum_rate_a(H, a, V_e, noise_var):
    """Gradient of the sum rate with respect to the holographic amplitudes."""
    H = np.asarray(H)
    V_e = np.asarray(V_e)
    s, sig, denom = _sinr_terms(H, a, V_e, noise_var)
    t = _rate_coeffs(sig, denom) * s.conj()
    inner = V_e @ t.T
    return (2.0 / LN2) * np.einsum("nk,nk->n", H.conj(), inner).real


@dataclass
class AoOptions:
    max_outer_iters: int = 100
    tol: float = 1e-6
    a_steps: int = 20
    armijo_slope: float = 1e-4
    backtrack_shrink: float = 0.5
    max_backtracks: int = 30
    initial_step: float = 1.0
    digital_inner_iters: int = 30
    polish: bool = True
    polish_maxiter: int = 1000
    polish_rounds: int = 3
    restarts: int = 1
    restart_seed: int = 0


@dataclass
class AoResult:
    """Best iterate found plus convergence bookkeeping."""

    beams: BeamformerSet
    sum_rate_bits: float
    iterations: int
    converged: bool
    trajectory: np.ndarray = field(default=None)


def _whitened_channels(H, a, M_p):
    """Cholesky factor of M_p^H diag(a)^2 M_p and the whitened user channels."""
    M = np.asarray(M_p)
    masked = np.asarray(a, dtype=float)[:, None] * M
    gram = masked.conj().T @ masked
    ridge = 0.0
    base = max(np.abs(np.diag(gram)).max(), 1.0)
    for _ in range(6):
        try:
            lc = np.linalg.cholesky(gram + ridge * np.eye(gram.shape[0]))
            break
        except np.linalg.LinAlgError:
            ridge = max(ridge * 100.0, 1e-14 * base)
    else:
        raise np.linalg.LinAlgError("amplitude-masked pattern lost rank")
    f = M.conj().T @ (np.asarray(a, dtype=float)[:, None] * np.asarray(H))
    f_w = solve_triangular(lc, f, lower=True)
    return lc, f_w


def _power_constrained_solve(evals, phi_basis, p_max):
    """Pick mu >= 0 so || (A + mu I)^{-1} rhs ||_F^2 == p_max (or < with mu=0)."""
    phi = np.sum(np.abs(phi_basis) ** 2, axis=1)

    def power(mu):
        return float(np.sum(phi / (evals + mu) ** 2))

    floor = max(evals.min(), 0.0)
    if floor > 0 and power(0.0) <= p_max:
        return 0.0
    total = float(np.sum(phi))
    hi = np.sqrt(total / p_max) + 1.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if power(mid) > p_max:
            lo = mid
        else:
            hi = mid
    return hi


def _wmmse_digital(H, a, M_p, V_init, noise_var, p_max, n_iters):
    """Refit the digital beamformer at fixed amplitudes; returns V with power p_max."""
    lc, f_w = _whitened_channels(H, a, M_p)
    k = f_w.shape[1]
    if V_init is not None:
        vt = lc.conj().T @ V_init
    else:
        norms = np.linalg.norm(f_w, axis=0)
        norms = np.where(norms > 0, norms, 1.0)
        vt = f_w / norms * np.sqrt(p_max / k)
    prev = -np.inf
    for _ in range(n_iters):
        r = f_w.conj().T @ vt
        recv_pow = np.sum(np.abs(r) ** 2, axis=1) + noise_var
        u = np.diag(r) / recv_pow
        mse = 1.0 - (np.abs(np.diag(r)) ** 2) / recv_pow
        w = 1.0 / np.maximum(mse, 1e-14)
        alpha = w * np.abs(u) ** 2
        A = (f_w * alpha) @ f_w.conj().T
        rhs = f_w * (w * u.conj())
        evals, evecs = np.linalg.eigh(A)
        evals = np.maximum(evals, 0.0)
        phi_basis = evecs.conj().T @ rhs
        mu = _power_constrained_solve(evals, phi_basis, p_max)
        vt = evecs @ (phi_basis / (evals + mu)[:, None])
        # cheap monitor on the whitened rate to stop early
        r2 = f_w.conj().T @ vt
        den = np.sum(np.abs(r2) ** 2, axis=1) - np.abs(np.diag(r2)) ** 2 + noise_var
        rate = float(np.sum(np.log2(1.0 + np.abs(np.diag(r2)) ** 2 / den)))
        if abs(rate - prev) <= 1e-11 * max(1.0, abs(rate)):
            break
        prev = rate
    v = solve_triangular(lc.conj().T, vt, lower=False)
    return normalize_power(v, a, M_p, p_max)


def _amplitude_step(H, a, V, M_p, noise_var, p_max, opts):
    """Projected gradient ascent on a with the power scaling folded in."""
    M = np.asarray(M_p)
    V = np.asarray(V)
    V_e = M @ V
    rate = sum_rate_equiv(H, a, V_e, noise_var)
    step = opts.initial_step
    for _ in range(opts.a_steps):
        g_a = grad_sum_rate_a(H, a, V_e, noise_var)
        g_v = grad_sum_rate_Ve(H, a, V_e, noise_var)
        rho = float(np.vdot(g_v, V_e).real)
        row_pow = np.sum(np.abs(V_e) ** 2, axis=1)
        g_eff = g_a - (rho / p_max) * a * row_pow
        accepted = False
        for _ in range(opts.max_backtracks):
            cand = np.clip(a + step * g_eff, 0.0, 1.0)
            d = cand - a
            if np.linalg.norm(d) <= 1e-15 * max(1.0, np.linalg.norm(a)):
                break
            masked = np.linalg.norm(cand[:, None] * V_e)
            if masked <= 0:
                step *= opts.backtrack_shrink
                continue
            c = np.sqrt(p_max) / masked
            cand_rate = sum_rate_equiv(H, cand, c * V_e, noise_var)
            if cand_rate >= rate + opts.armijo_slope * float(g_eff @ d):
                a = cand
                V_e = c * V_e
                V = c * V
                rate = cand_rate
                step = min(step * 2.0, 1e6)
                accepted = True
                break
            step *= opts.backtrack_shrink
        if not accepted:
            break
    return a, V, rate


def _scale_free_grad(H, a, V, M, noise_var, p_max):
    """Value and gradient of the power-normalized sum rate in (a, V).

    The power constraint is folded in by evaluating at the exactly rescaled
    beamformer, which makes the objective scale invariant in V; stationary
    points of this function under the box constraint on a are KKT points of
    the constrained problem with lambda = rho / (2 p_max).
    """
    V_e = M @ V
    q = np.sum(np.abs(V_e) ** 2, axis=1)
    s2 = float((a ** 2) @ q)
    if s2 <= 0 or not np.isfinite(s2):
        return None
    c = np.sqrt(p_max / s2)
    V_f = c * V_e
    rate = sum_rate_equiv(H, a, V_f, noise_var)
    g_af = grad_sum_rate_a(H, a, V_f, noise_var)
    g_vf = grad_sum_rate_Ve(H, a, V_f, noise_var)
    rho = float(np.vdot(g_vf, V_f).real)
    g_a = g_af - (rho / s2) * a * q
    g_v = c * (M.conj().T @ g_vf) - (rho / s2) * (M.conj().T @ ((a ** 2)[:, None] * V_e))
    return rate, g_a, g_v


def _joint_polish(H, a, V, M, noise_var, p_max, maxiter):
    """Sharpen the alternating-optimization endpoint with L-BFGS-B.

    Optimizes amplitudes and digital beamformer jointly on the normalized
    objective; the line search only ever accepts improvements, so the rate
    cannot drop below the endpoint it starts from.
    """
    n_t = a.size
    shape_v = V.shape
    nv_ = shape_v[0] * shape_v[1]

    def split(x):
        aa = x[:n_t]
        vv = (x[n_t:n_t + nv_] + 1j * x[n_t + nv_:]).reshape(shape_v)
        return aa, vv

    def fun(x):
        aa, vv = split(x)
        out = _scale_free_grad(H, aa, vv, M, noise_var, p_max)
        if out is None:
            return 1e9, np.zeros_like(x)
        rate, g_a, g_v = out
        grad = np.concatenate([g_a, g_v.real.ravel(), g_v.imag.ravel()])
        return -rate, -grad

    x0 = np.concatenate([a, V.real.ravel(), V.imag.ravel()])
    bounds = [(0.0, 1.0)] * n_t + [(None, None)] * (2 * nv_)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-12,
                            "maxcor": 30})
    a_new, v_new = split(res.x)
    a_new = np.clip(a_new, 0.0, 1.0)
    v_new = normalize_power(v_new, a_new, M, p_max)
    rate_new = sum_rate_equiv(H, a_new, M @ v_new, noise_var)
    return a_new, v_new, rate_new


def _ao_from(H, M, a, p_max, noise_var, opts):
    """One alternating trajectory from the given initial amplitudes."""
    V = normalize_power(M.conj().T @ H, a, M, p_max)
    rate = sum_rate_equiv(H, a, M @ V, noise_var)
    traj = [rate]
    converged = False
    iterations = 0
    for it in range(opts.max_outer_iters):
        iterations = it + 1
        V_new = _wmmse_digital(H, a, M, V, noise_var, p_max, opts.digital_inner_iters)
        new_rate = sum_rate_equiv(H, a, M @ V_new, noise_var)
        if new_rate >= rate - 1e-12:
            V = V_new
            rate = new_rate
        a, V, rate = _amplitude_step(H, a, V, M, noise_var, p_max, opts)
        traj.append(rate)
        if traj[-1] - traj[-2] < opts.tol * max(1.0, abs(traj[-2])):
            converged = True
            break
    if opts.polish:
        # restart a few times; a fresh quasi-Newton memory often escapes the
        # flat tail where the first run hits its function-change floor
        for _ in range(max(opts.polish_rounds, 1)):
            a_p, v_p, rate_p = _joint_polish(H, a, V, M, noise_var, p_max,
                                             opts.polish_maxiter)
            if rate_p >= rate:
                gain = rate_p - rate
                a, V, rate = a_p, v_p, rate_p
                traj.append(rate)
                if gain <= 1e-12 * max(1.0, abs(rate)):
                    break
            else:
                break
    beams = BeamformerSet(a=a, V=V, V_e=M @ V)
    return AoResult(beams=beams, sum_rate_bits=rate, iterations=iterations,
                    converged=converged, trajectory=np.asarray(traj))


def ao_solve(H, M_p, p_max, noise_var, opts=None):
    """Alternate digital refits and amplitude ascent until the rate stalls.

    The first trajectory starts from all-on amplitudes and a matched-filter
    beamformer; opts.restarts > 1 adds seeded random-amplitude starts and the
    highest-rate trajectory wins.  The rate is nondecreasing across iterations
    by construction; if the improvement never falls below opts.tol the best
    iterate is returned with converged=False.
    """
    opts = opts or AoOptions()
    H = np.asarray(H)
    M = np.asarray(M_p)
    n_t = H.shape[0]
    best = _ao_from(H, M, np.ones(n_t), p_max, noise_var, opts)
    for run in range(1, max(opts.restarts, 1)):
        rng = np.random.default_rng([opts.restart_seed, run])
        cand = _ao_from(H, M, rng.uniform(0.0, 1.0, n_t), p_max, noise_var, opts)
        if cand.sum_rate_bits > best.sum_rate_bits:
            best = cand
    return best


@dataclass
class KktReport:
    """First-order optimality diagnostics at a feasible (a, V) pair."""

    lam: float
    mu: np.ndarray
    nu: np.ndarray
    stationarity_v: float
    stationarity_a: float
    stationarity_total: float
    grad_norm: float
    comp_power: float
    comp_low: float
    comp_high: float
    power_gap: float
    act_tol: float

    @property
    def rel_stationarity(self):
        return self.stationarity_total / max(self.grad_norm, 1e-300)


def _vec_real(x):
    return np.concatenate([x.real.ravel(), x.imag.ravel()])


def _clipped_a_residual(r, is_low, is_high):
    """Amplitude-block residual after the optimal bound multipliers.

    Nonnegative bound duals can only push a low-set residual up toward zero
    from below and a high-set residual down toward zero from above, so the
    leftover is a one-sided clip per coordinate.
    """
    out = r.copy()
    out[is_low] = np.maximum(r[is_low], 0.0)
    out[is_high] = np.minimum(r[is_high], 0.0)
    return out


def _fit_power_dual(gv_vec, pv_vec, g_a, p_a, is_low, is_high):
    """Exact nonnegative multiplier for the power constraint.

    The profiled objective ||gv - lam pv||^2 + sum_i clip_i(g_a - lam p_a)^2
    is piecewise quadratic and convex in lam, with kinks only where an
    active-bound coordinate's residual crosses zero; the minimum is found by
    scanning those breakpoints plus each segment's interior stationary point.
    """

    def value(lam):
        ra = _clipped_a_residual(g_a - lam * p_a, is_low, is_high)
        return float(np.sum((gv_vec - lam * pv_vec) ** 2) + np.sum(ra ** 2))

    bounded = is_low | is_high
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = np.where(p_a != 0, g_a / p_a, np.inf)
    bp = np.unique(bp[bounded & (bp > 0) & np.isfinite(bp)])
    edges = np.concatenate([[0.0], bp, [np.inf]])
    cands = [0.0] + bp.tolist()
    for left, right in zip(edges[:-1], edges[1:]):
        mid = left + min(1.0, (right - left)) * 0.5 if np.isfinite(right) \
            else left + 1.0
        r_mid = g_a - mid * p_a
        live = ~bounded | (is_low & (r_mid > 0)) | (is_high & (r_mid < 0))
        c2 = float(np.sum(pv_vec ** 2) + np.sum(p_a[live] ** 2))
        c1 = float(np.sum(gv_vec * pv_vec) + np.sum(g_a[live] * p_a[live]))
        if c2 > 0:
            cands.append(float(min(max(c1 / c2, left), right)))
    return min(cands, key=value)


def kkt_residuals(H, M_p, a, V, p_max, noise_var, act_tol=1e-6):
    """Fit nonnegative multipliers exactly and report the residual norms.

    The multiplier for the power constraint enters only when the constraint
    is active; bound multipliers are fitted on the active sets identified by
    act_tol.  Residual norms cover the digital-beamformer block and the
    amplitude block of the Lagrangian gradient.  The fit exploits the
    structure of the constraint gradients (one dense power column plus
    disjoint signed unit vectors), so the reported norms are exact minima
    and stable under relabelings.
    """
    # the gradient chain runs in extended precision: endpoint beamformers can
    # carry large digital norms against tiny amplitudes, and plain double
    # would let reassociation noise swamp the small fitted residuals
    H = np.asarray(H, dtype=np.clongdouble)
    M = np.asarray(M_p, dtype=np.clongdouble)
    V = np.asarray(V, dtype=np.clongdouble)
    a = np.asarray(a, dtype=float)
    V_e = M @ V
    g_e = grad_sum_rate_Ve(H, a, V_e, noise_var)
    g_v = M.conj().T @ g_e
    p_v = 2.0 * (M.conj().T @ ((a ** 2)[:, None] * V_e))
    g_a = grad_sum_rate_a(H, a, V_e, noise_var)
    row_pow = np.sum(np.abs(V_e) ** 2, axis=1)
    p_a = 2.0 * a * row_pow
    power_now = float(np.sum((a ** 2) * row_pow))
    power_gap = power_now - p_max
    power_active = abs(power_gap) <= 1e-8 * p_max

    n_t = a.size
    is_low = a <= act_tol
    is_high = a >= 1.0 - act_tol
    gv_vec = _vec_real(g_v)
    target = np.concatenate([gv_vec, g_a])
    if power_active:
        lam = _fit_power_dual(gv_vec, _vec_real(p_v), g_a, p_a,
                              is_low, is_high)
    else:
        lam = 0.0
    r_a_pre = g_a - lam * p_a
    mu = np.where(is_low, np.maximum(-r_a_pre, 0.0), 0.0).astype(float)
    nu = np.where(is_high, np.maximum(r_a_pre, 0.0), 0.0).astype(float)
    resid_v = gv_vec - lam * _vec_real(p_v)
    resid_a = _clipped_a_residual(r_a_pre, is_low, is_high)
    resid = np.concatenate([resid_v, resid_a])
    r_v = float(np.linalg.norm(resid_v))
    r_a = float(np.linalg.norm(resid_a))
    return KktReport(
        lam=lam, mu=mu, nu=nu,
        stationarity_v=r_v, stationarity_a=r_a,
        stationarity_total=float(np.linalg.norm(resid)),
        grad_norm=float(np.linalg.norm(target)),
        comp_power=abs(lam * power_gap),
        comp_low=float(np.max(mu * a) if n_t else 0.0),
        comp_high=float(np.max(nu * (1.0 - a)) if n_t else 0.0),
        power_gap=power_gap, act_tol=act_tol)


def zero_forcing_rate(H, M_p, p_max, noise_var):
    """Sum rate of a fully-on, zero-forcing digital beamformer (control/baseline)."""
    H = np.asarray(H)
    M = np.asarray(M_p)
    if H.shape[1] > M.shape[1]:
        raise ValueError("zero forcing needs at least as many feeds as users")
    a = np.ones(H.shape[0])
    f = M.conj().T @ H
    V = f @ np.linalg.inv(f.conj().T @ f)
    V = normalize_power(V, a, M, p_max)
    return sum_rate_equiv(H, a, M @ V, noise_var)
