"""Central finite-difference verification of tape gradients."""

import numpy as np

from .tape import NonFiniteError, Tape

__all__ = ["gradient_check", "analytic_gradients"]

_EPS = np.finfo(np.float64).eps


def analytic_gradients(loss_fn, params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def gradient_check(loss_fn, params, h=1e-5, return_details=False, max_coords=None, rng=None, kink_tol=None, noise_floor=0.0):
    """Largest relative error between reverse-mode and central-difference gradients.

    ``loss_fn`` takes no arguments and must rebuild the loss from the current
    parameter values (any randomness inside it must be re-seeded per call).
    The relative error of one coordinate is |a - n| / max(|a|, |n|, 1e-8).
    With ``max_coords`` only that many randomly chosen coordinates of each
    parameter are perturbed.

    ``kink_tol`` skips coordinates whose forward and backward one-sided
    differences disagree by more than that relative amount: the step then
    straddles a kink (LeakyReLU, clip) and the central difference is not a
    derivative.  The test never looks at the analytic gradient, so it cannot
    hide a wrong one.  Details report how many coordinates were skipped.

    The difference quotient cannot resolve gradients below its rounding
    noise eps * |f| / h.  ``noise_floor`` raises the denominator of the
    relative error to that many times the noise, so coordinates with
    gradients near the noise are judged by absolute error instead.
    """
    analytic = analytic_gradients(loss_fn, params)
    rng = rng if rng is not None else np.random.default_rng(0)
    f0 = float(loss_fn().data) if kink_tol is not None else None
    worst = 0.0
    where = None
    checked = skipped = 0
    for k, (p, ga) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        coords = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fp = float(loss_fn().data)
            flat[i] = old - h
            fm = float(loss_fn().data)
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError("loss became non-finite during the check")
            if kink_tol is not None:
                fwd, bwd = (fp - f0) / h, (f0 - fm) / h
                if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), 1e-8):
                    skipped += 1
                    continue
            checked += 1
            num = (fp - fm) / (2.0 * h)
            noise = _EPS * max(abs(fp), abs(fm)) / h
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-8, noise_floor * noise)
            if err > worst:
                worst, where = err, (k, i, gflat[i], num)
    if return_details:
        return worst, {"where": where, "checked": checked, "skipped": skipped}
    return worst
