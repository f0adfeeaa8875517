"""Offline audit of a network's layers with the LP verifier."""

import numpy as np

from . import lp


def _record(layer, kind, W, b, lam=None, margin=None, cutoff=0.0):
    # a layer with cutoff c is alive when max_i z_i > c: audit the shifted system
    res = lp.min_max_margin(lp.LpProblem(W, b))
    rec = {"layer": layer, "kind": kind, "status": res.status,
           "p_star": res.p_star if res.finite else None}
    cert_ok = None
    if lam is not None:
        cert_ok = lp.check_certificate(lam, lp.LpProblem(W, b - cutoff))
        rec["certificate_valid"] = cert_ok
        rec["guaranteed_margin"] = margin
        rec["cutoff"] = cutoff
    never_dead = res.finite and res.p_star > cutoff
    rec["certified"] = bool(never_dead and (cert_ok is None or cert_ok))
    return rec


def audit_network(network):
    """One record per ReLU-bearing layer: LP status, p*, and certificate validity.

    Plain dense layers are checked by the LP alone; dense layers with no
    activation after them (read-outs) are reported with ``"skipped": True``.
    Farkas layers are checked against the stored certificate when the network
    was loaded from a weights file, otherwise against the layer's own. A
    layer with cutoff ``c`` counts as certified when ``p* > c``. Residual
    blocks without a shortcut get an outer record marked
    ``"static_guarantee": False``, which :func:`all_certified` ignores.
    """
    stored = getattr(network, "stored_lambdas", None)
    records = []
    mods = network.modules
    for i, (mod, layer) in enumerate(zip(mods, network.weight_index)):
        lam = None
        if stored is not None and stored[i].size:
            lam = stored[i]
        if mod.kind == "dense":
            followed = next((m for m in mods[i + 1:] if m.kind != "batchnorm"), None)
            if followed is None or followed.kind != "activation":
                records.append({"layer": layer, "kind": "dense", "skipped": True,
                                "certified": True})
                continue
            records.append(_record(layer, "dense", mod.effective_weights(), mod.effective_bias()))
        elif mod.kind == "farkas_dense":
            lam = mod.lambda_ if lam is None else lam
            records.append(_record(layer, "farkas_dense", mod.effective_weights(),
                                   mod.effective_bias(), lam, mod.guaranteed_margin(),
                                   mod.cutoff))
        elif mod.kind == "farkas_residual":
            inner = mod.inner
            records.append(_record(layer, "farkas_residual.inner", inner.effective_weights(),
                                   inner.effective_bias(), inner.lambda_,
                                   inner.guaranteed_margin(), inner.cutoff))
            W, b = mod.outer_system()
            lam = mod.lambda_ if lam is None else lam
            rec = _record(layer, "farkas_residual.outer", W, b, lam,
                          mod.guaranteed_margin(), mod.cutoff)
            if not mod.shortcut:
                # the offset -lam_m * Agg(x) depends on the input: nothing to certify statically
                rec["static_guarantee"] = False
            records.append(rec)
    return records


def all_certified(records):
    """Every record that carries a static guarantee is certified."""
    return all(r["certified"] for r in records if r.get("static_guarantee", True))


def stored_lambda_ok(network):
    """Stored certificates (if any) equal the ones implied by each layer's aggregation."""
    stored = getattr(network, "stored_lambdas", None)
    if stored is None:
        return True
    for mod, lam in zip(network.modules, stored):
        if lam.size and not np.array_equal(lam, mod.lambda_):
            return False
    return True
