"""Figure rendering for the CLI report path.

Every command that emits CSV tables can also render the matching figures to
PNG files next to them.  Figures are intentionally plain: one axes, grid on,
no styling beyond distinguishable markers per policy.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_POLICY_STYLE = {
    "periodic": dict(color="tab:blue", marker="o", label="periodic"),
    "threshold": dict(color="tab:red", marker="s", label="threshold"),
    "ideal": dict(color="tab:green", marker="*", label="ideal bound"),
}


def _new_axes(xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.4)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_run(records, slot_s, outdir):
    fig, ax = _new_axes("time [s]", "positioning error [m]")
    t = [r.slot * slot_s for r in records]
    ax.plot(t, [r.network_error for r in records], lw=0.9, label="network mean")
    ax.plot(t, [r.p95_error for r in records], lw=0.9, alpha=0.7, label="per-slot p95")
    ax.legend()
    _save(fig, f"{outdir}/error_timeline.png")

    fig, ax = _new_axes("time [s]", "events per slot")
    ax.plot(t, [r.undetected for r in records], lw=0.8, label="undetected")
    ax.plot(t, [r.misdetected for r in records], lw=0.8, label="misdetected")
    ax.plot(t, [r.tx_collided for r in records], lw=0.8, alpha=0.6, label="collided")
    ax.legend()
    _save(fig, f"{outdir}/events_timeline.png")


def _per_policy(rows):
    groups = {}
    for row in rows:
        groups.setdefault(row.policy, []).append(row)
    for pol in groups:
        groups[pol].sort(key=lambda r: r.eff_intertx_s)
    return groups


def plot_sweep(rows, outdir):
    for attr, ylabel, fname in [
        ("mean_error_m", "mean positioning error [m]", "sweep_mean_error.png"),
        ("p95_error_m", "95th-percentile error [m]", "sweep_p95_error.png"),
        ("detection_error", "detection error probability", "sweep_detection_error.png"),
    ]:
        fig, ax = _new_axes("effective inter-transmission time [s]", ylabel)
        for pol, group in _per_policy(rows).items():
            style = _POLICY_STYLE.get(pol, dict(marker="x", label=pol))
            xs = [r.eff_intertx_s for r in group]
            ys = [getattr(r, attr) for r in group]
            if pol == "ideal":
                ax.axhline(ys[0], ls="--", **{k: v for k, v in style.items()
                                              if k in ("color", "label")})
            else:
                ax.plot(xs, ys, lw=1.0, **style)
        ax.legend()
        _save(fig, f"{outdir}/{fname}")

    fig, ax = _new_axes("policy parameter (s or m)", "effective inter-tx time [s]")
    for pol, group in _per_policy(rows).items():
        if pol == "ideal":
            continue
        style = _POLICY_STYLE.get(pol, dict(marker="x", label=pol))
        group = sorted(group, key=lambda r: r.parameter)
        ax.plot([r.parameter for r in group], [r.eff_intertx_s for r in group],
                lw=1.0, **style)
    ax.legend()
    _save(fig, f"{outdir}/sweep_eff_intertx.png")


def plot_theory(pmfs, slot_s, outdir):
    """pmfs: list of (threshold_m, FirstPassagePmf)."""
    fig, ax = _new_axes("inter-transmission time [s]", "probability")
    for thr, pmf in pmfs:
        steps = range(1, len(pmf.probs) + 1)
        ax.plot([k * slot_s for k in steps], pmf.probs, lw=1.0,
                label=f"threshold {thr:g} m")
    ax.legend()
    _save(fig, f"{outdir}/theory_pmf.png")


def plot_qq(pairs_by_threshold, outdir):
    """pairs_by_threshold: list of (threshold_m, [(theo_s, emp_s), ...])."""
    fig, ax = _new_axes("theoretical quantile [s]", "empirical quantile [s]")
    hi = 0.0
    for thr, pairs in pairs_by_threshold:
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        hi = max(hi, max(xs), max(ys))
        ax.plot(xs, ys, ".", ms=4, label=f"threshold {thr:g} m")
    ax.plot([0, hi], [0, hi], "k-", lw=0.8)
    ax.legend()
    _save(fig, f"{outdir}/theory_qq.png")
