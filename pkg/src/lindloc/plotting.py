"""Optional PNG figures for the light-cone and decay reports."""

from __future__ import annotations

import io

import numpy as np


def _figure_bytes(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    return buf.getvalue()


def lightcone_png(profile, params=None) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    order = np.argsort(profile.distances, kind="stable")
    vals = np.log10(np.maximum(profile.values[order], 1e-16))
    fig, ax = plt.subplots(figsize=(6, 4))
    extent = (profile.times[0], profile.times[-1], -0.5, len(order) - 0.5)
    im = ax.imshow(vals, aspect="auto", origin="lower", extent=extent, cmap="viridis", vmin=-12)
    ax.set_yticks(range(len(order)))
    ax.set_yticklabels([f"{profile.b_labels[i]} (d={profile.distances[i]:g})" for i in order], fontsize=7)
    ax.set_xlabel("t")
    ax.set_title("log10 ||[B, A(t)]||")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    data = _figure_bytes(fig)
    plt.close(fig)
    return data


def decay_png(times, deviation, lam) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(times, np.maximum(deviation, 1e-17), "o-", ms=3, label="measured deviation")
    if np.isfinite(lam):
        ax.semilogy(times, np.exp(-lam * np.asarray(times)), "--", label=f"exp(-{lam:.4g} t)")
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    data = _figure_bytes(fig)
    plt.close(fig)
    return data
