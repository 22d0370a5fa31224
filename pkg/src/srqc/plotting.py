"""Figures for the ``report`` subcommand (PNG files, headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_veff(report, path, title=""):
    ds = np.array([e.delta for e in report.samples])
    c = np.array([e.delta ** 2 * e.veff for e in report.samples])
    order = np.argsort(ds)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.semilogx(ds[order], c[order], "o-", ms=3, label=r"$\delta^2 V_{\mathrm{eff}}$")
    ax.axhline(0.75, color="k", ls="--", lw=1, label="3/4")
    ax.set_xlabel(r"$\delta$")
    ax.set_title(title or "effective potential near Z")
    if np.all(c > 0) and c.max() / max(c.min(), 1e-300) > 1e3:
        ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_kappa(report, path, title=""):
    edges = np.array([e for e, _ in report.trend])
    ks = np.array([k for _, k in report.trend])
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.semilogx(edges, ks, "s-", ms=4)
    ax.set_xlabel(r"dyadic bin (lower $\delta$)")
    ax.set_ylabel(r"max $\kappa$")
    ax.set_title(title or "kappa trend")
    _save(fig, path)


def plot_density(ts, dens, path, title=""):
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.loglog(ts, dens, "o-", ms=3)
    ax.set_xlabel("distance from Z")
    ax.set_ylabel("Popp density")
    ax.set_title(title or "Popp density along a normal ray")
    _save(fig, path)


def plot_spectrum(values, path, title=""):
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.plot(np.arange(len(values)), values, "o", ms=4)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.set_title(title or "reduced spectrum")
    _save(fig, path)
