"""Result persistence and diagnostic reports.

CSV and JSON outputs embed the library version and a sha256 hash of the
originating configuration, so any emitted artifact can be traced back to the
exact run that produced it.  The report path also renders matplotlib figures
to files next to the delimited output (Agg backend, no display needed).
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

SCHEMA_VERSION = 1


def library_version() -> str:
    from . import __version__

    return __version__


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON serialization of the config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def provenance(config: dict) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "version": library_version(),
        "config_sha256": config_hash(config),
    }


def write_csv(path, columns, rows, config: dict) -> None:
    """Delimited output with provenance comment lines before the header."""
    prov = provenance(config)
    with Path(path).open("w", newline="") as fh:
        for key, val in prov.items():
            fh.write(f"# {key}: {val}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.16e}"
    return x


def write_json_report(path, payload: dict, config: dict) -> None:
    out = dict(provenance(config))
    out.update(payload)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


# --- figures ------------------------------------------------------------------

def spectrum_figure(path, eigenvalues) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    lam = np.asarray(eigenvalues)
    ax.semilogy(np.arange(lam.size), lam, ".", markersize=3)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue of 1 + Laplacian")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def trace_figure(path, times, energies, min_eigs) -> None:
    times = np.asarray(times)
    energies = np.asarray(energies)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    e0 = energies[0] if energies[0] != 0.0 else 1.0
    ax1.plot(times, (energies - energies[0]) / abs(e0))
    ax1.set_ylabel("relative energy drift")
    ax1.grid(True, alpha=0.3)
    ax2.plot(times, min_eigs)
    ax2.set_xlabel("t")
    ax2.set_ylabel("min metric eigenvalue")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def dcheck_figure(path, epsilons, errors_by_label: dict) -> None:
    eps = np.asarray(epsilons)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, errs in errors_by_label.items():
        ax.loglog(eps, np.maximum(np.asarray(errs), 1e-300), "o-", label=label)
    ax.loglog(eps, eps ** 2 * (np.max(list(errors_by_label.values())) /
                               np.max(eps) ** 2), "k--", alpha=0.5,
              label="slope 2 reference")
    ax.set_xlabel("step epsilon")
    ax.set_ylabel("relative FD mismatch")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def shooting_figure(path, residuals) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(len(residuals)), residuals, "o-")
    ax.set_xlabel("shooting iteration")
    ax.set_ylabel("relative endpoint residual")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def contour_figure(path, diagnostics_rows) -> None:
    """Quadrature diagnostics: node magnitudes and the running partial-sum
    norm along the contour."""
    rows = np.asarray(diagnostics_rows, dtype=float)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6))
    t = np.hypot(rows[:, 0], rows[:, 1])
    ax1.loglog(t, np.maximum(rows[:, 2], 1e-300), ".")
    ax1.set_xlabel("|lambda| along contour")
    ax1.set_ylabel("|f(lambda)|")
    ax1.grid(True, which="both", alpha=0.3)
    ax2.semilogx(t, rows[:, 4], ".")
    ax2.set_xlabel("|lambda| along contour")
    ax2.set_ylabel("partial-sum norm")
    ax2.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
