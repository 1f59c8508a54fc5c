"""The five standard panels rendered from a harness run CSV.

Panel kinds:
  loss      -- discrete loss (raw + smoothed) against flow losses and the
               time-averaged prediction; log y.
  sharpness -- effective sharpness of the discrete run (de-oscillated
               midpoints, smoothed) and of each flow, with the y = 2
               stability reference.
  sigma     -- predicted oscillation eigenvalues (lines) overlaid with the
               smoothed measured whitened displacements (shaded).
  distance  -- weight-space distance of the discrete iterates to each flow;
               log y.
  nu        -- cosine between the running EMA state and its predicted
               stationary value, with the y = 1 reference.

Smoothing always uses the bandwidth recorded in the run metadata.
"""

import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


@dataclass
class PanelSpec:
    kind: str
    required: tuple  # at least one must be present with data
    logy: bool = False
    reference_lines: tuple = ()
    title: str = ""


PANELS = {
    "loss": PanelSpec("loss", ("loss_discrete",), logy=True,
                      title="loss"),
    "sharpness": PanelSpec(
        "sharpness",
        ("eff_sharpness_discrete_midpoint", "eff_sharpness_central",
         "eff_sharpness_stable", "eff_sharpness_stationary"),
        reference_lines=(2.0,), title="effective sharpness"),
    "sigma": PanelSpec("sigma", ("lambda_sigma", "whitened_disp"),
                       title="oscillation variance"),
    "distance": PanelSpec("distance", ("dist_central", "dist_stable",
                                       "dist_stationary", "dist_igr"),
                          logy=True, title="distance to flow"),
    "nu": PanelSpec("nu", ("nu_cosine_stationary",),
                    reference_lines=(1.0,), title="EMA stationarity cosine"),
}
PANEL_KINDS = tuple(PANELS)


def gaussian_smooth(x, bandwidth):
    """Truncated (4 sigma) Gaussian smoothing, nan-aware, edge-renormalized."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return x
    half = max(1, int(round(4 * bandwidth)))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / bandwidth) ** 2)
    ok = np.isfinite(x)
    n = len(x)
    num = np.convolve(np.where(ok, x, 0.0), k, mode="full")[half:half + n]
    den = np.convolve(ok.astype(float), k, mode="full")[half:half + n]
    out = np.full_like(x, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _series(run, name):
    """Float array with nan for missing cells, or None if unusable."""
    col = run.column(name)
    if col is None:
        return None
    x = np.array([np.nan if v is None else float(v) for v in col])
    return x if np.isfinite(x).any() else None


def _list_matrix(run, name):
    """Ragged list-valued column as a nan-padded (n, kmax) array."""
    col = run.column(name)
    if col is None:
        return None
    width = max((len(v) for v in col if isinstance(v, list)), default=0)
    if width == 0:
        return None
    out = np.full((len(col), width), np.nan)
    for i, v in enumerate(col):
        if isinstance(v, list) and v:
            out[i, :len(v)] = v
    return out


def _steps(run):
    s = run.column("step")
    return np.arange(len(run.rows)) if s is None else np.asarray(s)


def _draw_loss(ax, run, bw):
    t = _steps(run)
    raw = _series(run, "loss_discrete")
    ax.plot(t, raw, color="0.8", lw=0.6, label="discrete")
    ax.plot(t, gaussian_smooth(raw, bw), color="k", lw=1.2,
            label="discrete (smoothed)")
    for name, color in (("loss_bar_pred", "tab:red"),
                        ("loss_central", "tab:blue"),
                        ("loss_stable", "tab:green"),
                        ("loss_stationary", "tab:purple"),
                        ("loss_igr", "tab:orange")):
        y = _series(run, name)
        if y is not None:
            ax.plot(t, y, color=color, lw=1.0,
                    label=name.replace("loss_", ""))


def _draw_sharpness(ax, run, bw):
    t = _steps(run)
    mid = _series(run, "eff_sharpness_discrete_midpoint")
    if mid is not None:
        ax.plot(t, gaussian_smooth(mid, bw), color="k", lw=1.2,
                label="discrete midpoints (smoothed)")
    for name, color in (("eff_sharpness_central", "tab:blue"),
                        ("eff_sharpness_stable", "tab:green"),
                        ("eff_sharpness_stationary", "tab:purple")):
        y = _series(run, name)
        if y is not None:
            ax.plot(t, y, color=color, lw=1.0,
                    label=name.replace("eff_sharpness_", ""))


def _draw_sigma(ax, run, bw):
    t = _steps(run)
    lam = _list_matrix(run, "lambda_sigma")
    disp = _list_matrix(run, "whitened_disp")
    for j in range(lam.shape[1]):
        ax.plot(t, lam[:, j], lw=1.2, color=f"C{j}",
                label=rf"$\Lambda_{{{j + 1}}}$ predicted")
    if disp is not None:
        for j in range(disp.shape[1]):
            sm = gaussian_smooth(disp[:, j], bw)
            ax.fill_between(t, 0.0, sm, color=f"C{j}", alpha=0.3,
                            label=f"measured {j + 1} (smoothed)")


def _draw_distance(ax, run, bw):
    t = _steps(run)
    for name in ("dist_central", "dist_stable", "dist_stationary",
                 "dist_igr"):
        y = _series(run, name)
        if y is not None:
            ax.plot(t, np.maximum(y, 1e-300), lw=1.0,
                    label=name.replace("dist_", ""))


def _draw_nu(ax, run, bw):
    t = _steps(run)
    y = _series(run, "nu_cosine_stationary")
    ax.plot(t, y, color="k", lw=1.0, label="cos(nu, nu_stationary)")


_DRAW = {"loss": _draw_loss, "sharpness": _draw_sharpness,
         "sigma": _draw_sigma, "distance": _draw_distance, "nu": _draw_nu}


@dataclass
class RenderResult:
    paths: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _panel_available(run, spec):
    if spec.kind == "sigma":
        return (_list_matrix(run, "lambda_sigma") is not None
                and _list_matrix(run, "whitened_disp") is not None)
    return any(_series(run, c) is not None or _list_matrix(run, c) is not None
               for c in spec.required)


def render(run, out_dir, panels=PANEL_KINDS, name=None, dpi=120):
    """Render one PNG per requested panel into out_dir.

    Panels whose columns are absent (or entirely empty) are skipped with a
    warning; an empty run renders nothing and warns once per panel.
    """
    os.makedirs(out_dir, exist_ok=True)
    base = name or run.metadata.get("config", {}).get("run", {}).get(
        "name", "run")
    result = RenderResult()
    for kind in panels:
        if kind not in PANELS:
            raise ValueError(f"unknown panel kind: {kind} "
                             f"(known: {', '.join(PANEL_KINDS)})")
        spec = PANELS[kind]
        if not run.rows:
            result.warnings.append(f"{kind}: no rows in CSV, skipped")
            continue
        if not _panel_available(run, spec):
            result.warnings.append(
                f"{kind}: columns {spec.required} absent or empty, skipped")
            continue
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        _DRAW[kind](ax, run, run.bandwidth)
        for ref in spec.reference_lines:
            ax.axhline(ref, color="0.4", ls="--", lw=0.8)
        if spec.logy:
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_title(spec.title)
        ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{base}_{kind}.png")
        fig.savefig(path, dpi=dpi, metadata={"Software": "flowplot"})
        plt.close(fig)
        result.paths.append(path)
    return result
