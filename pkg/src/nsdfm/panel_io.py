"""File formats: panel CSV, truth sidecar, config files, report tables.

Panel files are UTF-8 comma-separated, one column per series and one row
per time period, first row a header of series names, empty cells marking
missing values.  Lines starting with '#' before the header carry
``key=value`` metadata (effective configuration and master seed), so
every output file records how to reproduce it.  Values are printed with
17 significant digits, which round-trips IEEE doubles exactly.

The truth sidecar and parameter outputs are JSON; benchmark tables are
plain CSV with the same metadata convention.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

import numpy as np

from .model import ModelSpec, Panel, Params
from .simulate import MCConfig, SimulatedPanel

__all__ = [
    "write_panel",
    "params_to_dict",
    "params_from_dict",
    "read_panel",
    "write_truth",
    "read_truth",
    "write_table",
    "load_config",
    "ConfigError",
]


class ConfigError(ValueError):
    """Malformed configuration file or unknown key."""


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_panel(
    path,
    panel: Panel,
    series_names: list[str] | None = None,
    metadata: dict | None = None,
) -> None:
    """Write a panel in the wide CSV format (rows = t, columns = series)."""
    n, T = panel.n, panel.T
    names = series_names or [f"series_{i}" for i in range(n)]
    if len(names) != n:
        raise ValueError("series_names length must equal the number of series")
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(",".join(names))
    for t in range(T):
        cells = [
            _fmt(panel.data[i, t]) if panel.missing_mask[i, t] else ""
            for i in range(n)
        ]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_panel(path):
    """Read a wide-format panel CSV; returns (Panel, names, metadata).

    Raises ValueError with the offending row/column on parse failures.
    """
    text = Path(path).read_text(encoding="utf-8")
    metadata: dict[str, str] = {}
    rows: list[list[str]] = []
    header: list[str] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                metadata[key.strip()] = value.strip()
            continue
        cells = line.split(",")
        if header is None:
            header = [c.strip() for c in cells]
            continue
        if len(cells) != len(header):
            raise ValueError(f"row {lineno}: expected {len(header)} cells, got {len(cells)}")
        rows.append(cells)
    if header is None or not rows:
        raise ValueError("panel file has no header or no data rows")
    T, n = len(rows), len(header)
    data = np.full((n, T), np.nan)
    for t, cells in enumerate(rows):
        for i, cell in enumerate(cells):
            cell = cell.strip()
            if cell == "":
                continue
            try:
                data[i, t] = float(cell)
            except ValueError as exc:
                raise ValueError(f"row {t + 2}, column {i + 1} ({header[i]}): bad cell {cell!r}") from exc
    return Panel.from_data(data), header, metadata


def params_to_dict(params: Params) -> dict:
    return {
        "loadings": [B.tolist() for B in params.loadings],
        "var_coeffs": [A.tolist() for A in params.var_coeffs],
        "gamma_u": params.gamma_u.tolist(),
        "gamma_e_diag": params.gamma_e_diag.tolist(),
        "rho": params.rho.tolist(),
        "sigma2_omega": params.sigma2_omega.tolist(),
        "sigma2_eta": params.sigma2_eta.tolist(),
        "sigma2_nu": params.sigma2_nu.tolist(),
        "alpha0": params.alpha0.tolist(),
        "beta0": params.beta0.tolist(),
    }


def params_from_dict(d: dict) -> Params:
    return Params(
        loadings=[np.array(B) for B in d["loadings"]],
        var_coeffs=[np.array(A) for A in d["var_coeffs"]],
        gamma_u=np.array(d["gamma_u"]),
        gamma_e_diag=np.array(d["gamma_e_diag"]),
        rho=np.array(d["rho"]),
        sigma2_omega=np.array(d["sigma2_omega"]),
        sigma2_eta=np.array(d["sigma2_eta"]),
        sigma2_nu=np.array(d["sigma2_nu"]),
        alpha0=np.array(d["alpha0"]),
        beta0=np.array(d["beta0"]),
    )


def write_truth(path, sim: SimulatedPanel) -> None:
    """Write the ground-truth sidecar of a simulated panel as JSON."""
    payload = {
        "config": {k: getattr(sim.config, k) for k in sim.config.__dataclass_fields__},
        "replication": sim.replication,
        "chi": sim.chi.tolist(),
        "factors": sim.factors.tolist(),
        "xi": sim.xi.tolist(),
        "trend": sim.trend.tolist(),
        "beta0": sim.beta0.tolist(),
        "i1_set": sorted(sim.i1_set),
        "trend_set": sorted(sim.trend_set),
        "rho2": sim.rho2.tolist(),
        "params": params_to_dict(sim.params),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def read_truth(path) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("chi", "factors", "xi", "trend", "beta0", "rho2"):
        d[key] = np.array(d[key])
    d["i1_set"] = frozenset(d["i1_set"])
    d["trend_set"] = frozenset(d["trend_set"])
    d["params"] = params_from_dict(d["params"])
    return d


def write_table(path, columns: list[str], rows: list[list], metadata: dict | None = None) -> None:
    """Write a CSV table with the '#' metadata block convention."""
    lines = [f"# {k}={v}" for k, v in (metadata or {}).items()]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# configuration files ------------------------------------------------------

_MODEL_KEYS = {"n", "T", "q", "s", "p", "idio_i1", "local_level", "local_trend", "detrend", "standardize"}
_EM_KEYS = {"max_iter", "tolerance", "phi_policy", "kappa"}
_MC_KEYS = {
    "n", "T", "q", "s", "d", "p", "n1", "nb", "tau", "theta", "mu", "delta",
    "dist", "replications", "seed", "cells",
}
_IO_KEYS = {"out_dir", "format", "jobs", "t_min"}
_SECTIONS = {"model": _MODEL_KEYS, "em": _EM_KEYS, "mc": _MC_KEYS, "io": _IO_KEYS}


def load_config(path) -> dict[str, dict[str, str]]:
    """Parse an INI-style config with sections [model], [em], [mc], [io].

    Unknown sections or keys raise :class:`ConfigError`.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        out[section] = {}
        for key, value in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            out[section][key] = value
    return out


def parse_index_set(text: str) -> frozenset[int]:
    """Parse a comma-separated list of zero-based series indices."""
    text = text.strip()
    if not text:
        return frozenset()
    try:
        return frozenset(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad index set {text!r}") from exc


def mc_config_from_section(section: dict[str, str], overrides: dict | None = None) -> MCConfig:
    """Build an MCConfig from the [mc] section plus CLI overrides."""
    merged = dict(section)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = str(value)
    kwargs = {}
    casts = {
        "n": int, "T": int, "q": int, "s": int, "d": int, "p": int,
        "n1": int, "nb": int, "tau": float, "theta": float, "mu": float,
        "delta": float, "replications": int, "seed": int,
    }
    for key, cast in casts.items():
        if key in merged:
            try:
                kwargs[key] = cast(merged[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for mc.{key}: {merged[key]!r}") from exc
    if "dist" in merged:
        kwargs["innovation_dist"] = merged["dist"]
    try:
        return MCConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def model_spec_from_section(section: dict[str, str], n: int, T: int) -> ModelSpec:
    """Build a ModelSpec from the [model] section for an n x T panel."""
    def geti(key, default):
        return int(section[key]) if key in section else default

    try:
        return ModelSpec(
            n=n,
            T=T,
            q=geti("q", 1),
            s=geti("s", 0),
            p=geti("p", 2),
            idio_i1=parse_index_set(section.get("idio_i1", "")),
            local_level=parse_index_set(section.get("local_level", "")),
            local_trend=parse_index_set(section.get("local_trend", "")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
