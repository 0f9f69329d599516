"""
Command-line front end: ``perimesh spectrum|transitions|converge|lifetimes``.

Every command reads a flat ``key = value`` config file (all keys optional)
and writes one CSV file into the output directory. Wavefunctions are cached
per ``(L, v)`` under ``<output_dir>/cache`` with a hash of everything that
determines them in the file name, so later commands reuse earlier solves.

Config keys
-----------
n_xy, n_z, h_xy, h_z     mesh sizes and scale factors
m_p                      proton mass in electron masses
alpha_inverse            inverse fine-structure constant
bohr_radius_m            Bohr radius in metres
L_range                  ``min..max`` (empty when ``min > max``)
v_max                    highest vibrational index
k_max_cap                cap on the K sum
output_dir               output directory (overridden by PERIMESH_OUTPUT_DIR)
format                   ``csv`` (the only format)
mode                     transitions: ``intra``, ``inter`` or ``list``
pairs                    for ``mode = list``: ``L,v -> L,v; ...``
ladder                   converge: ``NxNz, ...``
transition               converge: ``L,v -> L,v``
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .coordinates import PROTON_MASS, MassSet
from .eigensolver import ConvergenceError, load_wavefunction, save_wavefunction, solve_band
from .hamiltonian import MeshWavefunction
from .laguerre_mesh import MeshSpec
from .transitions import (PhysicalConstants, forbidden_reason, lifetime, oscillator_strength,
                          reduced_strength, transition_probability)

log = logging.getLogger("perimesh")

ENV_OUTPUT_DIR = "PERIMESH_OUTPUT_DIR"
_DEFAULT_CONSTANTS = PhysicalConstants()

StateKey = tuple[int, int]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Parameters shared by all commands."""

    mesh: MeshSpec = field(default_factory=MeshSpec)
    m_p: float = PROTON_MASS
    alpha_inverse: float = _DEFAULT_CONSTANTS.alpha_inverse
    bohr_radius_m: float = _DEFAULT_CONSTANTS.bohr_radius_m
    L_range: tuple[int, int] = (0, 40)
    v_max: int = 3
    k_max_cap: int = 2
    output_dir: Path = Path("perimesh-out")
    format: str = "csv"
    mode: str = "intra"
    pairs: tuple[tuple[StateKey, StateKey], ...] = ()
    ladder: tuple[tuple[int, int], ...] = ((20, 20), (25, 20), (30, 20), (35, 20), (40, 20))
    transition: tuple[StateKey, StateKey] = ((4, 0), (2, 0))

    def __post_init__(self):
        if self.format != "csv":
            raise ConfigError(f"unsupported format {self.format!r}")
        if self.mode not in ("intra", "inter", "list"):
            raise ConfigError(f"mode must be intra, inter or list, got {self.mode!r}")
        if self.v_max < 0 or self.k_max_cap < 0 or self.L_range[0] < 0:
            raise ConfigError("v_max, k_max_cap and L must be nonnegative")
        if not self.ladder:
            raise ConfigError("ladder must contain at least one mesh")

    @property
    def L_values(self) -> range:
        return range(self.L_range[0], self.L_range[1] + 1)

    @property
    def masses(self) -> MassSet:
        return MassSet(self.m_p)

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(self.alpha_inverse, self.bohr_radius_m)

    def cache_key(self, mesh: MeshSpec | None = None) -> str:
        """Hash of the inputs that determine the wavefunctions."""
        m = mesh or self.mesh
        text = f"{m.n_xy} {m.n_z} {m.h_xy!r} {m.h_z!r} {self.m_p!r} {self.k_max_cap}"
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parse_state(text: str) -> StateKey:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'L,v', got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_pair(text: str) -> tuple[StateKey, StateKey]:
    if "->" not in text:
        raise ConfigError(f"expected 'L,v -> L,v', got {text!r}")
    a, b = text.split("->")
    return _parse_state(a), _parse_state(b)


def _parse_range(text: str) -> tuple[int, int]:
    if ".." not in text:
        raise ConfigError(f"expected 'min..max', got {text!r}")
    lo, hi = text.split("..")
    return int(lo), int(hi)


def _parse_ladder(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        if item:
            n, nz = item.split("x")
            out.append((int(n), int(nz)))
    return tuple(out)


_MESH_KEYS = {"n_xy": int, "n_z": int, "h_xy": float, "h_z": float}
_PARSERS = {
    "m_p": float,
    "alpha_inverse": float,
    "bohr_radius_m": float,
    "L_range": _parse_range,
    "v_max": int,
    "k_max_cap": int,
    "output_dir": Path,
    "format": str,
    "mode": str,
    "pairs": lambda s: tuple(_parse_pair(p) for p in s.split(";") if p.strip()),
    "ladder": _parse_ladder,
    "transition": _parse_pair,
}


def parse_config(text: str) -> RunConfig:
    """Build a :class:`RunConfig` from ``key = value`` lines (``#`` starts a comment)."""
    mesh_kw, kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _MESH_KEYS:
                mesh_kw[key] = _MESH_KEYS[key](value)
            elif key in _PARSERS:
                kw[key] = _PARSERS[key](value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    try:
        return RunConfig(mesh=MeshSpec(**{**_mesh_defaults(), **mesh_kw}), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _mesh_defaults() -> dict:
    m = MeshSpec()
    return {f.name: getattr(m, f.name) for f in fields(m)}


def load_config(path: str | os.PathLike | None, out: str | None = None) -> RunConfig:
    """Read a config file and apply the output-directory overrides.

    Precedence: ``--out``, then ``PERIMESH_OUTPUT_DIR``, then the file.
    """
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    env = os.environ.get(ENV_OUTPUT_DIR)
    if out:
        cfg = replace(cfg, output_dir=Path(out))
    elif env:
        cfg = replace(cfg, output_dir=Path(env))
    return cfg


# -- wavefunction cache -----------------------------------------------------------


class StateStore:
    """Bands of wavefunctions cached on disk, computed on first use.

    A band's manifest records how many states were requested and found, so a
    band that ends early is not re-solved on every run.
    """

    def __init__(self, cfg: RunConfig, mesh: MeshSpec | None = None):
        self.cfg = cfg
        self.mesh = mesh or cfg.mesh
        self.key = cfg.cache_key(self.mesh)
        self.dir = cfg.output_dir / "cache"
        self._bands: dict[int, list[MeshWavefunction]] = {}
        self.failures: dict[int, str] = {}

    def _wf_path(self, L: int, v: int) -> Path:
        return self.dir / f"wf-{self.key}-L{L:02d}-v{v}.npz"

    def _manifest_path(self, L: int) -> Path:
        return self.dir / f"band-{self.key}-L{L:02d}.json"

    def _load(self, L: int, n_states: int) -> list[MeshWavefunction] | None:
        mp = self._manifest_path(L)
        if not mp.exists():
            return None
        man = json.loads(mp.read_text())
        if man["found"] < n_states and man["requested"] < n_states:
            return None
        return [load_wavefunction(self._wf_path(L, v)) for v in range(min(man["found"], n_states))]

    def band(self, L: int, n_states: int | None = None) -> list[MeshWavefunction]:
        """States ``v = 0..n_states-1`` of band ``L`` (fewer near the band end).

        Raises the solver's exception on failure; it is also recorded in
        :attr:`failures`.
        """
        n_states = n_states or self.cfg.v_max + 1
        have = self._bands.get(L)
        if have is not None and len(have) >= n_states:
            return have[:n_states]
        if L in self.failures:
            raise RuntimeError(self.failures[L])
        wfs = self._load(L, n_states)
        if wfs is None:
            log.info("solving L=%d on %dx%d", L, self.mesh.n_xy, self.mesh.n_z)
            try:
                wfs = solve_band(self.mesh, L, n_states, self.cfg.masses, self.cfg.k_max_cap)
            except (ConvergenceError, np.linalg.LinAlgError, MemoryError) as exc:
                self.failures[L] = f"{type(exc).__name__}: {exc}"
                raise
            self.dir.mkdir(parents=True, exist_ok=True)
            for wf in wfs:
                save_wavefunction(wf, self._wf_path(L, wf.label.v))
            man = {"L": L, "requested": n_states, "found": len(wfs)}
            self._manifest_path(L).write_text(json.dumps(man, sort_keys=True) + "\n")
        self._bands[L] = wfs
        return wfs

    def state(self, L: int, v: int) -> MeshWavefunction | None:
        """One state, or ``None`` if ``v > v_max``, the band has no such ``v``
        or its solve failed."""
        if v > self.cfg.v_max or L < 0:
            return None
        try:
            wfs = self.band(L)
        except Exception:  # noqa: BLE001 - reported through self.failures
            return None
        return wfs[v] if v < len(wfs) else None


# -- formatting ----------------------------------------------------------------------


def fmt_energy(e: float) -> str:
    """17 significant digits."""
    return f"{e:.16e}"


def fmt6(x: float) -> str:
    """Six significant figures, ``inf`` for infinite values."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.5e}"


def fmt10(x: float) -> str:
    return f"{x:.9e}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(",".join(r) + "\n" for r in [header, *rows])
    with open(path, "w", newline="", encoding="ascii") as f:
        f.write(text)


class Report:
    """Collects per-item diagnostics; any error makes the exit code nonzero."""

    def __init__(self):
        self.errors: list[str] = []
        self.warnings: list[str] = []

    def error(self, msg: str) -> None:
        self.errors.append(msg)
        print(f"error: {msg}", file=sys.stderr)

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)
        print(f"warning: {msg}", file=sys.stderr)

    @property
    def exit_code(self) -> int:
        return 1 if self.errors else 0


# -- commands -------------------------------------------------------------------


def cmd_spectrum(cfg: RunConfig, report: Report | None = None) -> Path:
    """Energy table ``L, v, E_hartree, quasibound``."""
    report = report or Report()
    store = StateStore(cfg)
    rows = []
    for L in cfg.L_values:
        try:
            wfs = store.band(L)
        except Exception as exc:  # noqa: BLE001 - per-item reporting
            for v in range(cfg.v_max + 1):
                report.error(f"L={L} v={v}: {exc}")
            continue
        if len(wfs) <= cfg.v_max:
            report.warn(f"L={L}: only {len(wfs)} bound or quasibound states found")
        for wf in wfs:
            rows.append([str(L), str(wf.label.v), fmt_energy(wf.energy), str(int(wf.quasibound))])
    path = cfg.output_dir / "spectrum.csv"
    _write_csv(path, ["L", "v", "E_hartree", "quasibound"], rows)
    return path


def _pair_list(cfg: RunConfig) -> list[tuple[StateKey, StateKey]]:
    Ls = set(cfg.L_values)
    vs = range(cfg.v_max + 1)
    if cfg.mode == "list":
        return list(cfg.pairs)
    out = []
    for L in cfg.L_values:
        if cfg.mode == "intra":
            if L - 2 in Ls:
                out.extend(((L, v), (L - 2, v)) for v in vs)
            continue
        for Lf in (L - 2, L, L + 2):
            if Lf in Ls:
                out.extend(((L, v), (Lf, vf)) for v in vs for vf in vs if vf < v)
    return out


def _transition_row(store: StateStore, a: StateKey, b: StateKey, report: Report,
                    kappa_max: int = 2) -> list[str] | None:
    cfg = store.cfg
    wa, wb = store.state(*a), store.state(*b)
    missing = [k for k, w in ((a, wa), (b, wb)) if w is None]
    if missing:
        for k in missing:
            if k[0] in store.failures:
                report.error(f"L={k[0]} v={k[1]}: {store.failures[k[0]]}")
            else:
                report.warn(f"state L={k[0]} v={k[1]} not available; {a}->{b} skipped")
        return None
    reason = forbidden_reason(wa.label, wb.label)
    rev = wb.energy > wa.energy
    wi, wf = (wb, wa) if rev else (wa, wb)
    if reason is not None:
        S, f, W = 0.0, 0.0, 0.0
    else:
        S, _ = reduced_strength(wi, wf, cfg.masses, kappa_max=kappa_max)
        f = oscillator_strength(S, wi.energy, wf.energy, wi.label.L, cfg.constants)
        W = 0.0 if wi.energy == wf.energy else transition_probability(
            S, wi.energy, wf.energy, wi.label.L, cfg.constants)
    li, lf = wi.label, wf.label
    return [str(li.L), str(li.v), str(lf.L), str(lf.v), fmt6(S), fmt6(f), fmt6(W),
            "reversed" if rev else "down", "forbidden" if reason else ""]


TRANSITION_HEADER = ["L_i", "v_i", "L_f", "v_f", "S", "f", "W_s-1", "direction", "flag"]


def cmd_transitions(cfg: RunConfig, report: Report | None = None) -> Path:
    """E2 table; each pair is oriented so that ``E_f < E_i``."""
    report = report or Report()
    store = StateStore(cfg)
    rows = []
    for a, b in _pair_list(cfg):
        row = _transition_row(store, a, b, report)
        if row is not None:
            rows.append(row)
    path = cfg.output_dir / f"transitions-{cfg.mode}.csv"
    _write_csv(path, TRANSITION_HEADER, rows)
    return path


def cmd_converge(cfg: RunConfig, report: Report | None = None) -> Path:
    """Ladder ``N, N_z, E_i, E_f, W_0, W_1, W`` for one transition."""
    report = report or Report()
    (Li, vi), (Lf, vf) = cfg.transition
    rows = []
    for n, nz in cfg.ladder:
        mesh = replace(cfg.mesh, n_xy=n, n_z=nz)
        store = StateStore(cfg, mesh)
        wi, wf = store.state(Li, vi), store.state(Lf, vf)
        if wi is None or wf is None:
            for (L, v), w in (((Li, vi), wi), ((Lf, vf), wf)):
                if w is None:
                    why = store.failures.get(L, "state not found")
                    report.error(f"N={n} N_z={nz} L={L} v={v}: {why}")
            continue
        if wf.energy > wi.energy:
            wi, wf = wf, wi
        elements: dict = {}
        ws = []
        for kmax in (0, 1, 2):
            S, forb = reduced_strength(wi, wf, cfg.masses, kappa_max=kmax, elements=elements)
            ws.append(0.0 if forb else transition_probability(
                S, wi.energy, wf.energy, wi.label.L, cfg.constants))
        rows.append([str(n), str(nz), fmt_energy(wi.energy), fmt_energy(wf.energy), *map(fmt10, ws)])
    path = cfg.output_dir / f"converge-L{Li}v{vi}-L{Lf}v{vf}.csv"
    _write_csv(path, ["N", "N_z", "E_i", "E_f", "W_0", "W_1", "W"], rows)
    return path


def lifetime_channels(store: StateStore, L: int, v: int) -> list[float] | None:
    """Downward E2 rates from ``(L, v)`` to computed states in the config range."""
    cfg = store.cfg
    wi = store.state(L, v)
    if wi is None:
        return None
    rates = []
    for Lf in (L - 2, L, L + 2):
        if Lf not in cfg.L_values:
            continue
        for vf in range(cfg.v_max + 1):
            wf = store.state(Lf, vf)
            if wf is None or wf.energy >= wi.energy or forbidden_reason(wi.label, wf.label):
                continue
            S, _ = reduced_strength(wi, wf, cfg.masses)
            rates.append(transition_probability(S, wi.energy, wf.energy, L, cfg.constants))
    return rates


def cmd_lifetimes(cfg: RunConfig, report: Report | None = None) -> Path:
    """Lifetime table ``L, v, tau_s, channels``; ``inf`` when nothing decays."""
    report = report or Report()
    store = StateStore(cfg)
    rows = []
    for L in cfg.L_values:
        for v in range(cfg.v_max + 1):
            rates = lifetime_channels(store, L, v)
            if rates is None:
                if L in store.failures:
                    report.error(f"L={L} v={v}: {store.failures[L]}")
                continue
            rows.append([str(L), str(v), fmt6(lifetime(rates)), str(len(rates))])
    path = cfg.output_dir / "lifetimes.csv"
    _write_csv(path, ["L", "v", "tau_s", "channels"], rows)
    return path


COMMANDS = {
    "spectrum": cmd_spectrum,
    "transitions": cmd_transitions,
    "converge": cmd_converge,
    "lifetimes": cmd_lifetimes,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="perimesh", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file (defaults if omitted)")
    parser.add_argument("--out", help="output directory (overrides config and environment)")
    parser.add_argument("--mode", choices=("intra", "inter", "list"), help="transitions mode")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.out)
        if args.mode:
            cfg = replace(cfg, mode=args.mode)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = Report()
    path = COMMANDS[args.command](cfg, report)
    print(path)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
