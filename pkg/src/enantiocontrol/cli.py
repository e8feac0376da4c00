"""Command-line front end: spectrum, controllability, simulate, design."""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

from .design import DESIGNS, CertificationError, DesignSystem, parse_sequence_document, run_design, sequence_document
from .dynamics import (
    EnsembleState,
    PropagationError,
    PulseSequence,
    PulseSpec,
    normalized_selectivity,
    propagate,
    selectivity,
    thermal_ensemble,
    write_level_csv,
    write_population_csv,
)
from .lie import (
    check_controllable,
    check_enantioselective,
    check_reachable_controllable,
    check_simultaneous_enantioselective,
)
from .rotor import ConfigError, RotorSpec, asym_levels, build_subsystem, enantiomer_pair, preset, rate_per_debye, time_unit_seconds

EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3
EXIT_NORM = 4
EXIT_CERT = 5

CONFIG_VERSION = 1
COMPLETE_SELECTIVITY = 0.98


def _load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        if cfg.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {cfg.get('version')!r}")
    # flags override document fields
    for key in ("molecule", "out_dir", "dt", "tol", "design"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _molecule(cfg: dict) -> RotorSpec:
    mol = cfg.get("molecule", "carvone")
    if isinstance(mol, str):
        return preset(mol)
    if isinstance(mol, dict):
        return RotorSpec.from_dict(mol)
    raise ConfigError("molecule must be a preset name or an object")


def _system(cfg: dict, spec: RotorSpec) -> DesignSystem:
    if "levels" in cfg and "fields" in cfg:
        return DesignSystem.from_dict(cfg, spec=spec)
    if cfg.get("design"):
        name = cfg["design"]
        if name not in DESIGNS:
            raise ConfigError(f"unknown design {name!r}; known: {sorted(DESIGNS)}")
        return DESIGNS[name][0](spec)
    raise ConfigError("config needs 'levels' and 'fields' or a design name")


def _initial(cfg: dict, system: DesignSystem, model) -> EnsembleState:
    thermal = (cfg.get("initial") or {}).get("thermal") if isinstance(cfg.get("initial"), dict) else None
    if thermal:
        levels = [tuple(lv) for lv in thermal.get("levels", model.levels)]
        return thermal_ensemble(model, levels, float(thermal["temperature_K"]))
    if not system.initial:
        raise ConfigError("no initial states given")
    try:
        return system.ensemble(model)
    except KeyError as exc:
        raise ConfigError(f"initial state not in subsystem: {exc}") from None


def _physical_pulse(d: dict, spec: RotorSpec) -> PulseSpec:
    """Pulse given in ns and kV/cm; converted to t0 and an area in radians per Debye."""
    try:
        t0 = time_unit_seconds(spec)
        start = float(d["t_start_ns"]) * 1e-9 / t0
        dur = float(d["duration_ns"]) * 1e-9 / t0
        env = d.get("envelope", "sin2")
        peak = rate_per_debye(spec, float(d["amplitude_kV_cm"]) * 1e3)
        area = peak * dur * (0.5 if env == "sin2" else 1.0)
        return PulseSpec(str(d["field_id"]), start, dur, area, env, float(d.get("phase_rad", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed physical pulse entry: {exc}") from exc


def _sequence_from_config(cfg: dict, spec: RotorSpec):
    """Returns (sequence, embedded system or None) from inline pulses or a file."""
    if "sequence_file" in cfg:
        try:
            doc = json.loads(Path(cfg["sequence_file"]).read_text())
        except FileNotFoundError:
            raise ConfigError(f"sequence file not found: {cfg['sequence_file']}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"sequence file is not valid JSON: {exc}") from None
        return parse_sequence_document(doc)
    if "sequence" in cfg:
        items = cfg["sequence"]
        if cfg.get("units") == "physical":
            if not isinstance(items, list):
                raise ConfigError("sequence must be a list")
            return PulseSequence([_physical_pulse(d, spec) for d in items]), None
        return parse_sequence_document(items)
    return None, None


def _out_dir(cfg: dict) -> Path:
    p = Path(cfg.get("out_dir") or ".")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(report: dict) -> None:
    sys.stdout.write(json.dumps(report, indent=2) + "\n")


# ---------------------------------------------------------------------------


def cmd_spectrum(cfg: dict) -> int:
    spec = _molecule(cfg)
    jmax = int(cfg.get("J_max", 2))
    if jmax < 0:
        raise ConfigError("J_max must be non-negative")
    rows = []
    for J in range(jmax + 1):
        for st in asym_levels(J, spec):
            if st.M == 0:
                rows.append({"J": J, "tau": st.tau, "E_MHz": st.energy / (2 * math.pi)})
    report = {"molecule": spec.name or spec.to_dict(), "levels": rows}
    if "levels" in cfg and "fields" in cfg:
        model = build_subsystem(spec, *_levels_fields(cfg, spec))
        report["gaps_MHz"] = {fid: w / (2 * math.pi) for fid, w in model.frequencies.items()}
    if cfg.get("out_dir"):
        out = _out_dir(cfg)
        with open(out / "spectrum.csv", "w") as fh:
            fh.write("J,tau,E_MHz\n")
            for r in rows:
                fh.write(f"{r['J']},{r['tau']},{r['E_MHz']:.12g}\n")
    _emit(report)
    return 0


def _levels_fields(cfg, spec):
    s = DesignSystem.from_dict(cfg, spec=spec)
    return s.levels, s.fields


def _yes(verdict: str, yes: str) -> str:
    return "yes" if verdict == yes else ("inconclusive" if verdict == "inconclusive" else "no")


def cmd_controllability(cfg: dict) -> int:
    spec = _molecule(cfg)
    system = _system(cfg, spec)
    tol = float(cfg.get("tol", 1e-8))
    plus, minus = enantiomer_pair(build_subsystem(spec, system.levels, system.fields))
    reports = {
        "single": check_controllable(plus, tol=tol),
        "composite": check_enantioselective(plus, minus, tol=tol),
    }
    lines = [
        f"controllable: {_yes(reports['single'].verdict, 'controllable')} ({reports['single'].dim_found}/{reports['single'].dim_required})",
        f"enantioselective: {_yes(reports['composite'].verdict, 'enantioselective')} ({reports['composite'].dim_found}/{reports['composite'].dim_required})",
    ]
    if system.initial:
        try:
            init = [plus.index(*s) for s in system.initial]
        except KeyError as exc:
            raise ConfigError(f"initial state not in subsystem: {exc}") from None
        reports["reachable"] = check_reachable_controllable(plus, init, tol=tol)
        reports["reachable_composite"] = check_simultaneous_enantioselective(plus, minus, init, tol=tol)
        r, rc = reports["reachable"], reports["reachable_composite"]
        lines.append(f"controllable on reachable set: {_yes(r.verdict, 'controllable')} ({r.dim_found}/{r.dim_required})")
        lines.append(
            f"simultaneous enantio-selective on reachable set: {_yes(rc.verdict, 'enantioselective')} ({rc.dim_found}/{rc.dim_required})"
        )
    doc = {"summary": "; ".join(lines), "reports": {k: v.to_dict() for k, v in reports.items()}}
    if cfg.get("out_dir"):
        (_out_dir(cfg) / "controllability.json").write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    if any(v.verdict == "inconclusive" for v in reports.values()):
        print("closure inconclusive: dimensions disagree across tolerances or closure unsaturated", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return 0


def _plot(result, path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "enantiocontrol"
    levels = result.models[1].levels
    fig, axes = plt.subplots(len(levels), 1, figsize=(6, 1.8 * len(levels)), sharex=True, squeeze=False)
    for ax, lv in zip(axes[:, 0], reversed(levels)):
        for sign, style in ((1, "-"), (-1, "--")):
            if sign in result.states:
                ax.plot(result.times, result.level_population(sign, lv), style, label="(+)" if sign > 0 else "(-)")
        ax.set_ylabel(f"P J={lv[0]} tau={lv[1]}")
        ax.set_ylim(-0.02, 1.02)
    axes[0, 0].legend(loc="upper right", fontsize="small")
    axes[0, 0].set_title(title)
    axes[-1, 0].set_xlabel("t / t0")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _summary(result, target) -> dict:
    levels = result.models[1].levels
    by_level = {f"{J},{tau}": selectivity(result, (J, tau)) for J, tau in levels}
    out = {
        "t_final_t0": float(result.times[-1]),
        "steps": len(result.times) - 1,
        "norm_error": result.norm_error(),
        "selectivity_by_level": by_level,
        "final_level_populations": {
            ("+" if s > 0 else "-"): {f"{J},{tau}": float(result.level_population(s, (J, tau))[-1]) for J, tau in levels}
            for s in sorted(result.states, reverse=True)
        },
    }
    if target is not None:
        S = selectivity(result, target)
        out["target_level"] = list(target)
        out["selectivity"] = S
        out["normalized_selectivity"] = normalized_selectivity(result, target)
    best = max(abs(v) for v in by_level.values())
    out["max_abs_selectivity"] = best
    out["selectivity_complete"] = bool(best >= COMPLETE_SELECTIVITY)
    return out


def cmd_simulate(cfg: dict) -> int:
    spec = _molecule(cfg)
    seq, embedded = _sequence_from_config(cfg, spec)
    dt = cfg.get("dt")
    if seq is None:
        if not cfg.get("design"):
            raise ConfigError("simulate needs a sequence, a sequence file or a design name")
        system, seq = run_design(cfg["design"], spec, dt=dt)
    else:
        system = embedded if embedded is not None and "levels" not in cfg else _system(cfg, spec)
        if embedded is not None and "molecule" in cfg:
            system.spec = spec
    plus, minus = enantiomer_pair(build_subsystem(system.spec, system.levels, system.fields))
    unknown = sorted({p.field_id for p in seq.pulses} - set(plus.couplings))
    if unknown:
        raise ConfigError(f"sequence uses fields not in the subsystem: {unknown}")
    initial = _initial(cfg, system, plus)
    result = propagate((plus, minus), seq, initial, dt=dt, t_final=cfg.get("t_final"))
    target = system.target_level
    if "target_level" in cfg:
        target = tuple(cfg["target_level"])
    summary = _summary(result, target)
    summary["design"] = seq.name or None
    out = _out_dir(cfg)
    stem = seq.name or "simulation"
    every = int(cfg.get("every", 1))
    write_population_csv(result, out / f"{stem}_populations.csv", every=every)
    write_level_csv(result, out / f"{stem}_levels.csv", every=every)
    _plot(result, out / f"{stem}_levels.svg", stem)
    (out / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _emit(summary)
    return 0


def cmd_design(cfg: dict) -> int:
    spec = _molecule(cfg)
    name = cfg.get("design")
    if not name:
        raise ConfigError("design needs a design name")
    out = _out_dir(cfg)
    try:
        system, seq = run_design(name, spec, dt=cfg.get("dt"))
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        _emit({"design": name, "certified": False, "certificate": exc.certificate})
        return EXIT_CERT
    doc = sequence_document(seq, system)
    (out / f"{name}_sequence.json").write_text(json.dumps(doc, indent=2) + "\n")
    _emit({"design": name, "certified": True, "pulses": len(seq.pulses), "file": str(out / f"{name}_sequence.json"),
           "certificate": doc["certificate"]})
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "controllability": cmd_controllability,
    "simulate": cmd_simulate,
    "design": cmd_design,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--molecule", help="preset name (e.g. carvone)")
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--out-dir", dest="out_dir", help="directory for CSV/SVG/JSON outputs")
    common.add_argument("--dt", type=float, help="propagation step in t0")
    common.add_argument("--tol", type=float, help="Lie closure rank tolerance")
    common.add_argument("--design", help=f"built-in design: {', '.join(DESIGNS)}")
    p = argparse.ArgumentParser(prog="enantiocontrol", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "design":
            sp.add_argument("name", nargs="?", help="design to build")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "name", None) and not args.design:
        args.design = args.name
    warnings.simplefilter("default")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"propagation aborted: {exc}", file=sys.stderr)
        return EXIT_NORM


if __name__ == "__main__":
    sys.exit(main())
