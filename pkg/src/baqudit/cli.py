"""Command-line entry point: ``baqudit <subcommand> [options]``.

Every run writes its outputs plus one ``manifest.json`` into ``--out``.  Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 infeasible request.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .atomic_structure import (build_transitions, default_constants, load_constants, sideband_augmented_table,
                               solve_manifold)
from .calibration import (RamseyConfig, detuning_uncertainty, find_detuning, laser_sampler, model_dark,
                          optimal_wait, simulate_triplets, PHI1, PHI2)
from .compiler import build_named_circuit, compile_unitary, to_pulse_sequence
from .config import build_manifest, check_keys, file_sha256, load_toml, write_json
from .errors import BaquditError, ConfigError, InfeasibleError, NumericalError
from .noise import NoiseParams, load_noise, noise_to_mapping, preset, sample_shots
from .protocols import (bernstein_vazirani, cccnot_truth_table, contrast_scan, scan_noise_threshold)
from .simulator import PulseSequence, basis_state, monte_carlo
from .spam import (SpamParams, benign_shelving, default_plan, heatmap, nbop_simulate, plan_decay_error,
                   plan_from_mapping, repump_pathways, spam_budget)
from .state_selection import Encoding, select_encoding

MANIFEST = "manifest.json"
TARGET_ALIASES = {"hadamard2": "H2", "hadamard3": "H3", "cccnot": "CCCNOT"}


# ---------------------------------------------------------------------------
# Output helpers


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _round(obj: Any) -> Any:
    """Floats to 12 significant digits so JSON outputs are stable text."""
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump(path: Path, payload: Any) -> None:
    write_json(path, _round(payload))


def parse_range(text: str) -> list[int]:
    """'2-17', '2,4,8' or '3' -> list of ints."""
    out: list[int] = []
    try:
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer range {text!r}") from exc
    return out


def parse_grid(text: str) -> np.ndarray:
    """'start:stop:n' -> linspace."""
    try:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    except ValueError as exc:
        raise ConfigError(f"grid must look like start:stop:n, got {text!r}") from exc


# ---------------------------------------------------------------------------
# Shared loaders


def _constants(args):
    if getattr(args, "constants", None):
        c = load_constants(args.constants)
        return c["S12"], c["D52"]
    return default_constants()


def parse_weights(text: str | None) -> dict[int, float] | None:
    """'-2=1,0=0.5' -> {-2: 1.0, 0: 0.5}; unspecified q keep weight 1."""
    if not text:
        return None
    out = {}
    try:
        for part in text.split(","):
            q, w = part.split("=")
            out[int(q)] = float(w)
    except ValueError as exc:
        raise ConfigError(f"cannot parse geometry weights {text!r}") from exc
    if not set(out) <= set(range(-2, 3)) or any(w < 0 for w in out.values()):
        raise ConfigError("geometry weights need q in -2..2 and non-negative values")
    return out


def _transitions(args):
    return build_transitions(args.B, _constants(args), geometry_weights=parse_weights(args.geometry_weights),
                             reference_pi_time_us=args.pi_time_us)


def _noise(args) -> NoiseParams:
    p = load_noise(args.noise) if getattr(args, "noise", None) else preset(args.noise_preset)
    if getattr(args, "sources", None):
        p = p.only(*[s.strip() for s in args.sources.split(",") if s.strip()])
    return p


def _encoding(args, d: int, hub_index: int = 0) -> Encoding:
    if getattr(args, "encoding", None):
        enc = Encoding.load(args.encoding)
        if enc.d != d:
            raise ConfigError(f"encoding file has d={enc.d}, need d={d}")
        return enc
    return select_encoding(d, _transitions(args), _noise(args), hub_index=hub_index, B_G=args.B)


# ---------------------------------------------------------------------------
# Subcommands.  Each returns (list of config paths read, extra manifest data).


def cmd_levels(args, out: Path):
    rows = []
    for const in _constants(args):
        for lv in solve_manifold(const, args.B):
            rows.append((const.manifold, lv.label, lv.F, lv.m, lv.energy, lv.dEdB))
    write_csv(out / "levels.csv", ["manifold", "label", "F", "m", "energy_MHz", "dEdB_MHz_per_G"], rows)


def cmd_transitions(args, out: Path):
    ts = _transitions(args)
    write_csv(out / "transitions.csv",
              ["id", "lower", "upper", "frequency_MHz", "sensitivity_MHz_per_G", "delta_m", "rel_strength",
               "pi_time_us"],
              [(t.id, t.lower.label, t.upper.label, t.frequency, t.sensitivity, t.delta_m, t.rel_strength,
                t.pi_time) for t in ts])
    if args.sidebands:
        lines = sideband_augmented_table(ts, tuple(args.secular_MHz), args.eta, args.nbar)
        write_csv(out / "sidebands.csv", ["carrier", "kind", "frequency_MHz", "rel_strength"],
                  [(ln.carrier, ln.kind, ln.frequency, ln.strength) for ln in lines])


def cmd_calibrate_sim(args, out: Path):
    cfg = RamseyConfig(rabi_kHz=args.rabi_kHz, tau_us=args.tau_us, shots=args.shots, T2_star_us=args.T2_us,
                       window_kHz=args.window_kHz)
    rng = np.random.default_rng(args.seed)
    p1 = float(model_dark(cfg, args.detuning_kHz, PHI1))
    p2 = float(model_dark(cfg, args.detuning_kHz, PHI2))
    k1 = rng.binomial(cfg.shots, p1) / cfg.shots
    k2 = rng.binomial(cfg.shots, p2) / cfg.shots
    est = find_detuning(k1, k2, cfg)
    result = {
        "true_detuning_kHz": args.detuning_kHz,
        "p_phi1": k1, "p_phi2": k2,
        "estimated_detuning_kHz": est.f_kHz,
        "search_window_kHz": est.window_kHz,
        "sigma_f_Hz": detuning_uncertainty(0.5, cfg.shots, cfg.tau_us, cfg.T2_star_us),
        "optimal_wait_us": optimal_wait(0.5, cfg.shots, cfg.T2_star_us),
    }
    if args.triplets:
        ts = _transitions(args)
        by = {t.id: t for t in ts}
        try:
            kin, ksens, kt = (by[i].sensitivity for i in (args.int_transition, args.sens_transition,
                                                           args.target_transition))
        except KeyError as exc:
            raise ConfigError(f"unknown transition id {exc}") from exc
        tr = simulate_triplets(kin, ksens, kt, cfg, args.triplets, args.seed,
                               laser_sampler=laser_sampler(_noise(args)))
        write_csv(out / "triplets.csv", ["x_kHz", "y_kHz"], zip(tr.x_kHz, tr.y_kHz))
        result.update({"slope": tr.slope, "intercept_kHz": tr.intercept, "slope_expected": tr.slope_expected,
                       "residual_sigma_Hz": tr.residual_sigma_Hz})
    dump(out / "calibration.json", result)


def cmd_noise(args, out: Path):
    p = _noise(args)
    dump(out / "noise.json", noise_to_mapping(p))
    if args.samples:
        write_csv(out / "samples.csv", ["shot", "dB_G", "dL_Hz", "df_Hz", "dtau_cal", "dtau_drift"],
                  [(k, r.dB, r.dL, r.df, r.dtau_c, r.dtau_d)
                   for k, r in enumerate(sample_shots(p, args.seed, args.samples))])


def cmd_simulate(args, out: Path):
    seq = PulseSequence.load(args.sequence)
    init = basis_state(seq.dim, args.initial_state)
    r = monte_carlo(seq, _noise(args), args.shots, args.seed, args.measured_state, init, args.binomial,
                    args.threads, args.model)
    write_csv(out / "populations.csv", ["state", "population", "ci_low", "ci_high"],
              [(k, r.populations[k], r.intervals[k][0], r.intervals[k][1]) for k in range(seq.dim)])
    dump(out / "result.json", r.to_dict())
    return [args.sequence]


def _load_unitary(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        U = np.load(path)
    else:
        try:
            data = json.loads(Path(path).read_text())
            check_keys(data, {"real", "imag"}, path, required={"real"})
            U = np.asarray(data["real"], float) + 1j * np.asarray(data.get("imag", 0.0), float)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"cannot read unitary from {path}: {exc}") from exc
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ConfigError(f"{path}: unitary must be a square matrix")
    return U


def cmd_compile(args, out: Path):
    if (args.target is None) == (args.unitary is None):
        raise ConfigError("give exactly one of --target or --unitary")
    if args.unitary:
        U = _load_unitary(args.unitary)
        name = Path(args.unitary).stem
    else:
        name = TARGET_ALIASES.get(args.target.lower(), args.target)
        U = build_named_circuit(name).unitary()
    order = parse_range(args.order) if args.order else None
    circ, rep = compile_unitary(U, order, eps=args.epsilon, seed=args.seed, compress=not args.no_compress,
                                restarts=args.restarts)
    seq = to_pulse_sequence(circ, gap_us=args.gap_us, default_pi_time=args.pi_time_us)
    seq.metadata["target"] = name
    dump(out / "pulses.json", seq.to_dict())
    report = rep.to_dict()
    timing = report.pop("stage_seconds")
    report["target"] = name
    dump(out / "report.json", report)
    print(f"{name}: {rep.initial_count} -> {rep.fused_count} -> {rep.final_count} pulses")
    return ([args.unitary] if args.unitary else []), {"stage_seconds": timing}


def cmd_ramsey(args, out: Path):
    dims = parse_range(args.dims)
    if args.encoding and len(dims) != 1:
        raise ConfigError("--encoding needs a single --dims value")
    scan = contrast_scan(dims, lambda d: _encoding(args, d), _noise(args), args.shots, args.seed,
                         args.gap_us, args.threads, args.model)
    rows = [p.to_dict() for p in scan.points]
    cols = ["d", "p0_phi0", "p0_phiref", "phi_ref", "contrast", "contrast_lo", "contrast_hi", "shots"]
    write_csv(out / "contrast.csv", cols, [[r[c] for c in cols] for r in rows])
    summary = {"points": rows}
    if len(dims) >= 3:
        rho, p = scan.spearman()
        summary.update({"spearman_rho": rho, "spearman_p": p})
    dump(out / "scan.json", summary)
    return [args.encoding] if args.encoding else []


def cmd_bv(args, out: Path):
    enc = _encoding(args, 2**args.n)
    keys = parse_range(args.keys) if args.keys else None
    fast = None if args.superposition == "auto" else args.superposition == "fast"
    r = bernstein_vazirani(args.n, enc, _noise(args), args.shots, args.seed, keys, fast, args.gap_us,
                           args.threads, args.model)
    write_csv(out / "bv.csv", ["key", "success"], sorted(r.success.items()))
    dump(out / "bv.json", r.to_dict())
    return [args.encoding] if args.encoding else []


def cmd_cccnot(args, out: Path):
    enc = _encoding(args, 16, hub_index=14)
    tt = cccnot_truth_table(enc, _noise(args), args.shots, args.seed, args.gap_us, args.threads, args.model)
    write_csv(out / "truth_table.csv", ["input"] + [f"out_{k}" for k in range(16)],
              [[k] + list(row) for k, row in enumerate(tt.matrix)])
    dump(out / "cccnot.json", {"mean_correct": tt.mean_correct, "shots": args.shots})
    return [args.encoding] if args.encoding else []


def cmd_spam(args, out: Path):
    ts = _transitions(args)
    read = []
    if args.plan:
        try:
            data = json.loads(Path(args.plan).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read plan {args.plan}: {exc}") from exc
        plan = plan_from_mapping(data, ts)
        read.append(args.plan)
    else:
        plan = default_plan(ts, args.pi_time_us)
    params = SpamParams(lifetime_s=args.lifetime_s, exposure_ms=args.exposure_ms,
                        secular_MHz=tuple(args.secular_MHz), eta=args.eta, nbar=args.nbar,
                        discrimination_per_state=args.discrimination, lam_dark=args.lam_dark,
                        lam_bright=args.lam_bright, threshold=args.threshold)
    if args.action == "budget":
        dims = parse_range(args.dims) if args.dims else [plan.d]
        budgets = [spam_budget(plan, ts, params, d) for d in dims]
        full = budgets[-1] if dims[-1] == plan.d else spam_budget(plan, ts, params)
        labels = (plan.zero,) + plan.order
        write_csv(out / "per_state.csv", ["position", "state", "decay", "off_resonant", "discrimination", "total"],
                  [(k, labels[k], full.decay.per_state[k], full.off_resonant.per_state[k],
                    full.discrimination.per_state[k], full.per_state_total[k]) for k in range(plan.d)])
        dump(out / "budget.json", {
            "plan": plan.to_dict(),
            "decay_readout_average": plan_decay_error(plan, args.lifetime_s, args.exposure_ms).average,
            "budgets": [b.to_dict(args.measured_fidelity) for b in budgets]})
    elif args.action == "heatmap":
        nx, ny = parse_grid(args.nu_x), parse_grid(args.nu_y)
        grid = heatmap(plan, ts, nx, ny, params)
        write_csv(out / "heatmap.csv", ["nu_x_MHz", "nu_y_MHz", "fidelity"],
                  [(x, y, grid[i, j]) for i, x in enumerate(nx) for j, y in enumerate(ny)])
    elif args.action == "repump":
        labels, M = repump_pathways(args.B)
        write_csv(out / "repump.csv", ["D_level"] + [f"S(2,{m})" for m in range(-2, 3)],
                  [[lab] + list(row) for lab, row in zip(labels, M)])
    else:
        target = args.target
        shelving = benign_shelving(target, ts, args.B)
        if args.shelving:
            try:
                shelving = json.loads(Path(args.shelving).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read shelving map {args.shelving}: {exc}") from exc
            read.append(args.shelving)
        res = nbop_simulate(target, shelving, args.reps, args.B, args.pulse_fidelity)
        write_csv(out / "nbop.csv", ["repetition", "target_population"], enumerate(res.populations))
        dump(out / "nbop.json", {"target": target, "shelving": shelving, "saturated": res.saturated,
                                 "trapped": res.trapped})
    return read


def cmd_select_states(args, out: Path):
    ts = _transitions(args)
    params = _noise(args)
    enc_dir = out / "encodings"
    enc_dir.mkdir(exist_ok=True)
    rows = []
    for d in parse_range(args.dims):
        enc = select_encoding(d, ts, params, hub_index=args.hub_index, B_G=args.B)
        enc.save(enc_dir / f"encoding_d{d}.json")
        m = enc.metadata
        rows.append((d, " ".join(enc.levels), m.get("tau_S_us", ""), m.get("cost", ""),
                     m.get("proven_optimal", "")))
    write_csv(out / "summary.csv", ["d", "levels", "tau_s_us", "cost", "proven_optimal"], rows)


def cmd_scan_noise_threshold(args, out: Path):
    enc = _encoding(args, args.d)
    r = scan_noise_threshold(enc, _noise(args), args.source, args.target_loss, args.shots, args.seed,
                             args.lo, args.hi, args.iterations, args.model, args.threads)
    dump(out / "threshold.json", {"source": r.source, "d": r.d, "target_loss": r.target_loss,
                                  "scale": r.scale, "loss": r.loss, "iterations": r.iterations})
    return [args.encoding] if args.encoding else []


# ---------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser, field: bool = True, noise: bool = False, mc: bool = False) -> None:
    p.add_argument("--out", default=None, help="output directory (default: out/<subcommand>)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", help="TOML file whose keys set option defaults")
    if field:
        p.add_argument("--B", type=float, default=4.209, help="magnetic field (G)")
        p.add_argument("--constants", help="atomic-constants TOML")
        p.add_argument("--pi-time-us", type=float, default=30.0, help="pi-time of the strongest line (us)")
        p.add_argument("--geometry-weights", help="1762 nm beam weight per q, e.g. '-2=1,0=0.5' (default uniform)")
    if noise:
        p.add_argument("--noise", help="noise TOML file")
        p.add_argument("--noise-preset", default="table1", help="table1, magnets or none")
        p.add_argument("--sources", help="comma-separated subset of noise sources to keep")
    if mc:
        p.add_argument("--shots", type=int, default=1024)
        p.add_argument("--model", choices=("paper", "phase_only"), default="paper")
        p.add_argument("--gap-us", type=float, default=0.0)
        p.add_argument("--encoding", help="encoding JSON (default: select automatically)")


COMMANDS: dict[str, Callable] = {}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="baqudit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"baqudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, fn: Callable, help: str, **kw) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        _common(p, **kw)
        subs[name] = p
        COMMANDS[name] = fn
        return p

    add("levels", cmd_levels, "eigenlevels of S1/2 and D5/2")

    p = add("transitions", cmd_transitions, "S1/2 <-> D5/2 transition table")
    p.add_argument("--sidebands", action="store_true")
    p.add_argument("--secular-MHz", type=float, nargs=3, default=[1.27, 1.46, 0.215])
    p.add_argument("--eta", type=float, default=0.014)
    p.add_argument("--nbar", type=float, default=140.0)

    p = add("calibrate-sim", cmd_calibrate_sim, "synthetic two-phase Ramsey calibration", noise=True)
    p.add_argument("--rabi-kHz", type=float, default=12.5)
    p.add_argument("--tau-us", type=float, default=100.0)
    p.add_argument("--shots", type=int, default=250)
    p.add_argument("--T2-us", type=float, default=1000.0)
    p.add_argument("--window-kHz", type=float, default=1.0)
    p.add_argument("--detuning-kHz", type=float, default=0.3)
    p.add_argument("--triplets", type=int, default=0, help="number of triplet experiments (0: skip)")
    p.add_argument("--int-transition", default="S(2,0)-D(2,0)")
    p.add_argument("--sens-transition", default="S(2,-1)-D(4,-3)")
    p.add_argument("--target-transition", default="S(2,-1)-D(3,-1)")

    p = add("noise", cmd_noise, "resolved noise parameters and optional samples", field=False, noise=True)
    p.add_argument("--samples", type=int, default=0)

    p = add("simulate", cmd_simulate, "Monte-Carlo run of a pulse sequence", field=False, noise=True)
    p.add_argument("--sequence", required=True, help="pulse-sequence JSON")
    p.add_argument("--shots", type=int, default=1024)
    p.add_argument("--model", choices=("paper", "phase_only"), default="paper")
    p.add_argument("--initial-state", type=int, default=0)
    p.add_argument("--measured-state", type=int, default=0)
    p.add_argument("--binomial", action="store_true")

    p = add("compile", cmd_compile, "compile a unitary to star-topology pulses", field=False)
    p.add_argument("--target", help="hadamard2, hadamard3, cccnot, superposition(d) or BV(n,key)")
    p.add_argument("--unitary", help="unitary as .npy or JSON {real, imag}")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--no-compress", action="store_true")
    p.add_argument("--order", help="swap-cycle order of the leaves 1..d-1, e.g. '3,1,2' (default ascending)")
    p.add_argument("--gap-us", type=float, default=0.0)
    p.add_argument("--pi-time-us", type=float, default=30.0)

    p = add("ramsey", cmd_ramsey, "qudit Ramsey contrast scan", noise=True, mc=True)
    p.add_argument("--dims", default="2-17")

    p = add("bv", cmd_bv, "Bernstein-Vazirani on virtual qubits", noise=True, mc=True)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--keys", help="keys to run (default: all)")
    p.add_argument("--superposition", choices=("auto", "fast", "hadamard"), default="auto")

    add("cccnot", cmd_cccnot, "CCCNOT truth table", noise=True, mc=True)

    p = add("spam", cmd_spam, "SPAM error budget, heatmap, repump pathways, NBOP")
    p.add_argument("action", nargs="?", choices=("budget", "heatmap", "repump", "nbop"), default="budget")
    p.add_argument("--plan", help="readout plan JSON")
    p.add_argument("--dims", help="dimensions for the budget (default: full plan)")
    p.add_argument("--lifetime-s", type=float, default=30.1)
    p.add_argument("--exposure-ms", type=float, default=5.0)
    p.add_argument("--secular-MHz", type=float, nargs=3, default=[1.27, 1.46, 0.215])
    p.add_argument("--eta", type=float, default=0.014)
    p.add_argument("--nbar", type=float, default=140.0)
    p.add_argument("--discrimination", type=float, default=5.6e-5, help="per-state discrimination error")
    p.add_argument("--lam-dark", type=float)
    p.add_argument("--lam-bright", type=float)
    p.add_argument("--threshold", type=int, default=9)
    p.add_argument("--measured-fidelity", type=float, default=None)
    p.add_argument("--nu-x", default="1.17:1.37:21", help="heatmap grid start:stop:n (MHz)")
    p.add_argument("--nu-y", default="1.36:1.56:21")
    p.add_argument("--target", default="S(2,-2)", help="NBOP target level")
    p.add_argument("--shelving", help="NBOP shelving map JSON {S level: D level}")
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--pulse-fidelity", type=float, default=1.0)

    p = add("select-states", cmd_select_states, "choose encodings by the coherence cost", noise=True)
    p.add_argument("--dims", default="2-17")
    p.add_argument("--hub-index", type=int, default=0)

    p = add("scan-noise-threshold", cmd_scan_noise_threshold, "bisect a noise scale to a target contrast loss",
            noise=True, mc=True)
    p.set_defaults(shots=128)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target-loss", type=float, default=0.05)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=1024.0)
    p.add_argument("--iterations", type=int, default=16)

    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    subs["rerun"] = p
    return parser, subs


def _apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    data = load_toml(path)
    dests = {a.dest for a in sub._actions if a.dest not in ("help", "config", "out")}
    check_keys({k.replace("-", "_"): v for k, v in data.items()}, dests, path)
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in data.items()})


def run(argv: Sequence[str]) -> int:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        try:
            m = json.loads(Path(args.manifest).read_text())
            old = list(m["argv"])
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {args.manifest}: {exc}") from exc
        if args.out:
            old = _replace_out(old, args.out)
        return run(old)
    config_paths = []
    if args.config:
        _apply_config(subs[args.command], args.config)
        args = parser.parse_args(argv)
        config_paths.append(args.config)
    if getattr(args, "threads", 1) < 1:
        raise ConfigError("--threads must be >= 1")
    out = Path(args.out or Path("out") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    res = COMMANDS[args.command](args, out)
    read, extra = [], {}
    if isinstance(res, tuple):
        read, extra = res
    elif res:
        read = res
    for attr in ("noise", "constants"):
        if getattr(args, attr, None):
            read.append(getattr(args, attr))
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    extra = dict(extra)
    extra["resolved_options"] = {k: v for k, v in sorted(vars(args).items())}
    extra["outputs_sha256"] = {str(p.relative_to(out)): file_sha256(p) for p in outputs}
    write_json(out / MANIFEST, build_manifest(args.command, list(argv), config_paths + read,
                                              getattr(args, "seed", None), extra))
    return 0


def _replace_out(argv: list[str], out: str) -> list[str]:
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        res.append(a)
    return res + ["--out", out]


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 4
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BaquditError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
