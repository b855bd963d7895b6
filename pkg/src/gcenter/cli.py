"""Command-line entry point: ``gcenter <command> ...``.

Exit codes: 0 success / pass, 1 tolerance failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import detchain, optikit, photonsim, thermo, trimlab
from .errors import GCenterError, UnknownReproduction

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _read_stream(path: str) -> photonsim.PhotonStream:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p} does not exist")
    return photonsim.read_stream_csv(p) if p.suffix == ".csv" else photonsim.read_stream(p)


def _write_stream(path: str, stream: photonsim.PhotonStream) -> None:
    p = Path(path)
    (photonsim.write_stream_csv if p.suffix == ".csv" else photonsim.write_stream)(p, stream)


def _detector(name: str) -> detchain.DetectorSpec:
    table = {"DET1": detchain.DET1, "DET2": detchain.DET2, "ideal": detchain.DetectorSpec()}
    if name not in table:
        raise ValueError(f"unknown detector {name!r}; choose from {sorted(table)}")
    return table[name]


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    em = photonsim.EmitterSpec(zpl_nm=args.zpl_nm, lifetime_ns=args.lifetime_ns, p_sat_uw=args.p_sat_uw,
                               i_inf_cps=args.i_inf_cps)
    exc = photonsim.ExcitationSpec(mode=args.mode, power_uw=args.power_uw,
                                   rep_rate_hz=args.rep_rate_hz if args.mode == "pulsed" else None)
    parts = [photonsim.simulate_emission(em, exc, args.duration_s, args.seed, collection=args.collection)]
    if args.background_cps_per_uw > 0:
        parts.append(photonsim.simulate_background(args.power_uw, args.background_cps_per_uw,
                                                   args.duration_s, args.seed + 1))
    stream = photonsim.merge(*parts)
    _write_stream(args.out, stream)
    print(f"wrote {len(stream)} events ({stream.rate_cps:.1f} cps) to {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    stream = _read_stream(args.input)
    det = _detector(args.detector)
    if args.hbt is not None:
        a, b = detchain.hbt_split(stream, args.hbt, args.seed)
        out_a, out_b = args.out.split(",") if "," in args.out else (args.out + ".a", args.out + ".b")
        det_b = _detector(args.detector_b or args.detector)
        a = detchain.detect(a, det, stream.duration_s, args.seed + 1)
        b = detchain.detect(b, det_b, stream.duration_s, args.seed + 2)
        _write_stream(out_a, a)
        _write_stream(out_b, b)
        print(f"arm A: {len(a)} events -> {out_a}\narm B: {len(b)} events -> {out_b}")
    else:
        out = detchain.detect(stream, det, stream.duration_s, args.seed)
        _write_stream(args.out, out)
        print(f"{len(out)} detected events -> {args.out}")
    return EXIT_OK


def cmd_g2(args) -> int:
    from .fitkit import fit_g2_2ls, fit_g2_3ls

    hist = detchain.coincidence_histogram(_read_stream(args.a), _read_stream(args.b),
                                          args.bin_ps, args.max_delay_ps)
    if args.out:
        detchain.write_histogram_csv(args.out, hist)
    fit = (fit_g2_3ls if args.model == "3ls" else fit_g2_2ls)(hist, normalize=args.normalize,
                                                             lifetime_ns=args.lifetime_ns)
    print(fit.to_json())
    g0 = fit.extras["g2_zero"]
    print(f"g2(0) = {g0:.4f}" + (f" +- {fit.extras['g2_zero_sigma']:.4f}" if "g2_zero_sigma" in fit.extras else ""))
    if args.max_g2 is not None and g0 > args.max_g2:
        return EXIT_FAIL
    return EXIT_OK


def cmd_lifetime(args) -> int:
    from .fitkit import fit_lifetime

    stream = _read_stream(args.input)
    hist = detchain.decay_histogram(stream, args.rep_rate_hz, args.bin_ps)
    fit = fit_lifetime(hist, 1e9 / args.rep_rate_hz, clip=(args.clip[0], args.clip[1]))
    print(fit.to_json())
    print(f"tau = {fit['tau']:.3f} +- {fit.sigmas['tau']:.3f} ns")
    return EXIT_OK


def cmd_saturation(args) -> int:
    from .fitkit import SaturationData, fit_saturation, subtract_background

    data = np.loadtxt(args.input, delimiter=",", comments="#", ndmin=2, skiprows=args.skiprows)
    if data.shape[1] != 4:
        raise ValueError("expected columns power_uw,emitter_cps,background_cps,dwell_s")
    fit = fit_saturation(subtract_background(SaturationData([tuple(r) for r in data])))
    print(fit.to_json())
    print(f"P_sat = {fit['p_sat']:.3f} +- {fit.sigmas['p_sat']:.3f} uW, "
          f"I_inf = {fit['i_inf']:.1f} +- {fit.sigmas['i_inf']:.1f} cps")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    from .fitkit import fit_lorentzian_peaks

    spec = detchain.read_spectrum_csv(args.input)
    for i, r in enumerate(fit_lorentzian_peaks(spec, args.peaks)):
        print(f"peak {i}: center = {r['center']:.4f} nm, fwhm = {r['fwhm'] * 1e3:.1f} pm, "
              f"amplitude = {r['amplitude']:.1f}")
    return EXIT_OK


def cmd_mode(args) -> int:
    res = optikit.fiber_coupling_efficiency(args.width_nm, args.height_nm, args.wavelength_nm,
                                            args.waist_um, args.spacing_nm, fresnel=not args.no_fresnel)
    if args.out:
        optikit.write_grid(args.out, res["mode"])
    print(f"n_eff = {res['n_eff']:.5f}")
    print(f"overlap = {res['overlap']:.5f}")
    print(f"coupling efficiency = {100 * res['efficiency']:.3f} %")
    return EXIT_OK


def cmd_thermal(args) -> int:
    if args.config:
        cfg = thermo.StackConfig.from_json(Path(args.config).read_text())
    else:
        from .repro import ridge_thermal_config
        cfg = ridge_thermal_config()
    stack = thermo.build_stack(cfg)
    sol = thermo.solve_steady_state(stack)
    if args.out:
        thermo.write_field(args.out, sol)
    print(f"peak T = {sol.peak_k:.2f} K")
    print(f"FWHM = {thermo.profile_fwhm(sol, axis=0):.3f} um")
    print(f"boundary flux / injected = {sol.boundary_flux_w / max(stack.source_w.sum(), 1e-300):.5f}")
    return EXIT_OK


def cmd_budget(args) -> int:
    if args.json:
        budget = detchain.EfficiencyBudget.from_json(Path(args.json).read_text())
    else:
        budget = {"DET1": detchain.DET1_BUDGET, "DET2": detchain.DET2_BUDGET}[args.detector]
    eta = detchain.compose_budget(budget)
    for name, f in budget.factors:
        print(f"  {name:<18} {f:.4g}")
    print(f"eta_total = {eta:.6g} ({100 * eta:.3f} %)")
    if args.count_rate is not None:
        qe = detchain.quantum_efficiency_bound(args.count_rate, args.rep_rate_hz, eta)
        print(f"quantum efficiency bound = {qe:.4g}")
    return EXIT_OK


def _trim_emitters(args) -> list[trimlab.EmitterLine]:
    if args.zpls:
        dirs = args.directions or [-1] * len(args.zpls)
        if len(dirs) != len(args.zpls):
            raise ValueError("--directions must match --zpls")
        return [trimlab.EmitterLine(z, d) for z, d in zip(args.zpls, dirs)]
    if args.seed is None:
        raise ValueError("--seed is required when the cohort is generated")
    cohort = trimlab.make_cohort(args.n, args.n_trimmable, seed=args.seed)
    return [trimlab.EmitterLine(e.spec.zpl_nm, e.state.direction, e.state.max_shift_pm) for e in cohort]


def cmd_trim(args) -> int:
    grid = trimlab.GridSpec(spacing_ghz=args.spacing_ghz)
    if args.action == "plan":
        emitters = _trim_emitters(args)
        plan = trimlab.assign_channels(emitters, grid)
        for i, em in enumerate(emitters):
            k = plan.channels.get(i)
            where = f"channel {k} ({grid.channel_ghz(k) / 1e3:.4f} THz)" if k is not None else "unassigned"
            print(f"emitter {i}: {em.zpl_nm:.4f} nm dir {em.direction:+d} -> {where}")
        print(f"total shift = {plan.total_cost_ghz:.2f} GHz")
        if args.out:
            Path(args.out).write_text(json.dumps(plan.to_dict(), indent=2))
        return EXIT_OK
    if args.seed is None:
        raise ValueError("trim run requires --seed")
    cohort = trimlab.make_cohort(args.n, args.n_trimmable, seed=args.seed)
    report = trimlab.run_campaign(cohort, grid, seed=args.seed, max_power_mw=args.max_power_mw)
    if args.out:
        Path(args.out).write_text(trimlab.campaign_json(report))
    for i, r in enumerate(report["emitters"]):
        off = r["final_offset_ghz"]
        print(f"emitter {i}: {r['status']:<11} steps={len(r['schedule']):2d} "
              f"offset={'n/a' if off is None else f'{off:+.2f} GHz'}")
    print(f"aligned {report['aligned']}/{len(cohort)}, max power {report['max_scheduled_power_mw']:.3f} mW")
    return EXIT_OK


def cmd_repro(args) -> int:
    from .config import load_config
    from .repro import REPRODUCTIONS, format_report, run_reproduction

    cfg = load_config(args.config) if args.config else None
    names = list(REPRODUCTIONS) if args.name == "all" else [args.name]
    ok = True
    for name in names:
        report = run_reproduction(name, cfg, out_dir=args.out_dir)
        print(format_report(report), end="")
        ok &= report["pass"]
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcenter", description="G-center emitter simulation and analysis")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate an emitter photon stream")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help=".bin (binary) or .csv")
    s.add_argument("--mode", choices=("cw", "pulsed"), default="cw")
    s.add_argument("--power-uw", type=float, default=10.0)
    s.add_argument("--duration-s", type=float, default=1.0)
    s.add_argument("--rep-rate-hz", type=float, default=34e6)
    s.add_argument("--collection", type=float, default=1.0)
    s.add_argument("--background-cps-per-uw", type=float, default=0.0)
    s.add_argument("--zpl-nm", type=float, default=1278.7)
    s.add_argument("--lifetime-ns", type=float, default=8.21)
    s.add_argument("--p-sat-uw", type=float, default=7.6)
    s.add_argument("--i-inf-cps", type=float, default=4753.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", help="apply detectors (optionally after a beamsplitter)")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True, help="output path; with --hbt give 'a_path,b_path'")
    s.add_argument("--detector", default="DET1")
    s.add_argument("--detector-b", default="DET2")
    s.add_argument("--hbt", type=float, default=None, metavar="RATIO")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("g2", help="coincidence histogram and antibunching fit")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--bin-ps", type=float, default=300.0)
    s.add_argument("--max-delay-ps", type=float, default=100_000.0)
    s.add_argument("--model", choices=("2ls", "3ls"), default="2ls")
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--lifetime-ns", type=float, default=8.0)
    s.add_argument("--max-g2", type=float, default=None, help="exit 1 if g2(0) exceeds this")
    s.add_argument("--out", default=None, help="write the histogram CSV here")
    s.set_defaults(func=cmd_g2)

    s = sub.add_parser("lifetime", help="clipped mono-exponential lifetime fit")
    s.add_argument("--input", required=True)
    s.add_argument("--rep-rate-hz", type=float, default=34e6)
    s.add_argument("--bin-ps", type=float, default=100.0)
    s.add_argument("--clip", type=float, nargs=2, default=(1.0, 12.5), metavar=("START_NS", "END_NS"))
    s.set_defaults(func=cmd_lifetime)

    s = sub.add_parser("saturation", help="background-subtracted saturation fit")
    s.add_argument("--input", required=True, help="CSV power_uw,emitter_cps,background_cps,dwell_s")
    s.add_argument("--skiprows", type=int, default=1)
    s.set_defaults(func=cmd_saturation)

    s = sub.add_parser("spectrum", help="Lorentzian peak fit of a spectrum CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--peaks", type=int, default=1)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("mode", help="waveguide mode and fiber overlap")
    s.add_argument("--width-nm", type=float, default=400.0)
    s.add_argument("--height-nm", type=float, default=220.0)
    s.add_argument("--wavelength-nm", type=float, default=1280.0)
    s.add_argument("--waist-um", type=float, default=2.1)
    s.add_argument("--spacing-nm", type=float, default=10.0)
    s.add_argument("--no-fresnel", action="store_true")
    s.add_argument("--out", default=None, help="CSV path for the mode field (JSON sidecar alongside)")
    s.set_defaults(func=cmd_mode)

    s = sub.add_parser("thermal", help="steady-state heating of the waveguide stack")
    s.add_argument("--config", default=None, help="stack JSON; default is the ridge configuration")
    s.add_argument("--out", default=None, help="raw float64 field path (JSON header alongside)")
    s.set_defaults(func=cmd_thermal)

    s = sub.add_parser("budget", help="efficiency budget and quantum-efficiency bound")
    s.add_argument("--detector", choices=("DET1", "DET2"), default="DET1")
    s.add_argument("--json", default=None, help="budget JSON array of {name, factor}")
    s.add_argument("--count-rate", type=float, default=None)
    s.add_argument("--rep-rate-hz", type=float, default=78e6)
    s.set_defaults(func=cmd_budget)

    s = sub.add_parser("trim", help="channel planning and closed-loop trimming")
    s.add_argument("action", choices=("plan", "run"))
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--zpls", type=float, nargs="*", default=None)
    s.add_argument("--directions", type=int, nargs="*", default=None)
    s.add_argument("--n", type=int, default=12)
    s.add_argument("--n-trimmable", type=int, default=11)
    s.add_argument("--spacing-ghz", type=float, default=25.0)
    s.add_argument("--max-power-mw", type=float, default=0.6)
    s.add_argument("--out", default=None, help="campaign report JSON")
    s.set_defaults(func=cmd_trim)

    s = sub.add_parser("repro", help="run a reproduction and compare against targets")
    s.add_argument("name", help="reproduction name or 'all'")
    s.add_argument("--config", default=None)
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnknownReproduction as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GCenterError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
