"""Steady-state temperature of the irradiated ridge; optional PNG of the surface map."""
import argparse
from pathlib import Path

import numpy as np

from gcenter import thermo
from gcenter.repro import ridge_thermal_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None, help="stack JSON (default: ridge geometry)")
    ap.add_argument("--power-uw", type=float, default=None, help="override the source power")
    ap.add_argument("--out", default="thermal_field.bin")
    ap.add_argument("--png", default=None)
    args = ap.parse_args()

    cfg = thermo.StackConfig.from_json(Path(args.config).read_text()) if args.config else ridge_thermal_config()
    if args.power_uw is not None:
        cfg.source.power_w = args.power_uw * 1e-6
    stack = thermo.build_stack(cfg)
    sol = thermo.solve_steady_state(stack)
    thermo.write_field(args.out, sol)
    print(f"peak {sol.peak_k:.1f} K, FWHM {thermo.profile_fwhm(sol, axis=0):.2f} um, "
          f"{sol.iterations} CG iterations, outflow/injected {sol.boundary_flux_w / stack.source_w.sum():.5f}")
    if args.png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        x = stack.cell_centres(0) * 1e6
        y = stack.cell_centres(1) * 1e6
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.pcolormesh(x, y, sol.temperature[:, :, -1].T, shading="auto")
        fig.colorbar(im, label="T (K)")
        ax.set_xlabel("x (um)")
        ax.set_ylabel("y (um)")
        ax.set_aspect("equal")
        fig.tight_layout()
        fig.savefig(args.png, dpi=120)
        print(f"map written to {args.png}")


if __name__ == "__main__":
    main()
