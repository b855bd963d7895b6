"""Waveguide-to-fiber coupling versus wavelength and grid spacing."""
import argparse

from gcenter import optikit


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--width-nm", type=float, default=400.0)
    ap.add_argument("--height-nm", type=float, default=220.0)
    ap.add_argument("--waist-um", type=float, default=2.1)
    ap.add_argument("--wavelengths", type=float, nargs="*", default=[1260.0, 1280.0, 1300.0])
    ap.add_argument("--spacings", type=float, nargs="*", default=[20.0, 10.0])
    args = ap.parse_args()

    print(f"{'lambda (nm)':>11} {'dx (nm)':>8} {'n_eff':>9} {'overlap':>8} {'coupling':>9}")
    for wl in args.wavelengths:
        for dx in args.spacings:
            r = optikit.fiber_coupling_efficiency(args.width_nm, args.height_nm, wl, args.waist_um, dx)
            print(f"{wl:11.1f} {dx:8.1f} {r['n_eff']:9.5f} {r['overlap']:8.4f} {100 * r['efficiency']:8.2f}%")


if __name__ == "__main__":
    main()
