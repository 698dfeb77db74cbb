#!/usr/bin/env python3
"""Render figures from kerrcool CSV output (optional; needs matplotlib)."""

import argparse
import csv
import sys


def read_table(path):
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    out = {name: [] for name in reader.fieldnames}
    for row in reader:
        for k, v in row.items():
            try:
                out[k].append(float(v))
            except ValueError:
                out[k].append(v)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("kind", choices=["cool-trace", "fig4c", "workcycle", "spectrum"])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--out", default="figure.png")
    args = ap.parse_args()

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    if args.kind == "cool-trace":
        for path in args.csv:
            t = read_table(path)
            ax.semilogy([d * 1e-6 for d in t["delta_hz"]], t["n_m"], label=path)
        ax.set_xlabel("detuning (MHz)")
        ax.set_ylabel("phonon number")
        ax.legend(fontsize=7)
    elif args.kind == "fig4c":
        t = read_table(args.csv[0])
        g = [x * 1e-3 for x in t["g0_hz"]]
        ax.plot(g, t["n_m_kerr"], label="Kerr, capped power")
        ax.plot(g, t["n_m_linear_same_power"], ":", label="linear, same power")
        ax.plot(g, t["n_m_linear_ideal"], "--", label="linear, optimal power")
        ax.set_yscale("log")
        ax.set_xlabel("g0/2pi (kHz)")
        ax.set_ylabel("phonon number")
        ax.legend(fontsize=7)
    elif args.kind == "workcycle":
        t = read_table(args.csv[0])
        ax.plot(t["x_over_xzpm"], t["n_c"])
        ax.set_xlabel("x / x_zpm")
        ax.set_ylabel("photon number")
    else:
        t = read_table(args.csv[0])
        pts = [(f, s) for f, s in zip(t["freq_hz"], t["psd"]) if f > 0]
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts])
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("PSD (quanta/Hz)")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    return 0


if __name__ == "__main__":
    sys.exit(main())
