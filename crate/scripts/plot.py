#!/usr/bin/env python3
"""Plot CSVs written by `lpos cost` and `lpos run`.

    lpos cost --out cost.csv && python3 scripts/plot.py cost cost.csv cost.png
    lpos run --n 32 --tau 120 --rounds 50 --out m.csv && python3 scripts/plot.py run m.csv run.png
"""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_cost(df, ax):
    for scheme, rows in df.groupby("scheme", sort=False):
        ax.plot(rows["n"], rows["bits"], label=scheme)
    ax.set_yscale("log")
    ax.set_xlabel("users n")
    ax.set_ylabel("bits per sensing round")
    ax.legend()


def plot_run(df, ax):
    ax.bar(df["round"], df["ym_invocations"], color=["#d62728" if d == "busy" else "#1f77b4" for d in df["decision"]])
    ax.set_xlabel("round")
    ax.set_ylabel("secure comparisons (red = busy)")
    twin = ax.twinx()
    twin.plot(df["round"], df["n_active"], color="black", linewidth=1)
    twin.set_ylabel("reporting users")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("kind", choices=["cost", "run"])
    p.add_argument("csv")
    p.add_argument("png")
    a = p.parse_args()
    df = pd.read_csv(a.csv)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    (plot_cost if a.kind == "cost" else plot_run)(df, ax)
    fig.tight_layout()
    fig.savefig(a.png, dpi=120)


if __name__ == "__main__":
    main()
