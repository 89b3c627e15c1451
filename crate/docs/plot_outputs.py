"""Plots for the CSV outputs of `mftg`.

    python docs/plot_outputs.py costs out/costs.csv
    python docs/plot_outputs.py utilization out/utilization.csv
    python docs/plot_outputs.py sweep out/sweep.csv
    python docs/plot_outputs.py gap out/nash_gap.csv

Needs pandas and matplotlib. Metadata lines starting with '#' are skipped.
"""

import sys

import matplotlib.pyplot as plt
import pandas as pd


def read(path):
    return pd.read_csv(path, comment="#")


def costs(df, ax):
    df.boxplot(column="cost_total", by="type", ax=ax)
    ax.set_ylabel("per-team cost")


def utilization(df, ax):
    g = df.groupby("k")["utilization"]
    mean, lo, hi = g.mean(), g.quantile(0.1), g.quantile(0.9)
    ax.plot(mean.index, mean.values, label="mean")
    ax.fill_between(mean.index, lo.values, hi.values, alpha=0.3, label="10-90%")
    ax.set_xlabel("k")
    ax.set_ylabel("channel utilization")
    ax.legend()


def sweep(df, ax):
    df = df[df["status"] == "ok"]
    name = df["sweep"].iloc[0]
    if name == "N":
        ax.loglog(df["N"], df["mismatch"], "o-")
        ax.set_xlabel("N")
        ax.set_ylabel("utilization mismatch")
        return
    x = range(len(df))
    ax.errorbar(
        x,
        df["median_cost"],
        yerr=[df["median_cost"] - df["q25_cost"], df["q75_cost"] - df["median_cost"]],
        fmt="o",
    )
    ax.set_xticks(list(x), df["value"])
    ax.set_xlabel(name)
    ax.set_ylabel("median per-team cost (IQR)")


def gap(df, ax):
    for n, part in df.groupby("N"):
        ax.errorbar(part["deviation_id"], part["mean_cost"],
                    yerr=[part["mean_cost"] - part["ci_low"], part["ci_high"] - part["mean_cost"]],
                    fmt="o", label=f"N={n}")
    ax.tick_params(axis="x", rotation=90)
    ax.set_ylabel("deviator cost")
    ax.legend()


if __name__ == "__main__":
    kind, path = sys.argv[1], sys.argv[2]
    fig, ax = plt.subplots(figsize=(8, 5))
    {"costs": costs, "utilization": utilization, "sweep": sweep, "gap": gap}[kind](read(path), ax)
    fig.tight_layout()
    out = path.rsplit(".", 1)[0] + ".png"
    fig.savefig(out, dpi=120)
    print(out)
