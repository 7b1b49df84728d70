"""Writes etth1_like.csv: 2,000 hourly rows in the ETTh1 column layout.

Loads follow daily and weekly cycles with AR(1) disturbances; oil
temperature (OT) lags a weighted sum of the loads. Deterministic.
"""
import csv
import math
import random
from datetime import datetime, timedelta
from pathlib import Path

ROWS = 2000
COLUMNS = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL"]
LEVEL = [5.8, 2.0, 3.5, 0.9, 2.9, 0.8]
DAILY = [2.0, 0.6, 1.6, 0.4, 1.0, 0.3]
WEEKLY = [0.8, 0.2, 0.6, 0.1, 0.4, 0.1]


def main():
    rng = random.Random(20160701)
    start = datetime(2016, 7, 1)
    ar = [0.0] * len(COLUMNS)
    ot = 30.0
    out = Path(__file__).with_name("etth1_like.csv")
    with out.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date", *COLUMNS, "OT"])
        for t in range(ROWS):
            day = 2 * math.pi * t / 24
            week = 2 * math.pi * t / 168
            loads = []
            for i in range(len(COLUMNS)):
                ar[i] = 0.9 * ar[i] + rng.gauss(0.0, 0.25)
                v = LEVEL[i] + DAILY[i] * math.sin(day - 0.3 * i) + WEEKLY[i] * math.cos(week) + ar[i]
                loads.append(round(v, 3))
            drive = 0.5 * loads[0] + 0.8 * loads[2] + 0.3 * loads[4]
            ot = 0.95 * ot + 0.05 * (22.0 + 1.5 * drive) + rng.gauss(0.0, 0.15)
            w.writerow([(start + timedelta(hours=t)).strftime("%Y-%m-%d %H:%M:%S"), *loads, round(ot, 3)])


if __name__ == "__main__":
    main()
