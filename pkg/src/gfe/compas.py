"""Preprocessing for the ProPublica COMPAS two-year recidivism file.

The raw file (``compas-scores-two-years.csv``) is not shipped; download it
from https://github.com/propublica/compas-analysis. Rows are filtered the
way the ProPublica analysis does (screening within 30 days of arrest, known
recidivism flag, ordinary charge degree, scored). The output keeps numeric
features, the integer decile score (1..10) as target, and a binary race
column ``race_group`` with values ``AfricanAmerican`` and ``Other``.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import MissingColumn

FEATURES = (
    "age",
    "priors_count",
    "juv_fel_count",
    "juv_misd_count",
    "juv_other_count",
    "charge_felony",
    "sex_male",
)
TARGET = "decile_score"
GROUP = "race_group"
RAW_COLUMNS = (
    "age", "priors_count", "juv_fel_count", "juv_misd_count", "juv_other_count",
    "c_charge_degree", "sex", "race", "decile_score", "days_b_screening_arrest",
    "is_recid", "score_text",
)


def _keep(row: dict) -> bool:
    try:
        days = int(float(row["days_b_screening_arrest"]))
    except ValueError:
        return False
    return (
        -30 <= days <= 30
        and row["is_recid"].strip() != "-1"
        and row["c_charge_degree"].strip() != "O"
        and row["score_text"].strip() not in ("", "N/A")
    )


def prepare_compas(raw_path, out_path) -> int:
    """Write the preprocessed CSV; return the number of rows kept."""
    kept = 0
    with Path(raw_path).open(newline="", encoding="utf-8") as src:
        reader = csv.DictReader(src)
        missing = [c for c in RAW_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(f"raw COMPAS file lacks columns {missing}")
        with Path(out_path).open("w", newline="", encoding="utf-8") as dst:
            w = csv.writer(dst, lineterminator="\n")
            w.writerow([*FEATURES, TARGET, GROUP])
            for row in reader:
                if not _keep(row):
                    continue
                w.writerow([
                    row["age"],
                    row["priors_count"],
                    row["juv_fel_count"],
                    row["juv_misd_count"],
                    row["juv_other_count"],
                    1 if row["c_charge_degree"].strip() == "F" else 0,
                    1 if row["sex"].strip() == "Male" else 0,
                    int(float(row["decile_score"])),
                    "AfricanAmerican" if row["race"].strip() == "African-American" else "Other",
                ])
                kept += 1
    return kept
