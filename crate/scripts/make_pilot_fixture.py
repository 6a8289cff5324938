#!/usr/bin/env python3
"""Generate the pilot-shaped ADSL/ADTTE/ADAE CSV fixtures.

The layout follows the CDISC pilot ADaM datasets (three arms, TTDE
time-to-event parameter, MedDRA-coded adverse events). Values are
synthetic and reproducible from the fixed seed.
"""
import csv
import datetime
import random
import sys
from pathlib import Path

SEED = 20220915
ARMS = [("Placebo", 86), ("Xanomeline Low Dose", 84), ("Xanomeline High Dose", 84)]
# weekly hazard of a first dermatologic event per arm
HAZARD = {"Placebo": 0.004, "Xanomeline Low Dose": 0.018, "Xanomeline High Dose": 0.022}
TERMS = [
    ("APPLICATION SITE PRURITUS", "GENERAL DISORDERS AND ADMINISTRATION SITE CONDITIONS"),
    ("APPLICATION SITE ERYTHEMA", "GENERAL DISORDERS AND ADMINISTRATION SITE CONDITIONS"),
    ("PRURITUS", "SKIN AND SUBCUTANEOUS TISSUE DISORDERS"),
    ("ERYTHEMA", "SKIN AND SUBCUTANEOUS TISSUE DISORDERS"),
    ("RASH", "SKIN AND SUBCUTANEOUS TISSUE DISORDERS"),
    ("DIZZINESS", "NERVOUS SYSTEM DISORDERS"),
    ("HEADACHE", "NERVOUS SYSTEM DISORDERS"),
    ("DIARRHOEA", "GASTROINTESTINAL DISORDERS"),
    ("NAUSEA", "GASTROINTESTINAL DISORDERS"),
    ("SINUS BRADYCARDIA", "CARDIAC DISORDERS"),
]
AE_RATE = {"Placebo": 0.9, "Xanomeline Low Dose": 2.1, "Xanomeline High Dose": 2.4}


def main(out: Path) -> None:
    rng = random.Random(SEED)
    out.mkdir(parents=True, exist_ok=True)
    adsl, adtte, adae = [], [], []
    subj = 0
    for arm, n in ARMS:
        for _ in range(n):
            subj += 1
            site = 701 + rng.randrange(17)
            usubjid = f"01-{site}-{1000 + subj:04d}"
            age = rng.randint(51, 89)
            sex = rng.choice("FFFMM")
            race = rng.choices(["WHITE", "BLACK OR AFRICAN AMERICAN", "AMERICAN INDIAN OR ALASKA NATIVE"], [86, 13, 1])[0]
            start = datetime.date(2013, 1, 1) + datetime.timedelta(days=rng.randrange(600))
            weight = "" if rng.random() < 0.02 else f"{rng.gauss(66, 14):.1f}"
            adsl.append({
                "STUDYID": "CDISCPILOT01", "USUBJID": usubjid, "SUBJID": f"{1000 + subj}",
                "SITEID": str(site), "AGE": age, "AGEU": "YEARS", "SEX": sex, "RACE": race,
                "WEIGHTBL": weight, "TRT01P": arm, "TRT01A": arm,
                "SAFFL": "Y", "ITTFL": "Y", "TRTSDT": start.isoformat(),
            })
            # discontinuation truncates follow-up, more often on active arms
            follow = 182 if rng.random() > (0.25 if arm == "Placebo" else 0.55) else rng.randint(7, 181)
            day, event = None, False
            for week in range(1, 27):
                if rng.random() < HAZARD[arm] * (1.6 if week < 8 else 1.0):
                    day = min(week * 7 - rng.randrange(7), follow)
                    event = day <= follow
                    break
            if day is None or not event:
                day, cnsr = follow, 1
            else:
                cnsr = 0
            adtte.append({
                "STUDYID": "CDISCPILOT01", "USUBJID": usubjid, "PARAMCD": "TTDE",
                "PARAM": "Time to First Dermatologic Event", "AVAL": day, "CNSR": cnsr,
                "TRTP": arm, "TRTA": arm, "AGE": age, "SEX": sex,
                "STARTDT": start.isoformat(),
                "ADT": (start + datetime.timedelta(days=day)).isoformat(),
            })
            n_ae = 0
            lam = AE_RATE[arm]
            # poisson draw by inversion
            u, p, k = rng.random(), pow(2.718281828459045, -lam), 0
            s = p
            while u > s:
                k += 1
                p *= lam / k
                s += p
            n_ae = k
            for _ in range(n_ae):
                term, soc = rng.choice(TERMS)
                if arm != "Placebo" and rng.random() < 0.35:
                    term, soc = rng.choice(TERMS[:5])
                adae.append({
                    "STUDYID": "CDISCPILOT01", "USUBJID": usubjid, "AEDECOD": term,
                    "AEBODSYS": soc, "AESEV": rng.choice(["MILD", "MILD", "MODERATE", "SEVERE"]),
                    "TRTA": arm, "TRTEMFL": "Y",
                    "ASTDT": (start + datetime.timedelta(days=rng.randrange(1, 180))).isoformat(),
                })
    for name, rows in (("adsl.csv", adsl), ("adtte.csv", adtte), ("adae.csv", adae)):
        with open(out / name, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/pilot"))
