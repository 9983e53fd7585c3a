import logging
import os

logger = logging.getLogger(__name__)

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from bitmat.lib.core import ObservedBinaryMatrix
from bitmat.lib.errors import InvalidArgumentError, ParseError
from bitmat.lib.fileio import MatrixFile, read_table

ROLLCALL_HEADER = ["senator", "party", "bill", "vote", "date"]
VOTES = ("Yea", "Nay", "Absent")
PARTIES = ("Rep", "Dem", "Ind")
MIN_SERVICE_DAYS = 183


@dataclass
class RollCallResult:
    matrix: MatrixFile
    audit: List[dict] = field(default_factory=list)
    counts: Dict[str, float] = field(default_factory=dict)


def read_rollcall(path) -> pd.DataFrame:
    df = read_table(path, ROLLCALL_HEADER)
    for col in ROLLCALL_HEADER:
        df[col] = df[col].str.strip()
    for col, allowed in (("vote", VOTES), ("party", PARTIES)):
        bad = ~df[col].isin(allowed)
        if bad.any():
            k = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(
                "%s must be one of %s, got %r" % (col, "/".join(allowed), df[col].iloc[k]),
                line=k + 2,
                path=path,
            )
    for col in ("senator", "bill"):
        empty = df[col] == ""
        if empty.any():
            k = int(np.flatnonzero(empty.to_numpy())[0])
            raise ParseError("empty %s" % col, line=k + 2, path=path)
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    if dates.isna().any():
        k = int(np.flatnonzero(dates.isna().to_numpy())[0])
        raise ParseError("bad date %r, expected YYYY-MM-DD" % df["date"].iloc[k], line=k + 2, path=path)
    df["date"] = dates
    dup = df.duplicated(subset=["senator", "bill"])
    if dup.any():
        k = int(np.flatnonzero(dup.to_numpy())[0])
        raise ParseError(
            "senator %r votes twice on bill %r" % (df["senator"].iloc[k], df["bill"].iloc[k]),
            line=k + 2,
            path=path,
        )
    return df


class RollCallPreprocessor:
    """Turns raw votes into a 0/1 matrix oriented towards ``party_a``.

    Steps: drop short-serving senators; drop bills nobody voted on or whose
    recorded votes all agree; orient each remaining bill by within-party
    support among voting members (ties and bills one party skipped are
    dropped); drop senators left without observations. Absent votes are
    missing cells.
    """

    def __init__(self, min_service_days=MIN_SERVICE_DAYS, party_a="Rep", party_b="Dem"):
        if party_a == party_b:
            raise InvalidArgumentError("the two parties must differ, got %r twice" % party_a)
        if min_service_days < 0:
            raise InvalidArgumentError("min_service_days must be non-negative")
        self.min_service_days = int(min_service_days)
        self.party_a = party_a
        self.party_b = party_b
        self.audit = []

    def println(self, step, **kw):
        rec = {"step": step}
        rec.update(kw)
        self.audit.append(rec)
        logger.debug("%s", rec)

    def drop_short_service(self, df):
        span = df.groupby("senator")["date"].agg(lambda d: (d.max() - d.min()).days)
        short = span[span < self.min_service_days]
        for senator, days in short.sort_index().items():
            self.println("service", senator=senator, days=int(days), reason="served fewer than %d days" % self.min_service_days)
        return df[~df["senator"].isin(short.index)]

    def orient(self, df):
        """Per-bill orientation: +1 (party_a favours), -1 (party_b favours)."""
        voting = df[df["vote"] != "Absent"]
        support = (
            voting.assign(yea=(voting["vote"] == "Yea").astype(float))
            .groupby(["bill", "party"])["yea"]
            .mean()
            .unstack("party")
        )
        orientation = {}
        for bill in sorted(df["bill"].unique()):
            if bill not in support.index:
                self.println("no_votes", bill=bill, reason="no senator voted")
                continue
            row = support.loc[bill]
            a = row.get(self.party_a, np.nan)
            b = row.get(self.party_b, np.nan)
            if np.isnan(a) or np.isnan(b):
                self.println(
                    "no_votes",
                    bill=bill,
                    reason="%s did not vote" % (self.party_a if np.isnan(a) else self.party_b),
                )
                continue
            if a == b:
                self.println("tie", bill=bill, support=float(a), reason="equal within-party support")
                continue
            orientation[bill] = 1 if a > b else -1
        return orientation

    def drop_constant_bills(self, df):
        """Bills without a recorded vote, or whose recorded votes all agree."""
        voting = df[df["vote"] != "Absent"]
        distinct = voting.groupby("bill")["vote"].agg(["nunique", "first"])
        dropped = []
        for bill in sorted(df["bill"].unique()):
            if bill not in distinct.index:
                self.println("no_votes", bill=bill, reason="no senator voted")
                dropped.append(bill)
            elif distinct.loc[bill, "nunique"] == 1:
                self.println("constant", bill=bill, vote=distinct.loc[bill, "first"], reason="all observed votes are the same")
                dropped.append(bill)
        return df[~df["bill"].isin(dropped)]

    def run(self, df: pd.DataFrame) -> RollCallResult:
        self.audit = []
        parties = set(df["party"])
        for p in (self.party_a, self.party_b):
            if p not in parties:
                raise InvalidArgumentError("party %r does not appear in the roll-call data" % p)
        senators_in = df["senator"].nunique()
        bills_in = df["bill"].nunique()

        df = self.drop_short_service(df)
        df = self.drop_constant_bills(df)
        orientation = self.orient(df)
        votes = df[df["bill"].isin(list(orientation)) & (df["vote"] != "Absent")]
        sign = votes["bill"].map(orientation)
        y = np.where(sign > 0, votes["vote"] == "Yea", votes["vote"] == "Nay").astype(np.int8)
        cells = pd.DataFrame({"senator": votes["senator"].to_numpy(), "bill": votes["bill"].to_numpy(), "y": y})
        bills = sorted(orientation)
        senators = sorted(set(cells["senator"]))
        # orientation is a bijection per bill, so kept bills stay non-constant
        for senator in sorted(set(df["senator"]) - set(senators)):
            self.println("no_observations", senator=senator, reason="no recorded vote on a kept bill")

        if not senators or not bills:
            raise InvalidArgumentError("preprocessing removed every senator or every bill")
        row_of = {s: k for k, s in enumerate(senators)}
        col_of = {b: k for k, b in enumerate(bills)}
        data = ObservedBinaryMatrix.from_entries(
            len(senators),
            len(bills),
            cells["senator"].map(row_of).to_numpy(),
            cells["bill"].map(col_of).to_numpy(),
            cells["y"].to_numpy(),
        )
        counts = {
            "senators_in": int(senators_in),
            "bills_in": int(bills_in),
            "senators_out": data.n_rows,
            "bills_out": data.n_cols,
            "missing_fraction": 1.0 - data.n_obs / float(data.n_rows * data.n_cols),
        }
        for step in ("service", "tie", "no_votes", "constant", "no_observations"):
            counts["dropped_" + step] = sum(1 for rec in self.audit if rec["step"] == step)
        logger.info(
            "roll-call preprocessing: %d senators x %d bills kept (%.1f%% missing); dropped %s",
            data.n_rows,
            data.n_cols,
            100 * counts["missing_fraction"],
            {k: v for k, v in counts.items() if k.startswith("dropped_") and v},
        )
        return RollCallResult(
            matrix=MatrixFile(data=data, row_labels=senators, col_labels=bills),
            audit=list(self.audit),
            counts=counts,
        )


def preprocess_rollcall(source, min_service_days=MIN_SERVICE_DAYS, party_a="Rep", party_b="Dem") -> RollCallResult:
    df = read_rollcall(source) if isinstance(source, (str, os.PathLike)) else source
    return RollCallPreprocessor(min_service_days, party_a, party_b).run(df)
