import json
import os
import re
from glob import glob

from astropy.table import Table

from .signals import DIAGNOSES

STATUSES = ("ok", "invalid", "unreadable")


class TextFormatter:
    show_title = print
    show_text = print

    def show_table(self, t, **kwargs):
        if t is not None:
            kwargs.setdefault("max_lines", -1)
            kwargs.setdefault("max_width", -1)
            t.pprint(**kwargs)


def _read_json(filename):
    with open(filename) as f:
        return json.load(f)


def _artifact_name(filename, prefix):
    """Target (and group) part of an artifact file name."""
    return os.path.splitext(os.path.basename(filename))[0][len(prefix) :]


class Reporter:
    """Text reports of the database and of the artifacts of the last runs."""

    def __init__(self):
        self.fmt = TextFormatter()

    def list_runs(self, recipes=None):
        """Print the table of executed steps."""
        cols = ("id", "recipe_name", "date_run", "status", "tottime", "nbwarn")
        rows = [
            [row[c] for c in cols]
            for row in self.runs.find(order_by="id")
            if not recipes or row["recipe_name"] in recipes
        ]
        self.fmt.show_title("Runs:")
        if not rows:
            self.fmt.show_text("Nothing yet.")
            return
        t = Table(rows=rows, names=cols)
        t["tottime"].format = ".2f"
        t["tottime"].unit = "min"
        self.fmt.show_table(t)

    def list_sessions(self, status=None):
        """Print the table of ingested files."""
        cols = (
            "subject_id",
            "diagnosis",
            "status",
            "n_samples",
            "n_strokes",
            "n_errors",
            "n_warnings",
            "path",
        )
        query = {} if status is None else {"status": status}
        rows = [
            ["" if row[c] is None else row[c] for c in cols]
            for row in self.sessions.find(order_by="path", **query)
        ]
        self.fmt.show_title("Sessions:")
        if not rows:
            self.fmt.show_text("Nothing yet.")
            return
        self.fmt.show_table(Table(rows=rows, names=cols, masked=True))

    def info_artifacts(self):
        """Print a summary of the analysis and model artifacts."""
        path = self.output_path
        summary = os.path.join(path, "stats_summary.json")
        if os.path.isfile(summary):
            self.fmt.show_title("\nExploratory analysis:\n")
            for name, analysis in _read_json(summary)["analyses"].items():
                top = ", ".join(row["feature"] for row in analysis["top"])
                self.fmt.show_text(
                    f"- {name} : {analysis['n_significant']} significant, "
                    f"top: {top}"
                )

        evals = sorted(glob(os.path.join(path, "eval_*.json")))
        if evals:
            self.fmt.show_title("\nCross-validated models:\n")
            rows = []
            for filename in evals:
                doc = _read_json(filename)
                metrics = ", ".join(
                    f"{name} {m['mean']:.3f} +/- {m['std']:.3f}"
                    for name, m in doc["metrics"].items()
                    if m["mean"] is not None
                )
                name = _artifact_name(filename, "eval_")
                rows.append([name, doc["n_folds"], metrics])
            self.fmt.show_table(Table(rows=rows, names=("model", "n_folds", "metrics")))

        for filename in sorted(glob(os.path.join(path, "importance_*.json"))):
            doc = _read_json(filename)
            name = _artifact_name(filename, "importance_")
            self.fmt.show_title(f"\nSHAP importance ({name}):\n")
            for row in doc["top"]:
                sign = {1: "+", -1: "-"}.get(row["sign"], " ")
                self.fmt.show_text(
                    f"{row['rank']:3d} {sign} {row['mean_abs_shap']:.4f} "
                    f"{row['feature']}"
                )

    def info(self, show_sessions=False):
        """Print a summary of the database and of the artifacts."""
        self.fmt.show_text(f"dysgraph {self.version}")
        counts = ", ".join(
            f"{self.sessions.count(status=status)} {status}" for status in STATUSES
        )
        self.fmt.show_text(f"{self.sessions.count()} sessions ({counts})")
        labels = [row["diagnosis"] for row in self.sessions.find(status="ok")]
        if any(labels):
            self.fmt.show_text(", ".join(f"{labels.count(d)} {d}" for d in DIAGNOSES))
        print()
        self.list_runs()
        if show_sessions:
            print()
            self.list_sessions()
        self.info_artifacts()

    def info_warnings(self, recipes=None, mode="list"):
        """Print the runs with warnings, with the messages in detail mode."""
        if mode not in ("list", "detail"):
            raise ValueError(f"invalid mode {mode}")
        cols = ("id", "recipe_name", "date_run", "nbwarn", "log_file")
        rows = [
            [row[c] for c in cols]
            for row in self.runs.find(order_by="id")
            if row["nbwarn"] and (not recipes or row["recipe_name"] in recipes)
        ]
        if not rows:
            self.fmt.show_text("No warnings.")
            return

        t = Table(rows=rows, names=cols)
        if mode == "list":
            self.fmt.show_table(t)
            return

        pat = re.compile(r"\[(WARNING|  ERROR)\] \S+: (.*)\n")
        for row in t:
            self.fmt.show_text(
                f"\n{row['recipe_name']} ({row['date_run']}), "
                f"{row['nbwarn']} warnings\n"
            )
            if not os.path.isfile(row["log_file"]):
                continue
            with open(row["log_file"]) as fp:
                text = fp.read()
            for match in re.finditer(pat, text):
                level, msg = match.groups()
                self.fmt.show_text(f"- {level.strip():7s} : {msg}")
