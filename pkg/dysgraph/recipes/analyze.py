import numpy as np

from ..matrix import FeatureMatrix
from ..stats import (
    describe_scores,
    exploratory_analysis,
    grouped_analysis,
    regress_out_confound,
)
from ..utils import write_json, write_table
from .recipe import BaseRecipe

__all__ = ("ANALYZE",)


class ANALYZE(BaseRecipe):
    """Exploratory statistical analysis of a feature matrix.

    For each target, the per-feature tests are written to
    ``stats_<target>.csv`` and ``stats_<target>.json``, and with ``group_by``
    also to ``stats_<target>_<group_by><level>.*`` for each level. The top
    features of every analysis are gathered in ``stats_summary.json`` and the
    HPSQ-C scores are described in ``scores_overview.csv``.

    """

    recipe_name = "analyze"
    output_dir = "output"
    default_params = {
        "alpha": 0.05,
        "fdr_family": "separate",
        "confound": "sex",
        "top_k": 5,
        "group_by": None,
        "targets": [
            "diagnosis",
            "hpsqc_legibility",
            "hpsqc_performance_time",
            "hpsqc_well_being",
            "hpsqc_total",
        ],
    }

    def _analyze(self, matrix, target, n_jobs):
        """Reports by output name suffix, with the number of rows analyzed."""
        kwargs = dict(
            alpha=self.param["alpha"],
            fdr_family=self.param["fdr_family"],
            top_k=self.param["top_k"],
            n_jobs=n_jobs,
        )
        group_by = self.param["group_by"]
        if not group_by:
            report = exploratory_analysis(matrix, target, **kwargs)
            return {target: (matrix.n_rows, report)}

        groups = matrix.groups(group_by)
        reports = grouped_analysis(matrix, target, group_by, **kwargs)
        out = {}
        for level, report in reports.items():
            if level is None:
                out[target] = (matrix.n_rows, report)
            else:
                name = f"{target}_{group_by}{level}"
                out[name] = (groups[level].n_rows, report)
        return out

    def _run(self, inputs, n_jobs=1):
        filename = inputs[0]
        matrix = FeatureMatrix.read(filename)
        self.logger.info("%r read from %s", matrix, filename)
        targets = [matrix.resolve_target(t) for t in self.param["targets"]]
        for target in targets:
            if np.all(np.isnan(matrix.target(target))):
                raise ValueError(f"target {target} has no value")

        config = self.config
        confound = self.param["confound"]
        diagnostics = []
        if confound:
            matrix = regress_out_confound(matrix, confound=confound)
            diagnostics = [d.to_dict() for d in matrix.diagnostics]

        summary = {}
        for target in targets:
            reports = self._analyze(matrix, target, n_jobs)
            for name, (n_rows, report) in reports.items():
                self.add_output(
                    write_table(
                        report.table(), self.output_file(f"stats_{name}.csv"), config
                    )
                )
                self.add_output(
                    write_json(
                        self.output_file(f"stats_{name}.json"),
                        report.to_dict(),
                        config=config,
                    )
                )
                summary[name] = {
                    "target": target,
                    "group_by": self.param["group_by"],
                    "n_rows": n_rows,
                    "n_significant": sum(
                        report.significant(f) for f in report.ranking
                    ),
                    "top": report.top(),
                }

        self.add_output(
            write_table(
                describe_scores(matrix, group_by=self.param["group_by"]),
                self.output_file("scores_overview.csv"),
                config,
            )
        )
        self.add_output(
            write_json(
                self.output_file("stats_summary.json"),
                {"analyses": summary, "confound_diagnostics": diagnostics},
                config=config,
            )
        )
        return summary
