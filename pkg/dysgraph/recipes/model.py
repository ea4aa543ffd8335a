import numpy as np

from ..boost import (
    SQUARED_ERROR,
    EvalReport,
    GbtConfig,
    GbtModel,
    cross_validate,
    fit_gbt,
    objective_for,
    random_search,
    score_range_for,
    stratified_repeated_kfold,
)
from ..explain import global_importance
from ..matrix import FeatureMatrix
from ..stats import regress_out_confound
from ..utils import write_json, write_table
from .recipe import BaseRecipe

__all__ = ("TRAIN", "EVALUATE", "EXPLAIN")


class ModelRecipe(BaseRecipe):
    """Mother class for the recipes working on a target of a feature matrix.

    The confound is regressed out of the whole matrix before anything else,
    unless ``confound_within_folds`` is set: the cross-validation then fits
    the confound model on each training fold, and only the final model and
    the SHAP values use the whole-matrix residuals.

    With ``group_by``, the outputs are also produced for each level of this
    metadata column, with a ``_<group_by><level>`` suffix.

    """

    def load_target(self, matrix, target):
        """Return the resolved target name, and the matrix and target values
        restricted to the rows where the target is known."""
        column = matrix.resolve_target(target)
        y = matrix.target(column)
        keep = ~np.isnan(y)
        if not keep.all():
            self.logger.warning(
                "%s: dropping %d rows without target", column, (~keep).sum()
            )
        return column, matrix.subset(keep), y[keep]

    def regress_confound(self, matrix):
        """Return the matrix with the confound regressed out."""
        confound = self.param.get("confound")
        if not confound:
            return matrix
        levels = {lv for lv in matrix.meta_column(confound) if lv is not None}
        if len(levels) < 2:
            self.logger.warning(
                "confound %s has less than 2 levels, not regressed out", confound
            )
            return matrix
        return regress_out_confound(matrix, confound=confound)

    def confound_levels(self, matrix):
        if not self.param.get("confound_within_folds"):
            return None
        if not self.param["confound"]:
            raise ValueError("confound_within_folds needs a confound column")
        return matrix.meta_column(self.param["confound"])

    def cv_matrix(self, matrix, adjusted):
        """Matrix given to the cross-validation."""
        return matrix if self.param.get("confound_within_folds") else adjusted

    def iter_groups(self, name, n_rows, levels=None):
        """Yield the output name and the row mask of the whole matrix, then of
        each level of ``group_by``."""
        yield name, np.ones(n_rows, dtype=bool), None
        group_by = self.param.get("group_by")
        if not group_by:
            return
        for level in sorted({lv for lv in levels if lv is not None}):
            mask = np.array([lv == level for lv in levels])
            self.logger.info("%s = %s: %d rows", group_by, level, mask.sum())
            yield f"{name}_{group_by}{level}", mask, {group_by: level}

    def run_config(self, target, group=None):
        config = {**self.config, "target": target}
        if group is not None:
            config["group"] = group
        return config

    def write_evaluation(self, report, name, config):
        self.add_output(report.write(self.output_file(f"eval_{name}.json"), config))
        self.add_output(
            report.write_folds(self.output_file(f"eval_{name}_folds.csv"), config)
        )
        for metric, value in report.summary().items():
            self.logger.info(
                "%s: %s = %.4f +/- %.4f", name, metric, value["mean"], value["std"]
            )

    def write_explanation(self, model, matrix, name, target, config, n_jobs):
        report = global_importance(
            model, matrix, top_k=self.param["top_k"], target=target, n_jobs=n_jobs
        )
        self.add_output(
            write_table(report.table(), self.output_file(f"shap_{name}.csv"), config)
        )
        self.add_output(
            write_table(
                report.long_table(),
                self.output_file(f"shap_{name}_long.csv"),
                config,
            )
        )
        self.add_output(
            write_json(
                self.output_file(f"importance_{name}.json"),
                report.to_dict(),
                config=config,
            )
        )
        return report


class TRAIN(ModelRecipe):
    """Hyperparameter search, final model and SHAP exports for one target.

    The search cross-validates ``n_iter`` random configurations; the winner
    is trained again on all rows and saved to ``model_<target>.json``, with
    its cross-validated metrics in ``eval_<target>.json`` and the trials in
    ``search_<target>.csv``.

    """

    recipe_name = "train"
    output_dir = "output"
    default_params = {
        "objective": None,
        "n_iter": 500,
        "folds": 10,
        "repeats": 10,
        "n_rounds": 100,
        "early_stopping_rounds": None,
        "validation_fraction": 0.2,
        "confound_within_folds": False,
        "confound": "sex",
        "group_by": None,
        "grid": {},
        "seed": 42,
        "explain": True,
        "top_k": 10,
    }

    def _run(self, inputs, target="diagnosis", n_jobs=1):
        matrix = FeatureMatrix.read(inputs[0])
        column, matrix, y = self.load_target(matrix, target)
        adjusted = self.regress_confound(matrix)
        objective = self.param["objective"] or objective_for(column)

        levels = (
            matrix.meta_column(self.param["group_by"])
            if self.param["group_by"]
            else None
        )
        results = {}
        for name, rows, group in self.iter_groups(column, matrix.n_rows, levels):
            results[name] = self._train(
                name,
                column,
                objective,
                matrix.subset(rows),
                adjusted.subset(rows),
                y[rows],
                self.run_config(column, group),
                n_jobs,
            )
        return results

    def _train(self, name, column, objective, matrix, adjusted, y, config, n_jobs):
        score_range = score_range_for(column, y) if objective == SQUARED_ERROR else None
        seed = self.param["seed"]
        base = GbtConfig(
            n_rounds=self.param["n_rounds"],
            early_stopping_rounds=self.param["early_stopping_rounds"],
            validation_fraction=self.param["validation_fraction"],
            objective=objective,
            seed=seed,
        )
        cv = self.cv_matrix(matrix, adjusted)
        result = random_search(
            cv.values,
            y,
            objective,
            n_iter=self.param["n_iter"],
            seed=seed,
            grid=self.param["grid"],
            folds=self.param["folds"],
            repeats=self.param["repeats"],
            base_config=base,
            confound=self.confound_levels(cv),
            score_range=score_range,
            feature_names=cv.feature_names,
            target=column,
            n_jobs=n_jobs,
        )
        self.add_output(
            write_table(
                result.trials_table(), self.output_file(f"search_{name}.csv"), config
            )
        )
        self.write_evaluation(result.report, name, config)

        model = fit_gbt(adjusted.values, y, result.best_config, adjusted.feature_names)
        model.target = column
        self.add_output(model.write(self.output_file(f"model_{name}.json"), config))
        self.logger.info("%s: final model %r", name, model)

        if self.param["explain"]:
            self.write_explanation(model, adjusted, name, column, config, n_jobs)
        return result


class EVALUATE(ModelRecipe):
    """Cross-validate the configuration of a saved model on a matrix.

    Inputs are the model file and the matrix file.
    """

    recipe_name = "evaluate"
    output_dir = "output"
    n_inputs_min = 2
    default_params = {
        "target": None,
        "folds": 10,
        "repeats": 10,
        "confound_within_folds": False,
        "confound": "sex",
        "group_by": None,
        "seed": 42,
    }

    def _run(self, inputs, n_jobs=1):
        model = GbtModel.read(inputs[0])
        target = self.param["target"] or model.target
        if target is None:
            raise ValueError("the model has no target, it must be given")
        column, matrix, y = self.load_target(FeatureMatrix.read(inputs[1]), target)
        cv = self.cv_matrix(matrix, self.regress_confound(matrix))
        regression = model.objective == SQUARED_ERROR

        levels = (
            matrix.meta_column(self.param["group_by"])
            if self.param["group_by"]
            else None
        )
        reports = {}
        for name, rows, group in self.iter_groups(column, matrix.n_rows, levels):
            sub, y_sub = cv.subset(rows), y[rows]
            score_range = score_range_for(column, y_sub) if regression else None
            fold_ids = stratified_repeated_kfold(
                y_sub,
                k=self.param["folds"],
                repeats=self.param["repeats"],
                seed=self.param["seed"],
                regression=regression,
            )
            folds = cross_validate(
                model.as_array(sub),
                y_sub,
                model.config,
                fold_ids,
                confound=self.confound_levels(sub),
                score_range=score_range,
                feature_names=model.feature_names,
            )
            report = EvalReport(
                "regression" if regression else "classification",
                folds,
                fold_ids,
                params=model.config.to_dict(),
                target=column,
                score_range=score_range,
            )
            self.write_evaluation(report, name, self.run_config(column, group))
            reports[name] = report
        return reports


class EXPLAIN(ModelRecipe):
    """SHAP exports of a saved model on a matrix.

    Inputs are the model file and the matrix file. The confound is regressed
    out of the matrix as for the training.
    """

    recipe_name = "explain"
    output_dir = "output"
    n_inputs_min = 2
    default_params = {
        "target": None,
        "top_k": 10,
        "confound": "sex",
        "group_by": None,
    }

    def _run(self, inputs, n_jobs=1):
        model = GbtModel.read(inputs[0])
        matrix = self.regress_confound(FeatureMatrix.read(inputs[1]))
        target = self.param["target"] or model.target or "model"

        levels = (
            matrix.meta_column(self.param["group_by"])
            if self.param["group_by"]
            else None
        )
        reports = {}
        for name, rows, group in self.iter_groups(target, matrix.n_rows, levels):
            reports[name] = self.write_explanation(
                model,
                matrix.subset(rows),
                name,
                target,
                self.run_config(target, group),
                n_jobs,
            )
        return reports
