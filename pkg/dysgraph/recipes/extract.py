import os
from glob import glob

from ..features import ExtractionError, extract_all, feature_catalog
from ..flags import Diagnostic, errors
from ..signals import SvcParseError, read_session, validate
from ..utils import write_json
from .recipe import BaseRecipe

__all__ = ("EXTRACT", "find_svc_files")


def find_svc_files(paths):
    """Expand directories to the sorted list of the SVC files they contain."""
    files = []
    for path in paths:
        if os.path.isdir(path):
            files.extend(sorted(glob(os.path.join(path, "*.svc"))))
        elif os.path.isfile(path):
            files.append(path)
        else:
            raise FileNotFoundError(f"{path} not found")
    return files


class EXTRACT(BaseRecipe):
    """Read and validate SVC files, and compute their feature matrix.

    Outputs ``features.csv`` and ``features.json`` (the matrix, sorted by
    subject id), ``catalog.json`` and ``validation.json`` (the diagnostics of
    every input file).

    """

    recipe_name = "extract"
    output_dir = "output"
    default_params = {
        "bins": 32,
        "pen_stop_threshold": 0.1,
        "pen_stop_min_duration": 0.03,
        "include_boundary_air": False,
        "units_per_mm": None,
        "smoothing_window": None,
        "tick_rate": 1000.0,
        "sampling_rate": 200.0,
    }

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.sessions_info = []
        self.failures = []

    @property
    def partial(self):
        """True when some inputs were skipped with ``keep_going``."""
        return bool(self.failures) and self.results is not None

    def _read(self, path):
        """Read and validate one file.

        Returns the session (None on failure), the info row for the
        database, and the exception to raise on failure.
        """
        info = {"path": os.path.abspath(path), "subject_id": None, "diagnosis": None}
        try:
            session = read_session(
                path,
                tick_rate=self.param["tick_rate"],
                sampling_rate=self.param["sampling_rate"],
            )
        except (SvcParseError, OSError, ValueError) as exc:
            if not isinstance(exc, SvcParseError):
                exc = SvcParseError(str(exc), filename=path)
            self.logger.error("%s", exc)
            info.update(
                status="unreadable",
                n_samples=0,
                n_strokes=0,
                n_errors=1,
                n_warnings=0,
                diagnostics=[
                    Diagnostic("PARSE_ERROR", exc.lineno, str(exc)).to_dict()
                ],
            )
            return None, info, exc

        diags = validate(session)
        errs = errors(diags)
        for diag in diags:
            log = self.logger.error if diag.is_error else self.logger.warning
            log(
                "%s: %s (index %s) %s",
                session.subject_id,
                diag.code,
                diag.index,
                diag.message,
            )
        info.update(
            subject_id=session.subject_id,
            diagnosis=session.diagnosis,
            status="invalid" if errs else "ok",
            n_samples=session.n_samples,
            n_strokes=len(session.strokes) if session.n_samples else 0,
            n_errors=len(errs),
            n_warnings=len(diags) - len(errs),
            diagnostics=[d.to_dict() for d in diags],
        )
        if errs:
            return None, info, ExtractionError(session.subject_id, errs)
        return session, info, None

    def _run(self, inputs, n_jobs=1, keep_going=False):
        files = find_svc_files(inputs)
        if not files:
            raise FileNotFoundError("no SVC file found in " + ", ".join(inputs))
        self.logger.info("%d files", len(files))
        self.logger.debug("- " + "\n- ".join(files))

        sessions = []
        for path in files:
            session, info, exc = self._read(path)
            self.sessions_info.append(info)
            if exc is not None:
                self.failures.append(exc)
            else:
                sessions.append(session)

        config = self.config
        self.add_output(
            write_json(
                self.output_file("validation.json"),
                {
                    "n_files": len(files),
                    "n_valid": len(sessions),
                    "files": self.sessions_info,
                },
                config=config,
            )
        )

        if self.failures:
            if not keep_going or not sessions:
                raise self.failures[0]
            self.logger.warning(
                "%d of %d files skipped", len(self.failures), len(files)
            )

        ids = [s.subject_id for s in sessions]
        if len(set(ids)) != len(ids):
            self.logger.warning("duplicate subject ids in the inputs")

        options = {
            k: v
            for k, v in self.param.items()
            if k not in ("tick_rate", "sampling_rate")
        }
        matrix = extract_all(sessions, n_jobs=n_jobs, **options).sorted("subject_id")

        for name in ("features.csv", "features.json"):
            self.add_output(matrix.write(self.output_file(name), config=config))
        catalog = feature_catalog(self.param["units_per_mm"])
        self.add_output(
            write_json(
                self.output_file("catalog.json"),
                {"features": [spec.to_dict() for spec in catalog]},
                config=config,
            )
        )
        self.logger.info(
            "%d sessions x %d features saved to %s",
            matrix.n_rows,
            len(matrix.feature_names),
            self.output_dir,
        )
        return matrix
