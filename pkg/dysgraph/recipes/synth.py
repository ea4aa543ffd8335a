from ..synth import CohortSpec, generate_cohort, write_cohort
from .recipe import BaseRecipe

__all__ = ("SYNTH",)


class SYNTH(BaseRecipe):
    """Generate a synthetic cohort and write it as SVC files with sidecars.

    The parameters are the `~dysgraph.synth.CohortSpec` fields. The files are
    written to the output directory, with the ground truth in ``cohort.csv``
    and ``cohort.json``.
    """

    recipe_name = "synth"
    output_dir = "raw"
    n_inputs_min = 0
    default_params = CohortSpec().to_dict()

    def _run(self, inputs, **kwargs):
        spec = CohortSpec.from_dict(self.param)
        cohort = generate_cohort(spec)
        for path in write_cohort(cohort, self.output_dir, config=self.config):
            self.add_output(path)
        self.add_output(self.output_file("cohort.csv"))
        self.add_output(self.output_file("cohort.json"))
        return cohort
