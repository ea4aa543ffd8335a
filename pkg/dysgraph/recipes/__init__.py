from ..utils import all_subclasses
from .analyze import ANALYZE
from .extract import EXTRACT, find_svc_files  # noqa
from .model import EVALUATE, EXPLAIN, TRAIN
from .recipe import BaseRecipe
from .synth import SYNTH

recipe_classes = {
    cls.recipe_name: cls for cls in all_subclasses(BaseRecipe) if cls.recipe_name
}

__all__ = [
    "ANALYZE",
    "BaseRecipe",
    "EVALUATE",
    "EXPLAIN",
    "EXTRACT",
    "SYNTH",
    "TRAIN",
    "get_recipe_cls",
    "recipe_classes",
]


def get_recipe_cls(recipe_name):
    """Return the class for a recipe.

    >>> get_recipe_cls('extract').__name__
    'EXTRACT'

    """
    try:
        return recipe_classes[recipe_name]
    except KeyError:
        raise ValueError(f"unknown recipe {recipe_name}") from None
