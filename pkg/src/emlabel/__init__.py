"""emlabel: a Smart Labeling workbench for large object catalogs.

Linear-logistic property models over object embeddings drive a
word-search / active-learning / correction / review workflow; material
probabilities are kept taxonomy-consistent; missing attributes are filled
by a two-generation EM loop; every object gets a probabilistic label.
"""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str):
    """Path to a packaged data file (e.g. the sample taxonomies)."""
    return resources.files("emlabel").joinpath("data", name)


def materials_taxonomy_path():
    return data_path("materials_taxonomy.tsv")


def category_taxonomy_path():
    return data_path("category_taxonomy.tsv")
