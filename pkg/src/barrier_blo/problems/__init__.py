from .dhc import Dataset, DhcProblem, DhcSpec, DhcSplits, corrupt_labels, generate_blobs, make_dhc
from .idx import load_idx
from .synthetic import QuadraticTestbed, SyntheticProblem, make_quadratic_testbed, make_synthetic

__all__ = [
    "Dataset", "DhcProblem", "DhcSpec", "DhcSplits", "QuadraticTestbed", "SyntheticProblem",
    "corrupt_labels", "generate_blobs", "load_idx", "make_dhc", "make_quadratic_testbed",
    "make_synthetic",
]
