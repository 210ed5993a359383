"""Hierarchical gamma-negative binomial (hGNB) factor model for count matrices.

Counts ``n[v, j]`` (genes x cells) are modelled as
``NB(r[j], logistic(beta[:, v] @ x[:, j] + delta[:, j] @ z[:, v] + phi[:, v] @ theta[:, j]))``
and fitted with a Gibbs sampler built on CRT and Polya-Gamma augmentation.
"""

from .checkpoint import Checkpoint, load_checkpoint, load_state, save_checkpoint, save_state
from .distributions import (
    RngStream,
    pg_laplace,
    pg_mean,
    pg_var,
    sample_crt,
    sample_gamma,
    sample_mvn_cholesky,
    sample_negative_binomial,
    sample_polya_gamma,
)
from .errors import CheckpointError, DataError, HGNBError, InfeasibleTargetError, NumericalError
from .evaluation import (
    Embedding,
    adjusted_rand_index,
    kmeans,
    md_plot_data,
    mst_lineage,
    pca_baseline,
    silhouette_width,
)
from .gibbs import ChainError, gibbs_sweep, init_state, resume_chain, run_chain, transform
from .io import read_counts, read_design, write_counts
from .model import (
    ChainOutput,
    CountMatrix,
    DesignMatrices,
    Hyperparams,
    ModelState,
    data_log_likelihood,
    expected_count,
    expected_counts,
    logit_psi,
    nb_log_pmf,
)
from .simulate import SimSpec, calibrate_zero_fraction, filter_genes, preset, simulate_hgnb, simulate_zinb

__version__ = "0.1.0"
