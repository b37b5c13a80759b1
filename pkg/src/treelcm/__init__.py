"""Tree-regularized Bayesian latent class models.

Latent class analysis for multivariate binary responses in which the
logit-scale class profiles carry a Dirichlet diffusion tree prior, so that
classes close on an unknown tree share statistical strength.  The package
provides the generative model, an MH-within-Gibbs posterior sampler with
Polya-Gamma augmentation, posterior summaries, baseline comparators, a
simulation harness, and a command line interface.
"""

__version__ = "0.1.0"
