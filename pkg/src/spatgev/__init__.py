"""Spatial block-maxima modelling with a GEV data level.

Subpackages cover the GEV core and links (gev), per-site generalized maximum
likelihood (site_fit), the SPDE-based spatial field (spde), the latent Gaussian
model and its posterior sampler (latent), covariate selection (selection),
return-level prediction (predict), cross-validated scoring (evaluate), rank
reordering for spatial aggregates (copula), synthetic data (simulate), data IO
(dataio), and the command line interface (cli).
"""

__version__ = "0.1.0"
