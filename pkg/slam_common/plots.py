""" Figures for calibration reports and map uncertainty slices """

import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import FormatStrFormatter  # noqa: E402
from scipy.stats import norm  # noqa: E402

logger = logging.getLogger(__name__)

DIM_NAMES = ('tx', 'ty', 'tz', 'rx', 'ry', 'rz')


def plot_whitened_histograms(samples, path, bins=40):
    """ One histogram per dimension against the standard normal density """
    fig, axes = plt.subplots(2, 3, figsize=(12, 6), sharey=True)
    grid = np.linspace(-4, 4, 200)
    for k, ax in enumerate(axes.flat[:samples.shape[1]]):
        ax.hist(samples[:, k], bins=bins, range=(-4, 4), density=True,
                color='tab:blue', alpha=0.6)
        ax.plot(grid, norm.pdf(grid), 'k--', linewidth=1)
        ax.set_title('{} (std {:.2f})'.format(DIM_NAMES[k],
                                              samples[:, k].std()))
        ax.yaxis.set_major_formatter(FormatStrFormatter('%.2f'))
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
    logger.info('Saved %s', path)


def plot_calibration_curve(curve, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], 'k--', linewidth=1)
    ax.plot(curve.predicted, curve.observed, color='tab:red')
    ax.set_xlabel('predicted cumulative')
    ax.set_ylabel('observed cumulative')
    ax.set_title('K-S distance {:.3f}'.format(curve.kolmogorov))
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
    logger.info('Saved %s', path)


def plot_uncertainty_slice(plane, path, prior_stddev):
    fig, ax = plt.subplots(figsize=(6, 5))
    img = ax.imshow(np.log10(plane.T), origin='lower', cmap='viridis',
                    vmax=np.log10(prior_stddev))
    fig.colorbar(img, ax=ax, label='log10 stddev')
    fig.tight_layout()
    fig.savefig(str(path))
    plt.close(fig)
    logger.info('Saved %s', path)
