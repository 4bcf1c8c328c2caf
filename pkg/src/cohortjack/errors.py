"""Exception hierarchy.

Input problems (bad files, bad flags, bad configs) derive from
:class:`InputError`; problems that only show up once estimation starts
(empty designs, jackknife replicates with nothing left to estimate, zero
variance) derive from :class:`InfeasibleError`. The CLI maps the two
families to exit codes 1 and 2.
"""

from __future__ import annotations


class InputError(ValueError):
    """Malformed input data or configuration."""


class PanelError(InputError):
    """The panel or its treatment timing violates a structural requirement."""


class ConfigError(InputError):
    """An experiment or command configuration is infeasible."""


class InfeasibleError(RuntimeError):
    """Estimation or inference cannot proceed on this design."""


class EmptyDesignError(InfeasibleError):
    """No group-time cell is estimable."""


class JackknifeAbort(InfeasibleError):
    """One or more leave-one-cluster-out replicates could not be formed.

    Attributes
    ----------
    clusters : tuple
        The clusters whose deletion caused the abort.
    dropped_cells : dict
        cluster -> list of (g, t) cells lost in that replicate.
    """

    def __init__(self, message, clusters=(), dropped_cells=None):
        super().__init__(message)
        self.clusters = tuple(clusters)
        self.dropped_cells = dict(dropped_cells or {})


class DegenerateVarianceError(InfeasibleError):
    """The variance estimate is exactly zero.

    The fully populated result is kept on ``result`` so callers that want
    the p = 0 convention can still use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
