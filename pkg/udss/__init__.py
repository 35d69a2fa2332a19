"""udss: deploy user-defined software stacks on air-gapped HPC clusters."""

__version__ = '0.1.0'
