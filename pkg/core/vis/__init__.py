from .plot_grid import plot_grid
