"""
synth/default: frozen synthetic scene/event dataset used by the desk-scale experiments.
grids: experiment grid descriptions with published reference accuracies.
"""
