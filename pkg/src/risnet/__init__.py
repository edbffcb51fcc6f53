"""RISnet: learned phase configuration for reconfigurable intelligent surfaces.

Modules
-------
adgraph
    Reverse-mode differentiation over numpy arrays.
channel
    Synthetic multipath channels and the network input features.
rate
    Sum-rate objective, WMMSE precoding and phase quantization.
network
    The RISnet forward pass for full and partial channel knowledge.
baselines
    Random phases and coordinate descent.
harness
    Training, evaluation, file formats and the ``risnet`` command.
"""

__version__ = "0.1.0"
