"""Hardware-free MindCube sonification stack.

Subsystems: ``wire`` (packet codec), ``simdevice`` (virtual device),
``fusion`` (attitude filter), ``conditioning`` (activity score),
``diffusion`` (conditioned latent sampler), ``sonify`` (renderer and
control voltages), ``server`` (pipeline + network surface), ``cli``.
"""

__version__ = "0.1.0"
