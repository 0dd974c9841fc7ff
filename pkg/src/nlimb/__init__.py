"""Joint optimization of physical design parameters and neural control policies.

A design distribution (uniform-weight mixture of diagonal Gaussians over a
bounded design space) is trained alongside a design-conditioned stochastic
policy. The policy is updated with clipped-surrogate policy gradients; the
distribution is updated with score-function gradients of the expected return
and periodically pruned down to a single component, whose mode becomes the
final design.
"""

__version__ = "0.1.0"
