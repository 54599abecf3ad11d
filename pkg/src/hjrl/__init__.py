"""Travel-cost reachability on the double integrator: grid HJB solvers, a
sinusoidal TD value learner, and the experiment harness that compares them."""

__version__ = "0.1.0"
