"""Speech enhancement by disentangled latent representations.

Stage 1 learns speech and noise latent posteriors from noisy audio under
the supervision of separately pre-trained clean-speech and noise
autoencoders; stage 2 refines the decoders with least-squares adversarial
training. Enhancement resynthesizes either directly from the decoded
speech log-power spectrum or through a ratio mask built from the decoded
speech and noise estimates.
"""

__version__ = "0.1.0"
