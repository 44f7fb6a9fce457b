"""Two-stage melody continuation with disentangled segment latents.

Submodules:

* ``symbolic``  corpus IO, quantization onto a token grid, segmentation
* ``harmony``   chord-function labels relative to a key
* ``kernel``    small reverse-mode autodiff, LSTM, Adam, checkpoints
* ``ec2vae``    segment VAE with separate pitch and rhythm latents
* ``predictor`` latent sequence continuation in three variants
* ``metrics``   duration-weighted rhythm accuracy
* ``vmo``       thresholded factor oracle, information rate, patterns
* ``pipeline``  end-to-end batch commands, also exposed as a CLI
* ``synth``     deterministic synthetic corpus
"""

__version__ = "0.1.0"
