"""Retinal vessel segmentation with a residual encoder-decoder network,
built on a small numpy tensor library with reverse-mode autodiff.

Subpackages and modules:

    tensor    validated n-d array values (f32/f64, rank <= 4)
    kernels   conv/pool compute kernels, numba-accelerated with a numpy
              fallback (select with RCNET_BACKEND=auto|numba|numpy)
    autograd  define-by-run tape, op registry, finite-difference gradcheck
    layers    conv, batch norm, relu, max pool/unpool, softmax, weighted
              cross-entropy; functional and tape forms
    model     network wiring, parameter containers, checkpoints
    optim     SGD loop with median-frequency class weighting
    data      DRIVE/STARE loading, padding, splits, augmentation
    metrics   FOV-restricted confusion, Se/Sp/Acc/F1, rank AUC, overlays
    netpbm    bit-exact binary PGM/PPM readers and writers
    checks    gradient verification suites
    cli       the `rcnet` command
"""

__version__ = "0.1.0"
