"""Self-supervised training of physics-driven unrolled MRI reconstruction
with sparse parallel-imaging-consistent perturbations."""

from .cg import cg_normal, cg_sense
from .config import ExperimentConfig, load_config, parse_config
from .data import (CoilSensitivities, Dataset, DatasetSlice, NoiseSpec,
                   build_dataset, full_mask, load_dataset, save_dataset,
                   simulate_coils, simulate_phantom)
from .encoding import add_noise, adjoint, fft2c, forward, ifft2c
from .losses import (LossConfig, evaluate_loss, loss_ccssdu, loss_gradient,
                     loss_mmssdu, loss_pic_l2_total, loss_spic,
                     loss_supervised, loss_ulim, norm_l1l2)
from .metrics import psnr, ssim
from .network import (RegularizerParams, UnrolledConfig, init_params,
                      load_checkpoint, regularizer_apply, save_checkpoint,
                      unrolled_forward)
from .perturb import (Perturbation, estimate_perturbation,
                      generate_perturbation, perturb_measurements,
                      verify_no_overlap, verify_pi_recoverable)
from .sampling import (SamplingMask, SSDUSplit, equidistant_mask,
                       shifted_patterns, ssdu_split)
from .harness import evaluate, run_ablation, train, zero_filled_psnr
from .wavelets import (WaveletCoeffs, pic_l2, wavelet_forward,
                       wavelet_inverse, weighted_l1)

__version__ = "0.1.0"
