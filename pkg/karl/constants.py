# Discrete l1 targets used as reconstruction conditions
DEFAULT_LOSS_TABLE = (
    0.0, 0.01, 0.02,
    0.03, 0.05, 0.07, 0.09, 0.11,
    0.14, 0.2, 0.3, 0.4,
)

HALT_THRESHOLD = 0.75

# Inference-time default target error
DEFAULT_EPS = 0.05

# Evaluation eps lists
VARIABLE_EVAL_EPS = (0.03, 0.05, 0.09)
THRESHOLD_EVAL_EPS = (0.01, 0.03, 0.05, 0.07, 0.09, 0.11)
THRESHOLD_MARGINS = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)

BCE_CLAMP = 1e-6

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03

CONTINUOUS = 'continuous'
DISCRETE = 'discrete'
TOKEN_MODES = (
    (CONTINUOUS, 'Continuous tokens'),
    (DISCRETE, 'Discrete (codebook) tokens'),
)

SYNTHETIC_KINDS = (
    ('constant', 'Constant gray'),
    ('gradient', 'Linear gradient'),
    ('checkerboard', 'Checkerboard'),
    ('noise', 'Uniform noise'),
    ('mandelbrot', 'Mandelbrot render'),
)

# Expected mean-token ordering of the synthetic families
COMPLEXITY_ORDER = ('constant', 'gradient', 'checkerboard', 'noise')

SPLITS = (
    ('train', 'Training split'),
    ('val', 'Validation split'),
)

SWEEP_AXES = (
    ('encoder_width', 'Encoder width'),
    ('encoder_depth', 'Encoder depth'),
    ('decoder_width', 'Decoder width'),
    ('decoder_depth', 'Decoder depth'),
    ('codebook_size', '1D codebook size'),
    ('continuous_vs_discrete', 'Continuous vs discrete (2D/1D)'),
    ('encoder_decoder', 'Encoder/decoder size grid'),
)

# (width, depth) presets for the encoder_decoder sweep axis
SIZE_PRESETS = {
    'small': (64, 2),
    'large': (256, 6),
}

# Management command return codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_CHECKPOINT_MISMATCH = 4

CHECKPOINT_FORMAT_VERSION = 1
