"""
Django settings for the deskformer project.

Only the pieces Django needs to run management commands and the test runner are set here;
the rest are the defaults for each tracking component, one dict per component. A run
configuration (see `deskformer.runconfig`) starts from these dicts.

For more information on this file, see
https://docs.djangoproject.com/en/4.2/topics/settings/
"""

import os
from configurations import Configuration

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class Base(Configuration):
    """Base configuration for the tracking lab."""

    # nothing is served, but Django insists on having one
    SECRET_KEY = os.environ.get('SECRET_KEY', 'deskformer-not-secret-nothing-is-served')

    DEBUG = False
    ALLOWED_HOSTS = []

    INSTALLED_APPS = [
        'numerics.apps.NumericsConfig',
        'network.apps.NetworkConfig',
        'matching.apps.MatchingConfig',
        'training.apps.TrainingConfig',
        'tracker.apps.TrackerConfig',
        'sequences.apps.SequencesConfig',
        'evaluation.apps.EvaluationConfig',
    ]

    # no tables are used; the test runner just needs something to connect to
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': os.path.join(BASE_DIR, 'deskformer.sqlite3'),
        }
    }
    DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

    USE_TZ = True
    TIME_ZONE = 'UTC'

    # seed used by every command unless --seed is given
    SEED = int(os.environ.get('DESKFORMER_SEED', 0))

    # ModelConfig; the full-size values live in the FullScale configuration below
    NETWORK = {
        'd_model': 64,
        'n_heads': 4,
        'n_enc_layers': 2,
        'n_dec_layers': 2,
        'n_object_queries': 20,
        'patch_size': 8,
        'n_classes': 1,
        'ffn_dim': 128,
        'activation': 'relu',
        'aux_loss': False,
        'init_seed': 0,
    }

    COST_WEIGHTS = {
        'lambda_cls': 2.0,
        'lambda_l1': 5.0,
        'lambda_iou': 2.0,
    }

    LOSS = {
        'background_weight': 1.0,
        'supervise_prev_frame': True,
        'normalize_per_object': True,
    }

    AUGMENT = {
        'p_fn': 0.4,
        'p_fp': 0.1,
        'frame_range': 5,
        'past_only': False,
        'sim_crop_frac': 0.2,
        'jitter_frac': 0.01,
        'sim_pair_prob': 0.0,
    }

    TRACKER = {
        'sigma_object': 0.4,
        'sigma_track': 0.4,
        'sigma_nms': 0.9,
        't_track_reid': 5,
        'sigma_track_reid': 0.4,
        'filter_mode': 'none',
        'filter_iou_threshold': 0.5,
        'use_track_queries': True,
        'max_center_distance': 0.1,
    }

    SYNTH = {
        'n_objects': 3,
        'seq_len': 20,
        'image_width': 64,
        'image_height': 64,
        'min_speed': 0.5,
        'max_speed': 2.0,
        'min_size': 10,
        'max_size': 18,
        'birth_prob': 0.0,
        'death_prob': 0.0,
        'crossing_prob': 0.5,
        'motion_noise': 0.2,
        'det_miss_prob': 0.1,
        'det_jitter_frac': 0.02,
        'det_false_prob': 0.05,
    }

    TRAINING = {
        'steps': 2000,
        'lr': 5e-2,
        'momentum': 0.9,
        'clip_max_norm': 1.0,
        'lr_drop': 0,
        'lr_gamma': 0.1,
        'log_every': 50,
        'checkpoint_every': 500,
    }

    LOGGING = {
        'version': 1,
        'disable_existing_loggers': False,
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
                'level': 'DEBUG',
            },
        },
        'loggers': {
            'django': {
                'handlers': ['console'],
                'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'),
            },
            '': {
                'handlers': ['console'],
                'propagate': True,
                'level': os.getenv('DESKFORMER_LOG_LEVEL', 'INFO'),
            },
        },
    }


# try to import the local settings; if the file is not there just create a stub class
# for the inheritance later
try:
    from local_settings import LocalSettings
except ModuleNotFoundError:
    class LocalSettings:
        pass


class Dev(LocalSettings, Base):
    """Development configuration: desk-scale defaults."""
    DEBUG = True


class Test(Base):
    """Tiny network so the unit tests stay fast."""
    NETWORK = dict(
        Base.NETWORK, d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1,
        n_object_queries=6, ffn_dim=32)

    SYNTH = dict(Base.SYNTH, seq_len=6, image_width=32, image_height=32, min_size=8, max_size=12)

    TRAINING = dict(Base.TRAINING, steps=3, log_every=1, checkpoint_every=2)

    # everything reaches the loggers (logassert checks debug messages), little reaches stderr
    LOGGING = dict(Base.LOGGING, handlers={
        'console': {
            'class': 'logging.StreamHandler',
            'level': os.getenv('DESKFORMER_LOG_LEVEL', 'WARNING'),
        },
    }, loggers={
        '': {'handlers': ['console'], 'level': 'DEBUG'},
    })


class FullScale(Base):
    """Full-size decoder setup (reachable, but not trainable at the desk)."""
    NETWORK = dict(
        Base.NETWORK, d_model=256, n_heads=8, n_enc_layers=6, n_dec_layers=6,
        n_object_queries=500, ffn_dim=1024, aux_loss=True)
