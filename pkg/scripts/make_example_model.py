"""Write configs/porpoise_model.json: the porpoise-study matrices with
illustrative dive-type emissions, for trying ``simulate`` and ``summarize``."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from _models import porpoise_model

from hierhmm.io import load_config, save_model

root = os.path.join(os.path.dirname(__file__), "..", "configs")
save_model(os.path.join(root, "porpoise_model.json"), porpoise_model(), load_config(os.path.join(root, "porpoise.yaml")))
