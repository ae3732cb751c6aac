import json
import os
import subprocess
import sys

import numpy as np

from banditprobe import _kernels
from test_rw_model import micro_dataset

PROBE = (
    "import json, numpy as np\n"
    "from banditprobe import _accel, _kernels\n"
    "from banditprobe.rw_model import HierarchicalRW\n"
    "from test_rw_model import micro_dataset\n"
    "m = HierarchicalRW(micro_dataset(3))\n"
    "lp, g = m.log_prob_grad(np.linspace(-0.5, 0.5, m.dim))\n"
    "print(json.dumps({'backend': _accel.backend(), 'lp': lp, 'g': g.tolist(),\n"
    "                  'loop_is_numpy': _kernels.loglik is _kernels.loglik_numpy}))\n"
)


def _probe(flag):
    env = dict(os.environ, BANDITPROBE_DISABLE_NUMBA=flag)
    tests_dir = os.path.dirname(__file__)
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [tests_dir, env.get("PYTHONPATH", "")]))
    out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_disable_flag_selects_numpy_and_agrees():
    off = _probe("1")
    assert off["backend"] == "numpy" and off["loop_is_numpy"]
    on = _probe("")
    assert np.isclose(on["lp"], off["lp"], rtol=1e-12)
    assert np.allclose(on["g"], off["g"], rtol=1e-10, atol=1e-12)


def test_numpy_and_loop_kernels_agree():
    d = micro_dataset(4, n_runs=6, n_trials=25)
    a = np.linspace(0.05, 0.95, 6)
    tau = np.linspace(0.1, 4.9, 6)
    ll_np, ga_np, gt_np = _kernels.loglik_grad_numpy(a, tau, d.choices, d.rewards, d.valid)
    ll_lp, ga_lp, gt_lp = _kernels.loglik_grad_loop(a, tau, d.choices, d.rewards, d.valid)
    assert np.allclose(ll_np, ll_lp, rtol=1e-12) and np.allclose(ga_np, ga_lp) and np.allclose(gt_np, gt_lp)
