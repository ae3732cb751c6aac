import csv
import filecmp
import json

import pytest
import yaml

from banditprobe.cli import EXIT_FIT, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from banditprobe.agents import CohortSpec
from banditprobe.bandit import preset
from banditprobe.inference import SamplerConfig
from banditprobe.orchestrator import (
    PlanError,
    fit_logs,
    load_fit_groups,
    plan_from_dict,
    recover,
    report,
    run_plan,
)
from banditprobe.records import read_runs, write_runs
from banditprobe.rw_model import GroupHyper
from banditprobe.agents import simulate_cohort

QUICK = SamplerConfig(n_chains=2, n_warmup=200, n_samples=200, master_seed=1)
QUICK_FLAGS = ["--chains", "2", "--sampler-warmup", "200", "--samples", "200", "--seed", "1"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_value(rows, cond, metric, field="mean"):
    (row,) = [r for r in rows if r["condition_id"] == cond and r["metric"] == metric]
    return float(row[field])


def write_plan(tmp_path, plan):
    path = tmp_path / "plan.yaml"
    path.write_text(yaml.safe_dump(plan), encoding="utf-8")
    return path


# -- plan validation -------------------------------------------------------------

BASE = {"agents": ["oracle"], "reward_structures": ["asymmetric"], "n_runs": 3, "n_trials": 20}


@pytest.mark.parametrize("patch", [
    {"agents": []},
    {"agents": [{"kind": "telepath"}]},
    {"agents": [{"kind": "rw", "a": 0.2}]},
    {"agents": [{"kind": "llm", "name": "m", "mock_tokens": ["X"]}]},  # no decodings
    {"agents": ["oracle", "oracle"]},
    {"reward_structures": ["banana"]},
    {"warmup": 20},
    {"n_runs": 0},
    {"colour": "blue"},
    {"decoding_configs": ["Wild"]},
])
def test_plan_validation_errors(patch):
    with pytest.raises(PlanError):
        plan_from_dict({**BASE, **patch})


def test_plan_defaults():
    plan = plan_from_dict({"agents": ["oracle"], "reward_structures": ["symmetric"]})
    assert (plan.n_runs, plan.n_trials, plan.warmup) == (200, 100, 10)


def test_factorial_expansion_count():
    plan = plan_from_dict({
        "agents": ["oracle", {"kind": "llm", "name": "mock", "mock_tokens": ["X"]}],
        "reward_structures": ["symmetric", "asymmetric"],
        "decoding_configs": ["Strict", "Moderate", "Default-like", "Exploratory"],
    })
    ids = [c.condition_id for c in plan.conditions()]
    assert len(ids) == 2 + 8 == len(set(ids))
    assert "mock__asymmetric__Default-like" in ids and "oracle__symmetric" in ids


def test_custom_structure_and_decoding():
    plan = plan_from_dict({**BASE, "reward_structures": [{"p_x": 0.6, "p_y": 0.4}],
                           "agents": [{"kind": "llm", "name": "m", "mock_tokens": ["X"]}],
                           "decoding_configs": [{"temperature": 0.7, "top_p": 0.9, "label": "mid"}]})
    (cond,) = plan.conditions()
    assert cond.structure.p_x == 0.6 and cond.decoding.temperature == 0.7


# -- run --------------------------------------------------------------------------------

def test_oracle_and_random_benchmarks(tmp_path):
    plan = plan_from_dict({"agents": ["oracle", "random"], "reward_structures": ["asymmetric", "symmetric"],
                           "master_seed": 1})
    run_plan(plan, tmp_path, workers=1)
    rows = read_csv(tmp_path / "summary.csv")
    assert 74 <= summary_value(rows, "oracle__asymmetric", "total_reward") <= 76
    assert summary_value(rows, "oracle__asymmetric", "target_rate") == 1.0
    assert 24 <= summary_value(rows, "random__symmetric", "total_reward") <= 26
    assert 0.48 <= summary_value(rows, "random__symmetric", "target_rate") <= 0.52


def test_llm_factorial_writes_eight_files(tmp_path):
    plan = plan_from_dict({
        "agents": [{"kind": "llm", "name": "mock", "mock_tokens": ["X", "Y", "maybe", " X"]}],
        "reward_structures": ["symmetric", "asymmetric"],
        "decoding_configs": ["Strict", "Moderate", "Default-like", "Exploratory"],
        "n_runs": 3, "n_trials": 5, "warmup": 2,
    })
    res = run_plan(plan, tmp_path, workers=2)
    files = sorted(p.name for p in (tmp_path / "runs").iterdir())
    assert len(files) == 8 and len(res.log_paths) == 8
    inv = {r["condition_id"]: r for r in read_csv(tmp_path / "invalid_rates.csv")}
    # trials 3 ("maybe") and 5 (past the script) are invalid in every run
    assert all(r["n_invalid"] == "6" and float(r["invalid_rate"]) == 0.4 for r in inv.values())
    runs = read_runs(tmp_path / "runs" / "mock__symmetric__Strict.csv")
    bad = [t for r in runs for t in r.trials if not t.valid]
    assert bad and all(t.reward == 0 for t in bad)
    assert runs[0].temperature == 0.0 and runs[0].top_p == 0.5


def test_every_row_in_one_summary(tmp_path):
    plan = plan_from_dict({**BASE, "agents": ["oracle", "wsls"], "reward_structures": ["symmetric", "asymmetric"]})
    run_plan(plan, tmp_path, workers=1)
    n_rows = sum(len(read_csv(p)) for p in (tmp_path / "runs").iterdir())
    summary = read_csv(tmp_path / "summary.csv")
    counted = sum(int(r["n"]) * plan.n_trials for r in summary if r["metric"] == "total_reward")
    assert counted == n_rows == 4 * 3 * 20


def test_synthetic_plan_byte_identical(tmp_path):
    plan = {"agents": ["random", "epsilon_greedy", {"kind": "rw", "a": 0.2, "tau": 3.0}],
            "reward_structures": ["symmetric", "asymmetric"], "n_runs": 8, "n_trials": 30, "master_seed": 9}
    run_plan(plan_from_dict(plan), tmp_path / "a", workers=1)
    run_plan(plan_from_dict(plan), tmp_path / "b", workers=3)
    names = sorted(p.name for p in (tmp_path / "a" / "runs").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "runs", tmp_path / "b" / "runs", names, shallow=False)
    assert match == names and not mismatch and not errors
    run_plan(plan_from_dict({**plan, "master_seed": 10}), tmp_path / "c", workers=1)
    assert not filecmp.cmp(tmp_path / "a" / "runs" / names[0], tmp_path / "c" / "runs" / names[0], shallow=False)


def test_resume_skips_complete_and_refuses_partial(tmp_path):
    plan = plan_from_dict({**BASE, "agents": ["random"]})
    run_plan(plan, tmp_path, workers=1)
    log = tmp_path / "runs" / "random__asymmetric.csv"
    before = log.read_bytes()
    res = run_plan(plan, tmp_path, workers=1)
    assert res.skipped == ["random__asymmetric"] and log.read_bytes() == before
    lines = before.decode().splitlines(keepends=True)
    log.write_text("".join(lines[:-5]))
    with pytest.raises(PlanError):
        run_plan(plan, tmp_path, workers=1)


# -- fit / report / recover ------------------------------------------------------------

def _cohort_logs(tmp_path):
    paths = []
    for name in ("symmetric", "asymmetric"):
        spec = CohortSpec(GroupHyper.from_natural(0.3, 2.0, 0.1, 0.1), 6, 30, preset(name), condition_id="rw")
        path = tmp_path / f"{name}.csv"
        write_runs(path, simulate_cohort(spec, 4))
        paths.append(path)
    return paths


def test_mixed_structures_fit_separately(tmp_path):
    paths = _cohort_logs(tmp_path)
    groups = load_fit_groups(paths)
    assert set(groups) == {"rw__symmetric", "rw__asymmetric"}
    assert set(load_fit_groups(paths, "symmetric")) == {"rw"}
    fits = fit_logs(paths, tmp_path / "out", QUICK)
    assert len(fits) == 2
    for fid in fits:
        d = tmp_path / "out" / "fits" / fid
        for name in ("summary.csv", "draws.csv", "run_means.csv", "loglik.csv", "fit_info.json"):
            assert (d / name).exists()
        info = json.loads((d / "fit_info.json").read_text())
        assert info["n_runs"] == 6
        params = {r["parameter"] for r in read_csv(d / "summary.csv")}
        assert {"mu_a", "group_A", "group_tau", "a[0]"} <= params
        draws = read_csv(d / "draws.csv")
        assert len(draws) == 2 * 200 * 8 and {r["parameter"] for r in draws} >= {"mu_tau", "group_tau"}


def test_fit_single_run_rejected(tmp_path):
    path = tmp_path / "one.csv"
    spec = CohortSpec(GroupHyper(0, 0.1, 0, 0.1), 1, 10, preset("symmetric"))
    write_runs(path, simulate_cohort(spec, 0))
    with pytest.raises(PlanError):
        fit_logs([path], tmp_path, QUICK)
    assert main(["fit", str(path), "--out", str(tmp_path)] + QUICK_FLAGS) == EXIT_INVALID


def test_fit_malformed_csv_names_line(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    (good,) = _cohort_logs(tmp_path)[:1]
    lines = good.read_text().splitlines()
    lines[3] = lines[3].replace(",X,", ",Q,").replace(",Y,", ",Q,")
    path.write_text("\n".join(lines) + "\n")
    assert main(["fit", str(path), "--out", str(tmp_path / "o")] + QUICK_FLAGS) == EXIT_INVALID
    assert f"{path}:4" in capsys.readouterr().err


def test_report_tables(tmp_path):
    plan = plan_from_dict({**BASE, "agents": ["oracle", "random"]})
    run_plan(plan, tmp_path / "a", workers=1)
    plan2 = plan_from_dict({**BASE, "agents": ["wsls"]})
    run_plan(plan2, tmp_path / "b", workers=1)
    paths = _cohort_logs(tmp_path)
    fit_logs(paths[1:], tmp_path / "f", QUICK)
    written = report([tmp_path / "a" / "summary.csv", tmp_path / "b" / "summary.csv",
                      tmp_path / "f" / "fits" / "rw" / "summary.csv"], tmp_path / "r")
    long_rows = read_csv(written["conditions_long"])
    per_metric = [r for r in long_rows if r["metric"] == "total_reward"]
    assert len(per_metric) == 3
    wide = read_csv(written["conditions_wide"])
    assert {r["condition_id"] for r in wide} == {"oracle__asymmetric", "random__asymmetric", "wsls__asymmetric"}
    assert "rigidity_index_ci_low" in wide[0]
    (post,) = read_csv(written["posterior_table"])
    assert post["fit_id"] == "rw" and 0 < float(post["group_A_mean"]) < 1 and 0 < float(post["group_tau_mean"]) < 5


def test_report_two_conditions_two_rows(tmp_path):
    run_plan(plan_from_dict({**BASE, "agents": ["oracle", "random"]}), tmp_path, workers=1)
    rows = read_csv(report([tmp_path / "summary.csv"], tmp_path / "r")["conditions_long"])
    assert all(sum(r["metric"] == m for r in rows) == 2 for m in {r["metric"] for r in rows})


def test_report_errors_leave_no_output(tmp_path):
    with pytest.raises(PlanError):
        report([], tmp_path / "r")
    with pytest.raises(PlanError) as err:
        report([tmp_path / "missing.csv"], tmp_path / "r")
    assert "missing.csv" in str(err.value)
    assert not (tmp_path / "r").exists()
    assert main(["report", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "r")]) == EXIT_INVALID


def test_recover_zero_runs_rejected(tmp_path):
    spec = CohortSpec(GroupHyper(0, 0.1, 0, 0.1), 0, 10, preset("asymmetric"))
    with pytest.raises(PlanError):
        recover(spec, tmp_path, QUICK)


def test_recover_homogeneous_cohort_clusters(tmp_path):
    spec = CohortSpec(GroupHyper.from_natural(0.3, 3.0), 20, 60, preset("asymmetric"), condition_id="flat")
    rep = recover(spec, tmp_path, QUICK, seed=2)
    rows = {r["quantity"]: r for r in read_csv(tmp_path / "recovery.csv")}
    assert set(rows) >= {"group_A", "group_tau", "max_rhat", "divergence_rate", "run_a_spread", "run_tau_spread"}
    assert float(rows["run_a_spread"]["truth"]) == 0.0
    # shrinkage pulls per-run means onto the group value
    assert float(rows["run_a_spread"]["estimate"]) < 0.03
    assert float(rows["run_tau_spread"]["estimate"]) < 0.3
    assert rep.rows


# -- CLI ----------------------------------------------------------------------------------

def test_cli_run_and_exit_codes(tmp_path):
    plan = write_plan(tmp_path, {**BASE, "agents": ["oracle"]})
    assert main(["run", "--plan", str(plan), "--out", str(tmp_path / "o"), "--workers", "1"]) == EXIT_OK
    assert (tmp_path / "o" / "summary.csv").exists()
    bad = write_plan(tmp_path, {**BASE, "agents": [{"kind": "rw"}]})
    assert main(["run", "--plan", str(bad), "--out", str(tmp_path / "x")]) == EXIT_INVALID
    assert not (tmp_path / "x").exists()
    assert main(["run", "--plan", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "x")]) == EXIT_INVALID


def test_cli_overrides_seed_and_warmup(tmp_path):
    plan = write_plan(tmp_path, {**BASE, "agents": ["random"]})
    main(["run", "--plan", str(plan), "--out", str(tmp_path / "a"), "--seed", "5", "--warmup", "3", "--workers", "1"])
    main(["run", "--plan", str(plan), "--out", str(tmp_path / "b"), "--seed", "6", "--workers", "1"])
    a = (tmp_path / "a" / "runs" / "random__asymmetric.csv").read_bytes()
    b = (tmp_path / "b" / "runs" / "random__asymmetric.csv").read_bytes()
    assert a != b


def test_cli_provider_auth_failure_is_runtime_error(tmp_path, monkeypatch):
    monkeypatch.delenv("BANDIT_NO_SUCH_KEY", raising=False)
    plan = write_plan(tmp_path, {**BASE, "agents": [{"kind": "llm", "name": "live", "provider": {
        "endpoint_url": "https://example.invalid/v1/chat/completions", "model_name": "m",
        "api_key_env_var": "BANDIT_NO_SUCH_KEY"}}], "decoding_configs": ["Strict"]})
    assert main(["run", "--plan", str(plan), "--out", str(tmp_path / "o"), "--workers", "1"]) == EXIT_RUNTIME


def test_cli_budget_cap_is_runtime_error(tmp_path):
    plan = write_plan(tmp_path, {**BASE, "agents": [{"kind": "llm", "name": "m", "mock_tokens": ["X"] * 20}],
                                 "decoding_configs": ["Strict"]})
    code = main(["run", "--plan", str(plan), "--out", str(tmp_path / "o"), "--workers", "1", "--max-requests", "5"])
    assert code == EXIT_RUNTIME


def test_cli_mock_script_relative_to_plan(tmp_path):
    (tmp_path / "script.txt").write_text("X\nY\n")
    plan = write_plan(tmp_path, {**BASE, "n_trials": 3, "warmup": 1, "agents": [{"kind": "llm", "name": "m", "mock_script": "script.txt"}],
                                 "decoding_configs": ["Strict"]})
    assert main(["run", "--plan", str(plan), "--out", str(tmp_path / "o"), "--workers", "1"]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "invalid_rates.csv")
    assert float(rows[0]["invalid_rate"]) == pytest.approx(1 / 3)


def test_cli_recover_failure_exit_code(tmp_path):
    args = ["recover", "--out", str(tmp_path), "--runs", "5", "--trials", "20", "--tol-a", "0", "--tol-tau", "0"]
    assert main(args + QUICK_FLAGS) == EXIT_FIT


def test_cli_fit_config_file(tmp_path):
    paths = _cohort_logs(tmp_path)
    cfg = tmp_path / "fit.yaml"
    cfg.write_text("n_chains: 2\nn_warmup: 150\nn_samples: 100\nmaster_seed: 2\n")
    assert main(["fit", str(paths[0]), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_OK
    assert len(read_csv(tmp_path / "o" / "fits" / "rw" / "draws.csv")) == 2 * 100 * 8
    cfg.write_text("n_chainz: 2\n")
    assert main(["fit", str(paths[0]), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_INVALID


def test_cli_reliability_and_report(tmp_path):
    spec = CohortSpec(GroupHyper.from_natural(0.3, 2.0, 0.3, 0.3), 6, 40, preset("asymmetric"), condition_id="rel")
    write_runs(tmp_path / "rel.csv", simulate_cohort(spec, 1))
    assert main(["reliability", str(tmp_path / "rel.csv"), "--out", str(tmp_path / "o")] + QUICK_FLAGS) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "reliability.csv")
    assert [r["parameter"] for r in rows] == ["A", "tau"] and all(float(r["icc"]) <= 1 for r in rows)
    assert main(["report", str(tmp_path / "o" / "reliability.csv"), "--out", str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "r" / "reliability_table.csv").exists()
