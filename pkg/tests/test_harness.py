import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from ngdqn.cli import main as cli_main
from ngdqn.envs import EnvKind
from ngdqn.fisher import DampingState, EigenEstimateConfig
from ngdqn.harness import (
    DIAGNOSTICS_HEADER,
    TRAINING_HEADER,
    GridSpace,
    angle_degrees,
    apply_grid_point,
    default_diagnostics_config,
    grid_search,
    inversion_diagnostics,
    plot_moving_average,
    read_training_csv,
    run_trials,
    validate_run_summary,
    write_run_summary,
    write_training_csv,
)
from ngdqn.net import ActivationKind
from ngdqn.rl import Method, RunRecord, TrainConfig, best_100_average, train
from ngdqn.solvers import SolveConfig, SolverKind


def tiny_cfg(**kw):
    defaults = dict(
        episodes=2,
        batch_size=16,
        buffer_capacity=200,
        hidden=(6,),
        alpha0=0.01,
        solver=SolveConfig(kind=SolverKind.MINRES_QLP, tol=1e-6, max_iter=50),
        seed=0,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def fake_record(rewards, seed=0, fingerprint="f"):
    return RunRecord(
        episode_rewards=list(map(float, rewards)),
        best_100_avg=best_100_average(rewards),
        wall_time=1.5,
        config_fingerprint=fingerprint,
        seed=seed,
    )


class TestTrainingCsv:
    def test_round_trip_full_precision(self, tmp_path):
        rng = np.random.default_rng(0)
        rewards = list(rng.uniform(0, 200, 120))
        rec = fake_record(rewards)
        path = tmp_path / "run.csv"
        write_training_csv(path, rec)
        rows = read_training_csv(path)
        assert [r["episode"] for r in rows] == [str(i + 1) for i in range(120)]
        assert [float(r["reward"]) for r in rows] == rewards
        # moving average empty before episode 100, exact after
        assert all(r["moving_avg_100"] == "" for r in rows[:99])
        # bit-exact round trip of the record's own moving average
        moving = rec.moving_avg_100
        assert [float(r["moving_avg_100"]) for r in rows[99:]] == moving[99:]
        assert moving[99] == pytest.approx(np.mean(rewards[:100]), rel=1e-12)
        assert moving[119] == pytest.approx(np.mean(rewards[20:120]), rel=1e-12)

    def test_header(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_training_csv(path, fake_record([]))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows == [TRAINING_HEADER]


class TestRunSummary:
    def test_write_and_validate(self, tmp_path):
        cfg = tiny_cfg()
        rec = fake_record([10.0] * 100, seed=3, fingerprint=cfg.fingerprint())
        path = tmp_path / "s.json"
        write_run_summary(path, rec, cfg)
        summary = json.loads(path.read_text())
        validate_run_summary(summary)
        assert summary["seed"] == 3
        assert summary["best_100_avg"] == 10.0
        assert summary["config"] == cfg.to_dict()

    @pytest.mark.parametrize("mutate", [
        lambda s: s.pop("seed"),
        lambda s: s.__setitem__("seed", "0"),
        lambda s: s.__setitem__("best_100_avg", "high"),
        lambda s: s.__setitem__("config", []),
    ])
    def test_schema_violations_raise(self, tmp_path, mutate):
        cfg = tiny_cfg()
        rec = fake_record([1.0], fingerprint=cfg.fingerprint())
        path = tmp_path / "s.json"
        write_run_summary(path, rec, cfg)
        summary = json.loads(path.read_text())
        mutate(summary)
        with pytest.raises(ValueError):
            validate_run_summary(summary)


class TestTrials:
    def test_single_seed_mean_equals_run(self, tmp_path):
        cfg = tiny_cfg()
        summary = run_trials(EnvKind.CARTPOLE_V0, cfg, Method.DQN, n_seeds=1, out_dir=tmp_path)
        rec = train(EnvKind.CARTPOLE_V0, cfg, Method.DQN)
        # 2 episodes: best_100_avg is None, so mean is None
        assert summary.best_100_avgs == [rec.best_100_avg]
        assert summary.seeds == [cfg.seed]
        assert (tmp_path / "dqn_seed0.csv").exists()
        assert (tmp_path / "dqn_seed0.json").exists()
        assert (tmp_path / "dqn_trials.json").exists()

    def test_seed_sequence_and_determinism(self, tmp_path):
        cfg = tiny_cfg(seed=5)
        s1 = run_trials(EnvKind.CARTPOLE_V0, cfg, Method.DQN, n_seeds=3)
        s2 = run_trials(EnvKind.CARTPOLE_V0, cfg, Method.DQN, n_seeds=3)
        assert s1.seeds == [5, 6, 7]
        assert s1.best_100_avgs == s2.best_100_avgs
        assert s1.config_fingerprint == s2.config_fingerprint

    def test_mean_and_iqr_with_enough_episodes(self):
        # 100-episode runs so best_100_avg exists per seed
        cfg = tiny_cfg(episodes=100, epsilon0=1.0, epsilon_decay=1.0)
        summary = run_trials(EnvKind.CARTPOLE_V0, cfg, Method.DQN, n_seeds=2)
        assert summary.mean == pytest.approx(np.mean(summary.best_100_avgs))
        q1, q3 = np.percentile(summary.best_100_avgs, [25, 75])
        assert summary.iqr == pytest.approx(q3 - q1)
        assert summary.incomplete_seeds == []

    def test_bad_n_seeds(self):
        with pytest.raises(ValueError):
            run_trials(EnvKind.CARTPOLE_V0, tiny_cfg(), Method.DQN, n_seeds=0)


class TestGridSpace:
    def test_default_space_size(self):
        # 3 lr x 2 adapt x 2 batch x 2 memory x 2 activation = 48
        assert len(GridSpace().configurations()) == 48

    def test_enumeration_order_deterministic(self):
        a = GridSpace().configurations()
        b = GridSpace().configurations()
        assert a == b
        # last axis changes fastest; first two configs differ only in the
        # fastest-varying non-singleton axis (activation)
        assert a[0]["activation"] == "tanh"
        assert a[1]["activation"] == "relu"
        assert a[0]["learning_rate"] == a[1]["learning_rate"] == 0.01

    def test_apply_grid_point(self):
        base = tiny_cfg()
        point = dict(
            learning_rate=1.0, adapt_damping=True, batch_size=32,
            memory_length=2500, activation="relu",
            epsilon_decay=0.99, target_update_freq=100,
        )
        cfg = apply_grid_point(base, point)
        assert cfg.alpha0 == 1.0
        assert cfg.damping.adapt is True
        assert cfg.batch_size == 32
        assert cfg.buffer_capacity == 2500
        assert cfg.activation is ActivationKind.RELU
        assert cfg.epsilon_decay == 0.99
        assert cfg.target_update_freq == 100

    def test_none_axes_leave_base_untouched(self):
        base = tiny_cfg(epsilon_decay=0.995, target_update_freq=None)
        point = GridSpace().configurations()[0]
        cfg = apply_grid_point(base, point)
        assert cfg.epsilon_decay == 0.995
        assert cfg.target_update_freq is None


class TestGridSearch:
    def test_smoke_sorted_and_persisted(self, tmp_path):
        space = GridSpace(
            learning_rate=(0.01, 0.05),
            adapt_damping=(False,),
            batch_size=(8,),
            memory_length=(100,),
            activation=("tanh",),
        )
        table = grid_search(
            EnvKind.CARTPOLE_V0, space, Method.DQN, episodes=2,
            base_cfg=tiny_cfg(), out_dir=tmp_path,
        )
        assert len(table) == 2
        vals = [r["best_100_avg"] for r in table if r["best_100_avg"] is not None]
        assert vals == sorted(vals)
        assert (tmp_path / "grid_dqn.csv").exists()
        best_path = tmp_path / "grid_dqn_best.json"
        if best_path.exists():  # written only when some config produced a score
            best_cfg = TrainConfig.from_dict(json.loads(best_path.read_text()))
            assert best_cfg.alpha0 in (0.01, 0.05)

    def test_best_config_round_trip(self, tmp_path):
        # enough episodes that best_100_avg exists and best json is written
        space = GridSpace(
            learning_rate=(0.01,), adapt_damping=(False,), batch_size=(8,),
            memory_length=(100,), activation=("tanh",),
        )
        base = tiny_cfg(epsilon0=1.0, epsilon_decay=1.0)
        grid_search(EnvKind.CARTPOLE_V0, space, Method.DQN, episodes=100, base_cfg=base, out_dir=tmp_path)
        best_cfg = TrainConfig.from_dict(json.loads((tmp_path / "grid_dqn_best.json").read_text()))
        assert best_cfg.alpha0 == 0.01
        assert best_cfg.buffer_capacity == 100


class TestAngle:
    def test_identical_vectors_zero(self):
        v = np.array([1.0, 2.0, 3.0])
        assert angle_degrees(v, 2.0 * v) == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_ninety(self):
        assert angle_degrees(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(90.0)

    def test_opposite_one_eighty(self):
        v = np.array([1.0, -1.0])
        assert angle_degrees(v, -v) == pytest.approx(180.0)

    def test_zero_vector_returns_zero(self):
        assert angle_degrees(np.zeros(3), np.ones(3)) == 0.0


class TestDiagnostics:
    EIGEN = EigenEstimateConfig(steps=4000, learning_rate=0.05, early_stop=1e-4, seed=0)

    def tiny_diag_cfg(self):
        return replace(
            default_diagnostics_config(),
            batch_size=16,
            hidden=(8,),
            solver=SolveConfig(kind=SolverKind.LINEAR_CG, tol=1e-10, max_iter=200),
        )

    def test_krylov_directions_match_true_inverse(self, tmp_path):
        out = tmp_path / "diag.csv"
        records = inversion_diagnostics(
            episodes=2, cfg=self.tiny_diag_cfg(), eigen_cfg=self.EIGEN, out_path=out
        )
        assert records, "no minibatches reached"
        for r in records:
            # tight solves reproduce the explicit-inverse direction
            assert r.angle_cg_deg < 0.1
            assert r.angle_mrqlp_deg < 0.1
            assert r.norm_cg == pytest.approx(r.norm_true, rel=1e-3)
            assert r.damping_ratio == pytest.approx(r.damping / r.max_eig)
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == DIAGNOSTICS_HEADER
        assert len(rows) == len(records) + 1

    def test_damping_dominated_limit(self):
        # d >> lambda_max(G): (G + dI)^-1 g ~ g/d, so all three directions
        # collapse onto the gradient
        cfg = replace(self.tiny_diag_cfg(), damping=DampingState(d=1e3, adapt=False))
        records = inversion_diagnostics(episodes=1, cfg=cfg, eigen_cfg=self.EIGEN)
        for r in records:
            assert r.angle_cg_deg < 1.0
            assert r.angle_mrqlp_deg < 1.0
            assert r.damping_ratio > 10.0

    def test_deterministic(self):
        a = inversion_diagnostics(episodes=1, cfg=self.tiny_diag_cfg(), eigen_cfg=self.EIGEN)
        b = inversion_diagnostics(episodes=1, cfg=self.tiny_diag_cfg(), eigen_cfg=self.EIGEN)
        assert [r.angle_cg_deg for r in a] == [r.angle_cg_deg for r in b]
        assert [r.norm_true for r in a] == [r.norm_true for r in b]


class TestPlot:
    def test_svg_written(self, tmp_path):
        rewards = list(np.random.default_rng(0).uniform(0, 200, 110))
        p = tmp_path / "r.csv"
        write_training_csv(p, fake_record(rewards))
        out = tmp_path / "out.svg"
        plot_moving_average([p], out)
        assert out.exists()
        assert b"<svg" in out.read_bytes()[:500]


class TestCli:
    def test_train_smoke(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(
            "episodes: 2\nbatch_size: 16\nbuffer_capacity: 200\nhidden: [6]\n"
            "solver: {kind: minres_qlp, tol: 1.0e-6, max_iter: 50}\n"
        )
        rc = cli_main([
            "train", "--env", "CartPole-v0", "--method", "dqn",
            "--config", str(cfg_path), "--seed", "1", "--out", str(tmp_path / "runs"),
        ])
        assert rc == 0
        assert (tmp_path / "runs" / "dqn_seed1.csv").exists()
        assert (tmp_path / "runs" / "dqn_seed1.json").exists()

    def test_unknown_env_is_config_error(self):
        assert cli_main(["train", "--env", "MountainCar-v0"]) == 1

    def test_bad_config_file_is_config_error(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("- not\n- a\n- mapping\n")
        assert cli_main(["train", "--env", "CartPole-v0", "--config", str(p)]) == 1

    def test_missing_config_file_is_config_error(self):
        assert cli_main(["train", "--env", "CartPole-v0", "--config", "/nope.yaml"]) == 1

    def test_plot_smoke(self, tmp_path):
        rewards = list(np.random.default_rng(1).uniform(0, 200, 105))
        p = tmp_path / "r.csv"
        write_training_csv(p, fake_record(rewards))
        out = tmp_path / "m.svg"
        assert cli_main(["plot", str(p), "--out", str(out)]) == 0
        assert out.exists()

    def test_diagnose_smoke(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(
            "episodes: 1\nbatch_size: 16\nhidden: [8]\n"
            "solver: {kind: lincg, tol: 1.0e-8, max_iter: 100}\n"
            "damping: {d: 0.1, adapt: true}\n"
        )
        out = tmp_path / "diag.csv"
        rc = cli_main([
            "diagnose", "--episodes", "1", "--config", str(cfg_path),
            "--eigen-steps", "2000", "--eigen-lr", "0.05", "--out", str(out),
        ])
        assert rc == 0
        assert out.exists()
