import numpy as np
import pytest
from scipy import stats

from hetoffload.agents import (
    SCHEMES,
    DqnAgent,
    DqnForecastPolicy,
    DqnPolicy,
    MacroPolicy,
    QLearningPolicy,
    QTable,
    ReplayMemory,
    StaticPolicy,
    Transition,
    dqn_train_step,
    greedy,
    load_checkpoint,
    macro_policy,
    normalize_state,
    ql_quantize,
    ql_update,
    replay_push,
    replay_sample,
    save_checkpoint,
    select_action,
    static_policy,
)
from hetoffload.data import DemandSeries, synth_traffic, train_test_split
from hetoffload.env import DecisionWindows
from hetoffload.exceptions import ConfigError, EmptyMemoryError
from hetoffload.forecast import PersistenceForecaster
from hetoffload.hetnet import CellLayout
from hetoffload.mdp import RewardParams
from hetoffload import nn

# deterministic chain: NEXT[s][a], REWARD[s][a]
NEXT = [[0, 1], [0, 2], [2, 0]]
REWARD = [[1.0, 0.0], [0.0, 0.0], [2.0, 10.0]]


def value_iteration(discount, tol=1e-12):
    q = np.zeros((3, 2))
    while True:
        new = np.array([[REWARD[s][a] + discount * q[NEXT[s][a]].max() for a in range(2)] for s in range(3)])
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new


@pytest.mark.parametrize("seed", range(5))
def test_ql_converges_to_value_iteration_policy(seed):
    discount = 0.9
    optimal = value_iteration(discount)
    table = QTable(2)
    rng = np.random.default_rng(seed)
    s = 0
    for _ in range(10_000):
        a = int(rng.integers(0, 2))
        ql_update(table, (s,), a, REWARD[s][a], (NEXT[s][a],), lr=0.1, discount=discount)
        s = NEXT[s][a]
    learned = np.array([table.get((s,)) for s in range(3)])
    np.testing.assert_array_equal(greedy(learned), greedy(optimal))
    np.testing.assert_allclose(learned, optimal, rtol=0.05)


def test_ql_update_rule():
    table = QTable(2)
    ql_update(table, (0,), 1, 5.0, (1,), lr=0.5, discount=0.9)
    assert table.get((0,))[1] == 2.5
    table._row((1,))[:] = [4.0, 2.0]
    ql_update(table, (0,), 1, 5.0, (1,), lr=0.5, discount=0.9)
    assert table.get((0,))[1] == pytest.approx(2.5 + 0.5 * (5 + 3.6 - 2.5))
    assert table.visits[(0,)] == 2
    before = table.get((0,)).copy()
    ql_update(table, (0,), 0, 100.0, (1,), lr=0.0, discount=0.9)
    np.testing.assert_array_equal(table.get((0,)), before)


def test_qtable_unseen_reads_zero():
    table = QTable(11)
    assert np.all(table.get((1, 2, 3)) == 0)
    assert (1, 2, 3) not in table and len(table) == 0


def test_ql_quantize():
    assert ql_quantize((0, 300, 3000), 15.0, 20) == (0, 1, 10)
    assert ql_quantize((299.99, 300, 600), 15.0, 20) == (0, 1, 2)
    assert ql_quantize((1e9, 0, 0), 15.0, 20, max_bins=200) == (199, 0, 0)
    with pytest.raises(ValueError):
        ql_quantize((1, 2, 3), 15.0, 0)


def test_normalize_state():
    np.testing.assert_allclose(normalize_state((0, 7500, 15000), 12.5, 600), [0, 1, 2])


class TestSelection:
    def test_greedy_ties_lowest_index(self):
        assert greedy(np.array([1.0, 3.0, 3.0])) == 1
        np.testing.assert_array_equal(greedy(np.array([[0.0, 0.0], [1.0, 2.0]])), [0, 1])

    def test_epsilon_zero_is_greedy(self):
        class Agent:
            def q_values(self, state):
                return np.array([0.0, 5.0, 1.0])

        rng = np.random.default_rng(0)
        assert {select_action(Agent(), None, 0.0, rng) for _ in range(100)} == {1}

    def test_epsilon_one_uniform(self):
        class Agent:
            def q_values(self, state):
                return np.arange(11.0)

        rng = np.random.default_rng(0)
        counts = np.bincount([select_action(Agent(), None, 1.0, rng) for _ in range(11_000)], minlength=11)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_exploration_rate(self):
        class Agent:
            def q_values(self, state):
                return np.array([0.0, 1.0])

        rng = np.random.default_rng(3)
        picks = [select_action(Agent(), None, 0.2, rng) for _ in range(20_000)]
        # greedy action 1 with probability 1 - eps/2
        assert np.mean(picks) == pytest.approx(0.9, abs=0.01)


class TestReplay:
    def test_fifo_capacity(self):
        mem = ReplayMemory(capacity=3)
        for i in range(5):
            replay_push(mem, i)
        assert list(mem) == [2, 3, 4]

    def test_empty(self):
        with pytest.raises(EmptyMemoryError):
            replay_sample(ReplayMemory(), 4)
        with pytest.raises(ValueError):
            ReplayMemory(capacity=0)

    def test_uniform_sampling(self):
        mem = ReplayMemory(capacity=10, seed=1)
        for i in range(10):
            mem.push(i)
        draws = replay_sample(mem, 20_000)
        assert stats.chisquare(np.bincount(draws, minlength=10)).pvalue > 0.001

    def test_seeded(self):
        a, b = ReplayMemory(seed=5), ReplayMemory(seed=5)
        for i in range(50):
            a.push(i)
            b.push(i)
        assert a.sample(16) == b.sample(16)


class TestDqnAgent:
    def make(self, sync=3):
        return DqnAgent(3, hidden=(8,), learning_rate=0.05, discount=0.5, target_sync=sync, seed=0)

    def test_targets_use_target_net(self):
        agent = self.make(sync=1000)
        agent.target = nn.init_weights(agent.target.widths, 99)
        s, s2 = np.array([0.1, 0.2, 0.3]), np.array([0.4, 0.1, 0.0])
        expected = agent.online.copy()
        target = 1.0 + 0.5 * nn.forward(agent.target, s2).max()
        nn.td_batch_step(expected, s[None], [target], [2], 0.05)
        dqn_train_step(agent, [Transition(s, 2, 1.0, s2)])
        for p, q in zip(agent.online.parameters(), expected.parameters()):
            np.testing.assert_allclose(p, q, rtol=1e-12)

    def test_target_sync(self):
        agent = self.make(sync=3)
        t = Transition(np.ones(3), 0, 1.0, np.zeros(3))
        start = agent.target.copy()
        for _ in range(2):
            dqn_train_step(agent, [t])
        np.testing.assert_array_equal(agent.target.weights[0], start.weights[0])
        dqn_train_step(agent, [t])
        np.testing.assert_array_equal(agent.target.weights[0], agent.online.weights[0])
        assert agent.train_steps == 3

    def test_fixed_point_learning(self):
        agent = self.make(sync=10)
        s = np.array([0.5, 0.5, 0.5])
        for _ in range(3000):
            dqn_train_step(agent, [Transition(s, 1, 1.0, s)])
        # Q(s,1) -> 1 / (1 - 0.5)
        assert agent.q_values(s)[1] == pytest.approx(2.0, abs=0.05)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            dqn_train_step(self.make(), [])


LAYOUT = CellLayout()
PARAMS = RewardParams()


@pytest.fixture(scope="module")
def envs():
    series = synth_traffic(0, 4, 6, base=6000, amplitude=4000, noise_std=100,
                           overload_fraction=0.5, scale_range=(0.2, 2.0), overload_peak_rate=3.0)
    train, _ = train_test_split(series, 0.8)
    return (DecisionWindows(train, LAYOUT, "small_first", PARAMS),
            DecisionWindows(series, LAYOUT, "small_first", PARAMS, begin=train.n_slots))


def small_dqn(cls, **kw):
    return cls(hidden=(16, 16), epochs=2, seed=0, **kw)


class TestPolicies:
    def test_fixed_policies(self, envs):
        _, test = envs
        assert np.all(MacroPolicy().fit(test).predict(test) == 0)
        assert np.all(StaticPolicy().fit(test).predict(test) == 10)
        assert macro_policy(None) == 0 and static_policy(None) == 10

    @pytest.mark.parametrize("scheme", sorted(SCHEMES))
    def test_fit_predict_shapes(self, scheme, envs):
        train, test = envs
        kwargs = {} if scheme in ("macro", "static", "ql") else {"hidden": (16,), "epochs": 1}
        actions = SCHEMES[scheme](**kwargs).fit(train).predict(test)
        assert actions.shape == (test.n_macrocells, test.n_decisions)
        assert actions.min() >= 0 and actions.max() <= 10

    def test_deterministic_given_seed(self, envs):
        train, test = envs
        a = small_dqn(DqnPolicy).fit(train)
        b = small_dqn(DqnPolicy).fit(train)
        assert a.training_log_ == b.training_log_
        np.testing.assert_array_equal(a.predict(test), b.predict(test))

    def test_training_log(self, envs):
        train, _ = envs
        log = QLearningPolicy(epochs=3).fit(train).training_log_
        assert [e["epoch"] for e in log] == [0, 1, 2]
        assert all(e["mean_loss"] is None for e in log)

    def test_fit_does_not_mutate_params(self, envs):
        train, _ = envs
        forecaster = PersistenceForecaster()
        policy = small_dqn(DqnForecastPolicy, forecaster=forecaster).fit(train)
        assert policy.forecaster is forecaster
        assert not hasattr(forecaster, "n_macrocells_")

    def test_too_short(self):
        env = DecisionWindows(DemandSeries(np.ones((1, 12))), LAYOUT, "small_first", PARAMS)
        with pytest.raises(ConfigError):
            QLearningPolicy().fit(env)

    def test_dqn_improves_on_constant_demand(self):
        env = DecisionWindows(DemandSeries(np.full((3, 6 * 144), 20000.0)), LAYOUT, "small_first", PARAMS)
        log = DqnPolicy(hidden=(32, 32), epochs=5, seed=0).fit(env).training_log_
        greedy_rewards = [e["greedy_reward"] for e in log]
        assert all(b >= a - 1e-9 for a, b in zip(greedy_rewards, greedy_rewards[1:]))
        assert greedy_rewards[-1] == pytest.approx(env.table.reward.max(axis=-1).mean())


@pytest.mark.parametrize("scheme", sorted(SCHEMES))
def test_checkpoint_roundtrip(scheme, envs, tmp_path):
    train, test = envs
    kwargs = {} if scheme in ("macro", "static", "ql") else {"hidden": (16,), "epochs": 1}
    policy = SCHEMES[scheme](**kwargs).fit(train)
    save_checkpoint(policy, tmp_path)
    again, manifest = load_checkpoint(tmp_path)
    assert manifest["scheme"] == scheme
    assert type(again) is type(policy)
    np.testing.assert_array_equal(again.predict(test), policy.predict(test))


def test_checkpoint_with_fitted_forecaster(envs, tmp_path):
    train, test = envs
    policy = DqnForecastPolicy(forecaster=PersistenceForecaster(), hidden=(8,), epochs=1).fit(train)
    save_checkpoint(policy, tmp_path)
    again, _ = load_checkpoint(tmp_path)
    assert isinstance(again.forecaster_, PersistenceForecaster)
    np.testing.assert_array_equal(again.predict(test), policy.predict(test))


def test_bad_checkpoint(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)
    (tmp_path / "manifest.json").write_text('{"version": 99, "scheme": "dqn"}')
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)
