#include <cmath>
#include <numeric>

#include "doctest.h"
#include "usnas/common.hpp"
#include "usnas/controller.hpp"

using namespace usnas;

TEST_CASE("trace layout and bounds") {
  ControllerPolicy policy(5, ControllerHyperparams{}, 42);
  Rng rng(1);
  auto [arch, trace] = policy.sample(rng);
  CHECK(trace.decisions.size() == 40);
  CHECK(trace.log_probs.size() == 40);
  CHECK(trace.entropies.size() == 40);
  CHECK(validate(arch.normal, 5).ok());
  CHECK(validate(arch.reduction, 5).ok());
  for (size_t i = 0; i < trace.decisions.size(); ++i) {
    CHECK(trace.log_probs[i] <= 0.0);
    const int node = static_cast<int>(i / 4) % 5;
    const double cap =
        (i % 2 == 1) ? std::log(5.0) : std::log(static_cast<double>(node + 2));
    CHECK(trace.entropies[i] >= 0.0);
    CHECK(trace.entropies[i] <= cap + 1e-12);
  }
  // decisions decode to the returned pair
  CHECK(policy.decisions_to_arch(trace.decisions) == arch);
}

TEST_CASE("fresh policy samples ops uniformly") {
  ControllerPolicy policy(5, ControllerHyperparams{}, 7);
  Rng rng(2);
  std::array<long, kNumOps> histogram{};
  long total = 0;
  for (int s = 0; s < 500; ++s) {  // 500 samples x 20 op decisions
    auto [arch, trace] = policy.sample(rng);
    for (size_t i = 1; i < trace.decisions.size(); i += 2) {
      ++histogram[static_cast<size_t>(trace.decisions[i])];
      ++total;
    }
  }
  CHECK(total == 10000);
  for (long count : histogram) {
    const double p = static_cast<double>(count) / static_cast<double>(total);
    CHECK(p == doctest::Approx(0.2).epsilon(0.12));  // sampling error margin
  }
  // and the log-prob of any op decision is exactly ln(1/5)
  auto [arch, trace] = policy.sample(rng);
  for (size_t i = 1; i < trace.decisions.size(); i += 2)
    CHECK(trace.log_probs[i] == doctest::Approx(std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("same seed gives the same sample") {
  ControllerPolicy policy(4, ControllerHyperparams{}, 9);
  Rng rng1(77), rng2(77);
  auto [arch1, trace1] = policy.sample(rng1);
  auto [arch2, trace2] = policy.sample(rng2);
  CHECK(arch1 == arch2);
  CHECK(trace1.decisions == trace2.decisions);
  CHECK(trace1.log_probs == trace2.log_probs);
}

TEST_CASE("log_prob re-scores a sampled trace consistently") {
  ControllerPolicy policy(3, ControllerHyperparams{}, 11);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto [arch, trace] = policy.sample(rng);
    double total = 0;
    for (double lp : trace.log_probs) total += lp;
    CHECK(policy.log_prob(trace.decisions) ==
          doctest::Approx(total).epsilon(1e-6));
  }
  CHECK_THROWS_AS(policy.log_prob(std::vector<int>(7, 0)), ValidationError);
}

TEST_CASE("per-step distributions are normalized") {
  // entropy of a categorical equals ln k iff normalized and uniform; for the
  // general check, exponentiate log-probs along a trace and sum
  ControllerHyperparams hp;
  hp.tanh_constant = 0;  // unshaped logits
  ControllerPolicy policy(4, hp, 13);
  Rng rng(3);
  // warp the heads away from zero so the distributions are non-uniform
  for (nn::Parameter* p : policy.parameters())
    for (long i = 0; i < p->numel(); ++i) p->value[i] += 0.01 * ((i % 7) - 3);
  auto [arch, trace] = policy.sample(rng);
  // every decision's probability lies in (0,1]
  for (double lp : trace.log_probs) {
    CHECK(lp <= 0.0);
    CHECK(std::exp(lp) > 0.0);
  }
  // normalization is already asserted inside log_softmax_prefix (unit-tested
  // in the autograd suite); here spot-check via mean_op_probability bounds
  const double p = policy.mean_op_probability(OpKind::kSepConv3, 8, rng);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
}

TEST_CASE("baseline fixed point on a constant reward stream") {
  BaselineState baseline;
  baseline.decay = 0.999;
  CHECK_FALSE(baseline.initialized);
  baseline.observe(1.0);
  CHECK(baseline.value == 1.0);
  baseline.observe(1.0);
  baseline.observe(1.0);
  CHECK(baseline.value == 1.0);
  baseline.observe(0.0);
  CHECK(baseline.value == doctest::Approx(0.999));
}

TEST_CASE("reward equal to baseline leaves parameters unchanged") {
  ControllerHyperparams hp;
  hp.entropy_weight = 0.0;
  ControllerPolicy policy(3, hp, 21);
  Rng rng(8);
  std::vector<SampleTrace> traces;
  std::vector<double> rewards;
  for (int i = 0; i < 4; ++i) {
    auto [arch, trace] = policy.sample(rng);
    traces.push_back(trace);
    rewards.push_back(0.6);
  }
  BaselineState baseline;
  baseline.value = 0.6;
  baseline.initialized = true;
  std::vector<nn::Tensor> before;
  for (nn::Parameter* p : policy.parameters()) before.push_back(p->value);
  reinforce_update(policy, traces, rewards, baseline);
  size_t k = 0;
  for (nn::Parameter* p : policy.parameters()) {
    for (long i = 0; i < p->numel(); ++i)
      CHECK(p->value[i] == before[k][i]);
    ++k;
  }
  // the baseline keeps tracking the stream
  CHECK(baseline.value == doctest::Approx(0.6));
}

TEST_CASE("positive advantage raises every sampled decision probability") {
  ControllerHyperparams hp;
  hp.entropy_weight = 0.0;
  hp.lr = 3.5e-4;
  ControllerPolicy policy(3, hp, 23);
  Rng rng(10);
  auto [arch, trace] = policy.sample(rng);

  const std::vector<double> before =
      policy.per_decision_log_probs(trace.decisions);
  BaselineState baseline;
  baseline.value = 0.0;
  baseline.initialized = true;
  reinforce_update(policy, {trace}, {1.0}, baseline);
  const std::vector<double> after =
      policy.per_decision_log_probs(trace.decisions);

  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) CHECK(after[i] > before[i]);
}

TEST_CASE("reinforce gradients match central finite differences") {
  // miniature policy: hidden 8, B=2
  ControllerHyperparams hp;
  hp.hidden = 8;
  ControllerPolicy policy(2, hp, 31);
  Rng rng(12);
  std::vector<SampleTrace> traces;
  std::vector<double> rewards = {0.8, 0.3, 0.55};
  for (size_t i = 0; i < rewards.size(); ++i)
    traces.push_back(policy.sample(rng).second);
  const double baseline = 0.4;

  for (nn::Parameter* p : policy.parameters()) p->zero_grad();
  reinforce_objective(policy, traces, rewards, baseline, true);

  const double h = 1e-6;
  double worst = 0;
  for (nn::Parameter* p : policy.parameters()) {
    for (long i = 0; i < p->numel(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = reinforce_objective(policy, traces, rewards, baseline,
                                            false);
      p->value[i] = keep - h;
      const double down = reinforce_objective(policy, traces, rewards,
                                              baseline, false);
      p->value[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double ad = p->grad[i];
      if (std::abs(fd - ad) < 1e-8) continue;
      const double rel = std::abs(fd - ad) / std::max(std::abs(fd),
                                                      std::abs(ad));
      worst = std::max(worst, rel);
    }
    p->zero_grad();
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("update validates input lengths") {
  ControllerPolicy policy(2, ControllerHyperparams{}, 1);
  Rng rng(1);
  auto [arch, trace] = policy.sample(rng);
  BaselineState baseline;
  std::vector<SampleTrace> traces = {trace};
  std::vector<double> rewards = {0.5, 0.7};
  CHECK_THROWS_AS(reinforce_update(policy, traces, rewards, baseline),
                  ValidationError);
  CHECK_THROWS_AS(reinforce_update(policy, {}, {}, baseline), ValidationError);
}
