#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "usnas/autograd.hpp"
#include "usnas/common.hpp"
#include "usnas/genotype.hpp"
#include "usnas/optim.hpp"

namespace usnas {

struct ControllerHyperparams {
  int hidden = 64;               // LSTM width; embeddings use the same size
  double lr = 3.5e-3;            // adaptive-moment step size
  double entropy_weight = 1e-4;
  double tanh_constant = 2.5;    // logit squashing amplitude; <= 0 disables
  double temperature = 5.0;      // logit division; <= 0 disables
  double baseline_decay = 0.999;
};

// Per-sample bookkeeping for the policy-gradient update. decisions has
// length 8*B (4 per node, normal cell first); log_probs and entropies are
// per-decision values under the sampling distribution.
struct SampleTrace {
  std::vector<int> decisions;
  std::vector<double> log_probs;
  std::vector<double> entropies;
};

// Exponential-moving-average reward baseline. The first observed reward
// initializes the value outright.
struct BaselineState {
  double value = 0.0;
  double decay = 0.999;
  bool initialized = false;

  void observe(double reward) {
    if (!initialized) {
      value = reward;
      initialized = true;
    } else {
      value = decay * value + (1.0 - decay) * reward;
    }
  }
};

// Recurrent policy over cell decision sequences. One LSTM emits both cells
// (normal then reduction); input-index and op decisions each have their own
// embedding table and output head, with input logits masked to the i+2
// choices legal at node i. Output heads start at zero, so a fresh policy
// samples uniformly.
class ControllerPolicy {
 public:
  ControllerPolicy(int node_count, ControllerHyperparams hp, uint64_t seed);

  int node_count() const { return node_count_; }
  ControllerHyperparams& hparams() { return hp_; }
  const ControllerHyperparams& hparams() const { return hp_; }

  // Draws one architecture. Deterministic given the rng state; the policy
  // itself is read-only here.
  std::pair<ArchPair, SampleTrace> sample(Rng& rng) const;

  // Total log-probability of a full decision sequence (length 8*B).
  double log_prob(const std::vector<int>& decisions) const;

  // Per-decision log-probabilities of a teacher-forced sequence.
  std::vector<double> per_decision_log_probs(
      const std::vector<int>& decisions) const;

  // Mean probability assigned to `target` across all op decisions, averaged
  // over sampled trajectories.
  double mean_op_probability(OpKind target, int num_samples, Rng& rng) const;

  std::vector<nn::Parameter*> parameters() const;

  ArchPair decisions_to_arch(const std::vector<int>& decisions) const;

  void save(const std::filesystem::path& blob,
            const std::filesystem::path& manifest,
            const BaselineState& baseline) const;

  friend double reinforce_objective(ControllerPolicy& policy,
                                    const std::vector<SampleTrace>& traces,
                                    const std::vector<double>& rewards,
                                    double baseline_value, bool with_grads);
  friend void reinforce_update(ControllerPolicy& policy,
                               const std::vector<SampleTrace>& traces,
                               const std::vector<double>& rewards,
                               BaselineState& baseline);

 private:
  struct StepOutcome {
    int decision = 0;
    nn::Graph::Ref log_prob_ref = nn::Graph::kNone;
    nn::Graph::Ref entropy_ref = nn::Graph::kNone;
    double target_prob = 0.0;
  };

  struct RunResult {
    std::vector<StepOutcome> steps;
    nn::Graph::Ref sum_log_prob = nn::Graph::kNone;
    nn::Graph::Ref sum_entropy = nn::Graph::kNone;
  };

  // Teacher-forced when `teacher` is set, sampling otherwise. `probe` asks
  // for the per-step probability of one op to be recorded.
  RunResult run(nn::Graph& g, const std::vector<int>* teacher, Rng* rng,
                const OpKind* probe) const;

  int node_count_;
  ControllerHyperparams hp_;
  std::unique_ptr<nn::Parameter> op_emb_, input_emb_, start_emb_;
  std::unique_ptr<nn::Parameter> w_ih_, w_hh_, b_gates_;
  std::unique_ptr<nn::Parameter> w_op_, b_op_, w_input_, b_input_;
  std::unique_ptr<nn::Adam> opt_;
};

// Value of the estimator sum_j (r_j - baseline) * logpi(a_j) +
// entropy_weight * sum_j H_j; accumulates analytic gradients into the
// policy's parameters when with_grads is set (without stepping).
double reinforce_objective(ControllerPolicy& policy,
                           const std::vector<SampleTrace>& traces,
                           const std::vector<double>& rewards,
                           double baseline_value, bool with_grads);

// One ascent step on the estimator above (pre-update baseline), followed by
// folding the rewards into the baseline in order.
void reinforce_update(ControllerPolicy& policy,
                      const std::vector<SampleTrace>& traces,
                      const std::vector<double>& rewards,
                      BaselineState& baseline);

}  // namespace usnas
