#include "usnas/controller.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace usnas {

namespace {

nn::Tensor uniform_init(std::vector<long> shape, double bound, Rng& rng) {
  nn::Tensor t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ControllerPolicy::ControllerPolicy(int node_count, ControllerHyperparams hp,
                                   uint64_t seed)
    : node_count_(node_count), hp_(hp) {
  if (node_count < 1)
    throw ValidationError("controller: node count must be >= 1");
  if (hp.hidden < 1) throw ValidationError("controller: hidden must be >= 1");
  Rng rng(seed);
  const long h = hp.hidden;
  const long inputs = node_count + 1;  // node B-1 may reference index B
  op_emb_ = std::make_unique<nn::Parameter>(
      "op_emb", uniform_init({kNumOps, h}, 0.1, rng));
  input_emb_ = std::make_unique<nn::Parameter>(
      "input_emb", uniform_init({inputs, h}, 0.1, rng));
  start_emb_ = std::make_unique<nn::Parameter>(
      "start_emb", uniform_init({1, h}, 0.1, rng));
  w_ih_ = std::make_unique<nn::Parameter>(
      "lstm.w_ih", uniform_init({h, 4 * h}, 0.1, rng));
  w_hh_ = std::make_unique<nn::Parameter>(
      "lstm.w_hh", uniform_init({h, 4 * h}, 0.1, rng));
  b_gates_ = std::make_unique<nn::Parameter>(
      "lstm.b", nn::Tensor(std::vector<long>{1, 4 * h}));
  // Zeroed heads make every categorical uniform at initialization.
  w_op_ = std::make_unique<nn::Parameter>(
      "head_op.w", nn::Tensor(std::vector<long>{h, kNumOps}));
  b_op_ = std::make_unique<nn::Parameter>(
      "head_op.b", nn::Tensor(std::vector<long>{1, kNumOps}));
  w_input_ = std::make_unique<nn::Parameter>(
      "head_input.w", nn::Tensor(std::vector<long>{h, inputs}));
  b_input_ = std::make_unique<nn::Parameter>(
      "head_input.b", nn::Tensor(std::vector<long>{1, inputs}));
  opt_ = std::make_unique<nn::Adam>();
}

std::vector<nn::Parameter*> ControllerPolicy::parameters() const {
  return {op_emb_.get(),  input_emb_.get(), start_emb_.get(),
          w_ih_.get(),    w_hh_.get(),      b_gates_.get(),
          w_op_.get(),    b_op_.get(),      w_input_.get(),
          b_input_.get()};
}

ControllerPolicy::RunResult ControllerPolicy::run(nn::Graph& g,
                                                  const std::vector<int>* teacher,
                                                  Rng* rng,
                                                  const OpKind* probe) const {
  const long h = hp_.hidden;
  const int b = node_count_;
  const int total_steps = 8 * b;
  if (teacher && static_cast<int>(teacher->size()) != total_steps)
    throw ValidationError("controller: decision sequence length " +
                          std::to_string(teacher->size()) + " != 8*B = " +
                          std::to_string(total_steps));

  nn::Graph::Ref op_emb = g.param(*op_emb_);
  nn::Graph::Ref input_emb = g.param(*input_emb_);
  nn::Graph::Ref w_ih = g.param(*w_ih_);
  nn::Graph::Ref w_hh = g.param(*w_hh_);
  nn::Graph::Ref b_gates = g.param(*b_gates_);
  nn::Graph::Ref w_op = g.param(*w_op_);
  nn::Graph::Ref b_op = g.param(*b_op_);
  nn::Graph::Ref w_input = g.param(*w_input_);
  nn::Graph::Ref b_input = g.param(*b_input_);

  nn::Graph::Ref x = g.param(*start_emb_);
  nn::Graph::Ref hidden = g.constant(nn::Tensor(std::vector<long>{1, h}));
  nn::Graph::Ref cell = g.constant(nn::Tensor(std::vector<long>{1, h}));

  RunResult result;
  result.steps.reserve(static_cast<size_t>(total_steps));

  int step = 0;
  for (int cell_index = 0; cell_index < 2; ++cell_index) {
    for (int node = 0; node < b; ++node) {
      for (int slot = 0; slot < 4; ++slot, ++step) {
        // LSTM step
        nn::Graph::Ref gates =
            g.add(g.add(g.matmul(x, w_ih), g.matmul(hidden, w_hh)), b_gates);
        nn::Graph::Ref gi = g.sigmoid(g.block(gates, 0, 1, 0, h));
        nn::Graph::Ref gf = g.sigmoid(g.block(gates, 0, 1, h, h));
        nn::Graph::Ref gg = g.tanh_op(g.block(gates, 0, 1, 2 * h, h));
        nn::Graph::Ref go = g.sigmoid(g.block(gates, 0, 1, 3 * h, h));
        cell = g.add(g.mul(gf, cell), g.mul(gi, gg));
        hidden = g.mul(go, g.tanh_op(cell));

        const bool is_op = (slot % 2) == 1;
        const long valid = is_op ? kNumOps : node + 2;
        nn::Graph::Ref logits =
            is_op ? g.add(g.matmul(hidden, w_op), b_op)
                  : g.add(g.matmul(hidden, w_input), b_input);
        if (hp_.temperature > 0)
          logits = g.scale(logits, 1.0 / hp_.temperature);
        if (hp_.tanh_constant > 0)
          logits = g.scale(g.tanh_op(logits), hp_.tanh_constant);
        nn::Graph::Ref log_probs = g.log_softmax_prefix(logits, valid);

        StepOutcome outcome;
        if (teacher) {
          outcome.decision = (*teacher)[static_cast<size_t>(step)];
          if (outcome.decision < 0 || outcome.decision >= valid)
            throw ValidationError(
                "controller: decision " + std::to_string(outcome.decision) +
                " at step " + std::to_string(step) + " outside [0," +
                std::to_string(valid) + ")");
        } else {
          std::vector<double> probs(static_cast<size_t>(valid));
          for (long k = 0; k < valid; ++k)
            probs[static_cast<size_t>(k)] = std::exp(g.value(log_probs)[k]);
          outcome.decision = static_cast<int>(rng->categorical(probs));
        }
        outcome.log_prob_ref = g.pick(log_probs, outcome.decision);
        // H = -sum p*log p over the valid choices
        nn::Graph::Ref probs_ref = g.exp_op(log_probs);
        outcome.entropy_ref = g.scale(g.sum(g.mul(probs_ref, log_probs)), -1.0);
        if (probe && is_op)
          outcome.target_prob =
              std::exp(g.value(log_probs)[static_cast<int>(*probe)]);

        result.sum_log_prob =
            step == 0 ? outcome.log_prob_ref
                      : g.add(result.sum_log_prob, outcome.log_prob_ref);
        result.sum_entropy =
            step == 0 ? outcome.entropy_ref
                      : g.add(result.sum_entropy, outcome.entropy_ref);

        // Next input embedding follows the decision just taken.
        x = is_op ? g.block(op_emb, outcome.decision, 1, 0, h)
                  : g.block(input_emb, outcome.decision, 1, 0, h);
        result.steps.push_back(outcome);
      }
    }
  }
  return result;
}

ArchPair ControllerPolicy::decisions_to_arch(
    const std::vector<int>& decisions) const {
  const int b = node_count_;
  if (static_cast<int>(decisions.size()) != 8 * b)
    throw ValidationError("controller: decision sequence length mismatch");
  const std::vector<int> first(decisions.begin(), decisions.begin() + 4 * b);
  const std::vector<int> second(decisions.begin() + 4 * b, decisions.end());
  return ArchPair{decode(first, b), decode(second, b)};
}

std::pair<ArchPair, SampleTrace> ControllerPolicy::sample(Rng& rng) const {
  nn::Graph g;
  RunResult run_result = run(g, nullptr, &rng, nullptr);
  SampleTrace trace;
  for (const StepOutcome& s : run_result.steps) {
    trace.decisions.push_back(s.decision);
    trace.log_probs.push_back(g.value(s.log_prob_ref)[0]);
    trace.entropies.push_back(g.value(s.entropy_ref)[0]);
  }
  return {decisions_to_arch(trace.decisions), std::move(trace)};
}

double ControllerPolicy::log_prob(const std::vector<int>& decisions) const {
  nn::Graph g;
  RunResult run_result = run(g, &decisions, nullptr, nullptr);
  return g.value(run_result.sum_log_prob)[0];
}

std::vector<double> ControllerPolicy::per_decision_log_probs(
    const std::vector<int>& decisions) const {
  nn::Graph g;
  RunResult run_result = run(g, &decisions, nullptr, nullptr);
  std::vector<double> out;
  out.reserve(run_result.steps.size());
  for (const StepOutcome& s : run_result.steps)
    out.push_back(g.value(s.log_prob_ref)[0]);
  return out;
}

double ControllerPolicy::mean_op_probability(OpKind target, int num_samples,
                                             Rng& rng) const {
  double acc = 0;
  long count = 0;
  for (int s = 0; s < num_samples; ++s) {
    nn::Graph g;
    RunResult run_result = run(g, nullptr, &rng, &target);
    for (size_t i = 0; i < run_result.steps.size(); ++i) {
      if (i % 2 == 1) {  // op slots
        acc += run_result.steps[i].target_prob;
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

double reinforce_objective(ControllerPolicy& policy,
                           const std::vector<SampleTrace>& traces,
                           const std::vector<double>& rewards,
                           double baseline_value, bool with_grads) {
  if (traces.size() != rewards.size() || traces.empty())
    throw ValidationError("reinforce: traces and rewards must be equal-length "
                          "and non-empty");
  nn::Graph g;
  nn::Graph::Ref objective = nn::Graph::kNone;
  for (size_t j = 0; j < traces.size(); ++j) {
    ControllerPolicy::RunResult run_result =
        policy.run(g, &traces[j].decisions, nullptr, nullptr);
    nn::Graph::Ref term =
        g.scale(run_result.sum_log_prob, rewards[j] - baseline_value);
    if (policy.hp_.entropy_weight != 0)
      term = g.add(term, g.scale(run_result.sum_entropy,
                                 policy.hp_.entropy_weight));
    objective = j == 0 ? term : g.add(objective, term);
  }
  const double value = g.value(objective)[0];
  if (with_grads) {
    nn::Graph::Ref loss = g.scale(objective, -1.0);  // ascend the estimator
    g.backward(loss);
  }
  return value;
}

void reinforce_update(ControllerPolicy& policy,
                      const std::vector<SampleTrace>& traces,
                      const std::vector<double>& rewards,
                      BaselineState& baseline) {
  reinforce_objective(policy, traces, rewards, baseline.value, true);
  policy.opt_->step(policy.parameters(), policy.hp_.lr);
  for (double r : rewards) baseline.observe(r);
}

void ControllerPolicy::save(const std::filesystem::path& blob,
                            const std::filesystem::path& manifest,
                            const BaselineState& baseline) const {
  std::ofstream f(blob, std::ios::binary);
  if (!f) throw IoError("cannot write controller checkpoint " + blob.string());
  const char magic[9] = "USNASCTL";
  f.write(magic, 8);
  for (nn::Parameter* p : parameters()) {
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->numel() * sizeof(double)));
  }
  nlohmann::json doc;
  doc["B"] = node_count_;
  doc["hidden"] = hp_.hidden;
  doc["lr"] = hp_.lr;
  doc["entropy_weight"] = hp_.entropy_weight;
  doc["tanh_constant"] = hp_.tanh_constant;
  doc["temperature"] = hp_.temperature;
  doc["baseline_decay"] = hp_.baseline_decay;
  doc["step_count"] = opt_->step_count();
  doc["baseline_value"] = baseline.value;
  doc["baseline_initialized"] = baseline.initialized;
  std::ofstream m(manifest);
  if (!m)
    throw IoError("cannot write controller manifest " + manifest.string());
  m << doc.dump(2) << "\n";
}

}  // namespace usnas
