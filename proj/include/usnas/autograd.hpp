#pragma once

#include <functional>
#include <vector>

#include "usnas/tensor.hpp"

namespace usnas::nn {

// Running statistics of one batchnorm site. Not trainable; excluded from
// parameter counts.
struct BnStats {
  Tensor mean;  // [C]
  Tensor var;   // [C]

  explicit BnStats(long channels)
      : mean(std::vector<long>{channels}), var(std::vector<long>{channels}) {
    var.fill(1.0);
  }
};

enum class BnMode {
  kTrain,       // batch statistics; running stats updated in place
  kBatchStats,  // batch statistics; no state mutated (candidate evaluation)
  kRunning,     // stored running statistics (final-model inference)
};

// Define-by-run tape. One Graph instance records one forward pass; backward()
// sweeps it in reverse creation order and accumulates into Parameter::grad.
// Graphs are cheap to build and thrown away per batch, which is what lets
// sampled subnetworks route through shared Parameter containers.
class Graph {
 public:
  using Ref = int;
  static constexpr Ref kNone = -1;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Ref constant(Tensor v);
  Ref param(Parameter& p);

  const Tensor& value(Ref r) const { return entries_[static_cast<size_t>(r)].value; }
  const Tensor& grad(Ref r) const { return entries_[static_cast<size_t>(r)].grad; }

  // --- elementwise and dense algebra ---
  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref mul(Ref a, Ref b);
  Ref scale(Ref a, double c);
  Ref relu(Ref a);
  Ref tanh_op(Ref a);
  Ref sigmoid(Ref a);
  Ref exp_op(Ref a);
  Ref matmul(Ref a, Ref b);                       // [n,m] x [m,p]
  Ref block(Ref a, long r0, long rows, long c0, long cols);  // rank-2 subview
  Ref sum(Ref a);                                 // full reduction -> scalar
  Ref pick(Ref a, long flat_index);               // one element -> scalar

  // --- CNN ops, NCHW ---
  Ref conv2d(Ref x, Ref w, Ref bias, int stride, int pad);
  Ref depthwise_conv2d(Ref x, Ref w, Ref bias, int stride, int pad);
  Ref batchnorm2d(Ref x, Ref gamma, Ref beta, BnStats* stats, BnMode mode,
                  double momentum = 0.1, double eps = 1e-5);
  Ref avg_pool2d(Ref x, int kernel, int stride, int pad);
  Ref max_pool2d(Ref x, int kernel, int stride, int pad);
  Ref adaptive_avg_pool2d(Ref x, int out_hw);
  Ref global_avg_pool(Ref x);                     // [N,C,H,W] -> [N,C]
  Ref concat_channels(const std::vector<Ref>& xs);
  Ref flatten(Ref x);                             // [N,...] -> [N,F]
  Ref linear(Ref x, Ref w, Ref bias);             // x [N,F], w [out,F]
  Ref softmax_cross_entropy(Ref logits, std::vector<int> labels);  // mean

  // Log-softmax over the first `valid` columns of a [1,K] row; output [1,valid].
  Ref log_softmax_prefix(Ref a, long valid);

  void backward(Ref loss);

  // Parameters bound into this graph, unique, in first-bind order. After
  // backward() these are exactly the containers holding fresh gradients.
  std::vector<Parameter*> bound_parameters() const;

  size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    std::function<void(Graph&)> backprop;
    Parameter* bound = nullptr;
    bool needs_grad = false;
    bool grad_ready = false;
  };

  Ref push(Tensor value, bool needs_grad);
  Tensor& grad_buf(Ref r);
  bool needs(Ref r) const {
    return r != kNone && entries_[static_cast<size_t>(r)].needs_grad;
  }

  std::vector<Entry> entries_;
};

}  // namespace usnas::nn
