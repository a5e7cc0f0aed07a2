#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "usnas/autograd.hpp"
#include "usnas/common.hpp"
#include "usnas/genotype.hpp"
#include "usnas/network.hpp"

namespace usnas {

// --- weight containers -----------------------------------------------------

struct BnBlock {
  std::unique_ptr<nn::Parameter> gamma, beta;  // absent when affine is off
  nn::BnStats stats;

  BnBlock(const std::string& prefix, long channels, bool affine);
  nn::Graph::Ref forward(nn::Graph& g, nn::Graph::Ref x, nn::BnMode mode);
  void collect(std::vector<nn::Parameter*>& out);
};

struct ConvBlock {
  nn::Parameter w;
  std::unique_ptr<nn::Parameter> bias;

  ConvBlock(const std::string& prefix, std::vector<long> w_shape, bool with_bias,
            long fan_in, Rng& rng);
  void collect(std::vector<nn::Parameter*>& out);
};

// ReLU -> depthwise k x k (stride s) -> pointwise 1x1 -> BN
struct SepConvWeights {
  ConvBlock dw, pw;
  BnBlock bn;
  int kernel, stride;

  SepConvWeights(const std::string& prefix, int kernel, int stride, long c_in,
                 long c_out, const CountingConfig& cfg, Rng& rng);
  nn::Graph::Ref forward(nn::Graph& g, nn::Graph::Ref x, nn::BnMode mode);
  void collect(std::vector<nn::Parameter*>& out);
};

// ReLU -> 1x1 conv (stride s) -> BN; inserted where identity/pool ops must
// change width or where identity must drop resolution.
struct ProjWeights {
  ConvBlock pw;
  BnBlock bn;
  int stride;

  ProjWeights(const std::string& prefix, int stride, long c_in, long c_out,
              const CountingConfig& cfg, Rng& rng);
  nn::Graph::Ref forward(nn::Graph& g, nn::Graph::Ref x, nn::BnMode mode);
  void collect(std::vector<nn::Parameter*>& out);
};

// Weights for one cell position. In full mode every edge holds containers
// for all five candidate ops, so any genotype routes through it; in sampled
// mode only the sites one fixed genotype uses exist.
class CellModule {
 public:
  CellModule(const std::string& prefix, const CellShape& shape, int node_count,
             const CellGenotype* sampled_only, const CountingConfig& cfg,
             Rng& rng);

  nn::Graph::Ref forward(nn::Graph& g, const CellGenotype& geno,
                         nn::Graph::Ref s_prev_prev, nn::Graph::Ref s_prev,
                         nn::BnMode mode);
  void collect(std::vector<nn::Parameter*>& out);
  void collect_state(std::vector<std::pair<std::string, nn::Tensor*>>& out);

  const CellShape& shape() const { return shape_; }

 private:
  struct EdgeSites {
    std::unique_ptr<SepConvWeights> sep3, sep5;
    std::unique_ptr<ProjWeights> id_proj;    // identity width/stride fix
    std::unique_ptr<ProjWeights> pool_proj;  // pooling width fix
  };

  int edge_channels(int input_index) const;
  int edge_stride(int input_index) const;
  nn::Graph::Ref apply_op(nn::Graph& g, int node, int branch,
                          int input_index, OpKind op, nn::Graph::Ref x,
                          nn::BnMode mode);

  std::string prefix_;
  CellShape shape_;
  int node_count_;
  CountingConfig cfg_;
  std::unique_ptr<ProjWeights> pre0_;
  std::vector<std::vector<EdgeSites>> sites_;          // [node][input]
  std::vector<std::unique_ptr<ConvBlock>> out_blocks_;  // per node; 1x1 to c_out
  std::unique_ptr<nn::Parameter> out_bias_;
  std::unique_ptr<BnBlock> out_bn_;
};

// --- shared-weight supergraph ----------------------------------------------

// One parameter store covering every candidate op at every cell position of
// a stack plan. Sampled architectures are activated as views that route the
// forward pass through the relevant containers; training a view updates the
// shared weights in place.
class SharedSupergraph {
 public:
  SharedSupergraph(const StackPlan& plan, int node_count, int input_channels,
                   const CountingConfig& cfg, uint64_t seed);

  int node_count() const { return node_count_; }
  const StackPlan& plan() const { return plan_; }

  // Stable enumeration of every trainable container.
  std::vector<nn::Parameter*> parameters();
  size_t container_count() { return parameters().size(); }

  nn::Graph::Ref forward(nn::Graph& g, const ArchPair& arch,
                         nn::Graph::Ref input, nn::BnMode mode);

 private:
  StackPlan plan_;
  int node_count_;
  int input_channels_;
  CountingConfig cfg_;
  std::unique_ptr<ConvBlock> stem_;
  std::unique_ptr<BnBlock> stem_bn_;
  std::vector<std::unique_ptr<CellModule>> positions_;
  std::unique_ptr<nn::Parameter> head_w_, head_b_;
};

// Forward/backward-capable view over the shared weights for one sampled
// architecture. Holds no weights of its own.
class ChildView {
 public:
  ChildView(SharedSupergraph& super, ArchPair arch);

  nn::Graph::Ref forward(nn::Graph& g, nn::Graph::Ref input,
                         nn::BnMode mode) const;
  const ArchPair& arch() const { return arch_; }

 private:
  SharedSupergraph* super_;
  ArchPair arch_;
};

// Validates the node count against the supergraph and returns a view.
ChildView activate_subnetwork(SharedSupergraph& super, const ArchPair& arch);

// --- from-scratch networks ---------------------------------------------------

// Freshly initialized weights for one NetworkSpec (cell stack or plain
// layers). enumerated_param_count() is the brute-force oracle the analytic
// counter is checked against.
class FixedNetwork {
 public:
  FixedNetwork(const NetworkSpec& spec, const CountingConfig& cfg,
               uint64_t seed);

  nn::Graph::Ref forward(nn::Graph& g, nn::Graph::Ref input, nn::BnMode mode);
  std::vector<nn::Parameter*> parameters();
  int64_t enumerated_param_count();

  const NetworkSpec& spec() const { return spec_; }
  const CountingConfig& counting() const { return cfg_; }

  // Weights plus batchnorm running statistics, in stable order.
  std::vector<std::pair<std::string, nn::Tensor*>> named_state();
  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  NetworkSpec spec_;
  CountingConfig cfg_;
  // cell-stack form
  std::unique_ptr<ConvBlock> stem_;
  std::unique_ptr<BnBlock> stem_bn_;
  std::vector<std::unique_ptr<CellModule>> cells_;
  std::unique_ptr<nn::Parameter> head_w_, head_b_;
  // plain form
  struct PlainWeights {
    std::unique_ptr<ConvBlock> conv;      // conv or linear weights
  };
  std::vector<PlainWeights> plain_;
};

}  // namespace usnas
