#include "usnas/supergraph.hpp"

#include <cstring>
#include <fstream>

namespace usnas {

namespace {

nn::Tensor he_normal(std::vector<long> shape, long fan_in, Rng& rng) {
  nn::Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
  return t;
}

nn::Tensor uniform_fan(std::vector<long> shape, long fan_in, Rng& rng) {
  nn::Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

// --- BnBlock -----------------------------------------------------------------

BnBlock::BnBlock(const std::string& prefix, long channels, bool affine)
    : stats(channels) {
  if (affine) {
    nn::Tensor g(std::vector<long>{channels});
    g.fill(1.0);
    gamma = std::make_unique<nn::Parameter>(prefix + ".gamma", std::move(g));
    beta = std::make_unique<nn::Parameter>(prefix + ".beta",
                                           nn::Tensor(std::vector<long>{channels}));
  }
}

nn::Graph::Ref BnBlock::forward(nn::Graph& g, nn::Graph::Ref x,
                                nn::BnMode mode) {
  nn::Graph::Ref gr, br;
  if (gamma) {
    gr = g.param(*gamma);
    br = g.param(*beta);
  } else {
    const long c = stats.mean.numel();
    nn::Tensor ones(std::vector<long>{c});
    ones.fill(1.0);
    gr = g.constant(std::move(ones));
    br = g.constant(nn::Tensor(std::vector<long>{c}));
  }
  return g.batchnorm2d(x, gr, br, &stats, mode);
}

void BnBlock::collect(std::vector<nn::Parameter*>& out) {
  if (gamma) {
    out.push_back(gamma.get());
    out.push_back(beta.get());
  }
}

// --- ConvBlock ---------------------------------------------------------------

ConvBlock::ConvBlock(const std::string& prefix, std::vector<long> w_shape,
                     bool with_bias, long fan_in, Rng& rng)
    : w(prefix + ".w", he_normal(w_shape, fan_in, rng)) {
  if (with_bias) {
    const long c_out = w_shape[0];
    bias = std::make_unique<nn::Parameter>(prefix + ".b",
                                           nn::Tensor(std::vector<long>{c_out}));
  }
}

void ConvBlock::collect(std::vector<nn::Parameter*>& out) {
  out.push_back(&w);
  if (bias) out.push_back(bias.get());
}

// --- SepConvWeights ----------------------------------------------------------

SepConvWeights::SepConvWeights(const std::string& prefix, int k, int s,
                               long c_in, long c_out,
                               const CountingConfig& cfg, Rng& rng)
    : dw(prefix + ".dw", {c_in, k, k}, cfg.include_conv_bias,
         static_cast<long>(k) * k, rng),
      pw(prefix + ".pw", {c_out, c_in, 1, 1}, cfg.include_conv_bias, c_in, rng),
      bn(prefix + ".bn", c_out, cfg.include_batchnorm_affine),
      kernel(k),
      stride(s) {}

nn::Graph::Ref SepConvWeights::forward(nn::Graph& g, nn::Graph::Ref x,
                                       nn::BnMode mode) {
  nn::Graph::Ref h = g.relu(x);
  h = g.depthwise_conv2d(h, g.param(dw.w),
                         dw.bias ? g.param(*dw.bias) : nn::Graph::kNone, stride,
                         kernel / 2);
  h = g.conv2d(h, g.param(pw.w),
               pw.bias ? g.param(*pw.bias) : nn::Graph::kNone, 1, 0);
  return bn.forward(g, h, mode);
}

void SepConvWeights::collect(std::vector<nn::Parameter*>& out) {
  dw.collect(out);
  pw.collect(out);
  bn.collect(out);
}

// --- ProjWeights --------------------------------------------------------------

ProjWeights::ProjWeights(const std::string& prefix, int s, long c_in,
                         long c_out, const CountingConfig& cfg, Rng& rng)
    : pw(prefix + ".pw", {c_out, c_in, 1, 1}, cfg.include_conv_bias, c_in, rng),
      bn(prefix + ".bn", c_out, cfg.include_batchnorm_affine),
      stride(s) {}

nn::Graph::Ref ProjWeights::forward(nn::Graph& g, nn::Graph::Ref x,
                                    nn::BnMode mode) {
  nn::Graph::Ref h = g.relu(x);
  h = g.conv2d(h, g.param(pw.w),
               pw.bias ? g.param(*pw.bias) : nn::Graph::kNone, stride, 0);
  return bn.forward(g, h, mode);
}

void ProjWeights::collect(std::vector<nn::Parameter*>& out) {
  pw.collect(out);
  bn.collect(out);
}

// --- CellModule ----------------------------------------------------------------

CellModule::CellModule(const std::string& prefix, const CellShape& shape,
                       int node_count, const CellGenotype* sampled_only,
                       const CountingConfig& cfg, Rng& rng)
    : prefix_(prefix), shape_(shape), node_count_(node_count), cfg_(cfg) {
  if (!cfg.include_projection_ops)
    throw ValidationError(
        "cell builder: include_projection_ops=false is a counting convention "
        "only; networks cannot be instantiated without projections");
  if (shape.reduce_prev_prev) {
    pre0_ = std::make_unique<ProjWeights>(prefix + ".pre0", 2,
                                          shape.c_prev_prev, shape.c_out, cfg,
                                          rng);
  }

  sites_.resize(static_cast<size_t>(node_count));
  for (int i = 0; i < node_count; ++i)
    sites_[static_cast<size_t>(i)].resize(static_cast<size_t>(2 * (i + 2)));

  auto make_site = [&](int node, int branch, int input, OpKind op) {
    EdgeSites& site =
        sites_[static_cast<size_t>(node)]
              [static_cast<size_t>(branch * (node + 2) + input)];
    const long c = edge_channels(input);
    const int stride = edge_stride(input);
    const std::string base = prefix_ + ".n" + std::to_string(node) +
                             (branch == 0 ? ".a" : ".b") + ".in" +
                             std::to_string(input);
    switch (op) {
      case OpKind::kSepConv3:
        if (!site.sep3)
          site.sep3 = std::make_unique<SepConvWeights>(base + ".sep3", 3,
                                                       stride, c, shape_.c_out,
                                                       cfg_, rng);
        break;
      case OpKind::kSepConv5:
        if (!site.sep5)
          site.sep5 = std::make_unique<SepConvWeights>(base + ".sep5", 5,
                                                       stride, c, shape_.c_out,
                                                       cfg_, rng);
        break;
      case OpKind::kIdentity:
        if ((c != shape_.c_out || stride != 1) && !site.id_proj)
          site.id_proj = std::make_unique<ProjWeights>(base + ".idproj", stride,
                                                       c, shape_.c_out, cfg_,
                                                       rng);
        break;
      case OpKind::kAvgPool3:
      case OpKind::kMaxPool3:
        if (c != shape_.c_out && !site.pool_proj)
          site.pool_proj = std::make_unique<ProjWeights>(base + ".poolproj", 1,
                                                         c, shape_.c_out, cfg_,
                                                         rng);
        break;
    }
  };

  if (sampled_only) {
    if (sampled_only->node_count() != node_count)
      throw ValidationError("cell builder: genotype node count mismatch");
    for (int i = 0; i < node_count; ++i) {
      const NodeSpec& node = sampled_only->nodes[static_cast<size_t>(i)];
      make_site(i, 0, node.in_a, node.op_a);
      make_site(i, 1, node.in_b, node.op_b);
    }
  } else {
    for (int i = 0; i < node_count; ++i)
      for (int branch = 0; branch < 2; ++branch)
        for (int input = 0; input < i + 2; ++input)
          for (int op = 0; op < kNumOps; ++op)
            make_site(i, branch, input, static_cast<OpKind>(op));
  }

  out_blocks_.resize(static_cast<size_t>(node_count));
  std::vector<int> out_nodes;
  if (sampled_only) {
    out_nodes = loose_ends(*sampled_only);
  } else {
    out_nodes.resize(static_cast<size_t>(node_count));
    for (int i = 0; i < node_count; ++i) out_nodes[static_cast<size_t>(i)] = i;
  }
  for (int i : out_nodes) {
    out_blocks_[static_cast<size_t>(i)] = std::make_unique<ConvBlock>(
        prefix_ + ".out" + std::to_string(i),
        std::vector<long>{shape_.c_out, shape_.c_out, 1, 1}, false,
        shape_.c_out, rng);
  }
  if (cfg.include_conv_bias)
    out_bias_ = std::make_unique<nn::Parameter>(
        prefix_ + ".out.b", nn::Tensor(std::vector<long>{shape_.c_out}));
  out_bn_ = std::make_unique<BnBlock>(prefix_ + ".out.bn", shape_.c_out,
                                      cfg.include_batchnorm_affine);
}

int CellModule::edge_channels(int input_index) const {
  if (input_index == 0)
    return shape_.reduce_prev_prev ? shape_.c_out : shape_.c_prev_prev;
  if (input_index == 1) return shape_.c_prev;
  return shape_.c_out;
}

int CellModule::edge_stride(int input_index) const {
  return (shape_.tag == CellTag::kReduction && input_index < 2) ? 2 : 1;
}

nn::Graph::Ref CellModule::apply_op(nn::Graph& g, int node, int branch,
                                    int input_index, OpKind op,
                                    nn::Graph::Ref x, nn::BnMode mode) {
  EdgeSites& site =
      sites_[static_cast<size_t>(node)]
            [static_cast<size_t>(branch * (node + 2) + input_index)];
  const int c = edge_channels(input_index);
  const int stride = edge_stride(input_index);
  auto require = [&](auto* ptr, const char* what) {
    if (!ptr)
      throw ValidationError(prefix_ + ": no " + std::string(what) +
                            " weights at node " + std::to_string(node) +
                            " input " + std::to_string(input_index) +
                            " (network was built for a different genotype)");
  };
  switch (op) {
    case OpKind::kSepConv3:
      require(site.sep3.get(), "sep3");
      return site.sep3->forward(g, x, mode);
    case OpKind::kSepConv5:
      require(site.sep5.get(), "sep5");
      return site.sep5->forward(g, x, mode);
    case OpKind::kIdentity:
      if (c != shape_.c_out || stride != 1) {
        require(site.id_proj.get(), "identity projection");
        return site.id_proj->forward(g, x, mode);
      }
      return x;
    case OpKind::kAvgPool3:
    case OpKind::kMaxPool3: {
      nn::Graph::Ref h = op == OpKind::kAvgPool3
                             ? g.avg_pool2d(x, 3, stride, 1)
                             : g.max_pool2d(x, 3, stride, 1);
      if (c != shape_.c_out) {
        require(site.pool_proj.get(), "pool projection");
        h = site.pool_proj->forward(g, h, mode);
      }
      return h;
    }
  }
  throw ValidationError("apply_op: unreachable");
}

nn::Graph::Ref CellModule::forward(nn::Graph& g, const CellGenotype& geno,
                                   nn::Graph::Ref s_prev_prev,
                                   nn::Graph::Ref s_prev, nn::BnMode mode) {
  if (geno.node_count() != node_count_)
    throw ValidationError(prefix_ + ": genotype node count mismatch");
  nn::Graph::Ref s0 = pre0_ ? pre0_->forward(g, s_prev_prev, mode)
                            : s_prev_prev;
  std::vector<nn::Graph::Ref> states = {s0, s_prev};
  for (int i = 0; i < node_count_; ++i) {
    const NodeSpec& node = geno.nodes[static_cast<size_t>(i)];
    nn::Graph::Ref a = apply_op(g, i, 0, node.in_a, node.op_a,
                                states[static_cast<size_t>(node.in_a)], mode);
    nn::Graph::Ref b = apply_op(g, i, 1, node.in_b, node.op_b,
                                states[static_cast<size_t>(node.in_b)], mode);
    states.push_back(g.add(a, b));
  }
  // Output projection distributed over the concatenation: a 1x1 conv applied
  // to concat(loose ends) equals the sum of per-node 1x1 convs.
  nn::Graph::Ref acc = nn::Graph::kNone;
  bool first = true;
  for (int i : loose_ends(geno)) {
    ConvBlock* block = out_blocks_[static_cast<size_t>(i)].get();
    if (!block)
      throw ValidationError(prefix_ + ": no output block for node " +
                            std::to_string(i));
    nn::Graph::Ref term = g.conv2d(
        states[static_cast<size_t>(i + 2)], g.param(block->w),
        first && out_bias_ ? g.param(*out_bias_) : nn::Graph::kNone, 1, 0);
    acc = first ? term : g.add(acc, term);
    first = false;
  }
  return out_bn_->forward(g, acc, mode);
}

void CellModule::collect(std::vector<nn::Parameter*>& out) {
  if (pre0_) pre0_->collect(out);
  for (auto& node_sites : sites_)
    for (EdgeSites& site : node_sites) {
      if (site.sep3) site.sep3->collect(out);
      if (site.sep5) site.sep5->collect(out);
      if (site.id_proj) site.id_proj->collect(out);
      if (site.pool_proj) site.pool_proj->collect(out);
    }
  for (auto& block : out_blocks_)
    if (block) block->collect(out);
  if (out_bias_) out.push_back(out_bias_.get());
  out_bn_->collect(out);
}

void CellModule::collect_state(
    std::vector<std::pair<std::string, nn::Tensor*>>& out) {
  std::vector<nn::Parameter*> params;
  collect(params);
  for (nn::Parameter* p : params) out.emplace_back(p->name, &p->value);
  auto add_stats = [&](BnBlock& bn, const std::string& name) {
    out.emplace_back(name + ".running_mean", &bn.stats.mean);
    out.emplace_back(name + ".running_var", &bn.stats.var);
  };
  if (pre0_) add_stats(pre0_->bn, prefix_ + ".pre0.bn");
  for (size_t i = 0; i < sites_.size(); ++i)
    for (size_t e = 0; e < sites_[i].size(); ++e) {
      EdgeSites& site = sites_[i][e];
      const std::string base =
          prefix_ + ".n" + std::to_string(i) + ".e" + std::to_string(e);
      if (site.sep3) add_stats(site.sep3->bn, base + ".sep3.bn");
      if (site.sep5) add_stats(site.sep5->bn, base + ".sep5.bn");
      if (site.id_proj) add_stats(site.id_proj->bn, base + ".idproj.bn");
      if (site.pool_proj) add_stats(site.pool_proj->bn, base + ".poolproj.bn");
    }
  add_stats(*out_bn_, prefix_ + ".out.bn");
}

// --- SharedSupergraph -----------------------------------------------------------

SharedSupergraph::SharedSupergraph(const StackPlan& plan, int node_count,
                                   int input_channels,
                                   const CountingConfig& cfg, uint64_t seed)
    : plan_(plan),
      node_count_(node_count),
      input_channels_(input_channels),
      cfg_(cfg) {
  if (node_count < 1)
    throw ValidationError("supergraph: node count must be >= 1");
  Rng rng(seed);
  NetworkSpec resolved = build_network(
      ArchPair{CellGenotype{std::vector<NodeSpec>(
                   static_cast<size_t>(node_count))},
               CellGenotype{std::vector<NodeSpec>(
                   static_cast<size_t>(node_count))}},
      plan, "super", input_channels);
  const CellStackNet& net = *resolved.as_cells();

  stem_ = std::make_unique<ConvBlock>(
      "stem", std::vector<long>{net.stem_channels, input_channels, 3, 3},
      cfg.include_conv_bias, 9L * input_channels, rng);
  stem_bn_ = std::make_unique<BnBlock>("stem.bn", net.stem_channels,
                                       cfg.include_batchnorm_affine);
  for (size_t i = 0; i < net.cells.size(); ++i) {
    positions_.push_back(std::make_unique<CellModule>(
        "p" + std::to_string(i), net.cells[i], node_count, nullptr, cfg, rng));
  }
  const long c_final = net.cells.back().c_out;
  head_w_ = std::make_unique<nn::Parameter>(
      "head.w", uniform_fan({plan.num_classes, c_final}, c_final, rng));
  head_b_ = std::make_unique<nn::Parameter>(
      "head.b", nn::Tensor(std::vector<long>{plan.num_classes}));
}

std::vector<nn::Parameter*> SharedSupergraph::parameters() {
  std::vector<nn::Parameter*> out;
  stem_->collect(out);
  stem_bn_->collect(out);
  for (auto& pos : positions_) pos->collect(out);
  out.push_back(head_w_.get());
  out.push_back(head_b_.get());
  return out;
}

nn::Graph::Ref SharedSupergraph::forward(nn::Graph& g, const ArchPair& arch,
                                         nn::Graph::Ref input,
                                         nn::BnMode mode) {
  nn::Graph::Ref stem = g.conv2d(
      input, g.param(stem_->w),
      stem_->bias ? g.param(*stem_->bias) : nn::Graph::kNone, 1, 1);
  stem = stem_bn_->forward(g, stem, mode);
  nn::Graph::Ref s_pp = stem, s_p = stem;
  for (auto& pos : positions_) {
    const CellGenotype& geno = pos->shape().tag == CellTag::kReduction
                                   ? arch.reduction
                                   : arch.normal;
    nn::Graph::Ref out = pos->forward(g, geno, s_pp, s_p, mode);
    s_pp = s_p;
    s_p = out;
  }
  nn::Graph::Ref pooled = g.global_avg_pool(s_p);
  return g.linear(pooled, g.param(*head_w_), g.param(*head_b_));
}

// --- ChildView -------------------------------------------------------------------

ChildView::ChildView(SharedSupergraph& super, ArchPair arch)
    : super_(&super), arch_(std::move(arch)) {}

nn::Graph::Ref ChildView::forward(nn::Graph& g, nn::Graph::Ref input,
                                  nn::BnMode mode) const {
  return super_->forward(g, arch_, input, mode);
}

ChildView activate_subnetwork(SharedSupergraph& super, const ArchPair& arch) {
  const int b = super.node_count();
  ValidationResult vn = validate(arch.normal, b);
  ValidationResult vr = validate(arch.reduction, b);
  if (!vn.ok() || !vr.ok())
    throw ValidationError("activate_subnetwork: arch does not fit supergraph "
                          "(B=" + std::to_string(b) + "): " + vn.joined() +
                          vr.joined());
  return ChildView(super, arch);
}

// --- FixedNetwork -------------------------------------------------------------------

FixedNetwork::FixedNetwork(const NetworkSpec& spec, const CountingConfig& cfg,
                           uint64_t seed)
    : spec_(spec), cfg_(cfg) {
  Rng rng(seed);
  if (const CellStackNet* net = spec_.as_cells()) {
    stem_ = std::make_unique<ConvBlock>(
        "stem",
        std::vector<long>{net->stem_channels, net->input_channels, 3, 3},
        cfg.include_conv_bias, 9L * net->input_channels, rng);
    stem_bn_ = std::make_unique<BnBlock>("stem.bn", net->stem_channels,
                                         cfg.include_batchnorm_affine);
    for (size_t i = 0; i < net->cells.size(); ++i) {
      const CellGenotype& geno = net->cells[i].tag == CellTag::kReduction
                                     ? net->arch.reduction
                                     : net->arch.normal;
      cells_.push_back(std::make_unique<CellModule>(
          "c" + std::to_string(i), net->cells[i], geno.node_count(), &geno,
          cfg, rng));
    }
    const long c_final = net->cells.back().c_out;
    head_w_ = std::make_unique<nn::Parameter>(
        "head.w",
        uniform_fan({net->plan.num_classes, c_final}, c_final, rng));
    head_b_ = std::make_unique<nn::Parameter>(
        "head.b", nn::Tensor(std::vector<long>{net->plan.num_classes}));
    return;
  }
  const LayerNet& net = *spec_.as_layers();
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const PlainLayer& l = net.layers[i];
    PlainWeights pw;
    if (l.kind == PlainLayer::Kind::kConv) {
      pw.conv = std::make_unique<ConvBlock>(
          "l" + std::to_string(i),
          std::vector<long>{l.out_ch, l.in_ch, l.kernel, l.kernel}, l.bias,
          static_cast<long>(l.kernel) * l.kernel * l.in_ch, rng);
    } else if (l.kind == PlainLayer::Kind::kLinear) {
      pw.conv = std::make_unique<ConvBlock>(
          "l" + std::to_string(i), std::vector<long>{l.out_ch, l.in_ch},
          l.bias, l.in_ch, rng);
      // linear layers prefer the uniform fan-in init
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_ch));
      for (long j = 0; j < pw.conv->w.numel(); ++j)
        pw.conv->w.value[j] = rng.uniform(-bound, bound);
    }
    plain_.push_back(std::move(pw));
  }
}

nn::Graph::Ref FixedNetwork::forward(nn::Graph& g, nn::Graph::Ref input,
                                     nn::BnMode mode) {
  if (const CellStackNet* net = spec_.as_cells()) {
    nn::Graph::Ref stem = g.conv2d(
        input, g.param(stem_->w),
        stem_->bias ? g.param(*stem_->bias) : nn::Graph::kNone, 1, 1);
    stem = stem_bn_->forward(g, stem, mode);
    nn::Graph::Ref s_pp = stem, s_p = stem;
    for (auto& cell : cells_) {
      const CellGenotype& geno = cell->shape().tag == CellTag::kReduction
                                     ? net->arch.reduction
                                     : net->arch.normal;
      nn::Graph::Ref out = cell->forward(g, geno, s_pp, s_p, mode);
      s_pp = s_p;
      s_p = out;
    }
    nn::Graph::Ref pooled = g.global_avg_pool(s_p);
    return g.linear(pooled, g.param(*head_w_), g.param(*head_b_));
  }
  const LayerNet& net = *spec_.as_layers();
  nn::Graph::Ref h = input;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const PlainLayer& l = net.layers[i];
    using K = PlainLayer::Kind;
    switch (l.kind) {
      case K::kConv:
        h = g.conv2d(h, g.param(plain_[i].conv->w),
                     plain_[i].conv->bias ? g.param(*plain_[i].conv->bias)
                                          : nn::Graph::kNone,
                     l.stride, l.pad);
        break;
      case K::kRelu:
        h = g.relu(h);
        break;
      case K::kMaxPool:
        h = g.max_pool2d(h, l.kernel, l.stride, 0);
        break;
      case K::kAdaptiveAvgPool:
        h = g.adaptive_avg_pool2d(h, l.target);
        break;
      case K::kFlatten:
        h = g.flatten(h);
        break;
      case K::kLinear:
        h = g.linear(h, g.param(plain_[i].conv->w),
                     plain_[i].conv->bias ? g.param(*plain_[i].conv->bias)
                                          : nn::Graph::kNone);
        break;
    }
  }
  return h;
}

std::vector<nn::Parameter*> FixedNetwork::parameters() {
  std::vector<nn::Parameter*> out;
  if (spec_.as_cells()) {
    stem_->collect(out);
    stem_bn_->collect(out);
    for (auto& cell : cells_) cell->collect(out);
    out.push_back(head_w_.get());
    out.push_back(head_b_.get());
  } else {
    for (auto& pw : plain_)
      if (pw.conv) pw.conv->collect(out);
  }
  return out;
}

int64_t FixedNetwork::enumerated_param_count() {
  int64_t total = 0;
  for (nn::Parameter* p : parameters()) total += p->numel();
  return total;
}

std::vector<std::pair<std::string, nn::Tensor*>> FixedNetwork::named_state() {
  std::vector<std::pair<std::string, nn::Tensor*>> out;
  if (spec_.as_cells()) {
    std::vector<nn::Parameter*> stem_params;
    stem_->collect(stem_params);
    stem_bn_->collect(stem_params);
    for (nn::Parameter* p : stem_params) out.emplace_back(p->name, &p->value);
    out.emplace_back("stem.bn.running_mean", &stem_bn_->stats.mean);
    out.emplace_back("stem.bn.running_var", &stem_bn_->stats.var);
    for (auto& cell : cells_) cell->collect_state(out);
    out.emplace_back(head_w_->name, &head_w_->value);
    out.emplace_back(head_b_->name, &head_b_->value);
  } else {
    for (nn::Parameter* p : parameters()) out.emplace_back(p->name, &p->value);
  }
  return out;
}

void FixedNetwork::save(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  const char magic[9] = "USNASNET";
  f.write(magic, 8);
  auto state = named_state();
  const uint64_t count = state.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (auto& [name, tensor] : state) {
    const uint32_t len = static_cast<uint32_t>(name.size());
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(name.data(), len);
    const uint32_t rank = static_cast<uint32_t>(tensor->rank());
    f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int i = 0; i < tensor->rank(); ++i) {
      const uint64_t d = static_cast<uint64_t>(tensor->dim(i));
      f.write(reinterpret_cast<const char*>(&d), sizeof(d));
    }
    f.write(reinterpret_cast<const char*>(tensor->data()),
            static_cast<std::streamsize>(tensor->numel() * sizeof(double)));
  }
}

void FixedNetwork::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, "USNASNET", 8) != 0)
    throw IoError("checkpoint " + path.string() + " has a bad header");
  uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  auto state = named_state();
  if (count != state.size())
    throw IoError("checkpoint tensor count mismatch (" + std::to_string(count) +
                  " stored, " + std::to_string(state.size()) + " expected)");
  for (auto& [name, tensor] : state) {
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string stored(len, '\0');
    f.read(stored.data(), len);
    if (stored != name)
      throw IoError("checkpoint tensor \"" + stored + "\" does not match \"" +
                    name + "\" (architecture mismatch)");
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    long numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint64_t d = 0;
      f.read(reinterpret_cast<char*>(&d), sizeof(d));
      numel *= static_cast<long>(d);
    }
    if (numel != tensor->numel())
      throw IoError("checkpoint tensor \"" + name + "\" has wrong size");
    f.read(reinterpret_cast<char*>(tensor->data()),
           static_cast<std::streamsize>(numel * sizeof(double)));
  }
  if (!f) throw IoError("checkpoint " + path.string() + " truncated");
}

}  // namespace usnas
